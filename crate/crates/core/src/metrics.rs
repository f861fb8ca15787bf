//! Score-sheet evaluation metrics.
//!
//! Monthly forecast quality is measured by Spearman rank correlation
//! between scores and realized returns, and by directional hit rates of the
//! top/bottom score buckets against the month's median return. Hit counts
//! pool across months and are tested against a fair coin with a one-sided
//! binomial test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};
use statrs::function::beta::beta_reg;

use crate::error::Error;
use crate::month::MonthId;
use crate::Result;

/// Totals above this use the continuity-corrected normal approximation in
/// [`binom_test_one_sided`]; at or below it the tail is exact.
pub const EXACT_BINOM_MAX_TOTAL: u64 = 10_000;

/// Bucket scheme for top/bottom selection.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Bucket {
    /// k = round(n/3)
    Tertile,
    /// k = round(n/5)
    Quintile,
}

impl Bucket {
    /// Minimum cross-section size for the scheme.
    pub fn min_stocks(self) -> usize {
        match self {
            Bucket::Tertile => 3,
            Bucket::Quintile => 5,
        }
    }

    /// Bucket size for a cross-section of `n` stocks (round half away from
    /// zero, never below 1).
    pub fn size(self, n: usize) -> usize {
        let d = match self {
            Bucket::Tertile => 3.0,
            Bucket::Quintile => 5.0,
        };
        ((n as f64 / d).round() as usize).max(1)
    }
}

/// Average ranks 1..=n with ties sharing their mean rank.
fn average_ranks(v: &[f64]) -> Vec<f64> {
    let n = v.len();
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| v[a].total_cmp(&v[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i + 1;
        while j < n && v[idx[j]] == v[idx[i]] {
            j += 1;
        }
        let avg = (i + 1 + j) as f64 / 2.0;
        for &p in &idx[i..j] {
            ranks[p] = avg;
        }
        i = j;
    }
    ranks
}

fn pearson(x: &[f64], y: &[f64], context: &str) -> Result<f64> {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let dx = a - mx;
        let dy = b - my;
        sxx += dx * dx;
        syy += dy * dy;
        sxy += dx * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Err(Error::ZeroVariance {
            context: context.to_string(),
        });
    }
    Ok(sxy / (sxx * syy).sqrt())
}

/// Spearman rank correlation: Pearson correlation of average ranks, so
/// ties are handled exactly. Needs at least 3 pairs and nonconstant sides.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch {
            context: "spearman".into(),
            left: x.len(),
            right: y.len(),
        });
    }
    if x.len() < 3 {
        return Err(Error::TooFewStocks {
            context: "spearman".into(),
            needed: 3,
            got: x.len(),
        });
    }
    pearson(&average_ranks(x), &average_ranks(y), "spearman ranks")
}

/// Splits a scored cross-section into top and bottom buckets of size
/// `scheme.size(n)`. Boundary ties are resolved by ascending stock id, so
/// the split is deterministic. Returns `(top, bottom)` id lists.
pub fn bucket_top_bottom(
    scored: &[(String, f64)],
    scheme: Bucket,
) -> Result<(Vec<String>, Vec<String>)> {
    let n = scored.len();
    if n < scheme.min_stocks() {
        return Err(Error::TooFewStocks {
            context: format!("{scheme:?} bucketing"),
            needed: scheme.min_stocks(),
            got: n,
        });
    }
    let k = scheme.size(n);
    let mut by_desc: Vec<&(String, f64)> = scored.iter().collect();
    by_desc.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    let top = by_desc[..k].iter().map(|p| p.0.clone()).collect();
    let mut by_asc: Vec<&(String, f64)> = scored.iter().collect();
    by_asc.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let bottom = by_asc[..k].iter().map(|p| p.0.clone()).collect();
    Ok((top, bottom))
}

/// Whether a boundary tie forced an arbitrary (id-ordered) bucket cut:
/// true when the score at the bucket edge equals the first excluded score.
pub fn bucket_boundary_tied(scored: &[(String, f64)], scheme: Bucket) -> bool {
    let n = scored.len();
    if n < scheme.min_stocks() {
        return false;
    }
    let k = scheme.size(n);
    let mut scores: Vec<f64> = scored.iter().map(|p| p.1).collect();
    scores.sort_by(f64::total_cmp);
    let tied_low = k < n && scores[k - 1] == scores[k];
    let tied_high = k < n && scores[n - k] == scores[n - k - 1];
    tied_low || tied_high
}

/// Hit counts of one month's directional test.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DirectionCount {
    pub hits: u64,
    pub total: u64,
}

impl DirectionCount {
    pub fn fraction(self) -> f64 {
        if self.total == 0 {
            f64::NAN
        } else {
            self.hits as f64 / self.total as f64
        }
    }
}

/// Directional accuracy of one scored month.
///
/// The median is taken over the realized returns of the whole scored
/// universe (mean of the two central values for even n). A top-bucket stock
/// hits when its return exceeds the median, a bottom-bucket stock when it
/// falls below; returns equal to the median are misses.
pub fn direction(scored: &[(String, f64, f64)], scheme: Bucket) -> Result<DirectionCount> {
    let with_scores: Vec<(String, f64)> =
        scored.iter().map(|(id, s, _)| (id.clone(), *s)).collect();
    let (top, bottom) = bucket_top_bottom(&with_scores, scheme)?;
    let mut rets: Vec<f64> = scored.iter().map(|p| p.2).collect();
    rets.sort_by(f64::total_cmp);
    let n = rets.len();
    let median = if n % 2 == 1 {
        rets[n / 2]
    } else {
        0.5 * (rets[n / 2 - 1] + rets[n / 2])
    };
    let ret_of = |id: &str| -> f64 {
        scored
            .iter()
            .find(|(s, _, _)| s == id)
            .map(|p| p.2)
            .expect("bucket ids come from scored")
    };
    let mut hits = 0u64;
    for id in &top {
        if ret_of(id) > median {
            hits += 1;
        }
    }
    for id in &bottom {
        if ret_of(id) < median {
            hits += 1;
        }
    }
    Ok(DirectionCount {
        hits,
        total: (top.len() + bottom.len()) as u64,
    })
}

/// One-sided binomial tail `P[X >= hits]` for `X ~ Bin(total, 1/2)`.
///
/// Exact via the regularized incomplete beta up to
/// [`EXACT_BINOM_MAX_TOTAL`] trials, then a continuity-corrected normal
/// approximation.
pub fn binom_test_one_sided(hits: u64, total: u64) -> Result<f64> {
    if hits > total {
        return Err(Error::InvalidCounts { hits, total });
    }
    if hits == 0 {
        return Ok(1.0);
    }
    if total <= 50 {
        // Direct summation. Up to n=50 every coefficient, partial sum and
        // ratio step stays an exact f64 integer and the final power-of-two
        // scaling is exact, so the tail is bit-exact (4 of 4 -> 0.0625).
        let mut sum = 0.0f64;
        let mut c = 1.0f64; // C(total, k), updated downward from k=total
        for k in (hits..=total).rev() {
            sum += c;
            c = c * k as f64 / (total - k + 1) as f64;
        }
        Ok(sum * 0.5f64.powi(total as i32))
    } else if total <= EXACT_BINOM_MAX_TOTAL {
        // P[X >= h] = I_p(h, n-h+1) at p = 1/2.
        Ok(beta_reg(hits as f64, (total - hits + 1) as f64, 0.5))
    } else {
        let n = total as f64;
        let z = (hits as f64 - 0.5 - n / 2.0) / (n / 4.0).sqrt();
        let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
        Ok(1.0 - std_normal.cdf(z))
    }
}

/// Significance stars for a p-value: `*` < 0.05, `**` < 0.01, `***` < 0.001.
pub fn p_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Evaluation of one scored month.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonthlyEval {
    pub month: MonthId,
    /// Spearman correlation of scores vs realized returns.
    pub corr: f64,
    /// Mean squared error of scores vs rank-scaled realized returns.
    pub mse: f64,
    pub dir_tertile: DirectionCount,
    pub dir_quintile: DirectionCount,
}

/// Pooled directional result across months.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct DirectionAggregate {
    pub hits: u64,
    pub total: u64,
    pub fraction: f64,
    pub p_value: f64,
    pub stars: String,
}

/// Cross-month aggregation of monthly evaluations.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AggregateEval {
    pub n_months: usize,
    pub corr_mean: f64,
    pub mse_mean: f64,
    pub tertile: DirectionAggregate,
    pub quintile: DirectionAggregate,
}

fn pool(counts: impl Iterator<Item = DirectionCount>) -> Result<DirectionAggregate> {
    let mut hits = 0;
    let mut total = 0;
    for c in counts {
        hits += c.hits;
        total += c.total;
    }
    let p_value = binom_test_one_sided(hits, total)?;
    Ok(DirectionAggregate {
        hits,
        total,
        fraction: if total == 0 {
            f64::NAN
        } else {
            hits as f64 / total as f64
        },
        p_value,
        stars: p_stars(p_value).to_string(),
    })
}

/// Averages correlations/MSE over months and pools direction counts before
/// testing, so significance reflects every monthly pick.
pub fn aggregate_monthly(evals: &[MonthlyEval]) -> Result<AggregateEval> {
    if evals.is_empty() {
        return Err(Error::EmptyEvalList);
    }
    let n = evals.len() as f64;
    Ok(AggregateEval {
        n_months: evals.len(),
        corr_mean: evals.iter().map(|e| e.corr).sum::<f64>() / n,
        mse_mean: evals.iter().map(|e| e.mse).sum::<f64>() / n,
        tertile: pool(evals.iter().map(|e| e.dir_tertile))?,
        quintile: pool(evals.iter().map(|e| e.dir_quintile))?,
    })
}
