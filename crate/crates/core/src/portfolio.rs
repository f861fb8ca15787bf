//! Long-short portfolio construction and annualized summary statistics.
//!
//! Each month the top score bucket is held long and the bottom bucket
//! short, equal-weighted and self-financing: the month's strategy return is
//! the mean top-bucket return minus the mean bottom-bucket return. A run of
//! monthly returns annualizes to Return = 12 x mean, Risk = sqrt(12) x
//! sample standard deviation, both in percent, and R/R = Return / Risk.

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{bucket_boundary_tied, bucket_top_bottom, Bucket};
use crate::Result;

/// One month's long-short outcome.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct LsMonthReturn {
    /// Mean return of the long (top) bucket.
    pub long_mean: f64,
    /// Mean return of the short (bottom) bucket.
    pub short_mean: f64,
    /// `long_mean - short_mean`.
    pub ls: f64,
    /// True when a score tie crossed a bucket boundary, making the cut
    /// depend on the deterministic id tie-break.
    pub degenerate: bool,
}

/// Builds the month's long-short return from `(stock, score, realized
/// return)` triples using the given bucket scheme.
pub fn ls_month(scored: &[(String, f64, f64)], scheme: Bucket) -> Result<LsMonthReturn> {
    let with_scores: Vec<(String, f64)> =
        scored.iter().map(|(id, s, _)| (id.clone(), *s)).collect();
    let (top, bottom) = bucket_top_bottom(&with_scores, scheme)?;
    let ret_of = |id: &String| {
        scored
            .iter()
            .find(|(s, _, _)| s == id)
            .map(|p| p.2)
            .expect("bucket ids come from scored")
    };
    let long_mean = top.iter().map(ret_of).sum::<f64>() / top.len() as f64;
    let short_mean = bottom.iter().map(ret_of).sum::<f64>() / bottom.len() as f64;
    Ok(LsMonthReturn {
        long_mean,
        short_mean,
        ls: long_mean - short_mean,
        degenerate: bucket_boundary_tied(&with_scores, scheme),
    })
}

/// Annualized strategy summary over a run of monthly returns.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategySummary {
    pub n_months: usize,
    /// 12 x mean monthly return, in percent.
    pub return_pct: f64,
    /// sqrt(12) x sample (n-1) standard deviation, in percent.
    pub risk_pct: f64,
    /// Return / Risk; `None` when the risk is exactly zero.
    pub r_over_r: Option<f64>,
}

/// Annualizes monthly strategy returns (plain fractions, e.g. 0.01 = 1%).
/// Needs at least two months for the sample standard deviation.
pub fn summarize_strategy(monthly: &[f64]) -> Result<StrategySummary> {
    let n = monthly.len();
    if n < 2 {
        return Err(Error::TooFewMonths { needed: 2, got: n });
    }
    let mean = monthly.iter().sum::<f64>() / n as f64;
    let var = monthly.iter().map(|r| (r - mean).powi(2)).sum::<f64>() / (n as f64 - 1.0);
    let sd = var.sqrt();
    let return_pct = 12.0 * mean * 100.0;
    let risk_pct = 12.0f64.sqrt() * sd * 100.0;
    let r_over_r = if risk_pct == 0.0 {
        None
    } else {
        Some(return_pct / risk_pct)
    };
    Ok(StrategySummary {
        n_months: n,
        return_pct,
        risk_pct,
        r_over_r,
    })
}
