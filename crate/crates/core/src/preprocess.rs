//! Cross-sectional rank scaling and feature/target assembly.
//!
//! Every factor is converted to an in-month rank in (0, 1]: ascending
//! average ranks divided by the count of stocks ranked. Feature vectors
//! stack the 25 scaled factors at lags 0, 3, 6, 9 and 12 months behind an
//! anchor month (lag-major: the lag-0 block first), giving 125 inputs.
//! Targets are the forward returns over anchor -> anchor+1, rank-scaled
//! within the month's eligible set so the regression target lives on the
//! same (0, 1] scale as the features.
//!
//! A training set for prediction month `m` uses anchors `t` in
//! `[m-1-N, m-2]`: the latest target is the return realized at `m-1`,
//! which is the last information available when `m` is being predicted.

use std::collections::{BTreeMap, BTreeSet};
use std::ops::Range;

use ndarray::{Array1, Array2};

use crate::error::Error;
use crate::month::MonthId;
use crate::panel::{FactorPanel, N_FACTORS};
use crate::Result;

/// Lags (in months) behind the anchor from which factors are taken.
pub const FEATURE_LAGS: [i32; 5] = [0, 3, 6, 9, 12];

/// Dimension of one feature vector: 25 factors x 5 lags.
pub const N_FEATURES: usize = N_FACTORS * FEATURE_LAGS.len();

/// Rank-scales `values` into (0, 1]: ascending average ranks divided by the
/// number of ranked entries. Ties share their average rank, so `{A:1, B:1,
/// C:2}` maps to `{A:0.5, B:0.5, C:1.0}`. Non-finite values are skipped.
pub fn rank_scale(
    values: impl IntoIterator<Item = (String, f64)>,
    context: &str,
) -> Result<BTreeMap<String, f64>> {
    let mut pairs: Vec<(String, f64)> = values
        .into_iter()
        .filter(|(_, v)| v.is_finite())
        .collect();
    if pairs.is_empty() {
        return Err(Error::EmptyCrossSection {
            context: context.to_string(),
        });
    }
    pairs.sort_by(|a, b| a.1.total_cmp(&b.1).then_with(|| a.0.cmp(&b.0)));
    let n = pairs.len() as f64;
    let mut out = BTreeMap::new();
    let mut i = 0;
    while i < pairs.len() {
        let mut j = i + 1;
        while j < pairs.len() && pairs[j].1 == pairs[i].1 {
            j += 1;
        }
        // Entries i..j share values; ranks i+1 ..= j average to this.
        let avg_rank = (i + 1 + j) as f64 / 2.0;
        for p in &pairs[i..j] {
            out.insert(p.0.clone(), avg_rank / n);
        }
        i = j;
    }
    Ok(out)
}

/// All 25 factors of one month, rank-scaled per factor.
///
/// Each factor is ranked over the stocks that have it; a stock can appear
/// in some factors' maps and not others.
#[derive(Debug, Clone)]
pub struct ScaledCrossSection {
    pub month: MonthId,
    factors: Vec<BTreeMap<String, f64>>,
}

impl ScaledCrossSection {
    /// Scaled value of factor `j` for `stock`, if the stock had the factor.
    pub fn factor(&self, j: usize, stock: &str) -> Option<f64> {
        self.factors[j].get(stock).copied()
    }

    /// Stocks carrying factor `j` this month.
    pub fn factor_universe(&self, j: usize) -> usize {
        self.factors[j].len()
    }
}

/// Rank-scales every factor of one month's cross-section.
///
/// Errors with `EmptyCrossSection` when the month has no stocks at all; a
/// factor missing for every stock simply yields an empty per-factor map.
pub fn scale_month(panel: &FactorPanel, month: MonthId) -> Result<ScaledCrossSection> {
    let mut per_factor: Vec<Vec<(String, f64)>> = vec![Vec::new(); N_FACTORS];
    let mut any_stock = false;
    for (id, rec) in panel.scan_factors(month) {
        any_stock = true;
        for (j, slot) in per_factor.iter_mut().enumerate() {
            if let Some(v) = rec.factor(j) {
                slot.push((id.to_string(), v));
            }
        }
    }
    if !any_stock {
        return Err(Error::EmptyCrossSection {
            context: format!("no stocks at {month}"),
        });
    }
    let mut factors = Vec::with_capacity(N_FACTORS);
    for (j, vals) in per_factor.into_iter().enumerate() {
        if vals.is_empty() {
            factors.push(BTreeMap::new());
        } else {
            factors.push(rank_scale(vals, &format!("factor f{:02} at {month}", j + 1))?);
        }
    }
    Ok(ScaledCrossSection { month, factors })
}

/// Cache of scaled cross-sections, filled on demand from a panel.
#[derive(Debug, Default)]
pub struct ScaledCache {
    months: BTreeMap<MonthId, ScaledCrossSection>,
}

impl ScaledCache {
    pub fn new() -> Self {
        Self::default()
    }

    /// Scales `month` if not already cached.
    pub fn ensure(&mut self, panel: &FactorPanel, month: MonthId) -> Result<&ScaledCrossSection> {
        if !self.months.contains_key(&month) {
            let scaled = scale_month(panel, month)?;
            self.months.insert(month, scaled);
        }
        Ok(&self.months[&month])
    }

    /// Cached cross-section, or `MissingScaledMonth`.
    pub fn get(&self, month: MonthId) -> Result<&ScaledCrossSection> {
        self.months
            .get(&month)
            .ok_or(Error::MissingScaledMonth { month })
    }

    pub fn contains(&self, month: MonthId) -> bool {
        self.months.contains_key(&month)
    }
}

/// The five months feeding a feature vector anchored at `anchor`.
pub fn feature_months(anchor: MonthId) -> [MonthId; 5] {
    FEATURE_LAGS.map(|lag| anchor.minus(lag))
}

/// Builds the 125-dim feature vector for `stock` anchored at `anchor`.
///
/// Layout is lag-major: positions `b*25 + j` hold factor `j` at lag block
/// `b` (blocks ordered lag 0, 3, 6, 9, 12). Returns `Ok(None)` when the
/// stock lacks any of the 125 values; errors when the cache has not scaled
/// a required month.
pub fn build_features(
    cache: &ScaledCache,
    stock: &str,
    anchor: MonthId,
) -> Result<Option<[f64; N_FEATURES]>> {
    let mut v = [0.0; N_FEATURES];
    for (b, m) in feature_months(anchor).into_iter().enumerate() {
        let scaled = cache.get(m)?;
        for j in 0..N_FACTORS {
            match scaled.factor(j, stock) {
                Some(x) => v[b * N_FACTORS + j] = x,
                None => return Ok(None),
            }
        }
    }
    Ok(Some(v))
}

/// Assembled regression data: one row per eligible (stock, anchor) pair,
/// grouped contiguously by anchor month, anchors ascending, stocks
/// ascending within a month.
#[derive(Debug, Clone)]
pub struct TrainingSet {
    /// K x 125 feature matrix.
    pub features: Array2<f64>,
    /// K rank-scaled targets in (0, 1].
    pub targets: Array1<f64>,
    /// Anchor month of each contiguous row range.
    pub month_ranges: Vec<(MonthId, Range<usize>)>,
    /// (anchor, stock) identity of each row.
    pub row_meta: Vec<(MonthId, String)>,
    /// Window months that contributed no eligible examples.
    pub empty_months: Vec<MonthId>,
}

impl TrainingSet {
    /// Number of examples.
    pub fn k(&self) -> usize {
        self.row_meta.len()
    }
}

/// Assembles the training set used to predict `prediction_month`.
///
/// Anchors span the `n_window` months `[prediction_month-1-n_window,
/// prediction_month-2]`. A stock is an example at anchor `t` when its full
/// feature vector exists and its forward return at `t` is known; targets
/// are those forward returns rank-scaled within the month's eligible set.
pub fn assemble_training_set(
    panel: &FactorPanel,
    prediction_month: MonthId,
    n_window: usize,
) -> Result<TrainingSet> {
    let mut cache = ScaledCache::new();
    assemble_training_set_cached(panel, prediction_month, n_window, &mut cache)
}

/// [`assemble_training_set`] with a caller-owned scale cache, so repeated
/// walk-forward fits only scale each month once.
pub fn assemble_training_set_cached(
    panel: &FactorPanel,
    prediction_month: MonthId,
    n_window: usize,
    cache: &mut ScaledCache,
) -> Result<TrainingSet> {
    if n_window == 0 {
        return Err(Error::InvalidHyper("training window must be >= 1 month".into()));
    }
    let first_anchor = prediction_month.minus(1 + n_window as i32);
    let last_anchor = prediction_month.minus(2);
    check_history(panel, first_anchor)?;

    // Scale exactly the months any anchor's lags touch.
    let mut needed = BTreeSet::new();
    for t in first_anchor.range_inclusive(last_anchor) {
        needed.extend(feature_months(t));
    }
    for m in needed {
        cache.ensure(panel, m)?;
    }

    let mut flat = Vec::new();
    let mut targets = Vec::new();
    let mut month_ranges = Vec::new();
    let mut row_meta = Vec::new();
    let mut empty_months = Vec::new();

    for t in first_anchor.range_inclusive(last_anchor) {
        let mut rows: Vec<(String, [f64; N_FEATURES])> = Vec::new();
        let mut fwd: Vec<(String, f64)> = Vec::new();
        for id in panel.universe_at(t)? {
            if let Some(v) = build_features(cache, &id, t)? {
                if let Some(r) = panel.fwd_return(t, &id) {
                    rows.push((id.clone(), v));
                    fwd.push((id, r));
                }
            }
        }
        if rows.is_empty() {
            empty_months.push(t);
            continue;
        }
        let scaled_targets = rank_scale(fwd, &format!("targets at {t}"))?;
        let start = row_meta.len();
        for (id, v) in rows {
            flat.extend_from_slice(&v);
            targets.push(scaled_targets[&id]);
            row_meta.push((t, id));
        }
        month_ranges.push((t, start..row_meta.len()));
    }

    let k = row_meta.len();
    let features = Array2::from_shape_vec((k, N_FEATURES), flat).expect("row-major build");
    Ok(TrainingSet {
        features,
        targets: Array1::from_vec(targets),
        month_ranges,
        row_meta,
        empty_months,
    })
}

/// Feature matrix for scoring: every stock of `anchor`'s universe whose
/// feature vector is complete (forward return not required). Returns stock
/// ids ascending and the matching row-per-stock matrix.
pub fn assemble_scoring_set(
    panel: &FactorPanel,
    cache: &mut ScaledCache,
    anchor: MonthId,
) -> Result<(Vec<String>, Array2<f64>)> {
    check_history_anchor(panel, anchor)?;
    for m in feature_months(anchor) {
        cache.ensure(panel, m)?;
    }
    let mut ids = Vec::new();
    let mut flat = Vec::new();
    for id in panel.universe_at(anchor)? {
        if let Some(v) = build_features(cache, &id, anchor)? {
            flat.extend_from_slice(&v);
            ids.push(id);
        }
    }
    let mat = Array2::from_shape_vec((ids.len(), N_FEATURES), flat).expect("row-major build");
    Ok((ids, mat))
}

fn check_history(panel: &FactorPanel, first_anchor: MonthId) -> Result<()> {
    check_history_anchor(panel, first_anchor)
}

fn check_history_anchor(panel: &FactorPanel, anchor: MonthId) -> Result<()> {
    let available = panel.first_month().ok_or(Error::EmptyPanel)?;
    let needed = anchor.minus(*FEATURE_LAGS.last().unwrap());
    if needed < available {
        return Err(Error::InsufficientHistory { needed, available });
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::panel::FactorRecord;
    use proptest::prelude::*;

    fn month(s: &str) -> MonthId {
        s.parse().unwrap()
    }

    fn map(pairs: &[(&str, f64)]) -> Vec<(String, f64)> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn rank_scale_tie_example() {
        let out = rank_scale(map(&[("A", 1.0), ("B", 1.0), ("C", 2.0)]), "t").unwrap();
        assert_eq!(out["A"], 0.5);
        assert_eq!(out["B"], 0.5);
        assert_eq!(out["C"], 1.0);
    }

    #[test]
    fn rank_scale_constant_column_of_four() {
        let out = rank_scale(
            map(&[("A", 7.0), ("B", 7.0), ("C", 7.0), ("D", 7.0)]),
            "t",
        )
        .unwrap();
        for v in out.values() {
            assert_eq!(*v, 0.625);
        }
    }

    #[test]
    fn rank_scale_skips_non_finite_and_errors_when_empty() {
        let out = rank_scale(
            map(&[("A", f64::NAN), ("B", 1.0), ("C", f64::INFINITY)]),
            "t",
        )
        .unwrap();
        assert_eq!(out.len(), 1);
        assert_eq!(out["B"], 1.0);
        let err = rank_scale(map(&[("A", f64::NAN)]), "t").unwrap_err();
        assert!(matches!(err, Error::EmptyCrossSection { .. }), "{err}");
    }

    proptest! {
        // Rank scaling only sees order, so any strictly increasing transform
        // leaves the output bit-identical; values always land in (0, 1].
        #[test]
        fn rank_scale_monotone_invariant(values in proptest::collection::vec(-1e6f64..1e6, 1..40)) {
            let named: Vec<(String, f64)> =
                values.iter().enumerate().map(|(i, v)| (format!("S{i:02}"), *v)).collect();
            let transformed: Vec<(String, f64)> = named
                .iter()
                .map(|(k, v)| (k.clone(), 3.0 * v + 11.5))
                .collect();
            let a = rank_scale(named, "t").unwrap();
            let b = rank_scale(transformed, "t").unwrap();
            prop_assert_eq!(&a, &b);
            for v in a.values() {
                prop_assert!(*v > 0.0 && *v <= 1.0);
            }
        }

        #[test]
        fn rank_scale_top_is_one_when_untied(values in proptest::collection::hash_set(-1000i64..1000, 2..30)) {
            let named: Vec<(String, f64)> = values
                .iter()
                .enumerate()
                .map(|(i, v)| (format!("S{i:02}"), *v as f64))
                .collect();
            let out = rank_scale(named, "t").unwrap();
            let max = out.values().cloned().fold(f64::MIN, f64::max);
            prop_assert_eq!(max, 1.0);
        }
    }

    /// Panel where factor j at month (anchor - lag) has value
    /// rank-ordered by stock but offset so layout checks can decode it.
    fn lag_coded_panel(anchor: MonthId, stocks: &[&str]) -> FactorPanel {
        lag_coded_panel_back(anchor, stocks, 12)
    }

    fn lag_coded_panel_back(anchor: MonthId, stocks: &[&str], back: i32) -> FactorPanel {
        let mut records = Vec::new();
        for m in anchor.minus(back).range_inclusive(anchor.plus(1)) {
            for (s, id) in stocks.iter().enumerate() {
                let mut rec = FactorRecord::empty(m, *id);
                for j in 0..N_FACTORS {
                    // Strictly increasing in stock index; varies by month and
                    // factor so each (month, factor) ranking is the identity.
                    rec.set_factor(j, (s as f64) + 0.001 * j as f64 + 0.01 * m.index() as f64);
                }
                rec.fwd_return = Some(0.01 * (s as f64 + 1.0) * ((m.index() % 5) as f64 - 2.0));
                records.push(rec);
            }
        }
        FactorPanel::from_records(records).unwrap()
    }

    #[test]
    fn feature_layout_is_lag_major() {
        let anchor = month("2003-06");
        let stocks = ["A", "B", "C", "D"];
        let panel = lag_coded_panel(anchor, &stocks);
        let mut cache = ScaledCache::new();
        for m in feature_months(anchor) {
            cache.ensure(&panel, m).unwrap();
        }
        let v = build_features(&cache, "C", anchor).unwrap().unwrap();
        assert_eq!(v.len(), N_FEATURES);
        // "C" ranks 3rd of 4 in every (month, factor): scaled rank 0.75.
        for (b, m) in feature_months(anchor).into_iter().enumerate() {
            for j in 0..N_FACTORS {
                assert_eq!(
                    v[b * N_FACTORS + j],
                    0.75,
                    "block {b} ({m}) factor {j}"
                );
            }
        }
        // Spot-check that blocks really point at distinct months: knock out
        // factor 4 at lag 6 only and the vector must disappear.
        let panel2 = lag_coded_panel(anchor, &stocks);
        let m6 = anchor.minus(6);
        let mut rec = panel2.record(m6, "C").unwrap().clone();
        rec.missing[4] = true;
        rec.factors[4] = f64::NAN;
        let mut months: Vec<FactorRecord> = Vec::new();
        for m in panel2.months().collect::<Vec<_>>() {
            for id in panel2.universe_at(m).unwrap() {
                let r = if m == m6 && id == "C" {
                    rec.clone()
                } else {
                    panel2.record(m, &id).unwrap().clone()
                };
                months.push(r);
            }
        }
        let panel2 = FactorPanel::from_records(months).unwrap();
        let mut cache2 = ScaledCache::new();
        for m in feature_months(anchor) {
            cache2.ensure(&panel2, m).unwrap();
        }
        assert!(build_features(&cache2, "C", anchor).unwrap().is_none());
        // Other stocks unaffected.
        assert!(build_features(&cache2, "B", anchor).unwrap().is_some());
    }

    #[test]
    fn build_features_requires_cached_months() {
        let anchor = month("2003-06");
        let panel = lag_coded_panel(anchor, &["A", "B"]);
        let mut cache = ScaledCache::new();
        cache.ensure(&panel, anchor).unwrap(); // lag 0 only
        let err = build_features(&cache, "A", anchor).unwrap_err();
        assert!(matches!(err, Error::MissingScaledMonth { .. }), "{err}");
    }

    #[test]
    fn assemble_single_month_window() {
        // Prediction month m: single anchor at m-2 with 4 eligible stocks.
        let prediction = month("2003-08");
        let anchor = prediction.minus(2);
        let panel = lag_coded_panel(anchor, &["A", "B", "C", "D"]);
        let ts = assemble_training_set(&panel, prediction, 1).unwrap();
        assert_eq!(ts.k(), 4);
        assert_eq!(ts.month_ranges.len(), 1);
        assert_eq!(ts.month_ranges[0].0, anchor);
        assert_eq!(ts.features.nrows(), 4);
        assert_eq!(ts.features.ncols(), N_FEATURES);
        // Targets are rank-scaled within the month: a permutation of i/4.
        let mut t: Vec<f64> = ts.targets.to_vec();
        t.sort_by(f64::total_cmp);
        assert_eq!(t, vec![0.25, 0.5, 0.75, 1.0]);
        // Rows sorted by stock id within the month.
        let ids: Vec<&str> = ts.row_meta.iter().map(|(_, s)| s.as_str()).collect();
        assert_eq!(ids, vec!["A", "B", "C", "D"]);
        assert!(ts.empty_months.is_empty());
    }

    #[test]
    fn assemble_requires_history() {
        let prediction = month("2003-08");
        let anchor = prediction.minus(2);
        let panel = lag_coded_panel(anchor, &["A", "B", "C"]);
        // Window of 2 needs an anchor one month before the panel's reach.
        let err = assemble_training_set(&panel, prediction, 2).unwrap_err();
        assert!(matches!(err, Error::InsufficientHistory { .. }), "{err}");
    }

    #[test]
    fn assemble_skips_stocks_missing_fwd_but_scoring_keeps_them() {
        let prediction = month("2003-08");
        let anchor = prediction.minus(2);
        let mut records = Vec::new();
        for m in anchor.minus(12).range_inclusive(anchor) {
            for (s, id) in ["A", "B", "C"].iter().enumerate() {
                let mut rec = FactorRecord::empty(m, *id);
                for j in 0..N_FACTORS {
                    rec.set_factor(j, s as f64 + 0.1 * j as f64);
                }
                // "B" never has a forward return.
                rec.fwd_return = if *id == "B" { None } else { Some(0.01 * s as f64) };
                records.push(rec);
            }
        }
        let panel = FactorPanel::from_records(records).unwrap();
        let ts = assemble_training_set(&panel, prediction, 1).unwrap();
        let ids: Vec<&str> = ts.row_meta.iter().map(|(_, s)| s.as_str()).collect();
        assert_eq!(ids, vec!["A", "C"]);

        let mut cache = ScaledCache::new();
        let (score_ids, mat) = assemble_scoring_set(&panel, &mut cache, anchor).unwrap();
        assert_eq!(score_ids, vec!["A", "B", "C"]);
        assert_eq!(mat.nrows(), 3);
    }

    #[test]
    fn assemble_groups_months_ascending() {
        let prediction = month("2003-09");
        let last_anchor = prediction.minus(2);
        let panel = lag_coded_panel_back(last_anchor, &["A", "B", "C"], 14);
        let ts = assemble_training_set(&panel, prediction, 3).unwrap();
        assert_eq!(ts.k(), 9);
        let months: Vec<MonthId> = ts.month_ranges.iter().map(|(m, _)| *m).collect();
        assert_eq!(
            months,
            vec![last_anchor.minus(2), last_anchor.minus(1), last_anchor]
        );
        // Ranges tile 0..K.
        let mut expect = 0;
        for (_, r) in &ts.month_ranges {
            assert_eq!(r.start, expect);
            expect = r.end;
        }
        assert_eq!(expect, ts.k());
    }

    #[test]
    fn assemble_never_reads_past_its_anchors() {
        use crate::panel::{AccessKind, AccessTrace};
        let prediction = month("2003-09");
        let last_anchor = prediction.minus(2);
        let mut panel = lag_coded_panel_back(last_anchor, &["A", "B", "C"], 14);
        let trace = AccessTrace::new();
        panel.set_trace(std::sync::Arc::clone(&trace));
        let _ = assemble_training_set(&panel, prediction, 3).unwrap();
        assert!(trace.max_month(AccessKind::Factor).unwrap() <= last_anchor);
        assert!(trace.max_month(AccessKind::FwdReturn).unwrap() <= last_anchor);
    }
}
