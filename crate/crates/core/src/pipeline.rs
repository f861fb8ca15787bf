//! Walk-forward orchestration: fit on the trailing window, score the next
//! cross-section, evaluate against realized returns.
//!
//! For a prediction month `m` the training window anchors at months
//! `[m-1-N, m-2]`, whose forward returns are all realized by `m-1`;
//! scoring features anchor at `m-1`. Nothing observed during `m` itself
//! ever reaches the model that scores `m`.
//!
//! Per-month fit seeds are counter-derived from the experiment seed, so
//! adding or removing strategies never shifts another strategy's draws.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{self, AggregateEval, Bucket, MonthlyEval};
use crate::model::{self, FittedModel, ModelSpec};
use crate::month::MonthId;
use crate::panel::FactorPanel;
use crate::portfolio::{self, LsMonthReturn, StrategySummary};
use crate::preprocess::{self, ScaledCache};
use crate::seed;
use crate::Result;

/// Scores per month per stock, keyed deterministically.
pub type ScoreSheet = BTreeMap<MonthId, BTreeMap<String, f64>>;

pub const DEFAULT_TRAIN_WINDOW: usize = 120;

/// Walk-forward loop controls.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct WalkForwardConfig {
    /// Training window length N in months.
    #[serde(default = "default_train_window")]
    pub train_window: usize,
    /// Refit cadence; 1 refits every month.
    #[serde(default = "default_retrain_every")]
    pub retrain_every: usize,
    /// First and last prediction months, inclusive.
    pub eval_start: MonthId,
    pub eval_end: MonthId,
    pub seed: u64,
}

fn default_train_window() -> usize {
    DEFAULT_TRAIN_WINDOW
}

fn default_retrain_every() -> usize {
    1
}

impl WalkForwardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.train_window == 0 {
            return Err(Error::InvalidHyper("train_window must be >= 1".into()));
        }
        if self.retrain_every == 0 {
            return Err(Error::InvalidHyper("retrain_every must be >= 1".into()));
        }
        if self.eval_start > self.eval_end {
            return Err(Error::InvalidHyper(format!(
                "evaluation range {}..{} is empty",
                self.eval_start, self.eval_end
            )));
        }
        Ok(())
    }

    pub fn eval_months(&self) -> Vec<MonthId> {
        MonthId::range_inclusive(self.eval_start, self.eval_end).collect()
    }
}

/// What happened at one prediction month.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FitRecord {
    pub month: MonthId,
    /// False when a model from an earlier month was reused.
    pub refit: bool,
    /// Training examples behind the model scoring this month.
    pub n_train: usize,
    /// Stocks scored this month.
    pub n_scored: usize,
}

/// One strategy's walk-forward output.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyRun {
    pub label: String,
    pub scores: ScoreSheet,
    pub fits: Vec<FitRecord>,
}

/// Runs one strategy through the evaluation months, refitting on the
/// trailing window every `retrain_every` months and scoring each month's
/// feature-complete universe. Fit-time failures carry the offending month.
pub fn walk_forward(
    panel: &FactorPanel,
    spec: &ModelSpec,
    config: &WalkForwardConfig,
) -> Result<StrategyRun> {
    spec.validate()?;
    config.validate()?;
    let mut cache = ScaledCache::new();
    let mut model: Option<FittedModel> = None;
    let mut n_train = 0usize;
    let mut scores = ScoreSheet::new();
    let mut fits = Vec::new();

    for (i, m) in config.eval_months().into_iter().enumerate() {
        let refit = i % config.retrain_every == 0;
        if refit {
            let wrap = |e: Error| Error::ModelFitFailure {
                month: m,
                source: Box::new(e),
            };
            let training =
                preprocess::assemble_training_set_cached(panel, m, config.train_window, &mut cache)
                    .map_err(wrap)?;
            n_train = training.k();
            let fit_seed = seed::derive(config.seed, m.index() as u64);
            model = Some(model::fit(spec, &training, fit_seed).map_err(wrap)?);
        }
        let fitted = model.as_ref().expect("first month always refits");

        let (ids, x) = preprocess::assemble_scoring_set(panel, &mut cache, m.minus(1))?;
        let preds = model::predict(fitted, x.view())?;
        scores.insert(
            m,
            ids.iter().cloned().zip(preds.iter().copied()).collect(),
        );
        fits.push(FitRecord {
            month: m,
            refit,
            n_train,
            n_scored: ids.len(),
        });
    }

    Ok(StrategyRun {
        label: spec.label(),
        scores,
        fits,
    })
}

/// How member scores combine in a score-sheet ensemble.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    /// Arithmetic mean of raw scores, summed in sheet order.
    Mean,
    /// Scores are rank-scaled within the month's common universe first,
    /// which makes members with different output scales comparable.
    RankMean,
}

/// Combines score sheets month by month over the intersection of their
/// scored stocks. Every sheet must cover exactly the same months.
pub fn ensemble_scores(sheets: &[ScoreSheet], mode: EnsembleMode) -> Result<ScoreSheet> {
    let Some(first) = sheets.first() else {
        return Err(Error::InvalidHyper("ensemble of zero score sheets".into()));
    };
    let months: Vec<MonthId> = first.keys().copied().collect();
    for (si, sheet) in sheets.iter().enumerate().skip(1) {
        let theirs: Vec<MonthId> = sheet.keys().copied().collect();
        if theirs != months {
            return Err(Error::MonthKeyMismatch(format!(
                "sheet 0 covers {} months, sheet {si} covers {}",
                months.len(),
                theirs.len()
            )));
        }
    }

    let mut combined = ScoreSheet::new();
    for &m in &months {
        let mut common: BTreeSet<&String> = first[&m].keys().collect();
        for sheet in &sheets[1..] {
            let theirs: BTreeSet<&String> = sheet[&m].keys().collect();
            common = common.intersection(&theirs).copied().collect();
        }
        if common.is_empty() {
            return Err(Error::EmptyIntersection { month: m });
        }

        let per_sheet: Vec<BTreeMap<String, f64>> = match mode {
            EnsembleMode::Mean => sheets
                .iter()
                .map(|sheet| {
                    common
                        .iter()
                        .map(|id| ((*id).clone(), sheet[&m][*id]))
                        .collect()
                })
                .collect(),
            EnsembleMode::RankMean => sheets
                .iter()
                .map(|sheet| {
                    preprocess::rank_scale(
                        common.iter().map(|id| ((*id).clone(), sheet[&m][*id])),
                        &format!("ensemble ranks at {m}"),
                    )
                })
                .collect::<Result<Vec<_>>>()?,
        };

        let n = per_sheet.len() as f64;
        let month_scores: BTreeMap<String, f64> = common
            .iter()
            .map(|id| {
                let sum: f64 = per_sheet.iter().map(|s| s[*id]).sum();
                ((*id).clone(), sum / n)
            })
            .collect();
        combined.insert(m, month_scores);
    }
    Ok(combined)
}

/// One evaluated month: ranking quality plus both long-short schemes.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct MonthRecord {
    pub month: MonthId,
    /// Stocks with both a score and a realized return.
    pub n: usize,
    pub corr: f64,
    pub mse: f64,
    pub dir_tertile: metrics::DirectionCount,
    pub dir_quintile: metrics::DirectionCount,
    pub ls_tertile: LsMonthReturn,
    pub ls_quintile: LsMonthReturn,
}

/// A strategy's full evaluation.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyEval {
    pub label: String,
    pub months: Vec<MonthRecord>,
    pub aggregate: AggregateEval,
    /// Annualized summaries; absent when fewer than two months evaluated.
    pub ls_tertile: Option<StrategySummary>,
    pub ls_quintile: Option<StrategySummary>,
    /// Skipped or degenerate months, in order.
    pub warnings: Vec<String>,
}

/// Joins each scored month with the returns realized over it (the forward
/// returns recorded at the month before) and evaluates ranking quality,
/// directional accuracy, and both long-short schemes.
///
/// Months with fewer than five joined stocks are skipped with a warning;
/// months whose bucket boundaries fall on tied scores are kept but warned
/// about, since the deterministic tie order resolves them reproducibly.
pub fn evaluate_scores(
    panel: &FactorPanel,
    label: &str,
    scores: &ScoreSheet,
) -> Result<StrategyEval> {
    let mut months = Vec::new();
    let mut warnings = Vec::new();

    for (&m, sheet) in scores {
        let anchor = m.minus(1);
        let joined: Vec<(String, f64, f64)> = sheet
            .iter()
            .filter_map(|(id, &score)| {
                panel.fwd_return(anchor, id).map(|r| (id.clone(), score, r))
            })
            .collect();
        if joined.len() < Bucket::Quintile.min_stocks() {
            warnings.push(format!(
                "{m}: only {} stocks with scores and realized returns; month skipped",
                joined.len()
            ));
            continue;
        }

        let score_vec: Vec<f64> = joined.iter().map(|j| j.1).collect();
        let ret_vec: Vec<f64> = joined.iter().map(|j| j.2).collect();
        let corr = metrics::spearman(&score_vec, &ret_vec)?;

        let ranked = preprocess::rank_scale(
            joined.iter().map(|(id, _, r)| (id.clone(), *r)),
            &format!("realized returns behind {m}"),
        )?;
        let mse = joined
            .iter()
            .map(|(id, s, _)| (s - ranked[id]) * (s - ranked[id]))
            .sum::<f64>()
            / joined.len() as f64;

        let dir_tertile = metrics::direction(&joined, Bucket::Tertile)?;
        let dir_quintile = metrics::direction(&joined, Bucket::Quintile)?;
        let ls_tertile = portfolio::ls_month(&joined, Bucket::Tertile)?;
        let ls_quintile = portfolio::ls_month(&joined, Bucket::Quintile)?;
        for (scheme, ls) in [("tertile", &ls_tertile), ("quintile", &ls_quintile)] {
            if ls.degenerate {
                warnings.push(format!("{m}: tied scores at the {scheme} bucket boundary"));
            }
        }

        months.push(MonthRecord {
            month: m,
            n: joined.len(),
            corr,
            mse,
            dir_tertile,
            dir_quintile,
            ls_tertile,
            ls_quintile,
        });
    }

    let evals: Vec<MonthlyEval> = months
        .iter()
        .map(|r| MonthlyEval {
            month: r.month,
            corr: r.corr,
            mse: r.mse,
            dir_tertile: r.dir_tertile,
            dir_quintile: r.dir_quintile,
        })
        .collect();
    let aggregate = metrics::aggregate_monthly(&evals)?;
    let (ls_tertile, ls_quintile) = if months.len() >= 2 {
        let ls3: Vec<f64> = months.iter().map(|r| r.ls_tertile.ls).collect();
        let ls5: Vec<f64> = months.iter().map(|r| r.ls_quintile.ls).collect();
        (
            Some(portfolio::summarize_strategy(&ls3)?),
            Some(portfolio::summarize_strategy(&ls5)?),
        )
    } else {
        warnings.push("fewer than two evaluated months; annualized summaries omitted".into());
        (None, None)
    };
    Ok(StrategyEval {
        label: label.to_string(),
        months,
        aggregate,
        ls_tertile,
        ls_quintile,
        warnings,
    })
}

/// One strategy's result inside an experiment; failures are captured, not
/// propagated, so one bad configuration cannot sink the batch.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyOutcome {
    pub label: String,
    pub run: Option<StrategyRun>,
    pub eval: Option<StrategyEval>,
    pub error: Option<String>,
}

impl StrategyOutcome {
    pub fn succeeded(&self) -> bool {
        self.error.is_none()
    }
}

/// Walk-forwards and evaluates every spec against the same panel and
/// config. Specs run in parallel; the output order matches the input.
pub fn run_experiment(
    panel: &FactorPanel,
    specs: &[ModelSpec],
    config: &WalkForwardConfig,
) -> Vec<StrategyOutcome> {
    use rayon::prelude::*;
    specs
        .par_iter()
        .map(|spec| {
            let label = spec.label();
            let result = walk_forward(panel, spec, config)
                .and_then(|run| evaluate_scores(panel, &label, &run.scores).map(|e| (run, e)));
            match result {
                Ok((run, eval)) => StrategyOutcome {
                    label,
                    run: Some(run),
                    eval: Some(eval),
                    error: None,
                },
                Err(e) => StrategyOutcome {
                    label,
                    run: None,
                    eval: None,
                    error: Some(e.to_string()),
                },
            }
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::forest::ForestHyper;
    use crate::synth::{self, SynthConfig};

    /// Small panel with a strong planted signal and no noise: 30 stocks,
    /// 20 months.
    fn strong_panel() -> FactorPanel {
        synth::generate_panel(&SynthConfig {
            n_stocks: 30,
            n_months: 20,
            signal_strength: 1.0,
            sigma_noise: 0.0,
            seed: 42,
            ..SynthConfig::default()
        })
        .unwrap()
    }

    fn fast_forest() -> ModelSpec {
        ModelSpec::forest(ForestHyper::new(20, 6, 40))
    }

    fn config_for(panel: &FactorPanel, window: usize) -> WalkForwardConfig {
        // Earliest prediction month: window + 13 months of lead history.
        let first = panel.first_month().unwrap();
        let last = panel.last_month().unwrap();
        WalkForwardConfig {
            train_window: window,
            retrain_every: 1,
            eval_start: first.plus((window + 13) as i32),
            eval_end: last.minus(1),
            seed: 3,
        }
    }

    #[test]
    fn walk_forward_scores_every_month_and_finds_planted_signal() {
        let panel = strong_panel();
        let config = config_for(&panel, 3);
        assert_eq!(config.eval_months().len(), 3);
        let run = walk_forward(&panel, &fast_forest(), &config).unwrap();

        assert_eq!(run.scores.len(), 3);
        assert_eq!(run.fits.len(), 3);
        for (m, sheet) in &run.scores {
            assert_eq!(sheet.len(), 30, "month {m} should score all stocks");
        }
        for fit in &run.fits {
            assert!(fit.refit);
            assert_eq!(fit.n_train, 3 * 30);
            assert_eq!(fit.n_scored, 30);
        }

        let eval = evaluate_scores(&panel, &run.label, &run.scores).unwrap();
        assert_eq!(eval.months.len(), 3);
        assert!(
            eval.aggregate.corr_mean > 0.5,
            "planted noiseless signal should be easy: corr {}",
            eval.aggregate.corr_mean
        );
        assert!(eval.ls_quintile.unwrap().return_pct > 0.0);
    }

    #[test]
    fn walk_forward_is_deterministic() {
        let panel = strong_panel();
        let config = config_for(&panel, 3);
        let a = walk_forward(&panel, &fast_forest(), &config).unwrap();
        let b = walk_forward(&panel, &fast_forest(), &config).unwrap();
        for (m, sheet) in &a.scores {
            for (id, score) in sheet {
                assert_eq!(score.to_bits(), b.scores[m][id].to_bits(), "{m}/{id}");
            }
        }

        let other = WalkForwardConfig { seed: 4, ..config };
        let c = walk_forward(&panel, &fast_forest(), &other).unwrap();
        let any_diff = a
            .scores
            .iter()
            .any(|(m, sheet)| sheet.iter().any(|(id, s)| *s != c.scores[m][id]));
        assert!(any_diff, "different seed should perturb forest scores");
    }

    #[test]
    fn retrain_cadence_reuses_models_between_refits() {
        let panel = strong_panel();
        let mut config = config_for(&panel, 3);
        config.retrain_every = 2;
        let run = walk_forward(&panel, &fast_forest(), &config).unwrap();
        let pattern: Vec<bool> = run.fits.iter().map(|f| f.refit).collect();
        assert_eq!(pattern, vec![true, false, true]);
        assert_eq!(run.scores.len(), 3);
    }

    #[test]
    fn insufficient_history_surfaces_as_fit_failure() {
        let panel = strong_panel();
        let mut config = config_for(&panel, 3);
        config.train_window = 10; // needs 10+13 lead months; only 16 exist
        let err = walk_forward(&panel, &fast_forest(), &config).unwrap_err();
        match err {
            Error::ModelFitFailure { month, source } => {
                assert_eq!(month, config.eval_start);
                assert!(matches!(*source, Error::InsufficientHistory { .. }));
            }
            other => panic!("expected fit failure, got {other}"),
        }
    }

    #[test]
    fn ensemble_mean_is_exact_and_requires_aligned_sheets() {
        let m = MonthId::new(2001, 6).unwrap();
        let sheet = |vals: &[(&str, f64)]| -> ScoreSheet {
            let mut s = ScoreSheet::new();
            s.insert(
                m,
                vals.iter().map(|(id, v)| (id.to_string(), *v)).collect(),
            );
            s
        };
        let a = sheet(&[("A", 0.2), ("B", 0.8), ("C", 0.5)]);
        let b = sheet(&[("A", 0.4), ("B", 0.6), ("D", 0.9)]);

        let mean = ensemble_scores(&[a.clone(), b.clone()], EnsembleMode::Mean).unwrap();
        let month = &mean[&m];
        assert_eq!(month.len(), 2, "D and C drop out of the intersection");
        assert_eq!(month["A"], (0.2 + 0.4) / 2.0);
        assert_eq!(month["B"], (0.8 + 0.6) / 2.0);

        // Rank mode: both sheets rank A below B, so the ranks agree.
        let ranked = ensemble_scores(&[a.clone(), b.clone()], EnsembleMode::RankMean).unwrap();
        assert_eq!(ranked[&m]["A"], 0.5);
        assert_eq!(ranked[&m]["B"], 1.0);

        let mut misaligned = b.clone();
        misaligned.insert(m.plus(1), BTreeMap::new());
        assert!(matches!(
            ensemble_scores(&[a.clone(), misaligned], EnsembleMode::Mean),
            Err(Error::MonthKeyMismatch(_))
        ));

        let disjoint = sheet(&[("X", 1.0)]);
        assert!(matches!(
            ensemble_scores(&[a, disjoint], EnsembleMode::Mean),
            Err(Error::EmptyIntersection { .. })
        ));

        assert!(ensemble_scores(&[], EnsembleMode::Mean).is_err());
    }

    #[test]
    fn evaluation_matches_hand_computed_perfect_ranking() {
        // Build a panel directly: one anchor month with known returns,
        // then score the following month in the exact return order.
        use crate::panel::FactorRecord;
        let anchor = MonthId::new(2004, 1).unwrap();
        let rets = [0.10, 0.05, 0.02, -0.01, -0.04, -0.08];
        let records: Vec<FactorRecord> = rets
            .iter()
            .enumerate()
            .map(|(i, &r)| {
                let mut rec = FactorRecord::empty(anchor, format!("S{i}"));
                rec.set_factor(0, 0.0);
                rec.fwd_return = Some(r);
                rec
            })
            .collect();
        let panel = FactorPanel::from_records(records).unwrap();

        let m = anchor.plus(1);
        let mut sheet = ScoreSheet::new();
        sheet.insert(
            m,
            rets.iter()
                .enumerate()
                .map(|(i, &r)| (format!("S{i}"), r * 10.0))
                .collect(),
        );

        let eval = evaluate_scores(&panel, "perfect", &sheet).unwrap();
        assert_eq!(eval.months.len(), 1);
        let rec = &eval.months[0];
        assert_eq!(rec.n, 6);
        assert!((rec.corr - 1.0).abs() <= 1e-12);
        // Tertile buckets: top {S0, S1}, bottom {S4, S5}; median splits
        // cleanly, so every pick hits.
        assert_eq!(rec.dir_tertile.hits, 4);
        assert_eq!(rec.dir_tertile.total, 4);
        // k = round(6/5) = 1: long S0, short S5.
        let expected_ls5 = 0.10 - (-0.08);
        assert!((rec.ls_quintile.ls - expected_ls5).abs() <= 1e-12);
        let expected_ls3 = (0.10 + 0.05) / 2.0 - (-0.04 + -0.08) / 2.0;
        assert!((rec.ls_tertile.ls - expected_ls3).abs() <= 1e-12);
        // A lone month cannot be annualized.
        assert!(eval.ls_tertile.is_none() && eval.ls_quintile.is_none());
        assert!(eval.warnings.iter().any(|w| w.contains("fewer than two")));
    }

    #[test]
    fn skips_months_without_enough_realized_returns() {
        let panel = strong_panel();
        let last = panel.last_month().unwrap();
        // Anchored at the final panel month, no forward return is realized
        // yet, so the month skips; with nothing left there is no pool.
        let mut sheet = ScoreSheet::new();
        sheet.insert(
            last.plus(1),
            panel
                .universe_at(last)
                .unwrap()
                .into_iter()
                .enumerate()
                .map(|(i, id)| (id, i as f64))
                .collect(),
        );
        let err = evaluate_scores(&panel, "gappy", &sheet);
        assert!(matches!(err, Err(Error::EmptyEvalList)));
    }

    #[test]
    fn experiment_isolates_failures_and_keeps_order() {
        let panel = strong_panel();
        let config = config_for(&panel, 3);
        let specs = vec![
            fast_forest(),
            ModelSpec::svr(crate::svr::SvrHyper::new(-1.0, 0.1, 0.1)),
        ];
        let outcomes = run_experiment(&panel, &specs, &config);
        assert_eq!(outcomes.len(), 2);
        assert_eq!(outcomes[0].label, "RF_d6_f40");
        assert!(outcomes[0].succeeded());
        assert!(outcomes[0].eval.is_some());
        assert!(!outcomes[1].succeeded());
        let message = outcomes[1].error.as_deref().unwrap();
        assert!(message.contains("C > 0"), "unexpected message: {message}");
    }
}
