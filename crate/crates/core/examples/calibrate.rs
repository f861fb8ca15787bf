//! Regenerates the frozen calibration numbers in `docs/calibration.md`.
//!
//! Runs the planted-signal fixture (and its null twin) through the full
//! walk-forward loop for the three model families plus their ensemble,
//! printing per-family timings, monthly mean CORR, pooled quintile
//! direction, and long-short summaries.
//!
//!     cargo run --release -p xsect-core --example calibrate
//!
//! Pass `--quick` to fit only one month per family (a timing probe, not a
//! calibration).

use std::time::Instant;

use xsect_core::metrics::binom_test_one_sided;
use xsect_core::model::ModelSpec;
use xsect_core::pipeline::{
    ensemble_scores, evaluate_scores, walk_forward, EnsembleMode, WalkForwardConfig,
};
use xsect_core::synth::{generate_panel, SynthConfig};
use xsect_core::MonthId;

/// The fixture's synthetic market: 200 stocks for 85 months, a planted
/// linear signal of strength 0.3 on one factor, no missing cells.
fn fixture_config(signal_strength: f64) -> SynthConfig {
    SynthConfig {
        n_stocks: 200,
        n_months: 85,
        start_month: "2000-01".parse().unwrap(),
        signal_strength,
        missing_rate: 0.0,
        seed: 42,
        ..SynthConfig::default()
    }
}

fn eval_window() -> (MonthId, MonthId) {
    // 48 training months plus the 13-month feature lead put the first
    // scoreable month at index 61; 24 evaluation months end at index 84.
    ("2005-02".parse().unwrap(), "2007-01".parse().unwrap())
}

fn strategies() -> Vec<ModelSpec> {
    vec![
        ModelSpec::mlp(xsect_core::mlp::preset("DNN8_3").expect("preset exists")),
        ModelSpec::forest(xsect_core::forest::ForestHyper {
            n_trees: 100,
            max_depth: 25,
            max_features: 7,
        }),
        ModelSpec::svr(xsect_core::svr::SvrHyper {
            c: 0.1,
            gamma: 0.01,
            epsilon: 0.1,
        }),
    ]
}

fn run_panel(tag: &str, signal_strength: f64, quick: bool) {
    let (eval_start, eval_end) = eval_window();
    let config = WalkForwardConfig {
        train_window: 48,
        retrain_every: 3,
        eval_start,
        eval_end: if quick { eval_start } else { eval_end },
        seed: 7,
    };
    let t0 = Instant::now();
    let panel = generate_panel(&fixture_config(signal_strength)).unwrap();
    println!("[{tag}] panel generated in {:.1?}", t0.elapsed());

    let mut sheets = Vec::new();
    for spec in strategies() {
        let label = spec.label();
        let t = Instant::now();
        let run = walk_forward(&panel, &spec, &config).unwrap();
        let fit_time = t.elapsed();
        let eval = evaluate_scores(&panel, &label, &run.scores).unwrap();
        let agg = &eval.aggregate;
        let dir = &agg.quintile;
        println!(
            "[{tag}] {label}: {:.1?} walk-forward, mean CORR {:+.4}, quintile dir {}/{} = {:.2}% (p={:.2e}), LS quintile R/R {:?}",
            fit_time,
            agg.corr_mean,
            dir.hits,
            dir.total,
            100.0 * dir.hits as f64 / dir.total as f64,
            dir.p_value,
            eval.ls_quintile.as_ref().and_then(|s| s.r_over_r),
        );
        if let Some(ls) = &eval.ls_quintile {
            println!(
                "[{tag}] {label}: LS quintile return {:.3}% risk {:.3}%; tertile R/R {:?}",
                ls.return_pct,
                ls.risk_pct,
                eval.ls_tertile.as_ref().and_then(|s| s.r_over_r),
            );
        }
        sheets.push(run.scores);
    }

    if !quick {
        let combined = ensemble_scores(&sheets, EnsembleMode::Mean).unwrap();
        let eval = evaluate_scores(&panel, "ENSEMBLE", &combined).unwrap();
        let dir = &eval.aggregate.quintile;
        println!(
            "[{tag}] ENSEMBLE: mean CORR {:+.4}, quintile dir {:.2}% (p={:.2e}), R/R {:?}",
            eval.aggregate.corr_mean,
            100.0 * dir.hits as f64 / dir.total as f64,
            binom_test_one_sided(dir.hits, dir.total).unwrap(),
            eval.ls_quintile.as_ref().and_then(|s| s.r_over_r),
        );
    }
}

fn main() {
    let quick = std::env::args().any(|a| a == "--quick");
    run_panel("planted", 0.3, quick);
    run_panel("null", 0.0, quick);
}
