//! `xsect`: synthesize factor panels, run walk-forward backtests, and
//! render the resulting reports.
//!
//! Exit codes: 0 on success, 1 when the run finished but at least one
//! strategy failed, 2 on configuration or input errors (in which case no
//! partial outputs are written).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};

use xsect_core::model::ModelSpec;
use xsect_core::pipeline::{
    self, EnsembleMode, ScoreSheet, StrategyOutcome, WalkForwardConfig,
};
use xsect_core::report::{self, BacktestReport};
use xsect_core::synth::SynthConfig;
use xsect_core::{panel, synth};

#[derive(Parser)]
#[command(
    name = "xsect",
    version,
    about = "Cross-sectional return forecasting backtests"
)]
struct Cli {
    /// Worker threads for parallel strategy runs (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a synthetic factor panel CSV.
    Synth {
        /// Generator config JSON; defaults apply when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        /// Output panel CSV path.
        #[arg(long)]
        out: PathBuf,
        /// Overrides the config seed.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Run a walk-forward experiment over a panel.
    Run {
        /// Input panel CSV.
        #[arg(long)]
        panel: PathBuf,
        /// Experiment config JSON.
        #[arg(long)]
        config: PathBuf,
        /// Directory for reports, scores, and series.
        #[arg(long, value_name = "DIR")]
        out_dir: PathBuf,
    },
    /// Re-render an existing report JSON.
    Report {
        /// report.json written by `run`.
        #[arg(long)]
        report: PathBuf,
        #[arg(long, value_enum, default_value_t = ReportFormat::Text)]
        format: ReportFormat,
    },
    /// Check a panel CSV for structural problems.
    Validate {
        #[arg(long)]
        panel: PathBuf,
        /// Warn when a month's universe falls below this count.
        #[arg(long, default_value_t = panel::DEFAULT_MIN_UNIVERSE)]
        min_universe: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum ReportFormat {
    Text,
    Json,
}

/// Score-sheet ensemble over named strategies from the same run.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct EnsembleConfig {
    #[serde(default = "default_ensemble_label")]
    label: String,
    mode: EnsembleMode,
    /// Labels of member strategies; each must appear in `strategies`.
    members: Vec<String>,
}

fn default_ensemble_label() -> String {
    "ENSEMBLE".into()
}

/// The `run` subcommand's config file.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RunConfig {
    walk_forward: WalkForwardConfig,
    strategies: Vec<ModelSpec>,
    #[serde(default)]
    ensemble: Option<EnsembleConfig>,
}

/// A failure paired with the exit code it should produce.
struct CmdError {
    code: u8,
    message: String,
}

impl CmdError {
    fn config(message: impl Into<String>) -> Self {
        Self {
            code: 2,
            message: message.into(),
        }
    }
}

impl<E: std::error::Error> From<E> for CmdError {
    fn from(e: E) -> Self {
        CmdError::config(e.to_string())
    }
}

type CmdResult = Result<u8, CmdError>;

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        // Ignore failure: the pool can only be sized once per process.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    let outcome = match cli.cmd {
        Cmd::Synth { config, out, seed } => cmd_synth(config.as_deref(), &out, seed),
        Cmd::Run {
            panel,
            config,
            out_dir,
        } => cmd_run(&panel, &config, &out_dir),
        Cmd::Report { report, format } => cmd_report(&report, format),
        Cmd::Validate {
            panel,
            min_universe,
        } => cmd_validate(&panel, min_universe),
    };
    match outcome {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {}", e.message);
            ExitCode::from(e.code)
        }
    }
}

fn read_json<T: serde::de::DeserializeOwned>(path: &Path, what: &str) -> Result<T, CmdError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| CmdError::config(format!("{what} {}: {e}", path.display())))?;
    serde_json::from_str(&text)
        .map_err(|e| CmdError::config(format!("{what} {}: {e}", path.display())))
}

fn cmd_synth(config: Option<&Path>, out: &Path, seed: Option<u64>) -> CmdResult {
    let mut cfg: SynthConfig = match config {
        Some(path) => read_json(path, "synth config")?,
        None => SynthConfig::default(),
    };
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let panel = synth::generate_panel(&cfg)?;
    panel::write_panel(&panel, out)?;
    eprintln!(
        "wrote {} stocks x {} months to {}",
        cfg.n_stocks,
        cfg.n_months,
        out.display()
    );
    Ok(0)
}

/// Turns a strategy label into a safe file stem.
fn sanitize(label: &str) -> String {
    label
        .chars()
        .map(|c| {
            if c.is_ascii_alphanumeric() || matches!(c, '.' | '-' | '_') {
                c
            } else {
                '_'
            }
        })
        .collect()
}

fn write_cumulative_csv(
    eval: &pipeline::StrategyEval,
    path: &Path,
) -> Result<(), xsect_core::Error> {
    use std::fmt::Write as _;
    let mut out = String::from("month,cum_ls_tertile,cum_ls_quintile\n");
    let tertile = report::cumulative_ls(eval, false);
    let quintile = report::cumulative_ls(eval, true);
    for ((m, c3), (_, c5)) in tertile.iter().zip(&quintile) {
        writeln!(out, "{m},{c3},{c5}").unwrap();
    }
    std::fs::write(path, out)
        .map_err(|e| xsect_core::Error::io(path.display().to_string(), e))
}

fn cmd_run(panel_path: &Path, config_path: &Path, out_dir: &Path) -> CmdResult {
    let config: RunConfig = read_json(config_path, "run config")?;
    config.walk_forward.validate()?;
    if config.strategies.is_empty() {
        return Err(CmdError::config("run config lists no strategies"));
    }
    for spec in &config.strategies {
        spec.validate()?;
    }
    let labels: Vec<String> = config.strategies.iter().map(ModelSpec::label).collect();
    if let Some(ens) = &config.ensemble {
        if ens.members.len() < 2 {
            return Err(CmdError::config("ensemble needs at least two members"));
        }
        for member in &ens.members {
            if !labels.contains(member) {
                return Err(CmdError::config(format!(
                    "ensemble member {member} is not a configured strategy"
                )));
            }
        }
    }
    let panel = panel::load_panel(panel_path)?;

    for sub in ["", "scores", "monthly", "cumulative"] {
        std::fs::create_dir_all(out_dir.join(sub))
            .map_err(|e| CmdError::config(format!("out dir {}: {e}", out_dir.display())))?;
    }
    std::fs::write(
        out_dir.join("config.resolved.json"),
        serde_json::to_string_pretty(&config).expect("config serializes") + "\n",
    )
    .map_err(|e| CmdError::config(format!("out dir {}: {e}", out_dir.display())))?;

    let mut outcomes = pipeline::run_experiment(&panel, &config.strategies, &config.walk_forward);

    if let Some(ens) = &config.ensemble {
        outcomes.push(run_ensemble(&panel, ens, &outcomes));
    }

    for outcome in &outcomes {
        let stem = sanitize(&outcome.label);
        if let Some(run) = &outcome.run {
            report::write_scores_csv(&run.scores, out_dir.join("scores").join(format!("{stem}.csv")))?;
        }
        if let Some(eval) = &outcome.eval {
            report::write_monthly_csv(eval, out_dir.join("monthly").join(format!("{stem}.csv")))?;
            write_cumulative_csv(eval, &out_dir.join("cumulative").join(format!("{stem}.csv")))?;
        }
    }

    let backtest = report::build_report(&config.walk_forward, &outcomes)?;
    std::fs::write(out_dir.join("report.json"), report::report_json(&backtest)?)
        .map_err(|e| CmdError::config(format!("report.json: {e}")))?;
    let text = report::render_text(&backtest);
    std::fs::write(out_dir.join("report.txt"), &text)
        .map_err(|e| CmdError::config(format!("report.txt: {e}")))?;
    print!("{text}");

    let failures: Vec<&StrategyOutcome> = outcomes.iter().filter(|o| !o.succeeded()).collect();
    if failures.is_empty() {
        Ok(0)
    } else {
        for f in &failures {
            eprintln!(
                "strategy {} failed: {}",
                f.label,
                f.error.as_deref().unwrap_or("unknown")
            );
        }
        Ok(1)
    }
}

/// Combines already-run member sheets; member failures become this
/// outcome's failure.
fn run_ensemble(
    panel: &panel::FactorPanel,
    config: &EnsembleConfig,
    outcomes: &[StrategyOutcome],
) -> StrategyOutcome {
    let fail = |message: String| StrategyOutcome {
        label: config.label.clone(),
        run: None,
        eval: None,
        error: Some(message),
    };
    let mut sheets: Vec<ScoreSheet> = Vec::with_capacity(config.members.len());
    for member in &config.members {
        let Some(outcome) = outcomes.iter().find(|o| o.label == *member) else {
            return fail(format!("member {member} missing from outcomes"));
        };
        match &outcome.run {
            Some(run) => sheets.push(run.scores.clone()),
            None => return fail(format!("member {member} failed; ensemble skipped")),
        }
    }
    let combined = match pipeline::ensemble_scores(&sheets, config.mode) {
        Ok(c) => c,
        Err(e) => return fail(e.to_string()),
    };
    match pipeline::evaluate_scores(panel, &config.label, &combined) {
        Ok(eval) => StrategyOutcome {
            label: config.label.clone(),
            run: Some(pipeline::StrategyRun {
                label: config.label.clone(),
                scores: combined,
                fits: Vec::new(),
            }),
            eval: Some(eval),
            error: None,
        },
        Err(e) => fail(e.to_string()),
    }
}

fn cmd_report(path: &Path, format: ReportFormat) -> CmdResult {
    let backtest: BacktestReport = read_json(path, "report")?;
    if backtest.schema_version != report::SCHEMA_VERSION {
        return Err(CmdError::config(format!(
            "report schema version {} unsupported (expected {})",
            backtest.schema_version,
            report::SCHEMA_VERSION
        )));
    }
    match format {
        ReportFormat::Text => print!("{}", report::render_text(&backtest)),
        ReportFormat::Json => print!("{}", report::report_json(&backtest)?),
    }
    Ok(0)
}

fn cmd_validate(panel_path: &Path, min_universe: usize) -> CmdResult {
    let panel = panel::load_panel(panel_path)?;
    let validation = panel::validate_panel(&panel, min_universe)?;
    let first = validation.months.first().expect("non-empty panel");
    let last = validation.months.last().expect("non-empty panel");
    println!(
        "panel {}..{}: {} months, universe {}..{}",
        first.month,
        last.month,
        validation.months.len(),
        validation.months.iter().map(|m| m.universe).min().unwrap(),
        validation.months.iter().map(|m| m.universe).max().unwrap(),
    );
    let worst = validation
        .factor_missing_rate
        .iter()
        .cloned()
        .fold(0.0f64, f64::max);
    println!("worst factor missing rate: {:.4}", worst);
    for w in &validation.warnings {
        println!("warning: {w}");
    }
    println!(
        "{}",
        if validation.is_clean() {
            "panel is clean"
        } else {
            "panel has warnings"
        }
    );
    Ok(0)
}
