//! Backtest report assembly: flat per-strategy rows, pooled family
//! groups, text rendering, and the CSV side files.
//!
//! Everything rendered here is a pure function of the experiment output —
//! no timestamps, hostnames, or other run-to-run noise — so rerunning the
//! same experiment writes byte-identical files.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::metrics::{self, DirectionAggregate, DirectionCount};
use crate::month::MonthId;
use crate::pipeline::{ScoreSheet, StrategyEval, StrategyOutcome, WalkForwardConfig};
use crate::portfolio::StrategySummary;
use crate::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// One strategy's flattened results (or its failure).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct StrategyRow {
    pub label: String,
    pub n_months: usize,
    pub corr_mean: f64,
    pub mse_mean: f64,
    pub dir_tertile: Option<DirectionAggregate>,
    pub dir_quintile: Option<DirectionAggregate>,
    pub ls_tertile: Option<StrategySummary>,
    pub ls_quintile: Option<StrategySummary>,
    pub warnings: Vec<String>,
    pub error: Option<String>,
}

/// Averages over one family of numbered strategies (`DNN8_1..DNN8_4` form
/// `DNN8`). Correlations and annualized figures are averaged across
/// members; direction counts are pooled before testing.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GroupRow {
    pub group: String,
    pub members: Vec<String>,
    pub corr_mean: f64,
    pub mse_mean: f64,
    pub dir_tertile: DirectionAggregate,
    pub dir_quintile: DirectionAggregate,
    pub return_tertile_pct: f64,
    pub risk_tertile_pct: f64,
    pub r_over_r_tertile: Option<f64>,
    pub return_quintile_pct: f64,
    pub risk_quintile_pct: f64,
    pub r_over_r_quintile: Option<f64>,
}

/// The whole backtest in one serializable document.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BacktestReport {
    pub schema_version: u32,
    pub config: WalkForwardConfig,
    pub strategies: Vec<StrategyRow>,
    pub groups: Vec<GroupRow>,
}

fn row_from_outcome(outcome: &StrategyOutcome) -> StrategyRow {
    match (&outcome.eval, &outcome.error) {
        (Some(eval), _) => StrategyRow {
            label: outcome.label.clone(),
            n_months: eval.months.len(),
            corr_mean: eval.aggregate.corr_mean,
            mse_mean: eval.aggregate.mse_mean,
            dir_tertile: Some(eval.aggregate.tertile.clone()),
            dir_quintile: Some(eval.aggregate.quintile.clone()),
            ls_tertile: eval.ls_tertile.clone(),
            ls_quintile: eval.ls_quintile.clone(),
            warnings: eval.warnings.clone(),
            error: None,
        },
        (None, err) => StrategyRow {
            label: outcome.label.clone(),
            n_months: 0,
            corr_mean: f64::NAN,
            mse_mean: f64::NAN,
            dir_tertile: None,
            dir_quintile: None,
            ls_tertile: None,
            ls_quintile: None,
            warnings: Vec::new(),
            error: Some(err.clone().unwrap_or_else(|| "unknown failure".into())),
        },
    }
}

/// The family prefix of a numbered label: everything before a final
/// all-digit segment (`NN3_DO_2` gives `NN3_DO`). Labels without a numeric
/// suffix stay ungrouped.
fn family_of(label: &str) -> Option<&str> {
    let (prefix, suffix) = label.rsplit_once('_')?;
    if !suffix.is_empty() && suffix.bytes().all(|b| b.is_ascii_digit()) {
        Some(prefix)
    } else {
        None
    }
}

fn pool_direction(counts: &[DirectionCount]) -> Result<DirectionAggregate> {
    let hits: u64 = counts.iter().map(|c| c.hits).sum();
    let total: u64 = counts.iter().map(|c| c.total).sum();
    let p_value = metrics::binom_test_one_sided(hits, total)?;
    Ok(DirectionAggregate {
        hits,
        total,
        fraction: if total == 0 {
            f64::NAN
        } else {
            hits as f64 / total as f64
        },
        p_value,
        stars: metrics::p_stars(p_value).to_string(),
    })
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (mut sum, mut n) = (0.0, 0usize);
    for v in values {
        sum += v;
        n += 1;
    }
    if n == 0 {
        f64::NAN
    } else {
        sum / n as f64
    }
}

fn mean_opt(values: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let mut kept = Vec::new();
    for v in values.flatten() {
        kept.push(v);
    }
    if kept.is_empty() {
        None
    } else {
        Some(kept.iter().sum::<f64>() / kept.len() as f64)
    }
}

fn build_groups(rows: &[StrategyRow]) -> Result<Vec<GroupRow>> {
    // First-appearance order of each family.
    let mut order: Vec<String> = Vec::new();
    let mut members: BTreeMap<String, Vec<&StrategyRow>> = BTreeMap::new();
    for row in rows.iter().filter(|r| r.error.is_none()) {
        if let Some(family) = family_of(&row.label) {
            let entry = members.entry(family.to_string()).or_default();
            if entry.is_empty() {
                order.push(family.to_string());
            }
            entry.push(row);
        }
    }

    let mut groups = Vec::new();
    for family in order {
        let rows = &members[&family];
        if rows.len() < 2 {
            continue;
        }
        let tertile_counts: Vec<DirectionCount> = rows
            .iter()
            .filter_map(|r| r.dir_tertile.as_ref())
            .map(|d| DirectionCount {
                hits: d.hits,
                total: d.total,
            })
            .collect();
        let quintile_counts: Vec<DirectionCount> = rows
            .iter()
            .filter_map(|r| r.dir_quintile.as_ref())
            .map(|d| DirectionCount {
                hits: d.hits,
                total: d.total,
            })
            .collect();
        groups.push(GroupRow {
            group: family.clone(),
            members: rows.iter().map(|r| r.label.clone()).collect(),
            corr_mean: mean(rows.iter().map(|r| r.corr_mean)),
            mse_mean: mean(rows.iter().map(|r| r.mse_mean)),
            dir_tertile: pool_direction(&tertile_counts)?,
            dir_quintile: pool_direction(&quintile_counts)?,
            return_tertile_pct: mean(
                rows.iter().filter_map(|r| r.ls_tertile.as_ref()).map(|s| s.return_pct),
            ),
            risk_tertile_pct: mean(
                rows.iter().filter_map(|r| r.ls_tertile.as_ref()).map(|s| s.risk_pct),
            ),
            r_over_r_tertile: mean_opt(
                rows.iter().map(|r| r.ls_tertile.as_ref().and_then(|s| s.r_over_r)),
            ),
            return_quintile_pct: mean(
                rows.iter().filter_map(|r| r.ls_quintile.as_ref()).map(|s| s.return_pct),
            ),
            risk_quintile_pct: mean(
                rows.iter().filter_map(|r| r.ls_quintile.as_ref()).map(|s| s.risk_pct),
            ),
            r_over_r_quintile: mean_opt(
                rows.iter().map(|r| r.ls_quintile.as_ref().and_then(|s| s.r_over_r)),
            ),
        });
    }
    Ok(groups)
}

/// Assembles the report document from experiment outcomes.
pub fn build_report(
    config: &WalkForwardConfig,
    outcomes: &[StrategyOutcome],
) -> Result<BacktestReport> {
    let strategies: Vec<StrategyRow> = outcomes.iter().map(row_from_outcome).collect();
    let groups = build_groups(&strategies)?;
    Ok(BacktestReport {
        schema_version: SCHEMA_VERSION,
        config: config.clone(),
        strategies,
        groups,
    })
}

fn fmt_f(v: f64, decimals: usize) -> String {
    if v.is_finite() {
        format!("{v:.decimals$}")
    } else {
        "-".into()
    }
}

fn fmt_dir(d: &Option<DirectionAggregate>) -> String {
    match d {
        Some(d) if d.total > 0 => format!("{:.2}{}", 100.0 * d.fraction, d.stars),
        _ => "-".into(),
    }
}

fn fmt_summary(s: &Option<StrategySummary>) -> (String, String, String) {
    match s {
        Some(s) => (
            fmt_f(s.return_pct, 2),
            fmt_f(s.risk_pct, 2),
            s.r_over_r.map(|r| fmt_f(r, 3)).unwrap_or_else(|| "-".into()),
        ),
        None => ("-".into(), "-".into(), "-".into()),
    }
}

/// Renders the report as a fixed-width text table (one line per strategy,
/// then per group).
pub fn render_text(report: &BacktestReport) -> String {
    let mut out = String::new();
    writeln!(
        out,
        "walk-forward backtest  window={}m  retrain={}m  eval={}..{}  seed={}",
        report.config.train_window,
        report.config.retrain_every,
        report.config.eval_start,
        report.config.eval_end,
        report.config.seed
    )
    .unwrap();
    writeln!(out).unwrap();
    let header = format!(
        "{:<24} {:>6} {:>8} {:>8} {:>10} {:>10} {:>8} {:>8} {:>7} {:>8} {:>8} {:>7}",
        "strategy",
        "months",
        "corr",
        "mse",
        "dir3%",
        "dir5%",
        "ret3%",
        "risk3%",
        "rr3",
        "ret5%",
        "risk5%",
        "rr5"
    );
    writeln!(out, "{header}").unwrap();
    writeln!(out, "{}", "-".repeat(header.len())).unwrap();

    for row in &report.strategies {
        if let Some(err) = &row.error {
            writeln!(out, "{:<24} failed: {err}", row.label).unwrap();
            continue;
        }
        let (r3, k3, q3) = fmt_summary(&row.ls_tertile);
        let (r5, k5, q5) = fmt_summary(&row.ls_quintile);
        writeln!(
            out,
            "{:<24} {:>6} {:>8} {:>8} {:>10} {:>10} {:>8} {:>8} {:>7} {:>8} {:>8} {:>7}",
            row.label,
            row.n_months,
            fmt_f(row.corr_mean, 4),
            fmt_f(row.mse_mean, 4),
            fmt_dir(&row.dir_tertile),
            fmt_dir(&row.dir_quintile),
            r3,
            k3,
            q3,
            r5,
            k5,
            q5
        )
        .unwrap();
    }

    if !report.groups.is_empty() {
        writeln!(out).unwrap();
        writeln!(out, "family averages (direction pooled across members):").unwrap();
        for g in &report.groups {
            writeln!(
                out,
                "{:<24} {:>6} {:>8} {:>8} {:>10} {:>10} {:>8} {:>8} {:>7} {:>8} {:>8} {:>7}",
                g.group,
                g.members.len(),
                fmt_f(g.corr_mean, 4),
                fmt_f(g.mse_mean, 4),
                fmt_dir(&Some(g.dir_tertile.clone())),
                fmt_dir(&Some(g.dir_quintile.clone())),
                fmt_f(g.return_tertile_pct, 2),
                fmt_f(g.risk_tertile_pct, 2),
                g.r_over_r_tertile.map(|r| fmt_f(r, 3)).unwrap_or_else(|| "-".into()),
                fmt_f(g.return_quintile_pct, 2),
                fmt_f(g.risk_quintile_pct, 2),
                g.r_over_r_quintile.map(|r| fmt_f(r, 3)).unwrap_or_else(|| "-".into()),
            )
            .unwrap();
        }
    }
    out
}

/// Serializes the report as pretty JSON with a trailing newline.
pub fn report_json(report: &BacktestReport) -> Result<String> {
    let mut json = serde_json::to_string_pretty(report)?;
    json.push('\n');
    Ok(json)
}

/// Writes one score sheet as `month,stock_id,score` rows. Floats use the
/// shortest round-trip form, so reading the file back is lossless.
pub fn write_scores_csv(sheet: &ScoreSheet, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from("month,stock_id,score\n");
    for (month, by_stock) in sheet {
        for (id, score) in by_stock {
            writeln!(out, "{month},{id},{score}").unwrap();
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Reads a score sheet written by [`write_scores_csv`].
pub fn read_scores_csv(path: impl AsRef<Path>) -> Result<ScoreSheet> {
    let path = path.as_ref();
    let file =
        std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);
    let expected = ["month", "stock_id", "score"];
    let found: Vec<String> = reader
        .headers()
        .map(|h| h.iter().map(str::to_string).collect())
        .unwrap_or_default();
    if found != expected {
        return Err(Error::MalformedHeader {
            expected: expected.join(","),
            found: found.join(","),
        });
    }
    let mut sheet = ScoreSheet::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let bad = |reason: &str| Error::MalformedRecord {
            line,
            reason: reason.into(),
        };
        let month: MonthId = row
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad("unparseable month"))?;
        let id = row.get(1).unwrap_or("").trim();
        if id.is_empty() {
            return Err(bad("empty stock_id"));
        }
        let score: f64 = row
            .get(2)
            .unwrap_or("")
            .parse()
            .map_err(|_| bad("unparseable score"))?;
        sheet
            .entry(month)
            .or_insert_with(BTreeMap::new)
            .insert(id.to_string(), score);
    }
    Ok(sheet)
}

/// Writes one strategy's month-by-month series.
pub fn write_monthly_csv(eval: &StrategyEval, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::from(
        "month,n,corr,mse,dir_tertile_hits,dir_tertile_total,dir_quintile_hits,\
         dir_quintile_total,ls_tertile,ls_quintile\n",
    );
    for r in &eval.months {
        writeln!(
            out,
            "{},{},{},{},{},{},{},{},{},{}",
            r.month,
            r.n,
            r.corr,
            r.mse,
            r.dir_tertile.hits,
            r.dir_tertile.total,
            r.dir_quintile.hits,
            r.dir_quintile.total,
            r.ls_tertile.ls,
            r.ls_quintile.ls
        )
        .unwrap();
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Cumulative sum of the monthly long-short returns, in month order.
pub fn cumulative_ls(eval: &StrategyEval, quintile: bool) -> Vec<(MonthId, f64)> {
    let mut acc = 0.0;
    eval.months
        .iter()
        .map(|r| {
            acc += if quintile {
                r.ls_quintile.ls
            } else {
                r.ls_tertile.ls
            };
            (r.month, acc)
        })
        .collect()
}
