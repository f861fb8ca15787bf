//! Factor panel storage and CSV I/O.
//!
//! A panel holds one record per (month, stock): 25 factor exposures with a
//! per-cell missing mask, plus the forward return realized over the month
//! following the record's month. Records are keyed by ordered maps so every
//! iteration order is deterministic.
//!
//! Reads used by the modelling pipeline go through accessors that can log
//! `(month, kind)` access events; the test suite turns that on to prove no
//! stage ever reads data from the future.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;
use std::sync::{Arc, Mutex};

use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::month::MonthId;
use crate::Result;

/// Number of factor columns in a panel.
pub const N_FACTORS: usize = 25;

/// Months whose universe falls below this get flagged by [`validate_panel`].
pub const DEFAULT_MIN_UNIVERSE: usize = 30;

/// Column name for 0-based factor index `j`: `f01` .. `f25`.
pub fn factor_column_name(j: usize) -> String {
    format!("f{:02}", j + 1)
}

/// The exact header line of the panel CSV format.
pub fn expected_header() -> Vec<String> {
    let mut h = vec!["month".to_string(), "stock_id".to_string()];
    h.extend((0..N_FACTORS).map(factor_column_name));
    h.push("fwd_return".to_string());
    h
}

/// One (month, stock) row of the panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FactorRecord {
    pub month: MonthId,
    pub stock_id: String,
    /// Factor exposures; cells flagged in `missing` hold NaN.
    pub factors: [f64; N_FACTORS],
    /// Per-factor missing mask (`true` = value absent).
    pub missing: [bool; N_FACTORS],
    /// Return realized over `month -> month + 1`; `None` when unknown
    /// (always the case for the panel's last month).
    pub fwd_return: Option<f64>,
}

impl FactorRecord {
    /// A record with all factors missing; fill in what you have.
    pub fn empty(month: MonthId, stock_id: impl Into<String>) -> Self {
        Self {
            month,
            stock_id: stock_id.into(),
            factors: [f64::NAN; N_FACTORS],
            missing: [true; N_FACTORS],
            fwd_return: None,
        }
    }

    pub fn set_factor(&mut self, j: usize, value: f64) {
        self.factors[j] = value;
        self.missing[j] = false;
    }

    /// Factor value if present and finite.
    pub fn factor(&self, j: usize) -> Option<f64> {
        if self.missing[j] {
            None
        } else {
            Some(self.factors[j])
        }
    }
}

/// What a traced read touched.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessKind {
    Factor,
    FwdReturn,
}

/// Shared log of panel reads, for look-ahead audits.
#[derive(Debug, Default)]
pub struct AccessTrace {
    events: Mutex<Vec<(MonthId, AccessKind)>>,
}

impl AccessTrace {
    pub fn new() -> Arc<Self> {
        Arc::new(Self::default())
    }

    fn log(&self, month: MonthId, kind: AccessKind) {
        self.events.lock().unwrap().push((month, kind));
    }

    pub fn events(&self) -> Vec<(MonthId, AccessKind)> {
        self.events.lock().unwrap().clone()
    }

    pub fn clear(&self) {
        self.events.lock().unwrap().clear();
    }

    /// Latest month touched by reads of the given kind, if any.
    pub fn max_month(&self, kind: AccessKind) -> Option<MonthId> {
        self.events
            .lock()
            .unwrap()
            .iter()
            .filter(|(_, k)| *k == kind)
            .map(|(m, _)| *m)
            .max()
    }
}

/// In-memory factor panel: `month -> stock_id -> record`.
#[derive(Debug, Default, Clone)]
pub struct FactorPanel {
    months: BTreeMap<MonthId, BTreeMap<String, FactorRecord>>,
    trace: Option<Arc<AccessTrace>>,
}

impl FactorPanel {
    pub fn new() -> Self {
        Self::default()
    }

    /// Builds a panel from records; rejects duplicate (month, stock) keys.
    pub fn from_records(records: impl IntoIterator<Item = FactorRecord>) -> Result<Self> {
        let mut panel = Self::new();
        for rec in records {
            panel.insert(rec)?;
        }
        Ok(panel)
    }

    pub fn insert(&mut self, rec: FactorRecord) -> Result<()> {
        let slot = self.months.entry(rec.month).or_default();
        if slot.contains_key(&rec.stock_id) {
            return Err(Error::DuplicateKey {
                month: rec.month,
                stock_id: rec.stock_id,
            });
        }
        slot.insert(rec.stock_id.clone(), rec);
        Ok(())
    }

    pub fn is_empty(&self) -> bool {
        self.months.is_empty()
    }

    pub fn n_records(&self) -> usize {
        self.months.values().map(BTreeMap::len).sum()
    }

    pub fn first_month(&self) -> Option<MonthId> {
        self.months.keys().next().copied()
    }

    pub fn last_month(&self) -> Option<MonthId> {
        self.months.keys().next_back().copied()
    }

    /// All months that have at least one record, ascending.
    pub fn months(&self) -> impl Iterator<Item = MonthId> + '_ {
        self.months.keys().copied()
    }

    fn check_range(&self, month: MonthId) -> Result<(MonthId, MonthId)> {
        let (first, last) = match (self.first_month(), self.last_month()) {
            (Some(f), Some(l)) => (f, l),
            _ => return Err(Error::EmptyPanel),
        };
        if month < first || month > last {
            return Err(Error::MonthOutOfRange { month, first, last });
        }
        Ok((first, last))
    }

    /// Stock ids present at `month`, ascending. Errors if `month` lies
    /// outside the panel's covered range; a gap month inside the range
    /// yields an empty universe.
    pub fn universe_at(&self, month: MonthId) -> Result<Vec<String>> {
        self.check_range(month)?;
        Ok(self
            .months
            .get(&month)
            .map(|m| m.keys().cloned().collect())
            .unwrap_or_default())
    }

    /// Raw record lookup (untraced; pipeline code should prefer the traced
    /// scanners below).
    pub fn record(&self, month: MonthId, stock_id: &str) -> Option<&FactorRecord> {
        self.months.get(&month)?.get(stock_id)
    }

    /// Iterates `(stock_id, record)` at `month`, logging one factor-read
    /// event when tracing is on.
    pub fn scan_factors(
        &self,
        month: MonthId,
    ) -> impl Iterator<Item = (&str, &FactorRecord)> + '_ {
        if let Some(t) = &self.trace {
            t.log(month, AccessKind::Factor);
        }
        self.months
            .get(&month)
            .into_iter()
            .flat_map(|m| m.iter().map(|(id, rec)| (id.as_str(), rec)))
    }

    /// Forward return of one stock, logging a forward-return read.
    pub fn fwd_return(&self, month: MonthId, stock_id: &str) -> Option<f64> {
        if let Some(t) = &self.trace {
            t.log(month, AccessKind::FwdReturn);
        }
        self.months.get(&month)?.get(stock_id)?.fwd_return
    }

    /// Iterates `(stock_id, fwd_return)` over stocks with a known forward
    /// return at `month`, logging one forward-return read event.
    pub fn scan_fwd_returns(&self, month: MonthId) -> impl Iterator<Item = (&str, f64)> + '_ {
        if let Some(t) = &self.trace {
            t.log(month, AccessKind::FwdReturn);
        }
        self.months
            .get(&month)
            .into_iter()
            .flat_map(|m| m.iter().filter_map(|(id, rec)| Some((id.as_str(), rec.fwd_return?))))
    }

    /// Attaches an access log; subsequent traced reads are recorded.
    pub fn set_trace(&mut self, trace: Arc<AccessTrace>) {
        self.trace = Some(trace);
    }

    pub fn clear_trace(&mut self) {
        self.trace = None;
    }
}

/// Loads a panel from the `month,stock_id,f01..f25,fwd_return` CSV format.
///
/// Unparseable or empty factor cells become missing-mask entries rather than
/// dropped rows; an unparseable forward return becomes `None`.
pub fn load_panel(path: impl AsRef<Path>) -> Result<FactorPanel> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    let mut reader = csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(false)
        .from_reader(file);

    let expected = expected_header();
    let found: Vec<String> = match reader.headers() {
        Ok(h) if !h.is_empty() => h.iter().map(str::to_string).collect(),
        _ => Vec::new(),
    };
    if found != expected {
        return Err(Error::MalformedHeader {
            expected: expected.join(","),
            found: found.join(","),
        });
    }

    let mut panel = FactorPanel::new();
    for row in reader.records() {
        let row = row?;
        let line = row.position().map(|p| p.line()).unwrap_or(0);
        let month: MonthId = row
            .get(0)
            .unwrap_or("")
            .parse()
            .map_err(|e| Error::MalformedRecord {
                line,
                reason: format!("{e}"),
            })?;
        let stock_id = row.get(1).unwrap_or("").trim();
        if stock_id.is_empty() {
            return Err(Error::MalformedRecord {
                line,
                reason: "empty stock_id".into(),
            });
        }
        let mut rec = FactorRecord::empty(month, stock_id);
        for j in 0..N_FACTORS {
            let cell = row.get(2 + j).unwrap_or("").trim();
            if let Ok(v) = cell.parse::<f64>() {
                if v.is_finite() {
                    rec.set_factor(j, v);
                }
            }
        }
        let fwd = row.get(2 + N_FACTORS).unwrap_or("").trim();
        rec.fwd_return = fwd.parse::<f64>().ok().filter(|v| v.is_finite());
        panel.insert(rec)?;
    }
    if panel.is_empty() {
        return Err(Error::EmptyPanel);
    }
    Ok(panel)
}

/// Writes a panel in the exact format [`load_panel`] reads. Floats use the
/// shortest round-trip decimal form, so write-then-load reproduces every
/// value bit for bit.
pub fn write_panel(panel: &FactorPanel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    out.push_str(&expected_header().join(","));
    out.push('\n');
    for month in panel.months() {
        for id in panel.universe_at(month)? {
            let rec = panel.record(month, &id).expect("listed stock has a record");
            write!(out, "{month},{id}").unwrap();
            for j in 0..N_FACTORS {
                match rec.factor(j) {
                    Some(v) => write!(out, ",{v}").unwrap(),
                    None => out.push(','),
                }
            }
            match rec.fwd_return {
                Some(v) => writeln!(out, ",{v}").unwrap(),
                None => out.push_str(",\n"),
            }
        }
    }
    std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
}

/// Per-month line of a [`ValidationReport`].
#[derive(Debug, Clone, Serialize)]
pub struct MonthSummary {
    pub month: MonthId,
    pub universe: usize,
    /// Records at this month lacking a forward return.
    pub missing_fwd: usize,
}

/// Outcome of [`validate_panel`]: summary plus human-readable warnings.
/// Warnings never fail the load; callers decide what to do with them.
#[derive(Debug, Clone, Serialize)]
pub struct ValidationReport {
    pub months: Vec<MonthSummary>,
    /// Fraction of records missing each factor, over the whole panel.
    pub factor_missing_rate: [f64; N_FACTORS],
    pub warnings: Vec<String>,
}

impl ValidationReport {
    pub fn is_clean(&self) -> bool {
        self.warnings.is_empty()
    }
}

/// Scans the panel for small universes (below `min_universe`) and forward
/// returns missing before the last month.
pub fn validate_panel(panel: &FactorPanel, min_universe: usize) -> Result<ValidationReport> {
    let last = panel.last_month().ok_or(Error::EmptyPanel)?;
    let mut months = Vec::new();
    let mut warnings = Vec::new();
    let mut missing_counts = [0usize; N_FACTORS];
    let mut n_records = 0usize;

    for month in panel.months().collect::<Vec<_>>() {
        let universe = panel.universe_at(month)?;
        let mut missing_fwd = 0;
        for id in &universe {
            let rec = panel.record(month, id).expect("listed stock has a record");
            n_records += 1;
            for j in 0..N_FACTORS {
                if rec.missing[j] {
                    missing_counts[j] += 1;
                }
            }
            if rec.fwd_return.is_none() {
                missing_fwd += 1;
            }
        }
        if universe.len() < min_universe {
            warnings.push(format!(
                "month {month}: universe {} below floor {min_universe}",
                universe.len()
            ));
        }
        if month < last && missing_fwd > 0 {
            warnings.push(format!(
                "month {month}: {missing_fwd} record(s) missing fwd_return before the last month"
            ));
        }
        months.push(MonthSummary {
            month,
            universe: universe.len(),
            missing_fwd,
        });
    }

    let mut factor_missing_rate = [0.0; N_FACTORS];
    for j in 0..N_FACTORS {
        factor_missing_rate[j] = missing_counts[j] as f64 / n_records as f64;
    }
    Ok(ValidationReport {
        months,
        factor_missing_rate,
        warnings,
    })
}
