//! Python bindings over the forecasting core: factor panels, fitted
//! models, and complete walk-forward experiments.
//!
//! The module keeps a thin JSON-based surface: model specs, run configs
//! and reports cross the boundary as JSON strings with the same schemas
//! the `xsect` CLI uses, so Python callers and shell pipelines stay
//! interchangeable.

use ndarray::{Array1, Array2};
use pyo3::exceptions::PyValueError;
use pyo3::prelude::*;
use serde::{Deserialize, Serialize};

use xsect_core::model::{self, FittedModel, ModelSpec};
use xsect_core::panel::{self, FactorPanel};
use xsect_core::pipeline::WalkForwardConfig;
use xsect_core::preprocess::{self, N_FEATURES};
use xsect_core::report;
use xsect_core::synth::{self, SynthConfig};
use xsect_core::MonthId;

fn py_err(e: impl std::fmt::Display) -> PyErr {
    PyValueError::new_err(e.to_string())
}

fn parse_month(s: &str) -> PyResult<MonthId> {
    s.parse().map_err(py_err)
}

/// Converts a Python row-major list of rows into the K x 125 matrix the
/// core expects, checking rectangularity.
fn to_matrix(rows: Vec<Vec<f64>>) -> PyResult<Array2<f64>> {
    let n_rows = rows.len();
    let n_cols = rows.first().map_or(N_FEATURES, Vec::len);
    let mut flat = Vec::with_capacity(n_rows * n_cols);
    for (i, row) in rows.into_iter().enumerate() {
        if row.len() != n_cols {
            return Err(PyValueError::new_err(format!(
                "row {i} has {} values, expected {n_cols}",
                row.len()
            )));
        }
        flat.extend(row);
    }
    Array2::from_shape_vec((n_rows, n_cols), flat).map_err(py_err)
}

/// A monthly factor panel: per stock, 25 factor exposures and the
/// following month's return.
#[pyclass(frozen)]
struct Panel {
    inner: FactorPanel,
}

#[pymethods]
impl Panel {
    /// Loads a `month,stock_id,f01..f25,fwd_return` CSV.
    #[staticmethod]
    fn load(path: &str) -> PyResult<Self> {
        Ok(Self {
            inner: panel::load_panel(path).map_err(py_err)?,
        })
    }

    /// Generates a synthetic panel. `config_json` keys mirror the CLI's
    /// synth config; omitted keys take their defaults.
    #[staticmethod]
    #[pyo3(signature = (config_json=None, seed=None))]
    fn synth(config_json: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut config: SynthConfig = match config_json {
            Some(text) => serde_json::from_str(text).map_err(py_err)?,
            None => SynthConfig::default(),
        };
        if let Some(s) = seed {
            config.seed = s;
        }
        Ok(Self {
            inner: synth::generate_panel(&config).map_err(py_err)?,
        })
    }

    fn save(&self, path: &str) -> PyResult<()> {
        panel::write_panel(&self.inner, path).map_err(py_err)
    }

    /// All panel months in order, as `YYYY-MM` strings.
    fn months(&self) -> Vec<String> {
        self.inner.months().map(|m| m.to_string()).collect()
    }

    /// Stock ids present in `month`, ascending.
    fn universe(&self, month: &str) -> PyResult<Vec<String>> {
        self.inner.universe_at(parse_month(month)?).map_err(py_err)
    }

    /// Forward return of `stock` at `month`, or None if unknown.
    fn fwd_return(&self, month: &str, stock: &str) -> PyResult<Option<f64>> {
        Ok(self.inner.fwd_return(parse_month(month)?, stock))
    }

    /// Validation warnings; empty means the panel is clean.
    #[pyo3(signature = (min_universe=panel::DEFAULT_MIN_UNIVERSE))]
    fn validate(&self, min_universe: usize) -> PyResult<Vec<String>> {
        Ok(panel::validate_panel(&self.inner, min_universe)
            .map_err(py_err)?
            .warnings)
    }

    fn __len__(&self) -> usize {
        self.inner.n_records()
    }

    fn __repr__(&self) -> String {
        let months: Vec<MonthId> = self.inner.months().collect();
        match (months.first(), months.last()) {
            (Some(a), Some(b)) => format!(
                "Panel({} records, {}..{})",
                self.inner.n_records(),
                a,
                b
            ),
            _ => "Panel(empty)".into(),
        }
    }
}

/// A fitted forecasting model (network, forest, epsilon-SVR, or an
/// ensemble of those), with JSON persistence.
#[pyclass]
struct Model {
    inner: FittedModel,
    label: String,
}

#[pymethods]
impl Model {
    /// Fits `spec_json` (same schema as the CLI's strategy entries) on a
    /// K x d feature matrix and K targets.
    #[staticmethod]
    fn fit(
        spec_json: &str,
        features: Vec<Vec<f64>>,
        targets: Vec<f64>,
        seed: u64,
    ) -> PyResult<Self> {
        let spec: ModelSpec = serde_json::from_str(spec_json).map_err(py_err)?;
        spec.validate().map_err(py_err)?;
        let x = to_matrix(features)?;
        let k = x.nrows();
        if targets.len() != k {
            return Err(PyValueError::new_err(format!(
                "{} targets for {k} feature rows",
                targets.len()
            )));
        }
        let origin = MonthId::new(2000, 1).map_err(py_err)?;
        let data = preprocess::TrainingSet {
            features: x,
            targets: Array1::from_vec(targets),
            month_ranges: vec![(origin, 0..k)],
            row_meta: (0..k).map(|i| (origin, format!("R{i:06}"))).collect(),
            empty_months: Vec::new(),
        };
        Ok(Self {
            inner: model::fit(&spec, &data, seed).map_err(py_err)?,
            label: spec.label(),
        })
    }

    fn predict(&self, features: Vec<Vec<f64>>) -> PyResult<Vec<f64>> {
        let x = to_matrix(features)?;
        Ok(model::predict(&self.inner, x.view())
            .map_err(py_err)?
            .to_vec())
    }

    fn to_json(&self) -> PyResult<String> {
        model::to_json(&self.inner).map_err(py_err)
    }

    #[staticmethod]
    #[pyo3(signature = (json, label="restored"))]
    fn from_json(json: &str, label: &str) -> PyResult<Self> {
        Ok(Self {
            inner: model::from_json(json).map_err(py_err)?,
            label: label.to_string(),
        })
    }

    #[getter]
    fn label(&self) -> &str {
        &self.label
    }

    fn __repr__(&self) -> String {
        format!("Model({})", self.label)
    }
}

/// Ranks `values` ascending into (0, 1], ties sharing their average rank;
/// returns the scaled values in input order. Non-finite entries are
/// rejected rather than skipped so positions stay aligned.
#[pyfunction]
fn rank_scale(values: Vec<f64>) -> PyResult<Vec<f64>> {
    if let Some(bad) = values.iter().position(|v| !v.is_finite()) {
        return Err(PyValueError::new_err(format!(
            "non-finite value at position {bad}"
        )));
    }
    let keyed = values
        .iter()
        .enumerate()
        .map(|(i, &v)| (format!("{i:09}"), v));
    let scaled = preprocess::rank_scale(keyed, "rank_scale input").map_err(py_err)?;
    Ok((0..values.len())
        .map(|i| scaled[&format!("{i:09}")])
        .collect())
}

/// Training examples for predicting `month`: feature rows, rank-scaled
/// targets, and each row's `(anchor_month, stock_id)` identity.
#[pyfunction]
fn training_set(
    panel: &Panel,
    month: &str,
    train_window: usize,
) -> PyResult<(Vec<Vec<f64>>, Vec<f64>, Vec<(String, String)>)> {
    let data = preprocess::assemble_training_set(&panel.inner, parse_month(month)?, train_window)
        .map_err(py_err)?;
    let features = data
        .features
        .rows()
        .into_iter()
        .map(|r| r.to_vec())
        .collect();
    let meta = data
        .row_meta
        .iter()
        .map(|(m, id)| (m.to_string(), id.clone()))
        .collect();
    Ok((features, data.targets.to_vec(), meta))
}

/// The walk-forward + strategies slice of the CLI run config.
#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ExperimentConfig {
    walk_forward: WalkForwardConfig,
    strategies: Vec<ModelSpec>,
}

/// Runs strategies through the walk-forward loop and returns the report
/// as a JSON string (same schema as the CLI's `report.json`).
#[pyfunction]
fn run_experiment(panel: &Panel, config_json: &str) -> PyResult<String> {
    let config: ExperimentConfig = serde_json::from_str(config_json).map_err(py_err)?;
    config.walk_forward.validate().map_err(py_err)?;
    for spec in &config.strategies {
        spec.validate().map_err(py_err)?;
    }
    let outcomes =
        xsect_core::pipeline::run_experiment(&panel.inner, &config.strategies, &config.walk_forward);
    let backtest = report::build_report(&config.walk_forward, &outcomes).map_err(py_err)?;
    report::report_json(&backtest).map_err(py_err)
}

#[pymodule]
fn xsect_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Panel>()?;
    m.add_class::<Model>()?;
    m.add_function(wrap_pyfunction!(rank_scale, m)?)?;
    m.add_function(wrap_pyfunction!(training_set, m)?)?;
    m.add_function(wrap_pyfunction!(run_experiment, m)?)?;
    m.add("N_FEATURES", N_FEATURES)?;
    m.add("REPORT_SCHEMA_VERSION", report::SCHEMA_VERSION)?;
    m.add("MODEL_SCHEMA_VERSION", model::SCHEMA_VERSION)?;
    Ok(())
}
