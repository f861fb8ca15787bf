//! Epsilon-insensitive support vector regression with an RBF kernel,
//! solved from scratch by sequential minimal optimization.
//!
//! The dual is kept in its 2K box form (`alpha+` and `alpha-` per
//! example, both in `[0, C]`, signed sums balanced). Each iteration picks
//! the maximal violating pair, takes the exact one-dimensional Newton step
//! clipped to the box, and updates the fitted values incrementally from
//! two cached kernel rows. Selection breaks ties toward the lowest index,
//! so a fit is a pure function of its inputs — no randomness anywhere.

use std::collections::{HashMap, VecDeque};

use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::Result;

/// Stopping threshold on the KKT violation (`m - M`).
pub const DEFAULT_TOL: f64 = 1e-3;
pub const DEFAULT_MAX_ITER: u64 = 1_000_000;
pub const DEFAULT_CACHE_ROWS: usize = 512;

/// SVR hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SvrHyper {
    pub c: f64,
    pub gamma: f64,
    pub epsilon: f64,
}

impl SvrHyper {
    pub fn new(c: f64, gamma: f64, epsilon: f64) -> Self {
        Self { c, gamma, epsilon }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0) || !(self.gamma > 0.0) || !(self.epsilon >= 0.0) {
            return Err(Error::InvalidHyper(format!(
                "svr needs C > 0, gamma > 0, epsilon >= 0 ({self:?})"
            )));
        }
        Ok(())
    }

    /// Short stable label, used in reports and file names.
    pub fn label(&self) -> String {
        format!("SVR_C{}_g{}_e{}", self.c, self.gamma, self.epsilon)
    }
}

/// The 24-point C / gamma / epsilon search grid.
pub fn grid_presets() -> Vec<SvrHyper> {
    let mut grid = Vec::with_capacity(24);
    for &c in &[0.1, 1.0, 10.0] {
        for &gamma in &[1e-4, 1e-3, 1e-2, 1e-1] {
            for &epsilon in &[0.01, 0.1] {
                grid.push(SvrHyper::new(c, gamma, epsilon));
            }
        }
    }
    grid
}

/// Solver controls, separate from the model hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SvrFitOptions {
    pub tol: f64,
    pub max_iter: u64,
    /// Kernel rows kept in the LRU cache.
    pub cache_rows: usize,
}

impl Default for SvrFitOptions {
    fn default() -> Self {
        Self {
            tol: DEFAULT_TOL,
            max_iter: DEFAULT_MAX_ITER,
            cache_rows: DEFAULT_CACHE_ROWS,
        }
    }
}

/// RBF kernel rows over the training set, computed on demand and kept in
/// an LRU cache. The cache only avoids recomputation; hits and misses
/// produce identical values.
struct KernelCache {
    x: Array2<f64>,
    sq_norms: Vec<f64>,
    gamma: f64,
    rows: HashMap<usize, Vec<f64>>,
    order: VecDeque<usize>,
    capacity: usize,
}

impl KernelCache {
    fn new(x: Array2<f64>, gamma: f64, capacity: usize) -> Self {
        let sq_norms = x
            .axis_iter(Axis(0))
            .map(|r| r.iter().map(|v| v * v).sum())
            .collect();
        Self {
            x,
            sq_norms,
            gamma,
            rows: HashMap::new(),
            order: VecDeque::new(),
            capacity: capacity.max(2),
        }
    }

    fn compute_row(&self, i: usize) -> Vec<f64> {
        let dots = self.x.dot(&self.x.row(i));
        let ni = self.sq_norms[i];
        dots.iter()
            .zip(&self.sq_norms)
            .map(|(&d, &nj)| (-self.gamma * (ni + nj - 2.0 * d).max(0.0)).exp())
            .collect()
    }

    fn row(&mut self, i: usize) -> &[f64] {
        if !self.rows.contains_key(&i) {
            if self.rows.len() >= self.capacity {
                if let Some(evict) = self.order.pop_front() {
                    self.rows.remove(&evict);
                }
            }
            let row = self.compute_row(i);
            self.rows.insert(i, row);
            self.order.push_back(i);
        } else {
            // Refresh recency.
            if let Some(pos) = self.order.iter().position(|&k| k == i) {
                self.order.remove(pos);
                self.order.push_back(i);
            }
        }
        &self.rows[&i]
    }
}

/// A fitted model. `beta[i]` is `alpha+_i - alpha-_i`; prediction is
/// `sum_i beta_i * K(x_i, q) + bias`.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SvrModel {
    pub hyper: SvrHyper,
    pub x: Array2<f64>,
    pub beta: Vec<f64>,
    pub bias: f64,
    /// False when the iteration cap fired first; the model is still the
    /// best iterate found.
    pub converged: bool,
    pub iterations: u64,
    /// KKT violation `m - M` at the final iterate.
    pub final_violation: f64,
}

impl SvrModel {
    /// Number of examples with nonzero coefficient.
    pub fn n_support(&self) -> usize {
        self.beta.iter().filter(|b| **b != 0.0).count()
    }
}

/// Working state of the SMO loop over the 2K variables.
struct Smo<'a> {
    y: ArrayView1<'a, f64>,
    hyper: SvrHyper,
    /// `alpha+` then `alpha-`, each length K.
    a: Vec<f64>,
    /// Fitted values `f_i = sum_j beta_j K_ij`, maintained incrementally.
    f: Vec<f64>,
}

/// One side's pairing of variable index and example index.
#[derive(Clone, Copy)]
struct Pick {
    var: usize,
    example: usize,
    g: f64,
}

impl Smo<'_> {
    fn k(&self) -> usize {
        self.y.len()
    }

    /// Scans for the maximal violating pair. Returns the up/down picks and
    /// the current violation `m - M`; lowest variable index wins ties.
    fn select(&self) -> (Option<Pick>, Option<Pick>, f64) {
        let (k, c, eps) = (self.k(), self.hyper.c, self.hyper.epsilon);
        let mut up: Option<Pick> = None;
        let mut low: Option<Pick> = None;
        for i in 0..k {
            let base = self.y[i] - self.f[i];
            let g_plus = base - eps;
            let g_minus = base + eps;
            let a_plus = self.a[i];
            let a_minus = self.a[k + i];
            // alpha+ (z = +1): movable up while below C, down while above 0.
            if a_plus < c && up.map_or(true, |p| g_plus > p.g) {
                up = Some(Pick { var: i, example: i, g: g_plus });
            }
            if a_plus > 0.0 && low.map_or(true, |p| g_plus < p.g) {
                low = Some(Pick { var: i, example: i, g: g_plus });
            }
            // alpha- (z = -1): the feasible directions swap.
            if a_minus > 0.0 && up.map_or(true, |p| g_minus > p.g) {
                up = Some(Pick { var: k + i, example: i, g: g_minus });
            }
            if a_minus < c && low.map_or(true, |p| g_minus < p.g) {
                low = Some(Pick { var: k + i, example: i, g: g_minus });
            }
        }
        let violation = match (up, low) {
            (Some(u), Some(l)) => u.g - l.g,
            _ => f64::NEG_INFINITY,
        };
        (up, low, violation)
    }

    fn z(&self, var: usize) -> f64 {
        if var < self.k() {
            1.0
        } else {
            -1.0
        }
    }

    /// Largest feasible step for the chosen pair.
    fn max_step(&self, u: Pick, v: Pick) -> f64 {
        let c = self.hyper.c;
        let room_u = if self.z(u.var) > 0.0 {
            c - self.a[u.var]
        } else {
            self.a[u.var]
        };
        let room_v = if self.z(v.var) > 0.0 {
            self.a[v.var]
        } else {
            c - self.a[v.var]
        };
        room_u.min(room_v)
    }

    /// Applies step `t` along the pair direction, clamping exact box hits.
    fn apply(&mut self, u: Pick, v: Pick, t: f64) {
        let c = self.hyper.c;
        let (zu, zv) = (self.z(u.var), self.z(v.var));
        self.a[u.var] = (self.a[u.var] + zu * t).clamp(0.0, c);
        self.a[v.var] = (self.a[v.var] - zv * t).clamp(0.0, c);
    }

    /// Average of the KKT bias over free variables, else the midpoint of
    /// the final violation interval.
    fn bias(&self) -> f64 {
        let (k, c, eps) = (self.k(), self.hyper.c, self.hyper.epsilon);
        let mut sum = 0.0;
        let mut n = 0usize;
        for i in 0..k {
            let base = self.y[i] - self.f[i];
            if self.a[i] > 0.0 && self.a[i] < c {
                sum += base - eps;
                n += 1;
            }
            if self.a[k + i] > 0.0 && self.a[k + i] < c {
                sum += base + eps;
                n += 1;
            }
        }
        if n > 0 {
            return sum / n as f64;
        }
        let (up, low, _) = self.select();
        match (up, low) {
            (Some(u), Some(l)) => 0.5 * (u.g + l.g),
            _ => 0.0,
        }
    }
}

/// Fits an SVR by SMO. Deterministic; returns a partial (flagged) model if
/// the iteration cap fires before the violation drops under `opts.tol`.
pub fn fit(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    hyper: &SvrHyper,
    opts: &SvrFitOptions,
) -> Result<SvrModel> {
    hyper.validate()?;
    if x.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            context: "svr fit".into(),
            left: x.nrows(),
            right: y.len(),
        });
    }
    let mut cache = KernelCache::new(x.to_owned(), hyper.gamma, opts.cache_rows);
    let mut smo = Smo {
        y,
        hyper: *hyper,
        a: vec![0.0; 2 * x.nrows()],
        f: vec![0.0; x.nrows()],
    };

    let mut iterations = 0u64;
    let (converged, final_violation) = loop {
        let (up, low, violation) = smo.select();
        if violation <= opts.tol {
            break (true, violation);
        }
        if iterations >= opts.max_iter {
            break (false, violation);
        }
        let (u, v) = (up.expect("violating pair"), low.expect("violating pair"));

        let k_uv = cache.row(u.example)[v.example];
        let eta = 2.0 - 2.0 * k_uv;
        let t_max = smo.max_step(u, v);
        let t = if eta > 1e-12 {
            ((u.g - v.g) / eta).min(t_max)
        } else {
            t_max
        };
        smo.apply(u, v, t);

        if u.example != v.example {
            let row_u = cache.row(u.example).to_vec();
            let row_v = cache.row(v.example);
            for j in 0..smo.f.len() {
                smo.f[j] += t * (row_u[j] - row_v[j]);
            }
        }
        iterations += 1;
    };

    let k = x.nrows();
    let bias = smo.bias();
    let beta = (0..k).map(|i| smo.a[i] - smo.a[k + i]).collect();
    Ok(SvrModel {
        hyper: *hyper,
        x: cache.x,
        beta,
        bias,
        converged,
        iterations,
        final_violation,
    })
}

/// Predictions for a query matrix, summing support contributions in
/// training order.
pub fn predict(model: &SvrModel, q: ArrayView2<f64>) -> Result<Array1<f64>> {
    if q.ncols() != model.x.ncols() {
        return Err(Error::DimensionMismatch {
            context: "svr predict".into(),
            expected: model.x.ncols(),
            found: q.ncols(),
        });
    }
    let train_norms: Vec<f64> = model
        .x
        .axis_iter(Axis(0))
        .map(|r| r.iter().map(|v| v * v).sum())
        .collect();
    // One GEMM gives every query/train inner product.
    let dots = q.dot(&model.x.t());
    let gamma = model.hyper.gamma;
    Ok(Array1::from_shape_fn(q.nrows(), |qi| {
        let nq: f64 = q.row(qi).iter().map(|v| v * v).sum();
        let mut acc = 0.0;
        for (i, &b) in model.beta.iter().enumerate() {
            if b != 0.0 {
                let d2 = (nq + train_norms[i] - 2.0 * dots[(qi, i)]).max(0.0);
                acc += b * (-gamma * d2).exp();
            }
        }
        acc + model.bias
    }))
}
