//! Random forest regression built from scratch.
//!
//! Trees are grown CART-style on bootstrap resamples: at every node a
//! fresh subset of `max_features` feature indices is drawn without
//! replacement, each candidate feature is scanned over the midpoints
//! between consecutive distinct values, and the split with the largest
//! squared-error reduction wins. Ties go to the lowest feature index, then
//! the lowest threshold, which pins the grown tree down bit-for-bit given
//! the seed. Forest predictions average the trees in index order.

use ndarray::{Array1, ArrayView1, ArrayView2};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::seed::{self, stream};
use crate::Result;

pub const DEFAULT_N_TREES: usize = 1000;

/// Forest hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ForestHyper {
    pub n_trees: usize,
    pub max_depth: usize,
    /// Features drawn (without replacement) at each node.
    pub max_features: usize,
}

impl ForestHyper {
    pub fn new(n_trees: usize, max_depth: usize, max_features: usize) -> Self {
        Self {
            n_trees,
            max_depth,
            max_features,
        }
    }

    pub fn validate(&self, n_features: usize) -> Result<()> {
        if self.n_trees == 0 || self.max_depth == 0 {
            return Err(Error::InvalidHyper(format!(
                "forest needs at least one tree and depth ({self:?})"
            )));
        }
        if self.max_features == 0 || self.max_features > n_features {
            return Err(Error::InvalidHyper(format!(
                "max_features {} outside 1..={n_features}",
                self.max_features
            )));
        }
        Ok(())
    }

    /// Short stable label, used in reports and file names.
    pub fn label(&self) -> String {
        format!("RF_d{}_f{}", self.max_depth, self.max_features)
    }
}

/// The 37-point depth / feature-count search grid. Shallow depths pair
/// with small subsets; the deeper half widens the feature range.
pub fn grid_presets() -> Vec<ForestHyper> {
    let mut grid = Vec::with_capacity(37);
    for &depth in &[5, 10, 15, 20] {
        for &feats in &[3, 5, 7, 9] {
            grid.push(ForestHyper::new(DEFAULT_N_TREES, depth, feats));
        }
    }
    for &depth in &[25, 30, 35] {
        for &feats in &[3, 5, 7, 9, 11, 15, 20] {
            grid.push(ForestHyper::new(DEFAULT_N_TREES, depth, feats));
        }
    }
    grid
}

/// One node of a fitted tree. Rows with `x[feature] <= threshold` go left.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub enum Node {
    Leaf {
        value: f64,
    },
    Split {
        feature: usize,
        threshold: f64,
        left: usize,
        right: usize,
    },
}

/// A fitted regression tree stored as a flat node arena rooted at 0.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TreeModel {
    pub nodes: Vec<Node>,
}

impl TreeModel {
    pub fn predict_row(&self, row: ArrayView1<f64>) -> f64 {
        let mut at = 0;
        loop {
            match &self.nodes[at] {
                Node::Leaf { value } => return *value,
                Node::Split {
                    feature,
                    threshold,
                    left,
                    right,
                } => {
                    at = if row[*feature] <= *threshold {
                        *left
                    } else {
                        *right
                    };
                }
            }
        }
    }

    pub fn n_leaves(&self) -> usize {
        self.nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .count()
    }
}

/// Best split of one feature over the given rows, by squared-error
/// reduction. Scans midpoints between consecutive distinct sorted values
/// with prefix sums; the lowest threshold wins ties. `None` when the
/// feature is constant on these rows.
fn scan_feature(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    rows: &[usize],
    feature: usize,
    scratch: &mut Vec<(f64, f64)>,
) -> Option<(f64, f64)> {
    scratch.clear();
    scratch.extend(rows.iter().map(|&r| (x[(r, feature)], y[r])));
    scratch.sort_unstable_by(|a, b| a.0.total_cmp(&b.0));
    let n = scratch.len();
    let (total_s1, total_s2) = scratch
        .iter()
        .fold((0.0, 0.0), |(s1, s2), &(_, v)| (s1 + v, s2 + v * v));

    let mut best: Option<(f64, f64)> = None;
    let (mut s1, mut s2) = (0.0, 0.0);
    for i in 1..n {
        let (xv, yv) = scratch[i - 1];
        s1 += yv;
        s2 += yv * yv;
        if xv == scratch[i].0 {
            continue;
        }
        let nl = i as f64;
        let nr = (n - i) as f64;
        let child = (s2 - s1 * s1 / nl) + ((total_s2 - s2) - (total_s1 - s1).powi(2) / nr);
        match best {
            Some((_, b)) if child >= b => {}
            _ => best = Some(((xv + scratch[i].0) / 2.0, child)),
        }
    }
    best
}

struct NodeBuilder<'a> {
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    hyper: ForestHyper,
    nodes: Vec<Node>,
    feature_pool: Vec<usize>,
    scratch: Vec<(f64, f64)>,
}

impl NodeBuilder<'_> {
    /// Draws `max_features` distinct indices by partial Fisher-Yates, then
    /// sorts them so candidates are always examined lowest index first.
    fn draw_features(&mut self, rng: &mut ChaCha8Rng) -> Vec<usize> {
        let pool = &mut self.feature_pool;
        for i in 0..self.hyper.max_features {
            let j = rng.gen_range(i..pool.len());
            pool.swap(i, j);
        }
        let mut picked = pool[..self.hyper.max_features].to_vec();
        picked.sort_unstable();
        picked
    }

    fn leaf(&mut self, rows: &[usize]) -> usize {
        let mean = rows.iter().map(|&r| self.y[r]).sum::<f64>() / rows.len() as f64;
        self.nodes.push(Node::Leaf { value: mean });
        self.nodes.len() - 1
    }

    fn grow(&mut self, rows: &mut Vec<usize>, depth: usize, rng: &mut ChaCha8Rng) -> usize {
        let pure = rows.windows(2).all(|w| self.y[w[0]] == self.y[w[1]]);
        if depth >= self.hyper.max_depth || rows.len() < 2 || pure {
            return self.leaf(rows);
        }

        let mut best: Option<(usize, f64, f64)> = None;
        for feature in self.draw_features(rng) {
            let mut scratch = std::mem::take(&mut self.scratch);
            let found = scan_feature(self.x, self.y, rows, feature, &mut scratch);
            self.scratch = scratch;
            if let Some((threshold, child_sse)) = found {
                match best {
                    Some((_, _, b)) if child_sse >= b => {}
                    _ => best = Some((feature, threshold, child_sse)),
                }
            }
        }
        let Some((feature, threshold, _)) = best else {
            // Every candidate feature is constant here.
            return self.leaf(rows);
        };

        let (mut left_rows, mut right_rows): (Vec<usize>, Vec<usize>) = rows
            .iter()
            .partition(|&&r| self.x[(r, feature)] <= threshold);
        let at = self.nodes.len();
        self.nodes.push(Node::Leaf { value: f64::NAN }); // patched below
        let left = self.grow(&mut left_rows, depth + 1, rng);
        let right = self.grow(&mut right_rows, depth + 1, rng);
        self.nodes[at] = Node::Split {
            feature,
            threshold,
            left,
            right,
        };
        at
    }
}

/// Grows one tree on the given rows (no bootstrap here; the forest handles
/// resampling). Node-level feature draws come from `rng` in preorder,
/// left child first.
pub fn fit_tree<'a>(
    x: ArrayView2<'a, f64>,
    y: ArrayView1<'a, f64>,
    hyper: &ForestHyper,
    rng: &mut ChaCha8Rng,
) -> Result<TreeModel> {
    hyper.validate(x.ncols())?;
    if x.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            context: "fit_tree".into(),
            left: x.nrows(),
            right: y.len(),
        });
    }
    let mut builder = NodeBuilder {
        x,
        y,
        hyper: *hyper,
        nodes: Vec::new(),
        feature_pool: (0..x.ncols()).collect(),
        scratch: Vec::new(),
    };
    let mut rows: Vec<usize> = (0..x.nrows()).collect();
    let root = builder.grow(&mut rows, 0, rng);
    debug_assert_eq!(root, 0);
    Ok(TreeModel {
        nodes: builder.nodes,
    })
}

/// Draws a same-size bootstrap sample of row indices, in draw order.
pub fn bootstrap_rows(n: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    (0..n).map(|_| rng.gen_range(0..n)).collect()
}

/// A fitted forest.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ForestModel {
    pub hyper: ForestHyper,
    pub n_features: usize,
    pub trees: Vec<TreeModel>,
}

/// Fits `hyper.n_trees` trees on bootstrap resamples. Each tree gets its
/// own counter-derived rng, so the result does not depend on thread
/// scheduling.
pub fn fit_forest(
    x: ArrayView2<f64>,
    y: ArrayView1<f64>,
    hyper: &ForestHyper,
    fit_seed: u64,
) -> Result<ForestModel> {
    hyper.validate(x.ncols())?;
    if x.nrows() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    if x.nrows() != y.len() {
        return Err(Error::LengthMismatch {
            context: "fit_forest".into(),
            left: x.nrows(),
            right: y.len(),
        });
    }
    let trees: Result<Vec<TreeModel>> = (0..hyper.n_trees)
        .into_par_iter()
        .map(|tree_idx| {
            let mut rng = seed::rng(seed::derive2(fit_seed, stream::BOOTSTRAP, tree_idx as u64));
            let rows = bootstrap_rows(x.nrows(), &mut rng);
            let bx = x.select(ndarray::Axis(0), &rows);
            let by = Array1::from_iter(rows.iter().map(|&r| y[r]));
            fit_tree(bx.view(), by.view(), hyper, &mut rng)
        })
        .collect();
    Ok(ForestModel {
        hyper: *hyper,
        n_features: x.ncols(),
        trees: trees?,
    })
}

/// Mean prediction over trees, accumulated in tree index order.
pub fn predict(model: &ForestModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    if x.ncols() != model.n_features {
        return Err(Error::DimensionMismatch {
            context: "forest predict".into(),
            expected: model.n_features,
            found: x.ncols(),
        });
    }
    let n_trees = model.trees.len() as f64;
    Ok(Array1::from_shape_fn(x.nrows(), |i| {
        let row = x.row(i);
        model
            .trees
            .iter()
            .map(|t| t.predict_row(row))
            .sum::<f64>()
            / n_trees
    }))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::oracle;
    use crate::preprocess::N_FEATURES;
    use ndarray::Array2;

    /// All 125 features at every node, so splits are deterministic given
    /// the data alone.
    fn exhaustive_hyper(n_features: usize, max_depth: usize) -> ForestHyper {
        ForestHyper::new(1, max_depth, n_features)
    }

    #[test]
    fn grid_has_37_unique_presets() {
        let grid = grid_presets();
        assert_eq!(grid.len(), 37);
        let mut keys: Vec<(usize, usize)> =
            grid.iter().map(|h| (h.max_depth, h.max_features)).collect();
        keys.sort_unstable();
        keys.dedup();
        assert_eq!(keys.len(), 37);
        for h in &grid {
            assert_eq!(h.n_trees, DEFAULT_N_TREES);
            h.validate(N_FEATURES).unwrap();
        }
        assert_eq!(
            ForestHyper::new(10, 25, 7).label(),
            "RF_d25_f7".to_string()
        );
    }

    #[test]
    fn split_scan_matches_exhaustive_oracle() {
        let mut rng = seed::rng(71);
        let mut scratch = Vec::new();
        for trial in 0..60 {
            let n = rng.gen_range(2..40);
            // Coarse integer grids force duplicate x values and ties.
            let data: Vec<(f64, f64)> = (0..n)
                .map(|_| {
                    (
                        rng.gen_range(0..8) as f64,
                        rng.gen_range(-4..5) as f64,
                    )
                })
                .collect();
            let x = Array2::from_shape_fn((n, 1), |(i, _)| data[i].0);
            let y = Array1::from_iter(data.iter().map(|d| d.1));
            let rows: Vec<usize> = (0..n).collect();
            let mine = scan_feature(x.view(), y.view(), &rows, 0, &mut scratch);
            let oracle = oracle::best_split_exhaustive(&data);
            match (mine, oracle) {
                (None, None) => {}
                (Some((mt, ms)), Some((ot, os))) => {
                    assert!(
                        (ms - os).abs() <= 1e-9 * os.abs().max(1.0),
                        "trial {trial}: sse {ms} vs {os}"
                    );
                    // Same quality implies the same threshold under the
                    // shared lowest-threshold tie rule, up to fp noise in
                    // near-tied alternatives.
                    if (ms - os).abs() == 0.0 {
                        assert_eq!(mt, ot, "trial {trial}");
                    }
                }
                other => panic!("trial {trial}: disagreement {other:?}"),
            }
        }
    }

    #[test]
    fn split_ties_prefer_lowest_threshold_and_feature() {
        // Reductions at 1.5 and 3.5 are exactly equal; 2.5 is worse.
        let x = Array2::from_shape_vec((4, 1), vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        let y = Array1::from_vec(vec![0.0, 1.0, 1.0, 0.0]);
        let rows = vec![0, 1, 2, 3];
        let mut scratch = Vec::new();
        let (thr, _) = scan_feature(x.view(), y.view(), &rows, 0, &mut scratch).unwrap();
        assert_eq!(thr, 1.5);

        // Two identical columns: the split must cite feature 0.
        let x2 = Array2::from_shape_fn((4, 2), |(i, _)| [3.0, 1.0, 4.0, 2.0][i]);
        let y2 = Array1::from_vec(vec![1.0, 0.0, 1.0, 0.0]);
        let mut rng = seed::rng(1);
        let tree = fit_tree(
            x2.view(),
            y2.view(),
            &exhaustive_hyper(2, 1),
            &mut rng,
        )
        .unwrap();
        match &tree.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 0);
                assert_eq!(*threshold, 2.5);
            }
            n => panic!("expected a split, got {n:?}"),
        }
    }

    #[test]
    fn stump_recovers_planted_step_and_deep_tree_fits_exactly() {
        let n = 40;
        let mut rng = seed::rng(5);
        let x = Array2::from_shape_fn((n, 3), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |i| if x[(i, 1)] <= 0.25 { -1.0 } else { 2.0 });

        let stump = fit_tree(x.view(), y.view(), &exhaustive_hyper(3, 1), &mut rng).unwrap();
        match &stump.nodes[0] {
            Node::Split { feature, threshold, .. } => {
                assert_eq!(*feature, 1);
                assert!((*threshold - 0.25).abs() < 0.2, "threshold {threshold}");
            }
            n => panic!("expected split, got {n:?}"),
        }

        // Unbounded depth with distinct values per row memorizes training.
        let deep = fit_tree(x.view(), y.view(), &exhaustive_hyper(3, 64), &mut rng).unwrap();
        for i in 0..n {
            assert_eq!(deep.predict_row(x.row(i)), y[i]);
        }
        assert_eq!(deep.n_leaves(), 2, "pure sides should collapse to leaves");
    }

    #[test]
    fn constant_features_make_a_leaf() {
        let x = Array2::from_elem((6, 2), 3.0);
        let y = Array1::from_vec(vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let mut rng = seed::rng(2);
        let tree = fit_tree(x.view(), y.view(), &exhaustive_hyper(2, 8), &mut rng).unwrap();
        assert_eq!(tree.nodes.len(), 1);
        match &tree.nodes[0] {
            Node::Leaf { value } => assert!((value - 3.5).abs() < 1e-12),
            n => panic!("expected leaf, got {n:?}"),
        }
    }

    #[test]
    fn forest_is_seed_deterministic_and_averages_trees() {
        let n = 60;
        let mut rng = seed::rng(9);
        let x = Array2::from_shape_fn((n, 5), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(n, |i| x[(i, 0)] + 0.3 * x[(i, 2)]);
        let hyper = ForestHyper::new(7, 4, 2);

        let a = fit_forest(x.view(), y.view(), &hyper, 31).unwrap();
        let b = fit_forest(x.view(), y.view(), &hyper, 31).unwrap();
        let c = fit_forest(x.view(), y.view(), &hyper, 32).unwrap();
        let (pa, pb, pc) = (
            predict(&a, x.view()).unwrap(),
            predict(&b, x.view()).unwrap(),
            predict(&c, x.view()).unwrap(),
        );
        assert!(pa.iter().zip(pb.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
        assert!(pa.iter().zip(pc.iter()).any(|(u, v)| u != v));

        // The forest prediction is exactly the running mean of its trees.
        let row = x.row(0);
        let manual = a.trees.iter().map(|t| t.predict_row(row)).sum::<f64>() / 7.0;
        assert_eq!(pa[0].to_bits(), manual.to_bits());

        // Fitting captures the planted linear trend reasonably well.
        let sse: f64 = pa
            .iter()
            .zip(y.iter())
            .map(|(p, t)| (p - t) * (p - t))
            .sum();
        let var: f64 = y.iter().map(|t| t * t).sum();
        assert!(sse < 0.5 * var, "fit too weak: sse {sse} vs var {var}");
    }

    #[test]
    fn bootstrap_is_same_size_with_replacement() {
        let mut rng = seed::rng(17);
        let rows = bootstrap_rows(50, &mut rng);
        assert_eq!(rows.len(), 50);
        assert!(rows.iter().all(|&r| r < 50));
        let mut unique = rows.clone();
        unique.sort_unstable();
        unique.dedup();
        assert!(unique.len() < 50, "a bootstrap draw should repeat rows");
    }

    #[test]
    fn serialization_round_trip_preserves_predictions() {
        let mut rng = seed::rng(23);
        let x: Array2<f64> = Array2::from_shape_fn((30, 4), |_| rng.gen_range(-1.0..1.0));
        let y = Array1::from_shape_fn(30, |i| x[(i, 3)].sin());
        let model = fit_forest(x.view(), y.view(), &ForestHyper::new(5, 6, 2), 8).unwrap();
        let json = serde_json::to_string(&model).unwrap();
        let back: ForestModel = serde_json::from_str(&json).unwrap();
        let (pa, pb) = (
            predict(&model, x.view()).unwrap(),
            predict(&back, x.view()).unwrap(),
        );
        assert!(pa.iter().zip(pb.iter()).all(|(u, v)| u.to_bits() == v.to_bits()));
    }

    #[test]
    fn hyper_validation_rejects_bad_values() {
        assert!(ForestHyper::new(0, 5, 3).validate(10).is_err());
        assert!(ForestHyper::new(5, 0, 3).validate(10).is_err());
        assert!(ForestHyper::new(5, 5, 0).validate(10).is_err());
        assert!(ForestHyper::new(5, 5, 11).validate(10).is_err());
        assert!(ForestHyper::new(5, 5, 10).validate(10).is_ok());

        let x = Array2::<f64>::zeros((0, 4));
        let y = Array1::<f64>::zeros(0);
        assert!(matches!(
            fit_forest(x.view(), y.view(), &ForestHyper::new(2, 2, 2), 1),
            Err(Error::EmptyTrainingSet)
        ));
    }
}
