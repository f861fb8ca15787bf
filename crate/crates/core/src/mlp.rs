//! Feed-forward regression networks trained from scratch.
//!
//! Architecture: 125 inputs, tanh hidden layers, one linear output unit.
//! Weights start from a truncated normal (sd `1/sqrt(fan_in)`, resampled
//! beyond two sd), biases from zero. Training minimizes mean squared error
//! with Adam; one minibatch is one month's cross-section, and the month
//! order is reshuffled every epoch from a seeded stream. Dropout (inverted,
//! hidden layers only) keeps inference mask-free.
//!
//! Everything is `f64` and bit-deterministic in the seed.

use ndarray::{s, Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::preprocess::{TrainingSet, N_FEATURES};
use crate::seed::{self, stream};
use crate::Result;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Shape and regularization of one network.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ArchitectureSpec {
    pub name: String,
    /// Hidden layer widths, input to output.
    pub hidden: Vec<usize>,
    /// Dropout rate on hidden layers (0 disables dropout).
    pub dropout: f64,
    /// Input width; the factor pipeline always uses 125.
    #[serde(default = "default_input_dim")]
    pub input_dim: usize,
}

fn default_input_dim() -> usize {
    N_FEATURES
}

impl ArchitectureSpec {
    pub fn new(name: impl Into<String>, hidden: Vec<usize>, dropout: f64) -> Self {
        Self {
            name: name.into(),
            hidden,
            dropout,
            input_dim: N_FEATURES,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.hidden.is_empty() || self.hidden.iter().any(|&w| w == 0) || self.input_dim == 0 {
            return Err(Error::InvalidHyper(format!(
                "{}: layer widths must be positive",
                self.name
            )));
        }
        if !(0.0..1.0).contains(&self.dropout) {
            return Err(Error::InvalidHyper(format!(
                "{}: dropout {} outside [0, 1)",
                self.name, self.dropout
            )));
        }
        Ok(())
    }

    /// Widths of every layer: input, hidden..., output.
    pub fn layer_sizes(&self) -> Vec<usize> {
        let mut sizes = Vec::with_capacity(self.hidden.len() + 2);
        sizes.push(self.input_dim);
        sizes.extend_from_slice(&self.hidden);
        sizes.push(1);
        sizes
    }

    /// Total trainable parameters (weights + biases).
    pub fn param_count(&self) -> usize {
        self.layer_sizes()
            .windows(2)
            .map(|w| (w[0] + 1) * w[1])
            .sum()
    }

    /// Total layer count including input and output.
    pub fn n_layers(&self) -> usize {
        self.hidden.len() + 2
    }
}

/// The 16 standard architectures, grouped by total layer count: four
/// 8-layer nets, four 5-layer nets, four single-hidden-layer nets sized to
/// match the 8-layer parameter counts (all with dropout 0.5), and four
/// plain single-hidden-layer nets without dropout.
pub fn preset_architectures() -> Vec<ArchitectureSpec> {
    let a = ArchitectureSpec::new;
    vec![
        a("DNN8_1", vec![100, 100, 50, 50, 10, 10], 0.5),
        a("DNN8_2", vec![100, 100, 70, 70, 50, 50], 0.5),
        a("DNN8_3", vec![120, 120, 70, 70, 20, 20], 0.5),
        a("DNN8_4", vec![120, 120, 80, 80, 40, 40], 0.5),
        a("DNN5_1", vec![100, 50, 10], 0.5),
        a("DNN5_2", vec![100, 70, 50], 0.5),
        a("DNN5_3", vec![120, 70, 20], 0.5),
        a("DNN5_4", vec![120, 80, 40], 0.5),
        a("NN3_DO_1", vec![244], 0.5),
        a("NN3_DO_2", vec![322], 0.5),
        a("NN3_DO_3", vec![354], 0.5),
        a("NN3_DO_4", vec![399], 0.5),
        a("NN3_1", vec![70], 0.0),
        a("NN3_2", vec![80], 0.0),
        a("NN3_3", vec![100], 0.0),
        a("NN3_4", vec![120], 0.0),
    ]
}

/// Looks up a preset architecture by name.
pub fn preset(name: &str) -> Option<ArchitectureSpec> {
    preset_architectures().into_iter().find(|a| a.name == name)
}

/// Training hyperparameters.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 100,
            learning_rate: 1e-3,
            seed: 0,
        }
    }
}

/// Weights and biases of a network; `weights[l]` maps layer `l`'s input
/// (rows) to its output (columns).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkState {
    pub arch: ArchitectureSpec,
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NetworkState {
    /// Every parameter as one flat vector: per layer, weights row-major then
    /// biases. [`Gradients::flatten`] uses the same layout.
    pub fn flatten_params(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for l in 0..self.weights.len() {
            flat.extend(self.weights[l].iter());
            flat.extend(self.biases[l].iter());
        }
        flat
    }

    /// Overwrites every parameter from a flat vector with the
    /// [`flatten_params`](Self::flatten_params) layout.
    pub fn set_params(&mut self, flat: &[f64]) -> Result<()> {
        let expected: usize = self.arch.param_count();
        if flat.len() != expected {
            return Err(Error::DimensionMismatch {
                context: format!("{} parameter vector", self.arch.name),
                expected,
                found: flat.len(),
            });
        }
        let mut it = flat.iter();
        for l in 0..self.weights.len() {
            for w in self.weights[l].iter_mut() {
                *w = *it.next().expect("length checked");
            }
            for b in self.biases[l].iter_mut() {
                *b = *it.next().expect("length checked");
            }
        }
        Ok(())
    }
}

/// Draws from N(0, sd) truncated to two standard deviations by resampling.
fn truncated_normal(rng: &mut ChaCha8Rng, sd: f64) -> f64 {
    let dist = Normal::new(0.0, sd).expect("positive sd");
    loop {
        let v = dist.sample(rng);
        if v.abs() <= 2.0 * sd {
            return v;
        }
    }
}

/// Initializes a network: truncated-normal weights scaled by each layer's
/// fan-in, zero biases. Deterministic in `seed` (draws run layer by layer,
/// row-major).
pub fn init_network(arch: &ArchitectureSpec, init_seed: u64) -> Result<NetworkState> {
    arch.validate()?;
    let mut rng = seed::rng(seed::derive(init_seed, stream::INIT));
    let sizes = arch.layer_sizes();
    let mut weights = Vec::with_capacity(sizes.len() - 1);
    let mut biases = Vec::with_capacity(sizes.len() - 1);
    for w in sizes.windows(2) {
        let (fan_in, fan_out) = (w[0], w[1]);
        let sd = 1.0 / (fan_in as f64).sqrt();
        let mut flat = Vec::with_capacity(fan_in * fan_out);
        for _ in 0..fan_in * fan_out {
            flat.push(truncated_normal(&mut rng, sd));
        }
        weights.push(Array2::from_shape_vec((fan_in, fan_out), flat).expect("row-major"));
        biases.push(Array1::zeros(fan_out));
    }
    Ok(NetworkState {
        arch: arch.clone(),
        weights,
        biases,
    })
}

/// Per-hidden-layer inverted dropout masks for one batch: entries are 0 or
/// `1/keep`, so expectations match inference without rescaling there.
#[derive(Debug, Clone)]
pub struct DropoutMasks {
    /// One mask per hidden layer (`None` when dropout is off).
    pub layers: Vec<Option<Array2<f64>>>,
}

impl DropoutMasks {
    /// No-op masks (inference behaviour under the training path).
    pub fn disabled(arch: &ArchitectureSpec) -> Self {
        Self {
            layers: vec![None; arch.hidden.len()],
        }
    }

    /// Samples masks for a batch of `batch` rows. Draw order (layer, row,
    /// unit) is fixed.
    pub fn sample(arch: &ArchitectureSpec, batch: usize, rng: &mut ChaCha8Rng) -> Self {
        if arch.dropout == 0.0 {
            return Self::disabled(arch);
        }
        let keep = 1.0 - arch.dropout;
        let scale = 1.0 / keep;
        let layers = arch
            .hidden
            .iter()
            .map(|&width| {
                let mut flat = Vec::with_capacity(batch * width);
                for _ in 0..batch * width {
                    let kept = rng.gen::<f64>() < keep;
                    flat.push(if kept { scale } else { 0.0 });
                }
                Some(Array2::from_shape_vec((batch, width), flat).expect("row-major"))
            })
            .collect();
        Self { layers }
    }
}

/// Intermediate activations kept for backprop.
pub struct ForwardCache {
    /// Input to each layer (post-dropout for hidden outputs); length =
    /// number of weight layers.
    layer_inputs: Vec<Array2<f64>>,
    /// tanh outputs of each hidden layer before dropout.
    tanh_outputs: Vec<Array2<f64>>,
}

fn check_width(net: &NetworkState, x: &ArrayView2<f64>) -> Result<()> {
    if x.ncols() != net.arch.input_dim {
        return Err(Error::DimensionMismatch {
            context: format!("{} input", net.arch.name),
            expected: net.arch.input_dim,
            found: x.ncols(),
        });
    }
    Ok(())
}

/// Training-mode forward pass with explicit dropout masks.
pub fn forward_train(
    net: &NetworkState,
    x: ArrayView2<f64>,
    masks: &DropoutMasks,
) -> Result<(Array1<f64>, ForwardCache)> {
    check_width(net, &x)?;
    let n_hidden = net.arch.hidden.len();
    let mut layer_inputs = Vec::with_capacity(n_hidden + 1);
    let mut tanh_outputs = Vec::with_capacity(n_hidden);
    let mut a = x.to_owned();
    for l in 0..n_hidden {
        let mut z = a.dot(&net.weights[l]);
        z += &net.biases[l];
        z.mapv_inplace(f64::tanh);
        layer_inputs.push(a);
        tanh_outputs.push(z.clone());
        if let Some(mask) = &masks.layers[l] {
            z *= mask;
        }
        a = z;
    }
    let out = a.dot(&net.weights[n_hidden]) + &net.biases[n_hidden];
    layer_inputs.push(a);
    let preds = out.index_axis(Axis(1), 0).to_owned();
    Ok((
        preds,
        ForwardCache {
            layer_inputs,
            tanh_outputs,
        },
    ))
}

/// Inference-mode forward pass (no dropout, no cache).
pub fn forward_infer(net: &NetworkState, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    check_width(net, &x)?;
    let n_hidden = net.arch.hidden.len();
    let mut a = x.to_owned();
    for l in 0..n_hidden {
        let mut z = a.dot(&net.weights[l]);
        z += &net.biases[l];
        z.mapv_inplace(f64::tanh);
        a = z;
    }
    let out = a.dot(&net.weights[n_hidden]) + &net.biases[n_hidden];
    Ok(out.index_axis(Axis(1), 0).to_owned())
}

/// Mean squared error `(1/K) * sum (pred - target)^2`.
pub fn mse_loss(preds: ArrayView1<f64>, targets: ArrayView1<f64>) -> Result<f64> {
    if preds.len() != targets.len() {
        return Err(Error::LengthMismatch {
            context: "mse_loss".into(),
            left: preds.len(),
            right: targets.len(),
        });
    }
    if preds.is_empty() {
        return Err(Error::EmptyTrainingSet);
    }
    let k = preds.len() as f64;
    Ok(preds
        .iter()
        .zip(targets.iter())
        .map(|(p, t)| (p - t) * (p - t))
        .sum::<f64>()
        / k)
}

/// Parameter gradients, shaped like the network.
pub struct Gradients {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl Gradients {
    /// Flat layout matching [`NetworkState::flatten_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut flat = Vec::new();
        for l in 0..self.weights.len() {
            flat.extend(self.weights[l].iter());
            flat.extend(self.biases[l].iter());
        }
        flat
    }
}

/// Exact gradients of [`mse_loss`] w.r.t. every weight and bias, treating
/// the dropout masks as fixed. The mean normalization means duplicating
/// every example leaves the gradient unchanged.
pub fn backward(
    net: &NetworkState,
    cache: &ForwardCache,
    preds: ArrayView1<f64>,
    targets: ArrayView1<f64>,
    masks: &DropoutMasks,
) -> Result<Gradients> {
    let k = preds.len();
    if k != targets.len() {
        return Err(Error::LengthMismatch {
            context: "backward".into(),
            left: k,
            right: targets.len(),
        });
    }
    let n_hidden = net.arch.hidden.len();
    let mut g_w = vec![Array2::zeros((0, 0)); n_hidden + 1];
    let mut g_b = vec![Array1::zeros(0); n_hidden + 1];

    // d loss / d output, as a K x 1 column.
    let mut delta = Array2::from_shape_fn((k, 1), |(i, _)| {
        2.0 * (preds[i] - targets[i]) / k as f64
    });
    g_w[n_hidden] = cache.layer_inputs[n_hidden].t().dot(&delta);
    g_b[n_hidden] = delta.sum_axis(Axis(0));

    // Propagate through hidden layers, top down.
    let mut d_activation = delta.dot(&net.weights[n_hidden].t());
    for l in (0..n_hidden).rev() {
        if let Some(mask) = &masks.layers[l] {
            d_activation *= mask;
        }
        let h = &cache.tanh_outputs[l];
        d_activation.zip_mut_with(h, |d, &t| *d *= 1.0 - t * t);
        delta = d_activation;
        g_w[l] = cache.layer_inputs[l].t().dot(&delta);
        g_b[l] = delta.sum_axis(Axis(0));
        d_activation = delta.dot(&net.weights[l].t());
    }
    Ok(Gradients {
        weights: g_w,
        biases: g_b,
    })
}

/// First and second moment estimates for Adam.
#[derive(Debug, Clone)]
pub struct AdamState {
    m_w: Vec<Array2<f64>>,
    v_w: Vec<Array2<f64>>,
    m_b: Vec<Array1<f64>>,
    v_b: Vec<Array1<f64>>,
    /// Completed steps.
    pub t: u64,
}

impl AdamState {
    pub fn new(net: &NetworkState) -> Self {
        Self {
            m_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            v_w: net.weights.iter().map(|w| Array2::zeros(w.raw_dim())).collect(),
            m_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            v_b: net.biases.iter().map(|b| Array1::zeros(b.raw_dim())).collect(),
            t: 0,
        }
    }
}

fn adam_update(theta: &mut f64, m: &mut f64, v: &mut f64, g: f64, lr: f64, t: f64) {
    *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
    *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
    let m_hat = *m / (1.0 - ADAM_BETA1.powf(t));
    let v_hat = *v / (1.0 - ADAM_BETA2.powf(t));
    *theta -= lr * m_hat / (v_hat.sqrt() + ADAM_EPS);
}

/// One Adam step over every parameter with bias-corrected moments.
pub fn adam_step(net: &mut NetworkState, state: &mut AdamState, grads: &Gradients, lr: f64) {
    state.t += 1;
    let t = state.t as f64;
    for l in 0..net.weights.len() {
        let (w, m, v, g) = (
            &mut net.weights[l],
            &mut state.m_w[l],
            &mut state.v_w[l],
            &grads.weights[l],
        );
        ndarray::Zip::from(w).and(m).and(v).and(g).for_each(|w, m, v, &g| {
            adam_update(w, m, v, g, lr, t);
        });
        let (b, m, v, g) = (
            &mut net.biases[l],
            &mut state.m_b[l],
            &mut state.v_b[l],
            &grads.biases[l],
        );
        ndarray::Zip::from(b).and(m).and(v).and(g).for_each(|b, m, v, &g| {
            adam_update(b, m, v, g, lr, t);
        });
    }
}

/// Outcome of one training run.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct TrainReport {
    /// Mean minibatch loss per epoch.
    pub epoch_losses: Vec<f64>,
    /// Whole-training-set MSE in inference mode after the last epoch.
    pub final_mse: f64,
}

/// Trains in place: `epochs` passes over the month minibatches, order
/// reshuffled each epoch, dropout masks drawn per batch. Both streams
/// derive from `config.seed`.
pub fn train(
    net: &mut NetworkState,
    data: &TrainingSet,
    config: &TrainConfig,
) -> Result<TrainReport> {
    if data.k() == 0 {
        return Err(Error::EmptyTrainingSet);
    }
    check_width(net, &data.features.view())?;
    let mut shuffle_rng = seed::rng(seed::derive(config.seed, stream::SHUFFLE));
    let mut dropout_rng = seed::rng(seed::derive(config.seed, stream::DROPOUT));
    let mut adam = AdamState::new(net);
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut order: Vec<usize> = (0..data.month_ranges.len()).collect();

    for _ in 0..config.epochs {
        order.shuffle(&mut shuffle_rng);
        let mut loss_sum = 0.0;
        for &bi in &order {
            let (_, range) = &data.month_ranges[bi];
            let x = data.features.slice(s![range.start..range.end, ..]);
            let y = data.targets.slice(s![range.start..range.end]);
            let masks = DropoutMasks::sample(&net.arch, x.nrows(), &mut dropout_rng);
            let (preds, cache) = forward_train(net, x, &masks)?;
            loss_sum += mse_loss(preds.view(), y)?;
            let grads = backward(net, &cache, preds.view(), y, &masks)?;
            adam_step(net, &mut adam, &grads, config.learning_rate);
        }
        epoch_losses.push(loss_sum / order.len() as f64);
    }

    let preds = forward_infer(net, data.features.view())?;
    let final_mse = mse_loss(preds.view(), data.targets.view())?;
    Ok(TrainReport {
        epoch_losses,
        final_mse,
    })
}

/// Predictions for a feature matrix (row per example).
pub fn predict(net: &NetworkState, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    forward_infer(net, x)
}
