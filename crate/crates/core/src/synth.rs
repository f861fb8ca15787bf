//! Seeded synthetic factor panels with a plantable cross-sectional signal.
//!
//! Factors follow stationary per-stock AR(1) paths. The forward return of
//! stock `i` over `t -> t+1` is
//!
//! ```text
//! r = s * (2 * rank_t(signal factor, i) / n - 1) * sigma_signal + noise
//! ```
//!
//! so with `s > 0` the chosen factor's in-month ranking linearly predicts
//! next-month returns, with `s = 0` the panel is pure noise, and with
//! `s = 1, sigma_noise = 0` the per-month rank correlation between the
//! signal factor and forward returns is exactly 1. Returns are computed
//! from the latent factor values before any missingness is applied, so
//! `missing_rate` models observation gaps without weakening the signal.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::month::MonthId;
use crate::panel::{FactorPanel, FactorRecord, N_FACTORS};
use crate::seed::{self, stream};
use crate::Result;

/// Configuration of one synthetic panel.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SynthConfig {
    pub n_stocks: usize,
    pub n_months: usize,
    /// First panel month.
    pub start_month: MonthId,
    /// Signal strength `s`; 0 plants nothing.
    pub signal_strength: f64,
    /// 1-based factor number (column `fNN`) carrying the signal.
    pub signal_factor: usize,
    /// Scale of the planted signal component of returns.
    pub sigma_signal: f64,
    /// Standard deviation of the idiosyncratic return noise.
    pub sigma_noise: f64,
    /// AR(1) coefficient of the factor paths.
    pub ar_rho: f64,
    /// Probability that any observed factor cell is masked out.
    pub missing_rate: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            n_stocks: 200,
            n_months: 85,
            start_month: "2000-01".parse().expect("valid literal"),
            signal_strength: 0.3,
            signal_factor: 1,
            sigma_signal: 0.06,
            sigma_noise: 0.04,
            ar_rho: 0.9,
            missing_rate: 0.0,
            seed: 1,
        }
    }
}

impl SynthConfig {
    fn validate(&self) -> Result<()> {
        if self.n_stocks < 10 {
            return Err(Error::ConfigTooSmall(format!(
                "n_stocks {} < 10",
                self.n_stocks
            )));
        }
        if self.n_months < 14 {
            return Err(Error::ConfigTooSmall(format!(
                "n_months {} < 14 (12 lags + anchor + target)",
                self.n_months
            )));
        }
        if !(1..=N_FACTORS).contains(&self.signal_factor) {
            return Err(Error::InvalidHyper(format!(
                "signal_factor {} outside 1..=25",
                self.signal_factor
            )));
        }
        if !(0.0..1.0).contains(&self.missing_rate) {
            return Err(Error::InvalidHyper(format!(
                "missing_rate {} outside [0, 1)",
                self.missing_rate
            )));
        }
        if self.ar_rho.abs() >= 1.0 {
            return Err(Error::InvalidHyper(format!(
                "ar_rho {} outside (-1, 1)",
                self.ar_rho
            )));
        }
        if self.sigma_signal < 0.0 || self.sigma_noise < 0.0 {
            return Err(Error::InvalidHyper("negative sigma".into()));
        }
        Ok(())
    }
}

/// Generates the panel described by `config`, deterministically in its seed.
pub fn generate_panel(config: &SynthConfig) -> Result<FactorPanel> {
    config.validate()?;
    let n = config.n_stocks;
    let t_max = config.n_months;
    let rho = config.ar_rho;
    let innov = (1.0 - rho * rho).sqrt();

    // Latent factor paths, one AR(1) series per (stock, factor); generation
    // order (stock, factor, month) is part of the determinism contract.
    let mut rng_f = seed::rng(seed::derive(config.seed, stream::FEATURES));
    let mut latent = vec![vec![vec![0.0f64; t_max]; N_FACTORS]; n];
    for path_stock in latent.iter_mut() {
        for path in path_stock.iter_mut() {
            let mut x: f64 = StandardNormal.sample(&mut rng_f);
            path[0] = x;
            for slot in path.iter_mut().skip(1) {
                let e: f64 = StandardNormal.sample(&mut rng_f);
                x = rho * x + innov * e;
                *slot = x;
            }
        }
    }

    // Forward returns over t -> t+1 for t < t_max-1.
    let sig_j = config.signal_factor - 1;
    let mut rng_r = seed::rng(seed::derive(config.seed, stream::RETURNS));
    let mut fwd = vec![vec![0.0f64; n]; t_max.saturating_sub(1)];
    for (t, fwd_t) in fwd.iter_mut().enumerate() {
        // Ascending rank of each stock's signal factor this month; latent
        // paths are continuous so ties have probability zero.
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| latent[a][sig_j][t].total_cmp(&latent[b][sig_j][t]));
        let mut rank = vec![0usize; n];
        for (pos, &i) in order.iter().enumerate() {
            rank[i] = pos + 1;
        }
        for i in 0..n {
            let u = 2.0 * rank[i] as f64 / n as f64 - 1.0;
            let noise: f64 = StandardNormal.sample(&mut rng_r);
            fwd_t[i] = config.signal_strength * u * config.sigma_signal
                + config.sigma_noise * noise;
        }
    }

    // Observation mask, applied after returns are fixed.
    let mut rng_m = seed::rng(seed::derive(config.seed, stream::MASK));
    let mut records = Vec::with_capacity(n * t_max);
    for t in 0..t_max {
        let month = config.start_month.plus(t as i32);
        for (i, stock_latent) in latent.iter().enumerate() {
            let mut rec = FactorRecord::empty(month, format!("S{i:04}"));
            for (j, path) in stock_latent.iter().enumerate() {
                let masked = config.missing_rate > 0.0 && rng_m.gen::<f64>() < config.missing_rate;
                if !masked {
                    rec.set_factor(j, path[t]);
                }
            }
            if t + 1 < t_max {
                rec.fwd_return = Some(fwd[t][i]);
            }
            records.push(rec);
        }
    }
    FactorPanel::from_records(records)
}
