//! One front door for every model family: a serializable spec describing
//! what to fit, a fitted-model enum dispatching prediction, and a
//! versioned JSON dump format.

use ndarray::{Array1, ArrayView2};
use serde::{Deserialize, Serialize};

use crate::error::Error;
use crate::forest::{self, ForestHyper, ForestModel};
use crate::mlp::{self, ArchitectureSpec, NetworkState, TrainConfig};
use crate::preprocess::TrainingSet;
use crate::seed::{self, stream};
use crate::svr::{self, SvrFitOptions, SvrHyper, SvrModel};
use crate::Result;

pub const SCHEMA_VERSION: u32 = 1;

/// What to fit. Lives in config files, so every variant is plain data.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum ModelSpec {
    Mlp {
        arch: ArchitectureSpec,
        #[serde(default = "default_epochs")]
        epochs: usize,
        #[serde(default = "default_learning_rate")]
        learning_rate: f64,
    },
    Forest {
        hyper: ForestHyper,
    },
    Svr {
        hyper: SvrHyper,
        #[serde(default)]
        options: SvrFitOptions,
    },
    /// Averages the member predictions. Members get independent
    /// counter-derived seeds.
    Ensemble {
        members: Vec<ModelSpec>,
    },
}

fn default_epochs() -> usize {
    TrainConfig::default().epochs
}

fn default_learning_rate() -> f64 {
    TrainConfig::default().learning_rate
}

impl ModelSpec {
    pub fn mlp(arch: ArchitectureSpec) -> Self {
        ModelSpec::Mlp {
            arch,
            epochs: default_epochs(),
            learning_rate: default_learning_rate(),
        }
    }

    pub fn forest(hyper: ForestHyper) -> Self {
        ModelSpec::Forest { hyper }
    }

    pub fn svr(hyper: SvrHyper) -> Self {
        ModelSpec::Svr {
            hyper,
            options: SvrFitOptions::default(),
        }
    }

    pub fn ensemble(members: Vec<ModelSpec>) -> Self {
        ModelSpec::Ensemble { members }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            ModelSpec::Mlp { arch, epochs, learning_rate } => {
                arch.validate()?;
                if *epochs == 0 || !(*learning_rate > 0.0) {
                    return Err(Error::InvalidHyper(format!(
                        "{}: epochs and learning rate must be positive",
                        arch.name
                    )));
                }
                Ok(())
            }
            ModelSpec::Forest { hyper } => hyper.validate(crate::preprocess::N_FEATURES),
            ModelSpec::Svr { hyper, .. } => hyper.validate(),
            ModelSpec::Ensemble { members } => {
                if members.is_empty() {
                    return Err(Error::InvalidHyper("ensemble with no members".into()));
                }
                members.iter().try_for_each(ModelSpec::validate)
            }
        }
    }

    /// Stable human-readable label for reports and file names.
    pub fn label(&self) -> String {
        match self {
            ModelSpec::Mlp { arch, .. } => arch.name.clone(),
            ModelSpec::Forest { hyper } => hyper.label(),
            ModelSpec::Svr { hyper, .. } => hyper.label(),
            ModelSpec::Ensemble { members } => {
                let names: Vec<String> = members.iter().map(ModelSpec::label).collect();
                format!("ENS({})", names.join("+"))
            }
        }
    }
}

/// A fitted model of any family.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case")]
pub enum FittedModel {
    Mlp(NetworkState),
    Forest(ForestModel),
    Svr(SvrModel),
    Ensemble(Vec<FittedModel>),
}

/// Fits `spec` on `data`. All randomness (initialization, shuffling,
/// dropout, bootstraps) derives from `fit_seed`; SVR is deterministic and
/// ignores it.
pub fn fit(spec: &ModelSpec, data: &TrainingSet, fit_seed: u64) -> Result<FittedModel> {
    spec.validate()?;
    match spec {
        ModelSpec::Mlp { arch, epochs, learning_rate } => {
            let mut net = mlp::init_network(arch, fit_seed)?;
            let config = TrainConfig {
                epochs: *epochs,
                learning_rate: *learning_rate,
                seed: fit_seed,
            };
            mlp::train(&mut net, data, &config)?;
            Ok(FittedModel::Mlp(net))
        }
        ModelSpec::Forest { hyper } => Ok(FittedModel::Forest(forest::fit_forest(
            data.features.view(),
            data.targets.view(),
            hyper,
            fit_seed,
        )?)),
        ModelSpec::Svr { hyper, options } => Ok(FittedModel::Svr(svr::fit(
            data.features.view(),
            data.targets.view(),
            hyper,
            options,
        )?)),
        ModelSpec::Ensemble { members } => {
            let fitted = members
                .iter()
                .enumerate()
                .map(|(i, member)| {
                    fit(member, data, seed::derive2(fit_seed, stream::ENSEMBLE, i as u64))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok(FittedModel::Ensemble(fitted))
        }
    }
}

/// Predicts a score per row. Ensembles take the arithmetic mean of member
/// predictions in member order.
pub fn predict(model: &FittedModel, x: ArrayView2<f64>) -> Result<Array1<f64>> {
    match model {
        FittedModel::Mlp(net) => mlp::predict(net, x),
        FittedModel::Forest(f) => forest::predict(f, x),
        FittedModel::Svr(s) => svr::predict(s, x),
        FittedModel::Ensemble(members) => {
            let mut acc: Option<Array1<f64>> = None;
            for member in members {
                let p = predict(member, x)?;
                acc = Some(match acc {
                    None => p,
                    Some(a) => a + p,
                });
            }
            let sum = acc.ok_or_else(|| Error::InvalidHyper("ensemble with no members".into()))?;
            Ok(sum / members.len() as f64)
        }
    }
}

/// Versioned serialization envelope for fitted models.
#[derive(Debug, Serialize, Deserialize)]
struct ModelDump {
    schema_version: u32,
    model: FittedModel,
}

/// Serializes a fitted model with its schema version.
pub fn to_json(model: &FittedModel) -> Result<String> {
    Ok(serde_json::to_string(&ModelDump {
        schema_version: SCHEMA_VERSION,
        model: model.clone(),
    })?)
}

/// Restores a fitted model, rejecting unknown schema versions.
pub fn from_json(json: &str) -> Result<FittedModel> {
    let dump: ModelDump = serde_json::from_str(json)?;
    if dump.schema_version != SCHEMA_VERSION {
        return Err(Error::ModelFormat(format!(
            "schema version {} unsupported (expected {SCHEMA_VERSION})",
            dump.schema_version
        )));
    }
    Ok(dump.model)
}
