//! Eleven base regression algorithms behind one fit/predict contract.
//!
//! Hyperparameters travel as a name/value map validated against a
//! per-algorithm schema (the same schema drives the tuner's search
//! spaces); trained models serialize to versioned JSON.

mod coordinate;
mod gbt;
mod lars;
mod linear;
mod online;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::FeatureMatrix;

pub use coordinate::lasso_alpha_max;
pub use gbt::{GbtModel, Node, Tree};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Algorithm {
    GbtLevelwise,
    GbtLeafwise,
    SgdLinear,
    Lasso,
    LassoLars,
    Ridge,
    BayesianRidge,
    Huber,
    PassiveAggressive,
    ElasticNet,
    Ols,
}

impl Algorithm {
    pub const ALL: [Algorithm; 11] = [
        Algorithm::GbtLevelwise,
        Algorithm::GbtLeafwise,
        Algorithm::SgdLinear,
        Algorithm::Lasso,
        Algorithm::LassoLars,
        Algorithm::Ridge,
        Algorithm::BayesianRidge,
        Algorithm::Huber,
        Algorithm::PassiveAggressive,
        Algorithm::ElasticNet,
        Algorithm::Ols,
    ];

    /// The ten base learners fed into ensembles (everything except plain
    /// least squares, which serves as a meta learner).
    pub const BASES: [Algorithm; 10] = [
        Algorithm::GbtLevelwise,
        Algorithm::GbtLeafwise,
        Algorithm::SgdLinear,
        Algorithm::Lasso,
        Algorithm::LassoLars,
        Algorithm::Ridge,
        Algorithm::BayesianRidge,
        Algorithm::Huber,
        Algorithm::PassiveAggressive,
        Algorithm::ElasticNet,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::GbtLevelwise => "gbt_levelwise",
            Algorithm::GbtLeafwise => "gbt_leafwise",
            Algorithm::SgdLinear => "sgd_linear",
            Algorithm::Lasso => "lasso",
            Algorithm::LassoLars => "lasso_lars",
            Algorithm::Ridge => "ridge",
            Algorithm::BayesianRidge => "bayesian_ridge",
            Algorithm::Huber => "huber",
            Algorithm::PassiveAggressive => "passive_aggressive",
            Algorithm::ElasticNet => "elastic_net",
            Algorithm::Ols => "ols",
        }
    }

    pub fn is_gbt(&self) -> bool {
        matches!(self, Algorithm::GbtLevelwise | Algorithm::GbtLeafwise)
    }
}

/// Which algorithm to run, with hyperparameter overrides and a seed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RegressorSpec {
    pub algorithm: Algorithm,
    #[serde(default)]
    pub hyperparams: BTreeMap<String, f64>,
    #[serde(default)]
    pub seed: u64,
}

impl RegressorSpec {
    pub fn new(algorithm: Algorithm) -> Self {
        Self {
            algorithm,
            hyperparams: BTreeMap::new(),
            seed: 0,
        }
    }

    pub fn with_param(mut self, name: &str, value: f64) -> Self {
        self.hyperparams.insert(name.to_string(), value);
        self
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = seed;
        self
    }

    /// Defaults overlaid with this spec's overrides, bounds-checked.
    pub fn resolve(&self) -> Result<BTreeMap<String, f64>, RegressorError> {
        let schema = param_schema(self.algorithm);
        let mut out: BTreeMap<String, f64> = schema
            .iter()
            .map(|d| (d.name.to_string(), d.default))
            .collect();
        for (name, &value) in &self.hyperparams {
            let def = schema.iter().find(|d| d.name == name).ok_or_else(|| {
                RegressorError::UnknownHyperparam {
                    algorithm: self.algorithm,
                    name: name.clone(),
                }
            })?;
            if !value.is_finite() || value < def.lo || value > def.hi {
                return Err(RegressorError::HyperparamOutOfBounds {
                    algorithm: self.algorithm,
                    name: name.clone(),
                    value,
                    lo: def.lo,
                    hi: def.hi,
                });
            }
            out.insert(name.clone(), value);
        }
        Ok(out)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    Continuous,
    Integer,
}

/// One hyperparameter's schema entry: bounds, default, and whether the
/// tuner searches over it.
#[derive(Debug, Clone, Copy)]
pub struct ParamDef {
    pub name: &'static str,
    pub kind: ParamKind,
    pub lo: f64,
    pub hi: f64,
    pub log_scale: bool,
    pub default: f64,
    pub tunable: bool,
}

const fn cont(
    name: &'static str,
    lo: f64,
    hi: f64,
    log: bool,
    default: f64,
    tunable: bool,
) -> ParamDef {
    ParamDef {
        name,
        kind: ParamKind::Continuous,
        lo,
        hi,
        log_scale: log,
        default,
        tunable,
    }
}

const fn int(
    name: &'static str,
    lo: f64,
    hi: f64,
    log: bool,
    default: f64,
    tunable: bool,
) -> ParamDef {
    ParamDef {
        name,
        kind: ParamKind::Integer,
        lo,
        hi,
        log_scale: log,
        default,
        tunable,
    }
}

/// Declared hyperparameter schema per algorithm; the single registry the
/// tuner and the validators both consume.
pub fn param_schema(algorithm: Algorithm) -> &'static [ParamDef] {
    const GBT_LEVELWISE: &[ParamDef] = &[
        int("rounds", 10.0, 400.0, false, 120.0, true),
        cont("learning_rate", 0.01, 0.5, true, 0.1, true),
        int("max_depth", 2.0, 8.0, false, 4.0, true),
        cont("lambda", 1e-3, 100.0, true, 1.0, true),
        cont("gamma", 0.0, 5.0, false, 0.0, true),
        int("min_samples_leaf", 1.0, 50.0, false, 5.0, true),
    ];
    const GBT_LEAFWISE: &[ParamDef] = &[
        int("rounds", 10.0, 400.0, false, 120.0, true),
        cont("learning_rate", 0.01, 0.5, true, 0.1, true),
        int("max_leaves", 4.0, 64.0, false, 15.0, true),
        cont("lambda", 1e-3, 100.0, true, 1.0, true),
        cont("gamma", 0.0, 5.0, false, 0.0, true),
        int("min_samples_leaf", 1.0, 50.0, false, 5.0, true),
    ];
    const SGD: &[ParamDef] = &[
        cont("eta0", 1e-4, 0.5, true, 0.05, true),
        cont("power_t", 0.1, 0.9, false, 0.25, false),
        int("epochs", 20.0, 500.0, false, 150.0, true),
        int("batch_size", 8.0, 256.0, false, 32.0, false),
        cont("l2", 1e-12, 1e-2, true, 1e-10, true),
    ];
    const LASSO: &[ParamDef] = &[
        cont("alpha", 1e-8, 1e4, true, 0.01, true),
        int("max_iter", 10.0, 100_000.0, false, 2000.0, false),
        cont("tol", 1e-14, 1e-2, true, 1e-9, false),
    ];
    const ELASTIC_NET: &[ParamDef] = &[
        cont("alpha", 1e-8, 1e6, true, 0.01, true),
        cont("l1_ratio", 0.0, 1.0, false, 0.5, true),
        int("max_iter", 10.0, 100_000.0, false, 2000.0, false),
        cont("tol", 1e-14, 1e-2, true, 1e-9, false),
    ];
    const LASSO_LARS: &[ParamDef] = &[
        cont("alpha", 1e-8, 1e4, true, 0.01, true),
        int("max_iter", 10.0, 10_000.0, false, 500.0, false),
    ];
    const RIDGE: &[ParamDef] = &[cont("alpha", 1e-8, 1e4, true, 1.0, true)];
    const BAYESIAN_RIDGE: &[ParamDef] = &[
        int("max_iter", 10.0, 2000.0, false, 300.0, false),
        cont("tol", 1e-12, 1e-2, true, 1e-6, false),
    ];
    const HUBER: &[ParamDef] = &[
        cont("delta", 1.0, 3.0, false, 1.35, true),
        cont("alpha", 1e-12, 1.0, true, 1e-8, false),
        int("max_iter", 10.0, 1000.0, false, 100.0, false),
        cont("tol", 1e-14, 1e-2, true, 1e-10, false),
    ];
    const PASSIVE_AGGRESSIVE: &[ParamDef] = &[
        cont("c", 1e-3, 100.0, true, 1.0, true),
        cont("epsilon", 0.0, 2.0, false, 0.1, true),
        int("epochs", 5.0, 200.0, false, 30.0, false),
    ];
    match algorithm {
        Algorithm::GbtLevelwise => GBT_LEVELWISE,
        Algorithm::GbtLeafwise => GBT_LEAFWISE,
        Algorithm::SgdLinear => SGD,
        Algorithm::Lasso => LASSO,
        Algorithm::ElasticNet => ELASTIC_NET,
        Algorithm::LassoLars => LASSO_LARS,
        Algorithm::Ridge => RIDGE,
        Algorithm::BayesianRidge => BAYESIAN_RIDGE,
        Algorithm::Huber => HUBER,
        Algorithm::PassiveAggressive => PASSIVE_AGGRESSIVE,
        Algorithm::Ols => &[],
    }
}

#[derive(Debug, Error)]
pub enum RegressorError {
    #[error("input matrix is empty")]
    EmptyInput,
    #[error("input contains non-finite values")]
    NonFiniteInput,
    #[error("model expects {expected} features, matrix has {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{algorithm:?} has no hyperparameter {name:?}")]
    UnknownHyperparam { algorithm: Algorithm, name: String },
    #[error("{algorithm:?} hyperparameter {name:?} = {value} outside [{lo}, {hi}]")]
    HyperparamOutOfBounds {
        algorithm: Algorithm,
        name: String,
        value: f64,
        lo: f64,
        hi: f64,
    },
    #[error("linear system is singular beyond jitter repair")]
    SingularSystem,
    #[error("{algorithm:?} training diverged to non-finite coefficients")]
    TrainingDiverged { algorithm: Algorithm },
    #[error("model file version {0} unsupported")]
    UnsupportedVersion(u32),
    #[error("model file parse error: {0}")]
    Parse(#[from] serde_json::Error),
}

/// Linear-family model: `prediction = weights . x + intercept`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LinearModel {
    pub algorithm: Algorithm,
    pub weights: Vec<f64>,
    pub intercept: f64,
    /// Set when a rank-deficient closed-form solve fell back to the
    /// ridge-jitter path.
    pub jitter_fallback: bool,
}

impl LinearModel {
    pub fn predict_row(&self, row: &[f64]) -> f64 {
        self.weights
            .iter()
            .zip(row)
            .map(|(w, x)| w * x)
            .sum::<f64>()
            + self.intercept
    }
}

/// A trained model of any of the eleven algorithms.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum RegressorModel {
    Gbt(GbtModel),
    Linear(LinearModel),
}

impl RegressorModel {
    pub fn algorithm(&self) -> Algorithm {
        match self {
            RegressorModel::Gbt(m) => m.algorithm,
            RegressorModel::Linear(m) => m.algorithm,
        }
    }

    pub fn n_features(&self) -> usize {
        match self {
            RegressorModel::Gbt(m) => m.n_features,
            RegressorModel::Linear(m) => m.weights.len(),
        }
    }

    /// One finite prediction per row; a pure function of model and input.
    pub fn predict(&self, x: &FeatureMatrix) -> Result<Vec<f64>, RegressorError> {
        if x.n_cols() != self.n_features() {
            return Err(RegressorError::DimensionMismatch {
                expected: self.n_features(),
                got: x.n_cols(),
            });
        }
        let out: Vec<f64> = (0..x.n_rows())
            .map(|r| match self {
                RegressorModel::Gbt(m) => m.predict_row(x.row(r)),
                RegressorModel::Linear(m) => m.predict_row(x.row(r)),
            })
            .collect();
        if out.iter().any(|v| !v.is_finite()) {
            return Err(RegressorError::TrainingDiverged {
                algorithm: self.algorithm(),
            });
        }
        Ok(out)
    }

    /// Gain-aggregated feature importance; zero vector for linear models
    /// (callers rank with the GBT variants).
    pub fn feature_importance(&self) -> Vec<f64> {
        match self {
            RegressorModel::Gbt(m) => m.feature_importance(),
            RegressorModel::Linear(m) => vec![0.0; m.weights.len()],
        }
    }
}

/// Train `spec` on `x`. Deterministic for a fixed (spec, matrix) pair.
pub fn fit(spec: &RegressorSpec, x: &FeatureMatrix) -> Result<RegressorModel, RegressorError> {
    if x.n_rows() == 0 {
        return Err(RegressorError::EmptyInput);
    }
    if !x.is_finite() {
        return Err(RegressorError::NonFiniteInput);
    }
    let p = spec.resolve()?;
    let get = |name: &str| p[name];
    let get_usize = |name: &str| p[name].round() as usize;

    let xm = x.to_dmatrix();
    let y = x.target_dvector();

    let model = match spec.algorithm {
        Algorithm::GbtLevelwise | Algorithm::GbtLeafwise => {
            let growth = if spec.algorithm == Algorithm::GbtLevelwise {
                gbt::Growth::Levelwise {
                    max_depth: get_usize("max_depth"),
                }
            } else {
                gbt::Growth::Leafwise {
                    max_leaves: get_usize("max_leaves"),
                }
            };
            let params = gbt::GbtParams {
                rounds: get_usize("rounds"),
                learning_rate: get("learning_rate"),
                lambda: get("lambda"),
                gamma: get("gamma"),
                min_samples_leaf: get_usize("min_samples_leaf"),
                growth,
            };
            RegressorModel::Gbt(gbt::fit_gbt(spec.algorithm, x, params))
        }
        Algorithm::Ols => RegressorModel::Linear(linear::fit_ols(&xm, &y)?),
        Algorithm::Ridge => RegressorModel::Linear(linear::fit_ridge(&xm, &y, get("alpha"))?),
        Algorithm::BayesianRidge => RegressorModel::Linear(linear::fit_bayesian_ridge(
            &xm,
            &y,
            get_usize("max_iter"),
            get("tol"),
        )?),
        Algorithm::Huber => RegressorModel::Linear(linear::fit_huber(
            &xm,
            &y,
            get("delta"),
            get("alpha"),
            get_usize("max_iter"),
            get("tol"),
        )?),
        Algorithm::Lasso => RegressorModel::Linear(coordinate::fit_elastic_net(
            Algorithm::Lasso,
            &xm,
            &y,
            get("alpha"),
            1.0,
            get_usize("max_iter"),
            get("tol"),
        )?),
        Algorithm::ElasticNet => RegressorModel::Linear(coordinate::fit_elastic_net(
            Algorithm::ElasticNet,
            &xm,
            &y,
            get("alpha"),
            get("l1_ratio"),
            get_usize("max_iter"),
            get("tol"),
        )?),
        Algorithm::LassoLars => RegressorModel::Linear(lars::fit_lasso_lars(
            &xm,
            &y,
            get("alpha"),
            get_usize("max_iter"),
        )?),
        Algorithm::SgdLinear => RegressorModel::Linear(online::fit_sgd(
            &xm,
            &y,
            get("eta0"),
            get("power_t"),
            get_usize("epochs"),
            get_usize("batch_size"),
            get("l2"),
            spec.seed,
        )?),
        Algorithm::PassiveAggressive => RegressorModel::Linear(online::fit_passive_aggressive(
            &xm,
            &y,
            get("c"),
            get("epsilon"),
            get_usize("epochs"),
            spec.seed,
        )?),
    };
    Ok(model)
}

const MODEL_FILE_VERSION: u32 = 1;

/// Versioned on-disk form of a trained model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModelFile {
    pub version: u32,
    pub spec: RegressorSpec,
    pub model: RegressorModel,
}

pub fn save_model(spec: &RegressorSpec, model: &RegressorModel) -> String {
    serde_json::to_string_pretty(&ModelFile {
        version: MODEL_FILE_VERSION,
        spec: spec.clone(),
        model: model.clone(),
    })
    .expect("model serializes")
}

pub fn load_model(json: &str) -> Result<ModelFile, RegressorError> {
    let file: ModelFile = serde_json::from_str(json)?;
    if file.version != MODEL_FILE_VERSION {
        return Err(RegressorError::UnsupportedVersion(file.version));
    }
    Ok(file)
}
