//! Bayesian hyperparameter search: GP surrogate + expected improvement
//! over a candidate set, maximizing validation R².

pub mod gp;

use serde::{Deserialize, Serialize};
use statrs::distribution::{Continuous, ContinuousCDF, Normal};
use thiserror::Error;

use crate::evaluate::r2_score;
use crate::matrix::FeatureMatrix;
use crate::regressors::{fit, param_schema, ParamKind, RegressorSpec};
use crate::seeding::{derive_seed, rng_from};
use gp::GpSurrogate;
use rand::Rng;

const EI_XI: f64 = 0.01;
const N_CANDIDATES: usize = 512;

#[derive(Debug, Error)]
pub enum HyperoptError {
    #[error("dimension {name:?}: bounds [{lo}, {hi}] are degenerate")]
    DegenerateSpace { name: String, lo: f64, hi: f64 },
    #[error("log-scaled dimension {0:?} needs a positive lower bound")]
    LogScaleBounds(String),
    #[error("budget {budget} below minimum {need} (dims + 2)")]
    BudgetTooSmall { budget: usize, need: usize },
    #[error("space has no dimensions")]
    EmptySpace,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimKind {
    Continuous,
    Integer,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DimScale {
    Linear,
    Log,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dim {
    pub name: String,
    pub kind: DimKind,
    pub lo: f64,
    pub hi: f64,
    pub scale: DimScale,
}

/// Box search space; points are dense vectors in dimension order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamSpace {
    pub dims: Vec<Dim>,
}

impl ParamSpace {
    pub fn validate(&self) -> Result<(), HyperoptError> {
        if self.dims.is_empty() {
            return Err(HyperoptError::EmptySpace);
        }
        for d in &self.dims {
            if d.lo.is_nan() || d.hi.is_nan() || d.lo >= d.hi {
                return Err(HyperoptError::DegenerateSpace {
                    name: d.name.clone(),
                    lo: d.lo,
                    hi: d.hi,
                });
            }
            if d.scale == DimScale::Log && d.lo <= 0.0 {
                return Err(HyperoptError::LogScaleBounds(d.name.clone()));
            }
        }
        Ok(())
    }

    /// The tunable dimensions of an algorithm's declared schema.
    pub fn for_algorithm(algorithm: crate::regressors::Algorithm) -> ParamSpace {
        let dims = param_schema(algorithm)
            .iter()
            .filter(|d| d.tunable)
            .map(|d| Dim {
                name: d.name.to_string(),
                kind: match d.kind {
                    ParamKind::Continuous => DimKind::Continuous,
                    ParamKind::Integer => DimKind::Integer,
                },
                lo: d.lo,
                hi: d.hi,
                scale: if d.log_scale {
                    DimScale::Log
                } else {
                    DimScale::Linear
                },
            })
            .collect();
        ParamSpace { dims }
    }

    pub fn len(&self) -> usize {
        self.dims.len()
    }

    pub fn is_empty(&self) -> bool {
        self.dims.is_empty()
    }

    /// Map a unit-cube point to the original scales, snapping integer
    /// dimensions to the nearest valid value.
    pub fn from_unit(&self, z: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(z)
            .map(|(d, &u)| {
                let u = u.clamp(0.0, 1.0);
                let v = match d.scale {
                    DimScale::Linear => d.lo + u * (d.hi - d.lo),
                    DimScale::Log => (d.lo.ln() + u * (d.hi.ln() - d.lo.ln())).exp(),
                };
                match d.kind {
                    DimKind::Continuous => v.clamp(d.lo, d.hi),
                    DimKind::Integer => v.round().clamp(d.lo, d.hi),
                }
            })
            .collect()
    }

    pub fn to_unit(&self, point: &[f64]) -> Vec<f64> {
        self.dims
            .iter()
            .zip(point)
            .map(|(d, &v)| {
                let u = match d.scale {
                    DimScale::Linear => (v - d.lo) / (d.hi - d.lo),
                    DimScale::Log => (v.ln() - d.lo.ln()) / (d.hi.ln() - d.lo.ln()),
                };
                u.clamp(0.0, 1.0)
            })
            .collect()
    }

    pub fn contains(&self, point: &[f64]) -> bool {
        point.len() == self.dims.len()
            && self
                .dims
                .iter()
                .zip(point)
                .all(|(d, &v)| v >= d.lo && v <= d.hi)
    }
}

/// One evaluated point.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trial {
    pub params: Vec<f64>,
    /// Validation score; failed evaluations record `-inf`.
    #[serde(with = "crate::evaluate::serde_extreme_f64")]
    pub score: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// The evaluation trace; the incumbent is the best-scoring trial.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrialHistory {
    pub trials: Vec<Trial>,
}

impl TrialHistory {
    pub fn incumbent(&self) -> Option<&Trial> {
        self.trials
            .iter()
            .filter(|t| t.score.is_finite())
            .max_by(|a, b| a.score.total_cmp(&b.score))
    }

    pub fn len(&self) -> usize {
        self.trials.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trials.is_empty()
    }
}

/// Expected improvement of a posterior `(mu, sigma)` over `best`, with
/// the usual exploration margin. Zero when the posterior is degenerate.
pub fn expected_improvement(mu: f64, sigma: f64, best: f64) -> f64 {
    if sigma <= 0.0 {
        return 0.0;
    }
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let z = (mu - best - EI_XI) / sigma;
    ((mu - best - EI_XI) * normal.cdf(z) + sigma * normal.pdf(z)).max(0.0)
}

/// Propose the next point to evaluate. The first `dims + 1` suggestions
/// are seeded uniform draws; afterwards a GP fitted on the history picks
/// the candidate with maximal expected improvement. Deterministic in
/// `(history, seed)`.
pub fn suggest(
    history: &TrialHistory,
    space: &ParamSpace,
    seed: u64,
) -> Result<Vec<f64>, HyperoptError> {
    space.validate()?;
    let d = space.len();
    let mut rng = rng_from(derive_seed(seed, &format!("suggest:{}", history.len())));
    let draw_unit = |rng: &mut rand_chacha::ChaCha8Rng| -> Vec<f64> {
        (0..d).map(|_| rng.random::<f64>()).collect()
    };

    if history.len() < d + 1 {
        return Ok(space.from_unit(&draw_unit(&mut rng)));
    }

    // Failed trials participate at a pessimistic score so the surrogate
    // steers away from them instead of ignoring them.
    let finite: Vec<f64> = history
        .trials
        .iter()
        .map(|t| t.score)
        .filter(|s| s.is_finite())
        .collect();
    if finite.is_empty() {
        return Ok(space.from_unit(&draw_unit(&mut rng)));
    }
    let fmin = finite.iter().copied().fold(f64::INFINITY, f64::min);
    let fmax = finite.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = (fmax - fmin).max(1e-9);
    let scores: Vec<f64> = history
        .trials
        .iter()
        .map(|t| {
            if t.score.is_finite() {
                t.score
            } else {
                fmin - span
            }
        })
        .collect();

    let mean = scores.iter().sum::<f64>() / scores.len() as f64;
    let var = scores.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / scores.len() as f64;
    let std = var.sqrt();
    let standardized: Vec<f64> = if std < 1e-15 {
        vec![0.0; scores.len()]
    } else {
        scores.iter().map(|s| (s - mean) / std).collect()
    };

    let points: Vec<Vec<f64>> = history
        .trials
        .iter()
        .map(|t| space.to_unit(&t.params))
        .collect();
    let gp = GpSurrogate::fit(points, standardized.clone(), derive_seed(seed, "gp-fit"));
    let best = standardized
        .iter()
        .copied()
        .fold(f64::NEG_INFINITY, f64::max);

    // Candidates rank by EI; exact EI ties (underflow on a confident
    // posterior) fall back to the posterior mean, and a fully degenerate
    // posterior (identical scores, mean zero everywhere) falls back to
    // the widest variance.
    let mut best_candidate: Option<(Vec<f64>, (f64, f64, f64))> = None;
    for _ in 0..N_CANDIDATES {
        let raw = draw_unit(&mut rng);
        // Snap through the original space so integer dims are evaluated
        // where they will actually run.
        let unit = space.to_unit(&space.from_unit(&raw));
        let (mu, var) = gp.predict(&unit);
        let ei = expected_improvement(mu, var.sqrt(), best);
        let key = (ei, mu, var);
        let better = match &best_candidate {
            None => true,
            Some((_, best_key)) => key
                .0
                .total_cmp(&best_key.0)
                .then_with(|| key.1.total_cmp(&best_key.1))
                .then_with(|| key.2.total_cmp(&best_key.2))
                .is_gt(),
        };
        if better {
            best_candidate = Some((unit, key));
        }
    }
    let (unit, _) = best_candidate.expect("candidate set non-empty");
    Ok(space.from_unit(&unit))
}

/// Run the suggest/evaluate loop for exactly `budget` evaluations.
/// Failed evaluations record `-inf` and the loop continues.
pub fn optimize<F>(
    mut objective: F,
    space: &ParamSpace,
    budget: usize,
    seed: u64,
) -> Result<TrialHistory, HyperoptError>
where
    F: FnMut(&[f64]) -> Result<f64, String>,
{
    space.validate()?;
    let need = space.len() + 2;
    if budget < need {
        return Err(HyperoptError::BudgetTooSmall { budget, need });
    }
    let mut history = TrialHistory::default();
    for _ in 0..budget {
        let params = suggest(&history, space, seed)?;
        let trial = match objective(&params) {
            Ok(score) if score.is_finite() => Trial {
                params,
                score,
                error: None,
            },
            Ok(score) => Trial {
                params,
                score: f64::NEG_INFINITY,
                error: Some(format!("non-finite score {score}")),
            },
            Err(e) => Trial {
                params,
                score: f64::NEG_INFINITY,
                error: Some(e),
            },
        };
        history.trials.push(trial);
    }
    Ok(history)
}

/// Tune one regressor: train candidate specs on `sub_train`, score R² on
/// `validation`, return the incumbent spec and the full trace. Algorithms
/// with no tunable dimensions come back unchanged with an empty trace.
pub fn tune_regressor(
    base: &RegressorSpec,
    sub_train: &FeatureMatrix,
    validation: &FeatureMatrix,
    budget: usize,
    seed: u64,
) -> Result<(RegressorSpec, TrialHistory), HyperoptError> {
    let space = ParamSpace::for_algorithm(base.algorithm);
    if space.is_empty() {
        return Ok((base.clone(), TrialHistory::default()));
    }
    let objective = |params: &[f64]| -> Result<f64, String> {
        let spec = spec_with_params(base, &space, params);
        let model = fit(&spec, sub_train).map_err(|e| e.to_string())?;
        let preds = model.predict(validation).map_err(|e| e.to_string())?;
        r2_score(&validation.target, &preds)
            .map(|m| m.r2)
            .map_err(|e| e.to_string())
    };
    let history = optimize(objective, &space, budget, seed)?;
    let best = match history.incumbent() {
        Some(t) => spec_with_params(base, &space, &t.params),
        None => base.clone(),
    };
    Ok((best, history))
}

/// Overlay a dense point from `space` onto a spec's hyperparameter map.
pub fn spec_with_params(base: &RegressorSpec, space: &ParamSpace, params: &[f64]) -> RegressorSpec {
    let mut spec = base.clone();
    for (dim, &value) in space.dims.iter().zip(params) {
        spec.hyperparams.insert(dim.name.clone(), value);
    }
    spec
}
