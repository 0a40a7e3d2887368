//! Gain-based importance ranking and recursive feature elimination.
//!
//! Elimination walks growing prefixes of the importance ranking, refits a
//! boosted-tree model on each prefix, scores it on a held-out validation
//! window, and stops the first time the validation score drops, keeping
//! the previous prefix. Greedy by construction; a brute-force prefix
//! search exists in the tests as the oracle.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evaluate::r2_score;
use crate::matrix::FeatureMatrix;
use crate::regressors::{fit, RegressorError, RegressorSpec};

#[derive(Debug, Error)]
pub enum SelectError {
    #[error("feature ranking requires a gbt algorithm, got {0:?}")]
    NotGbt(crate::regressors::Algorithm),
    #[error("ranking is empty")]
    EmptyRanking,
    #[error("ranking names column {0:?} missing from the matrix")]
    UnknownColumn(String),
    #[error(transparent)]
    Fit(#[from] RegressorError),
    #[error(transparent)]
    Score(#[from] crate::evaluate::EvaluateError),
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
}

/// Features with their importance, sorted descending; ties broken by the
/// original column index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ImportanceRanking {
    pub entries: Vec<(String, f64)>,
}

impl ImportanceRanking {
    /// Sort scores descending with index-ascending tie-breaks (stable
    /// sort over the original column order).
    pub fn from_scores(names: &[String], scores: &[f64]) -> Self {
        let mut order: Vec<usize> = (0..names.len()).collect();
        order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
        Self {
            entries: order
                .into_iter()
                .map(|i| (names[i].clone(), scores[i]))
                .collect(),
        }
    }

    pub fn names(&self) -> Vec<String> {
        self.entries.iter().map(|(n, _)| n.clone()).collect()
    }

    pub fn prefix(&self, len: usize) -> Vec<String> {
        self.entries
            .iter()
            .take(len)
            .map(|(n, _)| n.clone())
            .collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

/// The selected prefix with its achieved validation score.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureSubspace {
    pub selected: Vec<String>,
    pub validation_r2: f64,
    pub iterations_used: usize,
    /// Set when the very first prefix scored below zero; an empty
    /// subspace is unusable, so the size-1 prefix is returned instead.
    pub first_score_negative: bool,
}

/// Fit one boosted-tree model on the full training matrix and rank every
/// column by its aggregated split gain.
pub fn rank_features(
    train: &FeatureMatrix,
    gbt_spec: &RegressorSpec,
) -> Result<ImportanceRanking, SelectError> {
    if !gbt_spec.algorithm.is_gbt() {
        return Err(SelectError::NotGbt(gbt_spec.algorithm));
    }
    let model = fit(gbt_spec, train)?;
    Ok(ImportanceRanking::from_scores(
        &train.column_names,
        &model.feature_importance(),
    ))
}

/// Walk prefixes of the ranking (sizes 1, 2, 3, ...), refitting and
/// scoring each on `validation`; return the prefix before the first
/// score drop, or the full ranking if scores never drop.
pub fn recursive_eliminate(
    train: &FeatureMatrix,
    validation: &FeatureMatrix,
    ranking: &ImportanceRanking,
    gbt_spec: &RegressorSpec,
) -> Result<FeatureSubspace, SelectError> {
    if !gbt_spec.algorithm.is_gbt() {
        return Err(SelectError::NotGbt(gbt_spec.algorithm));
    }
    if ranking.is_empty() {
        return Err(SelectError::EmptyRanking);
    }
    for (name, _) in &ranking.entries {
        if train.column_index(name).is_none() {
            return Err(SelectError::UnknownColumn(name.clone()));
        }
    }

    let mut best_so_far = f64::NEG_INFINITY;
    for k in 1..=ranking.len() {
        let subspace = ranking.prefix(k);
        let score = prefix_score(train, validation, &subspace, gbt_spec)?;
        if k == 1 {
            if score < 0.0 {
                return Ok(FeatureSubspace {
                    selected: subspace,
                    validation_r2: score,
                    iterations_used: 1,
                    first_score_negative: true,
                });
            }
            best_so_far = score;
            continue;
        }
        if score < best_so_far {
            return Ok(FeatureSubspace {
                selected: ranking.prefix(k - 1),
                validation_r2: best_so_far,
                iterations_used: k,
                first_score_negative: false,
            });
        }
        best_so_far = score;
    }
    Ok(FeatureSubspace {
        selected: ranking.names(),
        validation_r2: best_so_far,
        iterations_used: ranking.len(),
        first_score_negative: false,
    })
}

/// Fit a fresh model on the named columns and score it on validation.
pub fn prefix_score(
    train: &FeatureMatrix,
    validation: &FeatureMatrix,
    columns: &[String],
    gbt_spec: &RegressorSpec,
) -> Result<f64, SelectError> {
    let train_sub = train.select_columns(columns)?;
    let val_sub = validation.select_columns(columns)?;
    let model = fit(gbt_spec, &train_sub)?;
    let preds = model.predict(&val_sub)?;
    Ok(r2_score(&val_sub.target, &preds)?.r2)
}
