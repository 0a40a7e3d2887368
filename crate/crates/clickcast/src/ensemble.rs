//! Ensembling strategies over the base-model zoo: simple average,
//! score-weighted average, stacking, and blending.
//!
//! Stack and blend meta learners train on out-of-sample base predictions
//! produced by chronological forward-chaining over the training window
//! (fit on a date-block prefix, predict the next block), never on
//! in-sample predictions. The bases are then refit on the whole window
//! for inference.

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::matrix::FeatureMatrix;
use crate::regressors::{fit, Algorithm, RegressorError, RegressorModel, RegressorSpec};

#[derive(Debug, Error)]
pub enum EnsembleError {
    #[error("need at least 2 models, got {0}")]
    TooFewModels(usize),
    #[error("expected {expected} values, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0:?} is not an allowed meta algorithm")]
    MetaNotAllowed(Algorithm),
    #[error("no base specs given")]
    NoBases,
    #[error("training window has {0} distinct days, need at least 2 for forward chaining")]
    NotEnoughHistory(usize),
    #[error("reduced feature column {0:?} not present")]
    UnknownReducedColumn(String),
    #[error("prediction column contains non-finite values")]
    NonFinite,
    #[error(transparent)]
    Fit(#[from] RegressorError),
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
}

/// Per-model prediction columns over a shared row set.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionMatrix {
    pub model_names: Vec<String>,
    /// One vector per model, all the same length.
    pub columns: Vec<Vec<f64>>,
}

impl PredictionMatrix {
    pub fn new(model_names: Vec<String>, columns: Vec<Vec<f64>>) -> Result<Self, EnsembleError> {
        if model_names.len() != columns.len() {
            return Err(EnsembleError::DimensionMismatch {
                expected: model_names.len(),
                got: columns.len(),
            });
        }
        let n = columns.first().map_or(0, |c| c.len());
        for c in &columns {
            if c.len() != n {
                return Err(EnsembleError::DimensionMismatch {
                    expected: n,
                    got: c.len(),
                });
            }
            if c.iter().any(|v| !v.is_finite()) {
                return Err(EnsembleError::NonFinite);
            }
        }
        Ok(Self {
            model_names,
            columns,
        })
    }

    pub fn n_models(&self) -> usize {
        self.columns.len()
    }

    pub fn n_rows(&self) -> usize {
        self.columns.first().map_or(0, |c| c.len())
    }
}

/// Rowwise arithmetic mean of the model outputs.
pub fn ensemble_average(preds: &PredictionMatrix) -> Result<Vec<f64>, EnsembleError> {
    if preds.n_models() < 2 {
        return Err(EnsembleError::TooFewModels(preds.n_models()));
    }
    let n = preds.n_rows();
    let k = preds.n_models() as f64;
    Ok((0..n)
        .map(|i| preds.columns.iter().map(|c| c[i]).sum::<f64>() / k)
        .collect())
}

/// Nonnegative weights summing to one.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WeightVector(pub Vec<f64>);

/// Turn per-model scores into weights: clamp below at a small epsilon
/// (negative scores would otherwise produce negative weights), then
/// normalize to sum to one.
pub fn normalize_weights(base_scores: &[f64]) -> Result<WeightVector, EnsembleError> {
    if base_scores.len() < 2 {
        return Err(EnsembleError::TooFewModels(base_scores.len()));
    }
    const EPS: f64 = 1e-6;
    let clamped: Vec<f64> = base_scores
        .iter()
        .map(|&s| if s.is_finite() { s.max(EPS) } else { EPS })
        .collect();
    let total: f64 = clamped.iter().sum();
    Ok(WeightVector(
        clamped.into_iter().map(|v| v / total).collect(),
    ))
}

/// Rowwise weighted sum of the model outputs.
pub fn ensemble_weighted(
    preds: &PredictionMatrix,
    weights: &WeightVector,
) -> Result<Vec<f64>, EnsembleError> {
    if weights.0.len() != preds.n_models() {
        return Err(EnsembleError::DimensionMismatch {
            expected: preds.n_models(),
            got: weights.0.len(),
        });
    }
    let n = preds.n_rows();
    Ok((0..n)
        .map(|i| {
            preds
                .columns
                .iter()
                .zip(&weights.0)
                .map(|(c, w)| w * c[i])
                .sum()
        })
        .collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EnsembleMode {
    Stack,
    Blend,
}

/// Meta algorithms admitted on top of stacked predictions.
pub const META_ALGORITHMS: [Algorithm; 5] = [
    Algorithm::Ols,
    Algorithm::Lasso,
    Algorithm::BayesianRidge,
    Algorithm::GbtLevelwise,
    Algorithm::GbtLeafwise,
];

/// A fitted stack or blend ensemble.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StackModel {
    pub mode: EnsembleMode,
    pub base_specs: Vec<RegressorSpec>,
    pub bases: Vec<RegressorModel>,
    pub meta_spec: RegressorSpec,
    pub meta: RegressorModel,
    /// Feature columns appended to the meta input in blend mode.
    pub reduced_features: Vec<String>,
    pub folds_used: usize,
}

/// Shared stacking groundwork: out-of-sample base predictions over the
/// train window plus bases refit on the full window. Reused across the
/// five meta choices so the fold models are fitted once.
pub struct StackingPrep {
    pub base_specs: Vec<RegressorSpec>,
    pub bases: Vec<RegressorModel>,
    pub base_column_names: Vec<String>,
    /// Row indices (into the train matrix) that received out-of-sample
    /// predictions.
    pub oos_rows: Vec<usize>,
    /// Per base, predictions aligned to `oos_rows`.
    pub oos_predictions: Vec<Vec<f64>>,
    pub folds_used: usize,
}

fn date_blocks(days: &[NaiveDate], n_blocks: usize) -> Vec<Vec<NaiveDate>> {
    (0..n_blocks)
        .map(|b| {
            let start = b * days.len() / n_blocks;
            let end = (b + 1) * days.len() / n_blocks;
            days[start..end].to_vec()
        })
        .filter(|b| !b.is_empty())
        .collect()
}

/// Fit fold models and produce the out-of-sample prediction columns;
/// bases are refit on the full window afterwards.
pub fn prepare_stacking(
    base_specs: &[RegressorSpec],
    train: &FeatureMatrix,
    folds: usize,
) -> Result<StackingPrep, EnsembleError> {
    let bases: Vec<RegressorModel> = base_specs
        .iter()
        .map(|spec| fit(spec, train))
        .collect::<Result<_, _>>()?;
    prepare_stacking_prefit(base_specs, bases, train, folds)
}

/// As [`prepare_stacking`], reusing already-fitted full-window base
/// models (they must correspond to `base_specs` on `train`).
pub fn prepare_stacking_prefit(
    base_specs: &[RegressorSpec],
    bases: Vec<RegressorModel>,
    train: &FeatureMatrix,
    folds: usize,
) -> Result<StackingPrep, EnsembleError> {
    if base_specs.is_empty() {
        return Err(EnsembleError::NoBases);
    }
    if bases.len() != base_specs.len() {
        return Err(EnsembleError::DimensionMismatch {
            expected: base_specs.len(),
            got: bases.len(),
        });
    }
    let mut days: Vec<NaiveDate> = train.row_keys.iter().map(|k| k.log_date).collect();
    days.sort_unstable();
    days.dedup();
    if days.len() < 2 {
        return Err(EnsembleError::NotEnoughHistory(days.len()));
    }
    let folds_used = folds.clamp(1, days.len() - 1);
    let blocks = date_blocks(&days, folds_used + 1);

    let mut oos_rows: Vec<usize> = Vec::new();
    let mut oos_predictions: Vec<Vec<f64>> = vec![Vec::new(); base_specs.len()];
    for block in &blocks[1..] {
        let cutoff = block[0];
        let block_end = *block.last().expect("non-empty block");
        let fit_rows = train.rows_before(cutoff);
        let predict_rows: Vec<usize> = (0..train.n_rows())
            .filter(|&r| {
                let d = train.row_keys[r].log_date;
                d >= cutoff && d <= block_end
            })
            .collect();
        if fit_rows.is_empty() || predict_rows.is_empty() {
            continue;
        }
        let fit_matrix = train.select_rows(&fit_rows);
        let predict_matrix = train.select_rows(&predict_rows);
        for (b, spec) in base_specs.iter().enumerate() {
            let model = fit(spec, &fit_matrix)?;
            oos_predictions[b].extend(model.predict(&predict_matrix)?);
        }
        oos_rows.extend(predict_rows);
    }

    let base_column_names: Vec<String> = base_specs
        .iter()
        .enumerate()
        .map(|(i, s)| format!("base_{i}_{}", s.algorithm.name()))
        .collect();

    Ok(StackingPrep {
        base_specs: base_specs.to_vec(),
        bases,
        base_column_names,
        oos_rows,
        oos_predictions,
        folds_used,
    })
}

impl StackingPrep {
    /// Meta-input matrix over the out-of-sample rows: base prediction
    /// columns, plus the reduced feature block in blend mode.
    fn meta_matrix(
        &self,
        train: &FeatureMatrix,
        reduced: &[String],
    ) -> Result<FeatureMatrix, EnsembleError> {
        let reduced_idx: Vec<usize> = reduced
            .iter()
            .map(|name| {
                train
                    .column_index(name)
                    .ok_or_else(|| EnsembleError::UnknownReducedColumn(name.clone()))
            })
            .collect::<Result<_, _>>()?;

        let mut names = self.base_column_names.clone();
        names.extend(reduced.iter().cloned());
        let mut rows = Vec::with_capacity(self.oos_rows.len());
        let mut target = Vec::with_capacity(self.oos_rows.len());
        let mut keys = Vec::with_capacity(self.oos_rows.len());
        for (pos, &r) in self.oos_rows.iter().enumerate() {
            let mut row: Vec<f64> = self.oos_predictions.iter().map(|col| col[pos]).collect();
            let src = train.row(r);
            row.extend(reduced_idx.iter().map(|&c| src[c]));
            rows.push(row);
            target.push(train.target[r]);
            keys.push(train.row_keys[r].clone());
        }
        Ok(FeatureMatrix::new(names, rows, target, keys)?)
    }

    /// Fit one meta learner on the prepared out-of-sample columns.
    pub fn finish(
        &self,
        meta_spec: &RegressorSpec,
        mode: EnsembleMode,
        reduced_features: &[String],
        train: &FeatureMatrix,
    ) -> Result<StackModel, EnsembleError> {
        if !META_ALGORITHMS.contains(&meta_spec.algorithm) {
            return Err(EnsembleError::MetaNotAllowed(meta_spec.algorithm));
        }
        let reduced = match mode {
            EnsembleMode::Stack => &[][..],
            EnsembleMode::Blend => reduced_features,
        };
        let meta_input = self.meta_matrix(train, reduced)?;
        let meta = fit(meta_spec, &meta_input)?;
        Ok(StackModel {
            mode,
            base_specs: self.base_specs.clone(),
            bases: self.bases.clone(),
            meta_spec: meta_spec.clone(),
            meta,
            reduced_features: reduced.to_vec(),
            folds_used: self.folds_used,
        })
    }
}

/// Fit a stack ensemble in one call.
pub fn stack_fit(
    base_specs: &[RegressorSpec],
    meta_spec: &RegressorSpec,
    train: &FeatureMatrix,
    folds: usize,
) -> Result<StackModel, EnsembleError> {
    if !META_ALGORITHMS.contains(&meta_spec.algorithm) {
        return Err(EnsembleError::MetaNotAllowed(meta_spec.algorithm));
    }
    let prep = prepare_stacking(base_specs, train, folds)?;
    prep.finish(meta_spec, EnsembleMode::Stack, &[], train)
}

/// Fit a blend ensemble: meta input is base predictions joined with the
/// named (dimensionally reduced) feature columns.
pub fn blend_fit(
    base_specs: &[RegressorSpec],
    meta_spec: &RegressorSpec,
    train: &FeatureMatrix,
    reduced_feature_names: &[String],
    folds: usize,
) -> Result<StackModel, EnsembleError> {
    if !META_ALGORITHMS.contains(&meta_spec.algorithm) {
        return Err(EnsembleError::MetaNotAllowed(meta_spec.algorithm));
    }
    // Validate the feature block before any fitting happens.
    for name in reduced_feature_names {
        if train.column_index(name).is_none() {
            return Err(EnsembleError::UnknownReducedColumn(name.clone()));
        }
    }
    let prep = prepare_stacking(base_specs, train, folds)?;
    prep.finish(meta_spec, EnsembleMode::Blend, reduced_feature_names, train)
}

/// Predict with a fitted stack/blend ensemble.
pub fn stack_predict(model: &StackModel, x: &FeatureMatrix) -> Result<Vec<f64>, EnsembleError> {
    let mut names: Vec<String> = model
        .base_specs
        .iter()
        .enumerate()
        .map(|(i, s)| format!("base_{i}_{}", s.algorithm.name()))
        .collect();
    names.extend(model.reduced_features.iter().cloned());

    let base_preds: Vec<Vec<f64>> = model
        .bases
        .iter()
        .map(|b| b.predict(x))
        .collect::<Result<_, _>>()?;
    let reduced_idx: Vec<usize> = model
        .reduced_features
        .iter()
        .map(|name| {
            x.column_index(name)
                .ok_or_else(|| EnsembleError::UnknownReducedColumn(name.clone()))
        })
        .collect::<Result<_, _>>()?;

    let mut rows = Vec::with_capacity(x.n_rows());
    for r in 0..x.n_rows() {
        let mut row: Vec<f64> = base_preds.iter().map(|col| col[r]).collect();
        let src = x.row(r);
        row.extend(reduced_idx.iter().map(|&c| src[c]));
        rows.push(row);
    }
    let meta_input = FeatureMatrix::new(names, rows, vec![0.0; x.n_rows()], x.row_keys.clone())?;
    Ok(model.meta.predict(&meta_input)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::matrix::RowKey;
    use crate::seeding::rng_from;
    use rand::Rng;

    fn preds(cols: Vec<Vec<f64>>) -> PredictionMatrix {
        let names = (0..cols.len()).map(|i| format!("m{i}")).collect();
        PredictionMatrix::new(names, cols).unwrap()
    }

    fn matrix_over_days(
        rows: Vec<Vec<f64>>,
        target: Vec<f64>,
        rows_per_day: usize,
    ) -> FeatureMatrix {
        let p = rows[0].len();
        let names = (0..p).map(|i| format!("f{i}")).collect();
        let keys = (0..rows.len())
            .map(|i| RowKey {
                entity_id: format!("e{}", i % rows_per_day),
                log_date: chrono::NaiveDate::from_ymd_opt(2020, 1, 1).unwrap()
                    + chrono::Days::new((i / rows_per_day) as u64),
            })
            .collect();
        FeatureMatrix::new(names, rows, target, keys).unwrap()
    }

    fn linear_dataset(n: usize, p: usize, seed: u64, noise: f64) -> FeatureMatrix {
        let mut rng = rng_from(seed);
        let rows: Vec<Vec<f64>> = (0..n)
            .map(|_| (0..p).map(|_| rng.random_range(0.0..1.0)).collect())
            .collect();
        let target: Vec<f64> = rows
            .iter()
            .map(|r| {
                2.0 * r[0]
                    + (if p > 1 { -1.5 * r[1] } else { 0.0 })
                    + 1.0
                    + rng.random_range(-noise..=noise)
            })
            .collect();
        matrix_over_days(rows, target, 4)
    }

    #[test]
    fn average_examples() {
        assert_eq!(
            ensemble_average(&preds(vec![vec![1.0], vec![3.0]])).unwrap(),
            vec![2.0]
        );
        assert_eq!(
            ensemble_average(&preds(vec![vec![1.0], vec![2.0], vec![6.0]])).unwrap(),
            vec![3.0]
        );
        let same = preds(vec![vec![4.0, 5.0], vec![4.0, 5.0]]);
        assert_eq!(ensemble_average(&same).unwrap(), vec![4.0, 5.0]);
        assert!(matches!(
            ensemble_average(&preds(vec![vec![1.0]])),
            Err(EnsembleError::TooFewModels(1))
        ));
    }

    #[test]
    fn weight_normalization_examples() {
        let w = normalize_weights(&[0.6, 0.2]).unwrap();
        assert!((w.0[0] - 0.75).abs() < 1e-12);
        assert!((w.0[1] - 0.25).abs() < 1e-12);

        let w = normalize_weights(&[0.5, 0.5, 0.5]).unwrap();
        for v in &w.0 {
            assert!((v - 1.0 / 3.0).abs() < 1e-12);
        }

        // Negative score clamps to epsilon before normalizing.
        let w = normalize_weights(&[0.5, -0.012]).unwrap();
        assert!((w.0[0] - 0.5 / 0.500001).abs() < 1e-9);
        assert!((w.0[1] - 1e-6 / 0.500001).abs() < 1e-9);
        assert!(w.0.iter().all(|&v| v >= 0.0));
        assert!((w.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn weighted_examples() {
        let p = preds(vec![vec![4.0], vec![8.0]]);
        let w = WeightVector(vec![0.75, 0.25]);
        assert_eq!(ensemble_weighted(&p, &w).unwrap(), vec![5.0]);

        // Uniform weights reduce to the simple average.
        let p = preds(vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![8.0, 0.0]]);
        let uniform = WeightVector(vec![1.0 / 3.0; 3]);
        let avg = ensemble_average(&p).unwrap();
        for (a, b) in ensemble_weighted(&p, &uniform).unwrap().iter().zip(&avg) {
            assert!((a - b).abs() < 1e-12);
        }

        // Full weight on one model returns it exactly.
        let w = WeightVector(vec![0.0, 1.0, 0.0]);
        assert_eq!(ensemble_weighted(&p, &w).unwrap(), vec![3.0, 4.0]);

        let short = WeightVector(vec![1.0]);
        assert!(matches!(
            ensemble_weighted(&p, &short),
            Err(EnsembleError::DimensionMismatch { .. })
        ));
    }

    #[test]
    fn permutation_equivariance() {
        let mut rng = rng_from(8);
        let cols: Vec<Vec<f64>> = (0..4)
            .map(|_| (0..6).map(|_| rng.random_range(-5.0..5.0)).collect())
            .collect();
        let scores = [0.7, 0.1, 0.4, 0.9];
        let p = preds(cols.clone());
        let w = normalize_weights(&scores).unwrap();
        let avg = ensemble_average(&p).unwrap();
        let wavg = ensemble_weighted(&p, &w).unwrap();

        let perm = [2usize, 0, 3, 1];
        let p2 = preds(perm.iter().map(|&i| cols[i].clone()).collect());
        let s2: Vec<f64> = perm.iter().map(|&i| scores[i]).collect();
        let w2 = normalize_weights(&s2).unwrap();
        for (a, b) in ensemble_average(&p2).unwrap().iter().zip(&avg) {
            assert!((a - b).abs() < 1e-12);
        }
        for (a, b) in ensemble_weighted(&p2, &w2).unwrap().iter().zip(&wavg) {
            assert!((a - b).abs() < 1e-12);
        }
    }

    #[test]
    fn stack_on_perfectly_learnable_data() {
        let train = linear_dataset(120, 2, 5, 0.0);
        let bases = vec![RegressorSpec::new(Algorithm::Ridge).with_param("alpha", 1e-6)];
        let meta = RegressorSpec::new(Algorithm::Ols);
        let model = stack_fit(&bases, &meta, &train, 5).unwrap();
        let preds = stack_predict(&model, &train).unwrap();
        let r2 = crate::evaluate::r2_score(&train.target, &preds).unwrap().r2;
        assert!(r2 > 1.0 - 1e-6, "stack train r2 {r2}");
    }

    #[test]
    fn meta_favors_the_exact_base() {
        let train = linear_dataset(160, 2, 6, 0.0);
        let bases = vec![
            // Base A learns the data exactly.
            RegressorSpec::new(Algorithm::Ridge).with_param("alpha", 1e-8),
            // Base B is crippled into near-constant output.
            RegressorSpec::new(Algorithm::ElasticNet).with_param("alpha", 1e5),
        ];
        let meta = RegressorSpec::new(Algorithm::Ols);
        let model = stack_fit(&bases, &meta, &train, 5).unwrap();
        let RegressorModel::Linear(lin) = &model.meta else {
            panic!("ols meta is linear")
        };
        assert!(
            lin.weights[0].abs() >= 10.0 * lin.weights[1].abs(),
            "meta weights {:?}",
            lin.weights
        );
    }

    #[test]
    fn disallowed_meta_rejected() {
        let train = linear_dataset(60, 2, 7, 0.1);
        let bases = vec![RegressorSpec::new(Algorithm::Ridge)];
        let err = stack_fit(&bases, &RegressorSpec::new(Algorithm::Huber), &train, 3);
        assert!(matches!(
            err,
            Err(EnsembleError::MetaNotAllowed(Algorithm::Huber))
        ));
    }

    #[test]
    fn blend_meta_input_width() {
        // 10 bases + 12 reduced features = 22 meta input columns.
        let train = linear_dataset(150, 12, 9, 0.05);
        let bases: Vec<RegressorSpec> = (0..10)
            .map(|i| RegressorSpec::new(Algorithm::Ridge).with_param("alpha", 0.1 + i as f64))
            .collect();
        let reduced: Vec<String> = train.column_names.clone();
        let meta = RegressorSpec::new(Algorithm::Ols);
        let model = blend_fit(&bases, &meta, &train, &reduced, 4).unwrap();
        let RegressorModel::Linear(lin) = &model.meta else {
            panic!()
        };
        assert_eq!(lin.weights.len(), 22);
        assert_eq!(model.meta.n_features(), 22);
    }

    #[test]
    fn stack_predictions_are_pure_and_identity_like() {
        let train = linear_dataset(100, 2, 11, 0.0);
        let bases = vec![RegressorSpec::new(Algorithm::Ols)];
        let meta = RegressorSpec::new(Algorithm::Ols);
        let model = stack_fit(&bases, &meta, &train, 5).unwrap();
        let a = stack_predict(&model, &train).unwrap();
        let b = stack_predict(&model, &train).unwrap();
        assert_eq!(a, b);
        let base_direct = model.bases[0].predict(&train).unwrap();
        for (s, d) in a.iter().zip(&base_direct) {
            assert!((s - d).abs() < 1e-6, "stack {s} vs base {d}");
        }
    }

    #[test]
    fn blend_without_reduced_features_equals_stack() {
        let train = linear_dataset(100, 3, 13, 0.1);
        let bases = vec![
            RegressorSpec::new(Algorithm::Ridge),
            RegressorSpec::new(Algorithm::Lasso).with_param("alpha", 0.01),
        ];
        let meta = RegressorSpec::new(Algorithm::BayesianRidge);
        let stack = stack_fit(&bases, &meta, &train, 5).unwrap();
        let blend = blend_fit(&bases, &meta, &train, &[], 5).unwrap();
        assert_eq!(
            stack_predict(&stack, &train).unwrap(),
            stack_predict(&blend, &train).unwrap()
        );
    }

    #[test]
    fn degenerate_bases_reduce_blend_to_meta_alone() {
        // Zero-mean target and an over-penalized lasso base: the base
        // predicts the training mean (zero), so the meta sees only the
        // feature block and must match a meta fitted on features alone.
        let mut train = linear_dataset(120, 2, 17, 0.1);
        let mean = train.target.iter().sum::<f64>() / train.target.len() as f64;
        for t in train.target.iter_mut() {
            *t -= mean;
        }
        let bases = vec![
            RegressorSpec::new(Algorithm::Lasso).with_param("alpha", 1e4),
            RegressorSpec::new(Algorithm::ElasticNet).with_param("alpha", 1e5),
        ];
        let meta = RegressorSpec::new(Algorithm::Lasso).with_param("alpha", 0.001);
        let reduced = train.column_names.clone();
        let blend = blend_fit(&bases, &meta, &train, &reduced, 5).unwrap();
        let blend_preds = stack_predict(&blend, &train).unwrap();
        let blend_r2 = crate::evaluate::r2_score(&train.target, &blend_preds)
            .unwrap()
            .r2;

        // Meta alone on the same out-of-sample rows' features.
        let prep = prepare_stacking(&bases, &train, 5).unwrap();
        let oos = train.select_rows(&prep.oos_rows);
        let meta_alone = fit(&meta, &oos).unwrap();
        let alone_preds = meta_alone.predict(&train).unwrap();
        let alone_r2 = crate::evaluate::r2_score(&train.target, &alone_preds)
            .unwrap()
            .r2;
        assert!(
            (blend_r2 - alone_r2).abs() < 1e-9,
            "blend {blend_r2} vs meta alone {alone_r2}"
        );
    }

    #[test]
    fn absent_reduced_column_fails_before_fitting() {
        let train = linear_dataset(60, 2, 19, 0.1);
        let bases = vec![RegressorSpec::new(Algorithm::Ridge)];
        let err = blend_fit(
            &bases,
            &RegressorSpec::new(Algorithm::Ols),
            &train,
            &["no_such_column".to_string()],
            3,
        );
        assert!(matches!(err, Err(EnsembleError::UnknownReducedColumn(_))));
    }

    #[test]
    fn meta_never_sees_in_sample_predictions_of_a_memorizer() {
        // A base expressive enough to memorize its training rows: its
        // in-sample predictions match the targets, but the forward-chained
        // out-of-sample columns fed to the meta must not.
        let train = linear_dataset(120, 2, 23, 2.0);
        let memorizer = RegressorSpec::new(Algorithm::GbtLevelwise)
            .with_param("rounds", 300.0)
            .with_param("learning_rate", 0.5)
            .with_param("max_depth", 8.0)
            .with_param("lambda", 1e-3)
            .with_param("min_samples_leaf", 1.0);
        let prep = prepare_stacking(std::slice::from_ref(&memorizer), &train, 5).unwrap();

        let in_sample = prep.bases[0].predict(&train).unwrap();
        let in_sample_mse: f64 = in_sample
            .iter()
            .zip(&train.target)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            / train.n_rows() as f64;
        assert!(
            in_sample_mse < 1e-4,
            "memorizer failed to memorize: {in_sample_mse}"
        );

        let oos_mse: f64 = prep
            .oos_rows
            .iter()
            .zip(&prep.oos_predictions[0])
            .map(|(&r, &p)| (p - train.target[r]) * (p - train.target[r]))
            .sum::<f64>()
            / prep.oos_rows.len() as f64;
        assert!(
            oos_mse > 100.0 * in_sample_mse,
            "oos column looks leaked: oos {oos_mse} vs in-sample {in_sample_mse}"
        );
    }

    proptest::proptest! {
        #[test]
        fn weights_always_sum_to_one_nonnegative(
            scores in proptest::collection::vec(-1e3f64..1e3, 2..10)
        ) {
            let w = normalize_weights(&scores).unwrap();
            proptest::prop_assert!((w.0.iter().sum::<f64>() - 1.0).abs() < 1e-12);
            proptest::prop_assert!(w.0.iter().all(|&v| v >= 0.0));
        }

        #[test]
        fn uniform_weights_match_average(
            rows in 1usize..20,
            k in 2usize..6,
            seed in 0u64..1000
        ) {
            let mut rng = rng_from(seed);
            let cols: Vec<Vec<f64>> = (0..k)
                .map(|_| (0..rows).map(|_| rng.random_range(-100.0..100.0)).collect())
                .collect();
            let p = preds(cols);
            let w = WeightVector(vec![1.0 / k as f64; k]);
            let avg = ensemble_average(&p).unwrap();
            let wavg = ensemble_weighted(&p, &w).unwrap();
            for (a, b) in avg.iter().zip(&wavg) {
                proptest::prop_assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn forward_chain_blocks_are_chronological() {
        let train = linear_dataset(80, 2, 29, 0.1);
        let prep = prepare_stacking(&[RegressorSpec::new(Algorithm::Ridge)], &train, 5).unwrap();
        // No out-of-sample row may come from the earliest block.
        let mut days: Vec<NaiveDate> = train.row_keys.iter().map(|k| k.log_date).collect();
        days.sort_unstable();
        days.dedup();
        let first_block_end = days[days.len() / (prep.folds_used + 1) - 1];
        for &r in &prep.oos_rows {
            assert!(train.row_keys[r].log_date > first_block_end);
        }
    }
}
