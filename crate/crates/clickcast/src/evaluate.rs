//! R² scoring, the rolling multi-day evaluation protocol, and report
//! rendering.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvaluateError {
    #[error("prediction length {got} != target length {expected}")]
    LengthMismatch { expected: usize, got: usize },
    #[error("need at least 2 samples to score")]
    TooFewSamples,
    #[error("table spans {got} days, need at least {need}")]
    InsufficientHistory { need: usize, got: usize },
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("serialization error: {0}")]
    Serde(#[from] serde_json::Error),
}

/// Coefficient of determination. May be negative (worse than predicting
/// the mean) and is `-inf` when the targets are constant but missed.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Metric {
    #[serde(with = "serde_extreme_f64")]
    pub r2: f64,
}

/// `1 - SS_res / SS_tot`. A constant target scores 1 when reproduced
/// exactly and `-inf` otherwise.
pub fn r2_score(y: &[f64], yhat: &[f64]) -> Result<Metric, EvaluateError> {
    if y.len() != yhat.len() {
        return Err(EvaluateError::LengthMismatch {
            expected: y.len(),
            got: yhat.len(),
        });
    }
    if y.len() < 2 {
        return Err(EvaluateError::TooFewSamples);
    }
    let mean = y.iter().sum::<f64>() / y.len() as f64;
    let ss_tot: f64 = y.iter().map(|v| (v - mean) * (v - mean)).sum();
    let ss_res: f64 = y.iter().zip(yhat).map(|(a, b)| (a - b) * (a - b)).sum();
    if ss_tot == 0.0 {
        return Ok(Metric {
            r2: if ss_res == 0.0 {
                1.0
            } else {
                f64::NEG_INFINITY
            },
        });
    }
    Ok(Metric {
        r2: 1.0 - ss_res / ss_tot,
    })
}

/// JSON-safe encoding for scores that may be infinite: finite values
/// stay numbers, the rest become tagged strings so round-trips are exact.
pub mod serde_extreme_f64 {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    pub fn serialize<S: Serializer>(v: &f64, s: S) -> Result<S::Ok, S::Error> {
        if v.is_finite() {
            v.serialize(s)
        } else if v.is_nan() {
            "nan".serialize(s)
        } else if *v > 0.0 {
            "inf".serialize(s)
        } else {
            "-inf".serialize(s)
        }
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<f64, D::Error> {
        #[derive(Deserialize)]
        #[serde(untagged)]
        enum Raw {
            Num(f64),
            Tag(String),
        }
        match Raw::deserialize(d)? {
            Raw::Num(v) => Ok(v),
            Raw::Tag(t) => match t.as_str() {
                "inf" => Ok(f64::INFINITY),
                "-inf" => Ok(f64::NEG_INFINITY),
                "nan" => Ok(f64::NAN),
                other => Err(serde::de::Error::custom(format!("bad float tag {other:?}"))),
            },
        }
    }
}

/// Outcome of one variant on one test day.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "snake_case")]
pub enum VariantScore {
    Ok {
        #[serde(with = "serde_extreme_f64")]
        r2: f64,
    },
    Failed {
        error: String,
    },
}

impl VariantScore {
    pub fn ok(&self) -> Option<f64> {
        match self {
            VariantScore::Ok { r2 } => Some(*r2),
            VariantScore::Failed { .. } => None,
        }
    }
}

/// One test day's scores, keyed by variant name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayScores {
    pub day: NaiveDate,
    pub scores: BTreeMap<String, VariantScore>,
}

/// Cross-day aggregate for one variant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VariantSummary {
    pub variant: String,
    /// Arithmetic mean over scored days; absent if every day failed.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_r2: Option<f64>,
    pub days_scored: usize,
    pub failures: usize,
}

/// Per-day, per-variant scores plus cross-day means, ordered for
/// deterministic serialization (summaries by descending mean, ties by
/// name).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub version: u32,
    pub days: Vec<DayScores>,
    pub summaries: Vec<VariantSummary>,
}

impl EvaluationReport {
    /// Build from per-day cells; summaries are recomputed, never stored
    /// independently of the cells.
    pub fn from_days(mut days: Vec<DayScores>) -> Self {
        days.sort_by_key(|d| d.day);
        let mut by_variant: BTreeMap<String, (f64, usize, usize)> = BTreeMap::new();
        for day in &days {
            for (name, score) in &day.scores {
                let entry = by_variant.entry(name.clone()).or_insert((0.0, 0, 0));
                match score.ok() {
                    Some(r2) if r2.is_finite() => {
                        entry.0 += r2;
                        entry.1 += 1;
                    }
                    // Non-finite markers count as failures for averaging.
                    Some(_) | None => entry.2 += 1,
                }
            }
        }
        let mut summaries: Vec<VariantSummary> = by_variant
            .into_iter()
            .map(|(variant, (sum, scored, failures))| VariantSummary {
                variant,
                mean_r2: if scored > 0 {
                    Some(sum / scored as f64)
                } else {
                    None
                },
                days_scored: scored,
                failures,
            })
            .collect();
        summaries.sort_by(|a, b| {
            let av = a.mean_r2.unwrap_or(f64::NEG_INFINITY);
            let bv = b.mean_r2.unwrap_or(f64::NEG_INFINITY);
            bv.total_cmp(&av).then_with(|| a.variant.cmp(&b.variant))
        });
        Self {
            version: 1,
            days,
            summaries,
        }
    }

    pub fn mean_of(&self, variant: &str) -> Option<f64> {
        self.summaries
            .iter()
            .find(|s| s.variant == variant)
            .and_then(|s| s.mean_r2)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }

    /// `day,variant,r2` rows (failures render as `error:` markers),
    /// then one `mean` row per variant, all in summary order.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("day,variant,r2\n");
        for summary in &self.summaries {
            for day in &self.days {
                if let Some(score) = day.scores.get(&summary.variant) {
                    let cell = match score {
                        VariantScore::Ok { r2 } => format_float(*r2),
                        VariantScore::Failed { error } => {
                            format!("error:{}", error.replace(',', ";"))
                        }
                    };
                    out.push_str(&format!("{},{},{}\n", day.day, summary.variant, cell));
                }
            }
        }
        for summary in &self.summaries {
            let cell = summary
                .mean_r2
                .map(format_float)
                .unwrap_or_else(|| "error:all_days_failed".into());
            out.push_str(&format!("mean,{},{}\n", summary.variant, cell));
        }
        out
    }

    /// Markdown summary table, best mean first.
    pub fn to_markdown(&self) -> String {
        let mut out = String::new();
        out.push_str("# Evaluation report\n\n");
        out.push_str(&format!(
            "{} test days, {} variants.\n\n",
            self.days.len(),
            self.summaries.len()
        ));
        out.push_str("| rank | variant | mean r2 | days scored | failures |\n");
        out.push_str("|------|---------|---------|-------------|----------|\n");
        for (i, s) in self.summaries.iter().enumerate() {
            let mean = s.mean_r2.map(format_float).unwrap_or_else(|| "-".into());
            out.push_str(&format!(
                "| {} | {} | {} | {} | {} |\n",
                i + 1,
                s.variant,
                mean,
                s.days_scored,
                s.failures
            ));
        }
        out.push_str("\n## Per-day scores\n\n| day | variant | r2 |\n|-----|---------|----|\n");
        for summary in &self.summaries {
            for day in &self.days {
                if let Some(score) = day.scores.get(&summary.variant) {
                    let cell = match score {
                        VariantScore::Ok { r2 } => format_float(*r2),
                        VariantScore::Failed { error } => format!("error: {error}"),
                    };
                    out.push_str(&format!(
                        "| {} | {} | {} |\n",
                        day.day, summary.variant, cell
                    ));
                }
            }
        }
        out
    }
}

fn format_float(v: f64) -> String {
    if v.is_finite() {
        format!("{v:.6}")
    } else if v > 0.0 {
        "inf".into()
    } else if v < 0.0 {
        "-inf".into()
    } else {
        "nan".into()
    }
}

// ---------------------------------------------------------------------
// Rolling multi-day protocol
// ---------------------------------------------------------------------

use crate::config::RunConfig;
use crate::dataset::{chronological_split, DatasetError, RawTable};
use crate::ensemble::{
    ensemble_average, ensemble_weighted, normalize_weights, prepare_stacking_prefit, stack_predict,
    EnsembleError, EnsembleMode, PredictionMatrix, StackModel,
};
use crate::feature_select::{
    rank_features, recursive_eliminate, FeatureSubspace, ImportanceRanking, SelectError,
};
use crate::hyperopt::{tune_regressor, HyperoptError, TrialHistory};
use crate::matrix::{FeatureMatrix, RowKey};
use crate::preprocess::{FittedPreprocess, PreprocessError};
use crate::regressors::{fit, RegressorError, RegressorModel, RegressorSpec};
use crate::seeding::{derive_seed, rng_from};
use rand::seq::SliceRandom;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("dataset: {0}")]
    Dataset(#[from] DatasetError),
    #[error("preprocess: {0}")]
    Preprocess(#[from] PreprocessError),
    #[error("feature selection: {0}")]
    Select(#[from] SelectError),
    #[error("tuning: {0}")]
    Hyperopt(#[from] HyperoptError),
    #[error("regressor: {0}")]
    Regressor(#[from] RegressorError),
    #[error("ensemble: {0}")]
    Ensemble(#[from] EnsembleError),
    #[error("evaluation: {0}")]
    Evaluate(#[from] EvaluateError),
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
}

/// Selection and tuning artifacts, frozen on the first window by default
/// and reusable across runs whose stage hashes match.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct FrozenArtifacts {
    pub selected: Vec<String>,
    pub subspace: Option<FeatureSubspace>,
    pub ranking: Option<ImportanceRanking>,
    /// Tuned specs keyed by algorithm name.
    pub tuned: BTreeMap<String, RegressorSpec>,
    /// Tuning traces keyed by algorithm name.
    pub trials: BTreeMap<String, TrialHistory>,
}

/// Per-day predictions of every variant, kept separate from scores so a
/// leakage audit can compare prediction artifacts across runs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DayPredictions {
    pub day: NaiveDate,
    pub row_keys: Vec<RowKey>,
    pub by_variant: BTreeMap<String, Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RollingOutcome {
    pub report: EvaluationReport,
    pub predictions: Vec<DayPredictions>,
    pub artifacts: FrozenArtifacts,
    /// Validation-window R² per base per day (the weighted-average
    /// weights derive from these, never from test scores).
    pub base_validation_scores: BTreeMap<NaiveDate, BTreeMap<String, f64>>,
    pub warnings: Vec<String>,
    /// Serialized model artifacts from the final test day:
    /// (file name, JSON content).
    pub final_day_models: Vec<(String, String)>,
}

/// Manifest form of a fitted ensemble, referencing base/meta model files.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct EnsembleManifest {
    version: u32,
    mode: EnsembleMode,
    meta_file: String,
    base_files: Vec<String>,
    reduced_features: Vec<String>,
    folds_used: usize,
}

struct DayContext {
    x_train: FeatureMatrix,
    x_test: FeatureMatrix,
    sub_train: FeatureMatrix,
    validation: FeatureMatrix,
}

/// One test day's preprocessed window: the full-column matrices before
/// any feature reduction.
pub struct WindowData {
    pub day: NaiveDate,
    pub fitted: FittedPreprocess,
    pub x_train: FeatureMatrix,
    pub x_test: FeatureMatrix,
    pub sub_train: FeatureMatrix,
    pub validation: FeatureMatrix,
    pub warnings: Vec<String>,
}

/// The sorted day list and the index of the first test day, validated
/// against the configured window.
pub fn resolve_window(
    table: &RawTable,
    cfg: &RunConfig,
) -> Result<(Vec<NaiveDate>, usize), PipelineError> {
    let days = table.distinct_days();
    let test_days = cfg.evaluation.test_days;
    let first_idx = match cfg.evaluation.first_test_day {
        Some(d) => days
            .iter()
            .position(|&x| x == d)
            .ok_or(DatasetError::DayAbsent(d))?,
        None => days.len().saturating_sub(test_days),
    };
    // Two train days minimum: one for the sub-train window, one for
    // validation.
    if first_idx < 2 {
        return Err(EvaluateError::InsufficientHistory {
            need: test_days + 2,
            got: days.len(),
        }
        .into());
    }
    if first_idx + test_days > days.len() {
        return Err(EvaluateError::InsufficientHistory {
            need: first_idx + test_days,
            got: days.len(),
        }
        .into());
    }
    Ok((days, first_idx))
}

/// Split at `days[day_idx]`, fit preprocessing on the train side, and
/// carve out the train/test/sub-train/validation matrices.
pub fn build_window(
    table: &RawTable,
    cfg: &RunConfig,
    days: &[NaiveDate],
    day_idx: usize,
) -> Result<WindowData, PipelineError> {
    let day = days[day_idx];
    let split = chronological_split(table, day)?;
    let mut test_part = split.test;
    if let Some(audit_seed) = cfg.audit.shuffle_test_targets {
        // Leakage audit: permute the day's targets before anything
        // downstream can see them. Predictions must not move.
        let mut targets: Vec<Option<f64>> = test_part.rows.iter().map(|r| r.target).collect();
        let mut rng = rng_from(derive_seed(audit_seed, &day.to_string()));
        targets.shuffle(&mut rng);
        for (rec, t) in test_part.rows.iter_mut().zip(targets) {
            rec.target = t;
        }
    }

    let fitted = FittedPreprocess::fit(&split.train, &cfg.preprocess)?;
    let warnings: Vec<String> = fitted
        .warnings
        .iter()
        .map(|w| format!("{day}: {w}"))
        .collect();
    let full = split.train.concat(&test_part);
    let matrix = fitted.transform(&full)?;

    let x_train = matrix.select_rows(&matrix.rows_before(day));
    let x_test = matrix.select_rows(&matrix.rows_on(day));

    // Validation slice: the last `validation_tail_days` of the train
    // window, never overlapping the test day.
    let train_day_list = &days[..day_idx];
    let tail = cfg
        .selection
        .validation_tail_days
        .min(train_day_list.len() - 1);
    let val_start = train_day_list[train_day_list.len() - tail];
    let sub_rows: Vec<usize> = (0..x_train.n_rows())
        .filter(|&r| x_train.row_keys[r].log_date < val_start)
        .collect();
    let val_rows: Vec<usize> = (0..x_train.n_rows())
        .filter(|&r| x_train.row_keys[r].log_date >= val_start)
        .collect();
    let sub_train = x_train.select_rows(&sub_rows);
    let validation = x_train.select_rows(&val_rows);

    Ok(WindowData {
        day,
        fitted,
        x_train,
        x_test,
        sub_train,
        validation,
        warnings,
    })
}

/// Rank and recursively eliminate features on one window; with selection
/// disabled, every column stays.
pub fn run_selection(
    window: &WindowData,
    cfg: &RunConfig,
) -> Result<(FrozenArtifacts, Vec<String>), PipelineError> {
    let mut artifacts = FrozenArtifacts::default();
    let mut warnings = Vec::new();
    let day = window.day;

    let mut selection_spec = cfg.selection.gbt.clone();
    selection_spec.seed = derive_seed(cfg.seed, "selection");
    if cfg.selection.enabled {
        let ranking = rank_features(&window.sub_train, &selection_spec)?;
        let subspace = recursive_eliminate(
            &window.sub_train,
            &window.validation,
            &ranking,
            &selection_spec,
        )?;
        if subspace.first_score_negative {
            warnings.push(format!(
                "{day}: first elimination iteration scored below zero; keeping size-1 subspace"
            ));
        }
        artifacts.selected = subspace.selected.clone();
        artifacts.ranking = Some(ranking);
        artifacts.subspace = Some(subspace);
    } else {
        artifacts.selected = window.x_train.column_names.clone();
    }
    Ok((artifacts, warnings))
}

/// Tune the configured algorithms over the reduced feature space.
/// Returns (tuned specs, traces) keyed by algorithm name.
#[allow(clippy::type_complexity)]
pub fn run_tuning(
    window: &WindowData,
    cfg: &RunConfig,
    selected: &[String],
) -> Result<
    (
        BTreeMap<String, RegressorSpec>,
        BTreeMap<String, TrialHistory>,
        Vec<String>,
    ),
    PipelineError,
> {
    let mut tuned = BTreeMap::new();
    let mut trials = BTreeMap::new();
    let mut warnings = Vec::new();
    if !cfg.tuning.enabled {
        return Ok((tuned, trials, warnings));
    }
    let sub_train_r = window.sub_train.select_columns(selected)?;
    let validation_r = window.validation.select_columns(selected)?;
    for alg in &cfg.tuning.algorithms {
        let Some(base) = cfg.ensemble.bases.iter().find(|s| s.algorithm == *alg) else {
            warnings.push(format!(
                "{}: {alg:?} tuned but not in base registry",
                window.day
            ));
            continue;
        };
        let mut base = base.clone();
        base.seed = derive_seed(cfg.seed, &format!("tune-fit:{}", alg.name()));
        let (best, trace) = tune_regressor(
            &base,
            &sub_train_r,
            &validation_r,
            cfg.tuning.budget,
            derive_seed(cfg.seed, &format!("tune:{}", alg.name())),
        )?;
        tuned.insert(alg.name().to_string(), best);
        trials.insert(alg.name().to_string(), trace);
    }
    Ok((tuned, trials, warnings))
}

/// Selection followed by tuning on the same window.
pub fn select_and_tune(
    window: &WindowData,
    cfg: &RunConfig,
) -> Result<(FrozenArtifacts, Vec<String>), PipelineError> {
    let (mut artifacts, mut warnings) = run_selection(window, cfg)?;
    let (tuned, trials, mut w2) = run_tuning(window, cfg, &artifacts.selected)?;
    artifacts.tuned = tuned;
    artifacts.trials = trials;
    warnings.append(&mut w2);
    Ok((artifacts, warnings))
}

/// Fit the first test window's preprocessing, selection, and tuning
/// artifacts; the standalone pipeline stages and the full evaluation
/// share this path so their outputs are interchangeable.
pub fn first_window_artifacts(
    table: &RawTable,
    cfg: &RunConfig,
) -> Result<(WindowData, FrozenArtifacts, Vec<String>), PipelineError> {
    let (days, first_idx) = resolve_window(table, cfg)?;
    let window = build_window(table, cfg, &days, first_idx)?;
    let (artifacts, mut warnings) = select_and_tune(&window, cfg)?;
    let mut all = window.warnings.clone();
    all.append(&mut warnings);
    Ok((window, artifacts, all))
}

/// Run the full protocol: for each of the configured consecutive test
/// days, refit preprocessing on the growing train window, train the base
/// registry, and score the individual, averaged, weighted, stack, and
/// blend variants against the day's targets. Selection and tuning run on
/// the first window and are frozen unless `tuning.per_day` is set.
pub fn rolling_evaluate(
    table: &RawTable,
    cfg: &RunConfig,
    frozen: Option<FrozenArtifacts>,
) -> Result<RollingOutcome, PipelineError> {
    let (days, first_idx) = resolve_window(table, cfg)?;
    let test_days = cfg.evaluation.test_days;

    let base_names = cfg.base_names();
    let mut warnings = Vec::new();
    let mut artifacts = frozen.clone().unwrap_or_default();
    let mut have_artifacts = frozen.is_some();
    let mut day_scores = Vec::with_capacity(test_days);
    let mut predictions = Vec::with_capacity(test_days);
    let mut base_validation_scores = BTreeMap::new();
    let mut final_day_models = Vec::new();

    for day_no in 0..test_days {
        let window = build_window(table, cfg, &days, first_idx + day_no)?;
        let day = window.day;
        warnings.extend(window.warnings.iter().cloned());

        if !have_artifacts || cfg.tuning.per_day {
            let (a, mut w) = select_and_tune(&window, cfg)?;
            artifacts = a;
            warnings.append(&mut w);
            have_artifacts = true;
        }

        let ctx = DayContext {
            x_train: window.x_train.select_columns(&artifacts.selected)?,
            x_test: window.x_test.select_columns(&artifacts.selected)?,
            sub_train: window.sub_train.select_columns(&artifacts.selected)?,
            validation: window.validation.select_columns(&artifacts.selected)?,
        };

        // The day's base specs: registry entries with tuned overrides and
        // derived seeds.
        let day_specs: Vec<RegressorSpec> = cfg
            .ensemble
            .bases
            .iter()
            .zip(&base_names)
            .map(|(spec, name)| {
                let mut s = artifacts
                    .tuned
                    .get(spec.algorithm.name())
                    .cloned()
                    .unwrap_or_else(|| spec.clone());
                s.seed = derive_seed(cfg.seed, &format!("fit:{name}"));
                s
            })
            .collect();

        let (scores, day_preds, val_scores, models) =
            evaluate_one_day(cfg, &base_names, &day_specs, &ctx, day_no + 1 == test_days)?;
        base_validation_scores.insert(day, val_scores);
        day_scores.push(DayScores { day, scores });
        predictions.push(DayPredictions {
            day,
            row_keys: ctx.x_test.row_keys.clone(),
            by_variant: day_preds,
        });
        if let Some(models) = models {
            final_day_models = models;
        }
    }

    Ok(RollingOutcome {
        report: EvaluationReport::from_days(day_scores),
        predictions,
        artifacts,
        base_validation_scores,
        warnings,
        final_day_models,
    })
}

type DayEval = (
    BTreeMap<String, VariantScore>,
    BTreeMap<String, Vec<f64>>,
    BTreeMap<String, f64>,
    Option<Vec<(String, String)>>,
);

/// Train and score the 22-variant panel on one day's window.
fn evaluate_one_day(
    cfg: &RunConfig,
    base_names: &[String],
    day_specs: &[RegressorSpec],
    ctx: &DayContext,
    keep_models: bool,
) -> Result<DayEval, PipelineError> {
    let mut scores: BTreeMap<String, VariantScore> = BTreeMap::new();
    let mut preds_out: BTreeMap<String, Vec<f64>> = BTreeMap::new();
    let truth = &ctx.x_test.target;

    let record = |name: &str,
                  outcome: Result<Vec<f64>, String>,
                  scores: &mut BTreeMap<String, VariantScore>,
                  preds_out: &mut BTreeMap<String, Vec<f64>>| {
        match outcome {
            Ok(p) => {
                let score = match r2_score(truth, &p) {
                    Ok(m) => VariantScore::Ok { r2: m.r2 },
                    Err(e) => VariantScore::Failed {
                        error: e.to_string(),
                    },
                };
                scores.insert(name.to_string(), score);
                preds_out.insert(name.to_string(), p);
            }
            Err(e) => {
                scores.insert(name.to_string(), VariantScore::Failed { error: e });
            }
        }
    };

    // Individual bases on the full train window.
    let mut fitted_bases: Vec<Option<RegressorModel>> = Vec::with_capacity(day_specs.len());
    for (spec, name) in day_specs.iter().zip(base_names) {
        match fit(spec, &ctx.x_train) {
            Ok(model) => {
                let outcome = model.predict(&ctx.x_test).map_err(|e| e.to_string());
                record(name, outcome, &mut scores, &mut preds_out);
                fitted_bases.push(Some(model));
            }
            Err(e) => {
                record(name, Err(e.to_string()), &mut scores, &mut preds_out);
                fitted_bases.push(None);
            }
        }
    }

    // Validation R² per base: refit on the sub-train slice, score on the
    // validation tail. These feed the weighted average.
    let mut val_scores: BTreeMap<String, f64> = BTreeMap::new();
    for (spec, name) in day_specs.iter().zip(base_names) {
        let r2 = fit(spec, &ctx.sub_train)
            .and_then(|m| m.predict(&ctx.validation))
            .ok()
            .and_then(|p| r2_score(&ctx.validation.target, &p).ok())
            .map(|m| m.r2)
            .unwrap_or(f64::NEG_INFINITY);
        val_scores.insert(name.clone(), r2);
    }

    let all_bases_ok = fitted_bases.iter().all(|b| b.is_some());
    let mut final_models: Option<Vec<(String, String)>> = None;

    if all_bases_ok {
        let base_models: Vec<RegressorModel> = fitted_bases
            .into_iter()
            .map(|b| b.expect("checked"))
            .collect();
        let base_preds: Vec<Vec<f64>> = base_names
            .iter()
            .map(|n| preds_out.get(n).cloned().expect("recorded above"))
            .collect();
        let pred_matrix =
            PredictionMatrix::new(base_names.to_vec(), base_preds).map_err(PipelineError::from)?;

        record(
            "average",
            ensemble_average(&pred_matrix).map_err(|e| e.to_string()),
            &mut scores,
            &mut preds_out,
        );
        let weight_inputs: Vec<f64> = base_names.iter().map(|n| val_scores[n]).collect();
        let weighted = normalize_weights(&weight_inputs)
            .and_then(|w| ensemble_weighted(&pred_matrix, &w))
            .map_err(|e| e.to_string());
        record("weighted_average", weighted, &mut scores, &mut preds_out);

        // One shared forward-chaining pass feeds every stack/blend meta.
        let mut kept: Vec<(String, String)> = Vec::new();
        match prepare_stacking_prefit(day_specs, base_models, &ctx.x_train, cfg.ensemble.folds) {
            Ok(prep) => {
                if keep_models {
                    for ((spec, name), model) in day_specs.iter().zip(base_names).zip(&prep.bases) {
                        kept.push((
                            format!("base_{name}.json"),
                            crate::regressors::save_model(spec, model),
                        ));
                    }
                }
                let reduced: Vec<String> = ctx.x_train.column_names.clone();
                for meta_alg in &cfg.ensemble.metas {
                    let mut meta_spec = meta_spec_for(day_specs, *meta_alg);
                    meta_spec.seed = derive_seed(cfg.seed, &format!("meta:{}", meta_alg.name()));
                    for mode in [EnsembleMode::Stack, EnsembleMode::Blend] {
                        let tag = match mode {
                            EnsembleMode::Stack => format!("stack_{}", meta_alg.name()),
                            EnsembleMode::Blend => format!("blend_{}", meta_alg.name()),
                        };
                        let outcome = prep
                            .finish(&meta_spec, mode, &reduced, &ctx.x_train)
                            .and_then(|model| {
                                if keep_models {
                                    kept.extend(ensemble_artifacts(
                                        &tag, &meta_spec, &model, base_names,
                                    ));
                                }
                                stack_predict(&model, &ctx.x_test)
                            })
                            .map_err(|e| e.to_string());
                        record(&tag, outcome, &mut scores, &mut preds_out);
                    }
                }
            }
            Err(e) => {
                for meta_alg in &cfg.ensemble.metas {
                    for mode_tag in ["stack", "blend"] {
                        scores.insert(
                            format!("{mode_tag}_{}", meta_alg.name()),
                            VariantScore::Failed {
                                error: format!("stacking prep failed: {e}"),
                            },
                        );
                    }
                }
            }
        }
        if keep_models {
            final_models = Some(kept);
        }
    } else {
        let msg = "one or more base fits failed".to_string();
        for name in ["average", "weighted_average"] {
            scores.insert(name.into(), VariantScore::Failed { error: msg.clone() });
        }
        for meta_alg in &cfg.ensemble.metas {
            for mode_tag in ["stack", "blend"] {
                scores.insert(
                    format!("{mode_tag}_{}", meta_alg.name()),
                    VariantScore::Failed { error: msg.clone() },
                );
            }
        }
    }

    Ok((scores, preds_out, val_scores, final_models))
}

/// Meta learners reuse the day's (possibly tuned) spec when their
/// algorithm also runs as a base; otherwise registry defaults.
fn meta_spec_for(day_specs: &[RegressorSpec], alg: crate::regressors::Algorithm) -> RegressorSpec {
    day_specs
        .iter()
        .find(|s| s.algorithm == alg)
        .cloned()
        .unwrap_or_else(|| RegressorSpec::new(alg))
}

/// The meta model file plus a manifest referencing the base model files.
fn ensemble_artifacts(
    tag: &str,
    meta_spec: &RegressorSpec,
    model: &StackModel,
    base_names: &[String],
) -> Vec<(String, String)> {
    let meta_file = format!("meta_{tag}.json");
    let manifest = EnsembleManifest {
        version: 1,
        mode: model.mode,
        meta_file: meta_file.clone(),
        base_files: base_names
            .iter()
            .map(|n| format!("base_{n}.json"))
            .collect(),
        reduced_features: model.reduced_features.clone(),
        folds_used: model.folds_used,
    };
    vec![
        (
            meta_file,
            crate::regressors::save_model(meta_spec, &model.meta),
        ),
        (
            format!("ensemble_{tag}.json"),
            serde_json::to_string_pretty(&manifest).expect("manifest serializes"),
        ),
    ]
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn perfect_prediction_scores_one() {
        let y = vec![1.0, 2.0, 3.0];
        assert_eq!(r2_score(&y, &y).unwrap().r2, 1.0);
    }

    #[test]
    fn mean_prediction_scores_zero() {
        let y = vec![1.0, 2.0, 3.0];
        let m = r2_score(&y, &[2.0, 2.0, 2.0]).unwrap();
        assert!(m.r2.abs() < 1e-15);
    }

    #[test]
    fn hand_computed_example() {
        // SS_res = 1, SS_tot = 2 -> 0.5
        let m = r2_score(&[1.0, 2.0, 3.0], &[1.0, 2.0, 4.0]).unwrap();
        assert_eq!(m.r2, 0.5);
    }

    #[test]
    fn constant_target_conventions() {
        assert_eq!(r2_score(&[5.0, 5.0], &[5.0, 5.0]).unwrap().r2, 1.0);
        assert_eq!(
            r2_score(&[5.0, 5.0], &[5.0, 6.0]).unwrap().r2,
            f64::NEG_INFINITY
        );
    }

    #[test]
    fn length_and_size_checks() {
        assert!(matches!(
            r2_score(&[1.0, 2.0], &[1.0]),
            Err(EvaluateError::LengthMismatch { .. })
        ));
        assert!(matches!(
            r2_score(&[1.0], &[1.0]),
            Err(EvaluateError::TooFewSamples)
        ));
    }

    #[test]
    fn shift_invariance_via_recomputation() {
        let y = vec![3.0, 1.0, 4.0, 1.0, 5.0];
        let yhat = vec![2.9, 1.2, 3.8, 1.4, 4.9];
        let base = r2_score(&y, &yhat).unwrap().r2;
        let c = 17.5;
        let y2: Vec<f64> = y.iter().map(|v| v + c).collect();
        let yhat2: Vec<f64> = yhat.iter().map(|v| v + c).collect();
        let shifted = r2_score(&y2, &yhat2).unwrap().r2;
        assert!((base - shifted).abs() < 1e-12);
    }

    fn sample_report() -> EvaluationReport {
        let d1: NaiveDate = "2020-03-01".parse().unwrap();
        let d2: NaiveDate = "2020-03-02".parse().unwrap();
        let mk = |day, a: f64, b: f64| DayScores {
            day,
            scores: BTreeMap::from([
                ("alpha".to_string(), VariantScore::Ok { r2: a }),
                ("beta".to_string(), VariantScore::Ok { r2: b }),
                (
                    "gamma".to_string(),
                    VariantScore::Failed {
                        error: "boom".into(),
                    },
                ),
            ]),
        };
        EvaluationReport::from_days(vec![mk(d2, 0.4, 0.8), mk(d1, 0.6, 0.6)])
    }

    #[test]
    fn summaries_are_means_sorted_descending() {
        let r = sample_report();
        assert_eq!(r.summaries[0].variant, "beta");
        assert!((r.summaries[0].mean_r2.unwrap() - 0.7).abs() < 1e-12);
        assert!((r.summaries[1].mean_r2.unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(r.summaries[2].variant, "gamma");
        assert_eq!(r.summaries[2].mean_r2, None);
        assert_eq!(r.summaries[2].failures, 2);
        // Days re-sorted chronologically.
        assert!(r.days[0].day < r.days[1].day);
    }

    #[test]
    fn stored_means_match_recomputation() {
        let r = sample_report();
        for s in &r.summaries {
            let cells: Vec<f64> = r
                .days
                .iter()
                .filter_map(|d| d.scores.get(&s.variant).and_then(|v| v.ok()))
                .collect();
            if let Some(mean) = s.mean_r2 {
                let recomputed = cells.iter().sum::<f64>() / cells.len() as f64;
                assert!((mean - recomputed).abs() < 1e-12);
            } else {
                assert!(cells.is_empty());
            }
        }
    }

    #[test]
    fn json_roundtrip_is_identity() {
        let r = sample_report();
        let back = EvaluationReport::from_json(&r.to_json()).unwrap();
        assert_eq!(r, back);
    }

    #[test]
    fn extreme_scores_survive_json() {
        let d: NaiveDate = "2020-03-01".parse().unwrap();
        let r = EvaluationReport::from_days(vec![DayScores {
            day: d,
            scores: BTreeMap::from([
                (
                    "x".to_string(),
                    VariantScore::Ok {
                        r2: f64::NEG_INFINITY,
                    },
                ),
                ("y".to_string(), VariantScore::Ok { r2: 0.25 }),
            ]),
        }]);
        let back = EvaluationReport::from_json(&r.to_json()).unwrap();
        assert_eq!(r, back);
        // Non-finite cells are excluded from means and counted as failures.
        let x = back.summaries.iter().find(|s| s.variant == "x").unwrap();
        assert_eq!(x.mean_r2, None);
        assert_eq!(x.failures, 1);
    }

    #[test]
    fn csv_layout_contract() {
        let r = sample_report();
        let csv = r.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "day,variant,r2");
        // First block is the best variant's per-day rows.
        assert!(lines.next().unwrap().starts_with("2020-03-01,beta,"));
        assert!(csv.contains("mean,beta,0.700000"));
        assert!(csv.contains("2020-03-02,gamma,error:boom"));
    }

    #[test]
    fn markdown_sorts_winners_first() {
        let r = sample_report();
        let md = r.to_markdown();
        let beta_pos = md.find("| 1 | beta |").unwrap();
        let alpha_pos = md.find("| 2 | alpha |").unwrap();
        assert!(beta_pos < alpha_pos);
    }

    #[test]
    fn report_layout_handles_a_realistic_score_panel() {
        // Format fixture with a plausible published-style score spread:
        // ensemble variants on top, one strongly negative base at the
        // bottom. Checks layout only; the values are not reproducible
        // quantities.
        let day: NaiveDate = "2020-03-01".parse().unwrap();
        let cells = [
            ("gbt_levelwise", 0.485),
            ("gbt_leafwise", 0.538),
            ("sgd_linear", 0.497),
            ("lasso", 0.496),
            ("lasso_lars", 0.272),
            ("ridge", 0.578),
            ("bayesian_ridge", 0.579),
            ("huber", 0.514),
            ("passive_aggressive", 0.557),
            ("elastic_net", -0.012),
            ("weighted_average", 0.597),
            ("stack_ols", 0.639),
        ];
        let scores: BTreeMap<String, VariantScore> = cells
            .iter()
            .map(|(n, v)| (n.to_string(), VariantScore::Ok { r2: *v }))
            .collect();
        let report = EvaluationReport::from_days(vec![DayScores { day, scores }]);

        // Headline comparison: the best stack leads the best individual.
        assert_eq!(report.summaries[0].variant, "stack_ols");
        assert!((report.summaries[0].mean_r2.unwrap() - 0.639).abs() < 1e-12);
        let best_individual = report
            .summaries
            .iter()
            .find(|s| !s.variant.starts_with("stack") && !s.variant.contains("average"))
            .unwrap();
        assert_eq!(best_individual.variant, "bayesian_ridge");
        assert!((best_individual.mean_r2.unwrap() - 0.579).abs() < 1e-12);
        assert_eq!(report.summaries.last().unwrap().variant, "elastic_net");

        let csv = report.to_csv();
        assert!(csv.starts_with("day,variant,r2\n2020-03-01,stack_ols,0.639000\n"));
        let md = report.to_markdown();
        assert!(md.find("stack_ols").unwrap() < md.find("bayesian_ridge").unwrap());
    }
}
