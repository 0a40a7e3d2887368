//! Run configuration: one JSON document drives every stage.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dataset::{Schema, SyntheticConfig};
use crate::ensemble::META_ALGORITHMS;
use crate::preprocess::PreprocessConfig;
use crate::regressors::{Algorithm, RegressorSpec};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("input file {0:?} does not exist")]
    MissingInput(PathBuf),
    #[error("{0}")]
    Invalid(String),
}

/// Data source: exactly one of a CSV table or a synthetic generator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum InputConfig {
    Csv { path: PathBuf },
    Synthetic(SyntheticConfig),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SelectionConfig {
    pub enabled: bool,
    /// The ranking/elimination model; must be a gbt variant.
    pub gbt: RegressorSpec,
    /// Days peeled off the end of each training window as the validation
    /// slice for selection, tuning, and ensemble weights.
    pub validation_tail_days: usize,
}

impl Default for SelectionConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            gbt: RegressorSpec::new(Algorithm::GbtLevelwise),
            validation_tail_days: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TuningConfig {
    pub enabled: bool,
    /// Objective evaluations per tuned model.
    pub budget: usize,
    /// Algorithms whose hyperparameters are tuned; the rest keep their
    /// registry defaults.
    pub algorithms: Vec<Algorithm>,
    /// Re-run selection and tuning on every test day's window instead of
    /// freezing the first window's artifacts.
    pub per_day: bool,
}

impl Default for TuningConfig {
    fn default() -> Self {
        Self {
            enabled: true,
            budget: 50,
            algorithms: vec![
                Algorithm::GbtLevelwise,
                Algorithm::GbtLeafwise,
                Algorithm::SgdLinear,
            ],
            per_day: false,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnsembleConfig {
    pub bases: Vec<RegressorSpec>,
    pub metas: Vec<Algorithm>,
    /// Forward-chaining folds for out-of-sample meta inputs.
    pub folds: usize,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        // The stock registry: every base at its defaults except elastic
        // net, which ships deliberately over-penalized so the weighted
        // average has a bad model to down-weight.
        let bases = Algorithm::BASES
            .iter()
            .map(|&alg| {
                let spec = RegressorSpec::new(alg);
                if alg == Algorithm::ElasticNet {
                    spec.with_param("alpha", 1e5)
                } else {
                    spec
                }
            })
            .collect();
        Self {
            bases,
            metas: META_ALGORITHMS.to_vec(),
            folds: 5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvaluationWindow {
    /// First test day; `None` takes the last `test_days` days of the
    /// table.
    pub first_test_day: Option<chrono::NaiveDate>,
    pub test_days: usize,
}

impl Default for EvaluationWindow {
    fn default() -> Self {
        Self {
            first_test_day: None,
            test_days: 11,
        }
    }
}

/// Debug/audit switches.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AuditConfig {
    /// When set, each test day's targets are shuffled (with this seed)
    /// after the chronological split and before anything downstream runs;
    /// a leak-free pipeline produces identical predictions and different
    /// scores.
    pub shuffle_test_targets: Option<u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub seed: u64,
    pub input: InputConfig,
    /// Output directory; the CLI `--out` flag overrides it.
    pub output_dir: Option<PathBuf>,
    /// Column roles for CSV input.
    pub schema: Schema,
    pub preprocess: PreprocessConfig,
    pub selection: SelectionConfig,
    pub tuning: TuningConfig,
    pub ensemble: EnsembleConfig,
    pub evaluation: EvaluationWindow,
    pub audit: AuditConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 42,
            input: InputConfig::Synthetic(SyntheticConfig::default()),
            output_dir: None,
            schema: Schema::default(),
            preprocess: PreprocessConfig::default(),
            selection: SelectionConfig::default(),
            tuning: TuningConfig::default(),
            ensemble: EnsembleConfig::default(),
            evaluation: EvaluationWindow::default(),
            audit: AuditConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn from_json(json: &str) -> Result<Self, ConfigError> {
        let cfg: RunConfig = serde_json::from_str(json).map_err(|e| ConfigError::Parse {
            line: e.line(),
            column: e.column(),
            message: e.to_string(),
        })?;
        Ok(cfg)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("config serializes")
    }

    /// Check internal consistency and referenced files; run before any
    /// artifact is created.
    pub fn validate(&self) -> Result<(), ConfigError> {
        match &self.input {
            InputConfig::Csv { path } => {
                if !path.exists() {
                    return Err(ConfigError::MissingInput(path.clone()));
                }
            }
            InputConfig::Synthetic(synth) => {
                synth
                    .validate()
                    .map_err(|e| ConfigError::Invalid(e.to_string()))?;
            }
        }
        if self.evaluation.test_days == 0 {
            return Err(ConfigError::Invalid(
                "evaluation.test_days must be >= 1".into(),
            ));
        }
        if self.ensemble.bases.len() < 2 {
            return Err(ConfigError::Invalid(
                "ensemble.bases needs at least 2 models".into(),
            ));
        }
        if self.ensemble.folds == 0 {
            return Err(ConfigError::Invalid("ensemble.folds must be >= 1".into()));
        }
        for meta in &self.ensemble.metas {
            if !META_ALGORITHMS.contains(meta) {
                return Err(ConfigError::Invalid(format!(
                    "{meta:?} is not an allowed meta algorithm"
                )));
            }
        }
        if self.ensemble.metas.is_empty() {
            return Err(ConfigError::Invalid(
                "ensemble.metas must not be empty".into(),
            ));
        }
        for spec in &self.ensemble.bases {
            spec.resolve()
                .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        }
        if !self.selection.gbt.algorithm.is_gbt() {
            return Err(ConfigError::Invalid(
                "selection.gbt must be a gbt variant".into(),
            ));
        }
        self.selection
            .gbt
            .resolve()
            .map_err(|e| ConfigError::Invalid(e.to_string()))?;
        if self.selection.validation_tail_days == 0 {
            return Err(ConfigError::Invalid(
                "selection.validation_tail_days must be >= 1".into(),
            ));
        }
        if self.tuning.enabled {
            for alg in &self.tuning.algorithms {
                let dims = crate::hyperopt::ParamSpace::for_algorithm(*alg).len();
                if dims > 0 && self.tuning.budget < dims + 2 {
                    return Err(ConfigError::Invalid(format!(
                        "tuning.budget {} below minimum {} for {alg:?}",
                        self.tuning.budget,
                        dims + 2
                    )));
                }
            }
        }
        Ok(())
    }

    fn section_hash(parts: &[&str]) -> String {
        let mut hasher = Sha256::new();
        for p in parts {
            hasher.update(p.as_bytes());
            hasher.update([0u8]);
        }
        let out = hasher.finalize();
        out.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Stage fingerprints used for artifact reuse: a stage's artifact is
    /// valid when its hash (which folds in every upstream stage) matches.
    pub fn stage_hashes(&self) -> StageHashes {
        let seed = self.seed.to_string();
        let input = serde_json::to_string(&self.input).expect("serializes");
        let schema = serde_json::to_string(&self.schema).expect("serializes");
        let pre = serde_json::to_string(&self.preprocess).expect("serializes");
        let window = serde_json::to_string(&self.evaluation).expect("serializes");
        let sel = serde_json::to_string(&self.selection).expect("serializes");
        let tune = serde_json::to_string(&self.tuning).expect("serializes");
        let bases = serde_json::to_string(&self.ensemble).expect("serializes");

        let data = Self::section_hash(&[&seed, &input, &schema]);
        let preprocess = Self::section_hash(&[&data, &pre, &window]);
        let selection = Self::section_hash(&[&preprocess, &sel]);
        let tuning = Self::section_hash(&[&selection, &tune, &bases]);
        StageHashes {
            data,
            preprocess,
            selection,
            tuning,
        }
    }

    /// Apply CLI overrides (flags beat config scalars).
    pub fn with_overrides(mut self, seed: Option<u64>, out: Option<&Path>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = out {
            self.output_dir = Some(o.to_path_buf());
        }
        self
    }

    /// Variant display name per base slot; duplicate algorithms get an
    /// index suffix so every variant stays uniquely addressable.
    pub fn base_names(&self) -> Vec<String> {
        let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
        let mut names = Vec::new();
        for spec in &self.ensemble.bases {
            let n = counts.entry(spec.algorithm.name()).or_insert(0);
            *n += 1;
            if *n == 1 {
                names.push(spec.algorithm.name().to_string());
            } else {
                names.push(format!("{}_{n}", spec.algorithm.name()));
            }
        }
        names
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageHashes {
    pub data: String,
    pub preprocess: String,
    pub selection: String,
    pub tuning: String,
}
