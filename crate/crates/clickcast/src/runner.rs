//! Artifact-producing orchestration behind the CLI subcommands.
//!
//! Every stage writes its artifact under the run directory and records a
//! stage hash in `run_manifest.json`; `evaluate` reuses any artifact
//! whose hash still matches the current config. A lock file keeps the
//! run directory single-writer. Wall-clock timestamps appear only in the
//! manifest and the tuning traces, never in reports.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::config::{ConfigError, InputConfig, RunConfig, StageHashes};
use crate::dataset::{generate_synthetic, load_table, write_table, RawTable};
use crate::evaluate::{
    build_window, first_window_artifacts, resolve_window, rolling_evaluate, run_selection,
    run_tuning, EvaluationReport, FrozenArtifacts, RollingOutcome,
};
use crate::hyperopt::TrialHistory;
use crate::preprocess::FittedPreprocess;
use crate::regressors::RegressorSpec;

#[derive(Debug, Error)]
pub enum RunnerError {
    #[error("config validation failed: {0}")]
    Config(#[from] ConfigError),
    #[error("run directory is locked by another process ({0})")]
    Locked(PathBuf),
    #[error("stage {stage} failed: {message}")]
    Stage { stage: String, message: String },
}

impl RunnerError {
    /// Exit status contract: 2 for config validation problems, 1 for
    /// runtime failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunnerError::Config(_) => 2,
            _ => 1,
        }
    }
}

fn stage_err<E: std::fmt::Display>(stage: &str) -> impl Fn(E) -> RunnerError + '_ {
    move |e| RunnerError::Stage {
        stage: stage.to_string(),
        message: e.to_string(),
    }
}

/// Artifact layout inside one run directory.
#[derive(Debug, Clone)]
pub struct RunDirs {
    pub root: PathBuf,
}

impl RunDirs {
    pub fn new(root: &Path) -> Self {
        Self {
            root: root.to_path_buf(),
        }
    }

    pub fn data_csv(&self) -> PathBuf {
        self.root.join("data.csv")
    }
    pub fn pipeline_json(&self) -> PathBuf {
        self.root.join("pipeline.json")
    }
    pub fn subspace_json(&self) -> PathBuf {
        self.root.join("subspace.json")
    }
    pub fn tuned_json(&self) -> PathBuf {
        self.root.join("tuned.json")
    }
    pub fn trials_dir(&self) -> PathBuf {
        self.root.join("trials")
    }
    pub fn models_dir(&self) -> PathBuf {
        self.root.join("models")
    }
    pub fn report_json(&self) -> PathBuf {
        self.root.join("report.json")
    }
    pub fn report_csv(&self) -> PathBuf {
        self.root.join("report.csv")
    }
    pub fn report_md(&self) -> PathBuf {
        self.root.join("report.md")
    }
    pub fn predictions_csv(&self) -> PathBuf {
        self.root.join("predictions.csv")
    }
    pub fn manifest_json(&self) -> PathBuf {
        self.root.join("run_manifest.json")
    }
    pub fn lock_file(&self) -> PathBuf {
        self.root.join(".lock")
    }
}

/// Exclusive-writer guard over a run directory; the lock file disappears
/// when the guard drops.
pub struct LockGuard {
    path: PathBuf,
}

impl LockGuard {
    pub fn acquire(dirs: &RunDirs) -> Result<Self, RunnerError> {
        fs::create_dir_all(&dirs.root).map_err(stage_err("init"))?;
        let path = dirs.lock_file();
        match fs::OpenOptions::new()
            .write(true)
            .create_new(true)
            .open(&path)
        {
            Ok(_) => Ok(Self { path }),
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => {
                Err(RunnerError::Locked(path))
            }
            Err(e) => Err(RunnerError::Stage {
                stage: "init".into(),
                message: e.to_string(),
            }),
        }
    }
}

impl Drop for LockGuard {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageRecord {
    pub hash: String,
    pub artifacts: Vec<String>,
    pub completed_at: String,
    /// True when an existing artifact satisfied this stage.
    pub reused: bool,
}

/// The run ledger: every seed, config, stage hash, selected feature, and
/// tuned hyperparameter needed to rerun the pipeline exactly.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub version: u32,
    pub created_at: String,
    pub updated_at: String,
    pub seed: u64,
    pub config: RunConfig,
    pub stage_hashes: StageHashes,
    pub stages: BTreeMap<String, StageRecord>,
    #[serde(default)]
    pub selected_features: Vec<String>,
    #[serde(default)]
    pub tuned_params: BTreeMap<String, RegressorSpec>,
    #[serde(default)]
    pub warnings: Vec<String>,
}

impl RunManifest {
    fn fresh(cfg: &RunConfig) -> Self {
        let now = now_rfc3339();
        Self {
            version: 1,
            created_at: now.clone(),
            updated_at: now,
            seed: cfg.seed,
            config: cfg.clone(),
            stage_hashes: cfg.stage_hashes(),
            stages: BTreeMap::new(),
            selected_features: Vec::new(),
            tuned_params: BTreeMap::new(),
            warnings: Vec::new(),
        }
    }

    fn load_or_fresh(dirs: &RunDirs, cfg: &RunConfig) -> Self {
        let loaded = fs::read_to_string(dirs.manifest_json())
            .ok()
            .and_then(|s| serde_json::from_str::<RunManifest>(s.as_str()).ok());
        match loaded {
            Some(mut m) => {
                m.seed = cfg.seed;
                m.config = cfg.clone();
                m.stage_hashes = cfg.stage_hashes();
                m
            }
            None => Self::fresh(cfg),
        }
    }

    fn record_stage(&mut self, name: &str, hash: &str, artifacts: Vec<String>, reused: bool) {
        self.stages.insert(
            name.to_string(),
            StageRecord {
                hash: hash.to_string(),
                artifacts,
                completed_at: now_rfc3339(),
                reused,
            },
        );
    }

    fn save(&mut self, dirs: &RunDirs) -> Result<(), RunnerError> {
        self.updated_at = now_rfc3339();
        let json = serde_json::to_string_pretty(self).expect("manifest serializes");
        fs::write(dirs.manifest_json(), json).map_err(stage_err("manifest"))
    }

    /// A prior stage's artifact is reusable when the recorded hash still
    /// matches and the artifact file exists.
    fn stage_reusable(&self, name: &str, hash: &str, artifact: &Path) -> bool {
        self.stages.get(name).is_some_and(|s| s.hash == hash) && artifact.exists()
    }
}

fn now_rfc3339() -> String {
    chrono::Utc::now().to_rfc3339_opts(chrono::SecondsFormat::Secs, true)
}

/// Versioned wrapper for hashed JSON artifacts.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct HashedArtifact<T> {
    version: u32,
    stage_hash: String,
    payload: T,
}

fn write_json<T: Serialize>(path: &Path, value: &T, stage: &str) -> Result<(), RunnerError> {
    let json = serde_json::to_string_pretty(value).map_err(stage_err(stage))?;
    fs::write(path, json).map_err(stage_err(stage))
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Option<T> {
    fs::read_to_string(path)
        .ok()
        .and_then(|s| serde_json::from_str(&s).ok())
}

/// Load or synthesize the input table.
pub fn load_input(cfg: &RunConfig) -> Result<(RawTable, Vec<String>), RunnerError> {
    match &cfg.input {
        InputConfig::Synthetic(synth) => {
            let table = generate_synthetic(synth).map_err(stage_err("generate"))?;
            Ok((table, Vec::new()))
        }
        InputConfig::Csv { path } => {
            let outcome = load_table(path, &cfg.schema).map_err(stage_err("load"))?;
            let mut warnings = Vec::new();
            if outcome.unparseable_numeric_cells > 0 {
                warnings.push(format!(
                    "load: {} unparseable numeric cells treated as missing",
                    outcome.unparseable_numeric_cells
                ));
            }
            if outcome.dropped_target_rows > 0 {
                warnings.push(format!(
                    "load: {} rows dropped for missing/unparseable target",
                    outcome.dropped_target_rows
                ));
            }
            Ok((outcome.table, warnings))
        }
    }
}

/// `generate`: write the synthetic table as `data.csv`.
pub fn cmd_generate(cfg: &RunConfig, out: &Path) -> Result<PathBuf, RunnerError> {
    cfg.validate()?;
    if !matches!(cfg.input, InputConfig::Synthetic(_)) {
        return Err(
            ConfigError::Invalid("generate requires a synthetic input config".into()).into(),
        );
    }
    let dirs = RunDirs::new(out);
    let _lock = LockGuard::acquire(&dirs)?;
    let hashes = cfg.stage_hashes();

    let (table, _) = load_input(cfg)?;
    write_table(&table, &dirs.data_csv()).map_err(stage_err("generate"))?;

    let mut manifest = RunManifest::load_or_fresh(&dirs, cfg);
    manifest.record_stage("generate", &hashes.data, vec!["data.csv".into()], false);
    manifest.save(&dirs)?;
    Ok(dirs.data_csv())
}

/// `preprocess`: fit the first window's pipeline and persist it.
pub fn cmd_preprocess(cfg: &RunConfig, out: &Path) -> Result<PathBuf, RunnerError> {
    cfg.validate()?;
    let dirs = RunDirs::new(out);
    let _lock = LockGuard::acquire(&dirs)?;
    let hashes = cfg.stage_hashes();

    let (table, load_warnings) = load_input(cfg)?;
    let (days, first_idx) = resolve_window(&table, cfg).map_err(stage_err("preprocess"))?;
    let window = build_window(&table, cfg, &days, first_idx).map_err(stage_err("preprocess"))?;

    write_json(
        &dirs.pipeline_json(),
        &HashedArtifact {
            version: 1,
            stage_hash: hashes.preprocess.clone(),
            payload: &window.fitted,
        },
        "preprocess",
    )?;

    let mut manifest = RunManifest::load_or_fresh(&dirs, cfg);
    manifest.warnings.extend(load_warnings);
    manifest.warnings.extend(window.warnings.iter().cloned());
    manifest.record_stage(
        "preprocess",
        &hashes.preprocess,
        vec!["pipeline.json".into()],
        false,
    );
    manifest.save(&dirs)?;
    Ok(dirs.pipeline_json())
}

/// `select-features`: run ranking + recursive elimination on the first
/// window; the subspace persists as a bare JSON list of column names.
pub fn cmd_select(cfg: &RunConfig, out: &Path) -> Result<PathBuf, RunnerError> {
    cfg.validate()?;
    let dirs = RunDirs::new(out);
    let _lock = LockGuard::acquire(&dirs)?;
    let hashes = cfg.stage_hashes();

    let (table, load_warnings) = load_input(cfg)?;
    let (days, first_idx) = resolve_window(&table, cfg).map_err(stage_err("select-features"))?;
    let window =
        build_window(&table, cfg, &days, first_idx).map_err(stage_err("select-features"))?;
    let (artifacts, warnings) =
        run_selection(&window, cfg).map_err(stage_err("select-features"))?;

    write_json(
        &dirs.subspace_json(),
        &artifacts.selected,
        "select-features",
    )?;

    let mut manifest = RunManifest::load_or_fresh(&dirs, cfg);
    manifest.warnings.extend(load_warnings);
    manifest.warnings.extend(window.warnings.iter().cloned());
    manifest.warnings.extend(warnings);
    manifest.selected_features = artifacts.selected.clone();
    manifest.record_stage(
        "selection",
        &hashes.selection,
        vec!["subspace.json".into()],
        false,
    );
    manifest.save(&dirs)?;
    Ok(dirs.subspace_json())
}

/// `tune`: Bayesian-optimize the configured algorithms on the first
/// window (reusing a hash-matched subspace), writing per-model JSONL
/// traces and the tuned specs.
pub fn cmd_tune(cfg: &RunConfig, out: &Path) -> Result<PathBuf, RunnerError> {
    cfg.validate()?;
    let dirs = RunDirs::new(out);
    let _lock = LockGuard::acquire(&dirs)?;
    let hashes = cfg.stage_hashes();
    let mut manifest = RunManifest::load_or_fresh(&dirs, cfg);

    let (table, load_warnings) = load_input(cfg)?;
    let (days, first_idx) = resolve_window(&table, cfg).map_err(stage_err("tune"))?;
    let window = build_window(&table, cfg, &days, first_idx).map_err(stage_err("tune"))?;

    let reused_selection =
        manifest.stage_reusable("selection", &hashes.selection, &dirs.subspace_json());
    let selected: Vec<String> = if reused_selection {
        read_json(&dirs.subspace_json()).ok_or_else(|| RunnerError::Stage {
            stage: "tune".into(),
            message: "subspace.json unreadable".into(),
        })?
    } else {
        let (artifacts, warnings) = run_selection(&window, cfg).map_err(stage_err("tune"))?;
        write_json(&dirs.subspace_json(), &artifacts.selected, "tune")?;
        manifest.warnings.extend(warnings);
        manifest.record_stage(
            "selection",
            &hashes.selection,
            vec!["subspace.json".into()],
            false,
        );
        manifest.selected_features = artifacts.selected.clone();
        artifacts.selected
    };
    if reused_selection {
        manifest.record_stage(
            "selection",
            &hashes.selection,
            vec!["subspace.json".into()],
            true,
        );
    }

    let (tuned, trials, warnings) =
        run_tuning(&window, cfg, &selected).map_err(stage_err("tune"))?;
    write_trials(&dirs, &trials, cfg)?;
    write_json(
        &dirs.tuned_json(),
        &HashedArtifact {
            version: 1,
            stage_hash: hashes.tuning.clone(),
            payload: &tuned,
        },
        "tune",
    )?;

    manifest.warnings.extend(load_warnings);
    manifest.warnings.extend(warnings);
    manifest.tuned_params = tuned;
    let mut artifacts = vec!["tuned.json".to_string()];
    artifacts.extend(trials.keys().map(|k| format!("trials/{k}.jsonl")));
    manifest.record_stage("tuning", &hashes.tuning, artifacts, false);
    manifest.save(&dirs)?;
    Ok(dirs.tuned_json())
}

fn write_trials(
    dirs: &RunDirs,
    trials: &BTreeMap<String, TrialHistory>,
    cfg: &RunConfig,
) -> Result<(), RunnerError> {
    if trials.is_empty() {
        return Ok(());
    }
    fs::create_dir_all(dirs.trials_dir()).map_err(stage_err("tune"))?;
    for (alg_name, history) in trials {
        let alg = cfg
            .tuning
            .algorithms
            .iter()
            .find(|a| a.name() == alg_name)
            .copied();
        let space = alg.map(crate::hyperopt::ParamSpace::for_algorithm);
        let mut lines = String::new();
        for (i, trial) in history.trials.iter().enumerate() {
            let params: BTreeMap<String, f64> = match &space {
                Some(s) => s
                    .dims
                    .iter()
                    .map(|d| d.name.clone())
                    .zip(trial.params.iter().copied())
                    .collect(),
                None => trial
                    .params
                    .iter()
                    .enumerate()
                    .map(|(j, &v)| (format!("p{j}"), v))
                    .collect(),
            };
            let line = serde_json::json!({
                "trial": i,
                "params": params,
                "score": if trial.score.is_finite() {
                    serde_json::json!(trial.score)
                } else {
                    serde_json::json!("-inf")
                },
                "error": trial.error,
                "timestamp": now_rfc3339(),
            });
            lines.push_str(&line.to_string());
            lines.push('\n');
        }
        fs::write(dirs.trials_dir().join(format!("{alg_name}.jsonl")), lines)
            .map_err(stage_err("tune"))?;
    }
    Ok(())
}

/// `evaluate`: the full pipeline end to end with artifact reuse; writes
/// the reports, predictions, final-day models, and the run manifest.
pub fn cmd_evaluate(cfg: &RunConfig, out: &Path) -> Result<RollingOutcome, RunnerError> {
    cfg.validate()?;
    let dirs = RunDirs::new(out);
    let _lock = LockGuard::acquire(&dirs)?;
    let hashes = cfg.stage_hashes();
    let mut manifest = RunManifest::load_or_fresh(&dirs, cfg);

    let (table, load_warnings) = load_input(cfg)?;
    manifest.warnings.extend(load_warnings);

    // Assemble frozen artifacts, reusing any stage whose hash matches.
    let reused_pipeline =
        manifest.stage_reusable("preprocess", &hashes.preprocess, &dirs.pipeline_json())
            && read_json::<HashedArtifact<FittedPreprocess>>(&dirs.pipeline_json())
                .is_some_and(|a| a.stage_hash == hashes.preprocess);
    let reusable_selection =
        manifest.stage_reusable("selection", &hashes.selection, &dirs.subspace_json());
    let reusable_tuning = manifest.stage_reusable("tuning", &hashes.tuning, &dirs.tuned_json())
        && read_json::<HashedArtifact<BTreeMap<String, RegressorSpec>>>(&dirs.tuned_json())
            .is_some_and(|a| a.stage_hash == hashes.tuning);

    let frozen: FrozenArtifacts = if reusable_selection && reusable_tuning {
        let selected: Vec<String> =
            read_json(&dirs.subspace_json()).ok_or_else(|| RunnerError::Stage {
                stage: "evaluate".into(),
                message: "subspace.json unreadable".into(),
            })?;
        let tuned =
            read_json::<HashedArtifact<BTreeMap<String, RegressorSpec>>>(&dirs.tuned_json())
                .expect("checked above")
                .payload;
        FrozenArtifacts {
            selected,
            tuned,
            ..Default::default()
        }
    } else if reusable_selection {
        let selected: Vec<String> =
            read_json(&dirs.subspace_json()).ok_or_else(|| RunnerError::Stage {
                stage: "evaluate".into(),
                message: "subspace.json unreadable".into(),
            })?;
        let (days, first_idx) = resolve_window(&table, cfg).map_err(stage_err("evaluate"))?;
        let window = build_window(&table, cfg, &days, first_idx).map_err(stage_err("evaluate"))?;
        let (tuned, trials, warnings) =
            run_tuning(&window, cfg, &selected).map_err(stage_err("tune"))?;
        write_trials(&dirs, &trials, cfg)?;
        write_json(
            &dirs.tuned_json(),
            &HashedArtifact {
                version: 1,
                stage_hash: hashes.tuning.clone(),
                payload: &tuned,
            },
            "tune",
        )?;
        manifest.warnings.extend(warnings);
        FrozenArtifacts {
            selected,
            tuned,
            trials,
            ..Default::default()
        }
    } else {
        let (window, artifacts, warnings) =
            first_window_artifacts(&table, cfg).map_err(stage_err("evaluate"))?;
        manifest.warnings.extend(warnings);
        write_json(
            &dirs.pipeline_json(),
            &HashedArtifact {
                version: 1,
                stage_hash: hashes.preprocess.clone(),
                payload: &window.fitted,
            },
            "preprocess",
        )?;
        manifest.record_stage(
            "preprocess",
            &hashes.preprocess,
            vec!["pipeline.json".into()],
            false,
        );
        write_json(
            &dirs.subspace_json(),
            &artifacts.selected,
            "select-features",
        )?;
        manifest.record_stage(
            "selection",
            &hashes.selection,
            vec!["subspace.json".into()],
            false,
        );
        write_trials(&dirs, &artifacts.trials, cfg)?;
        write_json(
            &dirs.tuned_json(),
            &HashedArtifact {
                version: 1,
                stage_hash: hashes.tuning.clone(),
                payload: &artifacts.tuned,
            },
            "tune",
        )?;
        manifest.record_stage("tuning", &hashes.tuning, vec!["tuned.json".into()], false);
        artifacts
    };
    if reusable_selection {
        manifest.record_stage(
            "selection",
            &hashes.selection,
            vec!["subspace.json".into()],
            true,
        );
    }
    if reusable_tuning {
        manifest.record_stage("tuning", &hashes.tuning, vec!["tuned.json".into()], true);
    }
    if reused_pipeline {
        manifest.record_stage(
            "preprocess",
            &hashes.preprocess,
            vec!["pipeline.json".into()],
            true,
        );
    }

    let outcome = rolling_evaluate(&table, cfg, Some(frozen)).map_err(stage_err("evaluate"))?;

    // Reports: deterministic content, no timestamps.
    fs::write(dirs.report_json(), outcome.report.to_json()).map_err(stage_err("report"))?;
    fs::write(dirs.report_csv(), outcome.report.to_csv()).map_err(stage_err("report"))?;
    fs::write(dirs.report_md(), outcome.report.to_markdown()).map_err(stage_err("report"))?;
    fs::write(dirs.predictions_csv(), predictions_csv(&outcome)).map_err(stage_err("report"))?;

    fs::create_dir_all(dirs.models_dir()).map_err(stage_err("evaluate"))?;
    let mut model_files = Vec::new();
    for (name, json) in &outcome.final_day_models {
        fs::write(dirs.models_dir().join(name), json).map_err(stage_err("evaluate"))?;
        model_files.push(format!("models/{name}"));
    }

    manifest.selected_features = outcome.artifacts.selected.clone();
    manifest.tuned_params = outcome.artifacts.tuned.clone();
    manifest.warnings.extend(outcome.warnings.iter().cloned());
    let mut artifacts_written = vec![
        "report.json".to_string(),
        "report.csv".into(),
        "report.md".into(),
        "predictions.csv".into(),
    ];
    artifacts_written.extend(model_files);
    manifest.record_stage("evaluate", &hashes.tuning, artifacts_written, false);
    manifest.save(&dirs)?;
    Ok(outcome)
}

/// `report`: re-render CSV and markdown from an existing `report.json`.
pub fn cmd_report(out: &Path) -> Result<EvaluationReport, RunnerError> {
    let dirs = RunDirs::new(out);
    let json = fs::read_to_string(dirs.report_json()).map_err(|_| RunnerError::Stage {
        stage: "report".into(),
        message: format!(
            "{} not found; run evaluate first",
            dirs.report_json().display()
        ),
    })?;
    let report = EvaluationReport::from_json(&json).map_err(stage_err("report"))?;
    fs::write(dirs.report_csv(), report.to_csv()).map_err(stage_err("report"))?;
    fs::write(dirs.report_md(), report.to_markdown()).map_err(stage_err("report"))?;
    Ok(report)
}

/// Deterministic long-form predictions: `day,variant,entity_id,prediction`.
fn predictions_csv(outcome: &RollingOutcome) -> String {
    let mut out = String::from("day,variant,entity_id,prediction\n");
    for day in &outcome.predictions {
        for (variant, preds) in &day.by_variant {
            for (key, p) in day.row_keys.iter().zip(preds) {
                out.push_str(&format!(
                    "{},{},{},{}\n",
                    day.day, variant, key.entity_id, p
                ));
            }
        }
    }
    out
}

/// Convenience used by tests and the CLI `evaluate` flow: deterministic
/// report bytes for a config.
pub fn evaluate_report_bytes(cfg: &RunConfig, out: &Path) -> Result<Vec<u8>, RunnerError> {
    cmd_evaluate(cfg, out)?;
    let dirs = RunDirs::new(out);
    fs::read(dirs.report_json()).map_err(stage_err("report"))
}
