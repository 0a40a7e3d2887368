//! Table-to-matrix preprocessing: imputation, sliding-window expansion,
//! seasonal-decomposition features, one-hot encoding, min-max scaling.
//!
//! Every statistic (column means, modes, vocabularies, mins/maxes,
//! decomposition states) is learned from training rows only; the fitted
//! pipeline can then be applied to any table sharing the schema without
//! ever reading a test row's target.

pub mod decompose;

use std::collections::BTreeMap;

use chrono::{Datelike, NaiveDate};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::{Cell, ColumnDef, ColumnRole, RawTable};
use crate::matrix::{FeatureMatrix, RowKey};
use decompose::FittedDecompose;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("column {column:?} has no observed values but is under the drop threshold")]
    AllMissingColumn { column: String },
    #[error("configured column {0:?} is not present in the table")]
    UnknownColumn(String),
    #[error("table columns do not match the fitted pipeline (expected {expected:?}, got {got:?})")]
    SchemaMismatch {
        expected: Vec<String>,
        got: Vec<String>,
    },
    #[error("row for ({entity}, {date}) has no target")]
    MissingTarget { entity: String, date: NaiveDate },
    #[error("table has no rows")]
    EmptyTable,
    #[error(transparent)]
    Matrix(#[from] crate::matrix::MatrixError),
}

/// Knobs for the full preprocessing pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PreprocessConfig {
    /// Columns whose missing ratio exceeds this are dropped outright.
    pub impute_drop_threshold: f64,
    /// Lookback horizons (days) for windowed mean/std features.
    pub horizons: Vec<u32>,
    /// Also window the target's own history (lagged, never same-day).
    pub window_include_target: bool,
    /// Seasonal period in days for decomposition features.
    pub seasonal_period: usize,
    /// Columns to decompose; the target column name is allowed here.
    pub decompose_columns: Vec<String>,
    /// Categorical columns with more distinct training values are dropped.
    pub max_cardinality: usize,
    /// One-hot the entity key itself (subject to the same cardinality
    /// cap), giving models direct access to per-entity levels.
    pub encode_entity: bool,
    /// Emit day-of-week indicators, a pure function of the calendar
    /// date. A raw day-index column is deliberately absent: test days
    /// always lie beyond every training split threshold, which lets
    /// tree models memorize instead of generalize.
    pub calendar_features: bool,
}

impl Default for PreprocessConfig {
    fn default() -> Self {
        Self {
            impute_drop_threshold: 0.5,
            horizons: vec![3, 7, 30],
            window_include_target: true,
            seasonal_period: 7,
            decompose_columns: vec!["clicks".into()],
            max_cardinality: 64,
            encode_entity: true,
            calendar_features: true,
        }
    }
}

/// Append the entity key as a categorical feature column (named after
/// the table's entity column).
fn with_entity_column(table: &RawTable) -> RawTable {
    if table.column_index(&table.entity_column).is_some() {
        // A feature column already claims the name; leave the table alone.
        return table.clone();
    }
    let mut out = table.clone();
    out.columns.push(ColumnDef {
        name: table.entity_column.clone(),
        role: ColumnRole::Categorical,
    });
    for rec in out.rows.iter_mut() {
        let id = rec.entity_id.clone();
        rec.values.push(Some(Cell::Cat(id)));
    }
    out
}

/// Per-column imputation statistics learned on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Imputer {
    pub columns: Vec<ColumnDef>,
    /// Mean for numeric columns, mode for categorical ones; aligned to
    /// `columns`.
    pub fills: Vec<Cell>,
    pub dropped: Vec<String>,
}

impl Imputer {
    pub fn fit(train: &RawTable, drop_threshold: f64) -> Result<Self, PreprocessError> {
        if train.rows.is_empty() {
            return Err(PreprocessError::EmptyTable);
        }
        let n = train.rows.len() as f64;
        let mut columns = Vec::new();
        let mut fills = Vec::new();
        let mut dropped = Vec::new();
        for (idx, def) in train.columns.iter().enumerate() {
            let missing = train
                .rows
                .iter()
                .filter(|r| r.values[idx].is_none())
                .count() as f64;
            if missing / n > drop_threshold {
                dropped.push(def.name.clone());
                continue;
            }
            let fill = match def.role {
                ColumnRole::Numeric => {
                    let (mut sum, mut count) = (0.0, 0usize);
                    for r in &train.rows {
                        if let Some(Cell::Num(v)) = &r.values[idx] {
                            sum += v;
                            count += 1;
                        }
                    }
                    if count == 0 {
                        return Err(PreprocessError::AllMissingColumn {
                            column: def.name.clone(),
                        });
                    }
                    Cell::Num(sum / count as f64)
                }
                ColumnRole::Categorical => {
                    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
                    for r in &train.rows {
                        if let Some(Cell::Cat(v)) = &r.values[idx] {
                            *counts.entry(v).or_insert(0) += 1;
                        }
                    }
                    // Ties break toward the lexicographically smallest value
                    // (BTreeMap iteration order plus strict >).
                    let mode = counts
                        .iter()
                        .fold(
                            (None, 0usize),
                            |acc, (v, &c)| if c > acc.1 { (Some(*v), c) } else { acc },
                        )
                        .0
                        .ok_or_else(|| PreprocessError::AllMissingColumn {
                            column: def.name.clone(),
                        })?;
                    Cell::Cat(mode.to_string())
                }
            };
            columns.push(def.clone());
            fills.push(fill);
        }
        Ok(Self {
            columns,
            fills,
            dropped,
        })
    }

    /// Fill missing cells and drop the columns removed at fit time.
    pub fn apply(&self, table: &RawTable) -> Result<RawTable, PreprocessError> {
        let src_idx: Vec<usize> = self
            .columns
            .iter()
            .map(|def| {
                table
                    .column_index(&def.name)
                    .ok_or_else(|| PreprocessError::SchemaMismatch {
                        expected: self.columns.iter().map(|c| c.name.clone()).collect(),
                        got: table.columns.iter().map(|c| c.name.clone()).collect(),
                    })
            })
            .collect::<Result<_, _>>()?;
        let rows = table
            .rows
            .iter()
            .map(|r| {
                let values = src_idx
                    .iter()
                    .zip(&self.fills)
                    .map(|(&i, fill)| Some(r.values[i].clone().unwrap_or_else(|| fill.clone())))
                    .collect();
                crate::dataset::RawRecord {
                    values,
                    ..r.clone()
                }
            })
            .collect();
        let mut out = table.with_rows(rows);
        out.columns = self.columns.clone();
        Ok(out)
    }
}

/// Convenience form fitting and applying on the same table.
pub fn impute(table: &RawTable, drop_threshold: f64) -> Result<RawTable, PreprocessError> {
    Imputer::fit(table, drop_threshold)?.apply(table)
}

/// Append per-entity lookback features: for every numeric column `c` and
/// horizon `h`, `c_mean_h` and `c_std_h` over the `h` calendar days
/// strictly before each row's date, plus one `lookback_empty_h` indicator
/// per horizon flagging rows with nothing to look back on. The target's
/// own history is windowed too when `include_target` is set.
pub fn window_features(table: &RawTable, horizons: &[u32], include_target: bool) -> RawTable {
    #[derive(Clone)]
    struct EntitySeries {
        days: Vec<i64>,
        /// per source column: prefix sums of values and squares
        prefix: Vec<(Vec<f64>, Vec<f64>)>,
        row_ids: Vec<usize>,
    }

    let numeric_idx: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == ColumnRole::Numeric)
        .map(|(i, _)| i)
        .collect();
    let mut source_names: Vec<String> = numeric_idx
        .iter()
        .map(|&i| table.columns[i].name.clone())
        .collect();
    if include_target {
        source_names.push(table.target_column.clone());
    }
    let n_sources = source_names.len();

    let epoch = table
        .rows
        .iter()
        .map(|r| r.log_date)
        .min()
        .unwrap_or(NaiveDate::from_ymd_opt(1970, 1, 1).expect("epoch"));
    let day_of = |d: NaiveDate| (d - epoch).num_days();

    // Group row indices per entity, sorted by date.
    let mut per_entity: BTreeMap<&str, Vec<usize>> = BTreeMap::new();
    for (i, r) in table.rows.iter().enumerate() {
        per_entity.entry(r.entity_id.as_str()).or_default().push(i);
    }
    let mut series: BTreeMap<&str, EntitySeries> = BTreeMap::new();
    for (entity, mut rows) in per_entity {
        rows.sort_by_key(|&i| table.rows[i].log_date);
        let days: Vec<i64> = rows
            .iter()
            .map(|&i| day_of(table.rows[i].log_date))
            .collect();
        let mut prefix = Vec::with_capacity(n_sources);
        for s in 0..n_sources {
            let mut psum = Vec::with_capacity(rows.len() + 1);
            let mut psq = Vec::with_capacity(rows.len() + 1);
            psum.push(0.0);
            psq.push(0.0);
            for &ri in &rows {
                let rec = &table.rows[ri];
                let v = if s < numeric_idx.len() {
                    match &rec.values[numeric_idx[s]] {
                        Some(Cell::Num(v)) => *v,
                        // Missing cells contribute nothing (imputation
                        // normally runs first and removes them).
                        _ => 0.0,
                    }
                } else {
                    rec.target.unwrap_or(0.0)
                };
                psum.push(psum.last().unwrap() + v);
                psq.push(psq.last().unwrap() + v * v);
            }
            prefix.push((psum, psq));
        }
        series.insert(
            entity,
            EntitySeries {
                days,
                prefix,
                row_ids: rows,
            },
        );
    }

    let mut new_columns = table.columns.clone();
    for name in &source_names {
        for h in horizons {
            new_columns.push(ColumnDef {
                name: format!("{name}_mean_{h}"),
                role: ColumnRole::Numeric,
            });
            new_columns.push(ColumnDef {
                name: format!("{name}_std_{h}"),
                role: ColumnRole::Numeric,
            });
        }
    }
    for h in horizons {
        new_columns.push(ColumnDef {
            name: format!("lookback_empty_{h}"),
            role: ColumnRole::Numeric,
        });
    }

    let mut rows = table.rows.clone();
    for es in series.values() {
        for (pos, &ri) in es.row_ids.iter().enumerate() {
            let d = es.days[pos];
            let mut extra: Vec<Option<Cell>> =
                Vec::with_capacity(n_sources * horizons.len() * 2 + horizons.len());
            let mut empties: Vec<f64> = Vec::with_capacity(horizons.len());
            for h in horizons {
                let lo = es.days.partition_point(|&x| x < d - i64::from(*h));
                let hi = es.days.partition_point(|&x| x < d);
                empties.push(if hi == lo { 1.0 } else { 0.0 });
            }
            for s in 0..n_sources {
                let (psum, psq) = &es.prefix[s];
                for h in horizons {
                    let lo = es.days.partition_point(|&x| x < d - i64::from(*h));
                    let hi = es.days.partition_point(|&x| x < d);
                    let (mean, std) = if hi == lo {
                        (0.0, 0.0)
                    } else {
                        let count = (hi - lo) as f64;
                        let mean = (psum[hi] - psum[lo]) / count;
                        let var = ((psq[hi] - psq[lo]) / count - mean * mean).max(0.0);
                        (mean, var.sqrt())
                    };
                    extra.push(Some(Cell::Num(mean)));
                    extra.push(Some(Cell::Num(std)));
                }
            }
            extra.extend(empties.into_iter().map(|v| Some(Cell::Num(v))));
            rows[ri].values.extend(extra);
        }
    }

    let mut out = table.with_rows(rows);
    out.columns = new_columns;
    out
}

/// One-hot vocabulary learned from training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OneHotEncoder {
    /// (column name, sorted distinct training values)
    pub vocab: Vec<(String, Vec<String>)>,
    pub dropped_high_cardinality: Vec<String>,
}

impl OneHotEncoder {
    pub fn fit(train: &RawTable, max_cardinality: usize) -> Self {
        let mut vocab = Vec::new();
        let mut dropped = Vec::new();
        for (idx, def) in train.columns.iter().enumerate() {
            if def.role != ColumnRole::Categorical {
                continue;
            }
            let mut values: Vec<String> = train
                .rows
                .iter()
                .filter_map(|r| match &r.values[idx] {
                    Some(Cell::Cat(v)) => Some(v.clone()),
                    _ => None,
                })
                .collect();
            values.sort();
            values.dedup();
            if values.len() > max_cardinality {
                dropped.push(def.name.clone());
            } else {
                vocab.push((def.name.clone(), values));
            }
        }
        Self {
            vocab,
            dropped_high_cardinality: dropped,
        }
    }

    pub fn output_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        for (col, values) in &self.vocab {
            for v in values {
                names.push(format!("{col}={v}"));
            }
            names.push(format!("{col}=__other__"));
        }
        names
    }

    /// Indicator block for one record; unseen or missing values light the
    /// `__other__` column.
    fn encode_record(&self, table: &RawTable, rec: &crate::dataset::RawRecord) -> Vec<f64> {
        let mut out = Vec::new();
        for (col, values) in &self.vocab {
            let idx = table.column_index(col);
            let value = idx.and_then(|i| match &rec.values[i] {
                Some(Cell::Cat(v)) => Some(v.as_str()),
                _ => None,
            });
            let hit = value.and_then(|v| values.iter().position(|x| x == v));
            for i in 0..values.len() {
                out.push(if hit == Some(i) { 1.0 } else { 0.0 });
            }
            out.push(if hit.is_none() { 1.0 } else { 0.0 });
        }
        out
    }
}

/// Assemble the numeric block plus one-hot indicators into a matrix.
/// Numeric missing cells must already be imputed.
pub fn encode_onehot(
    table: &RawTable,
    encoder: &OneHotEncoder,
) -> Result<FeatureMatrix, PreprocessError> {
    let numeric_idx: Vec<usize> = table
        .columns
        .iter()
        .enumerate()
        .filter(|(_, c)| c.role == ColumnRole::Numeric)
        .map(|(i, _)| i)
        .collect();
    let mut names: Vec<String> = numeric_idx
        .iter()
        .map(|&i| table.columns[i].name.clone())
        .collect();
    names.extend(encoder.output_names());

    let mut rows = Vec::with_capacity(table.rows.len());
    let mut target = Vec::with_capacity(table.rows.len());
    let mut keys = Vec::with_capacity(table.rows.len());
    for rec in &table.rows {
        let mut row = Vec::with_capacity(names.len());
        for &i in &numeric_idx {
            row.push(match &rec.values[i] {
                Some(Cell::Num(v)) => *v,
                _ => 0.0,
            });
        }
        row.extend(encoder.encode_record(table, rec));
        rows.push(row);
        target.push(rec.target.ok_or_else(|| PreprocessError::MissingTarget {
            entity: rec.entity_id.clone(),
            date: rec.log_date,
        })?);
        keys.push(RowKey {
            entity_id: rec.entity_id.clone(),
            log_date: rec.log_date,
        });
    }
    Ok(FeatureMatrix::new(names, rows, target, keys)?)
}

/// Per-column min/max learned on training rows.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scaler {
    pub column_names: Vec<String>,
    pub mins: Vec<f64>,
    pub maxs: Vec<f64>,
}

pub fn scale_fit(train: &FeatureMatrix) -> Scaler {
    let mut mins = vec![f64::INFINITY; train.n_cols()];
    let mut maxs = vec![f64::NEG_INFINITY; train.n_cols()];
    for r in 0..train.n_rows() {
        for (c, &v) in train.row(r).iter().enumerate() {
            mins[c] = mins[c].min(v);
            maxs[c] = maxs[c].max(v);
        }
    }
    Scaler {
        column_names: train.column_names.clone(),
        mins,
        maxs,
    }
}

/// Map to `[0, 1]` with the training range; constant columns map to 0 and
/// out-of-range values clip.
pub fn scale_apply(scaler: &Scaler, m: &FeatureMatrix) -> Result<FeatureMatrix, PreprocessError> {
    if scaler.column_names != m.column_names {
        return Err(PreprocessError::SchemaMismatch {
            expected: scaler.column_names.clone(),
            got: m.column_names.clone(),
        });
    }
    let mut values = Vec::with_capacity(m.n_rows() * m.n_cols());
    for r in 0..m.n_rows() {
        for (c, &v) in m.row(r).iter().enumerate() {
            let range = scaler.maxs[c] - scaler.mins[c];
            let scaled = if range <= 0.0 {
                0.0
            } else {
                ((v - scaler.mins[c]) / range).clamp(0.0, 1.0)
            };
            values.push(scaled);
        }
    }
    Ok(FeatureMatrix::from_flat(
        m.column_names.clone(),
        values,
        m.target.clone(),
        m.row_keys.clone(),
    )?)
}

/// The fully fitted pipeline, serializable as versioned JSON.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedPreprocess {
    pub version: u32,
    pub config: PreprocessConfig,
    pub imputer: Imputer,
    pub decompose: FittedDecompose,
    pub encoder: OneHotEncoder,
    pub scaler: Scaler,
    pub output_columns: Vec<String>,
    pub warnings: Vec<String>,
}

impl FittedPreprocess {
    /// Learn every statistic from `train` alone.
    pub fn fit(train: &RawTable, config: &PreprocessConfig) -> Result<Self, PreprocessError> {
        let mut warnings = Vec::new();
        let imputer = Imputer::fit(train, config.impute_drop_threshold)?;
        for name in &imputer.dropped {
            warnings.push(format!(
                "column {name:?} dropped: missing ratio above threshold"
            ));
        }
        let imputed = imputer.apply(train)?;
        let imputed = if config.encode_entity {
            with_entity_column(&imputed)
        } else {
            imputed
        };

        // Validate decomposition sources before fitting anything on them.
        let mut dec_sources = Vec::new();
        for name in &config.decompose_columns {
            if name == &train.target_column {
                dec_sources.push(name.clone());
            } else if imputed.column_index(name).is_some() {
                match imputed.columns[imputed.column_index(name).unwrap()].role {
                    ColumnRole::Numeric => dec_sources.push(name.clone()),
                    ColumnRole::Categorical => {
                        return Err(PreprocessError::UnknownColumn(name.clone()))
                    }
                }
            } else if train.column_index(name).is_some() {
                warnings.push(format!(
                    "decomposition source {name:?} was dropped by imputation"
                ));
            } else {
                return Err(PreprocessError::UnknownColumn(name.clone()));
            }
        }
        let decompose = FittedDecompose::fit(
            config.seasonal_period,
            &collect_entity_series(&imputed, &dec_sources),
        );

        let encoder_source = if config.calendar_features {
            with_calendar_columns(&imputed)
        } else {
            imputed.clone()
        };
        let encoder = OneHotEncoder::fit(&encoder_source, config.max_cardinality);
        for name in &encoder.dropped_high_cardinality {
            warnings.push(format!(
                "categorical column {name:?} dropped: cardinality above limit"
            ));
        }

        let unscaled = assemble_unscaled(&imputed, config, &decompose, &encoder, &dec_sources)?;
        let scaler = scale_fit(&unscaled);
        Ok(Self {
            version: 1,
            config: config.clone(),
            imputer,
            decompose,
            encoder,
            scaler,
            output_columns: unscaled.column_names.clone(),
            warnings,
        })
    }

    /// Apply the fitted pipeline to any table with the training schema.
    /// The table supplies its own lookback history, so pass the union of
    /// the training window and the rows to be predicted.
    pub fn transform(&self, table: &RawTable) -> Result<FeatureMatrix, PreprocessError> {
        let imputed = self.imputer.apply(table)?;
        let imputed = if self.config.encode_entity {
            with_entity_column(&imputed)
        } else {
            imputed
        };
        let dec_sources: Vec<String> = self.decompose.states.keys().cloned().collect();
        let unscaled = assemble_unscaled(
            &imputed,
            &self.config,
            &self.decompose,
            &self.encoder,
            &dec_sources,
        )?;
        scale_apply(&self.scaler, &unscaled)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("pipeline serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

/// Date-sorted per-entity observations for each decomposition source.
fn collect_entity_series(
    imputed: &RawTable,
    sources: &[String],
) -> BTreeMap<String, decompose::EntityObservations> {
    let mut out: BTreeMap<String, decompose::EntityObservations> = BTreeMap::new();
    for name in sources {
        let mut per_entity: decompose::EntityObservations = BTreeMap::new();
        let col = imputed.column_index(name);
        for rec in &imputed.rows {
            let value = if name == &imputed.target_column {
                rec.target
            } else {
                col.and_then(|i| match &rec.values[i] {
                    Some(Cell::Num(v)) => Some(*v),
                    _ => None,
                })
            };
            if let Some(v) = value {
                per_entity
                    .entry(rec.entity_id.clone())
                    .or_default()
                    .push((rec.log_date, v));
            }
        }
        for obs in per_entity.values_mut() {
            obs.sort_by_key(|(d, _)| *d);
        }
        out.insert(name.clone(), per_entity);
    }
    out
}

/// Day-of-week indicator source column, appended after windowing.
fn with_calendar_columns(table: &RawTable) -> RawTable {
    const DOW: [&str; 7] = ["mon", "tue", "wed", "thu", "fri", "sat", "sun"];
    let mut out = table.clone();
    out.columns.push(ColumnDef {
        name: "day_of_week".into(),
        role: ColumnRole::Categorical,
    });
    for rec in out.rows.iter_mut() {
        let dow = DOW[rec.log_date.weekday().num_days_from_monday() as usize];
        rec.values.push(Some(Cell::Cat(dow.into())));
    }
    out
}

/// Windows, decomposition features, and one-hot encoding, before scaling.
fn assemble_unscaled(
    imputed: &RawTable,
    config: &PreprocessConfig,
    decompose: &FittedDecompose,
    encoder: &OneHotEncoder,
    dec_sources: &[String],
) -> Result<FeatureMatrix, PreprocessError> {
    let windowed = window_features(imputed, &config.horizons, config.window_include_target);
    let windowed = if config.calendar_features {
        with_calendar_columns(&windowed)
    } else {
        windowed
    };
    let base = encode_onehot(&windowed, encoder)?;

    if dec_sources.is_empty() {
        return Ok(base);
    }
    let mut names = base.column_names.clone();
    for src in dec_sources {
        names.push(format!("{src}_dec_trend"));
        names.push(format!("{src}_dec_seasonal"));
        names.push(format!("{src}_dec_resid"));
        names.push(format!("{src}_dec_missing"));
    }
    let mut rows = Vec::with_capacity(base.n_rows());
    for r in 0..base.n_rows() {
        let key = &base.row_keys[r];
        let mut row = base.row(r).to_vec();
        for src in dec_sources {
            match decompose.lookup(src, &key.entity_id) {
                Some(state) => {
                    let (trend, seasonal, resid) = state.features_for(key.log_date);
                    row.extend([trend, seasonal, resid, 0.0]);
                }
                None => row.extend([0.0, 0.0, 0.0, 1.0]),
            }
        }
        rows.push(row);
    }
    Ok(FeatureMatrix::new(
        names,
        rows,
        base.target.clone(),
        base.row_keys.clone(),
    )?)
}
