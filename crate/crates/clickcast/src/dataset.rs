//! Time-indexed tabular data: CSV loading, synthetic generation, and
//! chronological train/test splitting.

use std::collections::BTreeMap;
use std::collections::BTreeSet;
use std::f64::consts::TAU;
use std::path::Path;

use chrono::NaiveDate;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::seeding::rng_from;

/// How a feature column is interpreted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ColumnRole {
    Numeric,
    Categorical,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ColumnDef {
    pub name: String,
    pub role: ColumnRole,
}

/// One feature cell. Missing cells are `None` at the record level.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Cell {
    Num(f64),
    Cat(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawRecord {
    pub entity_id: String,
    pub log_date: NaiveDate,
    /// Aligned to `RawTable::columns`.
    pub values: Vec<Option<Cell>>,
    pub target: Option<f64>,
}

/// Tabular records keyed by (entity, day). Every record carries the same
/// column set; (entity_id, log_date) pairs are unique.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RawTable {
    pub entity_column: String,
    pub date_column: String,
    pub target_column: String,
    pub columns: Vec<ColumnDef>,
    pub rows: Vec<RawRecord>,
}

/// Column roles for [`load_table`]. Feature columns missing from `roles`
/// get their role inferred from the data: numeric when every non-missing
/// cell parses as a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Schema {
    pub entity: String,
    pub date: String,
    pub target: String,
    #[serde(default)]
    pub roles: BTreeMap<String, ColumnRole>,
}

impl Default for Schema {
    fn default() -> Self {
        Self {
            entity: "entity_id".into(),
            date: "date".into(),
            target: "clicks".into(),
            roles: BTreeMap::new(),
        }
    }
}

/// Synthetic data control knobs. The generated table mimics daily hotel
/// click logs: per-entity base levels, a linear trend, a weekly-style
/// seasonal profile, integer-valued informative features (`bid`,
/// `quality`), a `region` categorical that shifts the target, and pure
/// noise columns.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticConfig {
    pub n_entities: usize,
    pub n_days: usize,
    pub seasonal_period: usize,
    pub trend_slope: f64,
    pub noise_std: f64,
    pub missing_rate: f64,
    pub n_noise_features: usize,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        Self {
            n_entities: 20,
            n_days: 120,
            seasonal_period: 7,
            trend_slope: 0.1,
            noise_std: 6.0,
            missing_rate: 0.05,
            n_noise_features: 4,
            seed: 42,
        }
    }
}

impl SyntheticConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if self.n_entities == 0 || self.n_days == 0 {
            return Err(DatasetError::InvalidConfig(
                "n_entities and n_days must be positive".into(),
            ));
        }
        if self.seasonal_period == 0 || self.seasonal_period > self.n_days {
            return Err(DatasetError::InvalidConfig(
                "seasonal_period must be in 1..=n_days".into(),
            ));
        }
        if !(0.0..=1.0).contains(&self.missing_rate) {
            return Err(DatasetError::InvalidConfig(
                "missing_rate must be in [0,1]".into(),
            ));
        }
        if self.noise_std.is_nan() || self.noise_std < 0.0 {
            return Err(DatasetError::InvalidConfig("noise_std must be >= 0".into()));
        }
        if !self.trend_slope.is_finite() {
            return Err(DatasetError::InvalidConfig(
                "trend_slope must be finite".into(),
            ));
        }
        Ok(())
    }
}

/// Chronological split at one test day: `train` strictly before, `test`
/// exactly on the day, later rows discarded.
#[derive(Debug, Clone)]
pub struct ChronoSplit {
    pub train: RawTable,
    pub test: RawTable,
    pub test_day: NaiveDate,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("csv error: {0}")]
    Csv(#[from] csv::Error),
    #[error("schema names column {0:?} which is not in the file header")]
    MissingColumn(String),
    #[error("duplicate (entity, date) key ({entity}, {date})")]
    DuplicateKey { entity: String, date: NaiveDate },
    #[error("table has no rows")]
    EmptyTable,
    #[error("row {row}: unparseable date {value:?}")]
    InvalidDate { row: usize, value: String },
    #[error("row {row}: target {value} is negative or non-finite")]
    InvalidTarget { row: usize, value: f64 },
    #[error("no rows earlier than test day {0}")]
    NoTrainData(NaiveDate),
    #[error("test day {0} absent from table")]
    DayAbsent(NaiveDate),
    #[error("invalid synthetic config: {0}")]
    InvalidConfig(String),
}

/// A loaded table plus the warning counters accumulated while parsing.
#[derive(Debug, Clone)]
pub struct LoadOutcome {
    pub table: RawTable,
    /// Numeric cells that failed to parse and were treated as missing.
    pub unparseable_numeric_cells: usize,
    /// Rows dropped because their target was missing or unparseable.
    pub dropped_target_rows: usize,
}

fn is_missing_token(s: &str) -> bool {
    let t = s.trim();
    t.is_empty() || t.eq_ignore_ascii_case("n/a")
}

/// Read a CSV table. Empty cells and `n/a` are missing; numeric cells
/// that fail to parse become missing; rows without a usable target are
/// dropped and counted.
pub fn load_table(path: &Path, schema: &Schema) -> Result<LoadOutcome, DatasetError> {
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_path(path)?;
    let headers: Vec<String> = reader.headers()?.iter().map(|s| s.to_string()).collect();
    let records: Vec<csv::StringRecord> = reader.records().collect::<Result<_, _>>()?;
    load_from_records(&headers, &records, schema)
}

fn load_from_records(
    headers: &[String],
    records: &[csv::StringRecord],
    schema: &Schema,
) -> Result<LoadOutcome, DatasetError> {
    let col_pos = |name: &str| -> Result<usize, DatasetError> {
        headers
            .iter()
            .position(|h| h == name)
            .ok_or_else(|| DatasetError::MissingColumn(name.to_string()))
    };
    let entity_pos = col_pos(&schema.entity)?;
    let date_pos = col_pos(&schema.date)?;
    let target_pos = col_pos(&schema.target)?;
    for name in schema.roles.keys() {
        col_pos(name)?;
    }

    let feature_pos: Vec<usize> = (0..headers.len())
        .filter(|&i| i != entity_pos && i != date_pos && i != target_pos)
        .collect();

    // Role per feature column: explicit schema entry wins, otherwise a
    // column is numeric when every non-missing cell parses.
    let columns: Vec<ColumnDef> = feature_pos
        .iter()
        .map(|&i| {
            let name = headers[i].clone();
            let role = schema.roles.get(&name).copied().unwrap_or_else(|| {
                let all_numeric = records.iter().all(|rec| {
                    let cell = rec.get(i).unwrap_or("");
                    is_missing_token(cell) || cell.trim().parse::<f64>().is_ok()
                });
                if all_numeric {
                    ColumnRole::Numeric
                } else {
                    ColumnRole::Categorical
                }
            });
            ColumnDef { name, role }
        })
        .collect();

    let mut rows = Vec::with_capacity(records.len());
    let mut seen: BTreeSet<(String, NaiveDate)> = BTreeSet::new();
    let mut unparseable_numeric_cells = 0usize;
    let mut dropped_target_rows = 0usize;

    for (row_idx, rec) in records.iter().enumerate() {
        let line = row_idx + 2; // 1-based, after the header line
        let entity_id = rec.get(entity_pos).unwrap_or("").trim().to_string();
        let date_raw = rec.get(date_pos).unwrap_or("").trim().to_string();
        let log_date: NaiveDate = date_raw.parse().map_err(|_| DatasetError::InvalidDate {
            row: line,
            value: date_raw.clone(),
        })?;

        let target_raw = rec.get(target_pos).unwrap_or("");
        let target = if is_missing_token(target_raw) {
            None
        } else {
            match target_raw.trim().parse::<f64>() {
                Ok(v) if v.is_finite() && v >= 0.0 => Some(v),
                Ok(v) => {
                    return Err(DatasetError::InvalidTarget {
                        row: line,
                        value: v,
                    })
                }
                Err(_) => None,
            }
        };
        let Some(target) = target else {
            dropped_target_rows += 1;
            continue;
        };

        if !seen.insert((entity_id.clone(), log_date)) {
            return Err(DatasetError::DuplicateKey {
                entity: entity_id,
                date: log_date,
            });
        }

        let values = feature_pos
            .iter()
            .zip(columns.iter())
            .map(|(&i, def)| {
                let cell = rec.get(i).unwrap_or("");
                if is_missing_token(cell) {
                    return None;
                }
                match def.role {
                    ColumnRole::Numeric => match cell.trim().parse::<f64>() {
                        Ok(v) if v.is_finite() => Some(Cell::Num(v)),
                        _ => {
                            unparseable_numeric_cells += 1;
                            None
                        }
                    },
                    ColumnRole::Categorical => Some(Cell::Cat(cell.trim().to_string())),
                }
            })
            .collect();

        rows.push(RawRecord {
            entity_id,
            log_date,
            values,
            target: Some(target),
        });
    }

    if rows.is_empty() {
        return Err(DatasetError::EmptyTable);
    }

    let table = RawTable {
        entity_column: schema.entity.clone(),
        date_column: schema.date.clone(),
        target_column: schema.target.clone(),
        columns,
        rows,
    };
    Ok(LoadOutcome {
        table,
        unparseable_numeric_cells,
        dropped_target_rows,
    })
}

/// Write a table as CSV with the canonical layout
/// `entity,date,<features...>,target`. Missing cells become empty fields.
pub fn write_table(table: &RawTable, path: &Path) -> Result<(), DatasetError> {
    let mut writer = csv::Writer::from_path(path)?;
    let mut header = vec![table.entity_column.clone(), table.date_column.clone()];
    header.extend(table.columns.iter().map(|c| c.name.clone()));
    header.push(table.target_column.clone());
    writer.write_record(&header)?;
    for rec in &table.rows {
        let mut out = vec![rec.entity_id.clone(), rec.log_date.to_string()];
        for cell in &rec.values {
            out.push(match cell {
                Some(Cell::Num(v)) => format!("{v}"),
                Some(Cell::Cat(s)) => s.clone(),
                None => String::new(),
            });
        }
        out.push(rec.target.map(|v| format!("{v}")).unwrap_or_default());
        writer.write_record(&out)?;
    }
    writer.flush()?;
    Ok(())
}

const REGIONS: [&str; 4] = ["north", "south", "east", "west"];
const REGION_SHIFT: [f64; 4] = [0.0, 8.0, 16.0, 24.0];
const BID_COEF: f64 = 3.0;
const QUALITY_COEF: f64 = 4.0;

/// Per-phase seasonal offsets, integer-valued so that a noise-free table
/// is an exact linear function of its generating columns.
fn seasonal_profile(period: usize) -> Vec<f64> {
    (0..period)
        .map(|k| (10.0 * (TAU * k as f64 / period as f64).sin()).round())
        .collect()
}

/// Generate a synthetic click table. Deterministic for a fixed config:
/// the target is `base(entity) + region shift + trend·day + seasonal +
/// 3·bid + 4·quality + noise`, floored at zero and rounded to an integer
/// count. All informative ingredients are integer-valued, so with
/// `noise_std = 0` the rounding is a no-op and the target is an exact
/// linear function of the generating columns.
pub fn generate_synthetic(cfg: &SyntheticConfig) -> Result<RawTable, DatasetError> {
    cfg.validate()?;
    let mut rng = rng_from(cfg.seed);
    let start: NaiveDate = NaiveDate::from_ymd_opt(2020, 1, 1).expect("fixed epoch");
    let profile = seasonal_profile(cfg.seasonal_period);
    let noise = Normal::new(0.0, cfg.noise_std.max(f64::MIN_POSITIVE)).expect("valid std");
    let unit_normal = Normal::new(0.0, 1.0).expect("valid std");

    let mut columns = vec![
        ColumnDef {
            name: "bid".into(),
            role: ColumnRole::Numeric,
        },
        ColumnDef {
            name: "quality".into(),
            role: ColumnRole::Numeric,
        },
        ColumnDef {
            name: "region".into(),
            role: ColumnRole::Categorical,
        },
    ];
    for j in 0..cfg.n_noise_features {
        columns.push(ColumnDef {
            name: format!("noise_{j}"),
            role: ColumnRole::Numeric,
        });
    }

    let mut rows = Vec::with_capacity(cfg.n_entities * cfg.n_days);
    for e in 0..cfg.n_entities {
        let entity_id = format!("hotel_{:03}", e + 1);
        let base = 30.0 + 7.0 * (e % 8) as f64;
        let region_idx = e % REGIONS.len();
        for d in 0..cfg.n_days {
            let log_date = start + chrono::Days::new(d as u64);
            let bid = rng.random_range(1..=20) as f64;
            let quality = rng.random_range(1..=5) as f64;
            let noise_vals: Vec<f64> = (0..cfg.n_noise_features)
                .map(|_| unit_normal.sample(&mut rng))
                .collect();
            let eps = if cfg.noise_std > 0.0 {
                noise.sample(&mut rng)
            } else {
                0.0
            };

            let raw = base
                + REGION_SHIFT[region_idx]
                + cfg.trend_slope * d as f64
                + profile[d % cfg.seasonal_period]
                + BID_COEF * bid
                + QUALITY_COEF * quality
                + eps;
            let target = raw.max(0.0).round();

            let mut values: Vec<Option<Cell>> = Vec::with_capacity(columns.len());
            values.push(Some(Cell::Num(bid)));
            values.push(Some(Cell::Num(quality)));
            values.push(Some(Cell::Cat(REGIONS[region_idx].to_string())));
            for v in noise_vals {
                values.push(Some(Cell::Num(v)));
            }
            // Missingness hits feature cells only, never keys or target.
            for cell in values.iter_mut() {
                if rng.random::<f64>() < cfg.missing_rate {
                    *cell = None;
                }
            }

            rows.push(RawRecord {
                entity_id: entity_id.clone(),
                log_date,
                values,
                target: Some(target),
            });
        }
    }

    Ok(RawTable {
        entity_column: "entity_id".into(),
        date_column: "date".into(),
        target_column: "clicks".into(),
        columns,
        rows,
    })
}

/// Split at `test_day`: train keeps strictly earlier rows, test keeps the
/// day itself, anything later is discarded.
pub fn chronological_split(
    table: &RawTable,
    test_day: NaiveDate,
) -> Result<ChronoSplit, DatasetError> {
    if !table.rows.iter().any(|r| r.log_date == test_day) {
        return Err(DatasetError::DayAbsent(test_day));
    }
    if !table.rows.iter().any(|r| r.log_date < test_day) {
        return Err(DatasetError::NoTrainData(test_day));
    }
    let train_rows: Vec<RawRecord> = table
        .rows
        .iter()
        .filter(|r| r.log_date < test_day)
        .cloned()
        .collect();
    let test_rows: Vec<RawRecord> = table
        .rows
        .iter()
        .filter(|r| r.log_date == test_day)
        .cloned()
        .collect();
    Ok(ChronoSplit {
        train: table.with_rows(train_rows),
        test: table.with_rows(test_rows),
        test_day,
    })
}

impl RawTable {
    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }

    /// Same shape (schema and columns), different rows.
    pub fn with_rows(&self, rows: Vec<RawRecord>) -> RawTable {
        RawTable {
            entity_column: self.entity_column.clone(),
            date_column: self.date_column.clone(),
            target_column: self.target_column.clone(),
            columns: self.columns.clone(),
            rows,
        }
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.columns.iter().position(|c| c.name == name)
    }

    /// Sorted distinct logging days.
    pub fn distinct_days(&self) -> Vec<NaiveDate> {
        let set: BTreeSet<NaiveDate> = self.rows.iter().map(|r| r.log_date).collect();
        set.into_iter().collect()
    }

    /// Rows from both tables, for pipelines that need the union of a
    /// train window and its test day.
    pub fn concat(&self, other: &RawTable) -> RawTable {
        let mut rows = self.rows.clone();
        rows.extend(other.rows.iter().cloned());
        self.with_rows(rows)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    fn write_csv(content: &str) -> tempfile::NamedTempFile {
        let mut f = tempfile::NamedTempFile::new().unwrap();
        f.write_all(content.as_bytes()).unwrap();
        f.flush().unwrap();
        f
    }

    #[test]
    fn clean_csv_loads_fully() {
        let f = write_csv(
            "entity_id,date,bid,region,clicks\n\
             h1,2020-01-01,5,north,12\n\
             h1,2020-01-02,6,north,14\n\
             h2,2020-01-01,7,south,20\n",
        );
        let out = load_table(f.path(), &Schema::default()).unwrap();
        assert_eq!(out.table.n_rows(), 3);
        assert_eq!(out.unparseable_numeric_cells, 0);
        assert_eq!(out.dropped_target_rows, 0);
        assert_eq!(out.table.columns[0].role, ColumnRole::Numeric);
        assert_eq!(out.table.columns[1].role, ColumnRole::Categorical);
        let missing = out
            .table
            .rows
            .iter()
            .flat_map(|r| r.values.iter())
            .filter(|c| c.is_none())
            .count();
        assert_eq!(missing, 0);
    }

    #[test]
    fn unparseable_numeric_cell_becomes_missing() {
        let f = write_csv(
            "entity_id,date,bid,clicks\n\
             h1,2020-01-01,n/a,12\n\
             h1,2020-01-02,oops,14\n\
             h1,2020-01-03,3,15\n",
        );
        let mut schema = Schema::default();
        schema.roles.insert("bid".into(), ColumnRole::Numeric);
        let out = load_table(f.path(), &schema).unwrap();
        // Hand-built expectation: three retained rows, first two bids missing.
        assert_eq!(out.table.n_rows(), 3);
        assert_eq!(out.table.rows[0].values[0], None);
        assert_eq!(out.table.rows[1].values[0], None);
        assert_eq!(out.table.rows[2].values[0], Some(Cell::Num(3.0)));
        assert_eq!(out.unparseable_numeric_cells, 1); // "oops" only; n/a is plain missing
    }

    #[test]
    fn duplicate_key_rejected() {
        let f = write_csv(
            "entity_id,date,bid,clicks\n\
             hotel_1,2020-01-05,1,5\n\
             hotel_1,2020-01-05,2,6\n",
        );
        let err = load_table(f.path(), &Schema::default()).unwrap_err();
        assert!(matches!(err, DatasetError::DuplicateKey { .. }));
    }

    #[test]
    fn schema_missing_column_rejected() {
        let f = write_csv("entity_id,when,bid,clicks\nh1,2020-01-01,1,5\n");
        let err = load_table(f.path(), &Schema::default()).unwrap_err();
        assert!(matches!(err, DatasetError::MissingColumn(c) if c == "date"));
    }

    #[test]
    fn missing_target_rows_dropped_with_counter() {
        let f = write_csv(
            "entity_id,date,bid,clicks\n\
             h1,2020-01-01,1,\n\
             h1,2020-01-02,2,bad\n\
             h1,2020-01-03,3,7\n",
        );
        let out = load_table(f.path(), &Schema::default()).unwrap();
        assert_eq!(out.table.n_rows(), 1);
        assert_eq!(out.dropped_target_rows, 2);
    }

    #[test]
    fn negative_target_rejected() {
        let f = write_csv("entity_id,date,bid,clicks\nh1,2020-01-01,1,-3\n");
        let err = load_table(f.path(), &Schema::default()).unwrap_err();
        assert!(matches!(err, DatasetError::InvalidTarget { .. }));
    }

    #[test]
    fn table_with_no_usable_rows_is_empty() {
        // Every row loses its target, so nothing remains.
        let f = write_csv("entity_id,date,bid,clicks\nh1,2020-01-01,1,\nh1,2020-01-02,2,n/a\n");
        let err = load_table(f.path(), &Schema::default()).unwrap_err();
        assert!(matches!(err, DatasetError::EmptyTable));
    }

    #[test]
    fn roundtrip_preserves_table() {
        let cfg = SyntheticConfig {
            n_entities: 3,
            n_days: 5,
            seasonal_period: 5,
            missing_rate: 0.2,
            ..Default::default()
        };
        let table = generate_synthetic(&cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("t.csv");
        write_table(&table, &path).unwrap();
        let loaded = load_table(&path, &Schema::default()).unwrap().table;
        assert_eq!(loaded, table);
        // Second generation is byte-identical too.
        assert_eq!(generate_synthetic(&cfg).unwrap(), table);
    }

    #[test]
    fn zero_variation_config_gives_constant_per_entity() {
        let cfg = SyntheticConfig {
            n_entities: 2,
            n_days: 10,
            seasonal_period: 1, // flat profile
            trend_slope: 0.0,
            noise_std: 0.0,
            missing_rate: 0.0,
            n_noise_features: 0,
            seed: 7,
        };
        let table = generate_synthetic(&cfg).unwrap();
        for e in ["hotel_001", "hotel_002"] {
            let targets: BTreeSet<String> = table
                .rows
                .iter()
                .filter(|r| r.entity_id == e)
                .map(|r| {
                    // Remove the per-day feature contribution; the remainder
                    // is the entity's fixed level.
                    let bid = match r.values[0] {
                        Some(Cell::Num(v)) => v,
                        _ => panic!(),
                    };
                    let quality = match r.values[1] {
                        Some(Cell::Num(v)) => v,
                        _ => panic!(),
                    };
                    format!(
                        "{}",
                        r.target.unwrap() - BID_COEF * bid - QUALITY_COEF * quality
                    )
                })
                .collect();
            assert_eq!(targets.len(), 1, "entity {e} level not constant");
        }
    }

    #[test]
    fn noiseless_target_is_exact_in_the_generating_basis() {
        // With noise off, every generated ingredient is integer-valued,
        // rounding is a no-op, and the target is an exact linear function
        // of the generating columns. Ordinary least squares on that basis
        // must reach R^2 = 1 within 1e-8.
        let cfg = SyntheticConfig {
            n_entities: 5,
            n_days: 28,
            seasonal_period: 7,
            trend_slope: 1.0,
            noise_std: 0.0,
            missing_rate: 0.0,
            n_noise_features: 0,
            seed: 21,
        };
        let table = generate_synthetic(&cfg).unwrap();
        let start = table.distinct_days()[0];
        let entities: Vec<String> = {
            let set: BTreeSet<&str> = table.rows.iter().map(|r| r.entity_id.as_str()).collect();
            set.into_iter().map(String::from).collect()
        };

        // Full-rank design: bid, quality, day index, entity dummies and
        // seasonal-phase dummies each with one level absorbed into the
        // intercept.
        let mut rows = Vec::new();
        let mut target = Vec::new();
        for rec in &table.rows {
            let bid = match rec.values[0] {
                Some(Cell::Num(v)) => v,
                _ => panic!(),
            };
            let quality = match rec.values[1] {
                Some(Cell::Num(v)) => v,
                _ => panic!(),
            };
            let day_idx = (rec.log_date - start).num_days() as f64;
            let mut row = vec![bid, quality, day_idx];
            for e in &entities[1..] {
                row.push(if rec.entity_id == *e { 1.0 } else { 0.0 });
            }
            let phase = (rec.log_date - start).num_days() as usize % cfg.seasonal_period;
            for p in 1..cfg.seasonal_period {
                row.push(if phase == p { 1.0 } else { 0.0 });
            }
            rows.push(row);
            target.push(rec.target.unwrap());
        }
        let p = rows[0].len();
        let m = crate::matrix::FeatureMatrix::new(
            (0..p).map(|i| format!("c{i}")).collect(),
            rows,
            target,
            table
                .rows
                .iter()
                .map(|r| crate::matrix::RowKey {
                    entity_id: r.entity_id.clone(),
                    log_date: r.log_date,
                })
                .collect(),
        )
        .unwrap();
        let model = crate::regressors::fit(
            &crate::regressors::RegressorSpec::new(crate::regressors::Algorithm::Ols),
            &m,
        )
        .unwrap();
        let preds = model.predict(&m).unwrap();
        let r2 = crate::evaluate::r2_score(&m.target, &preds).unwrap().r2;
        assert!(r2 > 1.0 - 1e-8, "generator basis OLS r2 = {r2}");
    }

    #[test]
    fn split_covers_rows_and_discards_future() {
        let cfg = SyntheticConfig {
            n_entities: 2,
            n_days: 30,
            ..Default::default()
        };
        let table = generate_synthetic(&cfg).unwrap();
        let days = table.distinct_days();
        let split = chronological_split(&table, days[19]).unwrap();
        assert!(split.train.rows.iter().all(|r| r.log_date < days[19]));
        assert!(split.test.rows.iter().all(|r| r.log_date == days[19]));
        let future = table.rows.iter().filter(|r| r.log_date > days[19]).count();
        assert_eq!(
            split.train.n_rows() + split.test.n_rows() + future,
            table.n_rows()
        );
        assert_eq!(future, 10 * 2);
    }

    #[test]
    fn split_on_last_day() {
        let cfg = SyntheticConfig {
            n_entities: 1,
            n_days: 30,
            ..Default::default()
        };
        let table = generate_synthetic(&cfg).unwrap();
        let days = table.distinct_days();
        let split = chronological_split(&table, days[29]).unwrap();
        assert_eq!(split.train.n_rows(), 29);
        assert_eq!(split.test.n_rows(), 1);
    }

    #[test]
    fn split_on_earliest_day_fails() {
        let cfg = SyntheticConfig {
            n_entities: 1,
            n_days: 5,
            seasonal_period: 5,
            ..Default::default()
        };
        let table = generate_synthetic(&cfg).unwrap();
        let days = table.distinct_days();
        assert!(matches!(
            chronological_split(&table, days[0]),
            Err(DatasetError::NoTrainData(_))
        ));
        let absent = days[4] + chrono::Days::new(10);
        assert!(matches!(
            chronological_split(&table, absent),
            Err(DatasetError::DayAbsent(_))
        ));
    }

    #[test]
    fn invalid_config_rejected() {
        let cfg = SyntheticConfig {
            seasonal_period: 999,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(DatasetError::InvalidConfig(_))
        ));
        let cfg = SyntheticConfig {
            missing_rate: 1.5,
            ..Default::default()
        };
        assert!(matches!(
            generate_synthetic(&cfg),
            Err(DatasetError::InvalidConfig(_))
        ));
    }
}
