//! Dense feature matrix with column names, row keys, and aligned targets.

use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Identifies the table row a matrix row came from.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RowKey {
    pub entity_id: String,
    pub log_date: NaiveDate,
}

/// Row-major dense matrix of encoded features plus the aligned target
/// vector. All entries are finite once preprocessing has run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureMatrix {
    values: Vec<f64>,
    n_cols: usize,
    pub column_names: Vec<String>,
    pub target: Vec<f64>,
    pub row_keys: Vec<RowKey>,
}

#[derive(Debug, Error)]
pub enum MatrixError {
    #[error("row {row} has {got} values, expected {expected}")]
    RaggedRow {
        row: usize,
        got: usize,
        expected: usize,
    },
    #[error("{names} column names for {cols} columns")]
    NameMismatch { names: usize, cols: usize },
    #[error("column {0:?} not present")]
    UnknownColumn(String),
}

impl FeatureMatrix {
    pub fn new(
        column_names: Vec<String>,
        rows: Vec<Vec<f64>>,
        target: Vec<f64>,
        row_keys: Vec<RowKey>,
    ) -> Result<Self, MatrixError> {
        let n_cols = column_names.len();
        let mut values = Vec::with_capacity(rows.len() * n_cols);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n_cols {
                return Err(MatrixError::RaggedRow {
                    row: i,
                    got: row.len(),
                    expected: n_cols,
                });
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            values,
            n_cols,
            column_names,
            target,
            row_keys,
        })
    }

    pub fn from_flat(
        column_names: Vec<String>,
        values: Vec<f64>,
        target: Vec<f64>,
        row_keys: Vec<RowKey>,
    ) -> Result<Self, MatrixError> {
        let n_cols = column_names.len();
        if n_cols == 0 && !values.is_empty() {
            return Err(MatrixError::NameMismatch { names: 0, cols: 1 });
        }
        if n_cols > 0 && !values.len().is_multiple_of(n_cols) {
            return Err(MatrixError::NameMismatch {
                names: n_cols,
                cols: values.len(),
            });
        }
        Ok(Self {
            values,
            n_cols,
            column_names,
            target,
            row_keys,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.values
            .len()
            .checked_div(self.n_cols)
            .unwrap_or(self.row_keys.len())
    }

    pub fn n_cols(&self) -> usize {
        self.n_cols
    }

    pub fn get(&self, row: usize, col: usize) -> f64 {
        self.values[row * self.n_cols + col]
    }

    pub fn row(&self, row: usize) -> &[f64] {
        &self.values[row * self.n_cols..(row + 1) * self.n_cols]
    }

    pub fn column(&self, col: usize) -> Vec<f64> {
        (0..self.n_rows()).map(|r| self.get(r, col)).collect()
    }

    pub fn column_index(&self, name: &str) -> Option<usize> {
        self.column_names.iter().position(|n| n == name)
    }

    /// True when every feature value and every target is finite.
    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite()) && self.target.iter().all(|v| v.is_finite())
    }

    /// New matrix with only the named columns, in the given order.
    pub fn select_columns(&self, names: &[String]) -> Result<Self, MatrixError> {
        let idx: Vec<usize> = names
            .iter()
            .map(|n| {
                self.column_index(n)
                    .ok_or_else(|| MatrixError::UnknownColumn(n.clone()))
            })
            .collect::<Result<_, _>>()?;
        let mut values = Vec::with_capacity(self.n_rows() * idx.len());
        for r in 0..self.n_rows() {
            let row = self.row(r);
            values.extend(idx.iter().map(|&c| row[c]));
        }
        Ok(Self {
            values,
            n_cols: idx.len(),
            column_names: names.to_vec(),
            target: self.target.clone(),
            row_keys: self.row_keys.clone(),
        })
    }

    /// New matrix holding the given rows, in the given order.
    pub fn select_rows(&self, rows: &[usize]) -> Self {
        let mut values = Vec::with_capacity(rows.len() * self.n_cols);
        for &r in rows {
            values.extend_from_slice(self.row(r));
        }
        Self {
            values,
            n_cols: self.n_cols,
            column_names: self.column_names.clone(),
            target: rows.iter().map(|&r| self.target[r]).collect(),
            row_keys: rows.iter().map(|&r| self.row_keys[r].clone()).collect(),
        }
    }

    /// Indices of rows logged strictly before `day`.
    pub fn rows_before(&self, day: NaiveDate) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.row_keys[r].log_date < day)
            .collect()
    }

    /// Indices of rows logged exactly on `day`.
    pub fn rows_on(&self, day: NaiveDate) -> Vec<usize> {
        (0..self.n_rows())
            .filter(|&r| self.row_keys[r].log_date == day)
            .collect()
    }

    pub fn to_dmatrix(&self) -> DMatrix<f64> {
        DMatrix::from_row_slice(self.n_rows(), self.n_cols, &self.values)
    }

    pub fn target_dvector(&self) -> DVector<f64> {
        DVector::from_column_slice(&self.target)
    }
}
