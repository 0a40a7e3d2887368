//! Additive seasonal decomposition via a centered moving average.

use std::collections::BTreeMap;

use chrono::NaiveDate;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Additive components of a series: `trend + seasonal + residual`
/// reproduces the input everywhere (trend endpoints are filled from the
/// nearest defined value so the identity also holds at the edges).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Decomposition {
    pub trend: Vec<f64>,
    pub seasonal: Vec<f64>,
    pub residual: Vec<f64>,
    pub period: usize,
}

#[derive(Debug, Error, PartialEq)]
pub enum DecomposeError {
    #[error("series of length {len} is too short for period {period} (need at least 2*period)")]
    SeriesTooShort { len: usize, period: usize },
    #[error("period must be at least 1")]
    ZeroPeriod,
}

/// Decompose `series` additively with the given period.
///
/// The trend is a centered moving average of width `period` (for even
/// periods the two straddling windows are averaged, i.e. half weights on
/// the outermost points). The seasonal component is the per-phase mean of
/// the detrended interior, re-centered to sum to zero over one period.
pub fn seasonal_decompose(series: &[f64], period: usize) -> Result<Decomposition, DecomposeError> {
    if period == 0 {
        return Err(DecomposeError::ZeroPeriod);
    }
    let n = series.len();
    if n < 2 * period {
        return Err(DecomposeError::SeriesTooShort { len: n, period });
    }

    let half = period / 2;
    let mut trend = vec![0.0; n];
    for t in half..n - half {
        let window_sum = if period % 2 == 1 {
            series[t - half..=t + half].iter().sum::<f64>()
        } else {
            0.5 * series[t - half]
                + series[t - half + 1..t + half].iter().sum::<f64>()
                + 0.5 * series[t + half]
        };
        trend[t] = window_sum / period as f64;
    }
    // Nearest-value fill keeps downstream features finite at the edges.
    for t in 0..half {
        trend[t] = trend[half];
    }
    for t in n - half..n {
        trend[t] = trend[n - half - 1];
    }

    // Per-phase means over the interior (where the trend is genuinely
    // defined), re-centered to a zero-sum profile.
    let mut phase_sum = vec![0.0; period];
    let mut phase_count = vec![0usize; period];
    for t in half..n - half {
        phase_sum[t % period] += series[t] - trend[t];
        phase_count[t % period] += 1;
    }
    let mut profile: Vec<f64> = phase_sum
        .iter()
        .zip(&phase_count)
        .map(|(s, &c)| if c > 0 { s / c as f64 } else { 0.0 })
        .collect();
    let mean = profile.iter().sum::<f64>() / period as f64;
    for p in profile.iter_mut() {
        *p -= mean;
    }

    let seasonal: Vec<f64> = (0..n).map(|t| profile[t % period]).collect();
    let residual: Vec<f64> = (0..n).map(|t| series[t] - trend[t] - seasonal[t]).collect();

    Ok(Decomposition {
        trend,
        seasonal,
        residual,
        period,
    })
}

impl Decomposition {
    /// Range of indices where the trend came from a full window rather
    /// than the edge fill.
    pub fn interior(&self) -> std::ops::Range<usize> {
        let half = self.period / 2;
        half..self.trend.len() - half
    }
}

/// Date-sorted observations per entity.
pub type EntityObservations = BTreeMap<String, Vec<(NaiveDate, f64)>>;

/// Decomposition fitted per (column, entity) on a training window, looked
/// up at transform time. Rows receive the previous day's trend and
/// residual and the current day's seasonal-phase offset, so no value ever
/// depends on the row's own target.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FittedDecompose {
    pub period: usize,
    /// column name -> entity id -> fitted series state
    pub states: BTreeMap<String, BTreeMap<String, EntityDecompose>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EntityDecompose {
    pub first_date: NaiveDate,
    /// trend and residual by training date
    pub by_date: BTreeMap<NaiveDate, (f64, f64)>,
    pub profile: Vec<f64>,
    pub last_date: NaiveDate,
    pub last_trend: f64,
    pub last_residual: f64,
}

impl EntityDecompose {
    /// Features for a row on `date`: lagged trend, current-phase seasonal
    /// offset, lagged residual.
    pub fn features_for(&self, date: NaiveDate) -> (f64, f64, f64) {
        let prev = date.pred_opt().expect("date has a predecessor");
        let (trend, residual) = if prev > self.last_date {
            (self.last_trend, self.last_residual)
        } else {
            match self.by_date.get(&prev) {
                Some(&(t, r)) => (t, r),
                // No observation the day before: fall back to the latest
                // fitted day at or before it.
                None => self
                    .by_date
                    .range(..=prev)
                    .next_back()
                    .map(|(_, &(t, r))| (t, r))
                    .unwrap_or((self.last_trend, self.last_residual)),
            }
        };
        let phase = (date - self.first_date)
            .num_days()
            .rem_euclid(self.profile.len() as i64) as usize;
        (trend, self.profile[phase], residual)
    }
}

impl FittedDecompose {
    /// Fit on per-entity series. `series` maps column name -> entity ->
    /// date-sorted (date, value) observations. Entities with fewer than
    /// `2 * period` observations are skipped and flagged at transform.
    pub fn fit(period: usize, series: &BTreeMap<String, EntityObservations>) -> Self {
        let mut states: BTreeMap<String, BTreeMap<String, EntityDecompose>> = BTreeMap::new();
        for (column, per_entity) in series {
            states.entry(column.clone()).or_default();
            for (entity, obs) in per_entity {
                if obs.len() < 2 * period {
                    continue;
                }
                let values: Vec<f64> = obs.iter().map(|(_, v)| *v).collect();
                let Ok(dec) = seasonal_decompose(&values, period) else {
                    continue;
                };
                let mut by_date = BTreeMap::new();
                for (i, (date, _)) in obs.iter().enumerate() {
                    by_date.insert(*date, (dec.trend[i], dec.residual[i]));
                }
                // The calendar phase anchors at the entity's first day so
                // lookups stay meaningful past the training window.
                let first_date = obs[0].0;
                let mut profile = vec![0.0; period];
                for (i, (date, _)) in obs.iter().enumerate().take(period) {
                    let phase = (*date - first_date).num_days().rem_euclid(period as i64) as usize;
                    profile[phase] = dec.seasonal[i];
                }
                let (last_date, _) = *obs.last().expect("non-empty");
                states.entry(column.clone()).or_default().insert(
                    entity.clone(),
                    EntityDecompose {
                        first_date,
                        last_trend: *dec.trend.last().expect("non-empty"),
                        last_residual: *dec.residual.last().expect("non-empty"),
                        by_date,
                        profile,
                        last_date,
                    },
                );
            }
        }
        Self { period, states }
    }

    pub fn lookup(&self, column: &str, entity: &str) -> Option<&EntityDecompose> {
        self.states.get(column).and_then(|m| m.get(entity))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_series_decomposes_trivially() {
        let series = vec![5.0; 21];
        let d = seasonal_decompose(&series, 7).unwrap();
        #[allow(clippy::needless_range_loop)]
        for t in 0..series.len() {
            assert!((d.trend[t] - 5.0).abs() < 1e-12);
            assert!(d.seasonal[t].abs() < 1e-12);
            assert!(d.residual[t].abs() < 1e-12);
        }
    }

    #[test]
    fn sinusoid_residual_vanishes_in_interior() {
        let series: Vec<f64> = (0..28)
            .map(|t| (std::f64::consts::TAU * t as f64 / 7.0).sin())
            .collect();
        let d = seasonal_decompose(&series, 7).unwrap();
        let max_resid = d
            .interior()
            .map(|t| d.residual[t].abs())
            .fold(0.0, f64::max);
        assert!(max_resid < 1e-6, "interior residual {max_resid}");
    }

    #[test]
    fn additive_identity_holds_everywhere() {
        // Random-ish deterministic series; identity must hold to 1e-9.
        for period in [4usize, 5, 7, 12] {
            let series: Vec<f64> = (0..(3 * period + 5))
                .map(|t| {
                    let t = t as f64;
                    0.3 * t + 4.0 * (t * 0.8).sin() + ((t * 7.7).sin() * 100.0).fract()
                })
                .collect();
            let d = seasonal_decompose(&series, period).unwrap();
            for (t, &expected) in series.iter().enumerate() {
                let rebuilt = d.trend[t] + d.seasonal[t] + d.residual[t];
                assert!(
                    (rebuilt - expected).abs() < 1e-9,
                    "period {period} t {t}: {rebuilt} vs {expected}"
                );
            }
        }
    }

    #[test]
    fn seasonal_repeats_with_period() {
        let series: Vec<f64> = (0..30).map(|t| (t % 5) as f64 + 0.1 * t as f64).collect();
        let d = seasonal_decompose(&series, 5).unwrap();
        for t in 0..series.len() - 5 {
            assert!((d.seasonal[t] - d.seasonal[t + 5]).abs() < 1e-12);
        }
        let one_period: f64 = d.seasonal[..5].iter().sum();
        assert!(one_period.abs() < 1e-12);
    }

    #[test]
    fn short_series_rejected() {
        assert_eq!(
            seasonal_decompose(&[1.0; 13], 7),
            Err(DecomposeError::SeriesTooShort { len: 13, period: 7 })
        );
    }

    #[test]
    fn even_period_straddles_windows() {
        // Linear series: any centered average reproduces the line exactly,
        // including the even-period half-weight form.
        let series: Vec<f64> = (0..20).map(|t| 2.0 * t as f64 + 1.0).collect();
        let d = seasonal_decompose(&series, 4).unwrap();
        for t in d.interior() {
            assert!((d.trend[t] - series[t]).abs() < 1e-9);
        }
    }
}
