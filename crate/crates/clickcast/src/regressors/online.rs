//! Online linear learners: mini-batch SGD with an inverse-scaling rate
//! and epsilon-insensitive passive-aggressive updates.
//!
//! Both standardize the design internally (and center the target) so the
//! step sizes behave across wildly different column scales; the fitted
//! coefficients are folded back to the original space.

use nalgebra::{DMatrix, DVector};
use rand::seq::SliceRandom;

use super::{Algorithm, LinearModel, RegressorError};
use crate::seeding::rng_from;

struct Standardized {
    xs: DMatrix<f64>,
    means: Vec<f64>,
    stds: Vec<f64>,
    yc: DVector<f64>,
    y_mean: f64,
}

fn standardize(x: &DMatrix<f64>, y: &DVector<f64>) -> Standardized {
    let n = x.nrows() as f64;
    let means: Vec<f64> = (0..x.ncols()).map(|c| x.column(c).sum() / n).collect();
    let stds: Vec<f64> = (0..x.ncols())
        .map(|c| {
            let m = means[c];
            let var = x.column(c).iter().map(|v| (v - m) * (v - m)).sum::<f64>() / n;
            let s = var.sqrt();
            if s > 0.0 {
                s
            } else {
                1.0
            }
        })
        .collect();
    let xs = DMatrix::from_fn(x.nrows(), x.ncols(), |i, j| {
        (x[(i, j)] - means[j]) / stds[j]
    });
    let y_mean = y.sum() / y.len() as f64;
    let yc = y.map(|v| v - y_mean);
    Standardized {
        xs,
        means,
        stds,
        yc,
        y_mean,
    }
}

/// Fold standardized-space coefficients back to the raw feature space.
fn fold_back(
    algorithm: Algorithm,
    w: &[f64],
    b: f64,
    s: &Standardized,
) -> Result<LinearModel, RegressorError> {
    if w.iter().any(|v| !v.is_finite()) || !b.is_finite() {
        return Err(RegressorError::TrainingDiverged { algorithm });
    }
    let weights: Vec<f64> = w.iter().zip(&s.stds).map(|(wi, sd)| wi / sd).collect();
    let shift: f64 = weights.iter().zip(&s.means).map(|(wi, m)| wi * m).sum();
    Ok(LinearModel {
        algorithm,
        weights,
        intercept: s.y_mean + b - shift,
        jitter_fallback: false,
    })
}

/// Squared-loss mini-batch SGD, learning rate `eta0 / t^power_t`.
#[allow(clippy::too_many_arguments)]
pub(super) fn fit_sgd(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    eta0: f64,
    power_t: f64,
    epochs: usize,
    batch_size: usize,
    l2: f64,
    seed: u64,
) -> Result<LinearModel, RegressorError> {
    let s = standardize(x, y);
    let n = x.nrows();
    let p = x.ncols();
    let batch = batch_size.clamp(1, n);
    let mut rng = rng_from(seed);

    let mut w = vec![0.0f64; p];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    let mut t = 0usize;
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for chunk in order.chunks(batch) {
            t += 1;
            let lr = eta0 / (t as f64).powf(power_t);
            let m = chunk.len() as f64;
            let mut grad_w = vec![0.0f64; p];
            let mut grad_b = 0.0f64;
            for &i in chunk {
                let row = s.xs.row(i);
                let err = row.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b - s.yc[i];
                for j in 0..p {
                    grad_w[j] += err * row[j];
                }
                grad_b += err;
            }
            for j in 0..p {
                w[j] -= lr * (grad_w[j] / m + l2 * w[j]);
            }
            b -= lr * grad_b / m;
        }
    }
    fold_back(Algorithm::SgdLinear, &w, b, &s)
}

/// Epsilon-insensitive passive-aggressive regression (PA-I step clamp)
/// over shuffled epochs.
pub(super) fn fit_passive_aggressive(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    c: f64,
    epsilon: f64,
    epochs: usize,
    seed: u64,
) -> Result<LinearModel, RegressorError> {
    let s = standardize(x, y);
    let n = x.nrows();
    let p = x.ncols();
    let mut rng = rng_from(seed);

    let mut w = vec![0.0f64; p];
    let mut b = 0.0f64;
    let mut order: Vec<usize> = (0..n).collect();
    for _ in 0..epochs {
        order.shuffle(&mut rng);
        for &i in &order {
            let row = s.xs.row(i);
            let pred = row.iter().zip(&w).map(|(xi, wi)| xi * wi).sum::<f64>() + b;
            let err = pred - s.yc[i];
            let loss = err.abs() - epsilon;
            if loss <= 0.0 {
                continue;
            }
            // +1 accounts for the implicit bias input.
            let sq_norm = row.iter().map(|v| v * v).sum::<f64>() + 1.0;
            let tau = (loss / sq_norm).min(c);
            let dir = -err.signum();
            for j in 0..p {
                w[j] += dir * tau * row[j];
            }
            b += dir * tau;
        }
    }
    fold_back(Algorithm::PassiveAggressive, &w, b, &s)
}
