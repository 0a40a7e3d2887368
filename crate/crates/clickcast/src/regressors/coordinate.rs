//! Cyclic coordinate descent for the lasso / elastic-net objective
//!
//! ```text
//! 1/(2n) ||y - Xw||^2 + alpha * l1_ratio * ||w||_1
//!                     + alpha * (1 - l1_ratio)/2 * ||w||^2
//! ```
//!
//! on centered data, with the duality gap as the stopping criterion. The
//! critical penalty `alpha_max = max|X'y| / n` zeroes every weight
//! exactly: above it, each soft-threshold update clamps to zero.

use nalgebra::{DMatrix, DVector};

use super::linear::{center_matrix, center_vector, intercept_from_centering};
use super::{Algorithm, LinearModel, RegressorError};

fn soft_threshold(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// Coordinate descent on already-centered `x`, `y`; converges on the
/// duality gap (or a stationary sweep when the penalty is zero).
pub(super) fn coordinate_descent(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    l1_ratio: f64,
    max_iter: usize,
    tol: f64,
) -> DVector<f64> {
    let n = x.nrows() as f64;
    let p = x.ncols();
    let l1 = n * alpha * l1_ratio;
    let l2 = n * alpha * (1.0 - l1_ratio);

    let col_sq: Vec<f64> = (0..p).map(|j| x.column(j).dot(&x.column(j))).collect();
    let mut w = DVector::<f64>::zeros(p);
    let mut resid = y.clone();
    let gap_tol = tol * y.dot(y).max(1e-12);
    let mut passes = 0;

    while passes < max_iter {
        let mut w_max: f64 = 0.0;
        let mut d_w_max: f64 = 0.0;
        for j in 0..p {
            if col_sq[j] == 0.0 {
                continue;
            }
            let w_old = w[j];
            // rho = x_j . (resid + x_j * w_old)
            let rho = x.column(j).dot(&resid) + col_sq[j] * w_old;
            // Relative guard on the KKT boundary: summation-order noise
            // must not leave ulp-sized weights at the critical penalty.
            let w_new = if rho.abs() <= l1 * (1.0 + 1e-12) {
                0.0
            } else {
                soft_threshold(rho, l1) / (col_sq[j] + l2)
            };
            if w_new != w_old {
                resid.axpy(w_old - w_new, &x.column(j).into_owned(), 1.0);
                w[j] = w_new;
            }
            d_w_max = d_w_max.max((w_new - w_old).abs());
            w_max = w_max.max(w_new.abs());
        }
        passes += 1;

        if alpha > 0.0 {
            let sweep_settled =
                w_max == 0.0 || d_w_max / w_max.max(1e-300) < tol || passes == max_iter;
            if sweep_settled && duality_gap(x, y, &w, &resid, l1, l2) < gap_tol {
                break;
            }
        } else if d_w_max < 1e-12 {
            // Penalty-free least squares has no dual certificate here;
            // stop when the sweep is stationary.
            break;
        }
    }

    w
}

/// Duality gap for the elastic-net problem, using the scaled residual as
/// the dual feasible point.
fn duality_gap(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    w: &DVector<f64>,
    resid: &DVector<f64>,
    l1: f64,
    l2: f64,
) -> f64 {
    let xta = x.transpose() * resid - w * l2;
    let dual_norm = xta.amax();
    let r_norm2 = resid.dot(resid);
    let w_norm2 = w.dot(w);
    let (scale, mut gap) = if dual_norm > l1 {
        let c = l1 / dual_norm;
        (c, 0.5 * (r_norm2 + c * c * r_norm2))
    } else {
        (1.0, r_norm2)
    };
    let l1_norm: f64 = w.iter().map(|v| v.abs()).sum();
    gap += l1 * l1_norm - scale * resid.dot(y) + 0.5 * l2 * (1.0 + scale * scale) * w_norm2;
    gap
}

pub(super) fn fit_elastic_net(
    algorithm: Algorithm,
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    l1_ratio: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LinearModel, RegressorError> {
    let (xc, means) = center_matrix(x);
    let (yc, y_mean) = center_vector(y);
    let weights = coordinate_descent(&xc, &yc, alpha, l1_ratio, max_iter, tol);
    Ok(LinearModel {
        algorithm,
        intercept: intercept_from_centering(&weights, &means, y_mean),
        weights: weights.iter().copied().collect(),
        jitter_fallback: false,
    })
}

/// `max |X'y| / n` on centered data: the smallest penalty that forces the
/// all-zero lasso solution.
pub fn lasso_alpha_max(x: &DMatrix<f64>, y: &DVector<f64>) -> f64 {
    let (xc, _) = center_matrix(x);
    let (yc, _) = center_vector(y);
    (xc.transpose() * yc).amax() / x.nrows() as f64
}
