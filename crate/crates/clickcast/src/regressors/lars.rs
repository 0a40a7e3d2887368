//! Least-angle regression with the lasso modification, stopped at a
//! target penalty.
//!
//! Uses the same objective convention as the coordinate-descent solver
//! (`1/(2n) RSS + alpha ||w||_1`), so the path stops once the maximal
//! absolute correlation drops to `n * alpha`.

use nalgebra::{DMatrix, DVector};

use super::linear::{center_matrix, center_vector, intercept_from_centering};
use super::{Algorithm, LinearModel, RegressorError};

pub(super) fn fit_lasso_lars(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
    max_iter: usize,
) -> Result<LinearModel, RegressorError> {
    let (xc, means) = center_matrix(x);
    let (yc, y_mean) = center_vector(y);
    let n = xc.nrows();
    let p = xc.ncols();
    let target = alpha * n as f64;

    let mut w = vec![0.0f64; p];
    let mut resid = yc.clone();
    let mut active: Vec<usize> = Vec::new();
    let mut just_dropped: Option<usize> = None;
    let max_active = p.min(n.saturating_sub(1)).max(1);

    for _ in 0..max_iter {
        let corr = xc.transpose() * &resid;
        let c_max = corr.amax();
        if c_max <= target + 1e-12 || !c_max.is_finite() {
            break;
        }

        if active.len() < max_active {
            // Bring in the most correlated inactive column; ties resolve
            // to the lowest index via strict comparison.
            let mut best: Option<(usize, f64)> = None;
            for j in 0..p {
                if active.contains(&j) || just_dropped == Some(j) {
                    continue;
                }
                let a = corr[j].abs();
                if best.is_none_or(|(_, b)| a > b) {
                    best = Some((j, a));
                }
            }
            if let Some((j, a)) = best {
                if a >= c_max * (1.0 - 1e-12) {
                    active.push(j);
                    active.sort_unstable();
                }
            }
        }
        just_dropped = None;
        if active.is_empty() {
            break;
        }

        // Equiangular direction over the active set.
        let k = active.len();
        let xa = DMatrix::from_fn(n, k, |i, j| xc[(i, active[j])]);
        let signs = DVector::from_fn(k, |j, _| corr[active[j]].signum());
        let mut gram = xa.transpose() * &xa;
        let mut chol = gram.clone().cholesky();
        let mut jitter = 1e-10;
        while chol.is_none() && jitter < 1e-2 {
            for i in 0..k {
                gram[(i, i)] += jitter;
            }
            chol = gram.clone().cholesky();
            jitter *= 10.0;
        }
        let Some(chol) = chol else {
            return Err(RegressorError::SingularSystem);
        };
        let d = chol.solve(&signs);
        let denom = signs.dot(&d).max(1e-300);
        let a_scale = 1.0 / denom.sqrt();
        let omega = &d * a_scale;
        let u = &xa * &omega;

        // Step to the next event: an inactive column reaching the active
        // correlation level, an active weight crossing zero, or the
        // target penalty itself.
        let a_corr = xc.transpose() * &u;
        let mut gamma = c_max / a_scale;
        for j in 0..p {
            if active.contains(&j) {
                continue;
            }
            for cand in [
                (c_max - corr[j]) / (a_scale - a_corr[j]),
                (c_max + corr[j]) / (a_scale + a_corr[j]),
            ] {
                if cand > 1e-14 && cand < gamma {
                    gamma = cand;
                }
            }
        }
        let mut drop: Option<(usize, f64)> = None;
        for (slot, &j) in active.iter().enumerate() {
            if omega[slot] != 0.0 {
                let cross = -w[j] / omega[slot];
                if cross > 1e-14 && cross < gamma && drop.is_none_or(|(_, g)| cross < g) {
                    drop = Some((slot, cross));
                }
            }
        }
        if let Some((_, g)) = drop {
            gamma = g;
        }

        // Landing below the target penalty: take the partial step that
        // ends exactly at it.
        if c_max - gamma * a_scale < target {
            let partial = (c_max - target) / a_scale;
            for (slot, &j) in active.iter().enumerate() {
                w[j] += partial * omega[slot];
            }
            break;
        }

        for (slot, &j) in active.iter().enumerate() {
            w[j] += gamma * omega[slot];
        }
        resid -= &u * gamma;

        if let Some((slot, _)) = drop {
            let j = active.remove(slot);
            w[j] = 0.0;
            just_dropped = Some(j);
        }
    }

    let weights = DVector::from_vec(w);
    Ok(LinearModel {
        algorithm: Algorithm::LassoLars,
        intercept: intercept_from_centering(&weights, &means, y_mean),
        weights: weights.iter().copied().collect(),
        jitter_fallback: false,
    })
}
