//! Factorization-based linear solvers: ordinary least squares, ridge,
//! Bayesian ridge (evidence maximization), and Huber (IRLS).

use nalgebra::{DMatrix, DVector};

use super::{Algorithm, LinearModel, RegressorError};

/// Column means and the centered copy of a matrix.
pub(super) fn center_matrix(x: &DMatrix<f64>) -> (DMatrix<f64>, Vec<f64>) {
    let n = x.nrows() as f64;
    let means: Vec<f64> = (0..x.ncols()).map(|c| x.column(c).sum() / n).collect();
    let mut xc = x.clone();
    for (c, &m) in means.iter().enumerate() {
        for v in xc.column_mut(c).iter_mut() {
            *v -= m;
        }
    }
    (xc, means)
}

pub(super) fn center_vector(y: &DVector<f64>) -> (DVector<f64>, f64) {
    let mean = y.sum() / y.len() as f64;
    (y.map(|v| v - mean), mean)
}

/// Intercept folding the column means back in: `b = y_mean - w . x_means`.
pub(super) fn intercept_from_centering(
    weights: &DVector<f64>,
    x_means: &[f64],
    y_mean: f64,
) -> f64 {
    y_mean - weights.iter().zip(x_means).map(|(w, m)| w * m).sum::<f64>()
}

/// Least squares through a QR factorization. `None` when R's diagonal
/// signals rank deficiency.
fn solve_qr(a: &DMatrix<f64>, b: &DVector<f64>) -> Option<DVector<f64>> {
    let qr = a.clone().qr();
    let r = qr.r();
    let diag_max = (0..r.nrows().min(r.ncols()))
        .map(|i| r[(i, i)].abs())
        .fold(0.0, f64::max);
    let diag_min = (0..r.nrows().min(r.ncols()))
        .map(|i| r[(i, i)].abs())
        .fold(f64::INFINITY, f64::min);
    if diag_max <= 0.0 || diag_max.is_nan() || diag_min < 1e-10 * diag_max {
        return None;
    }
    let rhs = qr.q().transpose() * b;
    r.solve_upper_triangular(&rhs)
}

/// Normal equations with an L2 jitter, escalated until the factorization
/// succeeds. The entry point for the rank-deficient fallback contract.
fn solve_normal_jittered(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
    base: f64,
) -> Result<DVector<f64>, RegressorError> {
    let g = a.transpose() * a;
    let atb = a.transpose() * b;
    let mut jitter = base;
    for _ in 0..8 {
        let mut gj = g.clone();
        for i in 0..gj.nrows() {
            gj[(i, i)] += jitter;
        }
        if let Some(chol) = gj.cholesky() {
            return Ok(chol.solve(&atb));
        }
        jitter *= 10.0;
    }
    Err(RegressorError::SingularSystem)
}

/// Least squares on the raw system; flags when the jitter fallback fired.
pub(super) fn least_squares(
    a: &DMatrix<f64>,
    b: &DVector<f64>,
) -> Result<(DVector<f64>, bool), RegressorError> {
    match solve_qr(a, b) {
        Some(w) => Ok((w, false)),
        None => Ok((solve_normal_jittered(a, b, 1e-8)?, true)),
    }
}

pub(super) fn fit_ols(x: &DMatrix<f64>, y: &DVector<f64>) -> Result<LinearModel, RegressorError> {
    let (xc, means) = center_matrix(x);
    let (yc, y_mean) = center_vector(y);
    let (w, jitter_fallback) = least_squares(&xc, &yc)?;
    Ok(LinearModel {
        algorithm: Algorithm::Ols,
        intercept: intercept_from_centering(&w, &means, y_mean),
        weights: w.iter().copied().collect(),
        jitter_fallback,
    })
}

/// Closed-form ridge `(X'X + aI)^-1 X'y` on centered data, solved through
/// a Cholesky factorization; the intercept stays unpenalized.
pub(super) fn fit_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    alpha: f64,
) -> Result<LinearModel, RegressorError> {
    let (xc, means) = center_matrix(x);
    let (yc, y_mean) = center_vector(y);
    let w = solve_normal_jittered(&xc, &yc, alpha.max(1e-12))?;
    Ok(LinearModel {
        algorithm: Algorithm::Ridge,
        intercept: intercept_from_centering(&w, &means, y_mean),
        weights: w.iter().copied().collect(),
        jitter_fallback: false,
    })
}

/// Evidence maximization for an isotropic Gaussian weight prior: iterate
/// the weight precision and the noise precision on the SVD of the
/// centered design until the coefficients settle.
pub(super) fn fit_bayesian_ridge(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    max_iter: usize,
    tol: f64,
) -> Result<LinearModel, RegressorError> {
    let (xc, means) = center_matrix(x);
    let (yc, y_mean) = center_vector(y);
    let n = xc.nrows() as f64;

    let svd = xc.clone().svd(true, true);
    let u = svd.u.as_ref().ok_or(RegressorError::SingularSystem)?;
    let vt = svd.v_t.as_ref().ok_or(RegressorError::SingularSystem)?;
    let s = &svd.singular_values;
    let uty = u.transpose() * &yc;

    let y_var = yc.dot(&yc) / n;
    // Precisions: `noise` for observations, `weight` for coefficients;
    // the tiny prior terms keep the updates defined on degenerate data.
    let mut noise_prec = 1.0 / (y_var + 1e-7);
    let mut weight_prec = 1.0;
    const PRIOR: f64 = 1e-6;

    let mut w = DVector::zeros(xc.ncols());
    for _ in 0..max_iter {
        let k = weight_prec / noise_prec;
        let coef_s: Vec<f64> = s
            .iter()
            .zip(uty.iter())
            .map(|(&si, &ui)| si * ui / (si * si + k))
            .collect();
        let mut w_new = DVector::zeros(xc.ncols());
        for (i, &c) in coef_s.iter().enumerate() {
            w_new += vt.row(i).transpose() * c;
        }

        let gamma: f64 = s.iter().map(|&si| si * si / (si * si + k)).sum();
        let resid = &yc - &xc * &w_new;
        let rss = resid.dot(&resid);
        let wtw = w_new.dot(&w_new);
        weight_prec = (gamma + 2.0 * PRIOR) / (wtw + 2.0 * PRIOR);
        noise_prec = (n - gamma + 2.0 * PRIOR) / (rss + 2.0 * PRIOR);

        let delta = (&w_new - &w).amax();
        w = w_new;
        if delta < tol {
            break;
        }
    }

    Ok(LinearModel {
        algorithm: Algorithm::BayesianRidge,
        intercept: intercept_from_centering(&w, &means, y_mean),
        weights: w.iter().copied().collect(),
        jitter_fallback: false,
    })
}

/// Huber regression by iteratively reweighted least squares. The working
/// threshold is `delta` times a median-absolute-deviation scale estimate,
/// re-estimated each iteration.
pub(super) fn fit_huber(
    x: &DMatrix<f64>,
    y: &DVector<f64>,
    delta: f64,
    alpha: f64,
    max_iter: usize,
    tol: f64,
) -> Result<LinearModel, RegressorError> {
    let n = x.nrows();
    let p = x.ncols();
    // Augmented design with an explicit intercept column; the intercept
    // shares the row weights but not the L2 penalty (alpha is tiny).
    let mut aug = DMatrix::zeros(n, p + 1);
    aug.view_mut((0, 0), (n, p)).copy_from(x);
    for i in 0..n {
        aug[(i, p)] = 1.0;
    }

    let (mut coef, _) = least_squares(&aug, y)?;
    for _ in 0..max_iter {
        let resid = y - &aug * &coef;
        let mut abs_r: Vec<f64> = resid.iter().map(|r| r.abs()).collect();
        abs_r.sort_by(f64::total_cmp);
        let mad = abs_r[abs_r.len() / 2] / 0.6745;
        let scale = mad.max(1e-9);
        let threshold = delta * scale;

        let mut wa = aug.clone();
        let mut wy = y.clone();
        for i in 0..n {
            let r = resid[i].abs();
            let wgt = if r <= threshold { 1.0 } else { threshold / r };
            let sq = wgt.sqrt();
            for j in 0..=p {
                wa[(i, j)] *= sq;
            }
            wy[i] *= sq;
        }
        let new_coef = match solve_qr(&wa, &wy) {
            Some(c) => c,
            None => solve_normal_jittered(&wa, &wy, alpha.max(1e-8))?,
        };
        let delta_c = (&new_coef - &coef).amax();
        coef = new_coef;
        if delta_c < tol {
            break;
        }
    }

    Ok(LinearModel {
        algorithm: Algorithm::Huber,
        weights: coef.iter().take(p).copied().collect(),
        intercept: coef[p],
        jitter_fallback: false,
    })
}
