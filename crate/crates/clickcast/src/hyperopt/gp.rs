//! Gaussian-process surrogate over the unit hypercube.
//!
//! Squared-exponential kernel with per-dimension length scales; kernel
//! hyperparameters (length scales, amplitude, noise) are chosen by
//! maximizing the log marginal likelihood with a seeded multi-start
//! random search plus local perturbation, gradient-free.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;

use crate::seeding::rng_from;

pub struct GpSurrogate {
    x: Vec<Vec<f64>>,
    pub length_scales: Vec<f64>,
    pub amplitude: f64,
    /// Observation noise variance.
    pub noise: f64,
    chol: Cholesky<f64, Dyn>,
    alpha: DVector<f64>,
    pub log_marginal: f64,
}

fn kernel(a: &[f64], b: &[f64], scales: &[f64], amplitude: f64) -> f64 {
    let mut d2 = 0.0;
    for ((ai, bi), s) in a.iter().zip(b).zip(scales) {
        let d = (ai - bi) / s;
        d2 += d * d;
    }
    amplitude * amplitude * (-0.5 * d2).exp()
}

fn gram(x: &[Vec<f64>], scales: &[f64], amplitude: f64, noise: f64) -> DMatrix<f64> {
    let n = x.len();
    let mut k = DMatrix::zeros(n, n);
    for i in 0..n {
        for j in i..n {
            let v = kernel(&x[i], &x[j], scales, amplitude);
            k[(i, j)] = v;
            k[(j, i)] = v;
        }
        k[(i, i)] += noise;
    }
    k
}

/// Cholesky with escalating diagonal jitter.
fn robust_cholesky(mut k: DMatrix<f64>) -> Option<Cholesky<f64, Dyn>> {
    let mut jitter = 0.0;
    for _ in 0..10 {
        if jitter > 0.0 {
            for i in 0..k.nrows() {
                k[(i, i)] += jitter;
            }
        }
        if let Some(c) = k.clone().cholesky() {
            return Some(c);
        }
        jitter = if jitter == 0.0 { 1e-10 } else { jitter * 10.0 };
    }
    None
}

fn log_marginal(
    x: &[Vec<f64>],
    y: &DVector<f64>,
    scales: &[f64],
    amp: f64,
    noise: f64,
) -> Option<f64> {
    let chol = robust_cholesky(gram(x, scales, amp, noise))?;
    let alpha = chol.solve(y);
    let log_det: f64 = (0..x.len()).map(|i| chol.l_dirty()[(i, i)].ln()).sum();
    let n = x.len() as f64;
    Some(-0.5 * y.dot(&alpha) - log_det - 0.5 * n * (2.0 * std::f64::consts::PI).ln())
}

impl GpSurrogate {
    /// Fit on unit-cube points and standardized scores.
    pub fn fit(x: Vec<Vec<f64>>, y: Vec<f64>, seed: u64) -> GpSurrogate {
        let d = x.first().map_or(1, |p| p.len());
        let yv = DVector::from_column_slice(&y);
        let mut rng = rng_from(seed);

        let draw = |rng: &mut rand_chacha::ChaCha8Rng| -> (Vec<f64>, f64, f64) {
            let scales: Vec<f64> = (0..d)
                .map(|_| (rng.random_range(0.05f64.ln()..3.0f64.ln())).exp())
                .collect();
            let amp = (rng.random_range(0.3f64.ln()..3.0f64.ln())).exp();
            let noise = (rng.random_range(1e-8f64.ln()..0.5f64.ln())).exp();
            (scales, amp, noise)
        };

        // Moderate default first so degenerate data still gets a model.
        let mut best = (vec![0.5; d], 1.0, 1e-4);
        let mut best_lml =
            log_marginal(&x, &yv, &best.0, best.1, best.2).unwrap_or(f64::NEG_INFINITY);
        for _ in 0..32 {
            let (scales, amp, noise) = draw(&mut rng);
            if let Some(lml) = log_marginal(&x, &yv, &scales, amp, noise) {
                if lml > best_lml {
                    best_lml = lml;
                    best = (scales, amp, noise);
                }
            }
        }
        // Local refinement around the winner.
        for _ in 0..16 {
            let jiggle = |v: f64, rng: &mut rand_chacha::ChaCha8Rng| {
                v * (rng.random_range(-0.35f64..0.35)).exp()
            };
            let scales: Vec<f64> = best
                .0
                .iter()
                .map(|&s| jiggle(s, &mut rng).clamp(0.01, 10.0))
                .collect();
            let amp = jiggle(best.1, &mut rng).clamp(0.1, 10.0);
            let noise = jiggle(best.2, &mut rng).clamp(1e-9, 1.0);
            if let Some(lml) = log_marginal(&x, &yv, &scales, amp, noise) {
                if lml > best_lml {
                    best_lml = lml;
                    best = (scales, amp, noise);
                }
            }
        }

        let (length_scales, amplitude, noise) = best;
        let chol = robust_cholesky(gram(&x, &length_scales, amplitude, noise))
            .expect("jittered kernel factorizes");
        let alpha = chol.solve(&yv);
        GpSurrogate {
            x,
            length_scales,
            amplitude,
            noise,
            chol,
            alpha,
            log_marginal: best_lml,
        }
    }

    /// Posterior mean and (latent) variance at a unit-cube point.
    pub fn predict(&self, point: &[f64]) -> (f64, f64) {
        let k_star = DVector::from_fn(self.x.len(), |i, _| {
            kernel(&self.x[i], point, &self.length_scales, self.amplitude)
        });
        let mean = k_star.dot(&self.alpha);
        let v = self.chol.solve(&k_star);
        let var = (self.amplitude * self.amplitude - k_star.dot(&v)).max(0.0);
        (mean, var)
    }
}
