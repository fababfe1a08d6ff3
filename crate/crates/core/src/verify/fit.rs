//! Least-squares fits of small-time log-ratios by `α√t + βt`, optionally
//! with the clock started at a shift `s`: `α(√(t+s) - √s) + βt`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FitResult {
    /// Coefficient of `√t`.
    pub alpha: f64,
    /// Coefficient of `t`.
    pub beta: f64,
    /// Root-mean-square residual.
    pub residual: f64,
    /// `residual / max|r|`, or 0 for an identically zero series.
    pub relative_residual: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
    /// Time shift of the `√t` column; zero for the plain model.
    #[serde(default)]
    pub shift: f64,
}

impl FitResult {
    pub fn eval(&self, t: f64) -> f64 {
        self.alpha * ((t + self.shift).sqrt() - self.shift.sqrt()) + self.beta * t
    }
}

/// Fits `r(t) ≈ α√t + βt` through the origin. Uses a Gram-Schmidt QR
/// factorization of the two columns, which stays accurate when they are
/// nearly collinear on narrow windows.
pub fn fit_sqrt_linear(t: &[f64], r: &[f64]) -> Result<FitResult> {
    fit_shifted_sqrt_linear(t, r, 0.0)
}

/// Fits `r(t) ≈ α(√(t+s) - √s) + βt`, the plain model for a process whose
/// clock effectively started at time `-s`.
pub fn fit_shifted_sqrt_linear(t: &[f64], r: &[f64], shift: f64) -> Result<FitResult> {
    if !(shift >= 0.0 && shift.is_finite()) {
        return Err(Error::validation(format!("fit shift must be nonnegative, got {shift}")));
    }
    if t.len() != r.len() || t.len() < 3 {
        return Err(Error::validation("a two-parameter fit needs at least 3 matched samples"));
    }
    if t.iter().any(|&x| !(x > 0.0 && x.is_finite())) {
        return Err(Error::validation("fit times must be positive"));
    }
    if r.iter().any(|x| !x.is_finite()) {
        return Err(Error::Internal("non-finite value in a fitted series".into()));
    }
    let a1: Vec<f64> = t.iter().map(|x| (x + shift).sqrt() - shift.sqrt()).collect();
    let a2 = t;
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let n1 = dot(&a1, &a1).sqrt();
    let q1: Vec<f64> = a1.iter().map(|x| x / n1).collect();
    let r12 = dot(&q1, a2);
    let w: Vec<f64> = a2.iter().zip(&q1).map(|(a, q)| a - r12 * q).collect();
    let r22 = dot(&w, &w).sqrt();
    if !(r22 > 1e-14 * n1) {
        return Err(Error::validation("fit window is degenerate; use distinct sample times"));
    }
    let q2: Vec<f64> = w.iter().map(|x| x / r22).collect();
    let (b1, b2) = (dot(&q1, r), dot(&q2, r));
    let beta = b2 / r22;
    let alpha = (b1 - r12 * beta) / n1;
    let sq: f64 = t.iter().zip(&a1).zip(r).map(|((&x, &c), &y)| (y - alpha * c - beta * x).powi(2)).sum();
    let residual = (sq / t.len() as f64).sqrt();
    let peak = r.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let relative_residual = if peak > 0.0 { residual / peak } else { 0.0 };
    Ok(FitResult {
        alpha,
        beta,
        residual,
        relative_residual,
        t_min: t[0].min(t[t.len() - 1]),
        t_max: t[0].max(t[t.len() - 1]),
        samples: t.len(),
        shift,
    })
}

/// `n` geometrically spaced times from `t_min` to `t_max` inclusive.
pub fn geometric_times(t_min: f64, t_max: f64, n: usize) -> Result<Vec<f64>> {
    if !(t_min > 0.0 && t_max > t_min && n >= 2) {
        return Err(Error::validation(format!("bad fit window [{t_min}, {t_max}] with {n} samples")));
    }
    let ratio = (t_max / t_min).ln() / (n - 1) as f64;
    let mut out: Vec<f64> = (0..n).map(|i| t_min * (ratio * i as f64).exp()).collect();
    out[n - 1] = t_max;
    Ok(out)
}
