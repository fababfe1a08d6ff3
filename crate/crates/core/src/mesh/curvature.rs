use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::domain::{DomainSpec, Shape};
use crate::error::{Error, Result};

/// Lower bounds on the boundary second fundamental form and the Ricci curvature.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[allow(non_snake_case)]
pub struct CurvatureBound {
    /// Convexity defect `max(0, -kappa_min)`.
    pub S: f64,
    /// Ricci lower bound; always zero on flat domains.
    pub K: f64,
    pub kappa_min: f64,
    pub theta_at_min: f64,
}

/// Signed curvature of a polar curve at `theta`, positive where the domain is locally convex.
pub(crate) fn polar_curvature(spec: &DomainSpec, theta: f64) -> f64 {
    let [r, dr, ddr] = spec.radius(theta);
    (r * r + 2.0 * dr * dr - r * ddr) / (r * r + dr * dr).powf(1.5)
}

/// Samples the boundary curvature on a uniform angular grid and refines the
/// minimum with a three-point parabola.
pub fn boundary_curvature(spec: &DomainSpec, n_samples: usize) -> Result<CurvatureBound> {
    spec.validate()?;
    if let Shape::Rectangle { .. } = spec.shape {
        // straight edges and convex corners
        return Ok(CurvatureBound { S: 0.0, K: 0.0, kappa_min: 0.0, theta_at_min: 0.0 });
    }
    if n_samples < 1024 {
        return Err(Error::validation(format!("need at least 1024 curvature samples, got {n_samples}")));
    }
    let step = 2.0 * PI / n_samples as f64;
    let kappa: Vec<f64> = (0..n_samples).map(|i| polar_curvature(spec, i as f64 * step)).collect();
    // Symmetric stars attain the minimum at several angles; refine every
    // discrete local minimum and report the smallest angle among the ties.
    let mut best: Option<(f64, f64)> = None;
    let mut candidates = Vec::new();
    for i in 0..n_samples {
        let (km, k0, kp) = (kappa[(i + n_samples - 1) % n_samples], kappa[i], kappa[(i + 1) % n_samples]);
        if !(k0 <= km && k0 < kp) {
            continue;
        }
        let (value, theta) = parabola_vertex(km, k0, kp, i as f64 * step, step);
        candidates.push((value, theta.rem_euclid(2.0 * PI)));
    }
    let lowest = candidates.iter().map(|c| c.0).fold(f64::INFINITY, f64::min);
    for &(value, theta) in &candidates {
        if value <= lowest + 1e-6 * lowest.abs().max(1.0) && best.map_or(true, |b| theta < b.1) {
            best = Some((value, theta));
        }
    }
    // constant curvature has no strict local minimum
    let (kappa_min, theta_at_min) = best.unwrap_or((kappa[0], 0.0));
    Ok(CurvatureBound { S: (-kappa_min).max(0.0), K: 0.0, kappa_min, theta_at_min })
}

/// Vertex of the parabola through `(x0 - h, km), (x0, k0), (x0 + h, kp)`.
fn parabola_vertex(km: f64, k0: f64, kp: f64, x0: f64, h: f64) -> (f64, f64) {
    let curvature2 = km - 2.0 * k0 + kp;
    if curvature2 > 0.0 {
        let shift = 0.5 * (km - kp) / curvature2;
        if shift.abs() <= 1.0 {
            return (k0 - 0.25 * (km - kp) * shift, x0 + shift * h);
        }
    }
    (k0, x0)
}
