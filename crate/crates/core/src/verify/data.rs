//! Initial data and test functions for the experiments.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{boundary_curvature, DomainSpec, Shape, TriMesh};
use crate::Density;

/// First positive zero of `J0' = -J1`: the radial Neumann mode of the unit disk.
const J1_ZERO: f64 = 3.831_705_970_207_512;

/// Initial-datum families. Coordinates of eigen and smooth data are
/// normalized to the bounding box, so the same datum fits any domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "snake_case", deny_unknown_fields)]
pub enum Datum {
    Uniform,
    /// `1 + amplitude·cos(pπx')cos(qπy')`.
    Eigen { p: u32, q: u32, amplitude: f64 },
    /// `exp(-|x - x0|²/σ²)` plus a small floor. Without `center`, `x0` sits
    /// `inset` inside the boundary at polar angle `angle`, which defaults to
    /// the curvature minimizer.
    Bump {
        sigma: f64,
        inset: f64,
        #[serde(default)]
        angle: Option<f64>,
        #[serde(default)]
        center: Option<[f64; 2]>,
    },
    /// Seeded low-pass field `1 + amplitude·φ/max|φ|`, clipped positive.
    Smooth { index: u64, modes: u32, amplitude: f64 },
    /// `1 + amplitude·J0(j r/R)` around the origin, the first radial Neumann
    /// mode of a disk of radius `R = r0`.
    Radial { amplitude: f64 },
}

/// Floor added to bumps so that log-densities stay finite.
const BUMP_FLOOR: f64 = 1e-3;

impl Datum {
    pub fn label(&self) -> String {
        match self {
            Datum::Uniform => "uniform".into(),
            Datum::Eigen { p, q, .. } => format!("eigen_{p}_{q}"),
            Datum::Bump { sigma, inset, .. } => format!("bump_s{sigma}_i{inset}"),
            Datum::Smooth { index, .. } => format!("smooth_{index}"),
            Datum::Radial { .. } => "radial".into(),
        }
    }

    pub fn density(&self, mesh: &Arc<TriMesh>, seed: u64) -> Result<Density> {
        let spec = mesh
            .spec()
            .ok_or_else(|| Error::validation("initial data need a mesh built from a domain spec"))?;
        let bbox = spec.bounding_box();
        let unit = move |p: [f64; 2]| [(p[0] - bbox[0]) / (bbox[2] - bbox[0]), (p[1] - bbox[1]) / (bbox[3] - bbox[1])];
        match *self {
            Datum::Uniform => Ok(Density::uniform(mesh.clone())),
            Datum::Eigen { p, q, amplitude } => {
                check_amplitude(amplitude)?;
                Density::from_fn(mesh.clone(), |x| {
                    let u = unit(x);
                    1.0 + amplitude * (p as f64 * PI * u[0]).cos() * (q as f64 * PI * u[1]).cos()
                })
            }
            Datum::Bump { sigma, inset, angle, center } => {
                if !(sigma > 0.0 && inset >= 0.0) {
                    return Err(Error::validation("bump needs sigma > 0 and inset >= 0"));
                }
                let x0 = match center {
                    Some(c) => c,
                    None => boundary_anchor(spec, angle, inset)?,
                };
                Density::from_fn(mesh.clone(), |x| {
                    let d2 = (x[0] - x0[0]).powi(2) + (x[1] - x0[1]).powi(2);
                    (-d2 / (sigma * sigma)).exp() + BUMP_FLOOR
                })
            }
            Datum::Smooth { index, modes, amplitude } => {
                check_amplitude(amplitude)?;
                let coeffs = smooth_coefficients(seed, index, modes);
                let field: Vec<f64> = mesh.vertices().iter().map(|&x| cosine_series(&coeffs, unit(x))).collect();
                let peak = field.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                let values = field.iter().map(|v| (1.0 + amplitude * v / peak).max(BUMP_FLOOR)).collect();
                Density::normalized(mesh.clone(), values)
            }
            Datum::Radial { amplitude } => {
                check_amplitude(amplitude)?;
                let r0 = match spec.shape {
                    Shape::PolarStar { r0, .. } => r0,
                    Shape::Rectangle { .. } => return Err(Error::validation("radial data need a polar domain")),
                };
                Density::from_fn(mesh.clone(), |x| 1.0 + amplitude * bessel_j0(J1_ZERO * x[0].hypot(x[1]) / r0))
            }
        }
    }
}

fn check_amplitude(a: f64) -> Result<()> {
    if !(a.abs() < 1.0) {
        return Err(Error::validation(format!("amplitude {a} must lie in (-1, 1) to keep the density positive")));
    }
    Ok(())
}

/// Point `inset` inside the boundary of a polar domain along the ray at `angle`.
pub(crate) fn boundary_anchor(spec: &DomainSpec, angle: Option<f64>, inset: f64) -> Result<[f64; 2]> {
    if spec.is_rectangle() {
        return Err(Error::validation("bumps on rectangles need an explicit center"));
    }
    let theta = match angle {
        Some(a) => a,
        None => boundary_curvature(spec, 4096)?.theta_at_min,
    };
    let r = spec.radius(theta)[0] - inset;
    if r <= 0.0 {
        return Err(Error::validation(format!("inset {inset} exceeds the boundary radius")));
    }
    Ok([r * theta.cos(), r * theta.sin()])
}

/// Unit tangent (counterclockwise) and outward normal of a polar boundary at `theta`.
pub(crate) fn boundary_frame(spec: &DomainSpec, theta: f64) -> ([f64; 2], [f64; 2]) {
    let [r, dr, _] = spec.radius(theta);
    let (s, c) = theta.sin_cos();
    let t = [dr * c - r * s, dr * s + r * c];
    let n = t[0].hypot(t[1]);
    let t = [t[0] / n, t[1] / n];
    (t, [t[1], -t[0]])
}

impl Datum {
    /// Infinitesimal displacement of a bump along `direction`: the derivative
    /// of the normalized density in the center position, by central differences.
    pub fn bump_displacement(&self, mesh: &Arc<TriMesh>, direction: [f64; 2]) -> Result<Vec<f64>> {
        let Datum::Bump { sigma, inset, angle, center } = *self else {
            return Err(Error::validation("displacements are defined for bump data only"));
        };
        let spec = mesh.spec().ok_or_else(|| Error::validation("bump data need a mesh built from a domain spec"))?;
        let c = match center {
            Some(c) => c,
            None => boundary_anchor(spec, angle, inset)?,
        };
        let delta = 1e-3 * sigma;
        let shifted = |s: f64| {
            let at = [c[0] + s * delta * direction[0], c[1] + s * delta * direction[1]];
            Datum::Bump { sigma, inset, angle, center: Some(at) }.density(mesh, 0)
        };
        let (plus, minus) = (shifted(1.0)?, shifted(-1.0)?);
        Ok(plus.values().iter().zip(minus.values()).map(|(p, m)| (p - m) / (2.0 * delta)).collect())
    }
}

fn rng_for(seed: u64, stream: u64, index: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream.wrapping_mul(1 << 32) ^ index);
    rng
}

/// Coefficients `c_kl` of `Σ c_kl cos(kπx)cos(lπy)` with a `1/(1 + k² + l²)` decay.
fn smooth_coefficients(seed: u64, index: u64, modes: u32) -> Vec<(u32, u32, f64)> {
    let mut rng = rng_for(seed, 1, index);
    let mut out = Vec::new();
    for k in 0..=modes {
        for l in 0..=modes {
            let c: f64 = rng.gen_range(-1.0..1.0);
            if k + l > 0 {
                out.push((k, l, c / (1.0 + (k * k + l * l) as f64)));
            }
        }
    }
    out
}

fn cosine_series(coeffs: &[(u32, u32, f64)], u: [f64; 2]) -> f64 {
    coeffs.iter().map(|&(k, l, c)| c * (k as f64 * PI * u[0]).cos() * (l as f64 * PI * u[1]).cos()).sum()
}

/// `J0(x)` by its power series; accurate to rounding for `|x| ≤ 8`.
pub fn bessel_j0(x: f64) -> f64 {
    let q = -0.25 * x * x;
    let mut term = 1.0;
    let mut sum = 1.0;
    for k in 1..60 {
        term *= q / (k * k) as f64;
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) {
            break;
        }
    }
    sum
}

/// A smooth test function with its label.
#[derive(Clone, Debug)]
pub struct TestFunction {
    pub label: String,
    pub values: Vec<f64>,
}

/// `count` seeded test functions on the mesh, alternating random cubic
/// polynomials and products of cosine modes in bounding-box coordinates.
pub fn test_functions(mesh: &TriMesh, seed: u64, count: usize) -> Result<Vec<TestFunction>> {
    let spec = mesh.spec().ok_or_else(|| Error::validation("test functions need a mesh built from a domain spec"))?;
    let b = spec.bounding_box();
    let unit = |p: [f64; 2]| [(p[0] - b[0]) / (b[2] - b[0]), (p[1] - b[1]) / (b[3] - b[1])];
    let mut out = Vec::with_capacity(count);
    for i in 0..count as u64 {
        let mut rng = rng_for(seed, 2, i);
        if i % 2 == 0 {
            // monomials x^a y^b with a + b <= 3
            let mut terms = Vec::new();
            for a in 0..=3 {
                for c in 0..=(3 - a) {
                    if a + c > 0 {
                        terms.push((a, c, rng.gen_range(-1.0..1.0)));
                    }
                }
            }
            let values = mesh
                .vertices()
                .iter()
                .map(|&x| {
                    let u = unit(x);
                    terms.iter().map(|&(a, c, k): &(i32, i32, f64)| k * u[0].powi(a) * u[1].powi(c)).sum()
                })
                .collect();
            out.push(TestFunction { label: format!("poly_{i}"), values });
        } else {
            let (p, q, r, s): (u32, u32, u32, u32) =
                (rng.gen_range(0..=2), rng.gen_range(1..=2), rng.gen_range(1..=2), rng.gen_range(0..=2));
            let values = mesh
                .vertices()
                .iter()
                .map(|&x| {
                    let u = unit(x);
                    let e1 = (p as f64 * PI * u[0]).cos() * (q as f64 * PI * u[1]).cos();
                    let e2 = (r as f64 * PI * u[0]).cos() * (s as f64 * PI * u[1]).cos();
                    e1 * e2
                })
                .collect();
            out.push(TestFunction { label: format!("modes_{i}_{p}{q}{r}{s}"), values });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::build_mesh;

    #[test]
    fn bessel_zero_and_values() {
        assert!((bessel_j0(0.0) - 1.0).abs() < 1e-16);
        // J0(1) from tables
        assert!((bessel_j0(1.0) - 0.765_197_686_557_966_6).abs() < 1e-15);
        // J0' = -J1 vanishes at the first Neumann zero
        let d = (bessel_j0(J1_ZERO + 1e-6) - bessel_j0(J1_ZERO - 1e-6)) / 2e-6;
        assert!(d.abs() < 1e-8);
    }

    #[test]
    fn smooth_data_are_seeded() {
        let mesh = Arc::new(build_mesh(&DomainSpec::unit_square(0.1)).unwrap());
        let d = Datum::Smooth { index: 3, modes: 4, amplitude: 0.6 };
        let a = d.density(&mesh, 7).unwrap();
        let b = d.density(&mesh, 7).unwrap();
        let c = d.density(&mesh, 8).unwrap();
        assert_eq!(a.values(), b.values());
        assert!(a.l1_distance(&c).unwrap() > 1e-3);
        assert!((a.mass() - 1.0).abs() < 1e-12 && a.min() > 0.0);
    }

    #[test]
    fn bump_sits_inside_the_indentation() {
        let spec = DomainSpec::polar_star(1.0, 0.5, 3, 0.1);
        let x0 = boundary_anchor(&spec, None, 0.05).unwrap();
        let theta = x0[1].atan2(x0[0]);
        assert!((theta - PI / 3.0).abs() < 1e-6);
        assert!((x0[0].hypot(x0[1]) - 0.45).abs() < 1e-9);
    }
}
