//! Time-sampled curves of densities with staggered momenta.
//!
//! Momentum `F[i]` lives on the interval `(t_i, t_{i+1})`; the discrete weak
//! continuity equation reads `φᵀM(ρ_{i+1} - ρ_i) = Δt_i Σ_T area_T ∇_T φ · F_i,T`
//! for every P1 test function `φ`, which is the zero-flux weak form.

use std::f64::consts::PI;
use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::functionals::{self, same_mesh, Density, VectorField};
use crate::heat::HeatOperator;
use crate::mesh::TriMesh;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Provenance {
    Heat,
    Jko,
    Synthetic,
    Regularized,
}

#[derive(Clone, Debug)]
pub struct Curve {
    mesh: Arc<TriMesh>,
    times: Vec<f64>,
    densities: Vec<Density>,
    momenta: Option<Vec<VectorField>>,
    provenance: Provenance,
}

#[derive(Serialize)]
struct Manifest<'a> {
    checksum: &'a str,
    provenance: Provenance,
    times: &'a [f64],
    samples: Vec<String>,
    has_momenta: bool,
}

impl Curve {
    pub fn new(
        times: Vec<f64>,
        densities: Vec<Density>,
        momenta: Option<Vec<VectorField>>,
        provenance: Provenance,
    ) -> Result<Self> {
        let first = densities.first().ok_or_else(|| Error::validation("curve needs at least one sample"))?;
        let mesh = first.mesh().clone();
        if times.len() != densities.len() {
            return Err(Error::validation("times and densities differ in length"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) || times.iter().any(|t| !t.is_finite()) {
            return Err(Error::validation("curve times must be finite and strictly increasing"));
        }
        for d in &densities {
            same_mesh(&mesh, d.mesh())?;
        }
        if let Some(f) = &momenta {
            if f.len() + 1 != times.len() {
                return Err(Error::validation(format!(
                    "{} momenta for {} samples; expected one per interval",
                    f.len(),
                    times.len()
                )));
            }
            for field in f {
                same_mesh(&mesh, field.mesh())?;
            }
        }
        Ok(Curve { mesh, times, densities, momenta, provenance })
    }

    /// A curve resting at `rho` with zero momenta.
    pub fn constant(rho: &Density, times: Vec<f64>) -> Result<Self> {
        let n = times.len();
        let momenta = (1..n).map(|_| VectorField::zeros(rho.mesh().clone())).collect();
        Curve::new(times, vec![rho.clone(); n], Some(momenta), Provenance::Synthetic)
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }
    pub fn times(&self) -> &[f64] {
        &self.times
    }
    pub fn densities(&self) -> &[Density] {
        &self.densities
    }
    pub fn momenta(&self) -> Option<&[VectorField]> {
        self.momenta.as_deref()
    }
    pub fn provenance(&self) -> Provenance {
        self.provenance
    }
    pub fn len(&self) -> usize {
        self.times.len()
    }
    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn with_momenta(mut self, momenta: Option<Vec<VectorField>>) -> Result<Self> {
        let times = std::mem::take(&mut self.times);
        let densities = std::mem::take(&mut self.densities);
        Curve::new(times, densities, momenta, self.provenance)
    }

    pub fn with_provenance(mut self, provenance: Provenance) -> Self {
        self.provenance = provenance;
        self
    }

    /// Same densities with every momentum multiplied by `factor`.
    pub fn scaled_momenta(&self, factor: f64) -> Result<Self> {
        let momenta = self.require_momenta()?.iter().map(|f| f.scaled(factor)).collect();
        Ok(Curve { momenta: Some(momenta), ..self.clone() })
    }

    fn require_momenta(&self) -> Result<&[VectorField]> {
        self.momenta.as_deref().ok_or_else(|| Error::validation("curve carries no momenta"))
    }

    pub fn entropies(&self) -> Vec<f64> {
        self.densities.iter().map(functionals::entropy).collect()
    }

    pub fn fishers(&self) -> Vec<f64> {
        self.densities.iter().map(functionals::fisher).collect()
    }

    /// Density attached to interval `i`: the mean of its two endpoint samples.
    pub fn interval_density(&self, i: usize) -> Vec<f64> {
        let (a, b) = (self.densities[i].values(), self.densities[i + 1].values());
        a.iter().zip(b).map(|(x, y)| 0.5 * (x + y)).collect()
    }

    /// Per-interval kinetic actions `𝒜(ρ̄_i, F_i)`.
    pub fn interval_actions(&self) -> Result<Vec<f64>> {
        let momenta = self.require_momenta()?;
        Ok((0..momenta.len())
            .map(|i| {
                let means = functionals::triangle_means(&self.mesh, &self.interval_density(i));
                functionals::kinetic_action_raw(&self.mesh, &means, momenta[i].vectors())
            })
            .collect())
    }

    /// `Σ_i Δt_i 𝒜(ρ̄_i, F_i)`.
    pub fn kinetic_energy(&self) -> Result<f64> {
        let actions = self.interval_actions()?;
        Ok(actions.iter().zip(self.times.windows(2)).map(|(a, w)| a * (w[1] - w[0])).sum())
    }

    /// Writes `manifest.json` and one density file per sample into `dir`.
    pub fn write_dir(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        let samples: Vec<String> = (0..self.len()).map(|i| format!("sample_{i:05}.json")).collect();
        for (name, rho) in samples.iter().zip(&self.densities) {
            std::fs::write(dir.join(name), rho.to_json())?;
        }
        let manifest = Manifest {
            checksum: self.mesh.checksum(),
            provenance: self.provenance,
            times: &self.times,
            samples,
            has_momenta: self.momenta.is_some(),
        };
        std::fs::write(dir.join("manifest.json"), crate::report::to_json_pretty(&manifest)?)?;
        Ok(())
    }
}

/// `-∇` of the mean of consecutive densities, one field per interval.
pub(crate) fn midpoint_momenta(mesh: &Arc<TriMesh>, densities: &[Density]) -> Vec<VectorField> {
    densities
        .windows(2)
        .map(|w| {
            let mid: Vec<f64> = w[0].values().iter().zip(w[1].values()).map(|(a, b)| 0.5 * (a + b)).collect();
            VectorField::negative_gradient(mesh.clone(), &mid)
        })
        .collect()
}

/// Test functions on the bounding box rescaled to the unit square: monomials
/// `x^a y^b` with `1 ≤ a + b ≤ 3`, then Neumann cosine products by total frequency.
pub fn test_function(mesh: &TriMesh, index: usize) -> Vec<f64> {
    let (mut lo, mut hi) = ([f64::INFINITY; 2], [f64::NEG_INFINITY; 2]);
    for p in mesh.vertices() {
        for d in 0..2 {
            lo[d] = lo[d].min(p[d]);
            hi[d] = hi[d].max(p[d]);
        }
    }
    let scaled = |p: &[f64; 2]| [(p[0] - lo[0]) / (hi[0] - lo[0]), (p[1] - lo[1]) / (hi[1] - lo[1])];
    const MONOMIALS: [(i32, i32); 9] = [(1, 0), (0, 1), (2, 0), (1, 1), (0, 2), (3, 0), (2, 1), (1, 2), (0, 3)];
    if index < MONOMIALS.len() {
        let (a, b) = MONOMIALS[index];
        return mesh.vertices().iter().map(|p| {
            let q = scaled(p);
            q[0].powi(a) * q[1].powi(b)
        }).collect();
    }
    let mut k = index - MONOMIALS.len();
    let mut total = 1;
    loop {
        if k <= total {
            let (p, q) = ((total - k) as f64, k as f64);
            return mesh.vertices().iter().map(|pt| {
                let s = scaled(pt);
                (p * PI * s[0]).cos() * (q * PI * s[1]).cos()
            }).collect();
        }
        k -= total + 1;
        total += 1;
    }
}

/// Largest weak-form defect of the continuity equation over `test_count` test
/// functions and all windows `[t_0, t_k]`, each normalized by `‖φ‖_∞`.
pub fn continuity_residual(curve: &Curve, test_count: usize) -> Result<f64> {
    let momenta = curve.require_momenta()?;
    if test_count == 0 {
        return Err(Error::validation("need at least one test function"));
    }
    let mesh = &curve.mesh;
    let mut worst = 0.0f64;
    for index in 0..test_count {
        let phi = test_function(mesh, index);
        let norm = phi.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let grads = mesh.gradients(&phi);
        let pair = |rho: &Density| -> f64 {
            functionals::weighted_sum(mesh.lumped_mass(), &phi.iter().zip(rho.values()).map(|(a, b)| a * b).collect::<Vec<_>>())
        };
        let mut cumulative = 0.0;
        for i in 0..momenta.len() {
            let dt = curve.times[i + 1] - curve.times[i];
            let flux: f64 = momenta[i]
                .vectors()
                .iter()
                .zip(&grads)
                .zip(mesh.triangle_areas())
                .map(|((f, g), a)| a * (f[0] * g[0] + f[1] * g[1]))
                .sum();
            cumulative += pair(&curve.densities[i + 1]) - pair(&curve.densities[i]) - dt * flux;
            worst = worst.max(cumulative.abs() / norm);
        }
    }
    Ok(worst)
}

/// Replaces every slice by its heat image at time `eps`, with momenta rebuilt so
/// that the continuity equation holds exactly on every interval.
pub fn heat_regularize(curve: &Curve, eps: f64, op: &HeatOperator) -> Result<Curve> {
    if !(eps.is_finite() && eps > 0.0) {
        return Err(Error::validation(format!("regularization time must be positive, got {eps}")));
    }
    same_mesh(&curve.mesh, op.mesh())?;
    let steps = ((eps / 1e-4).ceil() as usize).max(4);
    let dt = eps / steps as f64;
    let mut densities = Vec::with_capacity(curve.len());
    for rho in &curve.densities {
        let mut x = rho.clone();
        for _ in 0..steps {
            x = op.step(&x, dt)?;
        }
        densities.push(x);
    }
    let mut momenta = Vec::with_capacity(curve.len().saturating_sub(1));
    for i in 0..curve.len().saturating_sub(1) {
        let dt = curve.times[i + 1] - curve.times[i];
        momenta.push(op.transport_momentum(densities[i].values(), densities[i + 1].values(), dt)?);
    }
    Curve::new(curve.times.clone(), densities, Some(momenta), Provenance::Regularized)
}

/// Normalized discrete bump weights `w_j ∝ exp(-1/(1 - (j s/δ)²))` for `|j s| < δ`.
pub fn mollifier_weights(spacing: f64, delta: f64) -> Result<Vec<f64>> {
    if !(delta.is_finite() && delta > 0.0) {
        return Err(Error::validation("mollification radius must be positive"));
    }
    if delta <= spacing {
        return Err(Error::validation(format!(
            "mollification radius {delta} does not exceed the time spacing {spacing}"
        )));
    }
    let half = (delta / spacing).ceil() as usize;
    let mut w: Vec<f64> = (0..2 * half + 1)
        .map(|k| {
            let s = (k as f64 - half as f64) * spacing / delta;
            if s.abs() < 1.0 {
                (-1.0 / (1.0 - s * s)).exp()
            } else {
                0.0
            }
        })
        .collect();
    let total: f64 = w.iter().sum();
    w.iter_mut().for_each(|v| *v /= total);
    Ok(w)
}

/// Convolution in time with the bump kernel of radius `delta` on a uniform grid.
/// Slices are extended by their endpoint values and momenta by zero, which keeps
/// the continuity equation exact for the mollified pair.
pub fn mollify_time(curve: &Curve, delta: f64) -> Result<Curve> {
    if curve.len() < 2 {
        return Err(Error::validation("mollification needs at least two samples"));
    }
    let spacing = (curve.times[curve.len() - 1] - curve.times[0]) / (curve.len() - 1) as f64;
    if curve.times.windows(2).any(|w| ((w[1] - w[0]) - spacing).abs() > 1e-9 * spacing) {
        return Err(Error::validation("mollification requires a uniform time grid"));
    }
    let w = mollifier_weights(spacing, delta)?;
    let half = (w.len() / 2) as isize;
    let last = curve.len() as isize - 1;
    let n = curve.mesh.num_vertices();
    let densities = (0..curve.len() as isize)
        .map(|k| {
            let mut values = vec![0.0; n];
            for (j, &wj) in w.iter().enumerate() {
                let src = (k - (j as isize - half)).clamp(0, last) as usize;
                for (v, r) in values.iter_mut().zip(curve.densities[src].values()) {
                    *v += wj * r;
                }
            }
            Density::from_trusted(curve.mesh.clone(), values)
        })
        .collect();
    let momenta = match &curve.momenta {
        None => None,
        Some(fields) => {
            let m = curve.mesh.num_triangles();
            let intervals = fields.len() as isize;
            Some(
                (0..intervals)
                    .map(|i| {
                        let mut vectors = vec![[0.0; 2]; m];
                        for (j, &wj) in w.iter().enumerate() {
                            let src = i - (j as isize - half);
                            if (0..intervals).contains(&src) {
                                for (v, f) in vectors.iter_mut().zip(fields[src as usize].vectors()) {
                                    v[0] += wj * f[0];
                                    v[1] += wj * f[1];
                                }
                            }
                        }
                        VectorField::from_trusted(curve.mesh.clone(), vectors)
                    })
                    .collect(),
            )
        }
    };
    Curve::new(curve.times.clone(), densities, momenta, curve.provenance)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mesh::{build_mesh, DomainSpec};

    fn mesh() -> Arc<TriMesh> {
        Arc::new(build_mesh(&DomainSpec::unit_square(0.1)).unwrap())
    }

    #[test]
    fn constant_curve_has_zero_residual() {
        let rho = Density::from_fn(mesh(), |p| 1.0 + p[0] * p[1]).unwrap();
        let curve = Curve::constant(&rho, vec![0.0, 0.1, 0.2]).unwrap();
        assert!(continuity_residual(&curve, 12).unwrap() < 1e-12);
        assert_eq!(curve.kinetic_energy().unwrap(), 0.0);
    }

    #[test]
    fn rejects_bad_curves() {
        let rho = Density::uniform(mesh());
        assert!(Curve::new(vec![0.0, 0.0], vec![rho.clone(), rho.clone()], None, Provenance::Synthetic).is_err());
        assert!(Curve::new(vec![0.0, 1.0], vec![rho.clone(), rho.clone()], Some(vec![]), Provenance::Synthetic).is_err());
        let curve = Curve::new(vec![0.0, 1.0], vec![rho.clone(), rho], None, Provenance::Synthetic).unwrap();
        assert!(continuity_residual(&curve, 3).is_err());
    }

    #[test]
    fn mollifier_is_even_and_normalized() {
        let w = mollifier_weights(0.1, 0.35).unwrap();
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        for j in 0..w.len() {
            assert_eq!(w[j], w[w.len() - 1 - j]);
        }
        assert!(mollifier_weights(0.1, 0.1).is_err());
    }

    #[test]
    fn test_functions_are_distinct() {
        let m = mesh();
        let a = test_function(&m, 0);
        let b = test_function(&m, 9);
        let c = test_function(&m, 10);
        assert!(a != b && b != c);
    }
}
