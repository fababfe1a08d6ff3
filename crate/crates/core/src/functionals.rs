//! Entropy, Fisher information and related functionals of nodal densities.
//!
//! Densities are P1 nodal fields integrated with the lumped mass; gradients
//! are the constant per-triangle gradients of the P1 interpolant, and any
//! cell-level density is the arithmetic mean of the three vertex values.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mesh::{Point, TriMesh};

/// Relative tolerance on the unit-mass normalization.
pub const MASS_TOL: f64 = 1e-9;

/// A probability density `ρ` with respect to the lumped volume measure.
#[derive(Clone, Debug)]
pub struct Density {
    mesh: Arc<TriMesh>,
    values: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct DensityFile {
    checksum: String,
    values: Vec<f64>,
}

impl Density {
    /// Wraps nodal values that are already nonnegative and of unit mass.
    pub fn new(mesh: Arc<TriMesh>, values: Vec<f64>) -> Result<Self> {
        check_nodal(&mesh, &values)?;
        let mass = weighted_sum(mesh.lumped_mass(), &values);
        if (mass - 1.0).abs() > MASS_TOL {
            return Err(Error::validation(format!("density has mass {mass}, expected 1")));
        }
        Ok(Density { mesh, values })
    }

    /// Rescales nonnegative nodal values to unit mass.
    pub fn normalized(mesh: Arc<TriMesh>, mut values: Vec<f64>) -> Result<Self> {
        check_nodal(&mesh, &values)?;
        let mass = weighted_sum(mesh.lumped_mass(), &values);
        if !(mass > 0.0) {
            return Err(Error::validation("density has zero mass"));
        }
        values.iter_mut().for_each(|v| *v /= mass);
        Ok(Density { mesh, values })
    }

    /// Samples `f` at the vertices and normalizes.
    pub fn from_fn(mesh: Arc<TriMesh>, f: impl Fn(Point) -> f64) -> Result<Self> {
        let values = mesh.vertices().iter().map(|&p| f(p)).collect();
        Self::normalized(mesh, values)
    }

    pub fn uniform(mesh: Arc<TriMesh>) -> Self {
        let value = 1.0 / mesh.area_total();
        let values = vec![value; mesh.num_vertices()];
        Density { mesh, values }
    }

    /// Unit-mass density concentrated on one vertex.
    pub fn dirac(mesh: Arc<TriMesh>, vertex: usize) -> Result<Self> {
        if vertex >= mesh.num_vertices() {
            return Err(Error::validation(format!("vertex {vertex} out of range")));
        }
        let mut values = vec![0.0; mesh.num_vertices()];
        values[vertex] = 1.0 / mesh.lumped_mass()[vertex];
        Ok(Density { mesh, values })
    }

    /// Builds a density from per-vertex masses `m_i ρ_i` summing to one.
    pub fn from_masses(mesh: Arc<TriMesh>, masses: &[f64]) -> Result<Self> {
        let values = masses.iter().zip(mesh.lumped_mass()).map(|(p, m)| p / m).collect();
        Self::normalized(mesh, values)
    }

    /// Skips validation; callers guarantee nonnegativity and unit mass.
    pub(crate) fn from_trusted(mesh: Arc<TriMesh>, values: Vec<f64>) -> Self {
        debug_assert_eq!(values.len(), mesh.num_vertices());
        Density { mesh, values }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    /// `Σ m_i ρ_i`.
    pub fn mass(&self) -> f64 {
        weighted_sum(self.mesh.lumped_mass(), &self.values)
    }

    /// Per-vertex probability masses `m_i ρ_i`.
    pub fn masses(&self) -> Vec<f64> {
        self.values.iter().zip(self.mesh.lumped_mass()).map(|(r, m)| r * m).collect()
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    /// Triangle averages `ρ̄_T`.
    pub fn triangle_means(&self) -> Vec<f64> {
        triangle_means(&self.mesh, &self.values)
    }

    /// `Σ m_i |ρ_i - σ_i|`.
    pub fn l1_distance(&self, other: &Density) -> Result<f64> {
        same_mesh(&self.mesh, &other.mesh)?;
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .zip(self.mesh.lumped_mass())
            .map(|((a, b), m)| m * (a - b).abs())
            .sum())
    }

    /// Convex combination `λ self + (1 - λ) other`.
    pub fn mix(&self, other: &Density, lambda: f64) -> Result<Density> {
        same_mesh(&self.mesh, &other.mesh)?;
        if !(0.0..=1.0).contains(&lambda) {
            return Err(Error::validation("mixing weight must lie in [0, 1]"));
        }
        let values = self.values.iter().zip(&other.values).map(|(a, b)| lambda * a + (1.0 - lambda) * b).collect();
        Ok(Density::from_trusted(self.mesh.clone(), values))
    }

    pub fn to_json(&self) -> String {
        crate::report::to_json_pretty(&DensityFile {
            checksum: self.mesh.checksum().to_owned(),
            values: self.values.clone(),
        })
        .expect("density serializes")
    }

    /// Parses a density file, refusing files written for a different mesh.
    pub fn from_json(mesh: Arc<TriMesh>, text: &str) -> Result<Self> {
        let file: DensityFile = serde_json::from_str(text)?;
        if file.checksum != mesh.checksum() {
            return Err(Error::ChecksumMismatch { expected: mesh.checksum().to_owned(), found: file.checksum });
        }
        Self::new(mesh, file.values)
    }

    pub fn read(mesh: Arc<TriMesh>, path: &Path) -> Result<Self> {
        Self::from_json(mesh, &std::fs::read_to_string(path)?)
    }
}

/// Piecewise-constant vector field, one vector per triangle.
#[derive(Clone, Debug)]
pub struct VectorField {
    mesh: Arc<TriMesh>,
    vectors: Vec<Point>,
    undefined: Option<Vec<bool>>,
}

impl VectorField {
    pub fn new(mesh: Arc<TriMesh>, vectors: Vec<Point>) -> Result<Self> {
        if vectors.len() != mesh.num_triangles() {
            return Err(Error::validation(format!(
                "vector field has {} entries for {} triangles",
                vectors.len(),
                mesh.num_triangles()
            )));
        }
        if vectors.iter().any(|v| !(v[0].is_finite() && v[1].is_finite())) {
            return Err(Error::validation("vector field has non-finite entries"));
        }
        Ok(VectorField { mesh, vectors, undefined: None })
    }

    pub fn zeros(mesh: Arc<TriMesh>) -> Self {
        let vectors = vec![[0.0; 2]; mesh.num_triangles()];
        VectorField { mesh, vectors, undefined: None }
    }

    /// `-∇f` of a nodal function.
    pub fn negative_gradient(mesh: Arc<TriMesh>, f: &[f64]) -> Self {
        let vectors = (0..mesh.num_triangles()).map(|t| {
            let g = mesh.gradient(t, f);
            [-g[0], -g[1]]
        });
        let vectors = vectors.collect();
        VectorField { mesh, vectors, undefined: None }
    }

    pub(crate) fn from_trusted(mesh: Arc<TriMesh>, vectors: Vec<Point>) -> Self {
        VectorField { mesh, vectors, undefined: None }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    pub fn vectors(&self) -> &[Point] {
        &self.vectors
    }

    /// Whether the field is defined on triangle `t`.
    pub fn is_defined(&self, t: usize) -> bool {
        self.undefined.as_ref().map_or(true, |u| !u[t])
    }

    /// Indices of triangles where the field is undefined.
    pub fn undefined_triangles(&self) -> Vec<usize> {
        match &self.undefined {
            None => Vec::new(),
            Some(mask) => mask.iter().enumerate().filter(|(_, &u)| u).map(|(t, _)| t).collect(),
        }
    }

    pub fn scaled(&self, factor: f64) -> VectorField {
        let vectors = self.vectors.iter().map(|v| [factor * v[0], factor * v[1]]).collect();
        VectorField { mesh: self.mesh.clone(), vectors, undefined: self.undefined.clone() }
    }

    /// `Σ_T area_T |v_T|²` over defined triangles.
    pub fn squared_norm(&self) -> f64 {
        self.vectors
            .iter()
            .zip(self.mesh.triangle_areas())
            .enumerate()
            .filter(|(t, _)| self.is_defined(*t))
            .map(|(_, (v, a))| a * (v[0] * v[0] + v[1] * v[1]))
            .sum()
    }
}

/// `Σ m_i ρ_i log ρ_i` with `0 log 0 = 0`.
pub fn entropy(rho: &Density) -> f64 {
    rho.values
        .iter()
        .zip(rho.mesh.lumped_mass())
        .map(|(&r, &m)| if r > 0.0 { m * r * r.ln() } else { 0.0 })
        .sum()
}

/// Fisher information in the square-root form `4 Σ_T area_T |∇_T √ρ|²`.
pub fn fisher(rho: &Density) -> f64 {
    let roots: Vec<f64> = rho.values.iter().map(|r| r.sqrt()).collect();
    4.0 * dirichlet_energy(&rho.mesh, &roots)
}

/// Fisher information in the logarithmic form `Σ_T area_T ρ̄_T |∇_T log ρ|²`.
/// Infinite if some triangle touches a zero of `ρ` without vanishing entirely.
pub fn fisher_log(rho: &Density) -> f64 {
    let mesh = &rho.mesh;
    let logs: Vec<f64> = rho.values.iter().map(|r| r.ln()).collect();
    let mut total = 0.0;
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let vals = tri.map(|v| rho.values[v]);
        if vals.iter().all(|&r| r == 0.0) {
            continue;
        }
        if vals.iter().any(|&r| r == 0.0) {
            return f64::INFINITY;
        }
        let g = mesh.gradient(t, &logs);
        let mean = (vals[0] + vals[1] + vals[2]) / 3.0;
        total += mesh.triangle_areas()[t] * mean * (g[0] * g[0] + g[1] * g[1]);
    }
    total
}

fn check_porous_exponent(m: f64) -> Result<()> {
    if !(m > 1.0 && m < 1.5) {
        return Err(Error::validation(format!("porous-medium exponent m = {m} must lie in (1, 3/2)")));
    }
    Ok(())
}

/// `Σ_T area_T ρ̄_T |∇_T ρ^{m-1}|²` for `m ∈ (1, 3/2)`.
pub fn fisher_m(rho: &Density, m: f64) -> Result<f64> {
    check_porous_exponent(m)?;
    let mesh = &rho.mesh;
    let powers: Vec<f64> = rho.values.iter().map(|r| r.powf(m - 1.0)).collect();
    let means = rho.triangle_means();
    Ok((0..mesh.num_triangles())
        .map(|t| {
            let g = mesh.gradient(t, &powers);
            mesh.triangle_areas()[t] * means[t] * (g[0] * g[0] + g[1] * g[1])
        })
        .sum())
}

/// `Σ m_i ρ_i^m` for `m > 1`.
pub fn energy_m(rho: &Density, m: f64) -> Result<f64> {
    if !(m > 1.0 && m.is_finite()) {
        return Err(Error::validation(format!("energy exponent m = {m} must exceed 1")));
    }
    Ok(rho.values.iter().zip(rho.mesh.lumped_mass()).map(|(r, w)| w * r.powf(m)).sum())
}

/// The action integrand `A(a, b)`: `|b|²/a` for `a > 0`, `0` for `a = 0, b = 0`, else `+∞`.
pub fn action_density(a: f64, b: Point) -> f64 {
    let b2 = b[0] * b[0] + b[1] * b[1];
    if a > 0.0 {
        b2 / a
    } else if b2 == 0.0 {
        0.0
    } else {
        f64::INFINITY
    }
}

/// Kinetic action `Σ_T area_T A(ρ̄_T, F_T)`.
pub fn kinetic_action(rho: &Density, field: &VectorField) -> Result<f64> {
    same_mesh(&rho.mesh, &field.mesh)?;
    Ok(kinetic_action_raw(&rho.mesh, &rho.triangle_means(), &field.vectors))
}

pub(crate) fn kinetic_action_raw(mesh: &TriMesh, means: &[f64], vectors: &[Point]) -> f64 {
    means
        .iter()
        .zip(vectors)
        .zip(mesh.triangle_areas())
        .map(|((&a, &b), &area)| {
            let value = action_density(a, b);
            if value == 0.0 {
                0.0
            } else {
                area * value
            }
        })
        .sum()
}

/// Per-triangle `∇_T log ρ`; triangles with a zero vertex are flagged undefined.
pub fn log_derivative(rho: &Density) -> Result<VectorField> {
    if rho.values.iter().all(|&r| r == 0.0) {
        return Err(Error::validation("log derivative of the zero density"));
    }
    let mesh = &rho.mesh;
    let logs: Vec<f64> = rho.values.iter().map(|&r| if r > 0.0 { r.ln() } else { 0.0 }).collect();
    let mut undefined = vec![false; mesh.num_triangles()];
    let mut vectors = Vec::with_capacity(mesh.num_triangles());
    for (t, tri) in mesh.triangles().iter().enumerate() {
        if tri.iter().any(|&v| rho.values[v] <= 0.0) {
            undefined[t] = true;
            vectors.push([0.0; 2]);
        } else {
            vectors.push(mesh.gradient(t, &logs));
        }
    }
    let undefined = undefined.iter().any(|&u| u).then_some(undefined);
    Ok(VectorField { mesh: mesh.clone(), vectors, undefined })
}

/// `Σ_T area_T ∇_T log ρ · F_T`, the right side of the entropy chain rule.
pub fn log_derivative_pairing(rho: &Density, field: &VectorField) -> Result<f64> {
    same_mesh(&rho.mesh, &field.mesh)?;
    let u = log_derivative(rho)?;
    if !u.undefined_triangles().is_empty() {
        return Err(Error::validation("density vanishes on some triangles; regularize with the heat flow first"));
    }
    Ok(u
        .vectors
        .iter()
        .zip(&field.vectors)
        .zip(rho.mesh.triangle_areas())
        .map(|((a, b), area)| area * (a[0] * b[0] + a[1] * b[1]))
        .sum())
}

/// `Σ_T area_T |∇_T f|²`.
pub fn dirichlet_energy(mesh: &TriMesh, f: &[f64]) -> f64 {
    (0..mesh.num_triangles())
        .map(|t| {
            let g = mesh.gradient(t, f);
            mesh.triangle_areas()[t] * (g[0] * g[0] + g[1] * g[1])
        })
        .sum()
}

pub(crate) fn triangle_means(mesh: &TriMesh, values: &[f64]) -> Vec<f64> {
    mesh.triangles().iter().map(|tri| (values[tri[0]] + values[tri[1]] + values[tri[2]]) / 3.0).collect()
}

pub(crate) fn weighted_sum(weights: &[f64], values: &[f64]) -> f64 {
    weights.iter().zip(values).map(|(w, v)| w * v).sum()
}

pub(crate) fn same_mesh(a: &Arc<TriMesh>, b: &Arc<TriMesh>) -> Result<()> {
    if Arc::ptr_eq(a, b) || a.checksum() == b.checksum() {
        Ok(())
    } else {
        Err(Error::ChecksumMismatch { expected: a.checksum().to_owned(), found: b.checksum().to_owned() })
    }
}

fn check_nodal(mesh: &TriMesh, values: &[f64]) -> Result<()> {
    if values.len() != mesh.num_vertices() {
        return Err(Error::validation(format!(
            "density has {} values for {} vertices",
            values.len(),
            mesh.num_vertices()
        )));
    }
    if let Some(bad) = values.iter().position(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(Error::validation(format!("density value {} at vertex {bad} is not a finite nonnegative number", values[bad])));
    }
    Ok(())
}
