//! Backward-Euler discretization of the Neumann heat semigroup.
//!
//! One step solves `(M + dt A) x' = M x` with the lumped mass `M` and the
//! cotangent stiffness `A`. The zero-flux condition is natural: no boundary
//! rows are touched, so constants stay in the kernel of `A` and mass is conserved.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use sprs::{CsMat, FillInReduction, SymmetryCheck, TriMat};
use sprs_ldl::{Ldl, LdlNumeric};

use crate::curves::{midpoint_momenta, Curve, Provenance};
use crate::error::{Error, Result};
use crate::functionals::{Density, VectorField};
use crate::mesh::TriMesh;

/// Relative residual targeted by the iterative fallback.
const CG_TOL: f64 = 1e-12;
/// Negative values above `-NEG_TOL * max|x|` are rounding noise and clamped to zero.
const NEG_TOL: f64 = 1e-12;

enum Factor {
    Direct(LdlNumeric<f64, usize>),
    Iterative(CsMat<f64>),
}

impl Factor {
    fn new(matrix: CsMat<f64>) -> Factor {
        let ldl = Ldl::new()
            .fill_in_reduction(FillInReduction::ReverseCuthillMcKee)
            .check_symmetry(SymmetryCheck::DontCheckSymmetry)
            .numeric(matrix.view());
        match ldl {
            Ok(f) => Factor::Direct(f),
            Err(e) => {
                log::warn!("sparse factorization failed ({e}); falling back to conjugate gradients");
                Factor::Iterative(matrix)
            }
        }
    }

    fn solve(&self, rhs: &[f64]) -> Result<Vec<f64>> {
        match self {
            Factor::Direct(f) => {
                let x: Vec<f64> = f.solve(rhs);
                if x.iter().all(|v| v.is_finite()) {
                    Ok(x)
                } else {
                    Err(Error::Solver("factorized solve produced non-finite values".into()))
                }
            }
            Factor::Iterative(a) => conjugate_gradient(a, rhs),
        }
    }
}

/// Jacobi-preconditioned conjugate gradients for a symmetric positive definite matrix.
fn conjugate_gradient(a: &CsMat<f64>, b: &[f64]) -> Result<Vec<f64>> {
    let n = b.len();
    let diag: Vec<f64> = (0..n).map(|i| a.get(i, i).copied().unwrap_or(1.0)).collect();
    let apply = |x: &[f64]| -> Vec<f64> {
        a.outer_iterator().map(|row| row.iter().map(|(j, v)| v * x[j]).sum()).collect()
    };
    let dot = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(a, b)| a * b).sum::<f64>();
    let norm_b = dot(b, b).sqrt();
    if norm_b == 0.0 {
        return Ok(vec![0.0; n]);
    }
    let mut x = vec![0.0; n];
    let mut r = b.to_vec();
    let mut z: Vec<f64> = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
    let mut p = z.clone();
    let mut rz = dot(&r, &z);
    let max_iter = 10 * n + 100;
    for _ in 0..max_iter {
        let ap = apply(&p);
        let alpha = rz / dot(&p, &ap);
        for i in 0..n {
            x[i] += alpha * p[i];
            r[i] -= alpha * ap[i];
        }
        if dot(&r, &r).sqrt() <= CG_TOL * norm_b {
            return Ok(x);
        }
        z = r.iter().zip(&diag).map(|(r, d)| r / d).collect();
        let rz_new = dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for i in 0..n {
            p[i] = z[i] + beta * p[i];
        }
    }
    Err(Error::NonConvergence { iterations: max_iter, residual: dot(&r, &r).sqrt() / norm_b })
}

fn check_step(dt: f64) -> Result<()> {
    if !(dt.is_finite() && dt > 0.0) {
        return Err(Error::validation(format!("time step must be positive, got {dt}")));
    }
    Ok(())
}

/// The discrete Neumann heat semigroup on one mesh, with factorizations cached per step size.
pub struct HeatOperator {
    mesh: Arc<TriMesh>,
    factors: Mutex<HashMap<u64, Arc<Factor>>>,
    poisson: OnceLock<Arc<Factor>>,
}

impl HeatOperator {
    pub fn new(mesh: Arc<TriMesh>) -> Self {
        HeatOperator { mesh, factors: Mutex::new(HashMap::new()), poisson: OnceLock::new() }
    }

    pub fn mesh(&self) -> &Arc<TriMesh> {
        &self.mesh
    }

    fn factor(&self, dt: f64) -> Result<Arc<Factor>> {
        check_step(dt)?;
        let mut cache = self.factors.lock().expect("factor cache poisoned");
        if let Some(f) = cache.get(&dt.to_bits()) {
            return Ok(f.clone());
        }
        let factor = Arc::new(self.assemble(dt));
        cache.insert(dt.to_bits(), factor.clone());
        Ok(factor)
    }

    fn assemble(&self, dt: f64) -> Factor {
        let n = self.mesh.num_vertices();
        let a = self.mesh.stiffness();
        let mut tri = TriMat::with_capacity((n, n), a.nnz() + n);
        for (&v, (i, j)) in a.iter() {
            tri.add_triplet(i, j, dt * v);
        }
        for (i, &m) in self.mesh.lumped_mass().iter().enumerate() {
            tri.add_triplet(i, i, m);
        }
        Factor::new(tri.to_csc())
    }

    /// One implicit step applied to an arbitrary nodal function.
    fn step_values(&self, factor: &Factor, x: &[f64]) -> Result<Vec<f64>> {
        let rhs: Vec<f64> = x.iter().zip(self.mesh.lumped_mass()).map(|(x, m)| x * m).collect();
        factor.solve(&rhs)
    }

    /// One backward-Euler step of a density.
    pub fn step(&self, rho: &Density, dt: f64) -> Result<Density> {
        crate::functionals::same_mesh(&self.mesh, rho.mesh())?;
        let factor = self.factor(dt)?;
        let next = self.step_values(&factor, rho.values())?;
        Ok(Density::from_trusted(self.mesh.clone(), self.clamp(next)?))
    }

    fn clamp(&self, mut x: Vec<f64>) -> Result<Vec<f64>> {
        let scale = x.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let floor = -NEG_TOL * scale;
        for v in x.iter_mut() {
            if *v < 0.0 {
                if *v < floor && self.mesh.is_m_matrix() {
                    return Err(Error::Internal(format!(
                        "heat step produced negative density {v:.3e} on an M-matrix mesh"
                    )));
                }
                *v = 0.0;
            }
        }
        Ok(x)
    }

    /// Runs the flow to `t_final` with step `dt`, recording the samples closest
    /// to `sample_times` (times are snapped to the step grid and recorded exactly).
    /// Interval momenta are `-∇` of the mean of the two bracketing samples.
    pub fn evolve(&self, rho0: &Density, t_final: f64, dt: f64, sample_times: &[f64]) -> Result<Curve> {
        let steps = self.snap_times(t_final, dt, sample_times)?;
        if steps.is_empty() || steps == [0] {
            return Curve::new(vec![0.0], vec![rho0.clone()], Some(Vec::new()), Provenance::Heat);
        }
        let factor = if *steps.last().unwrap() > 0 { Some(self.factor(dt)?) } else { None };
        let mut densities = Vec::with_capacity(steps.len());
        let mut current = rho0.values().to_vec();
        let mut done = 0;
        for &target in &steps {
            while done < target {
                let next = self.step_values(factor.as_ref().unwrap(), &current)?;
                current = self.clamp(next)?;
                done += 1;
            }
            densities.push(Density::from_trusted(self.mesh.clone(), current.clone()));
        }
        let momenta = midpoint_momenta(&self.mesh, &densities);
        let times = steps.iter().map(|&k| k as f64 * dt).collect();
        Curve::new(times, densities, Some(momenta), Provenance::Heat)
    }

    /// Step counts for the requested sample times, sorted and distinct.
    fn snap_times(&self, t_final: f64, dt: f64, sample_times: &[f64]) -> Result<Vec<usize>> {
        if !(t_final.is_finite() && t_final >= 0.0) {
            return Err(Error::validation(format!("final time must be nonnegative, got {t_final}")));
        }
        if !(dt.is_finite() && dt > 0.0) {
            return Err(Error::validation(format!("time step must be positive, got {dt}")));
        }
        let mut steps = Vec::with_capacity(sample_times.len());
        for (i, &t) in sample_times.iter().enumerate() {
            if !(t >= 0.0 && t <= t_final * (1.0 + 1e-12)) {
                return Err(Error::validation(format!("sample time {t} outside [0, {t_final}]")));
            }
            if i > 0 && t <= sample_times[i - 1] {
                return Err(Error::validation("sample times must be strictly increasing"));
            }
            let k = (t / dt).round() as usize;
            if steps.last() == Some(&k) {
                return Err(Error::validation(format!("sample times closer than the step {dt} collapse at t = {t}")));
            }
            steps.push(k);
        }
        Ok(steps)
    }

    /// `P_t f` for a nodal function, without any normalization.
    pub fn apply_to_function(&self, f: &[f64], t: f64, dt: f64) -> Result<Vec<f64>> {
        Ok(self.apply_at_times(f, &[t], dt)?.pop().unwrap())
    }

    /// `P_t f` at several increasing times from a single run.
    pub fn apply_at_times(&self, f: &[f64], times: &[f64], dt: f64) -> Result<Vec<Vec<f64>>> {
        if f.len() != self.mesh.num_vertices() {
            return Err(Error::validation("function length does not match the mesh"));
        }
        let t_final = times.last().copied().unwrap_or(0.0);
        let steps = self.snap_times(t_final, dt, times)?;
        let mut out = Vec::with_capacity(steps.len());
        let mut current = f.to_vec();
        let mut done = 0;
        for &target in &steps {
            if target > done {
                let factor = self.factor(dt)?;
                while done < target {
                    current = self.step_values(&factor, &current)?;
                    done += 1;
                }
            }
            out.push(current.clone());
        }
        Ok(out)
    }

    /// Propagates several nodal functions to each of the increasing `times`,
    /// splitting every interval between consecutive samples into `substeps`
    /// equal implicit steps. Suited to geometric sample grids, where a uniform
    /// step would be either too coarse early or too expensive late. These
    /// factorizations are not cached. Returns `out[input][sample]`.
    pub fn propagate(&self, inputs: &[Vec<f64>], times: &[f64], substeps: usize) -> Result<Vec<Vec<Vec<f64>>>> {
        let n = self.mesh.num_vertices();
        if inputs.iter().any(|f| f.len() != n) {
            return Err(Error::validation("function length does not match the mesh"));
        }
        if substeps == 0 {
            return Err(Error::validation("substeps must be positive"));
        }
        if times.iter().any(|t| !(t.is_finite() && *t >= 0.0)) || times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::validation("sample times must be nonnegative and strictly increasing"));
        }
        let mut current: Vec<Vec<f64>> = inputs.to_vec();
        let mut out: Vec<Vec<Vec<f64>>> = vec![Vec::with_capacity(times.len()); inputs.len()];
        let mut t = 0.0;
        for &target in times {
            if target > t {
                let dt = (target - t) / substeps as f64;
                check_step(dt)?;
                let factor = self.assemble(dt);
                for x in current.iter_mut() {
                    for _ in 0..substeps {
                        *x = self.step_values(&factor, x)?;
                    }
                }
                t = target;
            }
            for (o, x) in out.iter_mut().zip(&current) {
                o.push(x.clone());
            }
        }
        Ok(out)
    }

    /// Density version of [`HeatOperator::propagate`]: one heat curve per datum,
    /// with interval momenta `-∇` of the mean of the bracketing samples.
    pub fn evolve_graded(&self, data: &[Density], times: &[f64], substeps: usize) -> Result<Vec<Curve>> {
        for d in data {
            crate::functionals::same_mesh(&self.mesh, d.mesh())?;
        }
        let inputs: Vec<Vec<f64>> = data.iter().map(|d| d.values().to_vec()).collect();
        let runs = self.propagate(&inputs, times, substeps)?;
        runs.into_iter()
            .map(|samples| {
                let densities = samples
                    .into_iter()
                    .map(|x| Ok(Density::from_trusted(self.mesh.clone(), self.clamp(x)?)))
                    .collect::<Result<Vec<_>>>()?;
                let momenta = midpoint_momenta(&self.mesh, &densities);
                Curve::new(times.to_vec(), densities, Some(momenta), Provenance::Heat)
            })
            .collect()
    }

    /// Solves the Neumann problem `A ψ = b` for a right side of zero sum,
    /// normalized so that `ψ` has zero mean with respect to the lumped mass.
    pub fn poisson(&self, b: &[f64]) -> Result<Vec<f64>> {
        let n = self.mesh.num_vertices();
        if b.len() != n {
            return Err(Error::validation("right side length does not match the mesh"));
        }
        let total: f64 = b.iter().sum();
        let scale: f64 = b.iter().map(|v| v.abs()).sum();
        if total.abs() > 1e-8 * scale.max(f64::MIN_POSITIVE) {
            return Err(Error::validation(format!("Neumann right side has nonzero sum {total:.3e}")));
        }
        let factor = self.poisson.get_or_init(|| {
            // pin vertex 0: the equation there follows from the others since rows of A sum to zero
            let a = self.mesh.stiffness();
            let mut tri = TriMat::with_capacity((n, n), a.nnz());
            for (&v, (i, j)) in a.iter() {
                if i != 0 && j != 0 {
                    tri.add_triplet(i, j, v);
                }
            }
            tri.add_triplet(0, 0, 1.0);
            Arc::new(Factor::new(tri.to_csc()))
        });
        let mut rhs = b.to_vec();
        rhs[0] = 0.0;
        let mut psi = factor.solve(&rhs)?;
        let mean = crate::functionals::weighted_sum(self.mesh.lumped_mass(), &psi) / self.mesh.area_total();
        psi.iter_mut().for_each(|v| *v -= mean);
        Ok(psi)
    }

    /// The minimal-norm gradient momentum `F = -∇ψ` carrying `from` to `to` in time `dt`,
    /// so that the discrete continuity equation holds exactly on the interval.
    pub fn transport_momentum(&self, from: &[f64], to: &[f64], dt: f64) -> Result<VectorField> {
        let b: Vec<f64> = from
            .iter()
            .zip(to)
            .zip(self.mesh.lumped_mass())
            .map(|((a, b), m)| -m * (b - a) / dt)
            .collect();
        // remove rounding drift so the Neumann compatibility condition holds
        let drift = b.iter().sum::<f64>() / b.len() as f64;
        let b: Vec<f64> = b.iter().map(|v| v - drift).collect();
        let psi = self.poisson(&b)?;
        Ok(VectorField::negative_gradient(self.mesh.clone(), &psi))
    }
}

/// Solves `A_w ψ = b` for the stiffness weighted per triangle by `weights`
/// (all positive), with natural boundary conditions. `b` must have zero sum;
/// the solution is pinned to zero at vertex 0.
pub(crate) fn weighted_poisson(mesh: &TriMesh, weights: &[f64], b: &[f64]) -> Result<Vec<f64>> {
    let n = mesh.num_vertices();
    if weights.iter().any(|w| !(*w > 0.0 && w.is_finite())) {
        return Err(Error::validation("weighted Poisson problem needs positive weights on every triangle"));
    }
    let mut tri = TriMat::with_capacity((n, n), 9 * mesh.num_triangles() + 1);
    for (t, vs) in mesh.triangles().iter().enumerate() {
        let g = &mesh.basis_gradients()[t];
        let c = mesh.triangle_areas()[t] * weights[t];
        for a in 0..3 {
            for k in 0..3 {
                if vs[a] != 0 && vs[k] != 0 {
                    tri.add_triplet(vs[a], vs[k], c * (g[a][0] * g[k][0] + g[a][1] * g[k][1]));
                }
            }
        }
    }
    tri.add_triplet(0, 0, 1.0);
    let mut rhs = b.to_vec();
    rhs[0] = 0.0;
    Factor::new(tri.to_csc()).solve(&rhs)
}
