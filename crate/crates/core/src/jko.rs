//! Entropic JKO minimizing movements for the entropy.
//!
//! One step minimizes over probability vectors `p`
//!
//! `J(p) = [OT_ε(p, b) - ⟨p, φ_b⟩] / (2τ) + H(p)`,
//!
//! where `b` is the previous iterate and `φ_b` the symmetric potential of
//! `OT_ε(b, b)`. The linear term makes `p ↦ OT_ε(p, b) - ⟨p, φ_b⟩ - ½ OT_ε(b, b)`
//! a nonnegative divergence vanishing at `p = b`, so stationary densities are
//! fixed points. With `debiased = false` the term is dropped and the literal
//! entropic objective `OT_ε(p, b)/(2τ) + H(p)` is minimized instead.
//!
//! Writing the optimal plan as `P_ij = m_i b_j exp((f_i + g_j - C_ij)/ε)` with
//! lumped masses `m`, the first-order conditions become the scaling iteration
//!
//! `f = κ φ_b + (1 - κ) T(g)`,  `g_j = -ε log Σ_i m_i exp((f_i - C_ij)/ε)`,
//!
//! with `κ = ε/(2τ)` and `T(g)_i = -ε log Σ_j b_j exp((g_j - C_ij)/ε)`. The entropy
//! prox is thus a geometric interpolation, with exponent `κ`, between the
//! transport update and the reference `φ_b`; it requires `ε < 2τ`.

use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::curves::{midpoint_momenta, Curve, Provenance};
use crate::error::{Error, Result};
use crate::functionals::{entropy, Density};
use crate::mesh::TriMesh;
use crate::transport::{entropic_ot, self_transport, CostTable, Gibbs, SinkhornConfig};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct JkoConfig {
    pub tau: f64,
    pub epsilon: f64,
    pub inner_iters: usize,
    /// Bound on the L¹ change of the iterate between sweeps at termination.
    pub inner_tol: f64,
    pub debiased: bool,
}

impl JkoConfig {
    pub fn new(tau: f64, epsilon: f64) -> Self {
        JkoConfig { tau, epsilon, inner_iters: 20_000, inner_tol: 1e-11, debiased: true }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::validation(format!("tau must be positive, got {}", self.tau)));
        }
        if !(self.epsilon.is_finite() && self.epsilon > 0.0) {
            return Err(Error::validation(format!("epsilon must be positive, got {}", self.epsilon)));
        }
        if self.epsilon >= 2.0 * self.tau {
            return Err(Error::validation(format!(
                "epsilon = {} must be below 2 tau = {} for the entropy prox to be well posed",
                self.epsilon,
                2.0 * self.tau
            )));
        }
        if !(self.inner_tol.is_finite() && self.inner_tol > 0.0) || self.inner_iters == 0 {
            return Err(Error::validation("inner tolerance and iteration budget must be positive"));
        }
        Ok(())
    }

    fn sinkhorn(&self) -> SinkhornConfig {
        SinkhornConfig { epsilon: self.epsilon, max_iters: 100 * self.inner_iters, tol: 1e-12, debiased: true }
    }
}

/// Diagnostics of one minimizing-movement step.
#[derive(Clone, Debug, Serialize)]
pub struct StepReport {
    pub entropy_before: f64,
    pub entropy_after: f64,
    /// `OT_ε(ρ^{n+1}, ρ^n)` evaluated by an independent transport solve.
    pub transport_cost: f64,
    /// `OT_ε(ρ^n, ρ^n)`.
    pub self_cost: f64,
    /// `⟨ρ^{n+1} - ρ^n, φ_{ρ^n}⟩` in mass form; zero weight when not debiased.
    pub linear_term: f64,
    /// Transport part of the objective, zero at `ρ^{n+1} = ρ^n`.
    pub divergence: f64,
    /// `H(ρ^{n+1}) + divergence/(2τ) - H(ρ^n)`; nonpositive for an exact minimizer.
    pub energy_gap: f64,
    pub iterations: usize,
    pub residual: f64,
}

/// One step, returning the new iterate with diagnostics.
pub fn jko_step_report(rho_n: &Density, cost: &CostTable, cfg: &JkoConfig) -> Result<(Density, StepReport)> {
    cfg.validate()?;
    let mesh = rho_n.mesh().clone();
    if mesh.checksum() != cost.checksum() || cost.len() != mesh.num_vertices() {
        return Err(Error::ChecksumMismatch { expected: cost.checksum().to_owned(), found: mesh.checksum().to_owned() });
    }
    let mut b = rho_n.masses();
    let total: f64 = b.iter().sum();
    b.iter_mut().for_each(|v| *v /= total);
    let sink = cfg.sinkhorn();
    let own = self_transport(&b, cost, &sink)?;
    let cols = own.support.clone();
    let wb: Vec<f64> = cols.iter().map(|&j| b[j]).collect();
    let log_wb: Vec<f64> = wb.iter().map(|w| w.ln()).collect();
    let n = mesh.num_vertices();
    let rows: Vec<usize> = (0..n).collect();
    let m = mesh.lumped_mass().to_vec();
    let eps = cfg.epsilon;
    let kappa = eps / (2.0 * cfg.tau);

    // φ_b extended to every vertex by its c-transform
    let mut gibbs = Gibbs::new(cost, rows, cols.clone(), eps, vec![0.0; n], own.potential.clone());
    let phi = gibbs.row_transform(&log_wb, &own.potential);
    let reference: Vec<f64> = if cfg.debiased { phi.clone() } else { vec![0.0; n] };
    gibbs.f_hat = phi.clone();
    gibbs.rebuild();

    let mut u = vec![1.0; n];
    let mut v = vec![1.0; wb.len()];
    let mut p = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut iterations = 0;
    while iterations < cfg.inner_iters {
        iterations += 1;
        let vb: Vec<f64> = v.iter().zip(&wb).map(|(v, b)| v * b).collect();
        let kv = gibbs.apply(&vb);
        for i in 0..n {
            // log u = κ(φ - f̂)/ε - (1 - κ) log(K̃ v b)
            let log_u = kappa * (reference[i] - gibbs.f_hat[i]) / eps - (1.0 - kappa) * kv[i].ln();
            u[i] = log_u.exp();
        }
        let um: Vec<f64> = u.iter().zip(&m).map(|(u, m)| u * m).collect();
        let ktu = gibbs.apply_t(&um);
        for (vj, k) in v.iter_mut().zip(&ktu) {
            *vj = 1.0 / k;
        }
        let vb: Vec<f64> = v.iter().zip(&wb).map(|(v, b)| v * b).collect();
        let kv = gibbs.apply(&vb);
        let next: Vec<f64> = (0..n).map(|i| m[i] * u[i] * kv[i]).collect();
        if next.iter().chain(&v).any(|x| !x.is_finite()) || u.iter().any(|x| !(x.is_finite() && *x > 0.0)) {
            return Err(Error::Solver("JKO scaling iteration left the representable range".into()));
        }
        residual = next.iter().zip(&p).map(|(a, b)| (a - b).abs()).sum();
        p = next;
        if residual <= cfg.inner_tol {
            break;
        }
        if u.iter().chain(&v).any(|x| x.ln().abs() > 40.0) {
            for (f, x) in gibbs.f_hat.iter_mut().zip(u.iter_mut()) {
                *f += eps * x.ln();
                *x = 1.0;
            }
            for (g, x) in gibbs.g_hat.iter_mut().zip(v.iter_mut()) {
                *g += eps * x.ln();
                *x = 1.0;
            }
            gibbs.rebuild();
        }
    }
    if residual > cfg.inner_tol {
        return Err(Error::NonConvergence { iterations, residual });
    }
    let f: Vec<f64> = gibbs.f_hat.iter().zip(&u).map(|(f, u)| f + eps * u.ln()).collect();
    let g: Vec<f64> = gibbs.g_hat.iter().zip(&v).map(|(g, v)| g + eps * v.ln()).collect();
    let mass: f64 = p.iter().sum();
    p.iter_mut().for_each(|x| *x /= mass);
    let next = Density::from_masses(mesh.clone(), &p)?;

    // Independent evaluation of OT_ε(p, b), warm-started from the plan's potentials
    // rewritten in the KL(P | p ⊗ b) convention.
    let warm_f: Vec<f64> = (0..n).map(|i| f[i] + eps * (m[i] / p[i]).ln()).collect();
    let ot = entropic_ot(&p, &b, cost, &sink, Some((warm_f, g)))?;
    let linear_term = if cfg.debiased {
        (0..n).map(|i| (p[i] - b[i]) * phi[i]).sum::<f64>()
    } else {
        0.0
    };
    // OT(p,b) - ⟨p,φ⟩ - ½OT(b,b), using ⟨b,φ⟩ = ½OT(b,b)
    let divergence = ot.value - own.value - linear_term;
    let entropy_before = entropy(rho_n);
    let entropy_after = entropy(&next);
    let energy_gap = entropy_after + divergence / (2.0 * cfg.tau) - entropy_before;
    let report = StepReport {
        entropy_before,
        entropy_after,
        transport_cost: ot.value,
        self_cost: own.value,
        linear_term,
        divergence,
        energy_gap,
        iterations,
        residual,
    };
    Ok((next, report))
}

/// One minimizing-movement step.
pub fn jko_step(rho_n: &Density, cost: &CostTable, cfg: &JkoConfig) -> Result<Density> {
    Ok(jko_step_report(rho_n, cost, cfg)?.0)
}

/// A JKO trajectory with its per-step diagnostics.
#[derive(Clone, Debug)]
pub struct JkoRun {
    pub curve: Curve,
    pub steps: Vec<StepReport>,
}

/// Iterates `T/τ` steps. Momenta `-∇` of the mean of consecutive iterates are
/// attached as a reconstruction, not as solver output.
pub fn jko_curve(rho0: &Density, t_final: f64, cost: &CostTable, cfg: &JkoConfig) -> Result<JkoRun> {
    cfg.validate()?;
    let ratio = t_final / cfg.tau;
    let steps = ratio.round();
    if !(t_final > 0.0) || (ratio - steps).abs() > 1e-9 * ratio.max(1.0) {
        return Err(Error::validation(format!("final time {t_final} is not a positive multiple of tau = {}", cfg.tau)));
    }
    let steps = steps as usize;
    let mesh: Arc<TriMesh> = rho0.mesh().clone();
    let mut densities = vec![rho0.clone()];
    let mut reports = Vec::with_capacity(steps);
    for _ in 0..steps {
        let (next, report) = jko_step_report(densities.last().unwrap(), cost, cfg)?;
        densities.push(next);
        reports.push(report);
    }
    let momenta = midpoint_momenta(&mesh, &densities);
    let times = (0..=steps).map(|k| k as f64 * cfg.tau).collect();
    let curve = Curve::new(times, densities, Some(momenta), Provenance::Jko)?;
    Ok(JkoRun { curve, steps: reports })
}
