use std::f64::consts::PI;
use std::sync::Arc;

use super::data::{boundary_frame, test_functions};
use super::fit::{fit_shifted_sqrt_linear, fit_sqrt_linear, geometric_times, FitResult};
use super::{chain_rule_balance, WIDTH_ADJUSTED, ExperimentConfig, Lab, Report, Series, Verdict};
use crate::error::{Error, Result};
use crate::functionals::fisher_m;
use crate::jko::{jko_curve, JkoConfig};
use crate::mesh::{boundary_curvature, CurvatureBound, DomainSpec};
use crate::transport::{extrapolated_divergence_with, masses_for, tangent_norm, CostTable, SinkhornConfig, WarmStart};
use crate::{Curve, Density, TriMesh};

/// Fisher information below this is treated as identically zero.
const FISHER_FLOOR: f64 = 1e-12;
/// Relative Fisher increases below this are rounding noise.
const ROUNDING: f64 = 1e-12;

fn sinkhorn(cfg: &ExperimentConfig) -> SinkhornConfig {
    SinkhornConfig { epsilon: cfg.epsilon, ..SinkhornConfig::default() }
}

fn uniform_times(horizon: f64, every: f64) -> Vec<f64> {
    let n = (horizon / every).round() as usize;
    (0..=n).map(|k| k as f64 * every).collect()
}

fn with_origin(times: &[f64]) -> Vec<f64> {
    std::iter::once(0.0).chain(times.iter().copied()).collect()
}

fn curvature(cfg: &ExperimentConfig, spec: &DomainSpec) -> Result<CurvatureBound> {
    boundary_curvature(spec, cfg.curvature_samples)
}

fn require_nonconvex(name: &str, s: &CurvatureBound) -> Result<()> {
    if s.S > 0.0 {
        Ok(())
    } else {
        Err(Error::validation(format!("{name} needs a non-convex domain (S > 0), got S = {}", s.S)))
    }
}

fn control_domain(cfg: &ExperimentConfig) -> Result<&DomainSpec> {
    cfg.control_domain.as_ref().ok_or_else(|| Error::validation("this experiment needs a control_domain"))
}

/// Fits `log(values[k]/values[0])` over the samples after the origin.
fn log_ratio_fit(times: &[f64], values: &[f64]) -> Result<(Vec<f64>, FitResult)> {
    let r: Vec<f64> = values.iter().map(|v| (v / values[0]).ln()).collect();
    let fit = fit_sqrt_linear(&times[1..], &r[1..])?;
    Ok((r, fit))
}

/// Largest excess of `r` over the bound `c√t + β̂t`.
fn bound_excess(times: &[f64], r: &[f64], c: f64, fit: &FitResult) -> f64 {
    times.iter().zip(r).skip(1).map(|(&t, &x)| x - c * t.sqrt() - fit.beta * t).fold(f64::NEG_INFINITY, f64::max)
}

/// Extrapolated distances between consecutive samples, warm-started along the curve.
fn consecutive_distances(densities: &[Density], cost: &CostTable, cfg: &SinkhornConfig) -> Result<Vec<f64>> {
    let masses = densities.iter().map(|d| masses_for(d, cost)).collect::<Result<Vec<_>>>()?;
    let mut warm: [WarmStart; 2] = Default::default();
    masses
        .windows(2)
        .map(|w| Ok(extrapolated_divergence_with(&w[0], &w[1], cost, cfg, &mut warm)?.sqrt()))
        .collect()
}

/// Extrapolated distances between matching samples of two curves.
fn paired_distances(a: &[Density], b: &[Density], cost: &CostTable, cfg: &SinkhornConfig) -> Result<Vec<f64>> {
    let mut warm: [WarmStart; 2] = Default::default();
    a.iter()
        .zip(b)
        .map(|(x, y)| {
            let (p, q) = (masses_for(x, cost)?, masses_for(y, cost)?);
            Ok(extrapolated_divergence_with(&p, &q, cost, cfg, &mut warm)?.sqrt())
        })
        .collect()
}

pub(super) fn fisher_convex(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let s = curvature(cfg, &cfg.domain)?;
    rep.curvature = Some(s);
    if s.S > 0.0 {
        return Err(Error::validation(format!("fisher_convex needs a convex domain, got S = {}", s.S)));
    }
    let per_h = cfg.tol("monotone_per_h")?;
    let factor = cfg.tol("refinement_factor")?;
    let times = uniform_times(cfg.horizon, cfg.sample_every);
    let levels = [cfg.domain.h, 0.5 * cfg.domain.h];
    let mut worst = vec![[None; 2]; cfg.data.len()];
    for (level, &h) in levels.iter().enumerate() {
        let mesh = lab.mesh(&cfg.domain.with_h(h))?;
        rep.use_mesh(&format!("h={h}"), &mesh);
        let op = lab.heat(&mesh);
        for (k, datum) in cfg.data.iter().enumerate() {
            let label = format!("{}@h={h}", datum.label());
            let curve = op.evolve(&datum.density(&mesh, cfg.seed)?, cfg.horizon, cfg.dt, &times)?;
            let fishers = curve.fishers();
            rep.series.push(
                Series::new(&label, &mesh, curve.times().to_vec())
                    .column("fisher", fishers.clone())
                    .column("entropy", curve.entropies()),
            );
            if fishers[0] < FISHER_FLOOR {
                let peak = fishers.iter().fold(0.0f64, |m, v| m.max(*v));
                rep.push(Verdict::at_most(format!("zero_fisher[{label}]"), peak, FISHER_FLOOR));
                continue;
            }
            let violation = fishers
                .windows(2)
                .map(|w| w[1] / w[0] - 1.0)
                .filter(|&v| v > ROUNDING)
                .fold(0.0f64, f64::max);
            rep.push(Verdict::at_most(format!("monotone[{label}]"), violation, per_h * h));
            worst[k][level] = Some(violation);
        }
    }
    for (k, datum) in cfg.data.iter().enumerate() {
        if let [Some(coarse), Some(fine)] = worst[k] {
            rep.push(Verdict::at_most(format!("refinement[{}]", datum.label()), fine, factor * coarse));
        }
    }
    Ok(())
}

pub(super) fn fisher_nonconvex(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let s = curvature(cfg, &cfg.domain)?;
    rep.curvature = Some(s);
    require_nonconvex("fisher_nonconvex", &s)?;
    let additive = cfg.tol("bound_additive")?;
    let cap = cfg.tol("control_alpha")?;
    let times = with_origin(&geometric_times(cfg.t_min, cfg.t_max, cfg.samples)?);
    let rate = 4.0 * s.S / PI.sqrt();
    let mesh = lab.mesh(&cfg.domain)?;
    rep.use_mesh("domain", &mesh);
    let data = cfg.data.iter().map(|d| d.density(&mesh, cfg.seed)).collect::<Result<Vec<_>>>()?;
    let curves = lab.heat(&mesh).evolve_graded(&data, &times, cfg.substeps)?;
    let mut growth = false;
    for (datum, curve) in cfg.data.iter().zip(&curves) {
        let label = datum.label();
        let fishers = curve.fishers();
        if fishers[0] < FISHER_FLOOR {
            rep.notes.push(format!("{label}: initial Fisher information vanishes; datum skipped"));
            continue;
        }
        let (r, fit) = log_ratio_fit(&times, &fishers)?;
        growth |= r.iter().any(|&x| x > 0.0);
        rep.push(Verdict::at_most(format!("rate[{label}]"), fit.alpha, rate * (1.0 + cfg.slack)));
        rep.push(Verdict::at_most(format!("bound[{label}]"), bound_excess(&times, &r, rate, &fit), additive));
        let bound: Vec<f64> = times.iter().map(|&t| rate * (t / PI).sqrt() + fit.beta * t).collect();
        rep.series.push(
            Series::new(&label, &mesh, times.clone())
                .column("fisher", fishers)
                .column("log_ratio", r)
                .column("fit", times.iter().map(|&t| fit.eval(t)).collect())
                .column("bound", bound)
                .column("entropy", curve.entropies()),
        );
        rep.fits.insert(label, fit);
    }
    rep.observations.push(if growth {
        "strict Fisher growth observed for at least one datum".into()
    } else {
        "no strict Fisher growth observed".into()
    });

    let control = control_domain(cfg)?;
    let sc = curvature(cfg, control)?;
    if sc.S > 0.0 {
        return Err(Error::validation(format!("control domain must be convex, got S = {}", sc.S)));
    }
    let cmesh = lab.mesh(control)?;
    rep.use_mesh("control", &cmesh);
    let cdata = cfg.control_data.iter().map(|d| d.density(&cmesh, cfg.seed)).collect::<Result<Vec<_>>>()?;
    let ccurves = lab.heat(&cmesh).evolve_graded(&cdata, &times, cfg.substeps)?;
    for (datum, curve) in cfg.control_data.iter().zip(&ccurves) {
        let label = format!("control_{}", datum.label());
        let fishers = curve.fishers();
        if fishers[0] < FISHER_FLOOR {
            rep.notes.push(format!("{label}: initial Fisher information vanishes; datum skipped"));
            continue;
        }
        let (r, fit) = log_ratio_fit(&times, &fishers)?;
        rep.push(Verdict::at_most(format!("control_rate[{label}]"), fit.alpha.abs(), cap));
        rep.series.push(
            Series::new(&label, &cmesh, times.clone())
                .column("fisher", fishers)
                .column("log_ratio", r)
                .column("fit", times.iter().map(|&t| fit.eval(t)).collect()),
        );
        rep.fits.insert(label, fit);
    }
    Ok(())
}

/// Heat curve and JKO curve from the first datum on the transport mesh.
fn heat_and_jko(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<(Arc<CostTable>, Curve, Curve, f64)> {
    let mesh = lab.mesh(&cfg.domain)?;
    rep.use_mesh("transport", &mesh);
    let cost = lab.cost(&mesh)?;
    let datum = cfg.data.first().ok_or_else(|| Error::validation("this experiment needs one datum"))?;
    let rho = datum.density(&mesh, cfg.seed)?;
    let heat = lab.heat(&mesh).evolve(&rho, cfg.horizon, cfg.dt, &uniform_times(cfg.horizon, cfg.sample_every))?;
    let run = jko_curve(&rho, cfg.horizon, &cost, &JkoConfig::new(cfg.tau, cfg.jko_epsilon))?;
    let worst_gap = run.steps.iter().map(|s| s.energy_gap).fold(f64::NEG_INFINITY, f64::max);
    Ok((cost, heat, run.curve, worst_gap))
}

/// Per-interval data of a sampled curve: distances, entropies and Fisher information.
struct Track {
    t: Vec<f64>,
    h: Vec<f64>,
    fisher: Vec<f64>,
    w: Vec<f64>,
}

impl Track {
    fn new(curve: &Curve, cost: &CostTable, cfg: &SinkhornConfig) -> Result<Self> {
        Ok(Track {
            t: curve.times().to_vec(),
            h: curve.entropies(),
            fisher: curve.fishers(),
            w: consecutive_distances(curve.densities(), cost, cfg)?,
        })
    }

    /// `½(√ℐ_k + √ℐ_{k+1}) W_k`, the quadrature of `√ℐ |μ̇|` on interval `k`.
    fn upper_gradient_terms(&self) -> Vec<f64> {
        self.w.iter().enumerate().map(|(k, w)| 0.5 * (self.fisher[k].sqrt() + self.fisher[k + 1].sqrt()) * w).collect()
    }

    /// `½(W_k²/Δt_k + ½(ℐ_k + ℐ_{k+1})Δt_k)`, the dissipation on interval `k`.
    fn dissipation_terms(&self) -> Vec<f64> {
        self.w
            .iter()
            .enumerate()
            .map(|(k, w)| {
                let dt = self.t[k + 1] - self.t[k];
                0.5 * (w * w / dt + 0.5 * (self.fisher[k] + self.fisher[k + 1]) * dt)
            })
            .collect()
    }

    fn speeds(&self) -> Vec<f64> {
        self.w.iter().enumerate().map(|(k, w)| w / (self.t[k + 1] - self.t[k])).collect()
    }

    /// Max over sample pairs `i < j` of `f(H_j - H_i, Σ_{i ≤ k < j} terms_k)`.
    fn worst_pair(&self, terms: &[f64], f: impl Fn(f64, f64) -> f64) -> f64 {
        let mut worst = f64::NEG_INFINITY;
        for i in 0..self.t.len() {
            let mut sum = 0.0;
            for j in i + 1..self.t.len() {
                sum += terms[j - 1];
                worst = worst.max(f(self.h[j] - self.h[i], sum));
            }
        }
        worst
    }

    fn series(&self, name: &str, mesh: &TriMesh) -> Series {
        Series::new(name, mesh, self.t.clone())
            .column("entropy", self.h.clone())
            .column("fisher", self.fisher.clone())
            .column("interval_distance", self.w.clone())
            .column("interval_speed", self.speeds())
    }
}

/// `lhs/rhs` with `0/0 = 0`.
fn ratio(lhs: f64, rhs: f64) -> f64 {
    if lhs == 0.0 {
        0.0
    } else {
        lhs / rhs
    }
}

pub(super) fn upper_gradient(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let tol = cfg.tol("upper_gradient")?;
    let agreement = cfg.tol("heat_agreement")?;
    let (cost, heat, jko, _) = heat_and_jko(cfg, lab, rep)?;
    let sk = sinkhorn(cfg);
    for (name, curve) in [("heat", &heat), ("jko", &jko)] {
        let track = Track::new(curve, &cost, &sk)?;
        let terms = track.upper_gradient_terms();
        let worst = track.worst_pair(&terms, |dh, rhs| ratio(dh.abs(), rhs));
        rep.push(Verdict::at_most(format!("{name}_upper_gradient"), worst, 1.0 + tol));
        if name == "heat" {
            let rhs: f64 = terms.iter().sum();
            let lhs = (track.h[track.h.len() - 1] - track.h[0]).abs();
            rep.push(Verdict::at_most("heat_agreement", ratio((rhs - lhs).abs(), rhs), agreement));
        }
        rep.series.push(track.series(name, curve.mesh()));
    }
    Ok(())
}

pub(super) fn exact_chain_rule(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let interval_tol = cfg.tol("interval_defect")?;
    let balance_tol = cfg.tol("balance")?;
    let mesh = lab.mesh(&cfg.domain)?;
    rep.use_mesh("domain", &mesh);
    let datum = cfg.data.first().ok_or_else(|| Error::validation("exact_chain_rule needs one datum"))?;
    let rho = datum.density(&mesh, cfg.seed)?;
    let times = uniform_times(cfg.horizon, cfg.sample_every);
    let curve = lab.heat(&mesh).evolve(&rho, cfg.horizon, cfg.dt, &times)?;
    let b = chain_rule_balance(&curve)?;
    rep.push(Verdict::at_most("interval_chain_rule", b.max_interval_defect, interval_tol));
    rep.push(Verdict::at_most("chain_rule_balance", b.balance_defect, balance_tol));
    rep.push(Verdict::at_most("dissipation_balance", b.dissipation_defect, balance_tol));
    // the same balance with reversed momenta must be rejected
    let flipped = chain_rule_balance(&curve.scaled_momenta(-1.0)?)?;
    rep.push(Verdict::at_least("negated_momenta_rejected", flipped.balance_defect, balance_tol));
    rep.series.push(
        Series::new("heat", &mesh, times)
            .column("entropy", curve.entropies())
            .column("fisher", curve.fishers())
            .column("interval_entropy_rate", b.entropy_rates.clone())
            .column("interval_pairing", b.pairings.clone()),
    );
    rep.notes.push(format!(
        "delta H = {:.6e}, pairing integral = {:.6e}, Fisher integral = {:.6e}",
        b.delta_h, b.pairing_integral, b.fisher_integral
    ));
    Ok(())
}

pub(super) fn edi(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let equality = cfg.tol("heat_equality")?;
    let step_tol = cfg.tol("jko_step")?;
    let integrated = cfg.tol("jko_integrated")?;
    let (cost, heat, jko, worst_gap) = heat_and_jko(cfg, lab, rep)?;
    let sk = sinkhorn(cfg);
    for (name, curve) in [("heat", &heat), ("jko", &jko)] {
        let track = Track::new(curve, &cost, &sk)?;
        let terms = track.dissipation_terms();
        // H_j - H_i ≤ -D_ij up to a fraction of the dissipation D_ij
        let excess = track.worst_pair(&terms, |dh, d| ratio(dh + d, d));
        let tol = if name == "heat" { equality } else { integrated };
        rep.push(Verdict::at_most(format!("{name}_dissipation_inequality"), excess, tol));
        if name == "heat" {
            let d: f64 = terms.iter().sum();
            let dh = track.h[track.h.len() - 1] - track.h[0];
            rep.push(Verdict::at_most("heat_dissipation_equality", ratio((dh + d).abs(), d), equality));
        }
        rep.series.push(track.series(name, curve.mesh()));
    }
    rep.push(Verdict::at_most("jko_step_energy", worst_gap, step_tol));
    Ok(())
}

pub(super) fn wasserstein_contraction(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let ratio_tol = cfg.tol("convex_ratio")?;
    let additive = cfg.tol("bound_additive")?;
    let sk = sinkhorn(cfg);

    let control = control_domain(cfg)?;
    if curvature(cfg, control)?.S > 0.0 {
        return Err(Error::validation("the contraction control domain must be convex"));
    }
    let [mu, nu] = pair(&cfg.control_data)?;
    let cmesh = lab.mesh(control)?;
    rep.use_mesh("control", &cmesh);
    let ccost = lab.cost(&cmesh)?;
    let op = lab.heat(&cmesh);
    let mut probes = cfg.probe_times.clone();
    probes.sort_by(f64::total_cmp);
    probes.dedup();
    let times = with_origin(&probes);
    let t_end = *times.last().unwrap();
    let a = op.evolve(&mu.density(&cmesh, cfg.seed)?, t_end, cfg.dt, &times)?;
    let b = op.evolve(&nu.density(&cmesh, cfg.seed)?, t_end, cfg.dt, &times)?;
    let w = paired_distances(a.densities(), b.densities(), &ccost, &sk)?;
    for (k, &t) in times.iter().enumerate().skip(1) {
        rep.push(Verdict::at_most(format!("convex_ratio[t={t}]"), ratio(w[k], w[0]), 1.0 + ratio_tol));
    }
    rep.series.push(Series::new("convex", &cmesh, times.clone()).column("distance", w));

    let s = curvature(cfg, &cfg.domain)?;
    rep.curvature = Some(s);
    require_nonconvex("the non-convex contraction check", &s)?;
    let [mu, nu] = pair(&cfg.data)?;
    let mesh = lab.mesh(&cfg.domain)?;
    rep.use_mesh("domain", &mesh);
    let cost = lab.cost(&mesh)?;
    let times = with_origin(&geometric_times(cfg.t_min, cfg.t_max, cfg.samples)?);
    let data = [mu.density(&mesh, cfg.seed)?, nu.density(&mesh, cfg.seed)?];
    let curves = lab.heat(&mesh).evolve_graded(&data, &times, cfg.substeps)?;
    let w = paired_distances(curves[0].densities(), curves[1].densities(), &cost, &sk)?;
    let (r, fit) = log_ratio_fit(&times, &w)?;
    let rate = 2.0 * s.S / PI.sqrt();
    let mut growth = r.iter().any(|&x| x > 0.0);
    let mut max_alpha = fit.alpha;
    rep.push(Verdict::at_most("nonconvex_distance_bound[pair]", bound_excess(&times, &r, rate, &fit), additive));
    rep.series.push(
        Series::new("nonconvex_pair", &mesh, times.clone())
            .column("distance", w)
            .column("log_ratio", r)
            .column("fit", times.iter().map(|&t| fit.eval(t)).collect()),
    );
    rep.fits.insert("pair".into(), fit);

    // infinitesimal pairs: W(μ, μ + sη) = s‖η‖ + o(s) with the ρ-weighted H⁻¹ norm
    let mut max_adjusted = f64::NEG_INFINITY;
    if let Some(h) = cfg.tangent_h {
        let fine = lab.mesh(&cfg.domain.with_h(h))?;
        rep.use_mesh("tangent", &fine);
        let mut labels = Vec::new();
        let mut sigmas = Vec::new();
        let mut inputs = Vec::new();
        for datum in &cfg.tangent_data {
            let (theta, sigma) = match datum {
                super::Datum::Bump { angle, sigma, .. } => (angle.unwrap_or(s.theta_at_min), *sigma),
                _ => return Err(Error::validation("tangent probes need bump data")),
            };
            let (tangent, normal) = boundary_frame(&cfg.domain, theta);
            let mu = datum.density(&fine, cfg.seed)?;
            for (name, v) in [("tangent", tangent), ("normal", normal)] {
                labels.push(format!("{}_{name}", datum.label()));
                sigmas.push(sigma);
                inputs.push(mu.values().to_vec());
                inputs.push(datum.bump_displacement(&fine, v)?);
            }
        }
        let out = lab.heat(&fine).propagate(&inputs, &times, cfg.substeps)?;
        for (k, label) in labels.into_iter().enumerate() {
            let lengths = (0..times.len())
                .map(|i| tangent_norm(&Density::from_trusted(fine.clone(), out[2 * k][i].clone()), &out[2 * k + 1][i]))
                .collect::<Result<Vec<_>>>()?;
            let (r, fit) = log_ratio_fit(&times, &lengths)?;
            growth |= r.iter().any(|&x| x > 0.0);
            max_alpha = max_alpha.max(fit.alpha);
            // a bump exp(-d²/σ²) is a heat kernel at time σ²/4, so its ratio starts on that clock
            let adjusted = fit_shifted_sqrt_linear(&times[1..], &r[1..], 0.25 * sigmas[k] * sigmas[k])?;
            max_adjusted = max_adjusted.max(adjusted.alpha);
            rep.fits.insert(format!("{label}{WIDTH_ADJUSTED}"), adjusted);
            rep.push(Verdict::at_most(
                format!("nonconvex_distance_bound[{label}]"),
                bound_excess(&times, &r, rate, &fit),
                additive,
            ));
            rep.series.push(
                Series::new(format!("tangent_{label}"), &fine, times.clone())
                    .column("tangent_length", lengths)
                    .column("log_ratio", r)
                    .column("fit", times.iter().map(|&t| fit.eval(t)).collect()),
            );
            rep.fits.insert(label, fit);
        }
    }
    rep.push(Verdict::at_most("nonconvex_distance_rate", max_alpha, rate * (1.0 + cfg.slack)));
    if max_adjusted.is_finite() {
        rep.observations.push(format!(
            "largest width-adjusted tangent rate {max_adjusted:.4} against the plain fitted rate {max_alpha:.4}"
        ));
    }
    if growth {
        rep.observations.push("the distance grows at some sample time".into());
    }
    Ok(())
}

fn pair(data: &[super::Datum]) -> Result<[&super::Datum; 2]> {
    match data {
        [a, b] => Ok([a, b]),
        _ => Err(Error::validation(format!("the contraction check needs exactly two data, got {}", data.len()))),
    }
}

/// Vertex averages of the squared triangle gradients, weighted by area.
fn squared_gradient_at_vertices(mesh: &TriMesh, f: &[f64]) -> Vec<f64> {
    let mut num = vec![0.0; mesh.num_vertices()];
    let mut den = vec![0.0; mesh.num_vertices()];
    for (t, tri) in mesh.triangles().iter().enumerate() {
        let g = mesh.gradient(t, f);
        let area = mesh.triangle_areas()[t];
        for &v in tri {
            num[v] += area * (g[0] * g[0] + g[1] * g[1]);
            den[v] += area;
        }
    }
    num.iter().zip(&den).map(|(n, d)| n / d).collect()
}

/// Per-triangle `(|∇P_t f|², P_t(|∇f|²))` with the right side averaged over the triangle vertices.
fn gradient_sides(mesh: &TriMesh, pf: &[f64], pg: &[f64]) -> Vec<(f64, f64)> {
    mesh.triangles()
        .iter()
        .enumerate()
        .map(|(t, tri)| {
            let g = mesh.gradient(t, pf);
            (g[0] * g[0] + g[1] * g[1], (pg[tri[0]] + pg[tri[1]] + pg[tri[2]]) / 3.0)
        })
        .collect()
}

pub(super) fn gradient_estimate(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let additive = cfg.tol("convex_additive")?;
    let fraction = cfg.tol("support_fraction")?;
    let times = geometric_times(cfg.t_min, cfg.t_max, cfg.samples)?;

    // convex flat domain: pointwise inequality with an additive slack
    let control = control_domain(cfg)?;
    if curvature(cfg, control)?.S > 0.0 {
        return Err(Error::validation("the gradient-estimate control domain must be convex"));
    }
    let cmesh = lab.mesh(control)?;
    rep.use_mesh("control", &cmesh);
    let mut functions = test_functions(&cmesh, cfg.seed, cfg.functions)?;
    if control.is_rectangle() {
        let b = control.bounding_box();
        functions.push(super::TestFunction {
            label: "cos_pi_x".into(),
            values: cmesh.vertices().iter().map(|p| (PI * (p[0] - b[0]) / (b[2] - b[0])).cos()).collect(),
        });
    }
    let inputs: Vec<Vec<f64>> = functions
        .iter()
        .flat_map(|f| [f.values.clone(), squared_gradient_at_vertices(&cmesh, &f.values)])
        .collect();
    let out = lab.heat(&cmesh).propagate(&inputs, &times, cfg.substeps)?;
    for (k, f) in functions.iter().enumerate() {
        let sup = cmesh.gradients(&f.values).iter().map(|g| g[0] * g[0] + g[1] * g[1]).fold(0.0f64, f64::max);
        let mut excess = Vec::with_capacity(times.len());
        for i in 0..times.len() {
            let sides = gradient_sides(&cmesh, &out[2 * k][i], &out[2 * k + 1][i]);
            excess.push(sides.iter().map(|(l, r)| l - r).fold(f64::NEG_INFINITY, f64::max) / sup);
        }
        let worst = excess.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        rep.push(Verdict::at_most(format!("convex_pointwise[{}]", f.label), worst, additive));
        rep.series.push(Series::new(format!("convex_{}", f.label), &cmesh, times.clone()).column("relative_excess", excess));
    }

    // non-convex: smallest admissible factor λ(t) and its √t rate
    let s = curvature(cfg, &cfg.domain)?;
    rep.curvature = Some(s);
    require_nonconvex("the non-convex gradient estimate", &s)?;
    let mesh = lab.mesh(&cfg.domain)?;
    rep.use_mesh("domain", &mesh);
    let functions = test_functions(&mesh, cfg.seed, cfg.functions)?;
    let rate = 4.0 * s.S / PI.sqrt();
    let all_times = with_origin(&times);
    let grads: Vec<Vec<f64>> = functions.iter().map(|f| squared_gradient_at_vertices(&mesh, &f.values)).collect();
    let inputs: Vec<Vec<f64>> =
        functions.iter().zip(&grads).flat_map(|(f, g)| [f.values.clone(), g.clone()]).collect();
    let out = lab.heat(&mesh).propagate(&inputs, &times, cfg.substeps)?;
    let mut max_alpha = f64::NEG_INFINITY;
    for (k, f) in functions.iter().enumerate() {
        let sup = mesh.gradients(&f.values).iter().map(|g| g[0] * g[0] + g[1] * g[1]).fold(0.0f64, f64::max);
        if sup == 0.0 {
            rep.notes.push(format!("{}: constant function skipped", f.label));
            continue;
        }
        let factor = |pf: &[f64], pg: &[f64]| {
            gradient_sides(&mesh, pf, pg)
                .iter()
                .filter(|(_, r)| *r > fraction * sup)
                .map(|(l, r)| l / r)
                .fold(0.0f64, f64::max)
        };
        let mut lambda = vec![factor(&f.values, &grads[k])];
        lambda.extend((0..times.len()).map(|i| factor(&out[2 * k][i], &out[2 * k + 1][i])));
        let (r, fit) = log_ratio_fit(&all_times, &lambda)?;
        max_alpha = max_alpha.max(fit.alpha);
        rep.series.push(
            Series::new(format!("nonconvex_{}", f.label), &mesh, all_times.clone())
                .column("lambda", lambda)
                .column("log_ratio", r)
                .column("fit", all_times.iter().map(|&t| fit.eval(t)).collect()),
        );
        rep.fits.insert(f.label.clone(), fit);
    }
    rep.push(Verdict::at_most("nonconvex_rate", max_alpha, rate * (1.0 + cfg.slack)));
    Ok(())
}

pub(super) fn porous_fisher(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let tol = cfg.tol("relative_residual")?;
    let s = curvature(cfg, &cfg.domain)?;
    rep.curvature = Some(s);
    require_nonconvex("porous_fisher", &s)?;
    let times = with_origin(&geometric_times(cfg.t_min, cfg.t_max, cfg.samples)?);
    let mesh = lab.mesh(&cfg.domain)?;
    rep.use_mesh("domain", &mesh);
    let data = cfg.data.iter().map(|d| d.density(&mesh, cfg.seed)).collect::<Result<Vec<_>>>()?;
    let curves = lab.heat(&mesh).evolve_graded(&data, &times, cfg.substeps)?;
    for (datum, curve) in cfg.data.iter().zip(&curves) {
        for &m in &cfg.m_values {
            let label = format!("{}_m{m}", datum.label());
            let values = curve.densities().iter().map(|d| fisher_m(d, m)).collect::<Result<Vec<_>>>()?;
            if values[0] < FISHER_FLOOR {
                rep.notes.push(format!("{label}: initial porous Fisher information vanishes; skipped"));
                continue;
            }
            let (r, fit) = log_ratio_fit(&times, &values)?;
            rep.push(Verdict::at_most(format!("fit_residual[{label}]"), fit.relative_residual, tol));
            rep.series.push(
                Series::new(&label, &mesh, times.clone())
                    .column("fisher_m", values)
                    .column("log_ratio", r)
                    .column("fit", times.iter().map(|&t| fit.eval(t)).collect()),
            );
            rep.fits.insert(label, fit);
        }
    }
    Ok(())
}

pub(super) fn metric_speed_fisher(cfg: &ExperimentConfig, lab: &Lab, rep: &mut Report) -> Result<()> {
    let tol = cfg.tol("speed_ratio")?;
    let mesh = lab.mesh(&cfg.domain)?;
    rep.use_mesh("transport", &mesh);
    let cost = lab.cost(&mesh)?;
    let datum = cfg.data.first().ok_or_else(|| Error::validation("metric_speed_fisher needs one datum"))?;
    let rho = datum.density(&mesh, cfg.seed)?;
    let op = lab.heat(&mesh);
    let delta = cfg.sample_every;
    let (mut t_col, mut speeds, mut roots) = (Vec::new(), Vec::new(), Vec::new());
    for &t in &cfg.probe_times {
        if t <= delta {
            return Err(Error::validation(format!("probe time {t} must exceed the spacing {delta}")));
        }
        let curve = op.evolve(&rho, t + delta, cfg.dt, &[t - delta, t, t + delta])?;
        let d = curve.densities();
        let w = paired_distances(&d[0..1], &d[2..3], &cost, &sinkhorn(cfg))?[0];
        let speed = w / (curve.times()[2] - curve.times()[0]);
        let root = crate::functionals::fisher(&d[1]).sqrt();
        rep.push(Verdict::at_most(format!("speed_ratio[t={t}]"), (ratio(speed, root) - 1.0).abs(), tol));
        t_col.push(t);
        speeds.push(speed);
        roots.push(root);
    }
    rep.series.push(Series::new("heat", &mesh, t_col).column("metric_speed", speeds).column("sqrt_fisher", roots));
    Ok(())
}
