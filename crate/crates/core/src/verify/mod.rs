//! Experiments that turn the analytic estimates into quantitative pass/fail
//! checks, each with diagnostic time series for plotting.

mod chain;
pub mod data;
mod experiments;
pub mod fit;

use std::collections::{BTreeMap, HashMap};
use std::f64::consts::PI;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;
use std::sync::{Arc, Mutex};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::mesh::{build_mesh, CurvatureBound, DomainSpec};
use crate::report::{format_csv_float, to_json_pretty, write_atomic};
use crate::transport::CostTable;
use crate::{HeatOperator, TriMesh};

pub use chain::{chain_rule_balance, ChainRuleBalance};
pub use data::{Datum, TestFunction};
pub use fit::{fit_shifted_sqrt_linear, fit_sqrt_linear, geometric_times, FitResult};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    FisherConvex,
    FisherNonconvex,
    UpperGradient,
    ExactChainRule,
    Edi,
    WassersteinContraction,
    GradientEstimate,
    PorousFisher,
    MetricSpeedFisher,
}

impl Experiment {
    pub const ALL: [Experiment; 9] = [
        Experiment::FisherConvex,
        Experiment::FisherNonconvex,
        Experiment::UpperGradient,
        Experiment::ExactChainRule,
        Experiment::Edi,
        Experiment::WassersteinContraction,
        Experiment::GradientEstimate,
        Experiment::PorousFisher,
        Experiment::MetricSpeedFisher,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Experiment::FisherConvex => "fisher_convex",
            Experiment::FisherNonconvex => "fisher_nonconvex",
            Experiment::UpperGradient => "upper_gradient",
            Experiment::ExactChainRule => "exact_chain_rule",
            Experiment::Edi => "edi",
            Experiment::WassersteinContraction => "wasserstein_contraction",
            Experiment::GradientEstimate => "gradient_estimate",
            Experiment::PorousFisher => "porous_fisher",
            Experiment::MetricSpeedFisher => "metric_speed_fisher",
        }
    }

    /// The estimate the experiment checks, stated in words.
    pub fn claim(self) -> &'static str {
        match self {
            Experiment::FisherConvex => {
                "On a convex flat domain the Fisher information is non-increasing along the Neumann heat flow."
            }
            Experiment::FisherNonconvex => {
                "On a non-convex flat domain the Fisher information can grow along the heat flow by at most \
                 a factor exp(4S*sqrt(t/pi) + O(t)) for small t, where S bounds the negative part of the \
                 boundary curvature."
            }
            Experiment::UpperGradient => {
                "The square root of the Fisher information is a strong upper gradient of the entropy: \
                 |H(mu_t1) - H(mu_t0)| <= integral of sqrt(I(mu_t)) |mu'_t| dt along absolutely continuous curves."
            }
            Experiment::ExactChainRule => {
                "Along curves with finite kinetic energy and integrable Fisher information the entropy is \
                 absolutely continuous with derivative equal to the pairing of grad log rho with the momentum; \
                 along the heat flow this is the energy dissipation equality."
            }
            Experiment::Edi => {
                "The heat flow satisfies the energy dissipation inequality dH/dt <= -|mu'|^2/2 - I/2 with \
                 equality, and each JKO step satisfies its one-step discrete counterpart."
            }
            Experiment::WassersteinContraction => {
                "The heat semigroup does not expand the Wasserstein distance on convex domains, and expands \
                 it by at most exp(2S*sqrt(t/pi) + O(t)) on non-convex ones."
            }
            Experiment::GradientEstimate => {
                "Gradient estimate |grad P_t f|^2 <= exp(4S*sqrt(t/pi) + O(t)) P_t(|grad f|^2), without the \
                 exponential factor on convex domains."
            }
            Experiment::PorousFisher => {
                "For m in (1, 3/2) the porous-medium Fisher information grows along the heat flow by at most \
                 a factor exp(C*sqrt(t))."
            }
            Experiment::MetricSpeedFisher => {
                "Along the heat flow the Wasserstein metric speed equals the square root of the Fisher information."
            }
        }
    }
}

impl fmt::Display for Experiment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Experiment {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Experiment::ALL
            .into_iter()
            .find(|e| e.name() == s)
            .ok_or_else(|| Error::validation(format!("unknown experiment '{s}'")))
    }
}

/// Effective configuration of one experiment, echoed into its report.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    /// Main domain; for transport experiments its `h` is the transport mesh size.
    pub domain: DomainSpec,
    /// Convex comparison domain, where the experiment has one.
    pub control_domain: Option<DomainSpec>,
    pub data: Vec<Datum>,
    pub control_data: Vec<Datum>,
    /// Number of seeded test functions.
    pub functions: usize,
    /// Small-time fit window and its geometric sample count.
    pub t_min: f64,
    pub t_max: f64,
    pub samples: usize,
    /// Implicit steps per interval of the geometric grid.
    pub substeps: usize,
    pub horizon: f64,
    pub dt: f64,
    pub sample_every: f64,
    /// Extra observation times, used by the contraction and speed checks.
    pub probe_times: Vec<f64>,
    /// Sinkhorn regularization of the coarser extrapolation level.
    pub epsilon: f64,
    pub tau: f64,
    pub jko_epsilon: f64,
    /// Multiplicative slack on rate verdicts.
    pub slack: f64,
    pub tolerances: BTreeMap<String, f64>,
    pub m_values: Vec<f64>,
    /// Mesh size of the infinitesimal-pair probes of the contraction check; none disables them.
    pub tangent_h: Option<f64>,
    /// Bumps whose infinitesimal displacements along the boundary tangent and normal are probed.
    pub tangent_data: Vec<Datum>,
    pub curvature_samples: usize,
    pub seed: u64,
}

fn tolerances(entries: &[(&str, f64)]) -> BTreeMap<String, f64> {
    entries.iter().map(|&(k, v)| (k.to_owned(), v)).collect()
}

impl ExperimentConfig {
    /// Built-in defaults of an experiment.
    pub fn default_for(exp: Experiment) -> Self {
        let square = DomainSpec::unit_square(0.02);
        let star = DomainSpec::polar_star(1.0, 0.5, 3, 0.02);
        let eigen = Datum::Eigen { p: 1, q: 1, amplitude: 0.5 };
        let base = ExperimentConfig {
            domain: square.clone(),
            control_domain: None,
            data: vec![eigen.clone()],
            control_data: Vec::new(),
            functions: 0,
            t_min: 1e-4,
            t_max: 1e-2,
            samples: 16,
            substeps: 8,
            horizon: 0.05,
            dt: 1e-4,
            sample_every: 5e-3,
            probe_times: Vec::new(),
            epsilon: 0.01,
            tau: 2.5e-3,
            jko_epsilon: 2.5e-3,
            slack: 0.25,
            tolerances: BTreeMap::new(),
            m_values: Vec::new(),
            tangent_h: None,
            tangent_data: Vec::new(),
            curvature_samples: 4096,
            seed: 0,
        };
        let bump = |sigma, inset| Datum::Bump { sigma, inset, angle: None, center: None };
        match exp {
            Experiment::FisherConvex => ExperimentConfig {
                data: (0..5).map(|index| Datum::Smooth { index, modes: 4, amplitude: 0.6 }).collect(),
                sample_every: 1e-3,
                tolerances: tolerances(&[("monotone_per_h", 10.0), ("refinement_factor", 0.5)]),
                ..base
            },
            Experiment::FisherNonconvex => ExperimentConfig {
                domain: star,
                control_domain: Some(DomainSpec::polar_star(1.0, 0.0, 3, 0.02)),
                data: vec![bump(0.05, 0.05), bump(0.1, 0.0), bump(0.1, 0.1)],
                control_data: vec![Datum::Radial { amplitude: 0.5 }],
                tolerances: tolerances(&[("bound_additive", 0.02), ("control_alpha", 2.0)]),
                ..base
            },
            Experiment::UpperGradient => ExperimentConfig {
                domain: DomainSpec::unit_square(0.05),
                tolerances: tolerances(&[("upper_gradient", 0.1), ("heat_agreement", 0.1)]),
                ..base
            },
            Experiment::ExactChainRule => ExperimentConfig {
                sample_every: 1e-4,
                tolerances: tolerances(&[("interval_defect", 0.05), ("balance", 0.02)]),
                ..base
            },
            Experiment::Edi => ExperimentConfig {
                domain: DomainSpec::unit_square(0.05),
                tolerances: tolerances(&[("heat_equality", 0.1), ("jko_step", 1e-6), ("jko_integrated", 0.1)]),
                ..base
            },
            Experiment::WassersteinContraction => ExperimentConfig {
                domain: star.with_h(0.05),
                control_domain: Some(DomainSpec::unit_square(0.05)),
                data: vec![
                    Datum::Bump { sigma: 0.1, inset: 0.1, angle: None, center: None },
                    Datum::Bump { sigma: 0.1, inset: 0.1, angle: Some(PI / 3.0 + 0.4), center: None },
                ],
                control_data: vec![
                    Datum::Eigen { p: 1, q: 0, amplitude: 0.5 },
                    Datum::Eigen { p: 0, q: 1, amplitude: 0.5 },
                ],
                samples: 12,
                probe_times: vec![0.01, 0.02, 0.05],
                tangent_h: Some(0.02),
                tangent_data: vec![bump(0.03, 0.0), bump(0.05, 0.0), bump(0.03, 0.03), bump(0.05, 0.05)],
                tolerances: tolerances(&[("convex_ratio", 0.02), ("bound_additive", 0.02)]),
                ..base
            },
            Experiment::GradientEstimate => ExperimentConfig {
                domain: star,
                control_domain: Some(DomainSpec::unit_square(0.01)),
                data: Vec::new(),
                functions: 10,
                tolerances: tolerances(&[("convex_additive", 0.05), ("support_fraction", 0.01)]),
                ..base
            },
            Experiment::PorousFisher => ExperimentConfig {
                domain: star,
                data: vec![bump(0.1, 0.05)],
                m_values: vec![1.25, 1.01, 1.49],
                tolerances: tolerances(&[("relative_residual", 0.05)]),
                ..base
            },
            Experiment::MetricSpeedFisher => ExperimentConfig {
                domain: DomainSpec::unit_square(0.05),
                probe_times: vec![0.02],
                tolerances: tolerances(&[("speed_ratio", 0.1)]),
                ..base
            },
        }
    }

    /// Applies a JSON object of overrides; unknown keys are rejected.
    pub fn overlay(&self, patch: &Value) -> Result<Self> {
        let mut value = serde_json::to_value(self)?;
        merge(&mut value, patch, "")?;
        let cfg: ExperimentConfig =
            serde_json::from_value(value).map_err(|e| Error::validation(format!("invalid configuration: {e}")))?;
        Ok(cfg)
    }

    pub fn tol(&self, name: &str) -> Result<f64> {
        self.tolerances
            .get(name)
            .copied()
            .ok_or_else(|| Error::validation(format!("configuration lacks the tolerance '{name}'")))
    }

    pub fn validate(&self, exp: Experiment) -> Result<()> {
        self.domain.validate()?;
        if let Some(c) = &self.control_domain {
            c.validate()?;
        }
        let positive = |name: &str, v: f64| {
            if v.is_finite() && v > 0.0 {
                Ok(())
            } else {
                Err(Error::validation(format!("{name} must be positive, got {v}")))
            }
        };
        positive("t_min", self.t_min)?;
        positive("dt", self.dt)?;
        positive("horizon", self.horizon)?;
        positive("sample_every", self.sample_every)?;
        positive("epsilon", self.epsilon)?;
        positive("tau", self.tau)?;
        positive("jko_epsilon", self.jko_epsilon)?;
        if !(self.t_max > self.t_min && self.t_max.is_finite()) {
            return Err(Error::validation("fit window needs t_max > t_min"));
        }
        if self.samples < 3 || self.substeps == 0 {
            return Err(Error::validation("fits need at least 3 samples and a positive substep count"));
        }
        if !(self.slack >= 0.0 && self.slack.is_finite()) {
            return Err(Error::validation("slack must be nonnegative"));
        }
        for (name, v) in &self.tolerances {
            positive(&format!("tolerance '{name}'"), *v)?;
        }
        if self.probe_times.iter().any(|t| !(t.is_finite() && *t > 0.0)) {
            return Err(Error::validation("probe times must be positive"));
        }
        if exp == Experiment::PorousFisher {
            if self.m_values.is_empty() {
                return Err(Error::validation("porous_fisher needs at least one exponent m"));
            }
            for &m in &self.m_values {
                if !(m > 1.0 && m < 1.5) {
                    return Err(Error::validation(format!("porous-medium exponent m = {m} must lie in (1, 3/2)")));
                }
            }
        }
        Ok(())
    }
}

fn merge(base: &mut Value, patch: &Value, path: &str) -> Result<()> {
    match (base, patch) {
        (Value::Object(b), Value::Object(p)) => {
            for (k, v) in p {
                let here = if path.is_empty() { k.clone() } else { format!("{path}.{k}") };
                // domain documents are replaced whole so their kind can change
                let whole = here == "domain" || here == "control_domain";
                match b.get_mut(k) {
                    Some(slot) if slot.is_object() && v.is_object() && !whole => merge(slot, v, &here)?,
                    Some(slot) => *slot = v.clone(),
                    None => return Err(Error::validation(format!("unknown configuration key '{here}'"))),
                }
            }
            Ok(())
        }
        (_, _) => Err(Error::validation(format!("configuration at '{path}' must be an object"))),
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Verdict {
    pub name: String,
    pub pass: bool,
    pub measured: f64,
    pub threshold: f64,
}

impl Verdict {
    /// Passes when `measured <= threshold`; NaN fails.
    pub fn at_most(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Verdict { name: name.into(), pass: measured <= threshold, measured, threshold }
    }

    /// Passes when `measured >= threshold`; NaN fails.
    pub fn at_least(name: impl Into<String>, measured: f64, threshold: f64) -> Self {
        Verdict { name: name.into(), pass: measured >= threshold, measured, threshold }
    }
}

/// A named family of per-sample columns on one mesh.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Series {
    pub name: String,
    pub mesh_checksum: String,
    pub t: Vec<f64>,
    pub columns: BTreeMap<String, Vec<f64>>,
}

impl Series {
    pub fn new(name: impl Into<String>, mesh: &TriMesh, t: Vec<f64>) -> Self {
        Series { name: name.into(), mesh_checksum: mesh.checksum().to_owned(), t, columns: BTreeMap::new() }
    }

    /// Adds a column, padding short ones with NaN.
    pub fn column(mut self, name: &str, mut values: Vec<f64>) -> Self {
        values.resize(self.t.len(), f64::NAN);
        self.columns.insert(name.to_owned(), values);
        self
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub experiment: Experiment,
    pub claim: String,
    pub seed: u64,
    pub config: ExperimentConfig,
    /// Checksum of the main mesh.
    pub mesh_checksum: String,
    /// Every mesh used, by role.
    pub meshes: BTreeMap<String, String>,
    pub curvature: Option<CurvatureBound>,
    pub series: Vec<Series>,
    pub fits: BTreeMap<String, FitResult>,
    pub verdicts: Vec<Verdict>,
    /// Informative findings that are reported but never asserted.
    pub observations: Vec<String>,
    pub notes: Vec<String>,
    pub wall_time_s: f64,
}

impl Report {
    fn new(exp: Experiment, cfg: &ExperimentConfig) -> Self {
        Report {
            experiment: exp,
            claim: exp.claim().to_owned(),
            seed: cfg.seed,
            config: cfg.clone(),
            mesh_checksum: String::new(),
            meshes: BTreeMap::new(),
            curvature: None,
            series: Vec::new(),
            fits: BTreeMap::new(),
            verdicts: Vec::new(),
            observations: Vec::new(),
            notes: Vec::new(),
            wall_time_s: 0.0,
        }
    }

    pub fn passed(&self) -> bool {
        self.verdicts.iter().all(|v| v.pass)
    }

    pub fn verdict(&self, name: &str) -> Option<&Verdict> {
        self.verdicts.iter().find(|v| v.name == name)
    }

    fn use_mesh(&mut self, role: &str, mesh: &TriMesh) {
        if self.mesh_checksum.is_empty() {
            self.mesh_checksum = mesh.checksum().to_owned();
        }
        self.meshes.insert(role.to_owned(), mesh.checksum().to_owned());
    }

    fn push(&mut self, v: Verdict) {
        self.verdicts.push(v);
    }

    /// CSV with one row per series sample and the union of all columns.
    pub fn to_csv(&self) -> String {
        let mut names: Vec<&str> = self.series.iter().flat_map(|s| s.columns.keys().map(String::as_str)).collect();
        names.sort_unstable();
        names.dedup();
        let mut out = String::from("series,mesh_checksum,t");
        for n in &names {
            out.push(',');
            out.push_str(n);
        }
        out.push('\n');
        for s in &self.series {
            for (i, t) in s.t.iter().enumerate() {
                out.push_str(&format!("{},{},{}", s.name, s.mesh_checksum, format_csv_float(*t)));
                for n in &names {
                    let v = s.columns.get(*n).map_or(f64::NAN, |c| c[i]);
                    out.push(',');
                    out.push_str(&format_csv_float(v));
                }
                out.push('\n');
            }
        }
        out
    }

    /// Writes `<experiment>.json` and `<experiment>.csv` into `dir`.
    pub fn write(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir)?;
        write_atomic(&dir.join(format!("{}.json", self.experiment)), &to_json_pretty(self)?)?;
        write_atomic(&dir.join(format!("{}.csv", self.experiment)), &self.to_csv())
    }
}

/// Meshes, cost tables and heat operators shared by the experiments of one run.
#[derive(Default)]
pub struct Lab {
    meshes: Mutex<HashMap<String, Arc<TriMesh>>>,
    costs: Mutex<HashMap<String, Arc<CostTable>>>,
    heat: Mutex<HashMap<String, Arc<HeatOperator>>>,
    cost_dir: Option<PathBuf>,
}

impl Lab {
    pub fn new() -> Self {
        Lab::default()
    }

    /// Keeps transport cost tables as files under `dir` across runs.
    pub fn with_cost_dir(dir: PathBuf) -> Self {
        Lab { cost_dir: Some(dir), ..Lab::default() }
    }

    pub fn mesh(&self, spec: &DomainSpec) -> Result<Arc<TriMesh>> {
        let key = serde_json::to_string(spec)?;
        let mut cache = self.meshes.lock().expect("mesh cache poisoned");
        if let Some(m) = cache.get(&key) {
            return Ok(m.clone());
        }
        let mesh = Arc::new(build_mesh(spec)?);
        cache.insert(key, mesh.clone());
        Ok(mesh)
    }

    pub fn cost(&self, mesh: &TriMesh) -> Result<Arc<CostTable>> {
        let mut cache = self.costs.lock().expect("cost cache poisoned");
        if let Some(c) = cache.get(mesh.checksum()) {
            return Ok(c.clone());
        }
        let cost = Arc::new(match &self.cost_dir {
            Some(dir) => CostTable::cached(mesh, dir)?,
            None => CostTable::from_mesh(mesh)?,
        });
        cache.insert(mesh.checksum().to_owned(), cost.clone());
        Ok(cost)
    }

    pub fn heat(&self, mesh: &Arc<TriMesh>) -> Arc<HeatOperator> {
        let mut cache = self.heat.lock().expect("operator cache poisoned");
        cache.entry(mesh.checksum().to_owned()).or_insert_with(|| Arc::new(HeatOperator::new(mesh.clone()))).clone()
    }
}

/// Runs one experiment. Verdict failures are part of the report; errors mean
/// invalid input or a numerical breakdown.
pub fn run(exp: Experiment, cfg: &ExperimentConfig, lab: &Lab) -> Result<Report> {
    cfg.validate(exp)?;
    let start = Instant::now();
    let mut report = Report::new(exp, cfg);
    match exp {
        Experiment::FisherConvex => experiments::fisher_convex(cfg, lab, &mut report)?,
        Experiment::FisherNonconvex => experiments::fisher_nonconvex(cfg, lab, &mut report)?,
        Experiment::UpperGradient => experiments::upper_gradient(cfg, lab, &mut report)?,
        Experiment::ExactChainRule => experiments::exact_chain_rule(cfg, lab, &mut report)?,
        Experiment::Edi => experiments::edi(cfg, lab, &mut report)?,
        Experiment::WassersteinContraction => experiments::wasserstein_contraction(cfg, lab, &mut report)?,
        Experiment::GradientEstimate => experiments::gradient_estimate(cfg, lab, &mut report)?,
        Experiment::PorousFisher => experiments::porous_fisher(cfg, lab, &mut report)?,
        Experiment::MetricSpeedFisher => experiments::metric_speed_fisher(cfg, lab, &mut report)?,
    }
    report.wall_time_s = start.elapsed().as_secs_f64();
    log::info!("{exp}: {} in {:.1} s", if report.passed() { "pass" } else { "FAIL" }, report.wall_time_s);
    Ok(report)
}

/// Runs several experiments on `jobs` worker threads, returning results in input order.
pub fn run_many(
    items: &[(Experiment, ExperimentConfig)],
    lab: &Lab,
    jobs: usize,
) -> Vec<(Experiment, Result<Report>)> {
    let jobs = jobs.clamp(1, items.len().max(1));
    let next = Mutex::new(0usize);
    let results: Mutex<Vec<Option<Result<Report>>>> = Mutex::new((0..items.len()).map(|_| None).collect());
    std::thread::scope(|scope| {
        for _ in 0..jobs {
            scope.spawn(|| loop {
                let i = {
                    let mut n = next.lock().unwrap();
                    let i = *n;
                    *n += 1;
                    i
                };
                let Some((exp, cfg)) = items.get(i) else { break };
                let r = run(*exp, cfg, lab);
                results.lock().unwrap()[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().unwrap();
    items.iter().zip(results).map(|((e, _), r)| (*e, r.expect("every job ran"))).collect()
}

/// Cross-check of the fitted rates of the gradient estimate and of the
/// distance expansion, which duality predicts to agree as `α_GE ≈ 2 α_WC`.
/// The difference is scaled by the larger of the two rates and the predicted
/// rate `4S/√π`, so that two near-zero rates count as agreeing.
/// Suffix of the tangent-probe fits that start the clock at the bump's own heat time.
pub const WIDTH_ADJUSTED: &str = "_width_adjusted";

/// The Kuwada metric recomputed with the width-adjusted distance rate. Informational only.
pub fn kuwada_width_adjusted(ge: &Report, wc: &Report) -> Option<f64> {
    let a_ge = ge.verdict("nonconvex_rate")?.measured;
    let a_wc = wc
        .fits
        .iter()
        .filter(|(k, _)| k.ends_with(WIDTH_ADJUSTED))
        .map(|(_, f)| f.alpha)
        .fold(None, |m: Option<f64>, a| Some(m.map_or(a, |m| m.max(a))))?;
    let s = ge.curvature?.S;
    let scale = a_ge.abs().max((2.0 * a_wc).abs()).max(4.0 * s / PI.sqrt());
    Some((a_ge - 2.0 * a_wc).abs() / scale)
}

pub fn kuwada_check(ge: &Report, wc: &Report, tol: f64) -> Option<Verdict> {
    let a_ge = ge.verdict("nonconvex_rate")?.measured;
    let a_wc = wc.verdict("nonconvex_distance_rate")?.measured;
    let s = ge.curvature?.S;
    let scale = a_ge.abs().max((2.0 * a_wc).abs()).max(4.0 * s / PI.sqrt());
    Some(Verdict::at_most("kuwada_rate_agreement", (a_ge - 2.0 * a_wc).abs() / scale, tol))
}
