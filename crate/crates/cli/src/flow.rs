use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, ValueEnum};
use fisherflow::jko::{jko_curve, JkoConfig, StepReport};
use fisherflow::mesh::build_mesh;
use fisherflow::report::{format_csv_float, to_json_pretty, write_atomic};
use fisherflow::transport::CostTable;
use fisherflow::verify::Datum;
use fisherflow::{Curve, DomainSpec, Error, HeatOperator, Result};
use serde::Serialize;

use crate::manifest::{create_output_dir, RunManifest};
use crate::EXIT_PASS;

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowKind {
    Heat,
    Jko,
}

#[derive(Args)]
pub struct FlowArgs {
    #[arg(long, value_enum)]
    pub flow: FlowKind,
    /// Final time.
    #[arg(long = "T")]
    pub t_final: f64,
    /// Heat time step (heat only, default 1e-4).
    #[arg(long)]
    pub dt: Option<f64>,
    /// JKO step (jko only, default 2.5e-3).
    #[arg(long)]
    pub tau: Option<f64>,
    /// Entropic regularization of the JKO transport term (jko only, default tau).
    #[arg(long)]
    pub eps: Option<f64>,
    /// Initial datum as JSON, a JSON file, or `eigen` / `uniform`.
    #[arg(long, default_value = "eigen")]
    pub datum: String,
    /// Domain spec JSON; defaults to the unit square with h = 0.02 (heat) or 0.025 (jko).
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// Spacing of recorded heat samples (heat only, default T/10).
    #[arg(long)]
    pub every: Option<f64>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct FlowSummary<'a> {
    flow: FlowKind,
    mesh_checksum: &'a str,
    spec: &'a DomainSpec,
    datum: &'a Datum,
    seed: u64,
    t_final: f64,
    dt: Option<f64>,
    tau: Option<f64>,
    epsilon: Option<f64>,
    times: &'a [f64],
    entropy: Vec<f64>,
    fisher: Vec<f64>,
    steps: &'a [StepReport],
}

pub fn parse_datum(text: &str) -> Result<Datum> {
    let json = match text {
        "eigen" => return Ok(Datum::Eigen { p: 1, q: 1, amplitude: 0.5 }),
        "uniform" => return Ok(Datum::Uniform),
        t if t.trim_start().starts_with('{') => t.to_owned(),
        path => std::fs::read_to_string(path)
            .map_err(|e| Error::Validation(format!("--datum is neither JSON, a known name, nor a readable file: {e}")))?,
    };
    serde_json::from_str(&json).map_err(|e| Error::Validation(format!("malformed datum: {e}")))
}

fn check_flags(args: &FlowArgs) -> Result<()> {
    let clash = |flag: &str| Err(Error::Validation(format!("{flag} does not apply to --flow {:?}", args.flow).to_lowercase()));
    match args.flow {
        FlowKind::Heat if args.tau.is_some() => clash("--tau"),
        FlowKind::Heat if args.eps.is_some() => clash("--eps"),
        FlowKind::Jko if args.dt.is_some() => clash("--dt"),
        FlowKind::Jko if args.every.is_some() => clash("--every"),
        _ if !(args.t_final.is_finite() && args.t_final > 0.0) => {
            Err(Error::Validation(format!("--T must be positive, got {}", args.t_final)))
        }
        _ => Ok(()),
    }
}

fn heat_times(t_final: f64, every: f64) -> Result<Vec<f64>> {
    if !(every.is_finite() && every > 0.0 && every <= t_final) {
        return Err(Error::Validation(format!("--every must lie in (0, T], got {every}")));
    }
    let n = (t_final / every * (1.0 + 1e-12)).floor() as usize;
    let mut times: Vec<f64> = (0..=n).map(|k| k as f64 * every).collect();
    if t_final - times[n] > 1e-12 * t_final {
        times.push(t_final);
    }
    Ok(times)
}

fn write_csv(path: &Path, curve: &Curve, steps: &[StepReport]) -> Result<()> {
    let mut out = String::from("mesh_checksum,t,entropy,fisher,energy_gap\n");
    let (h, fi) = (curve.entropies(), curve.fishers());
    for (i, t) in curve.times().iter().enumerate() {
        let gap = if i == 0 { f64::NAN } else { steps.get(i - 1).map_or(f64::NAN, |s| s.energy_gap) };
        out.push_str(&format!(
            "{},{},{},{},{}\n",
            curve.mesh().checksum(),
            format_csv_float(*t),
            format_csv_float(h[i]),
            format_csv_float(fi[i]),
            format_csv_float(gap)
        ));
    }
    write_atomic(path, &out)
}

pub fn run(args: &FlowArgs, seed: Option<u64>, out: &Path, manifest: &mut RunManifest) -> Result<(u8, bool)> {
    check_flags(args)?;
    let seed = seed.unwrap_or(0);
    manifest.seed = seed;
    manifest.config = args.spec.clone();
    let datum = parse_datum(&args.datum)?;
    let spec = match &args.spec {
        Some(p) => DomainSpec::from_file(p)?,
        None => DomainSpec::unit_square(if args.flow == FlowKind::Heat { 0.02 } else { 0.025 }),
    };
    let (dt, tau, eps) = match args.flow {
        FlowKind::Heat => (Some(args.dt.unwrap_or(1e-4)), None, None),
        FlowKind::Jko => {
            let tau = args.tau.unwrap_or(2.5e-3);
            (None, Some(tau), Some(args.eps.unwrap_or(tau)))
        }
    };
    if let (Some(tau), Some(eps)) = (tau, eps) {
        JkoConfig::new(tau, eps).validate()?;
        let ratio = args.t_final / tau;
        if (ratio - ratio.round()).abs() > 1e-9 * ratio.max(1.0) {
            return Err(Error::Validation(format!("--T = {} is not a multiple of --tau = {tau}", args.t_final)));
        }
    }
    let times = match dt {
        Some(_) => heat_times(args.t_final, args.every.unwrap_or(args.t_final / 10.0))?,
        None => Vec::new(),
    };
    let mesh = Arc::new(build_mesh(&spec)?);
    let rho0 = datum.density(&mesh, seed)?;
    create_output_dir(out)?;
    let (curve, steps) = match (dt, tau, eps) {
        (Some(dt), _, _) => (HeatOperator::new(mesh.clone()).evolve(&rho0, args.t_final, dt, &times)?, Vec::new()),
        (None, Some(tau), Some(eps)) => {
            let cost = CostTable::from_mesh(&mesh)?;
            let run = jko_curve(&rho0, args.t_final, &cost, &JkoConfig::new(tau, eps))?;
            (run.curve, run.steps)
        }
        _ => unreachable!("flow parameters are set for every kind"),
    };
    write_atomic(&out.join("mesh.json"), &to_json_pretty(&mesh.export())?)?;
    curve.write_dir(&out.join("curve"))?;
    write_csv(&out.join("flow.csv"), &curve, &steps)?;
    let summary = FlowSummary {
        flow: args.flow,
        mesh_checksum: mesh.checksum(),
        spec: &spec,
        datum: &datum,
        seed,
        t_final: args.t_final,
        dt,
        tau,
        epsilon: eps,
        times: curve.times(),
        entropy: curve.entropies(),
        fisher: curve.fishers(),
        steps: &steps,
    };
    write_atomic(&out.join("flow.json"), &to_json_pretty(&summary)?)?;
    println!(
        "{} flow on mesh {}: {} samples to T = {}, entropy {:.6e} -> {:.6e}",
        if args.flow == FlowKind::Heat { "heat" } else { "jko" },
        mesh.checksum(),
        curve.len(),
        args.t_final,
        summary.entropy[0],
        summary.entropy[summary.entropy.len() - 1]
    );
    Ok((EXIT_PASS, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn datum_shorthands_and_json() {
        assert_eq!(parse_datum("uniform").unwrap(), Datum::Uniform);
        let d = parse_datum(r#"{"family": "eigen", "p": 2, "q": 0, "amplitude": 0.3}"#).unwrap();
        assert_eq!(d, Datum::Eigen { p: 2, q: 0, amplitude: 0.3 });
        assert!(parse_datum("{\"family\": \"nosuch\"}").unwrap_err().is_usage());
    }

    #[test]
    fn heat_sample_grid() {
        let t = heat_times(0.05, 0.01).unwrap();
        assert_eq!(t.len(), 6);
        assert!((t[5] - 0.05).abs() < 1e-15);
        assert_eq!(heat_times(0.05, 0.02).unwrap().len(), 4);
        assert!(heat_times(0.05, 0.0).is_err());
    }
}
