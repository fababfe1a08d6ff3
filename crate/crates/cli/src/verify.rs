use std::path::{Path, PathBuf};

use clap::Args;
use fisherflow::report::{to_json_pretty, write_atomic};
use fisherflow::verify::{kuwada_check, kuwada_width_adjusted, run_many, Experiment, ExperimentConfig, Lab, Report, Verdict};
use fisherflow::{DomainSpec, Error, Result};
use serde::Serialize;
use serde_json::{Map, Value};

use crate::manifest::{create_output_dir, RunManifest};
use crate::{error_code, EXIT_PASS, EXIT_USAGE, EXIT_VERDICT};

#[derive(Args)]
pub struct VerifyArgs {
    /// Experiment name, or `all`.
    #[arg(long)]
    pub exp: Option<String>,
    /// List the experiments with the estimate each one checks, then exit.
    #[arg(long)]
    pub list: bool,
    /// Worker threads for `--exp all`.
    #[arg(long, default_value_t = 1)]
    pub jobs: usize,
    /// Domain spec JSON replacing the main domain of every selected experiment.
    #[arg(long)]
    pub spec: Option<PathBuf>,
    /// JSON overrides: top-level keys apply to every experiment, keys named
    /// after an experiment apply to that experiment only.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Directory where transport cost tables are cached between runs.
    #[arg(long)]
    pub cost_cache: Option<PathBuf>,
    /// Allowed relative mismatch between the gradient-estimate rate and twice the distance rate.
    #[arg(long, default_value_t = 0.3)]
    pub kuwada_tol: f64,
}

#[derive(Serialize)]
struct Entry<'a> {
    experiment: Experiment,
    pass: bool,
    mesh_checksum: Option<&'a str>,
    verdicts: &'a [Verdict],
    error: Option<String>,
}

#[derive(Serialize)]
struct Summary<'a> {
    seed: Option<u64>,
    pass: bool,
    experiments: Vec<Entry<'a>>,
    cross_checks: Vec<Verdict>,
    observations: Vec<String>,
}

pub fn list() {
    for e in Experiment::ALL {
        println!("{:<24} {}", e.name(), e.claim());
    }
}

fn selection(name: &str) -> Result<Vec<Experiment>> {
    if name == "all" {
        Ok(Experiment::ALL.to_vec())
    } else {
        Ok(vec![name.parse()?])
    }
}

/// Splits a config document into the global overlay and per-experiment overlays.
fn split_config(doc: Value) -> Result<(Value, Vec<(Experiment, Value)>)> {
    let Value::Object(map) = doc else {
        return Err(Error::Validation("configuration file must hold a JSON object".into()));
    };
    let mut global = Map::new();
    let mut specific = Vec::new();
    for (k, v) in map {
        match k.parse::<Experiment>() {
            Ok(e) => specific.push((e, v)),
            Err(_) => {
                global.insert(k, v);
            }
        }
    }
    Ok((Value::Object(global), specific))
}

/// Defaults, then the config file, then command-line flags.
pub fn configs(
    exps: &[Experiment],
    config: Option<&Path>,
    spec: Option<&Path>,
    seed: Option<u64>,
) -> Result<Vec<(Experiment, ExperimentConfig)>> {
    let (global, specific) = match config {
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .map_err(|e| Error::Validation(format!("cannot read {}: {e}", path.display())))?;
            let doc: Value = serde_json::from_str(&text)
                .map_err(|e| Error::Validation(format!("malformed configuration {}: {e}", path.display())))?;
            split_config(doc)?
        }
        None => (Value::Object(Map::new()), Vec::new()),
    };
    let domain = spec.map(DomainSpec::from_file).transpose()?;
    let mut out = Vec::with_capacity(exps.len());
    for &exp in exps {
        let mut cfg = ExperimentConfig::default_for(exp).overlay(&global)?;
        for (e, patch) in &specific {
            if *e == exp {
                cfg = cfg.overlay(patch)?;
            }
        }
        if let Some(d) = &domain {
            cfg.domain = d.clone();
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        cfg.validate(exp)?;
        out.push((exp, cfg));
    }
    Ok(out)
}

fn print_table(results: &[(Experiment, Result<Report>)], cross: &[Verdict]) {
    println!("{:<6} {:<24} {:<44} {:>14} {:>14}", "status", "experiment", "verdict", "measured", "threshold");
    let row = |exp: &str, v: &Verdict| {
        let status = if v.pass { "pass" } else { "FAIL" };
        println!("{status:<6} {exp:<24} {:<44} {:>14.6e} {:>14.6e}", v.name, v.measured, v.threshold);
    };
    for (exp, r) in results {
        match r {
            Ok(report) => report.verdicts.iter().for_each(|v| row(exp.name(), v)),
            Err(e) => println!("{:<6} {:<24} {e}", "ERROR", exp.name()),
        }
    }
    for v in cross {
        row("cross_check", v);
    }
}

pub fn run(args: &VerifyArgs, seed: Option<u64>, out: &Path, manifest: &mut RunManifest) -> Result<(u8, bool)> {
    if args.list {
        list();
        return Ok((EXIT_PASS, false));
    }
    let Some(name) = args.exp.as_deref() else {
        eprintln!("error: verify needs --exp NAME|all or --list");
        return Ok((EXIT_USAGE, false));
    };
    if !(args.kuwada_tol > 0.0) {
        return Err(Error::Validation("--kuwada-tol must be positive".into()));
    }
    let items = configs(&selection(name)?, args.config.as_deref(), args.spec.as_deref(), seed)?;
    manifest.config = args.config.clone();
    manifest.seed = items.first().map_or(0, |(_, c)| c.seed);
    create_output_dir(out)?;
    let lab = match &args.cost_cache {
        Some(dir) => Lab::with_cost_dir(dir.clone()),
        None => Lab::new(),
    };
    let results = run_many(&items, &lab, args.jobs.max(1));
    let mut code = EXIT_PASS;
    for (_, r) in &results {
        match r {
            Ok(report) => {
                report.write(out)?;
                if !report.passed() {
                    code = code.max(EXIT_VERDICT);
                }
            }
            Err(e) => code = code.max(error_code(e)),
        }
    }
    let find = |exp| results.iter().find(|(e, _)| *e == exp).and_then(|(_, r)| r.as_ref().ok());
    let mut cross = Vec::new();
    let mut observations = Vec::new();
    if let (Some(ge), Some(wc)) = (find(Experiment::GradientEstimate), find(Experiment::WassersteinContraction)) {
        if let Some(v) = kuwada_check(ge, wc, args.kuwada_tol) {
            if !v.pass {
                code = code.max(EXIT_VERDICT);
            }
            cross.push(v);
        }
        if let Some(m) = kuwada_width_adjusted(ge, wc) {
            observations.push(format!("kuwada_rate_agreement with width-adjusted distance rates: {m:.4}"));
        }
    }
    let summary = Summary {
        seed,
        pass: code == EXIT_PASS,
        experiments: results
            .iter()
            .map(|(exp, r)| match r {
                Ok(report) => Entry {
                    experiment: *exp,
                    pass: report.passed(),
                    mesh_checksum: Some(&report.mesh_checksum),
                    verdicts: &report.verdicts,
                    error: None,
                },
                Err(e) => Entry { experiment: *exp, pass: false, mesh_checksum: None, verdicts: &[], error: Some(e.to_string()) },
            })
            .collect(),
        cross_checks: cross.clone(),
        observations,
    };
    write_atomic(&out.join("summary.json"), &to_json_pretty(&summary)?)?;
    print_table(&results, &cross);
    summary.observations.iter().for_each(|o| println!("note: {o}"));
    Ok((code, true))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn config_split_routes_experiment_keys() {
        let doc = serde_json::json!({"seed": 3, "edi": {"dt": 2e-4}});
        let (global, specific) = split_config(doc).unwrap();
        assert_eq!(global, serde_json::json!({"seed": 3}));
        assert_eq!(specific.len(), 1);
        assert_eq!(specific[0].0, Experiment::Edi);
    }

    #[test]
    fn flags_override_config() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"seed": 3, "edi": {"seed": 4}}"#).unwrap();
        let items = configs(&[Experiment::Edi, Experiment::PorousFisher], Some(&path), None, None).unwrap();
        assert_eq!(items[0].1.seed, 4);
        assert_eq!(items[1].1.seed, 3);
        let items = configs(&[Experiment::Edi], Some(&path), None, Some(7)).unwrap();
        assert_eq!(items[0].1.seed, 7);
    }

    #[test]
    fn unknown_names_are_usage_errors() {
        assert!(selection("nosuch").unwrap_err().is_usage());
        assert_eq!(selection("all").unwrap().len(), Experiment::ALL.len());
    }
}
