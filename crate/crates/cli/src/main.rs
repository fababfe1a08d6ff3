//! Command-line driver: mesh export, heat and JKO flows, and the verification experiments.

mod flow;
mod manifest;
mod mesh;
mod verify;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use fisherflow::Error;

use crate::manifest::RunManifest;

/// Exit codes of every subcommand.
pub const EXIT_PASS: u8 = 0;
pub const EXIT_VERDICT: u8 = 1;
pub const EXIT_USAGE: u8 = 2;
pub const EXIT_NUMERIC: u8 = 3;

#[derive(Parser)]
#[command(name = "fisherflow", version, about = "Heat flow, entropy, Fisher information and transport on planar domains")]
struct Cli {
    /// Seed for every randomized input; recorded in each run manifest.
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Build a mesh from a domain spec and export it with its curvature bound.
    Mesh(mesh::MeshArgs),
    /// Run verification experiments and write their reports.
    Verify(verify::VerifyArgs),
    /// Run a heat or JKO evolution and export the curve.
    Flow(flow::FlowArgs),
}

/// Output directory: the flag, else `$FISHERFLOW_OUT/<command>`, else `runs/<command>`.
pub fn output_dir(flag: Option<PathBuf>, command: &str) -> PathBuf {
    flag.unwrap_or_else(|| {
        let root = std::env::var_os("FISHERFLOW_OUT").map_or_else(|| PathBuf::from("runs"), PathBuf::from);
        root.join(command)
    })
}

/// Exit code for a library error.
pub fn error_code(e: &Error) -> u8 {
    if e.is_usage() {
        EXIT_USAGE
    } else {
        EXIT_NUMERIC
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let seed = cli.seed;
    let (name, out, config, outcome) = match cli.command {
        Command::Mesh(args) => {
            let out = output_dir(args.out.clone(), "mesh");
            ("mesh", out.clone(), Some(args.spec.clone()), start(&out, |m| mesh::run(&args, seed, &out, m)))
        }
        Command::Verify(args) => {
            let out = output_dir(args.out.clone(), "verify");
            let config = args.config.clone();
            ("verify", out.clone(), config, start(&out, |m| verify::run(&args, seed, &out, m)))
        }
        Command::Flow(args) => {
            let out = output_dir(args.out.clone(), "flow");
            ("flow", out.clone(), args.spec.clone(), start(&out, |m| flow::run(&args, seed, &out, m)))
        }
    };
    let code = match outcome {
        Ok((code, mut manifest)) => {
            if let Some(m) = manifest.as_mut() {
                m.finish(code);
                if let Err(e) = m.write(&out) {
                    eprintln!("error: cannot write run manifest: {e}");
                    return ExitCode::from(error_code(&e));
                }
            }
            code
        }
        Err(e) => {
            eprintln!("error: {name}: {e}");
            error_code(&e)
        }
    };
    log::debug!("{name} finished with exit code {code} (config {config:?})");
    ExitCode::from(code)
}

/// Creates the output directory and runs a command with a fresh manifest.
/// Commands that write nothing return no manifest.
fn start(
    out: &std::path::Path,
    body: impl FnOnce(&mut RunManifest) -> fisherflow::Result<(u8, bool)>,
) -> fisherflow::Result<(u8, Option<RunManifest>)> {
    let mut manifest = RunManifest::begin(out);
    let (code, wrote) = body(&mut manifest)?;
    Ok((code, wrote.then_some(manifest)))
}
