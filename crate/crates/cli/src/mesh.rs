use std::path::{Path, PathBuf};

use clap::Args;
use fisherflow::mesh::{boundary_curvature, build_mesh, CurvatureBound};
use fisherflow::report::{to_json_pretty, write_atomic};
use fisherflow::{DomainSpec, Result};
use serde::Serialize;

use crate::manifest::{create_output_dir, RunManifest};
use crate::EXIT_PASS;

#[derive(Args)]
pub struct MeshArgs {
    /// Domain spec JSON, e.g. {"kind": "polar_star", "r0": 1, "a": 0.5, "k": 3, "h": 0.02}.
    #[arg(long)]
    pub spec: PathBuf,
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Angular samples for the curvature minimum.
    #[arg(long, default_value_t = 4096)]
    pub curvature_samples: usize,
}

#[derive(Serialize)]
struct CurvatureExport<'a> {
    mesh_checksum: &'a str,
    spec: &'a DomainSpec,
    samples: usize,
    #[serde(flatten)]
    bound: CurvatureBound,
}

pub fn run(args: &MeshArgs, seed: Option<u64>, out: &Path, manifest: &mut RunManifest) -> Result<(u8, bool)> {
    manifest.config = Some(args.spec.clone());
    manifest.seed = seed.unwrap_or(0);
    let spec = DomainSpec::from_file(&args.spec)?;
    let bound = boundary_curvature(&spec, args.curvature_samples)?;
    let mesh = build_mesh(&spec)?;
    create_output_dir(out)?;
    write_atomic(&out.join("mesh.json"), &to_json_pretty(&mesh.export())?)?;
    let curvature = CurvatureExport { mesh_checksum: mesh.checksum(), spec: &spec, samples: args.curvature_samples, bound };
    write_atomic(&out.join("curvature.json"), &to_json_pretty(&curvature)?)?;
    println!(
        "mesh {}: {} vertices, {} triangles, area {:.6}, M-matrix {}, S = {:.4}",
        mesh.checksum(),
        mesh.num_vertices(),
        mesh.num_triangles(),
        mesh.area_total(),
        mesh.is_m_matrix(),
        bound.S
    );
    Ok((EXIT_PASS, true))
}
