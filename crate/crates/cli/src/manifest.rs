use std::path::{Path, PathBuf};
use std::time::SystemTime;

use serde::Serialize;

/// Record of one invocation, written as `run.json` next to its artifacts.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub command: Vec<String>,
    pub config: Option<PathBuf>,
    pub output_dir: PathBuf,
    pub seed: u64,
    pub version: &'static str,
    pub started: String,
    pub finished: Option<String>,
    pub exit_code: Option<u8>,
}

fn now() -> String {
    humantime::format_rfc3339_millis(SystemTime::now()).to_string()
}

impl RunManifest {
    pub fn begin(out: &Path) -> Self {
        RunManifest {
            command: std::env::args().collect(),
            config: None,
            output_dir: out.to_path_buf(),
            seed: 0,
            version: env!("CARGO_PKG_VERSION"),
            started: now(),
            finished: None,
            exit_code: None,
        }
    }

    pub fn finish(&mut self, code: u8) {
        self.finished = Some(now());
        self.exit_code = Some(code);
    }

    pub fn write(&self, out: &Path) -> fisherflow::Result<()> {
        fisherflow::report::write_atomic(&out.join("run.json"), &fisherflow::report::to_json_pretty(self)?)
    }
}

/// Creates `dir` before anything is written into it.
pub fn create_output_dir(dir: &Path) -> fisherflow::Result<()> {
    std::fs::create_dir_all(dir)
        .map_err(|e| fisherflow::Error::Validation(format!("cannot create output directory {}: {e}", dir.display())))
}
