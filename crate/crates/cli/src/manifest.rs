use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use anyhow::{Context, Result};
use ontrac::store::sha256_hex;
use serde::Serialize;

/// Everything needed to rerun a subcommand: its arguments, seed and the
/// hashes of the files it read.
#[derive(Debug, Serialize)]
pub struct RunManifest {
    pub subcommand: String,
    pub args: Vec<String>,
    pub seed: Option<u64>,
    pub inputs: BTreeMap<String, String>,
    pub engine_version: String,
    pub wall_seconds: f64,
}

pub struct ManifestBuilder {
    manifest: RunManifest,
    started: Instant,
}

impl ManifestBuilder {
    pub fn new(subcommand: &str, argv: &[String]) -> Self {
        ManifestBuilder {
            manifest: RunManifest {
                subcommand: subcommand.to_string(),
                args: argv.to_vec(),
                seed: None,
                inputs: BTreeMap::new(),
                engine_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_seconds: 0.0,
            },
            started: Instant::now(),
        }
    }

    pub fn seed(&mut self, seed: u64) {
        self.manifest.seed = Some(seed);
    }

    pub fn input(&mut self, path: &Path, bytes: &[u8]) {
        self.manifest.inputs.insert(path.display().to_string(), sha256_hex(bytes));
    }

    /// Writes `<output>.run.json` next to `output`, or `run_manifest.json`
    /// inside it when `output` is a directory.
    pub fn write_beside(mut self, output: &Path) -> Result<()> {
        self.manifest.wall_seconds = self.started.elapsed().as_secs_f64();
        let path = if output.is_dir() {
            output.join("run_manifest.json")
        } else {
            let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
            name.push(".run.json");
            output.with_file_name(name)
        };
        let json = serde_json::to_string_pretty(&self.manifest)?;
        fs::write(&path, json + "\n").with_context(|| format!("writing {}", path.display()))
    }
}

pub fn read_input(builder: &mut ManifestBuilder, path: &PathBuf) -> Result<String> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    builder.input(path, text.as_bytes());
    Ok(text)
}
