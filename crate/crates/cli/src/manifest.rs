use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use sortflow::sim::digest_json;

use crate::RunConfig;

pub const MANIFEST_FILE: &str = "manifest.json";

/// Provenance record written beside every command's outputs.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// The parsed subcommand and its flags.
    pub invocation: String,
    pub config_digest: String,
    pub config: RunConfig,
    pub seed: u64,
    pub threads: Option<usize>,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub started_at: String,
    pub wall_clock_seconds: f64,
    /// Command-specific facts such as the early-stopping epoch.
    #[serde(default, skip_serializing_if = "Value::is_null")]
    pub details: Value,
}

impl RunManifest {
    pub fn load(dir: &Path) -> sortflow::Result<Self> {
        let text = std::fs::read_to_string(dir.join(MANIFEST_FILE))?;
        Ok(serde_json::from_str(&text)?)
    }
}

/// Collects a manifest while a command runs.
pub struct ManifestBuilder {
    manifest: RunManifest,
    start: Instant,
}

impl ManifestBuilder {
    pub fn new(command: &str, invocation: String, config: &RunConfig, seed: u64, threads: Option<usize>) -> Self {
        Self {
            manifest: RunManifest {
                command: command.into(),
                invocation,
                config_digest: digest_json(config),
                config: config.clone(),
                seed,
                threads,
                inputs: Vec::new(),
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").into(),
                started_at: chrono::Utc::now().to_rfc3339(),
                wall_clock_seconds: 0.0,
                details: Value::Null,
            },
            start: Instant::now(),
        }
    }

    pub fn input(&mut self, p: &Path) {
        self.manifest.inputs.push(p.to_path_buf());
    }

    pub fn output(&mut self, p: &Path) {
        self.manifest.outputs.push(p.to_path_buf());
    }

    pub fn details(&mut self, v: Value) {
        self.manifest.details = v;
    }

    pub fn write(mut self, dir: &Path) -> sortflow::Result<RunManifest> {
        self.manifest.wall_clock_seconds = self.start.elapsed().as_secs_f64();
        let text = serde_json::to_string_pretty(&self.manifest)?;
        std::fs::write(dir.join(MANIFEST_FILE), text + "\n")?;
        Ok(self.manifest)
    }
}
