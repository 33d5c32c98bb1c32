use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use comfort::datapipe::blob::write_atomic;

/// Record written next to every artifact a command produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Full argument vector, enough to rerun the command.
    pub argv: Vec<String>,
    pub seed: u64,
    pub inputs: Vec<PathBuf>,
    pub outputs: Vec<PathBuf>,
    pub tool_version: String,
    pub wall_clock_seconds: f64,
    /// Resolved configuration after defaults and overrides.
    pub config: toml::Table,
}

pub struct RunRecorder {
    started: Instant,
    manifest: RunManifest,
}

impl RunRecorder {
    pub fn new(command: &str, seed: u64) -> Self {
        RunRecorder {
            started: Instant::now(),
            manifest: RunManifest {
                command: command.to_string(),
                argv: std::env::args().collect(),
                seed,
                inputs: Vec::new(),
                outputs: Vec::new(),
                tool_version: env!("CARGO_PKG_VERSION").to_string(),
                wall_clock_seconds: 0.0,
                config: toml::Table::new(),
            },
        }
    }

    pub fn input(&mut self, p: &Path) -> &mut Self {
        self.manifest.inputs.push(p.to_path_buf());
        self
    }

    pub fn output(&mut self, p: &Path) -> &mut Self {
        self.manifest.outputs.push(p.to_path_buf());
        self
    }

    pub fn config<T: Serialize>(&mut self, key: &str, value: &T) -> &mut Self {
        if let Ok(v) = toml::Value::try_from(value) {
            self.manifest.config.insert(key.to_string(), v);
        }
        self
    }

    /// Writes the manifest to `path`.
    pub fn write(mut self, path: &Path) -> comfort::Result<RunManifest> {
        self.manifest.wall_clock_seconds = self.started.elapsed().as_secs_f64();
        let text = toml::to_string(&self.manifest)
            .map_err(|e| comfort::Error::Validation(format!("run manifest: {e}")))?;
        write_atomic(path, text.as_bytes())?;
        Ok(self.manifest)
    }
}

/// `<file>.run.toml` for file outputs, `<dir>/run.toml` for directories.
pub fn manifest_path(output: &Path, is_dir: bool) -> PathBuf {
    if is_dir {
        output.join("run.toml")
    } else {
        let mut name = output.file_name().map(|n| n.to_os_string()).unwrap_or_default();
        name.push(".run.toml");
        output.with_file_name(name)
    }
}
