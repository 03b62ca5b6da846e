use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use dualcse::fingerprint::file_sha256;

use crate::failure::{CliResult, Failure};

pub const MANIFEST_FILE: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InputFingerprint {
    pub path: PathBuf,
    pub sha256: String,
}

/// Record of one command invocation, sufficient to repeat it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    /// Arguments after the program name, as given.
    pub argv: Vec<String>,
    /// Working directory the arguments are relative to.
    pub cwd: PathBuf,
    /// Effective configuration after defaults, config file and flags.
    pub config: serde_json::Value,
    pub seeds: BTreeMap<String, u64>,
    pub inputs: Vec<InputFingerprint>,
    pub outputs: Vec<PathBuf>,
    pub toolkit_version: String,
}

impl RunManifest {
    pub fn new(command: &str, argv: &[String]) -> Self {
        Self {
            command: command.to_string(),
            argv: argv.to_vec(),
            cwd: std::env::current_dir().unwrap_or_default(),
            config: serde_json::Value::Null,
            seeds: BTreeMap::new(),
            inputs: Vec::new(),
            outputs: Vec::new(),
            toolkit_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn input(&mut self, path: &Path) -> CliResult {
        let sha256 = file_sha256(path)?;
        self.inputs.push(InputFingerprint {
            path: path.to_path_buf(),
            sha256,
        });
        Ok(())
    }

    /// Fingerprints every file directly inside `dir`, in name order.
    pub fn input_dir(&mut self, dir: &Path) -> CliResult {
        let mut entries: Vec<PathBuf> = std::fs::read_dir(dir)
            .map_err(|e| Failure::data(format!("{}: {e}", dir.display())))?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.is_file())
            .collect();
        entries.sort();
        for p in entries {
            self.input(&p)?;
        }
        Ok(())
    }

    pub fn output(&mut self, path: &Path) {
        self.outputs.push(path.to_path_buf());
    }

    pub fn write(&mut self, out_dir: &Path) -> CliResult<PathBuf> {
        let path = out_dir.join(MANIFEST_FILE);
        self.output(&path);
        crate::write_json(&path, self)?;
        Ok(path)
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Failure::data(format!("cannot read manifest {}: {e}", path.display())))?;
        serde_json::from_str(&text).map_err(|e| Failure::data(format!("invalid manifest {}: {e}", path.display())))
    }

    /// Fails if any recorded input has changed since the run.
    pub fn verify_inputs(&self) -> CliResult {
        for input in &self.inputs {
            let path = if input.path.is_absolute() {
                input.path.clone()
            } else {
                self.cwd.join(&input.path)
            };
            let now = file_sha256(&path)?;
            if now != input.sha256 {
                return Err(Failure::data(format!(
                    "input {} changed since the recorded run",
                    input.path.display()
                )));
            }
        }
        Ok(())
    }
}
