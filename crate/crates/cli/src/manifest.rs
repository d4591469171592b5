use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soundcot::prompts::PromptPack;
use soundcot::util::{sha256_hex, write_atomic};

use crate::config::RunConfig;
use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PackInfo {
    pub version: String,
    pub hash: String,
}

/// Written next to every command's outputs. No timestamps, so two runs
/// with the same inputs and config produce the same manifest.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RunManifest {
    pub command: String,
    pub tool_version: String,
    pub config_hash: String,
    pub prompt_pack: PackInfo,
    pub seeds: BTreeMap<String, u64>,
    /// File name to sha256.
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
}

fn file_key(path: &Path) -> String {
    path.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_else(|| path.display().to_string())
}

fn digest(path: &Path) -> Result<String, CliError> {
    std::fs::read(path)
        .map(|b| sha256_hex(&b))
        .map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

impl RunManifest {
    pub fn new(command: &str, cfg: &RunConfig, pack: &PromptPack) -> Self {
        let seeds = [
            ("bench", cfg.seed),
            ("pipeline", cfg.pipeline.seed),
            ("blend", cfg.blend.seed),
        ]
        .into_iter()
        .map(|(k, v)| (k.to_string(), v))
        .collect();
        Self {
            command: command.to_string(),
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
            config_hash: cfg.hash(),
            prompt_pack: PackInfo {
                version: pack.version().to_string(),
                hash: pack.hash(),
            },
            seeds,
            inputs: BTreeMap::new(),
            outputs: BTreeMap::new(),
        }
    }

    pub fn input(mut self, path: &Path) -> Result<Self, CliError> {
        self.inputs.insert(file_key(path), digest(path)?);
        Ok(self)
    }

    pub fn output(mut self, path: &Path) -> Result<Self, CliError> {
        self.outputs.insert(file_key(path), digest(path)?);
        Ok(self)
    }

    pub fn write(&self, path: &Path) -> Result<(), CliError> {
        let text = serde_json::to_string_pretty(self).expect("manifest serializes") + "\n";
        write_atomic(path, text.as_bytes()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
    }
}

/// `dir/x.jsonl` → `dir/x.run.json`.
pub fn run_manifest_path(output: &Path) -> PathBuf {
    let stem = output.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    output.with_file_name(format!("{stem}.run.json"))
}
