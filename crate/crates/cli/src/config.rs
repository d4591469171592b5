//! Run configuration: one TOML file plus `--set key=value` overrides.
//!
//! ```toml
//! seed = 0
//! workers = 4
//! prompt_pack = "prompts/v1"      # built-in pack when absent
//! call_budget = 100000            # backend calls for the whole run
//!
//! [llm]
//! provider = "scripted"
//! model = "fixture-llm"
//! script = "llm.script.jsonl"
//!
//! [pipeline]
//! t_min = 3
//! round_cap = 10
//!
//! [paths]
//! cache_dir = "cache"
//! ```
//!
//! Relative paths resolve against the config file's directory.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use soundcot::dataset::BlendConfig;
use soundcot::gateway::{BackendConfig, BackendSlot, ModelGateway, ResponseCache, RunLog};
use soundcot::pipelines::PipelineConfig;
use soundcot::prompts::PromptPack;
use soundcot::util::sha256_hex;

use crate::error::CliError;

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    /// Response cache directory; in-memory when absent.
    pub cache_dir: Option<PathBuf>,
    /// Append-only JSONL call log.
    pub run_log: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub llm: Option<BackendConfig>,
    pub alm: Option<BackendConfig>,
    pub prompt_pack: Option<PathBuf>,
    /// Benchmark construction seed.
    pub seed: u64,
    pub workers: usize,
    pub call_budget: Option<u64>,
    pub pipeline: PipelineConfig,
    pub blend: BlendConfig,
    pub paths: Paths,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            llm: None,
            alm: None,
            prompt_pack: None,
            seed: 0,
            workers: 4,
            call_budget: None,
            pipeline: PipelineConfig::default(),
            blend: BlendConfig::default(),
            paths: Paths::default(),
        }
    }
}

/// Which backends a command is going to call.
#[derive(Debug, Clone, Copy, Default)]
pub struct Needs {
    pub llm: bool,
    pub alm: bool,
}

/// Parses the right-hand side of `--set` as a TOML value, falling back to
/// a bare string.
fn override_value(raw: &str) -> toml::Value {
    toml::from_str::<toml::Table>(&format!("v = {raw}"))
        .ok()
        .and_then(|mut t| t.remove("v"))
        .unwrap_or_else(|| toml::Value::String(raw.to_string()))
}

pub fn apply_override(table: &mut toml::Table, assignment: &str) -> Result<(), CliError> {
    let (key, raw) = assignment
        .split_once('=')
        .ok_or_else(|| CliError::usage(format!("--set expects key=value, got {assignment:?}")))?;
    let parts: Vec<&str> = key.trim().split('.').collect();
    if parts.iter().any(|p| p.is_empty()) {
        return Err(CliError::usage(format!("--set: bad key {key:?}")));
    }
    let (last, parents) = parts.split_last().expect("non-empty split");
    let mut cur = table;
    for p in parents {
        let entry = cur
            .entry(p.to_string())
            .or_insert_with(|| toml::Value::Table(toml::Table::new()));
        cur = entry
            .as_table_mut()
            .ok_or_else(|| CliError::usage(format!("--set {key}: {p} is not a table")))?;
    }
    cur.insert(last.to_string(), override_value(raw.trim()));
    Ok(())
}

fn rebase(base: &Path, p: &mut Option<PathBuf>) {
    if let Some(path) = p {
        if path.is_relative() {
            *path = base.join(&*path);
        }
    }
}

impl RunConfig {
    /// Reads the config (defaults when `path` is `None`) and applies
    /// overrides in order.
    pub fn load(path: Option<&Path>, overrides: &[String]) -> Result<Self, CliError> {
        let mut table = match path {
            Some(p) => {
                let text =
                    std::fs::read_to_string(p).map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?;
                toml::from_str::<toml::Table>(&text)
                    .map_err(|e| CliError::usage(format!("config {}: {e}", p.display())))?
            }
            None => toml::Table::new(),
        };
        for o in overrides {
            apply_override(&mut table, o)?;
        }
        let mut cfg: RunConfig = toml::Value::Table(table)
            .try_into()
            .map_err(|e: toml::de::Error| CliError::usage(format!("config: {}", e.message())))?;
        if let Some(dir) = path.and_then(Path::parent) {
            cfg.rebase(dir);
        }
        Ok(cfg)
    }

    fn rebase(&mut self, dir: &Path) {
        for b in [&mut self.llm, &mut self.alm].into_iter().flatten() {
            rebase(dir, &mut b.script);
        }
        rebase(dir, &mut self.prompt_pack);
        rebase(dir, &mut self.paths.cache_dir);
        rebase(dir, &mut self.paths.run_log);
    }

    /// sha256 of the resolved config.
    pub fn hash(&self) -> String {
        sha256_hex(serde_json::to_string(self).expect("config serializes").as_bytes())
    }

    /// Everything checkable without calling a model. Returns the prompt pack.
    pub fn validate(&self, needs: Needs) -> Result<PromptPack, CliError> {
        if self.workers == 0 {
            return Err(CliError::usage("workers must be at least 1"));
        }
        if self.call_budget == Some(0) {
            return Err(CliError::usage("call_budget must be positive"));
        }
        self.pipeline
            .validate()
            .map_err(|e| CliError::usage(format!("pipeline: {e}")))?;
        self.blend.validate().map_err(|e| CliError::usage(e.to_string()))?;
        for (name, needed, backend) in [("llm", needs.llm, &self.llm), ("alm", needs.alm, &self.alm)] {
            match backend {
                Some(b) => b.validate().map_err(|e| CliError::usage(format!("[{name}] {e}")))?,
                None if needed => return Err(CliError::usage(format!("this command needs an [{name}] backend"))),
                None => {}
            }
        }
        self.prompts()
    }

    pub fn prompts(&self) -> Result<PromptPack, CliError> {
        match &self.prompt_pack {
            Some(dir) => PromptPack::load(dir).map_err(|e| CliError::usage(e.to_string())),
            None => Ok(PromptPack::builtin()),
        }
    }

    pub fn gateway(&self) -> Result<ModelGateway, CliError> {
        let mut b = ModelGateway::builder().budget(self.call_budget);
        if let Some(c) = &self.llm {
            b = b.llm(BackendSlot::from_config(c).map_err(|e| CliError::usage(format!("[llm] {e}")))?);
        }
        if let Some(c) = &self.alm {
            b = b.alm(BackendSlot::from_config(c).map_err(|e| CliError::usage(format!("[alm] {e}")))?);
        }
        let cache = match &self.paths.cache_dir {
            Some(dir) => ResponseCache::on_disk(dir).map_err(|e| CliError::data(format!("{}: {e}", dir.display())))?,
            None => ResponseCache::in_memory(),
        };
        let log = match &self.paths.run_log {
            Some(p) => RunLog::append_to(p).map_err(|e| CliError::data(format!("{}: {e}", p.display())))?,
            None => RunLog::in_memory(),
        };
        Ok(b.cache(cache).log(log).build())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn overrides_reach_nested_keys() {
        let cfg = RunConfig::load(
            None,
            &[
                "pipeline.t_min=5".into(),
                "workers=2".into(),
                "blend.sft_keep_fraction=0.25".into(),
            ],
        )
        .unwrap();
        assert_eq!(cfg.pipeline.t_min, 5);
        assert_eq!(cfg.workers, 2);
        assert_eq!(cfg.blend.sft_keep_fraction, 0.25);
        assert_ne!(cfg.hash(), RunConfig::default().hash());
    }

    #[test]
    fn bad_values_are_usage_errors() {
        assert!(RunConfig::load(None, &["workers=many".into()]).is_err());
        assert!(RunConfig::load(None, &["nonsense=1".into()]).is_err());
        assert!(RunConfig::load(None, &["workers".into()]).is_err());
        let cfg = RunConfig::load(None, &["pipeline.round_cap=1".into()]).unwrap();
        assert!(cfg.validate(Needs::default()).is_err());
        let cfg = RunConfig::default();
        assert!(cfg.validate(Needs { llm: true, alm: false }).is_err());
    }
}
