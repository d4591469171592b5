//! Dataset bookkeeping: exact-key dedup, SFT/CoT blending, acceptance
//! reports and `<name>.manifest.json` sidecars.
//!
//! Records are JSON objects kept verbatim (field order included); only the
//! handful of keys the operations need are interpreted.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::{Map, Value};
use thiserror::Error;

use crate::pipelines::{GenOutcome, PipelineId, RunStats};
use crate::util::{jsonl_lines, seeded_rng, write_atomic};

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("{which} record {index} has no item_id to trace its provenance")]
    MissingProvenance { which: &'static str, index: usize },
    #[error("invalid blend config: {0}")]
    Config(String),
    #[error("manifest {path}: {reason}")]
    Manifest { path: PathBuf, reason: String },
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> DatasetError + '_ {
    move |source| DatasetError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// One JSONL record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Record(pub Map<String, Value>);

impl Record {
    fn str_field(&self, key: &str) -> Option<&str> {
        self.0.get(key).and_then(Value::as_str)
    }

    pub fn item_id(&self) -> Option<&str> {
        self.str_field("item_id").filter(|s| !s.trim().is_empty())
    }

    /// Pipeline id for generated records; `None` for plain SFT rows.
    pub fn pipeline(&self) -> Option<&str> {
        self.str_field("pipeline")
    }

    pub fn source_dataset(&self) -> Option<&str> {
        self.str_field("source_dataset").or_else(|| self.str_field("dataset"))
    }

    pub fn prompt_pack(&self) -> Option<&str> {
        self.str_field("prompt_pack")
    }

    /// Generated records count only when accepted; rows without a status
    /// are treated as usable.
    pub fn is_usable(&self) -> bool {
        self.str_field("status").is_none_or(|s| s == "accepted")
    }

    pub fn from_outcome(o: &GenOutcome) -> Self {
        match serde_json::to_value(o).expect("outcome serializes") {
            Value::Object(m) => Record(m),
            _ => unreachable!("outcomes serialize to objects"),
        }
    }

    pub fn to_line(&self) -> String {
        serde_json::to_string(&self.0).expect("record serializes")
    }
}

pub fn parse_records(text: &str) -> Result<Vec<Record>, DatasetError> {
    jsonl_lines(text)
        .map(|(line, content)| match serde_json::from_str::<Value>(content) {
            Ok(Value::Object(m)) => Ok(Record(m)),
            Ok(_) => Err(DatasetError::Schema {
                line,
                reason: "expected a JSON object".into(),
            }),
            Err(e) => Err(DatasetError::Schema {
                line,
                reason: e.to_string(),
            }),
        })
        .collect()
}

pub fn read_records(path: &Path) -> Result<Vec<Record>, DatasetError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_records(&text)
}

pub fn records_to_jsonl(records: &[Record]) -> String {
    let mut out = String::new();
    for r in records {
        out.push_str(&r.to_line());
        out.push('\n');
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dedup {
    pub records: Vec<Record>,
    pub removed: usize,
}

/// Drops repeated `(item_id, pipeline)` keys, keeping first occurrences in
/// input order. Records without an item_id have no key and are all kept.
pub fn dedup(records: Vec<Record>) -> Dedup {
    let mut seen = BTreeSet::new();
    let before = records.len();
    let records: Vec<Record> = records
        .into_iter()
        .filter(|r| match r.item_id() {
            Some(id) => seen.insert((id.to_string(), r.pipeline().unwrap_or("").to_string())),
            None => true,
        })
        .collect();
    Dedup {
        removed: before - records.len(),
        records,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct BlendConfig {
    /// Fraction of surviving SFT rows kept, sampled without replacement.
    /// 0 gives a CoT-only mix.
    pub sft_keep_fraction: f64,
    /// Drop SFT rows whose item_id seeded an accepted CoT record.
    pub remove_cot_sources: bool,
    pub seed: u64,
}

impl Default for BlendConfig {
    fn default() -> Self {
        Self {
            sft_keep_fraction: 1.0,
            remove_cot_sources: true,
            seed: 0,
        }
    }
}

impl BlendConfig {
    pub fn validate(&self) -> Result<(), DatasetError> {
        if !(0.0..=1.0).contains(&self.sft_keep_fraction) {
            return Err(DatasetError::Config(format!(
                "sft_keep_fraction must be within [0, 1], got {}",
                self.sft_keep_fraction
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlendReport {
    pub sft_in: usize,
    /// SFT rows dropped because a CoT record came from them.
    pub sft_removed: usize,
    /// SFT rows dropped by the keep fraction.
    pub sft_subsampled: usize,
    pub sft_out: usize,
    pub cot_in: usize,
    /// CoT records skipped because they were not accepted.
    pub cot_rejected: usize,
    pub cot_out: usize,
    /// CoT records whose item_id matches no SFT row.
    pub cot_unmatched: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Blend {
    pub records: Vec<Record>,
    pub report: BlendReport,
}

/// SFT survivors (input order) followed by accepted CoT records (input
/// order).
pub fn blend(sft: &[Record], cot: &[Record], cfg: &BlendConfig) -> Result<Blend, DatasetError> {
    cfg.validate()?;
    for (index, r) in sft.iter().enumerate() {
        if r.item_id().is_none() {
            return Err(DatasetError::MissingProvenance { which: "sft", index });
        }
    }
    let mut provenance = BTreeSet::new();
    let mut cot_out = Vec::new();
    let mut report = BlendReport {
        sft_in: sft.len(),
        cot_in: cot.len(),
        ..Default::default()
    };
    for (index, r) in cot.iter().enumerate() {
        let id = r
            .item_id()
            .ok_or(DatasetError::MissingProvenance { which: "cot", index })?;
        if !r.is_usable() {
            report.cot_rejected += 1;
            continue;
        }
        provenance.insert(id);
        cot_out.push(r.clone());
    }
    let sft_ids: BTreeSet<&str> = sft.iter().filter_map(Record::item_id).collect();
    report.cot_unmatched = cot_out
        .iter()
        .filter(|r| !sft_ids.contains(r.item_id().unwrap_or("")))
        .count();

    let survivors: Vec<&Record> = sft
        .iter()
        .filter(|r| !(cfg.remove_cot_sources && provenance.contains(r.item_id().unwrap_or(""))))
        .collect();
    report.sft_removed = sft.len() - survivors.len();
    let keep = (cfg.sft_keep_fraction * survivors.len() as f64).round() as usize;
    let mut chosen: Vec<usize> = if keep == survivors.len() {
        (0..keep).collect()
    } else {
        let mut rng = seeded_rng(cfg.seed, &["blend"]);
        rand::seq::index::sample(&mut rng, survivors.len(), keep).into_vec()
    };
    chosen.sort_unstable();
    report.sft_subsampled = survivors.len() - keep;
    report.sft_out = keep;
    report.cot_out = cot_out.len();

    let mut records: Vec<Record> = chosen.into_iter().map(|i| survivors[i].clone()).collect();
    records.extend(cot_out);
    Ok(Blend { records, report })
}

/// Per-pipeline acceptance statistics.
pub fn stats_by_pipeline(outcomes: &[GenOutcome]) -> BTreeMap<PipelineId, RunStats> {
    let mut groups: BTreeMap<PipelineId, Vec<&GenOutcome>> = BTreeMap::new();
    for o in outcomes {
        groups.entry(o.pipeline).or_default().push(o);
    }
    groups
        .into_iter()
        .map(|(p, os)| (p, RunStats::from_outcomes(os)))
        .collect()
}

/// Plain-text table: one row per pipeline, rejection reasons as
/// `reason=count` pairs.
pub fn render_stats_table(stats: &BTreeMap<PipelineId, RunStats>) -> String {
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<13} {:>7} {:>8} {:>10} {:>10} {:>10}  rejections",
        "pipeline", "total", "accepted", "accept%", "mean_len", "mean_calls"
    );
    for (p, s) in stats {
        let reasons: Vec<String> = s.rejected.iter().map(|(r, n)| format!("{}={n}", r.name())).collect();
        let _ = writeln!(
            out,
            "{:<13} {:>7} {:>8} {:>10.2} {:>10.2} {:>10.2}  {}",
            p.name(),
            s.total,
            s.accepted,
            100.0 * s.acceptance_rate,
            s.mean_chain_length,
            s.mean_call_count,
            if reasons.is_empty() {
                "-".to_string()
            } else {
                reasons.join(" ")
            }
        );
    }
    out
}

/// Sidecar describing one JSONL output.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub record_count: usize,
    /// Record counts by source dataset ("unknown" when untagged).
    pub sources: BTreeMap<String, usize>,
    /// Record counts by pipeline ("none" for untagged rows).
    pub pipelines: BTreeMap<String, usize>,
    pub prompt_packs: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seed: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub config_hash: Option<String>,
    pub tool_version: String,
}

impl DatasetManifest {
    pub fn describe(name: &str, records: &[Record]) -> Self {
        let mut sources = BTreeMap::new();
        let mut pipelines = BTreeMap::new();
        let mut packs = BTreeSet::new();
        for r in records {
            *sources
                .entry(r.source_dataset().unwrap_or("unknown").to_string())
                .or_insert(0) += 1;
            *pipelines.entry(r.pipeline().unwrap_or("none").to_string()).or_insert(0) += 1;
            if let Some(p) = r.prompt_pack() {
                packs.insert(p.to_string());
            }
        }
        Self {
            name: name.to_string(),
            record_count: records.len(),
            sources,
            pipelines,
            prompt_packs: packs.into_iter().collect(),
            seed: None,
            config_hash: None,
            tool_version: env!("CARGO_PKG_VERSION").to_string(),
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn with_config_hash(mut self, hash: impl Into<String>) -> Self {
        self.config_hash = Some(hash.into());
        self
    }
}

/// `dir/name.jsonl` → `dir/name.manifest.json`.
pub fn manifest_path(data: &Path) -> PathBuf {
    let stem = data.file_stem().and_then(|s| s.to_str()).unwrap_or("data");
    data.with_file_name(format!("{stem}.manifest.json"))
}

/// Writes records and their manifest, then re-reads both to confirm the
/// counts reconcile.
pub fn write_dataset(path: &Path, records: &[Record], manifest: &DatasetManifest) -> Result<(), DatasetError> {
    if manifest.record_count != records.len() {
        return Err(DatasetError::Manifest {
            path: manifest_path(path),
            reason: format!(
                "manifest says {} records, writing {}",
                manifest.record_count,
                records.len()
            ),
        });
    }
    write_atomic(path, records_to_jsonl(records).as_bytes()).map_err(io_err(path))?;
    write_manifest(path, manifest)?;
    verify_manifest(path).map(|_| ())
}

pub fn write_manifest(data: &Path, manifest: &DatasetManifest) -> Result<(), DatasetError> {
    let mpath = manifest_path(data);
    let mut text = serde_json::to_string_pretty(manifest).expect("manifest serializes");
    text.push('\n');
    write_atomic(&mpath, text.as_bytes()).map_err(io_err(&mpath))
}

/// Checks a data file against its sidecar: physical line count and the
/// per-source and per-pipeline sums.
pub fn verify_manifest(data: &Path) -> Result<DatasetManifest, DatasetError> {
    let mpath = manifest_path(data);
    let text = std::fs::read_to_string(&mpath).map_err(io_err(&mpath))?;
    let manifest: DatasetManifest = serde_json::from_str(&text).map_err(|e| DatasetError::Manifest {
        path: mpath.clone(),
        reason: e.to_string(),
    })?;
    let body = std::fs::read_to_string(data).map_err(io_err(data))?;
    let lines = jsonl_lines(&body).count();
    let bad = |reason: String| DatasetError::Manifest {
        path: mpath.clone(),
        reason,
    };
    if lines != manifest.record_count {
        return Err(bad(format!(
            "record_count {} but file has {lines} records",
            manifest.record_count
        )));
    }
    for (what, counts) in [("sources", &manifest.sources), ("pipelines", &manifest.pipelines)] {
        let sum: usize = counts.values().sum();
        if sum != manifest.record_count {
            return Err(bad(format!("{what} sum to {sum}, not {}", manifest.record_count)));
        }
    }
    Ok(manifest)
}
