//! Bounded-parallel batch runs with in-order output and resumable
//! checkpoints.
//!
//! Workers may finish out of order, but a single writer emits outcomes in
//! task order, so the output file and the checkpoint always hold a prefix of
//! the pending tasks. A resumed run therefore produces the same bytes as an
//! uninterrupted one.

use std::collections::{BTreeMap, BTreeSet};
use std::fs::{File, OpenOptions};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::mpsc;

use serde::{Deserialize, Serialize};

use crate::util::{jsonl_lines, write_atomic};

use super::{GenOutcome, PipelineError, PipelineId, Pipelines, QaTask, RejectReason};

#[derive(Debug, Clone, Default)]
pub struct BatchOptions {
    pub workers: usize,
    /// Outcome JSONL.
    pub output: Option<PathBuf>,
    /// Completed item_ids, one JSON object per line.
    pub checkpoint: Option<PathBuf>,
    /// Continue from an existing checkpoint instead of starting over.
    pub resume: bool,
    /// Stop after this many newly processed tasks.
    pub limit: Option<usize>,
}

/// Aggregate statistics over outcomes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunStats {
    pub total: usize,
    pub accepted: usize,
    pub rejected: BTreeMap<RejectReason, usize>,
    pub acceptance_rate: f64,
    pub mean_chain_length: f64,
    pub mean_call_count: f64,
}

impl RunStats {
    pub fn from_outcomes<'a>(outcomes: impl IntoIterator<Item = &'a GenOutcome>) -> Self {
        let mut total = 0usize;
        let mut accepted = 0usize;
        let mut rejected = BTreeMap::new();
        let mut chain = 0usize;
        let mut calls = 0u64;
        for o in outcomes {
            total += 1;
            chain += o.chain.len();
            calls += u64::from(o.call_count);
            if o.is_accepted() {
                accepted += 1;
            } else if let Some(r) = o.reject_reason {
                *rejected.entry(r).or_insert(0) += 1;
            }
        }
        let mean = |x: f64| if total == 0 { 0.0 } else { x / total as f64 };
        Self {
            total,
            accepted,
            rejected,
            acceptance_rate: mean(accepted as f64),
            mean_chain_length: mean(chain as f64),
            mean_call_count: mean(calls as f64),
        }
    }
}

#[derive(Debug, Clone)]
pub struct BatchResult {
    /// Outcomes for every task now in the output, prior runs included, in
    /// task order.
    pub outcomes: Vec<GenOutcome>,
    pub stats: RunStats,
    /// Tasks skipped because the checkpoint already had them.
    pub resumed: usize,
    /// Tasks processed in this invocation.
    pub processed: usize,
    /// Tasks left for a later run because of `limit`.
    pub remaining: usize,
}

#[derive(Serialize, Deserialize)]
struct CheckpointLine {
    item_id: String,
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PipelineError + '_ {
    move |source| PipelineError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn read_checkpoint(path: &Path) -> Result<Vec<String>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let mut ids = Vec::new();
    for (line, content) in jsonl_lines(&text) {
        // a torn final line from a crash is dropped, not fatal
        match serde_json::from_str::<CheckpointLine>(content) {
            Ok(c) => ids.push(c.item_id),
            Err(_) if line == text.lines().count() && !text.ends_with('\n') => {}
            Err(e) => {
                return Err(PipelineError::Checkpoint {
                    path: path.display().to_string(),
                    reason: format!("line {line}: {e}"),
                })
            }
        }
    }
    Ok(ids)
}

/// Reads an outcome JSONL file. A torn trailing line is ignored.
pub fn read_outcomes(path: &Path) -> Result<Vec<GenOutcome>, PipelineError> {
    if !path.exists() {
        return Ok(Vec::new());
    }
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    let total = text.lines().count();
    let mut out = Vec::new();
    for (line, content) in jsonl_lines(&text) {
        match serde_json::from_str::<GenOutcome>(content) {
            Ok(o) => out.push(o),
            Err(_) if line == total && !text.ends_with('\n') => {}
            Err(e) => {
                return Err(PipelineError::Checkpoint {
                    path: path.display().to_string(),
                    reason: format!("line {line}: {e}"),
                })
            }
        }
    }
    Ok(out)
}

struct Sink {
    output: Option<BufWriter<File>>,
    checkpoint: Option<BufWriter<File>>,
    output_path: Option<PathBuf>,
    checkpoint_path: Option<PathBuf>,
}

impl Sink {
    fn open(opts: &BatchOptions, truncate: bool) -> Result<Self, PipelineError> {
        let open = |p: &Path| -> Result<BufWriter<File>, PipelineError> {
            if let Some(dir) = p.parent().filter(|d| !d.as_os_str().is_empty()) {
                std::fs::create_dir_all(dir).map_err(io_err(dir))?;
            }
            let mut o = OpenOptions::new();
            o.create(true);
            if truncate {
                o.write(true).truncate(true);
            } else {
                o.append(true);
            }
            o.open(p).map(BufWriter::new).map_err(io_err(p))
        };
        Ok(Self {
            output: opts.output.as_deref().map(open).transpose()?,
            checkpoint: opts.checkpoint.as_deref().map(open).transpose()?,
            output_path: opts.output.clone(),
            checkpoint_path: opts.checkpoint.clone(),
        })
    }

    /// Output line first, checkpoint second: a crash in between leaves an
    /// output line without checkpoint entry, which resume discards.
    fn write(&mut self, outcome: &GenOutcome) -> Result<(), PipelineError> {
        if let (Some(w), Some(p)) = (self.output.as_mut(), self.output_path.as_deref()) {
            serde_json::to_writer(&mut *w, outcome).expect("outcome serializes");
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(p))?;
        }
        if let (Some(w), Some(p)) = (self.checkpoint.as_mut(), self.checkpoint_path.as_deref()) {
            serde_json::to_writer(
                &mut *w,
                &CheckpointLine {
                    item_id: outcome.item_id.clone(),
                },
            )
            .expect("checkpoint serializes");
            w.write_all(b"\n").and_then(|_| w.flush()).map_err(io_err(p))?;
        }
        Ok(())
    }
}

/// Runs `pipeline` over `tasks`. Only invalid tasks or I/O problems abort;
/// per-task failures become rejected outcomes.
pub fn run_batch(
    p: &Pipelines<'_>,
    pipeline: PipelineId,
    tasks: &[QaTask],
    opts: &BatchOptions,
) -> Result<BatchResult, PipelineError> {
    let mut ids = BTreeSet::new();
    for t in tasks {
        p.check_task(pipeline, t)?;
        if !ids.insert(t.item_id.as_str()) {
            return Err(PipelineError::InvalidTask(format!("duplicate item_id {}", t.item_id)));
        }
    }

    let mut previous: Vec<GenOutcome> = Vec::new();
    if opts.resume {
        let done: BTreeSet<String> = match &opts.checkpoint {
            Some(cp) => read_checkpoint(cp)?.into_iter().collect(),
            None => BTreeSet::new(),
        };
        if let Some(out) = &opts.output {
            previous = read_outcomes(out)?
                .into_iter()
                .filter(|o| done.contains(&o.item_id) && ids.contains(o.item_id.as_str()))
                .collect();
            write_atomic(out, crate::util::to_jsonl(&previous).as_bytes()).map_err(io_err(out))?;
        } else {
            return Err(PipelineError::Checkpoint {
                path: String::new(),
                reason: "resume needs an output file".into(),
            });
        }
        if let Some(cp) = &opts.checkpoint {
            let lines: Vec<CheckpointLine> = previous
                .iter()
                .map(|o| CheckpointLine {
                    item_id: o.item_id.clone(),
                })
                .collect();
            write_atomic(cp, crate::util::to_jsonl(&lines).as_bytes()).map_err(io_err(cp))?;
        }
    }
    let done: BTreeSet<&str> = previous.iter().map(|o| o.item_id.as_str()).collect();
    let pending_all: Vec<&QaTask> = tasks.iter().filter(|t| !done.contains(t.item_id.as_str())).collect();
    let take = opts.limit.unwrap_or(usize::MAX).min(pending_all.len());
    let pending = &pending_all[..take];

    let mut sink = Sink::open(opts, !opts.resume)?;
    let mut fresh: Vec<GenOutcome> = Vec::with_capacity(pending.len());
    let workers = opts.workers.max(1).min(pending.len().max(1));
    let next = AtomicUsize::new(0);
    let (tx, rx) = mpsc::channel::<(usize, Result<GenOutcome, PipelineError>)>();

    let write_result = std::thread::scope(|s| -> Result<(), PipelineError> {
        for _ in 0..workers {
            let tx = tx.clone();
            let next = &next;
            s.spawn(move || loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                if i >= pending.len() {
                    break;
                }
                let r = p.run(pipeline, pending[i]);
                if tx.send((i, r)).is_err() {
                    break;
                }
            });
        }
        drop(tx);
        let mut buffer: BTreeMap<usize, GenOutcome> = BTreeMap::new();
        for (i, r) in rx {
            let outcome = match r {
                Ok(o) => o,
                Err(e) => {
                    // stop handing out work and drain
                    next.store(pending.len(), Ordering::SeqCst);
                    return Err(e);
                }
            };
            buffer.insert(i, outcome);
            while let Some(o) = buffer.remove(&fresh.len()) {
                sink.write(&o)?;
                fresh.push(o);
            }
        }
        Ok(())
    });
    write_result?;

    let processed = fresh.len();
    let resumed = previous.len();
    let mut outcomes = previous;
    outcomes.extend(fresh);
    // keep task order even when a resumed file listed a different prefix
    let order: BTreeMap<&str, usize> = tasks.iter().enumerate().map(|(i, t)| (t.item_id.as_str(), i)).collect();
    outcomes.sort_by_key(|o| order[o.item_id.as_str()]);
    Ok(BatchResult {
        stats: RunStats::from_outcomes(&outcomes),
        outcomes,
        resumed,
        processed,
        remaining: pending_all.len() - take,
    })
}
