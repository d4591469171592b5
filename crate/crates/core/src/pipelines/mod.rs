//! Reasoning-chain generation pipelines.
//!
//! Four strategies build a chain of (prompt, answer) steps about a clip,
//! filter it with an LLM that cannot hear the audio, and rephrase accepted
//! chains into the four-tag record:
//!
//! * `subquestions`: broad, parallel sub-questions answered by the ALM.
//! * `interactive`: one LLM-chosen question per round until the LLM is sure.
//! * `mcq`: describe-then-verify for every answer choice.
//! * `hierarchy`: describe-then-verify per taxonomy level, filtered per level.

mod algorithms;
mod batch;
mod protocol;

use std::fmt;
use std::str::FromStr;
use std::sync::atomic::{AtomicU32, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{display_label, BenchmarkItem};
use crate::gateway::{AudioRef, DecodeParams, GatewayError, ModelGateway, ModelRequest, RequestDigest};
use crate::prompts::PromptPack;
use crate::taxonomy::TaxonomyTree;
use crate::template::{format_record, normalize, parse_record, ChoiceSet, CotRecord};

pub use batch::{read_checkpoint, read_outcomes, run_batch, BatchOptions, BatchResult, RunStats};
pub use protocol::{parse_next_step, parse_predict, parse_subquestions, parse_validate, Prediction};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PipelineId {
    Subquestions,
    Interactive,
    Mcq,
    Hierarchy,
}

impl PipelineId {
    pub const ALL: [PipelineId; 4] = [
        PipelineId::Subquestions,
        PipelineId::Interactive,
        PipelineId::Mcq,
        PipelineId::Hierarchy,
    ];

    pub fn name(self) -> &'static str {
        match self {
            PipelineId::Subquestions => "subquestions",
            PipelineId::Interactive => "interactive",
            PipelineId::Mcq => "mcq",
            PipelineId::Hierarchy => "hierarchy",
        }
    }
}

impl fmt::Display for PipelineId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for PipelineId {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        PipelineId::ALL.into_iter().find(|p| p.name() == s).ok_or_else(|| {
            format!("unknown pipeline `{s}` (expected one of subquestions, interactive, mcq, hierarchy)")
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum StepSource {
    Llm,
    Alm,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChainStep {
    pub prompt: String,
    pub answer: String,
    pub source: StepSource,
}

/// Ordered evidence steps. Step 0 is always the ALM caption.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ReasoningChain {
    pub steps: Vec<ChainStep>,
}

impl ReasoningChain {
    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    pub fn push(&mut self, source: StepSource, prompt: impl Into<String>, answer: impl Into<String>) {
        self.steps.push(ChainStep {
            prompt: prompt.into(),
            answer: answer.into(),
            source,
        });
    }

    /// The prompts, in order.
    pub fn prompts(&self) -> impl Iterator<Item = &str> {
        self.steps.iter().map(|s| s.prompt.as_str())
    }

    pub fn caption(&self) -> &str {
        self.steps.first().map(|s| s.answer.as_str()).unwrap_or("")
    }

    /// Plain-text transcript handed to the text-only LLM.
    pub fn transcript(&self) -> String {
        let mut out = String::new();
        for (i, s) in self.steps.iter().enumerate() {
            let who = match s.source {
                StepSource::Alm => "audio model",
                StepSource::Llm => "text model",
            };
            if i > 0 {
                out.push('\n');
            }
            out.push_str(&format!(
                "Q{} (to the {who}): {}\nA{}: {}\n",
                i + 1,
                s.prompt.trim(),
                i + 1,
                s.answer.trim()
            ));
        }
        out
    }
}

/// One generation task.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TaskWire", into = "TaskWire")]
pub struct QaTask {
    pub item_id: String,
    pub audio: AudioRef,
    pub question: String,
    pub gold: String,
    pub choices: Option<Vec<String>>,
    pub source_dataset: String,
}

#[derive(Serialize, Deserialize)]
struct TaskWire {
    item_id: String,
    audio: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    dataset_id: String,
    #[serde(default, skip_serializing_if = "String::is_empty")]
    sample_id: String,
    question: String,
    gold: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    choices: Option<Vec<String>>,
    #[serde(default)]
    dataset: String,
}

impl TryFrom<TaskWire> for QaTask {
    type Error = String;

    fn try_from(w: TaskWire) -> Result<Self, String> {
        let task = QaTask {
            item_id: w.item_id,
            audio: AudioRef::new(w.audio, w.dataset_id, w.sample_id),
            question: w.question,
            gold: w.gold,
            choices: w.choices,
            source_dataset: w.dataset,
        };
        task.choice_set()?;
        Ok(task)
    }
}

impl From<QaTask> for TaskWire {
    fn from(t: QaTask) -> Self {
        TaskWire {
            item_id: t.item_id,
            audio: t.audio.uri,
            dataset_id: t.audio.dataset_id,
            sample_id: t.audio.sample_id,
            question: t.question,
            gold: t.gold,
            choices: t.choices,
            dataset: t.source_dataset,
        }
    }
}

impl QaTask {
    pub fn new(item_id: &str, audio: AudioRef, question: &str, gold: &str) -> Self {
        Self {
            item_id: item_id.into(),
            audio,
            question: question.into(),
            gold: gold.into(),
            choices: None,
            source_dataset: String::new(),
        }
    }

    pub fn with_choices<S: AsRef<str>>(mut self, choices: &[S]) -> Self {
        self.choices = Some(choices.iter().map(|c| c.as_ref().to_string()).collect());
        self
    }

    pub fn from_item(item: &BenchmarkItem) -> Self {
        Self {
            item_id: item.item_id.clone(),
            audio: item.audio.clone(),
            question: item.question.clone(),
            gold: item.choices.gold_text().unwrap_or_default().to_string(),
            choices: Some(item.choices.texts().map(str::to_string).collect()),
            source_dataset: item.audio.dataset_id.clone(),
        }
    }

    /// Validates the task; returns the choice set with gold set when
    /// choices are present.
    pub fn choice_set(&self) -> Result<Option<ChoiceSet>, String> {
        if self.item_id.trim().is_empty() {
            return Err("empty item_id".into());
        }
        if self.question.trim().is_empty() {
            return Err(format!("{}: empty question", self.item_id));
        }
        if normalize(&self.gold).is_empty() {
            return Err(format!("{}: empty gold answer", self.item_id));
        }
        let Some(choices) = &self.choices else {
            return Ok(None);
        };
        let cs = ChoiceSet::new(choices, None).map_err(|e| format!("{}: {e}", self.item_id))?;
        let gold = cs
            .position_of(&self.gold)
            .ok_or_else(|| format!("{}: gold {:?} matches no choice", self.item_id, self.gold))?;
        Ok(Some(cs.with_gold(gold).expect("index from position_of")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Status {
    Accepted,
    Rejected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectReason {
    TooShort,
    FilterFailed,
    MalformedRephrase,
    StepFilterFailed,
    RoundCap,
    /// A model reply lacked its mandatory final line even after a retry.
    ProtocolViolation,
    /// The per-task call budget ran out.
    CallBudget,
    /// Gateway failure (unavailable backend, rejected request, script miss).
    BackendError,
}

impl RejectReason {
    pub fn name(self) -> &'static str {
        match self {
            RejectReason::TooShort => "too_short",
            RejectReason::FilterFailed => "filter_failed",
            RejectReason::MalformedRephrase => "malformed_rephrase",
            RejectReason::StepFilterFailed => "step_filter_failed",
            RejectReason::RoundCap => "round_cap",
            RejectReason::ProtocolViolation => "protocol_violation",
            RejectReason::CallBudget => "call_budget",
            RejectReason::BackendError => "backend_error",
        }
    }
}

impl fmt::Display for RejectReason {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

/// Record of one predict-or-validate filter decision.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterCheck {
    /// `final` or `level:<node>`.
    pub stage: String,
    /// Answer the filter compared against.
    pub target: String,
    /// LLM prediction; `None` when unsure or when the stage only validates.
    pub predicted: Option<String>,
    pub predict_matched: bool,
    /// `None` when validation was short-circuited by a matching prediction.
    pub validated: Option<bool>,
    pub passed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub predict_digest: Option<RequestDigest>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub validate_digest: Option<RequestDigest>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GenOutcome {
    pub item_id: String,
    pub pipeline: PipelineId,
    pub status: Status,
    #[serde(default)]
    pub reject_reason: Option<RejectReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub detail: Option<String>,
    pub chain: ReasoningChain,
    /// Four-tag text on the wire.
    #[serde(default, with = "record_text")]
    pub record: Option<CotRecord>,
    pub call_count: u32,
    pub prompt_pack: String,
    #[serde(default)]
    pub source_dataset: String,
    #[serde(default)]
    pub filter_trace: Vec<FilterCheck>,
}

impl GenOutcome {
    pub fn is_accepted(&self) -> bool {
        self.status == Status::Accepted
    }
}

pub(crate) mod record_text {
    use serde::{Deserialize, Deserializer, Serialize, Serializer};

    use crate::template::{format_record, parse_record, CotRecord};

    pub fn serialize<S: Serializer>(r: &Option<CotRecord>, s: S) -> Result<S::Ok, S::Error> {
        r.as_ref()
            .map(|r| format_record(r).map_err(serde::ser::Error::custom))
            .transpose()?
            .serialize(s)
    }

    pub fn deserialize<'de, D: Deserializer<'de>>(d: D) -> Result<Option<CotRecord>, D::Error> {
        Option::<String>::deserialize(d)?
            .map(|t| parse_record(&t).map_err(serde::de::Error::custom))
            .transpose()
    }
}

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error("invalid task: {0}")]
    InvalidTask(String),
    #[error("the hierarchy pipeline needs a taxonomy tree")]
    MissingTaxonomy,
    #[error("{item_id}: gold {gold:?} is not a leaf of the taxonomy")]
    GoldNotInTree { item_id: String, gold: String },
    #[error("the mcq pipeline needs choices ({0})")]
    MissingChoices(String),
    #[error("{path}: {reason}")]
    Checkpoint { path: String, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Minimum evidence length T.
    pub t_min: usize,
    /// Maximum interactive rounds.
    pub round_cap: usize,
    /// Extra rephrase attempts after a malformed one.
    pub rephrase_retries: usize,
    /// Model calls allowed per task, cache hits included.
    pub task_call_budget: u32,
    pub seed: u64,
    /// Concurrent ALM calls when answering sub-questions.
    pub fanout: usize,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            t_min: 3,
            round_cap: 10,
            rephrase_retries: 2,
            task_call_budget: 64,
            seed: 0,
            fanout: 4,
        }
    }
}

impl PipelineConfig {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_min == 0 {
            return Err("t_min must be at least 1".into());
        }
        if self.round_cap < self.t_min {
            return Err(format!(
                "round_cap ({}) must be at least t_min ({})",
                self.round_cap, self.t_min
            ));
        }
        if self.task_call_budget == 0 {
            return Err("task_call_budget must be positive".into());
        }
        Ok(())
    }
}

/// Shared context for running pipelines against one gateway.
pub struct Pipelines<'a> {
    gateway: &'a ModelGateway,
    prompts: &'a PromptPack,
    config: PipelineConfig,
    tree: Option<&'a TaxonomyTree>,
    prompt_hash: String,
}

impl<'a> Pipelines<'a> {
    pub fn new(gateway: &'a ModelGateway, prompts: &'a PromptPack, config: PipelineConfig) -> Self {
        Self {
            gateway,
            prompts,
            config,
            tree: None,
            prompt_hash: prompts.hash(),
        }
    }

    pub fn with_tree(mut self, tree: &'a TaxonomyTree) -> Self {
        self.tree = Some(tree);
        self
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    pub fn gateway(&self) -> &ModelGateway {
        self.gateway
    }

    pub fn prompts(&self) -> &PromptPack {
        self.prompts
    }

    /// Checks that `task` can run through `pipeline`.
    pub fn check_task(&self, pipeline: PipelineId, task: &QaTask) -> Result<(), PipelineError> {
        let choices = task.choice_set().map_err(PipelineError::InvalidTask)?;
        match pipeline {
            PipelineId::Mcq if choices.is_none() => Err(PipelineError::MissingChoices(task.item_id.clone())),
            PipelineId::Hierarchy => self.hierarchy_leaf(task).map(|_| ()),
            _ => Ok(()),
        }
    }

    pub(crate) fn hierarchy_leaf(&self, task: &QaTask) -> Result<String, PipelineError> {
        let tree = self.tree.ok_or(PipelineError::MissingTaxonomy)?;
        let not_found = || PipelineError::GoldNotInTree {
            item_id: task.item_id.clone(),
            gold: task.gold.clone(),
        };
        if let Some(leaf) = tree.resolve(task.gold.trim()) {
            return if tree.is_leaf(leaf) {
                Ok(leaf.to_string())
            } else {
                Err(not_found())
            };
        }
        let key = normalize(&task.gold);
        tree.leaves()
            .into_iter()
            .find(|l| normalize(&display_label(l)) == key)
            .map(str::to_string)
            .ok_or_else(not_found)
    }

    pub fn run(&self, pipeline: PipelineId, task: &QaTask) -> Result<GenOutcome, PipelineError> {
        match pipeline {
            PipelineId::Subquestions => self.run_subquestions(task),
            PipelineId::Interactive => self.run_interactive(task),
            PipelineId::Mcq => self.run_mcq_choices(task),
            PipelineId::Hierarchy => self.run_hierarchy(task),
        }
    }

    fn decode(&self) -> DecodeParams {
        DecodeParams {
            seed: self.config.seed,
            ..DecodeParams::default()
        }
    }

    fn finish(
        &self,
        pipeline: PipelineId,
        ctx: TaskCtx<'_>,
        chain: ReasoningChain,
        result: Result<Step, StepError>,
    ) -> GenOutcome {
        let (status, reason, detail, record) = match result {
            Ok(Step::Accept(record)) => (Status::Accepted, None, None, Some(record)),
            Ok(Step::Reject(reason)) => (Status::Rejected, Some(reason), None, None),
            Err(e) => (Status::Rejected, Some(e.reason()), Some(e.to_string()), None),
        };
        debug_assert!(record
            .as_ref()
            .is_none_or(|r| format_record(r).is_ok_and(|t| parse_record(&t).is_ok())));
        GenOutcome {
            item_id: ctx.task.item_id.clone(),
            pipeline,
            status,
            reject_reason: reason,
            detail,
            chain,
            record,
            call_count: ctx.calls.load(Ordering::SeqCst),
            prompt_pack: self.prompt_hash.clone(),
            source_dataset: ctx.task.source_dataset.clone(),
            filter_trace: ctx.trace.into_inner().expect("trace lock"),
        }
    }
}

/// Terminal result of an algorithm body.
enum Step {
    Accept(CotRecord),
    Reject(RejectReason),
}

#[derive(Debug, Error)]
enum StepError {
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error("task call budget of {0} exhausted")]
    Budget(u32),
    #[error("rephrase output malformed after retries: {0}")]
    MalformedRephrase(String),
}

impl StepError {
    fn reason(&self) -> RejectReason {
        match self {
            StepError::Gateway(_) => RejectReason::BackendError,
            StepError::Protocol(_) => RejectReason::ProtocolViolation,
            StepError::Budget(_) => RejectReason::CallBudget,
            StepError::MalformedRephrase(_) => RejectReason::MalformedRephrase,
        }
    }
}

/// Per-task bookkeeping: call budget and filter trace.
struct TaskCtx<'t> {
    task: &'t QaTask,
    budget: u32,
    calls: AtomicU32,
    trace: Mutex<Vec<FilterCheck>>,
}

impl<'t> TaskCtx<'t> {
    fn new(task: &'t QaTask, budget: u32) -> Self {
        Self {
            task,
            budget,
            calls: AtomicU32::new(0),
            trace: Mutex::new(Vec::new()),
        }
    }

    fn ask(&self, gateway: &ModelGateway, req: &ModelRequest) -> Result<(String, RequestDigest), StepError> {
        let n = self.calls.fetch_add(1, Ordering::SeqCst) + 1;
        if n > self.budget {
            self.calls.fetch_sub(1, Ordering::SeqCst);
            return Err(StepError::Budget(self.budget));
        }
        let digest = gateway.digest_for(req)?;
        let resp = gateway.query(req)?;
        Ok((resp.text, digest))
    }

    fn record(&self, check: FilterCheck) {
        self.trace.lock().expect("trace lock").push(check);
    }
}
