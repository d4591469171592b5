//! Benchmark runs, per-subset scoring, and the reasoning/causality audit:
//! workbook export for human annotation, re-import, and metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bench::{BenchmarkItem, Subset};
use crate::gateway::{ModelGateway, ModelRequest};
use crate::pipelines::record_text;
use crate::prompts::{PromptPack, PromptRole};
use crate::template::{extract_choice, index_for_letter, letter_for, parse_record, CotRecord};
use crate::util::{jsonl_lines, par_map, to_jsonl, write_atomic};

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("line {line}: {reason}")]
    Schema { line: usize, reason: String },
    #[error("predictions do not match the benchmark: {0}")]
    SubsetMismatch(String),
    #[error("row {row} ({item_id}): {column} is blank or not yes/no")]
    IncompleteAudit {
        row: usize,
        item_id: String,
        column: &'static str,
    },
    #[error("row {row} ({item_id}): {reason}")]
    ImpossibleCell {
        row: usize,
        item_id: String,
        reason: String,
    },
    #[error("no audit records")]
    EmptyAudit,
    #[error("audit mixes choice counts {0:?}; audit one subset at a time")]
    HeterogeneousChoiceCount(Vec<usize>),
    #[error("workbook: {0}")]
    Workbook(String),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> EvalError + '_ {
    move |source| EvalError::Io {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EvalMode {
    /// Model answers in the four-tag template; the conclusion is scored.
    Cot,
    /// Bare answers; the whole reply is scored.
    Plain,
}

impl FromStr for EvalMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "cot" => Ok(EvalMode::Cot),
            "plain" => Ok(EvalMode::Plain),
            other => Err(format!("unknown eval mode {other:?} (expected cot or plain)")),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Prediction {
    pub item_id: String,
    pub subset: Subset,
    pub mode: EvalMode,
    pub raw: String,
    #[serde(default, with = "record_text")]
    pub record: Option<CotRecord>,
    pub predicted: Option<char>,
    pub gold: char,
    /// Parse or extraction failed, or the query itself failed.
    pub malformed: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

impl Prediction {
    pub fn is_correct(&self) -> bool {
        self.predicted == Some(self.gold)
    }
}

pub fn eval_request(prompts: &PromptPack, item: &BenchmarkItem, mode: EvalMode) -> ModelRequest {
    let role = match mode {
        EvalMode::Cot => PromptRole::EvalCot,
        EvalMode::Plain => PromptRole::EvalPlain,
    };
    let prompt = prompts.render(
        role,
        &[("question", item.question.trim()), ("choices", &item.choices.render())],
    );
    ModelRequest::alm(item.audio.clone(), prompt)
}

/// Scores one raw reply.
pub fn interpret(item: &BenchmarkItem, mode: EvalMode, raw: &str) -> Prediction {
    let (record, predicted) = match mode {
        EvalMode::Cot => match parse_record(raw) {
            Ok(r) => {
                let p = extract_choice(&r.conclusion, &item.choices).ok();
                (Some(r), p)
            }
            Err(_) => (None, None),
        },
        EvalMode::Plain => (None, extract_choice(raw, &item.choices).ok()),
    };
    Prediction {
        item_id: item.item_id.clone(),
        subset: item.subset,
        mode,
        raw: raw.to_string(),
        record,
        malformed: predicted.is_none(),
        predicted: predicted.map(letter_for),
        gold: letter_for(item.gold_index()),
        error: None,
    }
}

/// One prediction per item, in item order. Query failures become
/// malformed predictions carrying the error.
pub fn run_benchmark(
    gateway: &ModelGateway,
    prompts: &PromptPack,
    items: &[BenchmarkItem],
    mode: EvalMode,
    workers: usize,
) -> Vec<Prediction> {
    par_map(items, workers, |item| {
        match gateway.query(&eval_request(prompts, item, mode)) {
            Ok(resp) => interpret(item, mode, &resp.text),
            Err(e) => Prediction {
                error: Some(e.to_string()),
                ..interpret(item, mode, "")
            },
        }
    })
}

pub fn write_predictions(path: &Path, predictions: &[Prediction]) -> Result<(), EvalError> {
    write_atomic(path, to_jsonl(predictions).as_bytes()).map_err(io_err(path))
}

pub fn read_predictions(path: &Path) -> Result<Vec<Prediction>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    jsonl_lines(&text)
        .map(|(line, content)| {
            serde_json::from_str(content).map_err(|e| EvalError::Schema {
                line,
                reason: e.to_string(),
            })
        })
        .collect()
}

/// Percentage rounded to two decimals.
pub fn percent(count: usize, total: usize) -> f64 {
    if total == 0 {
        return 0.0;
    }
    (10_000.0 * count as f64 / total as f64).round() / 100.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SubsetScore {
    pub subset: Subset,
    pub total: usize,
    pub correct: usize,
    /// Counted as incorrect, reported separately.
    pub malformed: usize,
    /// Percent, two decimals.
    pub accuracy: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub subsets: Vec<SubsetScore>,
}

impl ScoreReport {
    pub fn get(&self, subset: Subset) -> Option<&SubsetScore> {
        self.subsets.iter().find(|s| s.subset == subset)
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<11} {:>6} {:>8} {:>10} {:>9}",
            "subset", "total", "correct", "malformed", "accuracy"
        );
        for s in &self.subsets {
            let _ = writeln!(
                out,
                "{:<11} {:>6} {:>8} {:>10} {:>9.2}",
                s.subset.name(),
                s.total,
                s.correct,
                s.malformed,
                s.accuracy
            );
        }
        out
    }
}

/// Per-subset accuracy. Every item needs exactly one prediction with a
/// matching subset.
pub fn score(predictions: &[Prediction], items: &[BenchmarkItem]) -> Result<ScoreReport, EvalError> {
    let mut by_id: BTreeMap<&str, &Prediction> = BTreeMap::new();
    for p in predictions {
        if by_id.insert(p.item_id.as_str(), p).is_some() {
            return Err(EvalError::SubsetMismatch(format!("two predictions for {}", p.item_id)));
        }
    }
    let mut tally: BTreeMap<Subset, (usize, usize, usize)> = BTreeMap::new();
    for item in items {
        let p = by_id
            .remove(item.item_id.as_str())
            .ok_or_else(|| EvalError::SubsetMismatch(format!("no prediction for {}", item.item_id)))?;
        if p.subset != item.subset {
            return Err(EvalError::SubsetMismatch(format!(
                "{} is {} in the benchmark but {} in the predictions",
                item.item_id, item.subset, p.subset
            )));
        }
        let t = tally.entry(item.subset).or_default();
        t.0 += 1;
        if p.predicted == Some(letter_for(item.gold_index())) {
            t.1 += 1;
        }
        if p.malformed {
            t.2 += 1;
        }
    }
    if let Some(extra) = by_id.keys().next() {
        return Err(EvalError::SubsetMismatch(format!(
            "prediction {extra} has no benchmark item"
        )));
    }
    Ok(ScoreReport {
        subsets: tally
            .into_iter()
            .map(|(subset, (total, correct, malformed))| SubsetScore {
                subset,
                total,
                correct,
                malformed,
                accuracy: percent(correct, total),
            })
            .collect(),
    })
}

/// The six observed (prediction, reasoning, causality) combinations, in
/// report order. Correct answers with correct reasoning that the
/// conclusion ignores, and wrong answers that follow correct reasoning,
/// cannot occur under the rubric.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditCell {
    CorrectReasoningCausal,
    CorrectFlawedCausal,
    CorrectFlawedNoncausal,
    WrongFlawedNoncausal,
    WrongFlawedCausal,
    WrongReasoningNoncausal,
}

impl AuditCell {
    pub const ALL: [AuditCell; 6] = [
        AuditCell::CorrectReasoningCausal,
        AuditCell::CorrectFlawedCausal,
        AuditCell::CorrectFlawedNoncausal,
        AuditCell::WrongFlawedNoncausal,
        AuditCell::WrongFlawedCausal,
        AuditCell::WrongReasoningNoncausal,
    ];

    pub fn classify(correct: bool, reasoning_correct: bool, causal: bool) -> Option<AuditCell> {
        use AuditCell::*;
        match (correct, reasoning_correct, causal) {
            (true, true, true) => Some(CorrectReasoningCausal),
            (true, false, true) => Some(CorrectFlawedCausal),
            (true, false, false) => Some(CorrectFlawedNoncausal),
            (false, false, false) => Some(WrongFlawedNoncausal),
            (false, false, true) => Some(WrongFlawedCausal),
            (false, true, false) => Some(WrongReasoningNoncausal),
            _ => None,
        }
    }

    /// (prediction correct, reasoning correct, causal).
    pub fn flags(self) -> (bool, bool, bool) {
        use AuditCell::*;
        match self {
            CorrectReasoningCausal => (true, true, true),
            CorrectFlawedCausal => (true, false, true),
            CorrectFlawedNoncausal => (true, false, false),
            WrongFlawedNoncausal => (false, false, false),
            WrongFlawedCausal => (false, false, true),
            WrongReasoningNoncausal => (false, true, false),
        }
    }

    pub fn label(self) -> &'static str {
        use AuditCell::*;
        match self {
            CorrectReasoningCausal => "correct  reasoning=yes causal=yes",
            CorrectFlawedCausal => "correct  reasoning=no  causal=yes",
            CorrectFlawedNoncausal => "correct  reasoning=no  causal=no",
            WrongFlawedNoncausal => "wrong    reasoning=no  causal=no",
            WrongFlawedCausal => "wrong    reasoning=no  causal=yes",
            WrongReasoningNoncausal => "wrong    reasoning=yes causal=no",
        }
    }
}

/// One annotated item.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditRecord {
    pub item_id: String,
    pub subset: Subset,
    pub predicted: Option<usize>,
    pub gold: usize,
    pub choice_count: usize,
    pub reasoning_correct: bool,
    pub causal: bool,
}

impl AuditRecord {
    pub fn is_correct(&self) -> bool {
        self.predicted == Some(self.gold)
    }

    pub fn cell(&self) -> Option<AuditCell> {
        AuditCell::classify(self.is_correct(), self.reasoning_correct, self.causal)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CellShare {
    pub cell: AuditCell,
    pub count: usize,
    /// Fraction of all records.
    pub share: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AuditMetrics {
    pub n: usize,
    /// Choices per item.
    pub k: usize,
    pub prediction_accuracy: f64,
    pub reasoning_accuracy: f64,
    pub causality: f64,
    /// Causality with chance agreement removed, assuming uniform guesses
    /// when the answer does not follow the reasoning.
    pub debiased_causality: f64,
    pub cells: Vec<CellShare>,
}

impl AuditMetrics {
    pub fn render(&self, title: &str) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "{title} (n={}, k={})", self.n, self.k);
        for c in &self.cells {
            let _ = writeln!(out, "  {:<36} {:>4} {:>7.2}", c.cell.label(), c.count, 100.0 * c.share);
        }
        let _ = writeln!(
            out,
            "  {:<36} {:>12.2}",
            "prediction accuracy",
            100.0 * self.prediction_accuracy
        );
        let _ = writeln!(
            out,
            "  {:<36} {:>12.2}",
            "reasoning accuracy",
            100.0 * self.reasoning_accuracy
        );
        let _ = writeln!(out, "  {:<36} {:>12.2}", "causality", 100.0 * self.causality);
        let _ = writeln!(out, "  {:<36} {:>12.4}", "de-biased causality", self.debiased_causality);
        out
    }
}

/// `(c − 1/k) / (1 − 1/k)`, clamped to [0, 1].
pub fn debias(c: f64, k: usize) -> f64 {
    assert!(k >= 2, "de-biasing needs at least two choices");
    let chance = 1.0 / k as f64;
    ((c - chance) / (1.0 - chance)).clamp(0.0, 1.0)
}

pub fn audit_metrics(records: &[AuditRecord]) -> Result<AuditMetrics, EvalError> {
    if records.is_empty() {
        return Err(EvalError::EmptyAudit);
    }
    let ks: BTreeSet<usize> = records.iter().map(|r| r.choice_count).collect();
    if ks.len() > 1 {
        return Err(EvalError::HeterogeneousChoiceCount(ks.into_iter().collect()));
    }
    let k = *ks.iter().next().expect("non-empty");
    let mut counts: BTreeMap<AuditCell, usize> = AuditCell::ALL.iter().map(|c| (*c, 0)).collect();
    for (i, r) in records.iter().enumerate() {
        let cell = r.cell().ok_or_else(|| EvalError::ImpossibleCell {
            row: i + 1,
            item_id: r.item_id.clone(),
            reason: impossible_reason(r.is_correct()),
        })?;
        *counts.get_mut(&cell).expect("all cells present") += 1;
    }
    let n = records.len();
    let frac = |x: usize| x as f64 / n as f64;
    let causal = records.iter().filter(|r| r.causal).count();
    let causality = frac(causal);
    Ok(AuditMetrics {
        n,
        k,
        prediction_accuracy: frac(records.iter().filter(|r| r.is_correct()).count()),
        reasoning_accuracy: frac(records.iter().filter(|r| r.reasoning_correct).count()),
        causality,
        debiased_causality: debias(causality, k),
        cells: AuditCell::ALL
            .iter()
            .map(|c| CellShare {
                cell: *c,
                count: counts[c],
                share: frac(counts[c]),
            })
            .collect(),
    })
}

fn impossible_reason(correct: bool) -> String {
    if correct {
        "a correct answer cannot ignore correct reasoning".into()
    } else {
        "a wrong answer cannot follow correct reasoning".into()
    }
}

/// Fixed workbook columns. The last two are filled in by annotators.
pub const WORKBOOK_HEADER: [&str; 12] = [
    "item_id",
    "subset",
    "audio",
    "question",
    "choices",
    "reasoning",
    "conclusion",
    "predicted",
    "gold",
    "choice_count",
    "reasoning_correct",
    "causal",
];

/// One workbook row.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AuditRow {
    pub item_id: String,
    pub subset: Subset,
    pub audio: String,
    pub question: String,
    pub choices: String,
    pub reasoning: String,
    pub conclusion: String,
    pub predicted: Option<char>,
    pub gold: char,
    pub choice_count: usize,
    pub reasoning_correct: Option<bool>,
    pub causal: Option<bool>,
}

/// Rows for annotation, in prediction order. Predictions without a parsed
/// record show their raw text as the reasoning.
pub fn audit_rows(predictions: &[Prediction], items: &[BenchmarkItem]) -> Result<Vec<AuditRow>, EvalError> {
    let by_id: BTreeMap<&str, &BenchmarkItem> = items.iter().map(|i| (i.item_id.as_str(), i)).collect();
    predictions
        .iter()
        .map(|p| {
            let item = by_id
                .get(p.item_id.as_str())
                .ok_or_else(|| EvalError::SubsetMismatch(format!("prediction {} has no benchmark item", p.item_id)))?;
            let (reasoning, conclusion) = match &p.record {
                Some(r) => (r.reasoning.clone(), r.conclusion.clone()),
                None => (p.raw.clone(), String::new()),
            };
            Ok(AuditRow {
                item_id: p.item_id.clone(),
                subset: item.subset,
                audio: item.audio.uri.clone(),
                question: item.question.clone(),
                choices: item.choices.render(),
                reasoning,
                conclusion,
                predicted: p.predicted,
                gold: letter_for(item.gold_index()),
                choice_count: item.choices.len(),
                reasoning_correct: None,
                causal: None,
            })
        })
        .collect()
}

fn yes_no(b: Option<bool>) -> &'static str {
    match b {
        Some(true) => "yes",
        Some(false) => "no",
        None => "",
    }
}

fn parse_flag(cell: &str) -> Option<bool> {
    match cell.trim().to_ascii_lowercase().as_str() {
        "yes" | "y" | "true" | "1" => Some(true),
        "no" | "n" | "false" | "0" => Some(false),
        _ => None,
    }
}

/// Tab-separated text; cells holding tabs, quotes or newlines are quoted.
pub fn render_workbook(rows: &[AuditRow]) -> String {
    let mut w = csv::WriterBuilder::new().delimiter(b'\t').from_writer(Vec::new());
    w.write_record(WORKBOOK_HEADER).expect("in-memory write");
    for r in rows {
        let predicted = r.predicted.map(String::from).unwrap_or_default();
        w.write_record([
            r.item_id.as_str(),
            r.subset.name(),
            &r.audio,
            &r.question,
            &r.choices,
            &r.reasoning,
            &r.conclusion,
            &predicted,
            &r.gold.to_string(),
            &r.choice_count.to_string(),
            yes_no(r.reasoning_correct),
            yes_no(r.causal),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("utf-8 cells")
}

pub fn write_workbook(path: &Path, rows: &[AuditRow]) -> Result<(), EvalError> {
    write_atomic(path, render_workbook(rows).as_bytes()).map_err(io_err(path))
}

pub fn read_workbook(path: &Path) -> Result<Vec<AuditRow>, EvalError> {
    let text = std::fs::read_to_string(path).map_err(io_err(path))?;
    parse_workbook(&text)
}

fn letter_cell(cell: &str, row: usize, column: &str) -> Result<Option<char>, EvalError> {
    let cell = cell.trim();
    if cell.is_empty() {
        return Ok(None);
    }
    let mut chars = cell.chars();
    match (chars.next(), chars.next()) {
        (Some(c), None) if index_for_letter(c.to_ascii_uppercase()).is_some() => Ok(Some(c.to_ascii_uppercase())),
        _ => Err(EvalError::Workbook(format!(
            "row {row}: {column} must be a choice letter, got {cell:?}"
        ))),
    }
}

/// Parses a workbook. Annotation cells may still be blank here; a blank
/// becomes `None`, anything other than yes/no is an error.
pub fn parse_workbook(text: &str) -> Result<Vec<AuditRow>, EvalError> {
    let mut rdr = csv::ReaderBuilder::new().delimiter(b'\t').from_reader(text.as_bytes());
    let header = rdr.headers().map_err(|e| EvalError::Workbook(e.to_string()))?.clone();
    if header.iter().map(str::trim).ne(WORKBOOK_HEADER) {
        return Err(EvalError::Workbook(format!(
            "header must be {:?}, got {:?}",
            WORKBOOK_HEADER,
            header.iter().collect::<Vec<_>>()
        )));
    }
    let mut rows = Vec::new();
    for rec in rdr.records() {
        let rec = rec.map_err(|e| EvalError::Workbook(e.to_string()))?;
        let row = rec.position().map_or(0, |p| p.line() as usize);
        let get = |i: usize| rec.get(i).unwrap_or("");
        let item_id = get(0).trim().to_string();
        let subset: Subset = serde_json::from_value(serde_json::Value::String(get(1).trim().to_string()))
            .map_err(|_| EvalError::Workbook(format!("row {row}: unknown subset {:?}", get(1))))?;
        let flag = |i: usize, column: &'static str| -> Result<Option<bool>, EvalError> {
            let cell = get(i);
            if cell.trim().is_empty() {
                return Ok(None);
            }
            parse_flag(cell).map(Some).ok_or_else(|| EvalError::IncompleteAudit {
                row,
                item_id: item_id.clone(),
                column,
            })
        };
        rows.push(AuditRow {
            subset,
            audio: get(2).to_string(),
            question: get(3).to_string(),
            choices: get(4).to_string(),
            reasoning: get(5).to_string(),
            conclusion: get(6).to_string(),
            predicted: letter_cell(get(7), row, "predicted")?,
            gold: letter_cell(get(8), row, "gold")?
                .ok_or_else(|| EvalError::Workbook(format!("row {row}: gold is blank")))?,
            choice_count: get(9)
                .trim()
                .parse()
                .map_err(|_| EvalError::Workbook(format!("row {row}: choice_count must be a number")))?,
            reasoning_correct: flag(10, "reasoning_correct")?,
            causal: flag(11, "causal")?,
            item_id,
        });
    }
    Ok(rows)
}

/// Converts fully annotated rows to records. Blank annotation cells and
/// combinations the rubric rules out are rejected with the row number
/// (header is row 1).
pub fn complete_records(rows: &[AuditRow]) -> Result<Vec<AuditRecord>, EvalError> {
    rows.iter()
        .enumerate()
        .map(|(i, r)| {
            let row = i + 2;
            let missing = |column| EvalError::IncompleteAudit {
                row,
                item_id: r.item_id.clone(),
                column,
            };
            let record = AuditRecord {
                item_id: r.item_id.clone(),
                subset: r.subset,
                predicted: r.predicted.and_then(index_for_letter),
                gold: index_for_letter(r.gold).expect("validated letter"),
                choice_count: r.choice_count,
                reasoning_correct: r.reasoning_correct.ok_or_else(|| missing("reasoning_correct"))?,
                causal: r.causal.ok_or_else(|| missing("causal"))?,
            };
            if record.cell().is_none() {
                return Err(EvalError::ImpossibleCell {
                    row,
                    item_id: r.item_id.clone(),
                    reason: impossible_reason(record.is_correct()),
                });
            }
            Ok(record)
        })
        .collect()
}

/// Metrics per subset, so each group has one choice count.
pub fn audit_by_subset(records: &[AuditRecord]) -> Result<BTreeMap<Subset, AuditMetrics>, EvalError> {
    let mut groups: BTreeMap<Subset, Vec<AuditRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(r.subset).or_default().push(r.clone());
    }
    groups
        .into_iter()
        .map(|(s, rs)| audit_metrics(&rs).map(|m| (s, m)))
        .collect()
}
