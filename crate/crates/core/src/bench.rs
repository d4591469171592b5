//! Classification benchmark construction with taxonomy-neighbor
//! distractors, plus loading of question-answering manifests.

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};

use rand::seq::{IndexedRandom, SliceRandom};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::gateway::{AudioRef, GatewayError, ModelGateway, ModelRequest};
use crate::prompts::{PromptPack, PromptRole};
use crate::taxonomy::{Annotation, TaxonomyError, TaxonomyTree, DEFAULT_SIBLING_FLOOR};
use crate::template::{index_for_letter, letter_for, normalize, ChoiceError, ChoiceSet};
use crate::util::{jsonl_lines, par_map, seeded_rng, to_jsonl, write_atomic};

pub const CLS_QUESTION: &str = "Classify the sound.";
pub const CLS_CHOICES: usize = 4;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error("label {0} is not a leaf of the taxonomy")]
    LabelNotInTree(String),
    #[error("asked for {n} items but only {available} exist")]
    NTooLarge { n: usize, available: usize },
    #[error("manifest line {line}: {reason}")]
    ManifestSchema { line: usize, reason: String },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Choice(#[from] ChoiceError),
    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Subset {
    #[serde(rename = "AQA-YesNo")]
    AqaYesNo,
    #[serde(rename = "AQA-MCQ")]
    AqaMcq,
    #[serde(rename = "CLS-full")]
    ClsFull,
    #[serde(rename = "CLS-mini")]
    ClsMini,
}

impl Subset {
    pub fn name(self) -> &'static str {
        match self {
            Subset::AqaYesNo => "AQA-YesNo",
            Subset::AqaMcq => "AQA-MCQ",
            Subset::ClsFull => "CLS-full",
            Subset::ClsMini => "CLS-mini",
        }
    }

    pub fn is_aqa(self) -> bool {
        matches!(self, Subset::AqaYesNo | Subset::AqaMcq)
    }

    /// Required number of choices, if fixed.
    pub fn choice_count(self) -> Option<usize> {
        match self {
            Subset::AqaYesNo => Some(2),
            Subset::AqaMcq => None,
            Subset::ClsFull | Subset::ClsMini => Some(CLS_CHOICES),
        }
    }
}

impl std::fmt::Display for Subset {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DistractorSource {
    Gold,
    Neighbor,
    RandomPad,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "ItemWire", into = "ItemWire")]
pub struct BenchmarkItem {
    pub item_id: String,
    pub audio: AudioRef,
    pub question: String,
    pub choices: ChoiceSet,
    pub subset: Subset,
    /// Per-choice origin for classification items; empty otherwise.
    pub provenance: Vec<DistractorSource>,
}

impl BenchmarkItem {
    pub fn gold_index(&self) -> usize {
        self.choices.gold_index().expect("validated items carry gold")
    }

    pub fn validate(&self) -> Result<(), String> {
        if self.item_id.trim().is_empty() {
            return Err("empty item_id".into());
        }
        if self.question.trim().is_empty() {
            return Err("empty question".into());
        }
        self.choices.validate().map_err(|e| e.to_string())?;
        if self.choices.gold_index().is_none() {
            return Err("gold not set".into());
        }
        if let Some(k) = self.subset.choice_count() {
            if self.choices.len() != k {
                return Err(format!(
                    "{} items need {k} choices, got {}",
                    self.subset,
                    self.choices.len()
                ));
            }
        }
        if !self.provenance.is_empty() {
            let golds = self.provenance.iter().filter(|p| **p == DistractorSource::Gold).count();
            if self.provenance.len() != self.choices.len()
                || golds != 1
                || self.provenance[self.gold_index()] != DistractorSource::Gold
            {
                return Err("provenance does not line up with choices".into());
            }
        }
        Ok(())
    }
}

#[derive(Serialize, Deserialize)]
struct ItemWire {
    item_id: String,
    audio: String,
    #[serde(default)]
    dataset_id: String,
    #[serde(default)]
    sample_id: String,
    question: String,
    choices: Vec<String>,
    gold: String,
    subset: Subset,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    provenance: Vec<DistractorSource>,
}

impl TryFrom<ItemWire> for BenchmarkItem {
    type Error = String;

    fn try_from(w: ItemWire) -> Result<Self, String> {
        let mut letters = w.gold.trim().chars();
        let gold = match (letters.next(), letters.next()) {
            (Some(c), None) if c.is_ascii_uppercase() => index_for_letter(c).expect("uppercase"),
            _ => return Err(format!("gold must be a single capital letter, got {:?}", w.gold)),
        };
        let choices = ChoiceSet::new(&w.choices, Some(gold)).map_err(|e| e.to_string())?;
        let item = BenchmarkItem {
            item_id: w.item_id,
            audio: AudioRef::new(w.audio, w.dataset_id, w.sample_id),
            question: w.question,
            choices,
            subset: w.subset,
            provenance: w.provenance,
        };
        item.validate()?;
        Ok(item)
    }
}

impl From<BenchmarkItem> for ItemWire {
    fn from(item: BenchmarkItem) -> Self {
        ItemWire {
            gold: item.choices.gold_letter().map(String::from).unwrap_or_default(),
            choices: item.choices.texts().map(str::to_string).collect(),
            item_id: item.item_id,
            audio: item.audio.uri,
            dataset_id: item.audio.dataset_id,
            sample_id: item.audio.sample_id,
            question: item.question,
            subset: item.subset,
            provenance: item.provenance,
        }
    }
}

/// Human-readable choice text for a taxonomy label.
pub fn display_label(label: &str) -> String {
    label.replace('_', " ").to_lowercase()
}

/// Decides whether two labels are distinguishable enough to share an item.
pub trait Screener: Sync {
    fn distinguishable(&self, label: &str, candidate: &str) -> Result<bool, BenchError>;
}

/// Keeps every candidate.
pub struct AcceptAll;

impl Screener for AcceptAll {
    fn distinguishable(&self, _: &str, _: &str) -> Result<bool, BenchError> {
        Ok(true)
    }
}

/// One yes/no LLM query per (label, candidate) pair through the gateway,
/// so the gateway cache makes screening run-stable.
pub struct LlmScreener<'a> {
    gateway: &'a ModelGateway,
    prompts: &'a PromptPack,
    unparsed: AtomicUsize,
}

impl<'a> LlmScreener<'a> {
    pub fn new(gateway: &'a ModelGateway, prompts: &'a PromptPack) -> Self {
        Self {
            gateway,
            prompts,
            unparsed: AtomicUsize::new(0),
        }
    }

    /// Replies that were neither yes nor no (treated as no).
    pub fn unparsed(&self) -> usize {
        self.unparsed.load(Ordering::SeqCst)
    }
}

/// The request the screener sends for a pair; exposed so fixtures can be
/// scripted by digest.
pub fn screening_request(prompts: &PromptPack, label: &str, candidate: &str) -> ModelRequest {
    let prompt = prompts.render(
        PromptRole::Screen,
        &[
            ("label", &display_label(label)),
            ("candidate", &display_label(candidate)),
        ],
    );
    ModelRequest::llm(prompt)
}

/// `Some(true)` for yes, `Some(false)` for no, judged on the first word.
pub fn parse_yes_no(reply: &str) -> Option<bool> {
    match normalize(reply).split(' ').next() {
        Some("yes") => Some(true),
        Some("no") => Some(false),
        _ => None,
    }
}

impl Screener for LlmScreener<'_> {
    fn distinguishable(&self, label: &str, candidate: &str) -> Result<bool, BenchError> {
        let resp = self.gateway.query(&screening_request(self.prompts, label, candidate))?;
        Ok(parse_yes_no(&resp.text).unwrap_or_else(|| {
            self.unparsed.fetch_add(1, Ordering::SeqCst);
            false
        }))
    }
}

/// Screening verdicts from a table of indistinguishable pairs, one
/// tab-separated `label<TAB>candidate` per line, `#` comments allowed.
/// Pairs are unordered; anything not listed is distinguishable.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct VerdictTable {
    pairs: BTreeSet<(String, String)>,
}

impl VerdictTable {
    pub fn load(path: &Path) -> Result<Self, BenchError> {
        let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Self::parse(&text)
    }

    pub fn parse(text: &str) -> Result<Self, BenchError> {
        let mut pairs = BTreeSet::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let mut cols = line.split('\t').map(str::trim);
            match (cols.next(), cols.next(), cols.next()) {
                (Some(a), Some(b), None) if !a.is_empty() && !b.is_empty() => {
                    pairs.insert(Self::key(a, b));
                }
                _ => {
                    return Err(BenchError::ManifestSchema {
                        line: i + 1,
                        reason: "expected two tab-separated labels".into(),
                    })
                }
            }
        }
        Ok(Self { pairs })
    }

    fn key(a: &str, b: &str) -> (String, String) {
        if a <= b {
            (a.to_string(), b.to_string())
        } else {
            (b.to_string(), a.to_string())
        }
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn pairs(&self) -> impl Iterator<Item = (&str, &str)> {
        self.pairs.iter().map(|(a, b)| (a.as_str(), b.as_str()))
    }
}

impl Screener for VerdictTable {
    fn distinguishable(&self, label: &str, candidate: &str) -> Result<bool, BenchError> {
        Ok(!self.pairs.contains(&Self::key(label, candidate)))
    }
}

/// Candidates judged distinguishable from `leaf`, order preserved.
pub fn screen_choices<S: Screener + ?Sized>(
    screener: &S,
    leaf: &str,
    candidates: &[String],
) -> Result<Vec<String>, BenchError> {
    let mut kept = Vec::with_capacity(candidates.len());
    for c in candidates {
        if screener.distinguishable(leaf, c)? {
            kept.push(c.clone());
        }
    }
    Ok(kept)
}

#[derive(Debug, Clone)]
pub struct ClsConfig {
    pub seed: u64,
    pub sibling_floor: usize,
    /// Prefix for audio URIs: `<audio_root>/<sample_id>.wav`.
    pub audio_root: String,
    pub dataset_id: String,
    pub workers: usize,
}

impl Default for ClsConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            sibling_floor: DEFAULT_SIBLING_FLOOR,
            audio_root: "fsd50k://eval".into(),
            dataset_id: "FSD50K".into(),
            workers: 4,
        }
    }
}

/// Neighbors of a leaf before and after screening.
#[derive(Debug, Clone)]
struct Pool {
    screened: Vec<String>,
    rejected: BTreeSet<String>,
}

fn pool_for<S: Screener + ?Sized>(
    tree: &TaxonomyTree,
    screener: &S,
    leaf: &str,
    floor: usize,
) -> Result<Pool, BenchError> {
    let neighbors = tree.neighbors(leaf, floor)?;
    let screened = screen_choices(screener, leaf, &neighbors)?;
    let rejected = neighbors.into_iter().filter(|n| !screened.contains(n)).collect();
    Ok(Pool { screened, rejected })
}

fn assemble<S: Screener + ?Sized>(
    sample_id: &str,
    leaf: &str,
    pool: &Pool,
    tree: &TaxonomyTree,
    screener: &S,
    cfg: &ClsConfig,
) -> Result<BenchmarkItem, BenchError> {
    let item_id = format!("cls-{sample_id}");
    let mut rng = seeded_rng(cfg.seed, &["cls", &item_id]);
    let need = CLS_CHOICES - 1;
    let mut picked: Vec<(String, DistractorSource)> = pool
        .screened
        .choose_multiple(&mut rng, need)
        .map(|n| (n.clone(), DistractorSource::Neighbor))
        .collect();
    if picked.len() < need {
        let pad_pool: Vec<&str> = tree
            .leaves()
            .into_iter()
            .filter(|l| {
                *l != leaf
                    && !tree.is_ancestor(l, leaf)
                    && !pool.rejected.contains(*l)
                    && !picked.iter().any(|(p, _)| p == l)
            })
            .collect();
        // pads are screened too, walking a seeded order until enough pass
        let mut order = pad_pool;
        order.shuffle(&mut rng);
        for cand in order {
            if picked.len() == need {
                break;
            }
            if screener.distinguishable(leaf, cand)? {
                picked.push((cand.to_string(), DistractorSource::RandomPad));
            }
        }
    }
    if picked.len() < need {
        return Err(BenchError::Choice(ChoiceError::TooFew(picked.len() + 1)));
    }
    picked.push((leaf.to_string(), DistractorSource::Gold));
    picked.shuffle(&mut rng);
    let gold = picked
        .iter()
        .position(|(_, s)| *s == DistractorSource::Gold)
        .expect("gold inserted");
    let texts: Vec<String> = picked.iter().map(|(l, _)| display_label(l)).collect();
    Ok(BenchmarkItem {
        audio: AudioRef::new(
            format!("{}/{sample_id}.wav", cfg.audio_root.trim_end_matches('/')),
            cfg.dataset_id.clone(),
            sample_id,
        ),
        item_id,
        question: CLS_QUESTION.to_string(),
        choices: ChoiceSet::new(&texts, Some(gold))?,
        subset: Subset::ClsFull,
        provenance: picked.into_iter().map(|(_, s)| s).collect(),
    })
}

fn resolve_leaf<'t>(tree: &'t TaxonomyTree, sample: &'t Annotation) -> Result<&'t str, BenchError> {
    let first = sample.first_label().unwrap_or("");
    match tree.resolve(first) {
        Some(leaf) if tree.is_leaf(leaf) => Ok(leaf),
        _ => Err(BenchError::LabelNotInTree(first.to_string())),
    }
}

/// One classification item. Gold is the leaf named by the first label.
pub fn build_cls_item<S: Screener + ?Sized>(
    sample: &Annotation,
    tree: &TaxonomyTree,
    screener: &S,
    cfg: &ClsConfig,
) -> Result<BenchmarkItem, BenchError> {
    let leaf = resolve_leaf(tree, sample)?;
    let pool = pool_for(tree, screener, leaf, cfg.sibling_floor)?;
    assemble(&sample.sample_id, leaf, &pool, tree, screener, cfg)
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct SkippedSample {
    pub sample_id: String,
    pub label: String,
}

#[derive(Debug, Clone)]
pub struct ClsBuild {
    pub items: Vec<BenchmarkItem>,
    /// Samples whose first label is not a leaf of the curated tree.
    pub skipped: Vec<SkippedSample>,
    /// Items with at least one random-pad distractor.
    pub padded_items: usize,
}

/// Builds the full classification benchmark. Screening runs once per
/// distinct gold leaf, then items are assembled in parallel; output order
/// follows the input.
pub fn build_cls_benchmark<S: Screener + ?Sized>(
    samples: &[Annotation],
    tree: &TaxonomyTree,
    screener: &S,
    cfg: &ClsConfig,
) -> Result<ClsBuild, BenchError> {
    let mut skipped = Vec::new();
    let mut resolved = Vec::new();
    for s in samples {
        match resolve_leaf(tree, s) {
            Ok(leaf) => resolved.push((s, leaf)),
            Err(_) => skipped.push(SkippedSample {
                sample_id: s.sample_id.clone(),
                label: s.first_label().unwrap_or("").to_string(),
            }),
        }
    }
    let leaves: Vec<&str> = resolved
        .iter()
        .map(|(_, l)| *l)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let pools: BTreeMap<&str, Pool> = leaves
        .iter()
        .copied()
        .zip(par_map(&leaves, cfg.workers, |leaf| {
            pool_for(tree, screener, leaf, cfg.sibling_floor)
        }))
        .map(|(l, p)| p.map(|p| (l, p)))
        .collect::<Result<_, _>>()?;
    let items = par_map(&resolved, cfg.workers, |(s, leaf)| {
        assemble(&s.sample_id, leaf, &pools[leaf], tree, screener, cfg)
    })
    .into_iter()
    .collect::<Result<Vec<_>, _>>()?;
    let padded_items = items
        .iter()
        .filter(|i| i.provenance.contains(&DistractorSource::RandomPad))
        .count();
    Ok(ClsBuild {
        items,
        skipped,
        padded_items,
    })
}

/// Seeded sample without replacement; selected items keep their input
/// order and are retagged as the mini subset.
pub fn sample_mini(items: &[BenchmarkItem], n: usize, seed: u64) -> Result<Vec<BenchmarkItem>, BenchError> {
    if n > items.len() {
        return Err(BenchError::NTooLarge {
            n,
            available: items.len(),
        });
    }
    let mut rng = seeded_rng(seed, &["mini"]);
    let mut picked = rand::seq::index::sample(&mut rng, items.len(), n).into_vec();
    picked.sort_unstable();
    Ok(picked
        .into_iter()
        .map(|i| BenchmarkItem {
            subset: Subset::ClsMini,
            ..items[i].clone()
        })
        .collect())
}

pub fn write_items(path: &Path, items: &[BenchmarkItem]) -> Result<(), BenchError> {
    write_atomic(path, to_jsonl(items).as_bytes()).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })
}

/// Reads and validates a benchmark JSONL file.
pub fn read_items(path: &Path) -> Result<Vec<BenchmarkItem>, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_items(&text)
}

pub fn parse_items(text: &str) -> Result<Vec<BenchmarkItem>, BenchError> {
    let mut items = Vec::new();
    let mut ids = BTreeSet::new();
    for (line, content) in jsonl_lines(text) {
        let item: BenchmarkItem = serde_json::from_str(content).map_err(|e| BenchError::ManifestSchema {
            line,
            reason: e.to_string(),
        })?;
        if !ids.insert(item.item_id.clone()) {
            return Err(BenchError::ManifestSchema {
                line,
                reason: format!("duplicate item_id {}", item.item_id),
            });
        }
        items.push(item);
    }
    Ok(items)
}

#[derive(Debug, Clone)]
pub struct AqaManifest {
    pub items: Vec<BenchmarkItem>,
    pub yes_no: usize,
    pub mcq: usize,
}

impl AqaManifest {
    pub fn subset(&self, subset: Subset) -> impl Iterator<Item = &BenchmarkItem> {
        self.items.iter().filter(move |i| i.subset == subset)
    }
}

/// Loads a question-answering manifest (same schema as benchmark files,
/// subsets restricted to the two AQA ones).
pub fn load_aqa_manifest(path: &Path) -> Result<AqaManifest, BenchError> {
    let text = std::fs::read_to_string(path).map_err(|source| BenchError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_aqa_manifest(&text)
}

pub fn parse_aqa_manifest(text: &str) -> Result<AqaManifest, BenchError> {
    let items = parse_items(text)?;
    if items.is_empty() {
        return Err(BenchError::ManifestSchema {
            line: 0,
            reason: "manifest has no items".into(),
        });
    }
    let lines: Vec<usize> = jsonl_lines(text).map(|(l, _)| l).collect();
    for (item, line) in items.iter().zip(lines) {
        if !item.subset.is_aqa() {
            return Err(BenchError::ManifestSchema {
                line,
                reason: format!("subset {} is not a question-answering subset", item.subset),
            });
        }
    }
    let yes_no = items.iter().filter(|i| i.subset == Subset::AqaYesNo).count();
    Ok(AqaManifest {
        mcq: items.len() - yes_no,
        yes_no,
        items,
    })
}

/// Letter of a choice index, for reports.
pub fn gold_letter(item: &BenchmarkItem) -> char {
    letter_for(item.gold_index())
}
