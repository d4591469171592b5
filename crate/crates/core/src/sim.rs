//! Deterministic stand-in models for offline runs and tests.
//!
//! A [`SimWorld`] answers every orchestration prompt by role. How the
//! text model behaves for a task is looked up from the question text
//! (longest registered prefix wins); the audio model answers from the clip's
//! sample id. Every request is recorded so callers can count calls by role.

use std::collections::BTreeMap;
use std::sync::{Arc, Mutex};

use crate::gateway::{
    Backend, BackendError, BackendKind, ModelGateway, ModelRequest, ResponseCache, Role, RuleBackend, RunLog,
};
use crate::prompts::{PromptPack, PromptRole};
use crate::template::letter_for;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PredictMode {
    /// Names the gold answer.
    #[default]
    Gold,
    /// Commits to an answer that is not gold.
    Wrong,
    /// Never becomes confident.
    Unsure,
}

/// Scripted behaviour of the text model for one task.
#[derive(Debug, Clone)]
pub struct Behavior {
    /// Answer text the model treats as correct.
    pub gold: String,
    /// Hierarchy labels from level 1 down, as shown in level questions.
    pub path: Vec<String>,
    /// Number of sub-questions listed.
    pub subquestions: usize,
    /// Predictions stay unsure while the chain has fewer than
    /// `1 + unsure_rounds` steps.
    pub unsure_rounds: usize,
    pub predict: PredictMode,
    pub validate: bool,
    /// Hierarchy level (0-based along `path`) where the prediction misses
    /// and validation says no.
    pub fail_level: Option<usize>,
    /// Malformed rephrase replies before a well-formed one.
    pub malformed_rephrases: usize,
    /// Replies per role that omit the required final line.
    pub garble: BTreeMap<PromptRole, usize>,
}

impl Behavior {
    pub fn new(gold: impl Into<String>) -> Self {
        Self {
            gold: gold.into(),
            path: Vec::new(),
            subquestions: 3,
            unsure_rounds: 0,
            predict: PredictMode::Gold,
            validate: true,
            fail_level: None,
            malformed_rephrases: 0,
            garble: BTreeMap::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimCall {
    pub kind: BackendKind,
    pub role: Option<PromptRole>,
    /// Registered task key the request was attributed to.
    pub task: Option<String>,
    /// Number of turns in the request.
    pub turns: usize,
    pub prompt: String,
}

pub struct SimWorld {
    prompts: PromptPack,
    behaviors: BTreeMap<String, Behavior>,
    calls: Mutex<Vec<SimCall>>,
}

impl SimWorld {
    pub fn new(prompts: PromptPack) -> Self {
        Self {
            prompts,
            behaviors: BTreeMap::new(),
            calls: Mutex::new(Vec::new()),
        }
    }

    /// Registers `behavior` for tasks whose question starts with `key`.
    pub fn with(mut self, key: impl Into<String>, behavior: Behavior) -> Self {
        self.behaviors.insert(key.into().trim().to_string(), behavior);
        self
    }

    pub fn insert(&mut self, key: impl Into<String>, behavior: Behavior) {
        self.behaviors.insert(key.into().trim().to_string(), behavior);
    }

    pub fn calls(&self) -> Vec<SimCall> {
        self.calls.lock().expect("sim calls").clone()
    }

    pub fn count(&self, role: PromptRole) -> usize {
        self.calls().iter().filter(|c| c.role == Some(role)).count()
    }

    pub fn count_kind(&self, kind: BackendKind) -> usize {
        self.calls().iter().filter(|c| c.kind == kind).count()
    }

    pub fn clear_calls(&self) {
        self.calls.lock().expect("sim calls").clear();
    }

    pub fn llm_backend(self: &Arc<Self>) -> Arc<dyn Backend> {
        let world = Arc::clone(self);
        Arc::new(RuleBackend::new("sim-llm", move |req| {
            world.answer(BackendKind::Llm, req)
        }))
    }

    pub fn alm_backend(self: &Arc<Self>) -> Arc<dyn Backend> {
        let world = Arc::clone(self);
        Arc::new(RuleBackend::new("sim-alm", move |req| {
            world.answer(BackendKind::Alm, req)
        }))
    }

    /// Gateway over both sim backends with an in-memory cache and log.
    pub fn gateway(self: &Arc<Self>) -> ModelGateway {
        ModelGateway::builder()
            .llm_backend(self.llm_backend())
            .alm_backend(self.alm_backend())
            .cache(ResponseCache::in_memory())
            .log(RunLog::in_memory())
            .build()
    }

    fn behavior_for(&self, question: &str) -> Option<(&String, &Behavior)> {
        let q = question.trim();
        self.behaviors
            .iter()
            .filter(|(k, _)| q.starts_with(k.as_str()))
            .max_by_key(|(k, _)| k.len())
    }

    fn answer(&self, kind: BackendKind, req: &ModelRequest) -> Result<String, BackendError> {
        let first = req
            .messages
            .iter()
            .find(|m| m.role == Role::User)
            .map(|m| m.text.as_str())
            .unwrap_or("");
        let identified = self.prompts.identify(first);
        let role = identified.as_ref().map(|(r, _)| *r);
        let vars = identified.map(|(_, v)| v).unwrap_or_default();
        let found = vars.get("question").and_then(|q| self.behavior_for(q));
        self.calls.lock().expect("sim calls").push(SimCall {
            kind,
            role,
            task: found.map(|(k, _)| k.clone()),
            turns: req.messages.len(),
            prompt: req.prompt().to_string(),
        });
        // follow-ups alternate assistant and user turns after the first
        let attempt = req.messages.len().saturating_sub(1) / 2;
        let behavior = found.map(|(_, b)| b);
        let garbled = |r: PromptRole| behavior.is_some_and(|b| attempt < b.garble.get(&r).copied().unwrap_or(0));

        match kind {
            BackendKind::Alm => Ok(self.alm_reply(role, &vars, req)),
            BackendKind::Llm => match role {
                Some(PromptRole::SubQuestions) => {
                    let n = behavior.map_or(0, |b| b.subquestions);
                    Ok((1..=n)
                        .map(|i| format!("{i}. Which sound source is audible in part {i} of the clip?"))
                        .collect::<Vec<_>>()
                        .join("\n"))
                }
                Some(PromptRole::Predict) if garbled(PromptRole::Predict) => Ok("It is hard to say.".into()),
                Some(PromptRole::Predict) => Ok(self.predict_reply(behavior, &vars)),
                Some(PromptRole::Validate) if garbled(PromptRole::Validate) => Ok("Probably.".into()),
                Some(PromptRole::Validate) => {
                    let ok = match (behavior, self.level_of(behavior, &vars)) {
                        (Some(b), Some((level, _, _))) => b.fail_level != Some(level),
                        (Some(b), None) => b.validate,
                        (None, _) => false,
                    };
                    Ok(format!(
                        "Checked the transcript.\nVALID: {}",
                        if ok { "YES" } else { "NO" }
                    ))
                }
                Some(PromptRole::NextStep) if garbled(PromptRole::NextStep) => Ok("Ask something.".into()),
                Some(PromptRole::NextStep) => {
                    let n = chain_len(vars.get("chain").map_or("", String::as_str));
                    Ok(format!("QUESTION: What else can be heard after step {n}?"))
                }
                Some(PromptRole::Rephrase) => {
                    if behavior.is_some_and(|b| attempt < b.malformed_rephrases) {
                        return Ok("<summary>Working on it.</summary>\n<caption>Unclear.</caption>".into());
                    }
                    let get = |k: &str| vars.get(k).map_or("", |v| v.trim());
                    let evidence = chain_answers(get("chain"))
                        .into_iter()
                        .skip(1)
                        .collect::<Vec<_>>()
                        .join(" ");
                    Ok(format!(
                        "<summary>The question asks: {}</summary>\n<caption>{}</caption>\n<reasoning>{}</reasoning>\n<conclusion>{}</conclusion>",
                        get("question"),
                        get("caption"),
                        if evidence.is_empty() { "The caption settles it." } else { evidence.as_str() },
                        get("answer"),
                    ))
                }
                Some(PromptRole::DescribeChoice) => {
                    let choice = vars.get("choice").map_or("", String::as_str);
                    Ok(format!(
                        "A recording of {choice} has a characteristic timbre and rhythm."
                    ))
                }
                Some(PromptRole::Screen) => Ok("yes".into()),
                other => Err(BackendError::Permanent(format!(
                    "sim text model has no rule for {other:?}"
                ))),
            },
        }
    }

    fn alm_reply(&self, role: Option<PromptRole>, vars: &BTreeMap<String, String>, req: &ModelRequest) -> String {
        let clip = req.audio.as_ref().map_or("unknown", |a| a.sample_id.as_str());
        match role {
            Some(PromptRole::Caption) => format!("A clear recording, clip {clip}."),
            Some(PromptRole::VerifyChoice) => {
                let choice = vars.get("choice").map_or("", String::as_str);
                format!("Compared with {choice}: some properties of clip {clip} match.")
            }
            _ => format!("In clip {clip}: {}", req.prompt().trim()),
        }
    }

    /// For a level question: (level index along the path, gold letter,
    /// gold text).
    fn level_of(&self, behavior: Option<&Behavior>, vars: &BTreeMap<String, String>) -> Option<(usize, char, String)> {
        let b = behavior?;
        let q = vars.get("question")?;
        let level = self.prompts.match_role(PromptRole::LevelQuestion, q)?;
        let options = parse_rendered_choices(level.get("choices")?);
        b.path.iter().enumerate().find_map(|(depth, label)| {
            options
                .iter()
                .position(|o| o.eq_ignore_ascii_case(label))
                .map(|i| (depth, letter_for(i), options[i].clone()))
        })
    }

    fn predict_reply(&self, behavior: Option<&Behavior>, vars: &BTreeMap<String, String>) -> String {
        let Some(b) = behavior else {
            return "ANSWER: UNSURE".into();
        };
        let steps = chain_len(vars.get("chain").map_or("", String::as_str));
        if b.predict == PredictMode::Unsure || steps < 1 + b.unsure_rounds {
            return "Not enough evidence yet.\nANSWER: UNSURE".into();
        }
        if let Some((level, letter, text)) = self.level_of(behavior, vars) {
            if b.fail_level == Some(level) {
                let wrong = if letter == 'A' { 'B' } else { 'A' };
                return format!("ANSWER: ({wrong})");
            }
            return format!("ANSWER: ({letter}) {text}");
        }
        match b.predict {
            PredictMode::Gold => format!("From the transcript.\nANSWER: {}", b.gold),
            _ => "ANSWER: none of the above".into(),
        }
    }
}

/// First line of every answer in a chain transcript.
fn chain_answers(transcript: &str) -> Vec<&str> {
    transcript
        .lines()
        .filter_map(|l| {
            let digits = l
                .strip_prefix('A')
                .map_or(0, |r| r.chars().take_while(char::is_ascii_digit).count());
            (digits > 0)
                .then(|| l[1 + digits..].strip_prefix(':'))
                .flatten()
                .map(str::trim)
        })
        .collect()
}

/// Number of answered steps in a chain transcript.
fn chain_len(transcript: &str) -> usize {
    chain_answers(transcript).len()
}

/// Splits `"(A) x. (B) y."` back into choice texts.
pub fn parse_rendered_choices(rendered: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut i = 0;
    let mut rest = rendered;
    loop {
        let marker = format!("({}) ", letter_for(i));
        let Some(start) = rest.find(&marker) else { break };
        let body = &rest[start + marker.len()..];
        let next = format!(" ({}) ", letter_for(i + 1));
        let end = if i + 1 < 26 { body.find(&next) } else { None };
        let text = &body[..end.unwrap_or(body.len())];
        out.push(text.trim().trim_end_matches('.').to_string());
        match end {
            Some(e) => rest = &body[e..],
            None => break,
        }
        i += 1;
    }
    out
}
