//! Shared predict / validate / next-step / rephrase protocol.

use crate::gateway::{ModelRequest, RequestDigest};
use crate::prompts::PromptRole;
use crate::template::{extract_choice, letter_for, normalize, parse_record, ChoiceSet, CotRecord};

use super::{FilterCheck, Pipelines, ReasoningChain, StepError, TaskCtx};

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Prediction {
    Answer(String),
    Unsure,
}

/// Value of a `KEY: value` line, ignoring case and light markdown.
fn keyed_value<'a>(line: &'a str, key: &str) -> Option<&'a str> {
    let line = line.trim().trim_matches(|c| c == '*' || c == '`' || c == '_').trim();
    let head = line.get(..key.len())?;
    if !head.eq_ignore_ascii_case(key) {
        return None;
    }
    let rest = line[key.len()..].trim_start();
    let rest = rest.strip_prefix(':')?;
    Some(rest.trim().trim_matches(|c| c == '*' || c == '`').trim())
}

fn last_line(text: &str) -> Option<&str> {
    text.lines().rev().map(str::trim).find(|l| !l.is_empty())
}

/// Final line must be `ANSWER: <text>` or `ANSWER: UNSURE`.
pub fn parse_predict(text: &str) -> Option<Prediction> {
    let value = keyed_value(last_line(text)?, "ANSWER")?;
    if value.is_empty() {
        None
    } else if normalize(value) == "unsure" {
        Some(Prediction::Unsure)
    } else {
        Some(Prediction::Answer(value.to_string()))
    }
}

/// Final line must be `VALID: YES` or `VALID: NO`.
pub fn parse_validate(text: &str) -> Option<bool> {
    match normalize(keyed_value(last_line(text)?, "VALID")?).as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// The last `QUESTION: …` line.
pub fn parse_next_step(text: &str) -> Option<String> {
    text.lines()
        .rev()
        .find_map(|l| keyed_value(l, "QUESTION"))
        .filter(|q| !q.is_empty())
        .map(str::to_string)
}

/// One question per line; list markers and numbering are stripped.
pub fn parse_subquestions(text: &str) -> Vec<String> {
    text.lines()
        .map(|l| {
            let l = l.trim();
            let l = l.trim_start_matches(['-', '*', '•']).trim_start();
            let digits = l.chars().take_while(|c| c.is_ascii_digit()).count();
            let l = if digits > 0 && l[digits..].starts_with(['.', ')', ':']) {
                l[digits + 1..].trim_start()
            } else {
                l
            };
            l.trim().to_string()
        })
        .filter(|l| !l.is_empty())
        .collect()
}

const PREDICT_REQUIREMENT: &str =
    "End with exactly one final line of the form `ANSWER: <your answer>` or `ANSWER: UNSURE`.";
const VALIDATE_REQUIREMENT: &str = "End with exactly one final line, either `VALID: YES` or `VALID: NO`.";
const NEXT_STEP_REQUIREMENT: &str = "End with one line of the form `QUESTION: <your question>`.";
const REPHRASE_REQUIREMENT: &str =
    "Use the tags <summary>, <caption>, <reasoning> and <conclusion> exactly once each, in that order, each with non-empty content.";

/// What a filter compares against.
pub(super) struct Target<'c> {
    /// Question text shown to the LLM, choices included.
    pub question: String,
    /// Gold answer as written for the validator.
    pub answer: String,
    pub gold_text: String,
    pub choices: Option<&'c ChoiceSet>,
}

impl<'c> Target<'c> {
    pub fn new(question: &str, gold_text: &str, choices: Option<&'c ChoiceSet>) -> Self {
        let (question, answer) = match choices {
            Some(cs) => {
                let g = cs.gold_index().expect("target choice sets carry gold");
                (
                    format!("{} {}", question.trim(), cs.render()),
                    format!("({}) {}", letter_for(g), gold_text),
                )
            }
            None => (question.trim().to_string(), gold_text.to_string()),
        };
        Self {
            question,
            answer,
            gold_text: gold_text.to_string(),
            choices,
        }
    }

    /// Gold matching: letter/choice resolution with choices, normalized
    /// string equality without.
    pub fn matches(&self, answer: &str) -> bool {
        match self.choices {
            Some(cs) => extract_choice(answer, cs).ok() == cs.gold_index(),
            None => normalize(answer) == normalize(&self.gold_text),
        }
    }
}

impl Pipelines<'_> {
    /// Sends `req`; if `parse` fails, retries once as a follow-up turn
    /// restating the required format.
    fn ask_with_protocol<T>(
        &self,
        ctx: &TaskCtx<'_>,
        req: ModelRequest,
        requirement: &str,
        parse: impl Fn(&str) -> Option<T>,
    ) -> Result<(T, RequestDigest), StepError> {
        let (reply, digest) = ctx.ask(self.gateway, &req)?;
        if let Some(v) = parse(&reply) {
            return Ok((v, digest));
        }
        let retry = req.follow_up(
            &reply,
            self.prompts
                .render(PromptRole::ProtocolRetry, &[("requirement", requirement)]),
        );
        let (reply, digest) = ctx.ask(self.gateway, &retry)?;
        parse(&reply)
            .map(|v| (v, digest))
            .ok_or_else(|| StepError::Protocol(format!("reply still violates the format: {requirement}")))
    }

    pub(super) fn llm(&self, prompt: String) -> ModelRequest {
        ModelRequest::llm(prompt).with_decode(self.decode())
    }

    pub(super) fn alm(&self, ctx: &TaskCtx<'_>, prompt: String) -> ModelRequest {
        ModelRequest::alm(ctx.task.audio.clone(), prompt).with_decode(self.decode())
    }

    pub(super) fn predict(
        &self,
        ctx: &TaskCtx<'_>,
        question: &str,
        chain: &ReasoningChain,
    ) -> Result<(Prediction, RequestDigest), StepError> {
        let prompt = self.prompts.render(
            PromptRole::Predict,
            &[("question", question), ("chain", &chain.transcript())],
        );
        self.ask_with_protocol(ctx, self.llm(prompt), PREDICT_REQUIREMENT, parse_predict)
    }

    pub(super) fn validate(
        &self,
        ctx: &TaskCtx<'_>,
        question: &str,
        answer: &str,
        chain: &ReasoningChain,
    ) -> Result<(bool, RequestDigest), StepError> {
        let prompt = self.prompts.render(
            PromptRole::Validate,
            &[
                ("question", question),
                ("answer", answer),
                ("chain", &chain.transcript()),
            ],
        );
        self.ask_with_protocol(ctx, self.llm(prompt), VALIDATE_REQUIREMENT, parse_validate)
    }

    pub(super) fn next_step(
        &self,
        ctx: &TaskCtx<'_>,
        question: &str,
        chain: &ReasoningChain,
    ) -> Result<String, StepError> {
        let prompt = self.prompts.render(
            PromptRole::NextStep,
            &[("question", question), ("chain", &chain.transcript())],
        );
        self.ask_with_protocol(ctx, self.llm(prompt), NEXT_STEP_REQUIREMENT, parse_next_step)
            .map(|(q, _)| q)
    }

    /// Predict, then validate only if the prediction missed. `reuse` lets a
    /// caller hand in a prediction it already made on the same chain.
    pub(super) fn filter(
        &self,
        ctx: &TaskCtx<'_>,
        stage: &str,
        target: &Target<'_>,
        chain: &ReasoningChain,
        reuse: Option<(Prediction, RequestDigest)>,
    ) -> Result<bool, StepError> {
        let (prediction, predict_digest) = match reuse {
            Some(p) => p,
            None => self.predict(ctx, &target.question, chain)?,
        };
        let predicted = match &prediction {
            Prediction::Answer(a) => Some(a.clone()),
            Prediction::Unsure => None,
        };
        let matched = predicted.as_deref().is_some_and(|a| target.matches(a));
        let (validated, validate_digest) = if matched {
            (None, None)
        } else {
            let (v, d) = self.validate(ctx, &target.question, &target.answer, chain)?;
            (Some(v), Some(d))
        };
        let passed = matched || validated == Some(true);
        ctx.record(FilterCheck {
            stage: stage.to_string(),
            target: target.answer.clone(),
            predicted,
            predict_matched: matched,
            validated,
            passed,
            predict_digest: Some(predict_digest),
            validate_digest,
        });
        Ok(passed)
    }

    /// Validation-only check (used after the hierarchy walk).
    pub(super) fn validate_only(
        &self,
        ctx: &TaskCtx<'_>,
        stage: &str,
        target: &Target<'_>,
        chain: &ReasoningChain,
    ) -> Result<bool, StepError> {
        let (v, d) = self.validate(ctx, &target.question, &target.answer, chain)?;
        ctx.record(FilterCheck {
            stage: stage.to_string(),
            target: target.answer.clone(),
            predicted: None,
            predict_matched: false,
            validated: Some(v),
            passed: v,
            predict_digest: None,
            validate_digest: Some(d),
        });
        Ok(v)
    }

    /// Rewrites the chain into the four-tag template, with up to
    /// `rephrase_retries` corrective follow-ups.
    pub(super) fn rephrase(
        &self,
        ctx: &TaskCtx<'_>,
        target: &Target<'_>,
        chain: &ReasoningChain,
    ) -> Result<CotRecord, StepError> {
        let prompt = self.prompts.render(
            PromptRole::Rephrase,
            &[
                ("question", &target.question),
                ("answer", &target.answer),
                ("caption", chain.caption()),
                ("chain", &chain.transcript()),
            ],
        );
        let mut req = self.llm(prompt);
        let mut last_error = String::new();
        for _ in 0..=self.config.rephrase_retries {
            let (reply, _) = ctx.ask(self.gateway, &req)?;
            match parse_record(&reply) {
                Ok(record) => return Ok(record),
                Err(e) => last_error = e.to_string(),
            }
            let requirement = format!("{REPHRASE_REQUIREMENT} Problem: {last_error}.");
            req = req.follow_up(
                &reply,
                self.prompts
                    .render(PromptRole::ProtocolRetry, &[("requirement", &requirement)]),
            );
        }
        Err(StepError::MalformedRephrase(last_error))
    }
}
