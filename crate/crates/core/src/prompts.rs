//! Versioned prompt pack: one text file per orchestration role, with
//! `{placeholder}` substitution. The built-in pack is compiled in; a
//! directory with the same layout overrides it.

use std::collections::BTreeMap;
use std::path::Path;

use sha2::{Digest, Sha256};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum PromptRole {
    Caption,
    SubQuestions,
    Predict,
    Validate,
    NextStep,
    Rephrase,
    DescribeChoice,
    VerifyChoice,
    LevelQuestion,
    Screen,
    EvalCot,
    EvalPlain,
    ProtocolRetry,
}

impl PromptRole {
    pub const ALL: [PromptRole; 13] = [
        PromptRole::Caption,
        PromptRole::SubQuestions,
        PromptRole::Predict,
        PromptRole::Validate,
        PromptRole::NextStep,
        PromptRole::Rephrase,
        PromptRole::DescribeChoice,
        PromptRole::VerifyChoice,
        PromptRole::LevelQuestion,
        PromptRole::Screen,
        PromptRole::EvalCot,
        PromptRole::EvalPlain,
        PromptRole::ProtocolRetry,
    ];

    pub fn file_stem(self) -> &'static str {
        match self {
            PromptRole::Caption => "caption",
            PromptRole::SubQuestions => "subquestions",
            PromptRole::Predict => "predict",
            PromptRole::Validate => "validate",
            PromptRole::NextStep => "next_step",
            PromptRole::Rephrase => "rephrase",
            PromptRole::DescribeChoice => "describe_choice",
            PromptRole::VerifyChoice => "verify_choice",
            PromptRole::LevelQuestion => "level_question",
            PromptRole::Screen => "screen",
            PromptRole::EvalCot => "eval_cot",
            PromptRole::EvalPlain => "eval_plain",
            PromptRole::ProtocolRetry => "protocol_retry",
        }
    }

    /// Placeholders the role's template must contain.
    pub fn placeholders(self) -> &'static [&'static str] {
        match self {
            PromptRole::Caption => &[],
            PromptRole::SubQuestions => &["question", "count"],
            PromptRole::Predict => &["question", "chain"],
            PromptRole::Validate => &["question", "answer", "chain"],
            PromptRole::NextStep => &["question", "chain"],
            PromptRole::Rephrase => &["question", "answer", "caption", "chain"],
            PromptRole::DescribeChoice => &["question", "choice"],
            PromptRole::VerifyChoice => &["choice", "description"],
            PromptRole::LevelQuestion => &["question", "choices"],
            PromptRole::Screen => &["label", "candidate"],
            PromptRole::EvalCot => &["question", "choices"],
            PromptRole::EvalPlain => &["question", "choices"],
            PromptRole::ProtocolRetry => &["requirement"],
        }
    }
}

#[derive(Debug, Error)]
pub enum PromptError {
    #[error("prompt pack {dir}: missing {file}")]
    Missing { dir: String, file: String },
    #[error("prompt `{role}` lacks placeholder {{{placeholder}}}")]
    MissingPlaceholder {
        role: &'static str,
        placeholder: &'static str,
    },
    #[error("prompt pack {dir}: {source}")]
    Io {
        dir: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptPack {
    version: String,
    templates: BTreeMap<PromptRole, String>,
}

macro_rules! builtin {
    ($($role:ident => $file:literal),* $(,)?) => {
        [$((PromptRole::$role, include_str!(concat!("../prompts/", $file)))),*]
    };
}

impl PromptPack {
    pub fn builtin() -> Self {
        let files = builtin![
            Caption => "caption.txt",
            SubQuestions => "subquestions.txt",
            Predict => "predict.txt",
            Validate => "validate.txt",
            NextStep => "next_step.txt",
            Rephrase => "rephrase.txt",
            DescribeChoice => "describe_choice.txt",
            VerifyChoice => "verify_choice.txt",
            LevelQuestion => "level_question.txt",
            Screen => "screen.txt",
            EvalCot => "eval_cot.txt",
            EvalPlain => "eval_plain.txt",
            ProtocolRetry => "protocol_retry.txt",
        ];
        let pack = Self {
            version: include_str!("../prompts/version").trim().to_string(),
            templates: files.iter().map(|(r, t)| (*r, t.trim_end().to_string())).collect(),
        };
        pack.check().expect("built-in prompt pack is valid");
        pack
    }

    /// Loads `<dir>/version` and `<dir>/<role>.txt` for every role.
    pub fn load(dir: &Path) -> Result<Self, PromptError> {
        let read = |file: &str| {
            let path = dir.join(file);
            if !path.exists() {
                return Err(PromptError::Missing {
                    dir: dir.display().to_string(),
                    file: file.to_string(),
                });
            }
            std::fs::read_to_string(&path).map_err(|source| PromptError::Io {
                dir: dir.display().to_string(),
                source,
            })
        };
        let version = read("version")?.trim().to_string();
        let mut templates = BTreeMap::new();
        for role in PromptRole::ALL {
            let text = read(&format!("{}.txt", role.file_stem()))?;
            templates.insert(role, text.trim_end().to_string());
        }
        let pack = Self { version, templates };
        pack.check()?;
        Ok(pack)
    }

    fn check(&self) -> Result<(), PromptError> {
        for role in PromptRole::ALL {
            let t = &self.templates[&role];
            for p in role.placeholders() {
                if !t.contains(&format!("{{{p}}}")) {
                    return Err(PromptError::MissingPlaceholder {
                        role: role.file_stem(),
                        placeholder: p,
                    });
                }
            }
        }
        Ok(())
    }

    pub fn version(&self) -> &str {
        &self.version
    }

    pub fn template(&self, role: PromptRole) -> &str {
        &self.templates[&role]
    }

    /// Substitutes `{key}` occurrences in one left-to-right pass, so values
    /// containing braces are never re-expanded.
    pub fn render(&self, role: PromptRole, vars: &[(&str, &str)]) -> String {
        let template = self.template(role);
        let mut out = String::with_capacity(template.len() + 256);
        let mut rest = template;
        while let Some(open) = rest.find('{') {
            out.push_str(&rest[..open]);
            let after = &rest[open + 1..];
            let replaced = after.find('}').and_then(|close| {
                let key = &after[..close];
                vars.iter().find(|(k, _)| *k == key).map(|(_, v)| (close, *v))
            });
            match replaced {
                Some((close, value)) => {
                    out.push_str(value);
                    rest = &after[close + 1..];
                }
                None => {
                    out.push('{');
                    rest = after;
                }
            }
        }
        out.push_str(rest);
        out
    }

    /// sha256 over the version and every (role, template) pair.
    pub fn hash(&self) -> String {
        let mut h = Sha256::new();
        h.update(b"version\0");
        h.update(self.version.as_bytes());
        for (role, text) in &self.templates {
            h.update(b"\0");
            h.update(role.file_stem().as_bytes());
            h.update(b"\0");
            h.update(text.as_bytes());
        }
        hex::encode(h.finalize())
    }
}

impl PromptPack {
    /// Inverse of `render`: if `text` is an instance of `role`'s template,
    /// returns the substituted values. Values are matched lazily, except
    /// that the last one before a trailing literal extends to that literal.
    pub fn match_role(&self, role: PromptRole, text: &str) -> Option<BTreeMap<String, String>> {
        let mut parts: Vec<(bool, &str)> = Vec::new();
        let mut rest = self.template(role);
        while let Some(open) = rest.find('{') {
            let close = rest[open..].find('}')? + open;
            parts.push((false, &rest[..open]));
            parts.push((true, &rest[open + 1..close]));
            rest = &rest[close + 1..];
        }
        parts.push((false, rest));
        let parts: Vec<(bool, &str)> = parts.into_iter().filter(|(var, s)| *var || !s.is_empty()).collect();

        let mut out = BTreeMap::new();
        let mut pos = 0usize;
        let mut i = 0usize;
        while i < parts.len() {
            let (is_var, s) = parts[i];
            if !is_var {
                if !text[pos..].starts_with(s) {
                    return None;
                }
                pos += s.len();
                i += 1;
                continue;
            }
            let value = match parts.get(i + 1) {
                None => {
                    let v = &text[pos..];
                    pos = text.len();
                    v
                }
                Some((true, _)) => return None,
                Some((false, lit)) => {
                    let at = if i + 2 == parts.len() {
                        text[pos..].strip_suffix(lit).map(str::len)?
                    } else {
                        text[pos..].find(lit)?
                    };
                    let v = &text[pos..pos + at];
                    pos += at;
                    v
                }
            };
            out.insert(s.to_string(), value.to_string());
            i += 1;
        }
        (pos == text.len()).then_some(out)
    }

    /// Finds the role whose template produced `text`. Roles with more
    /// literal text are tried first so short generic templates never
    /// shadow specific ones.
    pub fn identify(&self, text: &str) -> Option<(PromptRole, BTreeMap<String, String>)> {
        let mut roles = PromptRole::ALL.to_vec();
        let literal_len = |r: &PromptRole| {
            let t = self.template(*r);
            t.len() - r.placeholders().iter().map(|p| p.len() + 2).sum::<usize>()
        };
        roles.sort_by_key(|r| std::cmp::Reverse(literal_len(r)));
        roles.into_iter().find_map(|r| self.match_role(r, text).map(|m| (r, m)))
    }
}

impl Default for PromptPack {
    fn default() -> Self {
        Self::builtin()
    }
}
