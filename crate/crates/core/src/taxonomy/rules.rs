use std::collections::BTreeMap;
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::tree::{TaxonomyTree, ROOT};
use super::TaxonomyError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleAction {
    RemoveNode,
    MergeInto,
    MoveUnder,
}

impl RuleAction {
    fn keyword(self) -> &'static str {
        match self {
            RuleAction::RemoveNode => "remove_node",
            RuleAction::MergeInto => "merge_into",
            RuleAction::MoveUnder => "move_under",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectionRule {
    pub action: RuleAction,
    pub subject: String,
    pub target: Option<String>,
    /// Source line, 0 when built in code.
    #[serde(default)]
    pub line: usize,
}

impl CorrectionRule {
    pub fn remove(subject: &str) -> Self {
        Self {
            action: RuleAction::RemoveNode,
            subject: subject.into(),
            target: None,
            line: 0,
        }
    }

    pub fn merge(subject: &str, target: &str) -> Self {
        Self {
            action: RuleAction::MergeInto,
            subject: subject.into(),
            target: Some(target.into()),
            line: 0,
        }
    }

    pub fn move_under(subject: &str, target: &str) -> Self {
        Self {
            action: RuleAction::MoveUnder,
            subject: subject.into(),
            target: Some(target.into()),
            line: 0,
        }
    }
}

impl fmt::Display for CorrectionRule {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{} {}", self.action.keyword(), self.subject)?;
        if let Some(t) = &self.target {
            write!(f, " {t}")?;
        }
        Ok(())
    }
}

/// A versioned, ordered list of corrections.
///
/// ```text
/// # comment
/// version 1
/// merge_into Caw Crow
/// move_under Gong Percussion
/// remove_node Narration
/// ```
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct RuleSet {
    pub version: u32,
    pub rules: Vec<CorrectionRule>,
}

impl RuleSet {
    pub fn new(rules: Vec<CorrectionRule>) -> Self {
        Self { version: 1, rules }
    }

    pub fn load(path: &Path) -> Result<Self, TaxonomyError> {
        let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        parse_rules(&text)
    }
}

pub fn parse_rules(text: &str) -> Result<RuleSet, TaxonomyError> {
    let mut version = None;
    let mut rules = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let bad = |reason: String| TaxonomyError::RulesParse { line, reason };
        let words: Vec<&str> = content.split_whitespace().collect();
        if words[0] == "version" {
            if version.is_some() || !rules.is_empty() {
                return Err(bad("version must appear once, before any rule".into()));
            }
            let v = words
                .get(1)
                .filter(|_| words.len() == 2)
                .and_then(|v| v.parse::<u32>().ok())
                .ok_or_else(|| bad("expected `version <integer>`".into()))?;
            version = Some(v);
            continue;
        }
        if version.is_none() {
            return Err(bad("rules file must start with a `version N` line".into()));
        }
        let action = match words[0] {
            "remove_node" => RuleAction::RemoveNode,
            "merge_into" => RuleAction::MergeInto,
            "move_under" => RuleAction::MoveUnder,
            other => return Err(bad(format!("unknown action `{other}`"))),
        };
        let arity = if action == RuleAction::RemoveNode { 2 } else { 3 };
        if words.len() != arity {
            return Err(bad(format!("`{}` takes {} argument(s)", words[0], arity - 1)));
        }
        rules.push(CorrectionRule {
            action,
            subject: words[1].to_string(),
            target: words.get(2).map(|s| s.to_string()),
            line,
        });
    }
    Ok(RuleSet {
        version: version.ok_or(TaxonomyError::RulesParse {
            line: 0,
            reason: "missing `version N` line".into(),
        })?,
        rules,
    })
}

impl TaxonomyTree {
    /// Applies rules in order, then drops every leaf hanging directly off
    /// the root. A rule that would orphan nodes or create a cycle is
    /// rejected and nothing is returned.
    pub fn apply_corrections(&self, rules: &RuleSet) -> Result<TaxonomyTree, TaxonomyError> {
        let mut parent = self.parent_map().clone();
        let mut aliases = self.aliases().clone();
        for rule in &rules.rules {
            apply_one(&mut parent, &mut aliases, rule)?;
        }
        let has_children: std::collections::BTreeSet<String> = parent.values().cloned().collect();
        parent.retain(|n, p| !(p == ROOT && !has_children.contains(n)));
        TaxonomyTree::from_parent_map(parent, aliases)
    }
}

fn apply_one(
    parent: &mut BTreeMap<String, String>,
    aliases: &mut BTreeMap<String, String>,
    rule: &CorrectionRule,
) -> Result<(), TaxonomyError> {
    let conflict = |reason: String| TaxonomyError::RuleConflict {
        line: rule.line,
        rule: rule.to_string(),
        reason,
    };
    let subject = rule.subject.as_str();
    if !parent.contains_key(subject) {
        return Err(conflict(format!("unknown node {subject}")));
    }
    let target = match (rule.action, rule.target.as_deref()) {
        (RuleAction::RemoveNode, None) => None,
        (RuleAction::RemoveNode, Some(_)) => return Err(conflict("remove_node takes no target".into())),
        (_, None) => return Err(conflict("target required".into())),
        (_, Some(t)) => {
            if t == subject {
                return Err(conflict("subject and target are the same node".into()));
            }
            if !parent.contains_key(t) {
                return Err(conflict(format!("unknown node {t}")));
            }
            if descends_from(parent, t, subject) {
                return Err(conflict(format!("{t} lies under {subject}; this would create a cycle")));
            }
            Some(t.to_string())
        }
    };
    match rule.action {
        RuleAction::RemoveNode => {
            let kids = parent.values().filter(|p| p.as_str() == subject).count();
            if kids > 0 {
                return Err(conflict(format!(
                    "{subject} has {kids} children that would be orphaned"
                )));
            }
            parent.remove(subject);
        }
        RuleAction::MergeInto => {
            let target = target.expect("checked");
            for p in parent.values_mut() {
                if p == subject {
                    *p = target.clone();
                }
            }
            parent.remove(subject);
            for v in aliases.values_mut() {
                if v == subject {
                    *v = target.clone();
                }
            }
            aliases.insert(subject.to_string(), target);
        }
        RuleAction::MoveUnder => {
            parent.insert(subject.to_string(), target.expect("checked"));
        }
    }
    Ok(())
}

/// True when `node` equals or lies below `ancestor`.
fn descends_from(parent: &BTreeMap<String, String>, node: &str, ancestor: &str) -> bool {
    let mut cur = node;
    for _ in 0..=parent.len() {
        if cur == ancestor {
            return true;
        }
        match parent.get(cur) {
            Some(p) => cur = p,
            None => return false,
        }
    }
    false
}
