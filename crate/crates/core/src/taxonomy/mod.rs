//! Label taxonomy: weighted multi-parent graph from annotations, pruned to a
//! rooted tree and curated with a declarative rules file.

mod rules;
mod tree;

use std::collections::{BTreeMap, BTreeSet};
use std::path::{Path, PathBuf};

use thiserror::Error;

pub use rules::{parse_rules, CorrectionRule, RuleAction, RuleSet};
pub use tree::{TaxonomyTree, TreeNode, DEFAULT_SIBLING_FLOOR, ROOT};

#[derive(Debug, Error)]
pub enum TaxonomyError {
    #[error("no annotations given")]
    EmptyAnnotations,
    #[error("annotation line {line}: {reason}")]
    Annotation { line: usize, reason: String },
    #[error("sample {sample_id}: label {label} is its own parent")]
    SelfEdge { sample_id: String, label: String },
    #[error("cycle detected through {node}")]
    CycleDetected { node: String },
    #[error("rules line {line}: {reason}")]
    RulesParse { line: usize, reason: String },
    #[error("rule `{rule}` (line {line}) rejected: {reason}")]
    RuleConflict { line: usize, rule: String, reason: String },
    #[error("unknown node {0}")]
    UnknownNode(String),
    #[error("{0} is not a leaf")]
    NotALeaf(String),
    #[error("tree export: {0}")]
    Export(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// One annotated clip: labels in file order (first label is the primary
/// sound) plus explicit (parent, child) relations.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Annotation {
    pub sample_id: String,
    pub labels: Vec<String>,
    pub relations: Vec<(String, String)>,
}

impl Annotation {
    /// Builds relations from an ordered path, leaf first.
    pub fn from_path(sample_id: impl Into<String>, path: &[&str]) -> Self {
        let labels: Vec<String> = path.iter().map(|s| s.to_string()).collect();
        let relations = labels.windows(2).map(|w| (w[1].clone(), w[0].clone())).collect();
        Self {
            sample_id: sample_id.into(),
            labels,
            relations,
        }
    }

    pub fn with_relations(sample_id: impl Into<String>, labels: &[&str], relations: &[(&str, &str)]) -> Self {
        Self {
            sample_id: sample_id.into(),
            labels: labels.iter().map(|s| s.to_string()).collect(),
            relations: relations.iter().map(|(p, c)| (p.to_string(), c.to_string())).collect(),
        }
    }

    pub fn first_label(&self) -> Option<&str> {
        self.labels.first().map(String::as_str)
    }
}

/// Reads `sample_id<TAB>labels<TAB>relations`. Labels are comma separated;
/// relations are `parent>child` pairs separated by `;`. When the relations
/// column is empty or absent the label list is read as a path, leaf first.
pub fn read_annotations(path: &Path) -> Result<Vec<Annotation>, TaxonomyError> {
    let text = std::fs::read_to_string(path).map_err(|source| TaxonomyError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    parse_annotations(&text)
}

pub fn parse_annotations(text: &str) -> Result<Vec<Annotation>, TaxonomyError> {
    let mut reader = csv::ReaderBuilder::new()
        .delimiter(b'\t')
        .quoting(false)
        .comment(Some(b'#'))
        .flexible(true)
        .has_headers(true)
        .from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| TaxonomyError::Annotation {
        line: 1,
        reason: e.to_string(),
    })?;
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, labels_col) = match (col("sample_id"), col("labels")) {
        (Some(i), Some(l)) => (i, l),
        _ => {
            return Err(TaxonomyError::Annotation {
                line: 1,
                reason: "header must name sample_id and labels columns".into(),
            })
        }
    };
    let rel_col = col("relations");
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| TaxonomyError::Annotation {
            line: e.position().map(|p| p.line() as usize).unwrap_or(0),
            reason: e.to_string(),
        })?;
        let line = record.position().map(|p| p.line() as usize).unwrap_or(0);
        let bad = |reason: String| TaxonomyError::Annotation { line, reason };
        let sample_id = record.get(id_col).unwrap_or("").trim().to_string();
        if sample_id.is_empty() {
            return Err(bad("empty sample_id".into()));
        }
        let labels: Vec<String> = record
            .get(labels_col)
            .unwrap_or("")
            .split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(str::to_string)
            .collect();
        if labels.is_empty() {
            return Err(bad(format!("sample {sample_id} has no labels")));
        }
        let rel_field = rel_col.and_then(|c| record.get(c)).unwrap_or("").trim();
        let relations = if rel_field.is_empty() {
            labels.windows(2).map(|w| (w[1].clone(), w[0].clone())).collect()
        } else {
            rel_field
                .split(';')
                .map(str::trim)
                .filter(|s| !s.is_empty())
                .map(|pair| match pair.split_once('>') {
                    Some((p, c)) if !p.trim().is_empty() && !c.trim().is_empty() => {
                        Ok((p.trim().to_string(), c.trim().to_string()))
                    }
                    _ => Err(bad(format!("relation `{pair}` is not parent>child"))),
                })
                .collect::<Result<_, _>>()?
        };
        out.push(Annotation {
            sample_id,
            labels,
            relations,
        });
    }
    Ok(out)
}

/// Weighted (parent, child) graph. A weight counts the samples asserting
/// the relation.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LabelGraph {
    nodes: BTreeSet<String>,
    edges: BTreeMap<(String, String), u64>,
}

impl LabelGraph {
    pub fn build(annotations: &[Annotation]) -> Result<Self, TaxonomyError> {
        if annotations.is_empty() {
            return Err(TaxonomyError::EmptyAnnotations);
        }
        let mut g = LabelGraph::default();
        for a in annotations {
            g.nodes.extend(a.labels.iter().cloned());
            let pairs: BTreeSet<&(String, String)> = a.relations.iter().collect();
            for (p, c) in pairs {
                if p == c {
                    return Err(TaxonomyError::SelfEdge {
                        sample_id: a.sample_id.clone(),
                        label: p.clone(),
                    });
                }
                g.nodes.insert(p.clone());
                g.nodes.insert(c.clone());
                *g.edges.entry((p.clone(), c.clone())).or_insert(0) += 1;
            }
        }
        Ok(g)
    }

    /// Adds `weight` to an edge; used for synthetic graphs.
    pub fn add_edge(&mut self, parent: &str, child: &str, weight: u64) {
        assert!(
            parent != child && weight > 0,
            "edges need distinct ends and positive weight"
        );
        self.nodes.insert(parent.to_string());
        self.nodes.insert(child.to_string());
        *self.edges.entry((parent.to_string(), child.to_string())).or_insert(0) += weight;
    }

    pub fn add_node(&mut self, node: &str) {
        self.nodes.insert(node.to_string());
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.nodes.iter().map(String::as_str)
    }

    pub fn node_count(&self) -> usize {
        self.nodes.len()
    }

    pub fn edges(&self) -> impl Iterator<Item = (&str, &str, u64)> {
        self.edges.iter().map(|((p, c), w)| (p.as_str(), c.as_str(), *w))
    }

    pub fn weight(&self, parent: &str, child: &str) -> u64 {
        self.edges
            .get(&(parent.to_string(), child.to_string()))
            .copied()
            .unwrap_or(0)
    }

    /// Candidate parents of `child` with their weights.
    pub fn parents_of(&self, child: &str) -> Vec<(&str, u64)> {
        self.edges
            .iter()
            .filter(|((_, c), _)| c == child)
            .map(|((p, _), w)| (p.as_str(), *w))
            .collect()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }
}

/// Graph construction, dominant-parent pruning and rule application in one
/// step.
pub fn curate(annotations: &[Annotation], rules: &RuleSet) -> Result<TaxonomyTree, TaxonomyError> {
    let graph = LabelGraph::build(annotations)?;
    let tree = TaxonomyTree::prune(&graph)?;
    tree.apply_corrections(rules)
}
