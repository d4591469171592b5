use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use super::{LabelGraph, TaxonomyError};

/// Id of the synthetic root. Not counted as a node.
pub const ROOT: &str = "<root>";

pub const DEFAULT_SIBLING_FLOOR: usize = 3;

/// Rooted label tree. Immutable once built; every mutation returns a new,
/// re-validated tree.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TaxonomyTree {
    parent: BTreeMap<String, String>,
    children: BTreeMap<String, Vec<String>>,
    depth: BTreeMap<String, usize>,
    aliases: BTreeMap<String, String>,
}

/// Row of the JSON tree export.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TreeNode {
    pub node: String,
    /// `None` for level-1 nodes.
    pub parent: Option<String>,
    pub depth: usize,
}

#[derive(Serialize, Deserialize)]
struct TreeExport {
    nodes: Vec<TreeNode>,
    #[serde(default)]
    aliases: BTreeMap<String, String>,
}

impl TaxonomyTree {
    /// Builds and validates a tree from a child→parent map. Parents named
    /// [`ROOT`] mark level-1 nodes.
    pub fn from_parent_map(
        parent: BTreeMap<String, String>,
        aliases: BTreeMap<String, String>,
    ) -> Result<Self, TaxonomyError> {
        if parent.contains_key(ROOT) {
            return Err(TaxonomyError::Export(format!("{ROOT} cannot have a parent")));
        }
        for p in parent.values() {
            if p != ROOT && !parent.contains_key(p) {
                return Err(TaxonomyError::UnknownNode(p.clone()));
            }
        }
        let mut depth = BTreeMap::new();
        for start in parent.keys() {
            let mut chain = Vec::new();
            let mut seen = BTreeSet::new();
            let mut cur = start.as_str();
            let base = loop {
                if cur == ROOT {
                    break 0;
                }
                if let Some(&d) = depth.get(cur) {
                    break d;
                }
                if !seen.insert(cur) {
                    return Err(TaxonomyError::CycleDetected { node: cur.to_string() });
                }
                chain.push(cur);
                cur = parent[cur].as_str();
            };
            for (i, node) in chain.iter().rev().enumerate() {
                depth.insert(node.to_string(), base + i + 1);
            }
        }
        let mut children: BTreeMap<String, Vec<String>> = BTreeMap::new();
        children.insert(ROOT.to_string(), Vec::new());
        for (c, p) in &parent {
            children.entry(p.clone()).or_default().push(c.clone());
        }
        // BTreeMap iteration already yields children in lexicographic order
        Ok(Self {
            parent,
            children,
            depth,
            aliases,
        })
    }

    /// Convenience constructor: `(child, parent)` with `None` for level-1.
    pub fn from_pairs(pairs: &[(&str, Option<&str>)]) -> Result<Self, TaxonomyError> {
        let map = pairs
            .iter()
            .map(|(c, p)| (c.to_string(), p.unwrap_or(ROOT).to_string()))
            .collect();
        Self::from_parent_map(map, BTreeMap::new())
    }

    /// Keeps each child's maximum-weight parent (ties go to the
    /// lexicographically smallest). Parentless nodes hang off the root.
    pub fn prune(graph: &LabelGraph) -> Result<Self, TaxonomyError> {
        if graph.is_empty() {
            return Err(TaxonomyError::EmptyAnnotations);
        }
        let mut best: BTreeMap<&str, (&str, u64)> = BTreeMap::new();
        // edges iterate sorted by (parent, child); strict > keeps the
        // smallest parent on ties
        for (p, c, w) in graph.edges() {
            match best.get(c) {
                Some(&(_, bw)) if bw >= w => {}
                _ => {
                    best.insert(c, (p, w));
                }
            }
        }
        let map = graph
            .nodes()
            .map(|n| {
                let p = best.get(n).map(|(p, _)| *p).unwrap_or(ROOT);
                (n.to_string(), p.to_string())
            })
            .collect();
        Self::from_parent_map(map, BTreeMap::new())
    }

    /// Unit-weight graph with the tree's edges; pruning it gives the tree
    /// back.
    pub fn to_graph(&self) -> LabelGraph {
        let mut g = LabelGraph::default();
        for (c, p) in &self.parent {
            if p == ROOT {
                g.add_node(c);
            } else {
                g.add_edge(p, c, 1);
            }
        }
        g
    }

    /// Label nodes, excluding the synthetic root.
    pub fn node_count(&self) -> usize {
        self.parent.len()
    }

    pub fn nodes(&self) -> impl Iterator<Item = &str> {
        self.parent.keys().map(String::as_str)
    }

    pub fn contains(&self, node: &str) -> bool {
        self.parent.contains_key(node)
    }

    pub fn is_leaf(&self, node: &str) -> bool {
        self.contains(node) && self.children.get(node).is_none_or(|c| c.is_empty())
    }

    /// Leaves in lexicographic order.
    pub fn leaves(&self) -> Vec<&str> {
        self.nodes().filter(|n| self.is_leaf(n)).collect()
    }

    pub fn leaf_count(&self) -> usize {
        self.nodes().filter(|n| self.is_leaf(n)).count()
    }

    pub fn level1(&self) -> &[String] {
        self.children(ROOT)
    }

    pub fn max_depth(&self) -> usize {
        self.depth.values().copied().max().unwrap_or(0)
    }

    pub fn depth(&self, node: &str) -> Option<usize> {
        if node == ROOT {
            Some(0)
        } else {
            self.depth.get(node).copied()
        }
    }

    /// Parent id; [`ROOT`] for level-1 nodes.
    pub fn parent(&self, node: &str) -> Option<&str> {
        self.parent.get(node).map(String::as_str)
    }

    pub fn children(&self, node: &str) -> &[String] {
        self.children.get(node).map(Vec::as_slice).unwrap_or(&[])
    }

    /// Label → canonical node recorded by merges.
    pub fn aliases(&self) -> &BTreeMap<String, String> {
        &self.aliases
    }

    /// Resolves a raw label through merge aliases.
    pub fn resolve<'a>(&'a self, label: &'a str) -> Option<&'a str> {
        let mut cur = label;
        for _ in 0..=self.aliases.len() {
            if self.contains(cur) {
                return Some(cur);
            }
            cur = self.aliases.get(cur)?;
        }
        None
    }

    /// True when `ancestor` is a strict ancestor of `node`.
    pub fn is_ancestor(&self, ancestor: &str, node: &str) -> bool {
        let mut cur = self.parent(node);
        while let Some(p) = cur {
            if p == ancestor {
                return true;
            }
            if p == ROOT {
                return false;
            }
            cur = self.parent(p);
        }
        false
    }

    /// Other children of the node's parent, any kind, lexicographic.
    pub fn siblings(&self, node: &str) -> Result<Vec<&str>, TaxonomyError> {
        let p = self
            .parent(node)
            .ok_or_else(|| TaxonomyError::UnknownNode(node.to_string()))?;
        Ok(self
            .children(p)
            .iter()
            .map(String::as_str)
            .filter(|c| *c != node)
            .collect())
    }

    /// Sibling leaves; when fewer than `sibling_floor`, cousin leaves
    /// (children of the parent's siblings) are appended. Each group is
    /// sorted lexicographically.
    pub fn neighbors(&self, leaf: &str, sibling_floor: usize) -> Result<Vec<String>, TaxonomyError> {
        if !self.contains(leaf) {
            return Err(TaxonomyError::UnknownNode(leaf.to_string()));
        }
        if !self.is_leaf(leaf) {
            return Err(TaxonomyError::NotALeaf(leaf.to_string()));
        }
        let parent = self.parent(leaf).expect("contained");
        let mut out: Vec<String> = self
            .children(parent)
            .iter()
            .filter(|c| c.as_str() != leaf && self.is_leaf(c))
            .cloned()
            .collect();
        if out.len() < sibling_floor && parent != ROOT {
            let mut cousins: Vec<String> = self
                .siblings(parent)?
                .into_iter()
                .flat_map(|uncle| self.children(uncle).iter())
                .filter(|c| self.is_leaf(c))
                .cloned()
                .collect();
            cousins.sort();
            out.extend(cousins);
        }
        Ok(out)
    }

    /// Ancestors from level 1 down to `node`, root excluded.
    pub fn path_to_root(&self, node: &str) -> Result<Vec<String>, TaxonomyError> {
        if !self.contains(node) {
            return Err(TaxonomyError::UnknownNode(node.to_string()));
        }
        let mut path = vec![node.to_string()];
        let mut cur = self.parent(node);
        while let Some(p) = cur.filter(|p| *p != ROOT) {
            path.push(p.to_string());
            cur = self.parent(p);
        }
        path.reverse();
        Ok(path)
    }

    /// Structural check: parent entries + 1 == nodes incl. root, and a DFS
    /// from the root reaches every node exactly once.
    pub fn check(&self) -> Result<(), String> {
        let mut seen = BTreeSet::new();
        let mut stack = vec![ROOT];
        while let Some(n) = stack.pop() {
            if !seen.insert(n) {
                return Err(format!("{n} visited twice"));
            }
            for c in self.children(n) {
                if self.parent(c) != Some(n) {
                    return Err(format!("{c} listed under {n} but parent is {:?}", self.parent(c)));
                }
                stack.push(c);
            }
        }
        if seen.len() != self.parent.len() + 1 {
            return Err(format!("reached {} of {} nodes", seen.len(), self.parent.len() + 1));
        }
        for (n, kids) in &self.children {
            if !kids.windows(2).all(|w| w[0] < w[1]) {
                return Err(format!("children of {n} are not sorted"));
            }
        }
        Ok(())
    }

    pub fn export(&self) -> Vec<TreeNode> {
        let mut out = Vec::with_capacity(self.parent.len());
        let mut stack: Vec<&str> = self.level1().iter().rev().map(String::as_str).collect();
        while let Some(n) = stack.pop() {
            out.push(TreeNode {
                node: n.to_string(),
                parent: self.parent(n).filter(|p| *p != ROOT).map(str::to_string),
                depth: self.depth(n).unwrap_or(0),
            });
            stack.extend(self.children(n).iter().rev().map(String::as_str));
        }
        out
    }

    pub fn to_json(&self) -> String {
        let export = TreeExport {
            nodes: self.export(),
            aliases: self.aliases.clone(),
        };
        serde_json::to_string_pretty(&export).expect("tree serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, TaxonomyError> {
        let export: TreeExport = serde_json::from_str(text).map_err(|e| TaxonomyError::Export(e.to_string()))?;
        let mut map = BTreeMap::new();
        for n in &export.nodes {
            let p = n.parent.clone().unwrap_or_else(|| ROOT.to_string());
            if map.insert(n.node.clone(), p).is_some() {
                return Err(TaxonomyError::Export(format!("node {} listed twice", n.node)));
            }
        }
        let tree = Self::from_parent_map(map, export.aliases)?;
        for n in &export.nodes {
            if tree.depth(&n.node) != Some(n.depth) {
                return Err(TaxonomyError::Export(format!(
                    "depth of {} disagrees with parent chain",
                    n.node
                )));
            }
        }
        Ok(tree)
    }

    pub(super) fn parent_map(&self) -> &BTreeMap<String, String> {
        &self.parent
    }
}
