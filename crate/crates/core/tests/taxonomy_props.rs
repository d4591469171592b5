use std::collections::BTreeMap;

use proptest::prelude::*;
use soundcot::taxonomy::{CorrectionRule, LabelGraph, RuleSet, TaxonomyError, TaxonomyTree, ROOT};

fn name(i: usize) -> String {
    format!("n{i:02}")
}

/// Edges (parent index, child index, weight) over 10 nodes. With `dag` the
/// parent index is always smaller, so pruning cannot cycle.
fn graph_strategy(dag: bool) -> impl Strategy<Value = Vec<(usize, usize, u64)>> {
    prop::collection::vec((0usize..10, 0usize..10, 1u64..6), 1..30).prop_map(move |edges| {
        edges
            .into_iter()
            .filter(|(p, c, _)| p != c)
            .map(|(p, c, w)| if dag && p > c { (c, p, w) } else { (p, c, w) })
            .collect()
    })
}

fn build(edges: &[(usize, usize, u64)]) -> LabelGraph {
    let mut g = LabelGraph::default();
    for i in 0..10 {
        g.add_node(&name(i));
    }
    for &(p, c, w) in edges {
        g.add_edge(&name(p), &name(c), w);
    }
    g
}

/// Brute force: for every child enumerate all candidate parents.
fn oracle_parents(g: &LabelGraph) -> BTreeMap<String, String> {
    g.nodes()
        .map(|child| {
            let mut best: Option<(String, u64)> = None;
            for p in g.nodes() {
                let w = g.weight(p, child);
                if w == 0 {
                    continue;
                }
                let better = match &best {
                    None => true,
                    Some((bp, bw)) => w > *bw || (w == *bw && p < bp.as_str()),
                };
                if better {
                    best = Some((p.to_string(), w));
                }
            }
            (child.to_string(), best.map(|b| b.0).unwrap_or_else(|| ROOT.to_string()))
        })
        .collect()
}

fn has_cycle(parent: &BTreeMap<String, String>) -> bool {
    parent.keys().any(|start| {
        let mut cur = start.as_str();
        for _ in 0..=parent.len() {
            match parent.get(cur) {
                Some(p) => cur = p,
                None => return false,
            }
        }
        true
    })
}

proptest! {
    #[test]
    fn prune_matches_brute_force(edges in graph_strategy(false)) {
        let g = build(&edges);
        let expected = oracle_parents(&g);
        match TaxonomyTree::prune(&g) {
            Ok(t) => {
                prop_assert!(!has_cycle(&expected));
                for (c, p) in &expected {
                    prop_assert_eq!(t.parent(c), Some(p.as_str()));
                }
                prop_assert!(t.check().is_ok());
            }
            Err(TaxonomyError::CycleDetected { .. }) => prop_assert!(has_cycle(&expected)),
            Err(e) => prop_assert!(false, "unexpected {e}"),
        }
    }

    #[test]
    fn prune_is_idempotent(edges in graph_strategy(true)) {
        let t = TaxonomyTree::prune(&build(&edges)).unwrap();
        prop_assert_eq!(node_count_plus_root(&t), t.node_count() + 1);
        prop_assert_eq!(TaxonomyTree::prune(&t.to_graph()).unwrap(), t);
    }

    #[test]
    fn neighbors_match_exhaustive_scan(edges in graph_strategy(true), floor in 0usize..5) {
        let t = TaxonomyTree::prune(&build(&edges)).unwrap();
        for leaf in t.leaves() {
            let got = t.neighbors(leaf, floor).unwrap();
            let p = t.parent(leaf).unwrap();
            let mut sibs: Vec<String> = t.nodes()
                .filter(|n| *n != leaf && t.parent(n) == Some(p) && t.is_leaf(n))
                .map(str::to_string)
                .collect();
            sibs.sort();
            let mut expected = sibs.clone();
            if sibs.len() < floor && p != ROOT {
                let gp = t.parent(p).unwrap();
                let mut cousins: Vec<String> = t.nodes()
                    .filter(|n| t.is_leaf(n))
                    .filter(|n| t.parent(n).is_some_and(|q| q != p && q != ROOT && t.parent(q) == Some(gp)))
                    .map(str::to_string)
                    .collect();
                cousins.sort();
                expected.extend(cousins);
            }
            prop_assert!(!got.iter().any(|n| n == leaf || t.is_ancestor(n, leaf)));
            prop_assert_eq!(got, expected);
        }
    }

    #[test]
    fn rules_keep_tree_valid_or_reject(edges in graph_strategy(true),
                                       ops in prop::collection::vec((0u8..3, 0usize..10, 0usize..10), 0..6)) {
        let t = TaxonomyTree::prune(&build(&edges)).unwrap();
        let rules = ops.iter().map(|&(a, s, g)| match a {
            0 => CorrectionRule::remove(&name(s)),
            1 => CorrectionRule::merge(&name(s), &name(g)),
            _ => CorrectionRule::move_under(&name(s), &name(g)),
        }).collect();
        match t.apply_corrections(&RuleSet::new(rules)) {
            Ok(out) => {
                prop_assert!(out.check().is_ok());
                prop_assert!(out.level1().iter().all(|n| !out.is_leaf(n)));
            }
            Err(e) => prop_assert!(matches!(e, TaxonomyError::RuleConflict { .. }), "{}", e),
        }
    }
}

fn node_count_plus_root(t: &TaxonomyTree) -> usize {
    1 + t.nodes().count()
}
