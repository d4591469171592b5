use std::collections::BTreeSet;
use std::path::PathBuf;

use soundcot::bench::{
    build_cls_benchmark, display_label, sample_mini, screening_request, write_items, ClsConfig, DistractorSource,
    LlmScreener, Screener, Subset, VerdictTable,
};
use soundcot::gateway::{scripted_backend, ModelGateway, ResponseCache, Script};
use soundcot::prompts::PromptPack;
use soundcot::taxonomy::{curate, read_annotations, RuleSet, TaxonomyTree, DEFAULT_SIBLING_FLOOR};

fn data(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../../data/fsd50k_style")
        .join(name)
}

fn curated() -> TaxonomyTree {
    let ann = read_annotations(&data("dev_annotations.tsv")).unwrap();
    curate(&ann, &RuleSet::load(&data("rules.txt")).unwrap()).unwrap()
}

/// Replay script answering every screening pair the build can ask about.
fn screening_script(tree: &TaxonomyTree, verdicts: &VerdictTable, backend_id: &str) -> Script {
    let pack = PromptPack::builtin();
    let mut script = Script::new();
    let leaves = tree.leaves();
    for leaf in &leaves {
        let mut candidates = tree.neighbors(leaf, DEFAULT_SIBLING_FLOOR).unwrap();
        // random pads may be any other leaf
        candidates.extend(leaves.iter().filter(|l| *l != leaf).map(|l| l.to_string()));
        for n in candidates {
            let ok = verdicts.distinguishable(leaf, &n).unwrap();
            let req = screening_request(&pack, leaf, &n);
            script.insert(
                req.digest(backend_id),
                if ok { "Yes." } else { "No, they sound alike." },
            );
        }
    }
    script
}

#[test]
fn full_and_mini_counts_and_stable_rebuild() {
    let tree = curated();
    let eval = read_annotations(&data("eval_annotations.tsv")).unwrap();
    let verdicts = VerdictTable::load(&data("screening_verdicts.tsv")).unwrap();
    assert_eq!(verdicts.len(), 6);
    let cfg = ClsConfig::default();

    let build = build_cls_benchmark(&eval, &tree, &verdicts, &cfg).unwrap();
    assert_eq!(build.items.len(), 7227);
    assert_eq!(build.items.len() + build.skipped.len(), eval.len());
    let mut ids = BTreeSet::new();
    for item in &build.items {
        item.validate().unwrap();
        assert!(ids.insert(item.item_id.clone()));
        let texts: Vec<&str> = item.choices.texts().collect();
        assert_eq!(texts.len(), 4);
        assert_eq!(texts.iter().collect::<BTreeSet<_>>().len(), 4);
        let gold = item.choices.gold_index().unwrap();
        assert_eq!(
            item.provenance.iter().filter(|p| **p == DistractorSource::Gold).count(),
            1
        );
        assert_eq!(item.provenance[gold], DistractorSource::Gold);
        assert_eq!(item.subset, Subset::ClsFull);
    }
    // gold never sits next to a label it was screened against
    for item in &build.items {
        let texts: Vec<&str> = item.choices.texts().collect();
        let gold = texts[item.choices.gold_index().unwrap()];
        for (a, b) in verdicts.pairs() {
            let (a, b) = (display_label(a), display_label(b));
            assert!(!(gold == a && texts.contains(&b.as_str())), "{a} with {b}");
            assert!(!(gold == b && texts.contains(&a.as_str())), "{b} with {a}");
        }
    }
    assert!(build.padded_items > 0);

    let mini = sample_mini(&build.items, 300, cfg.seed).unwrap();
    assert_eq!(mini.len(), 300);
    assert!(mini.iter().all(|i| i.subset == Subset::ClsMini));

    let dir = tempfile::tempdir().unwrap();
    let write = |name: &str| {
        let again = build_cls_benchmark(&eval, &tree, &verdicts, &cfg).unwrap();
        let mini = sample_mini(&again.items, 300, cfg.seed).unwrap();
        let full = dir.path().join(format!("{name}-full.jsonl"));
        let small = dir.path().join(format!("{name}-mini.jsonl"));
        write_items(&full, &again.items).unwrap();
        write_items(&small, &mini).unwrap();
        (std::fs::read(full).unwrap(), std::fs::read(small).unwrap())
    };
    assert_eq!(write("a"), write("b"));

    let other = sample_mini(&build.items, 300, cfg.seed + 1).unwrap();
    assert_ne!(other, mini);
}

#[test]
fn scripted_llm_screening_matches_the_verdict_table() {
    let tree = curated();
    let eval = read_annotations(&data("eval_annotations.tsv")).unwrap();
    let verdicts = VerdictTable::load(&data("screening_verdicts.tsv")).unwrap();
    let backend = "screen-fixture";
    let gw = ModelGateway::builder()
        .llm_backend(scripted_backend(backend, screening_script(&tree, &verdicts, backend)))
        .cache(ResponseCache::in_memory())
        .build();
    let pack = PromptPack::builtin();
    let screener = LlmScreener::new(&gw, &pack);
    let cfg = ClsConfig::default();
    let via_llm = build_cls_benchmark(&eval, &tree, &screener, &cfg).unwrap();
    assert_eq!(screener.unparsed(), 0);
    let via_table = build_cls_benchmark(&eval, &tree, &verdicts, &cfg).unwrap();
    assert_eq!(via_llm.items, via_table.items);
}

#[test]
fn aqa_manifest_partitions_into_subsets() {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data/aqa_style/manifest.jsonl");
    let m = soundcot::bench::load_aqa_manifest(&path).unwrap();
    assert_eq!(m.items.len(), 150);
    assert_eq!((m.yes_no, m.mcq), (74, 76));
    assert!(m.subset(Subset::AqaYesNo).all(|i| i.choices.len() == 2));
}
