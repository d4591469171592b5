use std::io::Write;
use std::path::{Path, PathBuf};

use soundcot::bench::{
    build_cls_benchmark, parse_aqa_manifest, parse_items, sample_mini, write_items, AcceptAll, BenchmarkItem,
    ClsConfig, LlmScreener, VerdictTable,
};
use soundcot::dataset::{
    blend, dedup, manifest_path, read_records, render_stats_table, stats_by_pipeline, write_dataset, write_manifest,
    DatasetManifest, Record,
};
use soundcot::eval::{
    audit_by_subset, audit_rows, complete_records, read_predictions, read_workbook, run_benchmark, score,
    write_predictions, write_workbook,
};
use soundcot::pipelines::{read_outcomes, run_batch, BatchOptions, Pipelines, QaTask, RejectReason};
use soundcot::taxonomy::{curate, read_annotations, RuleSet, TaxonomyTree};
use soundcot::util::{jsonl_lines, write_atomic};

use crate::config::{Needs, RunConfig};
use crate::error::{CliError, Exit};
use crate::manifest::{run_manifest_path, RunManifest};
use crate::{AuditCommand, BenchArgs, BlendArgs, Cli, Command, EvalArgs, GenerateArgs, StatsArgs, TaxonomyArgs};

type CmdResult = Result<Exit, CliError>;

macro_rules! say {
    ($out:expr, $($arg:tt)*) => {
        writeln!($out, $($arg)*).map_err(|e| CliError::data(format!("stdout: {e}")))?
    };
}

pub fn dispatch(cli: &Cli, out: &mut dyn Write) -> CmdResult {
    let cfg = RunConfig::load(cli.config.as_deref(), &cli.set)?;
    match &cli.command {
        Command::Taxonomy(a) => taxonomy(&cfg, a, out),
        Command::Bench(a) => bench(cfg, a, out),
        Command::Generate(a) => generate(&cfg, a, out),
        Command::Eval(a) => eval(&cfg, a, out),
        Command::Audit(a) => audit(&cfg, a, out),
        Command::Stats(a) => stats(a, out),
        Command::Blend(a) => blend_cmd(cfg, a, out),
    }
}

fn read_text(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::data(format!("{}: {e}", path.display())))
}

fn load_tree(path: &Path) -> Result<TaxonomyTree, CliError> {
    Ok(TaxonomyTree::from_json(&read_text(path)?)?)
}

fn taxonomy(cfg: &RunConfig, a: &TaxonomyArgs, out: &mut dyn Write) -> CmdResult {
    let pack = cfg.validate(Needs::default())?;
    let annotations = read_annotations(&a.annotations)?;
    let rules = match &a.rules {
        Some(p) => RuleSet::load(p)?,
        None => RuleSet::new(Vec::new()),
    };
    let tree = curate(&annotations, &rules)?;
    say!(out, "nodes\t{}", tree.node_count());
    say!(out, "leaves\t{}", tree.leaf_count());
    say!(out, "level1\t{}", tree.level1().len());
    say!(out, "max_depth\t{}", tree.max_depth());
    if let Some(path) = &a.out {
        write_atomic(path, tree.to_json().as_bytes())
            .map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
        let mut m = RunManifest::new("taxonomy", cfg, &pack).input(&a.annotations)?;
        if let Some(r) = &a.rules {
            m = m.input(r)?;
        }
        m.output(path)?.write(&run_manifest_path(path))?;
    }
    Ok(Exit::Ok)
}

fn bench(mut cfg: RunConfig, a: &BenchArgs, out: &mut dyn Write) -> CmdResult {
    if let Some(seed) = a.seed {
        cfg.seed = seed;
    }
    let pack = cfg.validate(Needs {
        llm: a.screen_with_llm,
        alm: false,
    })?;
    let tree = load_tree(&a.tree)?;
    let eval = read_annotations(&a.eval)?;
    let mut cls = ClsConfig {
        seed: cfg.seed,
        workers: cfg.workers,
        ..ClsConfig::default()
    };
    if let Some(root) = &a.audio_root {
        cls.audio_root = root.clone();
    }
    let build = if let Some(v) = &a.verdicts {
        build_cls_benchmark(&eval, &tree, &VerdictTable::load(v)?, &cls)?
    } else if a.screen_with_llm {
        let gw = cfg.gateway()?;
        let screener = LlmScreener::new(&gw, &pack);
        let build = build_cls_benchmark(&eval, &tree, &screener, &cls)?;
        if screener.unparsed() > 0 {
            say!(
                out,
                "warning\t{} screening replies were not yes/no and counted as no",
                screener.unparsed()
            );
        }
        build
    } else {
        build_cls_benchmark(&eval, &tree, &AcceptAll, &cls)?
    };
    let mini = sample_mini(&build.items, a.mini, cfg.seed)?;
    let full_path = a.out_dir.join("cls_full.jsonl");
    let mini_path = a.out_dir.join("cls_mini.jsonl");
    write_items(&full_path, &build.items)?;
    write_items(&mini_path, &mini)?;
    say!(out, "full\t{}", build.items.len());
    say!(out, "mini\t{}", mini.len());
    say!(out, "skipped\t{}", build.skipped.len());
    say!(out, "padded\t{}", build.padded_items);
    let mut m = RunManifest::new("bench", &cfg, &pack).input(&a.tree)?.input(&a.eval)?;
    if let Some(v) = &a.verdicts {
        m = m.input(v)?;
    }
    m.output(&full_path)?
        .output(&mini_path)?
        .write(&a.out_dir.join("bench.run.json"))?;
    Ok(Exit::Ok)
}

fn read_tasks(path: &Path) -> Result<Vec<QaTask>, CliError> {
    let text = read_text(path)?;
    jsonl_lines(&text)
        .map(|(line, l)| serde_json::from_str(l).map_err(|e| CliError::data(format!("{}:{line}: {e}", path.display()))))
        .collect()
}

fn generate(cfg: &RunConfig, a: &GenerateArgs, out: &mut dyn Write) -> CmdResult {
    let pack = cfg.validate(Needs { llm: true, alm: true })?;
    let tasks = read_tasks(&a.tasks)?;
    if tasks.is_empty() {
        return Err(CliError::usage(format!("{}: no tasks", a.tasks.display())));
    }
    let tree = a.tree.as_deref().map(load_tree).transpose()?;
    let gw = cfg.gateway()?;
    let mut p = Pipelines::new(&gw, &pack, cfg.pipeline.clone());
    if let Some(t) = &tree {
        p = p.with_tree(t);
    }
    let checkpoint = a.checkpoint.clone().unwrap_or_else(|| {
        let stem = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
        a.out.with_file_name(format!("{stem}.checkpoint.jsonl"))
    });
    let opts = BatchOptions {
        workers: cfg.workers,
        output: Some(a.out.clone()),
        checkpoint: Some(checkpoint),
        resume: a.resume,
        limit: a.limit,
    };
    let result = run_batch(&p, a.pipeline, &tasks, &opts)?;
    let stats = stats_by_pipeline(&result.outcomes);
    write!(out, "{}", render_stats_table(&stats)).map_err(|e| CliError::data(e.to_string()))?;
    say!(
        out,
        "processed\t{}\tresumed\t{}\tremaining\t{}",
        result.processed,
        result.resumed,
        result.remaining
    );

    let records: Vec<Record> = result.outcomes.iter().map(Record::from_outcome).collect();
    let name = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("generated");
    let dm = DatasetManifest::describe(name, &records)
        .with_seed(cfg.pipeline.seed)
        .with_config_hash(cfg.hash());
    write_manifest(&a.out, &dm)?;
    let mut m = RunManifest::new("generate", cfg, &pack).input(&a.tasks)?;
    if let Some(t) = &a.tree {
        m = m.input(t)?;
    }
    m.output(&a.out)?
        .output(&manifest_path(&a.out))?
        .write(&run_manifest_path(&a.out))?;

    let failed = result
        .outcomes
        .iter()
        .filter(|o| o.reject_reason == Some(RejectReason::BackendError))
        .count();
    if failed > 0 {
        say!(out, "warning\t{failed} tasks failed on a backend error");
        return Ok(Exit::Backend);
    }
    Ok(Exit::Ok)
}

/// Benchmark JSONL or the question-answering manifest format.
fn read_bench(path: &Path) -> Result<Vec<BenchmarkItem>, CliError> {
    let text = read_text(path)?;
    let items = match parse_items(&text) {
        Ok(items) => items,
        Err(first) => match parse_aqa_manifest(&text) {
            Ok(m) => m.items,
            Err(_) => return Err(CliError::data(format!("{}: {first}", path.display()))),
        },
    };
    if items.is_empty() {
        return Err(CliError::usage(format!("{}: benchmark is empty", path.display())));
    }
    Ok(items)
}

fn sibling(path: &Path, suffix: &str) -> PathBuf {
    let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or("out");
    path.with_file_name(format!("{stem}.{suffix}"))
}

fn eval(cfg: &RunConfig, a: &EvalArgs, out: &mut dyn Write) -> CmdResult {
    let pack = cfg.validate(Needs { llm: false, alm: true })?;
    let items = read_bench(&a.bench)?;
    let gw = cfg.gateway()?;
    let preds = run_benchmark(&gw, &pack, &items, a.mode, cfg.workers);
    write_predictions(&a.out, &preds)?;
    let report = score(&preds, &items)?;
    write!(out, "{}", report.render()).map_err(|e| CliError::data(e.to_string()))?;
    let report_path = sibling(&a.out, "score.json");
    let json = serde_json::to_string_pretty(&report).expect("report serializes") + "\n";
    write_atomic(&report_path, json.as_bytes())
        .map_err(|e| CliError::data(format!("{}: {e}", report_path.display())))?;
    RunManifest::new("eval", cfg, &pack)
        .input(&a.bench)?
        .output(&a.out)?
        .output(&report_path)?
        .write(&run_manifest_path(&a.out))?;
    let failed = preds.iter().filter(|p| p.error.is_some()).count();
    if failed > 0 {
        say!(out, "warning\t{failed} queries failed and were scored as malformed");
        return Ok(Exit::Backend);
    }
    Ok(Exit::Ok)
}

fn audit(cfg: &RunConfig, a: &AuditCommand, out: &mut dyn Write) -> CmdResult {
    match a {
        AuditCommand::Export {
            predictions,
            bench,
            out: path,
        } => {
            let pack = cfg.validate(Needs::default())?;
            let rows = audit_rows(&read_predictions(predictions)?, &read_bench(bench)?)?;
            write_workbook(path, &rows)?;
            say!(out, "rows\t{}", rows.len());
            RunManifest::new("audit-export", cfg, &pack)
                .input(predictions)?
                .input(bench)?
                .output(path)?
                .write(&run_manifest_path(path))?;
        }
        AuditCommand::Metrics { workbooks, json } => {
            let mut all = serde_json::Map::new();
            for wb in workbooks {
                let records = complete_records(&read_workbook(wb)?)?;
                let name = wb
                    .file_name()
                    .map(|n| n.to_string_lossy().into_owned())
                    .unwrap_or_default();
                let mut per = serde_json::Map::new();
                for (subset, m) in audit_by_subset(&records)? {
                    write!(out, "{}", m.render(&format!("{name} {}", subset.name())))
                        .map_err(|e| CliError::data(e.to_string()))?;
                    per.insert(
                        subset.name().to_string(),
                        serde_json::to_value(&m).expect("metrics serialize"),
                    );
                }
                all.insert(name, per.into());
            }
            if let Some(path) = json {
                let text = serde_json::to_string_pretty(&all).expect("json") + "\n";
                write_atomic(path, text.as_bytes()).map_err(|e| CliError::data(format!("{}: {e}", path.display())))?;
            }
        }
    }
    Ok(Exit::Ok)
}

fn stats(a: &StatsArgs, out: &mut dyn Write) -> CmdResult {
    let mut outcomes = Vec::new();
    for p in &a.outcomes {
        outcomes.extend(read_outcomes(p)?);
    }
    write!(out, "{}", render_stats_table(&stats_by_pipeline(&outcomes))).map_err(|e| CliError::data(e.to_string()))?;
    Ok(Exit::Ok)
}

fn blend_cmd(mut cfg: RunConfig, a: &BlendArgs, out: &mut dyn Write) -> CmdResult {
    if let Some(f) = a.keep_fraction {
        cfg.blend.sft_keep_fraction = f;
    }
    if a.keep_sources {
        cfg.blend.remove_cot_sources = false;
    }
    if let Some(s) = a.seed {
        cfg.blend.seed = s;
    }
    let pack = cfg.validate(Needs::default())?;
    let sft = dedup(read_records(&a.sft)?);
    let cot = dedup(read_records(&a.cot)?);
    let b = blend(&sft.records, &cot.records, &cfg.blend)?;
    let name = a.out.file_stem().and_then(|s| s.to_str()).unwrap_or("blend");
    let dm = DatasetManifest::describe(name, &b.records)
        .with_seed(cfg.blend.seed)
        .with_config_hash(cfg.hash());
    write_dataset(&a.out, &b.records, &dm)?;
    let r = &b.report;
    say!(
        out,
        "sft\tin {}\tduplicates {}\tremoved {}\tsubsampled {}\tout {}",
        r.sft_in,
        sft.removed,
        r.sft_removed,
        r.sft_subsampled,
        r.sft_out
    );
    say!(
        out,
        "cot\tin {}\tduplicates {}\trejected {}\tunmatched {}\tout {}",
        r.cot_in,
        cot.removed,
        r.cot_rejected,
        r.cot_unmatched,
        r.cot_out
    );
    say!(out, "total\t{}", b.records.len());
    RunManifest::new("blend", &cfg, &pack)
        .input(&a.sft)?
        .input(&a.cot)?
        .output(&a.out)?
        .output(&manifest_path(&a.out))?
        .write(&run_manifest_path(&a.out))?;
    Ok(Exit::Ok)
}
