#![allow(dead_code)]

use std::path::{Path, PathBuf};
use std::process::{Command, Output};
use std::sync::Arc;

use soundcot::bench::{load_aqa_manifest, BenchmarkItem};
use soundcot::eval::{eval_request, EvalMode};
use soundcot::gateway::{AudioRef, ModelGateway, RecordingBackend, ResponseCache, Script};
use soundcot::pipelines::{run_batch, BatchOptions, PipelineConfig, PipelineId, Pipelines, QaTask};
use soundcot::prompts::PromptPack;
use soundcot::sim::{Behavior, PredictMode, SimWorld};
use soundcot::template::letter_for;
use soundcot::util::to_jsonl;

pub fn data(rel: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../data").join(rel)
}

pub fn soundcot(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_soundcot"))
        .args(args)
        .output()
        .expect("binary runs")
}

pub fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

pub fn p(path: &Path) -> &str {
    path.to_str().expect("utf-8 path")
}

/// Ten sub-question tasks: accepted, rescued by validation, too short, and
/// filtered out.
pub fn generation_tasks() -> (SimWorld, Vec<QaTask>) {
    let mut w = SimWorld::new(PromptPack::builtin());
    let mut tasks = Vec::new();
    for i in 0..10 {
        let q = format!("[g{i}] What is making the sound?");
        let mut b = Behavior::new(format!("source {i}"));
        match i % 5 {
            1 => b.predict = PredictMode::Wrong,
            2 => b.subquestions = 1,
            3 => {
                b.predict = PredictMode::Wrong;
                b.validate = false;
            }
            _ => {}
        }
        w.insert(&q, b);
        let audio = AudioRef::new(format!("sim://clips/g{i}.wav"), "sim", format!("g{i}"));
        let mut t = QaTask::new(&format!("g{i}"), audio, &q, &format!("source {i}"));
        t.source_dataset = "ClothoAQA".into();
        tasks.push(t);
    }
    (w, tasks)
}

/// Records both sides of a sim run into replay scripts and writes a config
/// pointing at them. Returns (tasks path, config path).
pub fn scripted_generation(dir: &Path) -> (PathBuf, PathBuf) {
    let (w, tasks) = generation_tasks();
    let w = Arc::new(w);
    let llm = Arc::new(RecordingBackend::new(w.llm_backend()));
    let alm = Arc::new(RecordingBackend::new(w.alm_backend()));
    let gw = ModelGateway::builder()
        .llm_backend(llm.clone())
        .alm_backend(alm.clone())
        .cache(ResponseCache::in_memory())
        .build();
    let pack = PromptPack::builtin();
    let pipelines = Pipelines::new(&gw, &pack, PipelineConfig::default());
    run_batch(&pipelines, PipelineId::Subquestions, &tasks, &BatchOptions::default()).unwrap();
    llm.script().save(&dir.join("llm.script.jsonl")).unwrap();
    alm.script().save(&dir.join("alm.script.jsonl")).unwrap();
    let tasks_path = dir.join("tasks.jsonl");
    std::fs::write(&tasks_path, to_jsonl(&tasks)).unwrap();
    let config = dir.join("run.toml");
    std::fs::write(
        &config,
        r#"workers = 2

[llm]
provider = "scripted"
model = "sim-llm"
script = "llm.script.jsonl"

[alm]
provider = "scripted"
model = "sim-alm"
script = "alm.script.jsonl"
"#,
    )
    .unwrap();
    (tasks_path, config)
}

pub fn aqa_items() -> Vec<BenchmarkItem> {
    load_aqa_manifest(&data("aqa_style/manifest.jsonl")).unwrap().items
}

/// ALM replay script answering the four-tag eval prompt for the given
/// items; item `i` is answered correctly when `correct(i)` holds.
pub fn eval_script(items: &[BenchmarkItem], backend_id: &str, correct: impl Fn(usize) -> bool) -> Script {
    let pack = PromptPack::builtin();
    let mut script = Script::new();
    for (i, item) in items.iter().enumerate() {
        let gold = item.gold_index();
        let pick = if correct(i) {
            gold
        } else {
            (gold + 1) % item.choices.len()
        };
        let text = format!(
            "<summary>Listen and decide.</summary>\n<caption>A short recording.</caption>\n\
             <reasoning>The clip is compared against each option.</reasoning>\n\
             <conclusion>({}) {}</conclusion>",
            letter_for(pick),
            item.choices.text(pick).unwrap()
        );
        script.insert(eval_request(&pack, item, EvalMode::Cot).digest(backend_id), text);
    }
    script
}
