//! `soundcot` command line: taxonomy curation, benchmark construction, CoT
//! generation, evaluation, audits and dataset blending.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use soundcot::eval::EvalMode;
use soundcot::pipelines::PipelineId;

pub use error::{CliError, Exit};

#[derive(Debug, Parser)]
#[command(
    name = "soundcot",
    version,
    about = "Chain-of-thought data and reasoning audits for audio language models"
)]
pub struct Cli {
    /// Run config (TOML). Defaults apply when omitted.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Override a config key, e.g. `--set pipeline.t_min=4`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    pub set: Vec<String>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Build, prune and correct the label taxonomy.
    Taxonomy(TaxonomyArgs),
    /// Build the classification benchmark and its seeded mini subset.
    Bench(BenchArgs),
    /// Run a generation pipeline over a task file.
    Generate(GenerateArgs),
    /// Query the audio model on a benchmark and score it.
    Eval(EvalArgs),
    /// Export or score reasoning audit workbooks.
    #[command(subcommand)]
    Audit(AuditCommand),
    /// Acceptance statistics for generation outputs.
    Stats(StatsArgs),
    /// Mix CoT records into an SFT set.
    Blend(BlendArgs),
}

#[derive(Debug, Args)]
pub struct TaxonomyArgs {
    /// Annotation TSV (sample_id, labels, relations).
    #[arg(long)]
    pub annotations: PathBuf,
    /// Correction rules; prune only when omitted.
    #[arg(long)]
    pub rules: Option<PathBuf>,
    /// Write the curated tree as JSON.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Debug, Args)]
#[command(group = clap::ArgGroup::new("screening").required(true).args(["verdicts", "screen_with_llm", "no_screen"]))]
pub struct BenchArgs {
    /// Curated tree JSON from `soundcot taxonomy --out`.
    #[arg(long)]
    pub tree: PathBuf,
    /// Test-split annotations.
    #[arg(long)]
    pub eval: PathBuf,
    /// Offline screening verdicts (TSV of label pairs).
    #[arg(long)]
    pub verdicts: Option<PathBuf>,
    /// Ask the configured LLM whether each distractor is distinguishable.
    #[arg(long)]
    pub screen_with_llm: bool,
    /// Keep every distractor candidate.
    #[arg(long)]
    pub no_screen: bool,
    #[arg(long, default_value_t = 300)]
    pub mini: usize,
    /// Overrides the config seed.
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub audio_root: Option<String>,
    #[arg(long, default_value = ".")]
    pub out_dir: PathBuf,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    /// Task JSONL.
    #[arg(long)]
    pub tasks: PathBuf,
    #[arg(long)]
    pub pipeline: PipelineId,
    /// Outcome JSONL.
    #[arg(long)]
    pub out: PathBuf,
    /// Defaults to `<out stem>.checkpoint.jsonl`.
    #[arg(long)]
    pub checkpoint: Option<PathBuf>,
    /// Skip tasks already in the checkpoint.
    #[arg(long)]
    pub resume: bool,
    /// Process at most this many new tasks.
    #[arg(long)]
    pub limit: Option<usize>,
    /// Curated tree JSON; required by the hierarchy pipeline.
    #[arg(long)]
    pub tree: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Benchmark JSONL or question-answering manifest.
    #[arg(long)]
    pub bench: PathBuf,
    #[arg(long, default_value = "cot")]
    pub mode: EvalMode,
    /// Prediction JSONL.
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Subcommand)]
pub enum AuditCommand {
    /// Write an annotation workbook for a prediction file.
    Export {
        #[arg(long)]
        predictions: PathBuf,
        #[arg(long)]
        bench: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Score annotated workbooks, one table per subset.
    Metrics {
        #[arg(required = true)]
        workbooks: Vec<PathBuf>,
        /// Also write the metrics as JSON.
        #[arg(long)]
        json: Option<PathBuf>,
    },
}

#[derive(Debug, Args)]
pub struct StatsArgs {
    /// Outcome JSONL files from `generate`.
    #[arg(required = true)]
    pub outcomes: Vec<PathBuf>,
}

#[derive(Debug, Args)]
pub struct BlendArgs {
    #[arg(long)]
    pub sft: PathBuf,
    #[arg(long)]
    pub cot: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Overrides `blend.sft_keep_fraction`.
    #[arg(long)]
    pub keep_fraction: Option<f64>,
    /// Keep SFT rows that seeded a CoT record.
    #[arg(long)]
    pub keep_sources: bool,
    /// Overrides `blend.seed`.
    #[arg(long)]
    pub seed: Option<u64>,
}

/// Parses `args` and runs the command. Returns the process exit code.
pub fn run<I, T>(args: I, out: &mut dyn Write, err: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            if e.use_stderr() {
                let _ = write!(err, "{}", e.render());
                return Exit::Usage as i32;
            }
            let _ = write!(out, "{}", e.render());
            return Exit::Ok as i32;
        }
    };
    match commands::dispatch(&cli, out) {
        Ok(Exit::Ok) => 0,
        Ok(code) => code as i32,
        Err(e) => {
            let _ = writeln!(err, "error: {e}");
            e.exit as i32
        }
    }
}
