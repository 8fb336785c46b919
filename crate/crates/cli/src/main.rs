//! `hiero`: command-line front end for functional-thread discovery.
//!
//! Every subcommand writes one JSON document to stdout (or `--output`).
//! Failures print `{"error": {kind, message, exit_code}}` to stderr.

mod commands;
mod corpus;
mod error;

use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Instant, SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use hiero::config::RunConfig;
use serde_json::{json, Value};

use crate::error::{CliError, CliResult};

#[derive(Parser, Debug)]
#[command(name = "hiero", version, about = "Hierarchical functional-thread discovery over timestamped embeddings")]
pub struct Cli {
    /// JSON run configuration; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Write the result here instead of stdout.
    #[arg(long, global = true)]
    pub output: Option<PathBuf>,
    /// Omit the run metadata block so reruns are byte-identical.
    #[arg(long, global = true)]
    pub no_meta: bool,
    /// Worker threads for per-video parallelism.
    #[arg(long, global = true)]
    pub jobs: Option<usize>,
    /// Model parameter file; initialized from the config when absent.
    #[arg(long, global = true)]
    pub params: Option<PathBuf>,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Generate a planted-structure corpus.
    Synth(SynthArgs),
    /// Run the encoder/decoder and report graph sizes and partitions.
    Forward(ForwardArgs),
    /// Cluster segments into procedure steps.
    ProcedureLearn(ProcedureArgs),
    /// Rank candidate steps for each grounding query.
    Ground(GroundArgs),
    /// Label candidate steps with taxonomy entries.
    Localize(LocalizeArgs),
    /// Answer multiple-choice clip retrieval questions.
    Mcq(McqArgs),
    /// Score a result file against ground truth.
    Evaluate(EvaluateArgs),
    /// Train a small model with gradient descent.
    TrainToy(TrainArgs),
    /// Compare analytic and finite-difference gradients.
    GradCheck(GradCheckArgs),
    /// Print the effective configuration.
    DumpConfig,
}

#[derive(Args, Debug, Clone, Default)]
pub struct ForwardFlags {
    /// Base edge threshold in seconds.
    #[arg(long)]
    pub edge_threshold: Option<f64>,
    /// Functional threads per decoder stage.
    #[arg(long)]
    pub decoder_k: Option<usize>,
    #[arg(long)]
    pub max_nodes: Option<usize>,
    /// Use a single partition in every decoder stage.
    #[arg(long)]
    pub no_cluster: bool,
    #[arg(long)]
    pub forward_seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct SynthArgs {
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub videos: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Shared by every corpus with the same value.
    #[arg(long)]
    pub taxonomy_seed: Option<u64>,
    /// Steps per thread.
    #[arg(long)]
    pub steps: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub segments: Option<usize>,
    #[arg(long)]
    pub dim: Option<usize>,
    /// Pairwise distance between step centers, in units of sigma.
    #[arg(long)]
    pub separation: Option<f64>,
    #[arg(long)]
    pub sigma: Option<f64>,
    #[arg(long)]
    pub interleave: bool,
}

#[derive(Args, Debug)]
pub struct ForwardArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub forward: ForwardFlags,
    /// Include the output embeddings.
    #[arg(long)]
    pub embeddings: bool,
}

#[derive(Args, Debug)]
pub struct ProcedureArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub forward: ForwardFlags,
    #[arg(long)]
    pub k: Option<usize>,
    /// 0 clusters the output; `s >= 1` the decoder stage `s - 1`.
    #[arg(long)]
    pub depth: Option<usize>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct GroundArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub forward: ForwardFlags,
    /// Queries file; defaults to the one named in the manifest.
    #[arg(long)]
    pub queries: Option<PathBuf>,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct LocalizeArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub forward: ForwardFlags,
    #[arg(long)]
    pub k: Option<usize>,
    #[arg(long)]
    pub min_len: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
}

#[derive(Args, Debug)]
pub struct McqArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub forward: ForwardFlags,
    /// Questions file; defaults to `questions.json` next to the manifest.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    /// Seconds of context added on both sides of each clip.
    #[arg(long)]
    pub context: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Task {
    Procedure,
    Ground,
    Localize,
    Mcq,
}

#[derive(Args, Debug)]
pub struct EvaluateArgs {
    #[arg(long, value_enum)]
    pub task: Task,
    /// Result file written by the matching subcommand.
    #[arg(long)]
    pub predictions: PathBuf,
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    /// Questions with answers, for `--task mcq` when the answers lack them.
    #[arg(long)]
    pub questions: Option<PathBuf>,
    #[arg(long)]
    pub fps: Option<f64>,
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum DimsPreset {
    /// Small sizes for quick checks.
    #[default]
    Toy,
    /// The `model` section of the configuration.
    Config,
}

#[derive(Args, Debug)]
pub struct TrainArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    #[command(flatten)]
    pub forward: ForwardFlags,
    #[arg(long, value_enum, default_value_t = DimsPreset::Toy)]
    pub dims: DimsPreset,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    #[arg(long)]
    pub warmup_epochs: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Where to write the trained parameters.
    #[arg(long)]
    pub params_out: Option<PathBuf>,
    /// JSON-lines log with one record per epoch.
    #[arg(long)]
    pub history: Option<PathBuf>,
}

#[derive(Args, Debug)]
pub struct GradCheckArgs {
    /// Corpus to draw the batch from; a small planted batch otherwise.
    #[arg(long)]
    pub manifest: Option<PathBuf>,
    #[command(flatten)]
    pub forward: ForwardFlags,
    #[arg(long, value_enum, default_value_t = DimsPreset::Toy)]
    pub dims: DimsPreset,
    #[arg(long)]
    pub epsilon: Option<f64>,
    #[arg(long)]
    pub sample: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    /// Videos in the batch.
    #[arg(long, default_value_t = 2)]
    pub videos: usize,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Synth(_) => "synth",
            Command::Forward(_) => "forward",
            Command::ProcedureLearn(_) => "procedure-learn",
            Command::Ground(_) => "ground",
            Command::Localize(_) => "localize",
            Command::Mcq(_) => "mcq",
            Command::Evaluate(_) => "evaluate",
            Command::TrainToy(_) => "train-toy",
            Command::GradCheck(_) => "grad-check",
            Command::DumpConfig => "dump-config",
        }
    }
}

fn load_config(cli: &Cli) -> CliResult<RunConfig> {
    match &cli.config {
        None => Ok(RunConfig::default()),
        Some(path) => {
            let text = std::fs::read_to_string(path).map_err(|e| hiero::HieroError::Io { path: path.clone(), source: e })?;
            RunConfig::from_json(&text, path).map_err(CliError::Config)
        }
    }
}

fn configure_jobs(jobs: Option<usize>) -> CliResult<()> {
    let Some(n) = jobs else { return Ok(()) };
    if n == 0 {
        return Err(CliError::Usage("--jobs must be >= 1".into()));
    }
    #[cfg(feature = "parallel")]
    rayon::ThreadPoolBuilder::new()
        .num_threads(n)
        .build_global()
        .map_err(|e| CliError::Usage(format!("cannot start {n} workers: {e}")))?;
    #[cfg(not(feature = "parallel"))]
    log::warn!("built without the `parallel` feature; --jobs {n} ignored");
    Ok(())
}

fn emit(cli: &Cli, mut value: Value, started: Instant) -> CliResult<()> {
    if !cli.no_meta && !matches!(cli.command, Command::DumpConfig) {
        let unix = SystemTime::now().duration_since(UNIX_EPOCH).map(|d| d.as_secs()).unwrap_or(0);
        let meta = json!({
            "command": cli.command.name(),
            "version": env!("CARGO_PKG_VERSION"),
            "unix_time": unix,
            "elapsed_ms": started.elapsed().as_millis() as u64,
            "jobs": cli.jobs,
            "parallel": hiero::par::enabled(),
        });
        if let Value::Object(map) = &mut value {
            map.insert("meta".into(), meta);
        }
    }
    let mut text = serde_json::to_string_pretty(&value).expect("json values always serialize");
    text.push('\n');
    match &cli.output {
        Some(path) => std::fs::write(path, text).map_err(|e| hiero::HieroError::Io { path: path.clone(), source: e })?,
        None => print!("{text}"),
    }
    Ok(())
}

fn run(cli: &Cli) -> CliResult<()> {
    let started = Instant::now();
    configure_jobs(cli.jobs)?;
    let cfg = load_config(cli)?;
    let value = commands::dispatch(cli, cfg)?;
    emit(cli, value, started)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                e.exit();
            }
            let err = CliError::Usage(e.to_string().trim_end().to_string());
            eprintln!("{}", err.to_json());
            return ExitCode::from(err.exit_code() as u8);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", err.to_json());
            ExitCode::from(err.exit_code() as u8)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use clap::CommandFactory;

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn flags_parse_anywhere() {
        let cli = Cli::try_parse_from(["hiero", "procedure-learn", "--manifest", "m.json", "--k", "7", "--no-meta"]).unwrap();
        assert!(cli.no_meta);
        match cli.command {
            Command::ProcedureLearn(a) => assert_eq!(a.k, Some(7)),
            other => panic!("unexpected {other:?}"),
        }
    }
}
