//! `fleeting` command-line entry point.
//!
//! Exit codes: 0 success, 1 failure, 2 usage error, 3 partial failure
//! (some cells failed), 4 invalid manifest. Failures also print one JSON
//! record on stderr.

mod manifest;
mod pipeline;
mod report;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand, ValueEnum};
use fleeting::io::write_atomic;
use fleeting::stats::read_metrics_csv;
use fleeting::{Condition, Error};
use serde_json::json;

use manifest::{Manifest, Overrides};
use pipeline::{Outcome, Pipeline};

const EXIT_FAILURE: u8 = 1;
const EXIT_PARTIAL: u8 = 3;
const EXIT_MANIFEST: u8 = 4;

#[derive(Parser)]
#[command(name = "fleeting", version, about = "Fleeting-memory transformer experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment manifest (JSON).
    #[arg(long, global = true)]
    manifest: Option<PathBuf>,
    /// Output directory; overrides `paths.out`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Concurrent grid cells; overrides `training.jobs`.
    #[arg(long, global = true)]
    jobs: Option<usize>,
    /// Restrict the grid to one seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Condition as `perfect`, `naive:ALPHA` or `fleeting:ALPHA:E`; repeatable.
    #[arg(long = "condition", global = true)]
    conditions: Vec<Condition>,
    /// Training steps; overrides `training.steps`.
    #[arg(long, global = true)]
    steps: Option<usize>,
    #[arg(long, global = true, value_enum)]
    format: Option<Format>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Csv,
    Json,
    Svg,
}

#[derive(Subcommand)]
enum Command {
    /// Train the byte-level BPE tokenizer on the corpus.
    Tokenize,
    /// Tokenize the corpus into the token cache.
    Ingest,
    /// Train a single (condition, seed) run.
    Train,
    /// Train every condition × seed cell.
    Grid,
    /// Score minimal pairs with every trained cell.
    EvalPairs,
    /// Per-word surprisal on the reading-time items.
    Surprisal,
    /// Baseline and surprisal regressions on reading times.
    RtFit,
    /// Frequency-quintile error decomposition of the regression residuals.
    FreqAnalysis,
    /// Paired bootstrap tests against the baseline condition.
    Stats {
        /// Metric table (`seed,condition,metric,value`) instead of `<out>/metrics`.
        #[arg(long)]
        input: Option<PathBuf>,
        /// Only this metric.
        #[arg(long)]
        metric: Option<String>,
    },
    /// SVG figures.
    Plot,
    /// Markdown summary of the output directory.
    Report,
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Tokenize => "tokenize",
            Command::Ingest => "ingest",
            Command::Train => "train",
            Command::Grid => "grid",
            Command::EvalPairs => "eval-pairs",
            Command::Surprisal => "surprisal",
            Command::RtFit => "rt-fit",
            Command::FreqAnalysis => "freq-analysis",
            Command::Stats { .. } => "stats",
            Command::Plot => "plot",
            Command::Report => "report",
        }
    }
}

fn error_record(command: &str, e: &Error) -> serde_json::Value {
    let mut rec = json!({
        "status": "error",
        "command": command,
        "kind": e.kind(),
        "message": e.to_string(),
    });
    if let Error::Manifest(v) = e {
        rec["violations"] = json!(v);
    }
    rec
}

fn load_pipeline(cli: &Cli) -> fleeting::Result<Pipeline> {
    let Some(path) = &cli.manifest else {
        return Err(Error::Manifest(vec!["--manifest is required for this command".into()]));
    };
    let overrides = Overrides {
        out: cli.out.clone(),
        jobs: cli.jobs,
        seed: cli.seed,
        conditions: cli.conditions.clone(),
        steps: cli.steps,
    };
    Ok(Pipeline::new(Manifest::load(path, &overrides)?))
}

fn run_stats(
    p: &Pipeline,
    input: Option<&PathBuf>,
    metric: Option<&str>,
    format: Format,
) -> fleeting::Result<Outcome> {
    let mut rows = match input {
        Some(path) => read_metrics_csv(path)?,
        None => p.metric_rows()?,
    };
    if let Some(m) = metric {
        rows.retain(|r| r.metric == m);
        if rows.is_empty() {
            return Err(Error::domain(format!("no rows for metric {m:?}")));
        }
    }
    let (o, reports) = p.stats(&rows)?;
    match format {
        Format::Csv => print!("{}", pipeline::stats_csv(&reports)?),
        _ => println!("{}", serde_json::to_string_pretty(&reports)?),
    }
    Ok(o)
}

fn dispatch(cli: &Cli) -> fleeting::Result<Outcome> {
    if let Command::Report = cli.command {
        let dir = match (&cli.out, &cli.manifest) {
            (Some(d), _) => d.clone(),
            (None, Some(_)) => load_pipeline(cli)?.out().to_path_buf(),
            (None, None) => return Err(Error::domain("report needs --out or --manifest")),
        };
        let text = report::summary(&dir)?;
        let path = dir.join("summary.md");
        write_atomic(&path, text.as_bytes())?;
        return Ok(Outcome {
            written: vec![path],
            ..Default::default()
        });
    }
    let format = cli.format;
    match (&cli.command, format) {
        (Command::Plot, Some(f)) if f != Format::Svg => {
            return Err(Error::domain("plot only emits svg"));
        }
        (Command::Stats { .. }, Some(Format::Svg)) => {
            return Err(Error::domain("stats emits json or csv"));
        }
        _ => {}
    }
    let p = load_pipeline(cli)?;
    match &cli.command {
        Command::Tokenize => p.tokenize(),
        Command::Ingest => p.ingest(),
        Command::Train => p.train(),
        Command::Grid => p.grid(),
        Command::EvalPairs => p.eval_pairs(),
        Command::Surprisal => p.surprisal(),
        Command::RtFit => p.rt_fit(),
        Command::FreqAnalysis => p.freq_analysis(),
        Command::Stats { input, metric } => {
            run_stats(&p, input.as_ref(), metric.as_deref(), format.unwrap_or(Format::Json))
        }
        Command::Plot => p.plot(),
        Command::Report => unreachable!(),
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = cli.command.name();
    match dispatch(&cli) {
        Ok(o) => {
            for n in &o.notes {
                eprintln!("{name}: {n}");
            }
            if !o.failed.is_empty() {
                let all = o.failed.len() >= o.attempted;
                eprintln!(
                    "{}",
                    json!({
                        "status": if all { "failed" } else { "partial" },
                        "command": name,
                        "failed": o.failed,
                        "attempted": o.attempted,
                    })
                );
                return ExitCode::from(if all { EXIT_FAILURE } else { EXIT_PARTIAL });
            }
            if !matches!(cli.command, Command::Stats { .. }) {
                for w in &o.written {
                    println!("{}", w.display());
                }
            }
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("{}", error_record(name, &e));
            ExitCode::from(if matches!(e, Error::Manifest(_)) { EXIT_MANIFEST } else { EXIT_FAILURE })
        }
    }
}
