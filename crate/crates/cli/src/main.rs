use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use userdist::dataset::synthetic::{topic_corpus, TopicCorpusSpec};
use userdist::dataset::write_graph;
use userdist::pipeline::{describe, Pipeline, RunConfig, Stage, StageStatus};

/// Cold-start item recommendation by text-to-distribution.
#[derive(Parser)]
#[command(name = "userdist", version)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct RunArgs {
    /// TOML run configuration.
    #[arg(long)]
    config: PathBuf,
    /// Re-run completed stages and overwrite artifacts from another config.
    #[arg(long)]
    force: bool,
    /// Overrides the global seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Overrides the artifact directory.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Subcommand)]
enum Command {
    /// Load and split the interaction log, build the tokenizer.
    Ingest(RunArgs),
    /// Train the collaborative backbone.
    InitCf(RunArgs),
    /// Initialise the user vocabulary and train the encoder.
    Train(RunArgs),
    /// Sample top-K users for every cold item.
    Infer(RunArgs),
    /// Refit the backbone on observed plus synthetic interactions.
    Refine(RunArgs),
    /// Full-ranking metrics and the random-embedding control.
    Evaluate(RunArgs),
    /// Time distribution against judgement inference.
    Bench(RunArgs),
    /// Run several stages in order (default: everything but bench).
    RunAll {
        #[command(flatten)]
        run: RunArgs,
        /// Stage to include; repeatable.
        #[arg(long = "stage", value_name = "STAGE")]
        stages: Vec<Stage>,
    },
    /// Summarise an artifact.
    Describe { path: PathBuf },
    /// Write a synthetic topic corpus and a config for it.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 200)]
        users: usize,
        #[arg(long, default_value_t = 125)]
        items: usize,
    },
}

fn load_config(args: &RunArgs) -> Result<RunConfig> {
    let mut config = RunConfig::load(&args.config)?;
    if let Some(seed) = args.seed {
        config.seed = seed;
    }
    if let Some(out) = &args.out {
        config.paths.out = out.clone();
    }
    Ok(config)
}

/// Aligns the tab-separated body of a report, dropping `#` headers.
fn align_tsv(text: &str) -> String {
    let rows: Vec<Vec<&str>> = text
        .lines()
        .filter(|l| !l.starts_with('#') && !l.is_empty())
        .map(|l| l.split('\t').collect())
        .collect();
    let cols = rows.iter().map(Vec::len).max().unwrap_or(0);
    let widths: Vec<usize> = (0..cols)
        .map(|c| rows.iter().filter_map(|r| r.get(c)).map(|s| s.chars().count()).max().unwrap_or(0))
        .collect();
    let mut out = String::new();
    for row in rows {
        let line: Vec<String> = row
            .iter()
            .enumerate()
            .map(|(c, cell)| format!("{cell:>w$}", w = widths[c]))
            .collect();
        out.push_str(line.join("  ").trim_end());
        out.push('\n');
    }
    out
}

fn show_file(path: &Path) -> Result<()> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    print!("{}", align_tsv(&text));
    Ok(())
}

fn run(args: &RunArgs, stages: &[Stage]) -> Result<()> {
    let pipeline = Pipeline::new(load_config(args)?)?;
    let done = pipeline.run(stages, args.force)?;
    println!("config_hash {}", pipeline.config_hash());
    for (stage, status) in &done {
        let status = match status {
            StageStatus::Ran => "ran",
            StageStatus::UpToDate => "up to date",
        };
        println!("{:<8} {status}", stage.name());
    }
    for (stage, _) in &done {
        match stage {
            Stage::Ingest => print!("{}", describe(&pipeline.artifact("dataset.json"))?.lines().next().unwrap_or("")),
            Stage::Eval => {
                println!("\nmetrics");
                show_file(&pipeline.artifact("metrics.tsv"))?;
                let control = fs::read_to_string(pipeline.artifact("metrics_control.txt"))?;
                if let Some(line) = control.lines().find(|l| l.starts_with("cold.recall@")) {
                    println!("random-embedding control {line}");
                }
            }
            Stage::Bench => {
                println!("\nbench");
                show_file(&pipeline.artifact("bench.tsv"))?;
            }
            _ => continue,
        }
        println!();
    }
    Ok(())
}

fn synth(out: &Path, seed: u64, users: usize, items: usize) -> Result<()> {
    if users == 0 || items == 0 {
        bail!("--users and --items must be positive");
    }
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let corpus = topic_corpus(&TopicCorpusSpec {
        users,
        items,
        seed,
        ..Default::default()
    })?;
    write_graph(&corpus.graph, &corpus.content, &out.join("interactions.tsv"), &out.join("content.tsv"))?;

    let mut config = RunConfig {
        seed,
        ..Default::default()
    };
    config.paths.interactions = "interactions.tsv".into();
    config.paths.content = "content.tsv".into();
    config.paths.out = "run".into();
    config.cf.dim = 32;
    config.cf.epochs = 100;
    config.encoder.dim = 32;
    config.encoder.layers = 1;
    config.encoder.max_len = 64;
    config.tokenizer.max_len = 64;
    config.tokenizer.min_count = 1;
    config.pretrain.epochs = 10;
    config.pretrain.learning_rate = 3e-3;
    config.train.max_epochs = 10;
    config.train.learning_rate = 1e-2;
    config.train.negatives_per_item = 0;
    let path = out.join("config.toml");
    fs::write(&path, config.to_toml()).with_context(|| format!("writing {}", path.display()))?;
    println!(
        "{} users, {} items, {} interactions -> {}",
        corpus.graph.n_users(),
        corpus.graph.n_items(),
        corpus.graph.interactions().len(),
        path.display()
    );
    Ok(())
}

fn dispatch(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Ingest(a) => run(&a, &[Stage::Ingest]),
        Command::InitCf(a) => run(&a, &[Stage::Cf]),
        Command::Train(a) => run(&a, &[Stage::Train]),
        Command::Infer(a) => run(&a, &[Stage::Infer]),
        Command::Refine(a) => run(&a, &[Stage::Refine]),
        Command::Evaluate(a) => run(&a, &[Stage::Eval]),
        Command::Bench(a) => run(&a, &[Stage::Bench]),
        Command::RunAll { run: a, stages } => {
            let stages = if stages.is_empty() { Stage::DEFAULT.to_vec() } else { stages };
            run(&a, &stages)
        }
        Command::Describe { path } => {
            print!("{}", describe(&path)?);
            Ok(())
        }
        Command::Synth { out, seed, users, items } => synth(&out, seed, users, items),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match dispatch(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
