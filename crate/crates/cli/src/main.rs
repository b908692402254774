use std::fs::{self, File};
use std::io::{self, BufReader, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, CommandFactory, Parser, Subcommand};

use ner_core::harness::{self, RunConfig, ScalingMode};
use ner_core::learner::{Learner, ParamsCheckpoint};
use ner_core::maze::Maze;

#[derive(Parser)]
#[command(name = "ner", version, about = "Novelty-scaled intrinsic rewards on a cooperative grid maze")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every configured seed (or just `--seed`).
    Train(TrainArgs),
    /// Greedily evaluate a saved parameter checkpoint.
    Evaluate(EvaluateArgs),
    /// Compute JS distances, revisitation events and heat maps for a run directory.
    Analyze(AnalyzeArgs),
    /// Median and standard deviation of success rate across run directories.
    Aggregate(AggregateArgs),
}

#[derive(Args)]
struct Overrides {
    /// Flat `key = value` configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Run only this seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory; runs go to `<out>/seed<n>/`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Scaling mode.
    #[arg(long, value_parser = ["ner", "unscaled", "none"])]
    mode: Option<String>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    overrides: Overrides,
    /// Overrides `total_steps`.
    #[arg(long)]
    total_steps: Option<u64>,
    /// Delete existing run directories instead of refusing to overwrite them.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvaluateArgs {
    /// A `params/step_<n>.ckpt` file.
    checkpoint: PathBuf,
    /// Configuration to evaluate under; defaults to the run's `config.snapshot`.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long, default_value_t = 32)]
    episodes: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
}

#[derive(Args)]
struct AnalyzeArgs {
    run_dir: PathBuf,
    /// Revisitation threshold.
    #[arg(long, default_value_t = 0.3)]
    delta: f64,
    /// Logarithm base of the JS distance.
    #[arg(long, default_value_t = 2.0)]
    base: f64,
}

#[derive(Args)]
struct AggregateArgs {
    /// Run directories, each containing `curves.csv`.
    #[arg(required = true)]
    run_dirs: Vec<PathBuf>,
    /// Write the table here instead of stdout.
    #[arg(long)]
    out: Option<PathBuf>,
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    match path {
        None => Ok(RunConfig::default()),
        Some(p) => {
            let text = fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
            RunConfig::parse(&text, p.parent()).with_context(|| format!("in {}", p.display()))
        }
    }
}

fn train(args: TrainArgs) -> Result<()> {
    let o = args.overrides;
    let mut config = load_config(o.config.as_deref())?;
    if let Some(seed) = o.seed {
        config.seeds = vec![seed];
    }
    if let Some(out) = o.out {
        config.out_dir = out;
    }
    if let Some(mode) = o.mode {
        config.mode = mode.parse::<ScalingMode>().map_err(anyhow::Error::msg)?;
    }
    if let Some(steps) = args.total_steps {
        config.total_steps = steps;
    }
    config.validate()?;
    if config.partial_final_window() {
        eprintln!("warning: a period does not divide total_steps; the final window is partial");
    }
    for &seed in &config.seeds {
        let dir = config.out_dir.join(format!("seed{seed}"));
        if dir.join("config.snapshot").exists() {
            if !args.force {
                bail!("{} already contains a run; pass --force to replace it", dir.display());
            }
            fs::remove_dir_all(&dir).with_context(|| format!("removing {}", dir.display()))?;
        }
        fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
        let record = harness::run(&config, seed, &dir)?;
        let last = record.evaluations.last().map_or(0.0, |e| e.success_rate);
        println!(
            "seed {seed}: {} steps, {} episodes, final success {last:.3}, {:.1}s -> {}",
            record.steps,
            record.episodes,
            record.wall_clock_secs,
            dir.display()
        );
    }
    Ok(())
}

fn evaluate(args: EvaluateArgs) -> Result<()> {
    let config = match &args.config {
        Some(p) => load_config(Some(p))?,
        None => {
            let snapshot = args
                .checkpoint
                .parent()
                .and_then(Path::parent)
                .map(|d| d.join("config.snapshot"))
                .context("checkpoint is not inside a run directory; pass --config")?;
            load_config(Some(&snapshot))?
        }
    };
    let file = File::open(&args.checkpoint).with_context(|| format!("opening {}", args.checkpoint.display()))?;
    let ckpt: ParamsCheckpoint = serde_json::from_reader(BufReader::new(file))
        .with_context(|| format!("parsing {}", args.checkpoint.display()))?;
    if ckpt.version != ParamsCheckpoint::VERSION {
        bail!("unsupported checkpoint version {}", ckpt.version);
    }
    let maze = Maze::new(harness::load_spec(&config)?)?;
    let learner = Learner::new(config.learner.clone(), ckpt.params);
    let (success, reward) = harness::evaluate(&learner, &maze, args.episodes, args.seed)?;
    println!("step {}: success_rate {success:.4}, mean_reward {reward:.4}", ckpt.step);
    Ok(())
}

fn analyze(args: AnalyzeArgs) -> Result<()> {
    let analysis = harness::analyze_run_dir(&args.run_dir, args.delta, args.base)?;
    println!(
        "{} checkpoints, {} revisitation events at delta {}, {} heat maps written to {}",
        analysis.steps.len(),
        analysis.events.len(),
        args.delta,
        analysis.heatmaps.len(),
        args.run_dir.display()
    );
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    let mut runs = Vec::new();
    for (i, dir) in args.run_dirs.iter().enumerate() {
        runs.push((i as u64, harness::read_curves(&dir.join("curves.csv"))?));
    }
    let points = harness::aggregate(&runs)?;
    match args.out {
        Some(path) => {
            let file = File::create(&path).with_context(|| format!("creating {}", path.display()))?;
            harness::write_aggregate(io::BufWriter::new(file), &points)?;
        }
        None => {
            let mut stdout = io::stdout().lock();
            harness::write_aggregate(&mut stdout, &points)?;
            stdout.flush()?;
        }
    }
    Ok(())
}

fn usage_for(subcommand: Option<&str>) -> String {
    let mut cmd = Cli::command();
    cmd.build();
    match subcommand.and_then(|name| cmd.find_subcommand_mut(name)) {
        Some(sub) => sub.render_usage().to_string(),
        None => cmd.render_usage().to_string(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => e.exit(),
        Err(e) => {
            let _ = e.print();
            if e.kind() != ErrorKind::UnknownArgument && e.kind() != ErrorKind::MissingRequiredArgument {
                eprintln!("\n{}", usage_for(std::env::args().nth(1).as_deref()));
            }
            return ExitCode::from(2);
        }
    };
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Evaluate(a) => evaluate(a),
        Command::Analyze(a) => analyze(a),
        Command::Aggregate(a) => aggregate(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
