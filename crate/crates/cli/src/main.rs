use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use hetcomm::harness::{aggregate_percentiles, run_eval, run_seed, TrainConfig};
use hetcomm::smoke::run_smoke;
use hetcomm::{CommKind, MixerKind};

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

#[derive(Parser)]
#[command(name = "hetcomm", version, about = "Train and evaluate class-aware communicating agents")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train one run per seed and write metrics plus a checkpoint per seed.
    Train(TrainArgs),
    /// Greedy evaluation of a checkpoint.
    Eval(EvalArgs),
    /// 25/50/75 percentile table across per-seed metric files.
    Aggregate(AggregateArgs),
    /// Fast self-checks on tiny instances.
    Smoke,
}

#[derive(Args)]
struct OutDir {
    /// Output directory.
    #[arg(long, env = "HETCOMM_OUT_DIR", default_value = "runs")]
    out: PathBuf,
}

#[derive(Args)]
struct TrainArgs {
    /// TOML training config; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long)]
    comm: Option<CommKind>,
    #[arg(long)]
    mixer: Option<MixerKind>,
    /// Total environment steps per seed.
    #[arg(long)]
    steps: Option<u64>,
    #[arg(long)]
    eval_interval: Option<u64>,
    #[arg(long)]
    eval_episodes: Option<usize>,
    /// Repeatable; replaces the config's seed list.
    #[arg(long)]
    seed: Vec<u64>,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    checkpoint: PathBuf,
    /// Evaluate on another scenario than the one trained on.
    #[arg(long)]
    scenario: Option<String>,
    #[arg(long, default_value_t = 32)]
    eval_episodes: usize,
    #[command(flatten)]
    out: OutDir,
}

#[derive(Args)]
struct AggregateArgs {
    /// Per-seed metric files.
    #[arg(required = true)]
    metrics: Vec<PathBuf>,
    #[command(flatten)]
    out: OutDir,
}

fn train(args: TrainArgs) -> Result<()> {
    let mut config = match &args.config {
        Some(path) => TrainConfig::load(path).with_context(|| format!("loading {}", path.display()))?,
        None => TrainConfig::default(),
    };
    if let Some(s) = args.scenario {
        config.scenario = s;
        config.scenario_file = None;
    }
    if let Some(c) = args.comm {
        config.comm = c;
    }
    if let Some(m) = args.mixer {
        config.mixer = m;
    }
    if let Some(s) = args.steps {
        config.total_steps = s;
    }
    if let Some(i) = args.eval_interval {
        config.eval_interval = i;
    }
    if let Some(e) = args.eval_episodes {
        config.eval_episodes = e;
    }
    if !args.seed.is_empty() {
        config.seeds = args.seed;
    }
    config.validate()?;
    let out = &args.out.out;
    std::fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    std::fs::write(out.join(format!("{}.toml", config.run_id())), config.to_toml()?)?;
    for &seed in &config.seeds {
        let report = run_seed(&config, seed, out)?;
        let last = report.rows.last();
        println!(
            "seed {seed}: win_rate {:.3} mean_defeated {:.3} mean_reward {:.3} ({} optimizer steps)",
            report.final_eval.win_rate,
            report.final_eval.mean_defeated,
            report.final_eval.mean_reward,
            report.optimizer_steps,
        );
        println!("  metrics {}", report.metrics_path.display());
        println!("  checkpoint {}", report.checkpoint_path.display());
        if let Some(row) = last {
            println!("  last eval at step {}", row.env_step);
        }
    }
    Ok(())
}

fn eval(args: EvalArgs) -> Result<()> {
    let summary = run_eval(&args.checkpoint, args.scenario.as_deref(), args.eval_episodes)?;
    std::fs::create_dir_all(&args.out.out)?;
    let stem = args.checkpoint.file_stem().map_or_else(|| "eval".into(), |s| s.to_string_lossy().into_owned());
    let path = args.out.out.join(format!("{stem}_eval.csv"));
    summary.write_csv(&path)?;
    println!(
        "win_rate {:.3} mean_defeated {:.3} mean_reward {:.3} over {} episodes",
        summary.win_rate,
        summary.mean_defeated,
        summary.mean_reward,
        summary.episodes.len()
    );
    println!("episodes {}", path.display());
    Ok(())
}

fn aggregate(args: AggregateArgs) -> Result<()> {
    std::fs::create_dir_all(&args.out.out)?;
    let path = args.out.out.join("aggregate.csv");
    let inputs: Vec<&Path> = args.metrics.iter().map(PathBuf::as_path).collect();
    let rows = aggregate_percentiles(&inputs, &path)?;
    println!("{} rows written to {}", rows.len(), path.display());
    Ok(())
}

fn smoke() -> Result<()> {
    let checks = run_smoke();
    for c in &checks {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
    }
    let failed = checks.iter().filter(|c| !c.passed).count();
    if failed > 0 {
        bail!("{failed} smoke check(s) failed");
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Train(a) => train(a),
        Command::Eval(a) => eval(a),
        Command::Aggregate(a) => aggregate(a),
        Command::Smoke => smoke(),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
