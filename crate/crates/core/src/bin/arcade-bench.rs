//! `arcade-bench run | eval | export`

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use modular_arcade::agent::{Agent, Variant};
use modular_arcade::bench::{plot_export, run_experiment, write_tidy, ExperimentSpec};
use modular_arcade::env::EnvKind;
use modular_arcade::kv::KvConfig;
use modular_arcade::{Error, Result};

#[derive(Parser)]
#[command(name = "arcade-bench", about = "Train, evaluate and export arcade agent experiments")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug plus per-step JSON logs).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train seeds and write learning curves, an aggregate and a manifest.
    Run {
        #[arg(long, default_value = "duel")]
        env: EnvKind,
        #[arg(long, value_delimiter = ',', default_value = "0")]
        seeds: Vec<u64>,
        #[arg(long, default_value_t = 25_000)]
        budget: u64,
        #[arg(long, default_value = "full")]
        variant: Variant,
        #[arg(long, default_value_t = 1_000)]
        eval_every: u64,
        #[arg(long, default_value_t = 10)]
        eval_episodes: u64,
        /// Key-value file; its values override the flags above.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Evaluate a saved agent with a frozen policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 50)]
        episodes: u64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, default_value_t = 2_000)]
        max_steps: u64,
    },
    /// Merge curve CSVs into one tidy table.
    Export {
        #[arg(long)]
        out: PathBuf,
        inputs: Vec<PathBuf>,
    },
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run {
            env,
            seeds,
            budget,
            variant,
            eval_every,
            eval_episodes,
            config,
            out,
            workers,
        } => {
            let mut spec = ExperimentSpec::new(env, variant, seeds, budget, out);
            spec.eval_every = eval_every;
            spec.eval_episodes = eval_episodes;
            spec.debug_log = cli.verbose >= 2;
            if let Some(path) = config {
                spec.apply_kv(&KvConfig::load(path)?)?;
            }
            let output = run_experiment(&spec, workers)?;
            for p in output.curves.iter().chain([&output.aggregate, &output.manifest]) {
                println!("{}", p.display());
            }
        }
        Command::Eval {
            checkpoint,
            episodes,
            seed,
            max_steps,
        } => {
            let agent = Agent::from_checkpoint(&checkpoint)?;
            let m = agent.evaluate(episodes, seed, max_steps)?;
            println!("env                {}", agent.env());
            println!("episodes           {}", m.episodes);
            println!("mean score         {:.3}", m.mean_score);
            println!("max score          {}", m.max_score);
            println!("interception rate  {:.3}", m.interception_rate);
            println!("mean rally length  {:.3}", m.mean_rally_length);
            println!("goal success       {:.3}", m.goal_success);
        }
        Command::Export { out, inputs } => {
            let rows = plot_export(&inputs)?;
            write_tidy(&out, &rows)?;
            println!("{} rows -> {}", rows.len(), out.display());
        }
    }
    Ok(())
}

fn exit_code(e: &Error) -> u8 {
    match e.category() {
        "config" => 2,
        "io" => 3,
        "parse" => 4,
        "checkpoint" => 5,
        "numeric" => 6,
        _ => 1,
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error [{}]: {e}", e.category());
            ExitCode::from(exit_code(&e))
        }
    }
}
