//! `scrapelab` command-line front end.
//!
//! Exit codes: 0 success, 2 usage or configuration error, 3 numerical or
//! dynamics failure, 4 I/O or file-format error.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use scrapelab::commands::{cmd_compare, cmd_eval, cmd_perception_eval, cmd_render, cmd_train, Invocation};
use scrapelab::config::RunConfig;
use scrapelab::Error;

#[derive(Parser, Debug)]
#[command(name = "scrapelab", version, about = "Simulated force-adaptive in-vial scraping")]
struct Cli {
    /// Flat key = value configuration file; defaults apply to absent keys.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `seed.policy`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Parallel rollout and evaluation workers.
    #[arg(long, global = true)]
    workers: Option<usize>,
    /// Output directory; defaults to `<output_dir>/<command>`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a policy with PPO.
    Train {
        /// Overrides `ppo.total_updates`.
        #[arg(long)]
        updates: Option<usize>,
    },
    /// Evaluate a checkpoint on the held-out profiles.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        /// Overrides `eval.episodes`.
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Compare a checkpoint with the fixed-wrench baseline.
    Compare {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        episodes: Option<usize>,
    },
    /// Score the perception pipeline on synthetic scenes.
    PerceptionEval {
        /// Overrides `perception.scenes`.
        #[arg(long)]
        scenes: Option<usize>,
    },
    /// Replay an evaluation episode log into wall-map frames.
    Render {
        #[arg(long)]
        log: PathBuf,
        #[arg(long)]
        profile: u64,
        #[arg(long, default_value_t = 0)]
        episode: u64,
    },
}

impl Command {
    fn name(&self) -> &'static str {
        match self {
            Command::Train { .. } => "train",
            Command::Eval { .. } => "eval",
            Command::Compare { .. } => "compare",
            Command::PerceptionEval { .. } => "perception-eval",
            Command::Render { .. } => "render",
        }
    }
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::InvalidArgument(_) | Error::Config(_) => 2,
        Error::Dynamics(_) | Error::Numerical(_) => 3,
        Error::Format(_) | Error::Io(_) => 4,
    }
}

fn run(cli: Cli) -> scrapelab::Result<()> {
    let mut cfg = match &cli.config {
        Some(p) => RunConfig::load(p)?,
        None => RunConfig::default(),
    };
    if let Some(s) = cli.seed {
        cfg.seeds.policy_seed = s;
    }
    if let Some(w) = cli.workers {
        cfg.workers = w;
    }
    match &cli.command {
        Command::Train { updates: Some(u) } => cfg.ppo.total_updates = *u,
        Command::Eval { episodes: Some(n), .. } | Command::Compare { episodes: Some(n), .. } => cfg.eval_episodes = *n,
        Command::PerceptionEval { scenes: Some(n) } => cfg.perception.scenes = *n,
        _ => {}
    }
    cfg.validate()?;
    let out = cli.out.clone().unwrap_or_else(|| PathBuf::from(&cfg.output_dir).join(cli.command.name()));
    let command_line = std::env::args().collect::<Vec<_>>().join(" ");
    let inv = Invocation { config: &cfg, out: &out, command_line: &command_line };
    match &cli.command {
        Command::Train { .. } => {
            let o = cmd_train(&inv)?;
            if let Some(last) = o.curve.last() {
                println!("update {} mean_return {} removed {}", last.update, last.mean_return, last.mean_removed_fraction);
            }
        }
        Command::Eval { checkpoint, .. } => {
            let rows = cmd_eval(&inv, checkpoint)?;
            let n = rows.len().max(1) as f64;
            println!("episodes {} mean_removed {}", rows.len(), rows.iter().map(|r| r.result.removed_fraction).sum::<f64>() / n);
        }
        Command::Compare { checkpoint, .. } => print!("{}", cmd_compare(&inv, checkpoint)?.summary_text()),
        Command::PerceptionEval { .. } => {
            let res = cmd_perception_eval(&inv)?;
            println!("scenes {}", res.len());
        }
        Command::Render { log, profile, episode } => println!("frames {}", cmd_render(&inv, log, *profile, *episode)?),
    }
    println!("wrote {}", out.display());
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
