use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};
use fastwalk_core::harness::{
    collect_random, emit_plots, make_env, parse_assignment, run_experiment, run_suite, ExperimentConfig, Suite,
};
use fastwalk_core::replay::ReplayBuffer;
use fastwalk_core::runtime::{critic_throughput, measure_throughput};
use fastwalk_core::sac::{Agent, Dispatch};

#[derive(Parser)]
#[command(name = "fastwalk", version, about = "Real-time soft actor-critic training for legged locomotion")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train every seed of a config and write curves and a summary.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Run only this seed.
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long, default_value = "runs")]
        out: PathBuf,
        /// Extra `key=value` overrides applied after the config file.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Run an ablation suite: damping, setup, variants or sync.
    Suite {
        #[arg(long)]
        name: String,
        #[arg(long)]
        out: PathBuf,
        /// Base config the suite varies (defaults otherwise).
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        /// Emit plots once the suite finishes.
        #[arg(long)]
        plot: bool,
    },
    /// Measure critic-update throughput and the control rate it supports.
    Bench {
        #[arg(long)]
        config: PathBuf,
        /// Seconds per measurement.
        #[arg(long, default_value_t = 5.0)]
        duration: f64,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
    },
    /// Write and render plots for the summaries under a directory.
    Plot {
        #[arg(long = "in")]
        input: PathBuf,
    },
}

fn load(config: Option<&PathBuf>, set: &[String]) -> Result<ExperimentConfig> {
    let base = match config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::default(),
    };
    let pairs = set.iter().map(|s| parse_assignment(s)).collect::<Result<Vec<_>, _>>()?;
    Ok(base.with_overrides(&pairs)?)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Train { config, seed, out, set } => {
            let mut cfg = load(Some(&config), &set)?;
            if let Some(seed) = seed {
                cfg.seeds = vec![seed];
            }
            let dir = out.join(&cfg.name);
            let result = run_experiment(&cfg, &dir)?;
            println!("config_hash = {}", result.config_hash);
            for s in &result.seeds {
                let last = s.curve.last();
                println!(
                    "seed {}: {} windows, final mean velocity {:.4}, final mean reward {:.4}, {} critic updates",
                    s.seed,
                    s.curve.len(),
                    last.map_or(f64::NAN, |p| p.mean_velocity),
                    last.map_or(f64::NAN, |p| p.mean_reward),
                    s.critic_updates
                );
            }
            println!("wrote {}", dir.display());
        }
        Command::Suite { name, out, config, set, plot } => {
            let suite: Suite = name.parse()?;
            let base = load(config.as_ref(), &set)?;
            let results = run_suite(suite, &base, &out)?;
            println!("{} configs written to {}", results.len(), out.join(suite.name()).display());
            if plot {
                report_plot(&out.join(suite.name()))?;
            }
        }
        Command::Bench { config, duration, set } => bench(&load(Some(&config), &set)?, duration)?,
        Command::Plot { input } => report_plot(&input)?,
    }
    Ok(())
}

fn report_plot(dir: &std::path::Path) -> Result<()> {
    let out = emit_plots(dir)?;
    println!("script {}", out.script.display());
    if out.rendered {
        for img in &out.images {
            println!("image {}", img.display());
        }
    } else {
        eprintln!("warning: rendering failed, run the script by hand\n{}", out.message);
    }
    Ok(())
}

fn bench(cfg: &ExperimentConfig, duration: f64) -> Result<()> {
    let seed = cfg.seeds[0];
    let mut env = make_env(cfg)?;
    let spec = env.spec().clone();
    let fill = cfg.run.warmup_steps.max(cfg.agent.batch_size);
    let mut replay = ReplayBuffer::new(cfg.replay_capacity.max(fill), spec.obs_dim, spec.act_dim);
    collect_random(env.as_mut(), &mut replay, fill, seed).context("filling replay")?;
    let agent = Agent::new(cfg.agent.clone(), spec.obs_dim, spec.act_dim, seed)?;
    println!("config_hash = {}", cfg.hash());
    println!("utd_ratio = {}", cfg.agent.utd_ratio);
    for (name, dispatch) in [("sequential", Dispatch::Sequential), ("fused", Dispatch::Fused)] {
        let stats = measure_throughput(&mut agent.clone(), &replay, duration, dispatch, None)?;
        for line in stats.to_report().lines() {
            println!("{name}.{line}");
        }
    }
    let k = cfg.agent.utd_ratio;
    let rounds = 3;
    let single = critic_throughput(&mut agent.clone(), &replay, 1, Dispatch::Sequential, rounds * k)?;
    let fused = critic_throughput(&mut agent.clone(), &replay, k, Dispatch::Fused, rounds)?;
    println!("single_update_loop_per_second = {single}");
    println!("fused_k{k}_per_second = {fused}");
    println!("fused_speedup = {}", fused / single);
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config = e
                .downcast_ref::<fastwalk_core::Error>()
                .is_some_and(|e| e.is_config());
            ExitCode::from(if config { 2 } else { 1 })
        }
    }
}
