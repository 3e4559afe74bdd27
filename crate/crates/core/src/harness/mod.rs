//! Experiment configuration, seed sweeps, ablation suites, learning curves
//! and plot scripts.

mod config;
mod curve;
mod plot;

use std::fmt;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

pub use config::{parse_assignment, parse_pairs, EnvOverrides, ExperimentConfig};
pub use curve::{
    aggregate_curve, area_under_curve, curve_csv, median, read_csv_rows, steps_to_threshold,
    summarize, summary_csv, CurvePoint, SummaryRow, CURVE_HEADER, SUMMARY_HEADER,
};
pub use plot::{emit_plots, PlotOutput};

use crate::envs::{EnvKind, Environment, Pendulum, Walker};
use crate::error::{Error, Result};
use crate::replay::ReplayBuffer;
use crate::runtime::{run_training, write_timing_report, EvalRecord, RunOutput, StepRecord, TimingStats, UpdateMode};
use crate::sac::{Agent, Variant};

pub fn make_env(cfg: &ExperimentConfig) -> Result<Box<dyn Environment>> {
    Ok(match cfg.env {
        EnvKind::MinimalWalker => Box::new(Walker::new(cfg.walker_params()?)?),
        EnvKind::PendulumSpin => Box::new(Pendulum::new(cfg.pendulum.clone())?),
    })
}

#[derive(Clone, Debug)]
pub struct SeedResult {
    pub seed: u64,
    pub curve: Vec<CurvePoint>,
    pub evals: Vec<EvalRecord>,
    pub timing: TimingStats,
    pub critic_updates: u64,
    pub stopped_early: bool,
    /// Mean joint-velocity reversals per control step over the whole run.
    pub mean_reversals: f64,
}

#[derive(Clone, Debug)]
pub struct ExperimentOutput {
    pub config_hash: String,
    pub seeds: Vec<SeedResult>,
    pub summary: Vec<SummaryRow>,
}

impl ExperimentOutput {
    pub fn curves(&self) -> Vec<Vec<CurvePoint>> {
        self.seeds.iter().map(|s| s.curve.clone()).collect()
    }
}

/// Trains one seed and returns the raw output.
pub fn run_seed(cfg: &ExperimentConfig, seed: u64, checkpoint_dir: Option<PathBuf>) -> Result<(RunOutput, Agent)> {
    cfg.validate()?;
    let mut env = make_env(cfg)?;
    let mut eval_env = make_env(cfg)?;
    let spec = env.spec().clone();
    let mut agent = Agent::new(cfg.agent.clone(), spec.obs_dim, spec.act_dim, seed)?;
    let mut replay = ReplayBuffer::new(cfg.replay_capacity, spec.obs_dim, spec.act_dim);
    let mut run = cfg.run.clone();
    run.seed = seed;
    run.label = cfg.hash()[..12].to_string();
    if run.checkpoint_every > 0 {
        run.checkpoint_dir = checkpoint_dir.or(run.checkpoint_dir);
    }
    let out = run_training(env.as_mut(), Some(eval_env.as_mut()), &mut agent, &mut replay, &run)?;
    Ok((out, agent))
}

fn header(kind: &str, cfg: &ExperimentConfig, hash: &str, seed: Option<u64>) -> String {
    let mut s = format!("# fastwalk {kind}\n# config_hash = {hash}\n");
    if let Some(seed) = seed {
        s.push_str(&format!("# seed = {seed}\n"));
    }
    for line in cfg.resolved_text().lines() {
        s.push_str("# ");
        s.push_str(line);
        s.push('\n');
    }
    s
}

fn step_log_csv(records: &[StepRecord]) -> String {
    let mut s = String::from("step,episode,velocity,reward,reward_velocity,done,truncated,lifted,reversals,critic_updates\n");
    for r in records {
        s.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{}\n",
            r.step,
            r.episode,
            r.velocity,
            r.reward,
            r.reward_velocity,
            r.done as u8,
            r.truncated as u8,
            r.lifted as u8,
            r.reversals,
            r.critic_updates
        ));
    }
    s
}

fn eval_csv(evals: &[EvalRecord]) -> String {
    let mut s = String::from("steps,episode_return,mean_velocity,length\n");
    for e in evals {
        s.push_str(&format!("{},{},{},{}\n", e.step, e.episode_return, e.mean_velocity, e.length));
    }
    s
}

/// Runs every seed and writes, under `out_dir`:
/// `config.txt`, `seed_<n>.csv`, `eval_seed_<n>.csv`, `timing_seed_<n>.txt`,
/// optionally `steps_seed_<n>.csv`, and `summary.csv`. Everything except the
/// timing reports is a deterministic function of the config.
pub fn run_experiment(cfg: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<ExperimentOutput> {
    cfg.validate()?;
    let out_dir = out_dir.as_ref();
    fs::create_dir_all(out_dir)?;
    let hash = cfg.hash();
    fs::write(
        out_dir.join("config.txt"),
        format!("# fastwalk config\n# config_hash = {hash}\n{}", cfg.resolved_text()),
    )?;

    let period = cfg.run.control_period;
    let mut seeds = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let ckpt = out_dir.join("checkpoints").join(format!("seed_{seed}"));
        if cfg.run.checkpoint_every > 0 {
            fs::create_dir_all(&ckpt)?;
        }
        let (out, agent) = run_seed(cfg, seed, Some(ckpt))?;
        let curve = aggregate_curve(&out.records, cfg.run.window, period);
        let head = header("curve", cfg, &hash, Some(seed));
        fs::write(out_dir.join(format!("seed_{seed}.csv")), head + &curve_csv(&curve))?;
        fs::write(
            out_dir.join(format!("eval_seed_{seed}.csv")),
            header("eval", cfg, &hash, Some(seed)) + &eval_csv(&out.evals),
        )?;
        if cfg.step_log {
            fs::write(
                out_dir.join(format!("steps_seed_{seed}.csv")),
                header("steps", cfg, &hash, Some(seed)) + &step_log_csv(&out.records),
            )?;
        }
        write_timing_report(
            out_dir.join(format!("timing_seed_{seed}.txt")),
            &out.timing,
            &[("config_hash".into(), hash.clone()), ("seed".into(), seed.to_string())],
        )?;
        let n = out.records.len().max(1) as f64;
        seeds.push(SeedResult {
            seed,
            mean_reversals: out.records.iter().map(|r| r.reversals).sum::<f64>() / n,
            curve,
            evals: out.evals,
            timing: out.timing,
            critic_updates: agent.critic_update_count(),
            stopped_early: out.stopped_early,
        });
    }
    let summary = summarize(&seeds.iter().map(|s| s.curve.clone()).collect::<Vec<_>>());
    fs::write(
        out_dir.join("summary.csv"),
        header("summary", cfg, &hash, None) + &summary_csv(&summary),
    )?;
    Ok(ExperimentOutput {
        config_hash: hash,
        seeds,
        summary,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Suite {
    Damping,
    Setup,
    Variants,
    Sync,
}

impl Suite {
    pub const ALL: [Suite; 4] = [Suite::Damping, Suite::Setup, Suite::Variants, Suite::Sync];

    pub fn name(self) -> &'static str {
        match self {
            Suite::Damping => "damping",
            Suite::Setup => "setup",
            Suite::Variants => "variants",
            Suite::Sync => "sync",
        }
    }
}

impl fmt::Display for Suite {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Suite {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Suite::ALL
            .into_iter()
            .find(|x| x.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown suite {s:?} (damping, setup, variants or sync)")))
    }
}

/// The configs of an ablation suite built on `base`. Walker suites force
/// `env = minimal_walker`; `variants` also repeats every variant on
/// `pendulum_spin`.
pub fn ablation_suite(suite: Suite, base: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let walker = ExperimentConfig {
        env: EnvKind::MinimalWalker,
        run: crate::runtime::RunConfig {
            control_period: base.walker.control_period,
            ..base.run.clone()
        },
        ..base.clone()
    };
    let named = |name: String, cfg: ExperimentConfig| ExperimentConfig { name, ..cfg };
    let mut out = Vec::new();
    match suite {
        Suite::Damping => {
            for kd in [1.0, 10.0, 20.0] {
                let mut c = named(format!("kd{kd}"), walker.clone());
                c.overrides.kd = Some(kd);
                out.push(c);
            }
        }
        Suite::Setup => {
            out.push(named("baseline".into(), walker.clone()));
            let mut c = named("unconstrained".into(), walker.clone());
            c.overrides.constrained_action = false;
            out.push(c);
            let mut c = named("filter0.8".into(), walker.clone());
            c.overrides.filter = Some(0.8);
            out.push(c);
        }
        Suite::Variants => {
            let pendulum = ExperimentConfig {
                env: EnvKind::PendulumSpin,
                overrides: EnvOverrides::default(),
                run: crate::runtime::RunConfig {
                    control_period: base.pendulum.control_period,
                    ..base.run.clone()
                },
                ..base.clone()
            };
            for (env_cfg, tag) in [(&walker, "walker"), (&pendulum, "pendulum")] {
                for v in Variant::ALL {
                    let agent = variant_agent(&base.agent, v);
                    out.push(ExperimentConfig {
                        name: format!("{tag}_{}", v.label().to_ascii_lowercase()),
                        agent,
                        ..env_cfg.clone()
                    });
                }
            }
        }
        Suite::Sync => {
            for mode in [UpdateMode::PerStep, UpdateMode::PerEpisode] {
                let mut c = named(mode.to_string(), walker.clone());
                c.run.update_mode = mode;
                out.push(c);
            }
        }
    }
    for c in &out {
        c.validate()?;
    }
    Ok(out)
}

/// `v`'s preset with the base config's network and optimizer sizes kept.
fn variant_agent(base: &crate::sac::AgentConfig, v: Variant) -> crate::sac::AgentConfig {
    let preset = crate::sac::AgentConfig::for_variant(v);
    crate::sac::AgentConfig {
        variant: v,
        n_ensemble: preset.n_ensemble,
        target_subset: preset.target_subset,
        utd_ratio: preset.utd_ratio,
        dropout_rate: preset.dropout_rate,
        layer_norm: preset.layer_norm,
        ..base.clone()
    }
}

/// Runs every config of `suite` into `out_dir/<suite>/<config name>/`.
pub fn run_suite(suite: Suite, base: &ExperimentConfig, out_dir: impl AsRef<Path>) -> Result<Vec<ExperimentOutput>> {
    let dir = out_dir.as_ref().join(suite.name());
    ablation_suite(suite, base)?
        .iter()
        .map(|cfg| run_experiment(cfg, dir.join(&cfg.name)))
        .collect()
}

/// Fills `replay` with `n` uniform-random-action transitions from `env`.
pub fn collect_random(env: &mut dyn Environment, replay: &mut ReplayBuffer, n: usize, seed: u64) -> Result<()> {
    let actions = crate::nn::RngStream::new(seed, "collect.actions");
    let resets = crate::nn::RngStream::new(seed, "collect.reset");
    let act_dim = env.spec().act_dim;
    let mut episode = 0;
    let mut obs = env.reset(&mut resets.fork(episode));
    for i in 0..n {
        let mut rng = actions.fork(i as u64);
        let action: Vec<f64> = (0..act_dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        let s = env.step(&action)?;
        replay.push(crate::replay::Transition {
            obs,
            action,
            reward: s.reward,
            next_obs: s.obs.clone(),
            done: s.done,
            truncated: s.truncated && !s.done,
        })?;
        obs = if s.done || s.truncated {
            episode += 1;
            env.reset(&mut resets.fork(episode))
        } else {
            s.obs
        };
    }
    Ok(())
}
