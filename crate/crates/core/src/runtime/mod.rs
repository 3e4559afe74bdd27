//! Synchronous training loop, fused update dispatch and throughput
//! measurement.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use crate::envs::Environment;
use crate::error::{Error, Result};
use crate::nn::RngStream;
use crate::replay::{ReplayBuffer, Transition};
use crate::sac::{ActionMode, Agent, Dispatch, UpdateReport};

/// Random-stream names used by the loop.
pub mod streams {
    pub const WARMUP: &str = "run.warmup_actions";
    pub const POLICY: &str = "run.policy_actions";
    pub const RESET: &str = "run.reset";
    pub const EVAL_RESET: &str = "run.eval_reset";
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UpdateMode {
    /// One `train_step` after every environment step.
    #[default]
    PerStep,
    /// As many `train_step`s as collected steps, run at episode boundaries.
    PerEpisode,
}

impl std::str::FromStr for UpdateMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "per_step" => Ok(UpdateMode::PerStep),
            "per_episode" => Ok(UpdateMode::PerEpisode),
            _ => Err(Error::Config(format!("unknown update mode {s:?} (per_step or per_episode)"))),
        }
    }
}

impl std::fmt::Display for UpdateMode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            UpdateMode::PerStep => "per_step",
            UpdateMode::PerEpisode => "per_episode",
        })
    }
}

/// Per-step quantity averaged for `stop_at_reward`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StopMetric {
    #[default]
    Reward,
    RewardVelocity,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub total_steps: usize,
    /// Uniform random actions and no updates for this many steps.
    pub warmup_steps: usize,
    pub update_mode: UpdateMode,
    pub control_period: f64,
    /// Sleep to the control period after each step and count overruns.
    pub realtime_emulation: bool,
    pub fused_updates: bool,
    pub seed: u64,
    /// Deterministic evaluation episode every this many steps (0 = never).
    pub eval_every: usize,
    pub checkpoint_every: usize,
    pub checkpoint_dir: Option<PathBuf>,
    /// Curve window length in steps.
    pub window: usize,
    /// Stop once a completed window's mean `stop_metric` reaches this value.
    pub stop_at_reward: Option<f64>,
    pub stop_metric: StopMetric,
    /// Label carried into error diagnostics (usually the config hash).
    pub label: String,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            total_steps: 20_000,
            warmup_steps: 1000,
            update_mode: UpdateMode::PerStep,
            control_period: 0.05,
            realtime_emulation: false,
            fused_updates: false,
            seed: 0,
            eval_every: 1000,
            checkpoint_every: 0,
            checkpoint_dir: None,
            window: 1000,
            stop_at_reward: None,
            stop_metric: StopMetric::Reward,
            label: String::new(),
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        if self.warmup_steps > self.total_steps {
            return Err(Error::Config(format!(
                "warmup {} exceeds total steps {}",
                self.warmup_steps, self.total_steps
            )));
        }
        if !(self.control_period > 0.0) {
            return Err(Error::Config("control period must be positive".into()));
        }
        if self.window == 0 {
            return Err(Error::Config("window must be positive".into()));
        }
        if self.checkpoint_every > 0 && self.checkpoint_dir.is_none() {
            return Err(Error::Config("checkpoint_every needs a checkpoint directory".into()));
        }
        Ok(())
    }

    fn dispatch(&self) -> Dispatch {
        if self.fused_updates {
            Dispatch::Fused
        } else {
            Dispatch::Sequential
        }
    }
}

/// One row of the raw per-step log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub step: u64,
    pub episode: u64,
    pub velocity: f64,
    pub reward: f64,
    pub reward_velocity: f64,
    pub done: bool,
    pub truncated: bool,
    pub lifted: bool,
    pub reversals: f64,
    /// Transitions pushed to replay when this step's updates started.
    pub pushed: u64,
    /// Cumulative critic updates after this step.
    pub critic_updates: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub step: u64,
    pub episode_return: f64,
    pub mean_velocity: f64,
    pub length: usize,
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TimingStats {
    pub steps: u64,
    pub critic_updates: u64,
    pub update_seconds: f64,
    pub mean_update_seconds_per_step: f64,
    pub max_update_seconds_per_step: f64,
    pub critic_updates_per_second: f64,
    /// Highest synchronous control rate the measured throughput supports:
    /// updates per second divided by the update-to-data ratio.
    pub feasible_control_hz: f64,
    pub deadline_misses: u64,
}

impl TimingStats {
    pub fn from_durations(durations: &[f64], critic_updates: u64, utd_ratio: usize, period: f64) -> Self {
        let total: f64 = durations.iter().sum();
        let ups = if total > 0.0 { critic_updates as f64 / total } else { 0.0 };
        Self {
            steps: durations.len() as u64,
            critic_updates,
            update_seconds: total,
            mean_update_seconds_per_step: if durations.is_empty() {
                0.0
            } else {
                total / durations.len() as f64
            },
            max_update_seconds_per_step: durations.iter().copied().fold(0.0, f64::max),
            critic_updates_per_second: ups,
            feasible_control_hz: feasible_control_hz(ups, utd_ratio),
            deadline_misses: deadline_misses(durations, period),
        }
    }

    /// Structured text, one `key = value` per line.
    pub fn to_report(&self) -> String {
        format!(
            "steps = {}\ncritic_updates = {}\nupdate_seconds = {}\nmean_update_seconds_per_step = {}\n\
             max_update_seconds_per_step = {}\ncritic_updates_per_second = {}\nfeasible_control_hz = {}\n\
             deadline_misses = {}\n",
            self.steps,
            self.critic_updates,
            self.update_seconds,
            self.mean_update_seconds_per_step,
            self.max_update_seconds_per_step,
            self.critic_updates_per_second,
            self.feasible_control_hz,
            self.deadline_misses
        )
    }
}

pub fn feasible_control_hz(updates_per_second: f64, utd_ratio: usize) -> f64 {
    updates_per_second / utd_ratio.max(1) as f64
}

/// Steps whose update work alone overran the control period.
pub fn deadline_misses(durations: &[f64], period: f64) -> u64 {
    durations.iter().filter(|&&d| d > period).count() as u64
}

/// Writes `key = value` lines: the extra entries first, then the timing.
pub fn write_timing_report(path: impl AsRef<Path>, stats: &TimingStats, extra: &[(String, String)]) -> Result<()> {
    let mut out = std::fs::File::create(path)?;
    for (k, v) in extra {
        writeln!(out, "{k} = {v}")?;
    }
    out.write_all(stats.to_report().as_bytes())?;
    Ok(())
}

#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub records: Vec<StepRecord>,
    pub evals: Vec<EvalRecord>,
    pub timing: TimingStats,
    pub last_report: UpdateReport,
    pub episodes: u64,
    /// Set when `stop_at_reward` ended the run early.
    pub stopped_early: bool,
}

impl RunOutput {
    pub fn critic_updates(&self) -> u64 {
        self.records.last().map_or(0, |r| r.critic_updates)
    }
}

fn uniform_action(dim: usize, rng: &mut RngStream) -> Vec<f64> {
    (0..dim).map(|_| rng.uniform_range(-1.0, 1.0)).collect()
}

/// `k` critic updates dispatched as one unit.
pub fn fused_update(agent: &mut Agent, replay: &ReplayBuffer, k: usize) -> Result<UpdateReport> {
    if k == 0 {
        return Err(Error::Config("fused update needs k >= 1".into()));
    }
    agent.fused_critic_updates(replay, k)
}

/// Runs one deterministic episode on `env`; nothing enters replay.
pub fn evaluate(env: &mut dyn Environment, agent: &Agent, rng: &mut RngStream) -> Result<EvalRecord> {
    let mut obs = env.reset(rng);
    let mut ret = 0.0;
    let mut vel = 0.0;
    let mut len = 0;
    let mut noise = RngStream::new(0, "unused");
    loop {
        let a = agent.act(&obs, &mut noise, ActionMode::Deterministic)?;
        let s = env.step(&a)?;
        ret += s.reward;
        vel += s.info.velocity;
        len += 1;
        obs = s.obs;
        if s.done || s.truncated {
            break;
        }
    }
    Ok(EvalRecord {
        step: 0,
        episode_return: ret,
        mean_velocity: vel / len as f64,
        length: len,
    })
}

/// The synchronous control loop: observe, act (uniformly at random during
/// warmup), step, store, update, log.
pub fn run_training(
    env: &mut dyn Environment,
    mut eval_env: Option<&mut dyn Environment>,
    agent: &mut Agent,
    replay: &mut ReplayBuffer,
    cfg: &RunConfig,
) -> Result<RunOutput> {
    cfg.validate()?;
    let spec = env.spec().clone();
    if spec.obs_dim != agent.obs_dim() || spec.act_dim != agent.act_dim() {
        return Err(Error::shape(
            "environment vs agent dims",
            format!("({}, {})", agent.obs_dim(), agent.act_dim()),
            format!("({}, {})", spec.obs_dim, spec.act_dim),
        ));
    }
    if replay.obs_dim() != spec.obs_dim || replay.act_dim() != spec.act_dim {
        return Err(Error::shape(
            "replay vs environment dims",
            format!("({}, {})", spec.obs_dim, spec.act_dim),
            format!("({}, {})", replay.obs_dim(), replay.act_dim()),
        ));
    }
    let wrap = |step: usize, e: Error| Error::Run {
        step: step as u64,
        seed: cfg.seed,
        config: if cfg.label.is_empty() { "-".into() } else { cfg.label.clone() },
        source: Box::new(e),
    };

    let seed = cfg.seed;
    let warmup_rng = RngStream::new(seed, streams::WARMUP);
    let policy_rng = RngStream::new(seed, streams::POLICY);
    let reset_rng = RngStream::new(seed, streams::RESET);
    let eval_rng = RngStream::new(seed, streams::EVAL_RESET);
    let dispatch = cfg.dispatch();
    let utd = agent.config().utd_ratio;

    let mut out = RunOutput::default();
    let mut durations = Vec::with_capacity(cfg.total_steps);
    let mut episode = 0u64;
    let mut obs = env.reset(&mut reset_rng.fork(episode));
    let mut pending = 0usize;
    let mut window_reward = 0.0;

    for step in 0..cfg.total_steps {
        let wall = Instant::now();
        let action = if step < cfg.warmup_steps {
            uniform_action(spec.act_dim, &mut warmup_rng.fork(step as u64))
        } else {
            agent
                .act(&obs, &mut policy_rng.fork(step as u64), ActionMode::Stochastic)
                .map_err(|e| wrap(step, e))?
        };
        let s = env.step(&action).map_err(|e| wrap(step, e))?;
        replay
            .push(Transition {
                obs: std::mem::take(&mut obs),
                action,
                reward: s.reward,
                next_obs: s.obs.clone(),
                done: s.done,
                truncated: s.truncated && !s.done,
            })
            .map_err(|e| wrap(step, e))?;
        let pushed = replay.total_pushed();
        let episode_over = s.done || s.truncated;

        let update_start = Instant::now();
        if step >= cfg.warmup_steps {
            match cfg.update_mode {
                UpdateMode::PerStep => {
                    out.last_report = agent.train_step_with(replay, dispatch).map_err(|e| wrap(step, e))?;
                }
                UpdateMode::PerEpisode => pending += 1,
            }
        }
        let flush = episode_over || step + 1 == cfg.total_steps;
        if cfg.update_mode == UpdateMode::PerEpisode && flush {
            for _ in 0..std::mem::take(&mut pending) {
                out.last_report = agent.train_step_with(replay, dispatch).map_err(|e| wrap(step, e))?;
            }
        }
        durations.push(update_start.elapsed().as_secs_f64());

        out.records.push(StepRecord {
            step: step as u64,
            episode,
            velocity: s.info.velocity,
            reward: s.reward,
            reward_velocity: s.info.reward_velocity,
            done: s.done,
            truncated: s.truncated,
            lifted: s.info.lifted,
            reversals: s.info.reversals,
            pushed,
            critic_updates: agent.critic_update_count(),
        });

        if episode_over {
            episode += 1;
            obs = env.reset(&mut reset_rng.fork(episode));
        } else {
            obs = s.obs;
        }

        let done_steps = step + 1;
        if cfg.eval_every > 0 && done_steps % cfg.eval_every == 0 {
            if let Some(ev) = eval_env.as_deref_mut() {
                let mut rec = evaluate(ev, agent, &mut eval_rng.fork(done_steps as u64)).map_err(|e| wrap(step, e))?;
                rec.step = done_steps as u64;
                out.evals.push(rec);
            }
        }
        if cfg.checkpoint_every > 0 && done_steps % cfg.checkpoint_every == 0 {
            if let Some(dir) = &cfg.checkpoint_dir {
                let path = dir.join(format!("checkpoint_{done_steps:07}.json"));
                agent.save_checkpoint(path).map_err(|e| wrap(step, e))?;
            }
        }

        window_reward += match cfg.stop_metric {
            StopMetric::Reward => s.reward,
            StopMetric::RewardVelocity => s.info.reward_velocity,
        };
        if done_steps % cfg.window == 0 {
            let mean = window_reward / cfg.window as f64;
            window_reward = 0.0;
            if cfg.stop_at_reward.is_some_and(|t| mean >= t) {
                out.stopped_early = done_steps < cfg.total_steps;
                break;
            }
        }

        if cfg.realtime_emulation {
            let period = Duration::from_secs_f64(cfg.control_period);
            let spent = wall.elapsed();
            if spent < period {
                std::thread::sleep(period - spent);
            }
        }
    }
    out.episodes = episode;
    out.timing = TimingStats::from_durations(&durations, agent.critic_update_count(), utd, cfg.control_period);
    Ok(out)
}

/// Runs `train_step` repeatedly for `duration` seconds and reports the
/// achieved critic-update throughput. With `realtime`, each step is padded
/// to `period` and overruns are counted as deadline misses.
pub fn measure_throughput(
    agent: &mut Agent,
    replay: &ReplayBuffer,
    duration: f64,
    dispatch: Dispatch,
    realtime: Option<f64>,
) -> Result<TimingStats> {
    if replay.len() < agent.config().batch_size {
        return Err(Error::Config(format!(
            "throughput needs at least {} transitions in replay, found {}",
            agent.config().batch_size,
            replay.len()
        )));
    }
    let start_updates = agent.critic_update_count();
    let start = Instant::now();
    let mut durations = Vec::new();
    let mut misses = 0;
    while start.elapsed().as_secs_f64() < duration || durations.is_empty() {
        let t = Instant::now();
        agent.train_step_with(replay, dispatch)?;
        let d = t.elapsed();
        durations.push(d.as_secs_f64());
        if let Some(period) = realtime {
            let p = Duration::from_secs_f64(period);
            if d > p {
                misses += 1;
            } else {
                std::thread::sleep(p - d);
            }
        }
    }
    let updates = agent.critic_update_count() - start_updates;
    let period = realtime.unwrap_or(f64::INFINITY);
    let mut stats = TimingStats::from_durations(&durations, updates, agent.config().utd_ratio, period);
    if realtime.is_some() {
        stats.deadline_misses = misses;
    }
    Ok(stats)
}

/// Critic updates per second for `k` updates issued through `dispatch`,
/// averaged over `repeats` rounds.
pub fn critic_throughput(agent: &mut Agent, replay: &ReplayBuffer, k: usize, dispatch: Dispatch, repeats: usize) -> Result<f64> {
    let start = Instant::now();
    for _ in 0..repeats {
        match dispatch {
            Dispatch::Fused => {
                agent.fused_critic_updates(replay, k)?;
            }
            Dispatch::Sequential => {
                agent.sequential_critic_updates(replay, k)?;
            }
        }
    }
    Ok((k * repeats) as f64 / start.elapsed().as_secs_f64())
}
