//! The learner: critic targets, critic/actor/temperature updates and the
//! per-environment-step training schedule.
//!
//! Every random draw comes from a stream forked by the update counter (see
//! [`streams`]), so the outcome of update `u` depends only on the agent's
//! seed, its state, and the replay contents, not on how updates were
//! dispatched.

use std::path::Path;
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::config::AgentConfig;
use super::critic::{critic_input_into, subset_min, CriticEnsemble};
use super::policy::{ActionMode, Policy};
use crate::error::{Error, Result};
use crate::nn::{adam_step, HiddenRegularization, Matrix, MlpGrads, Mode, RngStream, Tape};
use crate::replay::{Batch, ReplayBuffer};

/// Stream names of the update schedule.
pub mod streams {
    pub const INIT_ACTOR: &str = "init.actor";
    pub const INIT_CRITICS: &str = "init.critics";
    pub const BATCH: &str = "critic.batch";
    pub const SUBSET: &str = "critic.subset";
    pub const TARGET_NOISE: &str = "critic.target_noise";
    pub const TARGET_DROPOUT: &str = "critic.target_dropout";
    pub const CRITIC_DROPOUT: &str = "critic.dropout";
    pub const ACTOR_BATCH: &str = "actor.batch";
    pub const ACTOR_NOISE: &str = "actor.noise";
    pub const ACTOR_DROPOUT: &str = "actor.critic_dropout";
}

/// Summary of one or more updates.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateReport {
    /// Replay held fewer than `batch_size` transitions; nothing ran.
    pub skipped: bool,
    pub critic_updates: usize,
    pub actor_updates: usize,
    /// Mean critic loss over the critic updates in this report.
    pub critic_loss: f64,
    pub actor_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub mean_q: f64,
    pub target_mean: f64,
    pub target_std: f64,
    /// Wall-clock duration of the work in this report.
    pub elapsed_s: f64,
}

impl UpdateReport {
    pub fn skipped() -> Self {
        Self {
            skipped: true,
            ..Self::default()
        }
    }

    /// Equality of every numeric field except the wall-clock duration.
    pub fn same_values(&self, other: &UpdateReport) -> bool {
        let strip = |r: &UpdateReport| UpdateReport {
            elapsed_s: 0.0,
            ..r.clone()
        };
        strip(self) == strip(other)
    }

    fn absorb_critic(&mut self, loss: f64, mean_q: f64, y: &[f64]) {
        let n = self.critic_updates as f64;
        let (ym, ys) = mean_std(y);
        self.critic_loss = (self.critic_loss * n + loss) / (n + 1.0);
        self.mean_q = (self.mean_q * n + mean_q) / (n + 1.0);
        self.target_mean = (self.target_mean * n + ym) / (n + 1.0);
        self.target_std = (self.target_std * n + ys) / (n + 1.0);
        self.critic_updates += 1;
    }

    fn absorb_actor(&mut self, other: &UpdateReport) {
        self.actor_updates += other.actor_updates;
        self.actor_loss = other.actor_loss;
        self.alpha_loss = other.alpha_loss;
        self.alpha = other.alpha;
    }
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

/// Bootstrap targets and the quantities they were built from.
#[derive(Clone, Debug, PartialEq)]
pub struct TargetInfo {
    pub y: Vec<f64>,
    /// Target critics the minimum was taken over.
    pub subset: Vec<usize>,
    pub subset_min: Vec<f64>,
    pub next_log_prob: Vec<f64>,
}

/// How the critic updates of a training step are dispatched.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum Dispatch {
    /// One update at a time through the public per-update calls.
    #[default]
    Sequential,
    /// All critic updates of the step as one unit.
    Fused,
}

/// Reusable buffers for the update paths.
#[derive(Clone, Debug, Default)]
struct Workspace {
    input: Matrix,
    tapes: Vec<Tape>,
    grads: Vec<MlpGrads>,
    next_q: Vec<Matrix>,
    upstream: Matrix,
    batch: Batch,
    indices: Vec<usize>,
    noise: Matrix,
    chunk_obs: Matrix,
    chunk_actions: Matrix,
    chunk_next_obs: Matrix,
    chunk_next_actions: Matrix,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct Agent {
    config: AgentConfig,
    seed: u64,
    obs_dim: usize,
    act_dim: usize,
    pub policy: Policy,
    pub critics: CriticEnsemble,
    critic_updates: u64,
    actor_updates: u64,
    #[serde(skip)]
    ws: Workspace,
}

impl PartialEq for Agent {
    fn eq(&self, other: &Self) -> bool {
        self.config == other.config
            && self.seed == other.seed
            && self.obs_dim == other.obs_dim
            && self.act_dim == other.act_dim
            && self.policy == other.policy
            && self.critics == other.critics
            && self.critic_updates == other.critic_updates
            && self.actor_updates == other.actor_updates
    }
}

const CHECKPOINT_FORMAT: &str = "fastwalk-agent";
const CHECKPOINT_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    version: u32,
    agent: Agent,
}

impl Agent {
    pub fn new(config: AgentConfig, obs_dim: usize, act_dim: usize, seed: u64) -> Result<Self> {
        config.validate()?;
        if obs_dim == 0 || act_dim == 0 {
            return Err(Error::Config("observation and action dims must be positive".into()));
        }
        let policy = Policy::new(
            obs_dim,
            act_dim,
            &config.hidden,
            config.actor_lr,
            config.alpha_lr,
            config.init_alpha,
            (config.log_std_min, config.log_std_max),
            &mut RngStream::new(seed, streams::INIT_ACTOR),
        )?;
        let reg = HiddenRegularization {
            layer_norm: config.layer_norm,
            dropout_rate: config.dropout_rate,
        };
        let critics = CriticEnsemble::new(
            config.n_ensemble,
            obs_dim + act_dim,
            &config.hidden,
            reg,
            config.critic_lr,
            &mut RngStream::new(seed, streams::INIT_CRITICS),
        )?;
        Ok(Self {
            config,
            seed,
            obs_dim,
            act_dim,
            policy,
            critics,
            critic_updates: 0,
            actor_updates: 0,
            ws: Workspace::default(),
        })
    }

    pub fn config(&self) -> &AgentConfig {
        &self.config
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn obs_dim(&self) -> usize {
        self.obs_dim
    }

    pub fn act_dim(&self) -> usize {
        self.act_dim
    }

    pub fn critic_update_count(&self) -> u64 {
        self.critic_updates
    }

    pub fn actor_update_count(&self) -> u64 {
        self.actor_updates
    }

    fn stream(&self, name: &str, index: u64) -> RngStream {
        RngStream::new(self.seed, name).fork(index)
    }

    pub fn act(&self, obs: &[f64], rng: &mut RngStream, mode: ActionMode) -> Result<Vec<f64>> {
        if obs.len() != self.obs_dim {
            return Err(Error::shape("agent observation", self.obs_dim, obs.len()));
        }
        Ok(self.policy.sample_action(obs, rng, mode)?.0)
    }

    /// Bootstrap targets for `batch` under the schedule of the next critic
    /// update.
    pub fn compute_target(&mut self, batch: &Batch) -> Result<TargetInfo> {
        if batch.is_empty() {
            return Err(Error::Empty("target batch"));
        }
        let u = self.critic_updates;
        let noise = self
            .policy
            .draw_noise(batch.len(), &mut self.stream(streams::TARGET_NOISE, u));
        let sample = self.policy.evaluate(&batch.next_obs, Some(&noise))?;
        self.targets_from(
            &batch.next_obs,
            &sample.actions,
            &sample.log_prob,
            &batch.rewards,
            &batch.terminal,
            u,
        )
    }

    /// Target Q values of every target critic for the given next states and
    /// actions, with the dropout draws of critic update `update_index`.
    pub fn target_q_values(
        &self,
        next_obs: &Matrix,
        next_actions: &Matrix,
        update_index: u64,
    ) -> Result<Vec<Matrix>> {
        let mut input = Matrix::zeros(0, 0);
        critic_input_into(next_obs, next_actions, &mut input);
        let root = self.stream(streams::TARGET_DROPOUT, update_index);
        self.critics
            .target
            .iter()
            .enumerate()
            .map(|(i, net)| {
                let mut rng = root.fork(i as u64);
                Ok(net.forward(&input, Mode::Train, Some(&mut rng))?.output().clone())
            })
            .collect()
    }

    fn targets_from(
        &mut self,
        next_obs: &Matrix,
        next_actions: &Matrix,
        next_log_prob: &[f64],
        rewards: &[f64],
        terminal: &[f64],
        u: u64,
    ) -> Result<TargetInfo> {
        let cfg = &self.config;
        let subset = self
            .stream(streams::SUBSET, u)
            .distinct(cfg.n_ensemble, cfg.target_subset);
        critic_input_into(next_obs, next_actions, &mut self.ws.input);
        let root = self.stream(streams::TARGET_DROPOUT, u);
        let n = self.critics.len();
        self.ws.tapes.resize_with(n, Tape::default);
        self.ws.next_q.resize_with(n, Matrix::default);
        for &i in &subset {
            let mut rng = root.fork(i as u64);
            self.critics.target[i].forward_with(
                &self.ws.input,
                Mode::Train,
                Some(&mut rng),
                &mut self.ws.tapes[i],
            )?;
            self.ws.next_q[i].copy_from(self.ws.tapes[i].output());
        }
        let min_q = subset_min(&self.ws.next_q, &subset);
        let alpha = if cfg.entropy_in_target {
            self.policy.alpha()
        } else {
            0.0
        };
        let gamma = cfg.discount;
        let y: Vec<f64> = (0..rewards.len())
            .map(|b| {
                let soft = min_q[b] - alpha * next_log_prob[b];
                rewards[b] + (1.0 - terminal[b]) * gamma * soft
            })
            .collect();
        Ok(TargetInfo {
            y,
            subset,
            subset_min: min_q,
            next_log_prob: next_log_prob.to_vec(),
        })
    }

    /// Regresses every online critic onto `y`, then moves every target critic
    /// toward its online network.
    pub fn critic_update(&mut self, batch: &Batch, y: &[f64]) -> Result<UpdateReport> {
        let start = Instant::now();
        let (loss, mean_q) = self.critic_step(&batch.obs, &batch.actions, y)?;
        let mut report = UpdateReport::default();
        report.absorb_critic(loss, mean_q, y);
        report.alpha = self.policy.alpha();
        report.elapsed_s = start.elapsed().as_secs_f64();
        Ok(report)
    }

    fn critic_step(&mut self, obs: &Matrix, actions: &Matrix, y: &[f64]) -> Result<(f64, f64)> {
        let b = obs.rows();
        if y.len() != b || actions.rows() != b {
            return Err(Error::shape("critic update batch", b, y.len()));
        }
        let u = self.critic_updates;
        critic_input_into(obs, actions, &mut self.ws.input);
        let n = self.critics.len();
        self.ws.tapes.resize_with(n, Tape::default);
        self.ws.grads.resize_with(n, || MlpGrads { layers: Vec::new() });
        let root = self.stream(streams::CRITIC_DROPOUT, u);
        let mut total_loss = 0.0;
        let mut total_q = 0.0;
        for i in 0..n {
            let mut rng = root.fork(i as u64);
            let ws = &mut self.ws;
            self.critics.online[i].forward_with(&ws.input, Mode::Train, Some(&mut rng), &mut ws.tapes[i])?;
            let q = ws.tapes[i].output();
            ws.upstream.resize(b, 1);
            let mut loss = 0.0;
            for r in 0..b {
                let err = q.get(r, 0) - y[r];
                loss += err * err;
                total_q += q.get(r, 0);
                ws.upstream.set(r, 0, 2.0 * err / b as f64);
            }
            loss /= b as f64;
            if !loss.is_finite() {
                let (ymin, ymax) = y.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                    (lo.min(v), hi.max(v))
                });
                return Err(Error::NonFinite(format!(
                    "critic {i} loss at update {u} (batch {b}, targets in [{ymin}, {ymax}])"
                )));
            }
            total_loss += loss;
            self.critics.online[i].backward_into(&ws.tapes[i], &ws.upstream, &mut ws.grads[i], None)?;
            adam_step(&mut self.critics.online[i], &ws.grads[i], &mut self.critics.optims[i])?;
        }
        self.critics.soft_update(self.config.ema_rate)?;
        self.critic_updates += 1;
        Ok((total_loss / n as f64, total_q / (n * b) as f64))
    }

    /// One reparameterized policy step followed by one temperature step.
    pub fn actor_update(&mut self, obs: &Matrix) -> Result<UpdateReport> {
        let start = Instant::now();
        let b = obs.rows();
        if b == 0 {
            return Err(Error::Empty("actor batch"));
        }
        let a_idx = self.actor_updates;
        let noise = self
            .policy
            .draw_noise(b, &mut self.stream(streams::ACTOR_NOISE, a_idx));
        let sample = self.policy.evaluate(obs, Some(&noise))?;
        let alpha = self.policy.alpha();
        let entropy_coef = if self.config.entropy_in_actor { alpha } else { 0.0 };

        // Minimum over the first two critics (or the only one).
        let used = self.critics.len().min(2);
        let mut input = Matrix::zeros(0, 0);
        critic_input_into(obs, &sample.actions, &mut input);
        let root = self.stream(streams::ACTOR_DROPOUT, a_idx);
        let tapes = (0..used)
            .map(|i| {
                let mut rng = root.fork(i as u64);
                self.critics.online[i].forward(&input, Mode::Train, Some(&mut rng))
            })
            .collect::<Result<Vec<_>>>()?;
        let mut argmin = vec![0usize; b];
        let mut loss = 0.0;
        for r in 0..b {
            let mut best = tapes[0].output().get(r, 0);
            for (i, t) in tapes.iter().enumerate().skip(1) {
                let q = t.output().get(r, 0);
                if q < best {
                    best = q;
                    argmin[r] = i;
                }
            }
            loss += entropy_coef * sample.log_prob[r] - best;
        }
        loss /= b as f64;
        if !loss.is_finite() {
            return Err(Error::NonFinite(format!("actor loss at update {a_idx}")));
        }

        let m = self.act_dim;
        let mut d_actions = Matrix::zeros(b, m);
        let mut grads = self.critics.online[0].zero_grads();
        let mut input_grad = Matrix::zeros(0, 0);
        let mut upstream = Matrix::zeros(b, 1);
        for (i, tape) in tapes.iter().enumerate() {
            for r in 0..b {
                upstream.set(r, 0, if argmin[r] == i { -1.0 / b as f64 } else { 0.0 });
            }
            self.critics.online[i].backward_into(tape, &upstream, &mut grads, Some(&mut input_grad))?;
            for r in 0..b {
                for (d, g) in d_actions.row_mut(r).iter_mut().zip(&input_grad.row(r)[self.obs_dim..]) {
                    *d += g;
                }
            }
        }
        let policy_grads = self
            .policy
            .backward(&sample, &d_actions, entropy_coef / b as f64)?;
        self.policy.apply_gradients(&policy_grads)?;
        let target_entropy = self.config.target_entropy_for(m);
        let alpha_loss = self.policy.update_alpha(&sample.log_prob, target_entropy)?;
        self.actor_updates += 1;

        Ok(UpdateReport {
            actor_updates: 1,
            actor_loss: loss,
            alpha_loss,
            alpha: self.policy.alpha(),
            elapsed_s: start.elapsed().as_secs_f64(),
            ..UpdateReport::default()
        })
    }

    /// `utd_ratio` critic updates, each on a fresh minibatch with a fresh
    /// target subset, then one actor and one temperature update. A no-op
    /// while replay holds fewer than `batch_size` transitions.
    pub fn train_step(&mut self, replay: &ReplayBuffer) -> Result<UpdateReport> {
        self.train_step_with(replay, Dispatch::Sequential)
    }

    pub fn train_step_with(&mut self, replay: &ReplayBuffer, dispatch: Dispatch) -> Result<UpdateReport> {
        if replay.len() < self.config.batch_size {
            return Ok(UpdateReport::skipped());
        }
        let start = Instant::now();
        let k = self.config.utd_ratio;
        let mut report = match dispatch {
            Dispatch::Sequential => self.sequential_critic_updates(replay, k)?,
            Dispatch::Fused => self.fused_critic_updates(replay, k)?,
        };
        let a_idx = self.actor_updates;
        let mut batch = std::mem::take(&mut self.ws.batch);
        replay.sample_batch_into(
            self.config.batch_size,
            &mut self.stream(streams::ACTOR_BATCH, a_idx),
            &mut batch,
        )?;
        let actor = self.actor_update(&batch.obs);
        self.ws.batch = batch;
        report.absorb_actor(&actor?);
        report.elapsed_s = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// `k` critic updates issued one at a time.
    pub fn sequential_critic_updates(&mut self, replay: &ReplayBuffer, k: usize) -> Result<UpdateReport> {
        let start = Instant::now();
        let mut report = UpdateReport::default();
        for _ in 0..k {
            let u = self.critic_updates;
            let batch = replay.sample_batch(self.config.batch_size, &mut self.stream(streams::BATCH, u))?;
            let target = self.compute_target(&batch)?;
            let (loss, mean_q) = self.critic_step(&batch.obs, &batch.actions, &target.y)?;
            report.absorb_critic(loss, mean_q, &target.y);
        }
        report.alpha = self.policy.alpha();
        report.elapsed_s = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// `k` critic updates as one unit: all minibatches are gathered at once
    /// and the next-state policy samples for every update are computed in a
    /// single batched pass (the policy does not change between critic
    /// updates). Results are bitwise identical to
    /// [`sequential_critic_updates`](Self::sequential_critic_updates).
    pub fn fused_critic_updates(&mut self, replay: &ReplayBuffer, k: usize) -> Result<UpdateReport> {
        let start = Instant::now();
        let bsz = self.config.batch_size;
        let u0 = self.critic_updates;
        let mut ws = std::mem::take(&mut self.ws);

        ws.indices.clear();
        ws.noise.resize(k * bsz, self.act_dim);
        for j in 0..k as u64 {
            let idx = replay.sample_indices(bsz, &mut self.stream(streams::BATCH, u0 + j))?;
            ws.indices.extend_from_slice(&idx);
            let z = self
                .policy
                .draw_noise(bsz, &mut self.stream(streams::TARGET_NOISE, u0 + j));
            let off = j as usize * bsz * self.act_dim;
            ws.noise.as_mut_slice()[off..off + z.as_slice().len()].copy_from_slice(z.as_slice());
        }
        replay.gather_into(&ws.indices, &mut ws.batch);
        let sample = self.policy.evaluate(&ws.batch.next_obs, Some(&ws.noise));
        let sample = match sample {
            Ok(s) => s,
            Err(e) => {
                self.ws = ws;
                return Err(e);
            }
        };

        let mut report = UpdateReport::default();
        let mut result = Ok(());
        for j in 0..k {
            let rows = j * bsz..(j + 1) * bsz;
            copy_rows(&ws.batch.obs, rows.clone(), &mut ws.chunk_obs);
            copy_rows(&ws.batch.actions, rows.clone(), &mut ws.chunk_actions);
            copy_rows(&ws.batch.next_obs, rows.clone(), &mut ws.chunk_next_obs);
            copy_rows(&sample.actions, rows.clone(), &mut ws.chunk_next_actions);
            let step = self
                .targets_from(
                    &ws.chunk_next_obs,
                    &ws.chunk_next_actions,
                    &sample.log_prob[rows.clone()],
                    &ws.batch.rewards[rows.clone()],
                    &ws.batch.terminal[rows.clone()],
                    u0 + j as u64,
                )
                .and_then(|t| {
                    let (loss, q) = self.critic_step(&ws.chunk_obs, &ws.chunk_actions, &t.y)?;
                    Ok((loss, q, t.y))
                });
            match step {
                Ok((loss, q, y)) => report.absorb_critic(loss, q, &y),
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        self.ws = ws;
        result?;
        report.alpha = self.policy.alpha();
        report.elapsed_s = start.elapsed().as_secs_f64();
        Ok(report)
    }

    /// Writes a versioned JSON checkpoint. Floats use shortest round-trip
    /// formatting, so loading restores every parameter bit for bit.
    pub fn save_checkpoint(&self, path: impl AsRef<Path>) -> Result<()> {
        let ckpt = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            agent: self.clone(),
        };
        let text = serde_json::to_string(&ckpt).map_err(|e| Error::Format(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let ckpt: Checkpoint = serde_json::from_str(&text).map_err(|e| Error::Format(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Format(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        ckpt.agent.config.validate()?;
        Ok(ckpt.agent)
    }
}

fn copy_rows(src: &Matrix, rows: std::ops::Range<usize>, dst: &mut Matrix) {
    let cols = src.cols();
    dst.resize(rows.len(), cols);
    dst.as_mut_slice()
        .copy_from_slice(&src.as_slice()[rows.start * cols..rows.end * cols]);
}
