#![allow(dead_code)]
//! Fixtures shared by the integration test targets.

use fastwalk_core::nn::{
    adam_step, adam_update, Activation, AdamState, HiddenRegularization, Matrix, MlpParams, Mode, RngStream,
};
use fastwalk_core::replay::{ReplayBuffer, Transition};
use fastwalk_core::sac::{streams, Agent, AgentConfig, Variant, ACTION_LIMIT};

pub const OBS: usize = 3;
pub const ACT: usize = 2;

pub fn small_config(variant: Variant) -> AgentConfig {
    AgentConfig {
        hidden: vec![16, 16],
        batch_size: 16,
        ..AgentConfig::for_variant(variant)
    }
}

pub fn filled_replay(n: usize, seed: u64) -> ReplayBuffer {
    let mut rng = RngStream::new(seed, "replay");
    let mut replay = ReplayBuffer::new(1000, OBS, ACT);
    for i in 0..n {
        let obs: Vec<f64> = (0..OBS).map(|_| rng.normal()).collect();
        let next_obs: Vec<f64> = (0..OBS).map(|_| rng.normal()).collect();
        let action: Vec<f64> = (0..ACT).map(|_| rng.uniform_range(-1.0, 1.0)).collect();
        replay
            .push(Transition {
                obs,
                action,
                reward: rng.uniform_range(-1.0, 1.0),
                next_obs,
                done: i % 7 == 3,
                truncated: i % 11 == 5 && i % 7 != 3,
            })
            .unwrap();
    }
    replay
}

// Plain SAC written directly against the network primitives: two critics,
// no ensemble subset, no dropout, no LayerNorm, one critic update per step.

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

fn ref_log_jacobian(u: f64) -> f64 {
    let x = -2.0 * u;
    let softplus = x.max(0.0) + (-x.abs()).exp().ln_1p();
    2.0 * (std::f64::consts::LN_2 - u - softplus)
}

struct RefSample {
    tape: fastwalk_core::nn::Tape,
    z: Matrix,
    log_std: Matrix,
    pass: Matrix,
    pre: Matrix,
    actions: Matrix,
    log_prob: Vec<f64>,
}

pub struct RefSac {
    pub seed: u64,
    pub gamma: f64,
    pub rho: f64,
    pub actor: MlpParams,
    pub actor_opt: AdamState,
    pub q: Vec<MlpParams>,
    pub qt: Vec<MlpParams>,
    pub q_opt: Vec<AdamState>,
    pub log_alpha: f64,
    pub alpha_m: f64,
    pub alpha_v: f64,
    pub alpha_t: u64,
    pub alpha_cfg: fastwalk_core::nn::AdamConfig,
    pub target_entropy: f64,
    pub critic_count: u64,
    pub actor_count: u64,
}

fn concat(a: &Matrix, b: &Matrix) -> Matrix {
    let rows = (0..a.rows())
        .map(|i| a.row(i).iter().chain(b.row(i)).copied().collect())
        .collect::<Vec<Vec<f64>>>();
    Matrix::from_rows(&rows).unwrap()
}

impl RefSac {
    pub fn from_agent(agent: &Agent) -> Self {
        Self {
            seed: agent.seed(),
            gamma: agent.config().discount,
            rho: agent.config().ema_rate,
            actor: agent.policy.net.clone(),
            actor_opt: agent.policy.optim.clone(),
            q: agent.critics.online.clone(),
            qt: agent.critics.target.clone(),
            q_opt: agent.critics.optims.clone(),
            log_alpha: agent.policy.log_alpha,
            alpha_m: 0.0,
            alpha_v: 0.0,
            alpha_t: 0,
            alpha_cfg: agent.policy.alpha_config,
            target_entropy: -(ACT as f64),
            critic_count: 0,
            actor_count: 0,
        }
    }

    fn noise(&self, name: &str, index: u64, rows: usize) -> Matrix {
        let mut rng = RngStream::new(self.seed, name).fork(index);
        Matrix::from_vec(rows, ACT, (0..rows * ACT).map(|_| rng.normal()).collect()).unwrap()
    }

    fn sample(&self, obs: &Matrix, z: Matrix) -> RefSample {
        let tape = self.actor.forward(obs, Mode::Eval, None).unwrap();
        let b = obs.rows();
        let mut log_std = Matrix::zeros(b, ACT);
        let mut pass = Matrix::zeros(b, ACT);
        let mut pre = Matrix::zeros(b, ACT);
        let mut actions = Matrix::zeros(b, ACT);
        let mut log_prob = vec![0.0; b];
        for i in 0..b {
            let out = tape.output().row(i);
            for j in 0..ACT {
                let raw = out[ACT + j];
                let ls = raw.clamp(-10.0, 2.0);
                let u = out[j] + ls.exp() * z.get(i, j);
                log_std.set(i, j, ls);
                pass.set(i, j, if raw == ls { 1.0 } else { 0.0 });
                pre.set(i, j, u);
                actions.set(i, j, u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT));
                let zz = z.get(i, j);
                log_prob[i] += -0.5 * zz * zz - ls - HALF_LOG_2PI - ref_log_jacobian(u);
            }
        }
        RefSample {
            tape,
            z,
            log_std,
            pass,
            pre,
            actions,
            log_prob,
        }
    }

    pub fn step(&mut self, replay: &ReplayBuffer, batch_size: usize) {
        let alpha = self.log_alpha.exp();
        let u = self.critic_count;
        let batch = replay
            .sample_batch(batch_size, &mut RngStream::new(self.seed, streams::BATCH).fork(u))
            .unwrap();
        let b = batch.len();
        let next = self.sample(&batch.next_obs, self.noise(streams::TARGET_NOISE, u, b));
        let xn = concat(&batch.next_obs, &next.actions);
        let q0 = self.qt[0].predict(&xn).unwrap();
        let q1 = self.qt[1].predict(&xn).unwrap();
        let y: Vec<f64> = (0..b)
            .map(|i| {
                let soft = q0.get(i, 0).min(q1.get(i, 0)) - alpha * next.log_prob[i];
                batch.rewards[i] + (1.0 - batch.terminal[i]) * self.gamma * soft
            })
            .collect();
        let x = concat(&batch.obs, &batch.actions);
        for c in 0..2 {
            let tape = self.q[c].forward(&x, Mode::Eval, None).unwrap();
            let up = Matrix::from_vec(
                b,
                1,
                (0..b).map(|i| 2.0 * (tape.output().get(i, 0) - y[i]) / b as f64).collect(),
            )
            .unwrap();
            let g = self.q[c].backward(&tape, &up).unwrap();
            adam_step(&mut self.q[c], &g.params, &mut self.q_opt[c]).unwrap();
        }
        for c in 0..2 {
            let mut t = self.qt[c].clone().layers().to_vec();
            let o = self.q[c].layers();
            for (tl, ol) in t.iter_mut().zip(o) {
                let keep = 1.0 - self.rho;
                for (tv, ov) in tl.weight.as_mut_slice().iter_mut().zip(ol.weight.as_slice()) {
                    *tv = keep * *tv + self.rho * ov;
                }
                for (tv, ov) in tl.bias.iter_mut().zip(&ol.bias) {
                    *tv = keep * *tv + self.rho * ov;
                }
            }
            self.qt[c] = MlpParams::from_layers(t, Activation::Relu).unwrap();
        }
        self.critic_count += 1;

        let a = self.actor_count;
        let obs = replay
            .sample_batch(batch_size, &mut RngStream::new(self.seed, streams::ACTOR_BATCH).fork(a))
            .unwrap()
            .obs;
        let s = self.sample(&obs, self.noise(streams::ACTOR_NOISE, a, b));
        let xa = concat(&obs, &s.actions);
        let tapes: Vec<_> = (0..2).map(|c| self.q[c].forward(&xa, Mode::Eval, None).unwrap()).collect();
        let pick: Vec<usize> = (0..b)
            .map(|i| usize::from(tapes[1].output().get(i, 0) < tapes[0].output().get(i, 0)))
            .collect();
        let mut d_actions = Matrix::zeros(b, ACT);
        for c in 0..2 {
            let up = Matrix::from_vec(
                b,
                1,
                (0..b).map(|i| if pick[i] == c { -1.0 / b as f64 } else { 0.0 }).collect(),
            )
            .unwrap();
            let g = self.q[c].backward(&tapes[c], &up).unwrap();
            for i in 0..b {
                for j in 0..ACT {
                    let v = d_actions.get(i, j) + g.input.get(i, OBS + j);
                    d_actions.set(i, j, v);
                }
            }
        }
        let w = alpha / b as f64;
        let mut up = Matrix::zeros(b, 2 * ACT);
        for i in 0..b {
            for j in 0..ACT {
                let t = s.pre.get(i, j).tanh();
                let du = d_actions.get(i, j) * (1.0 - t * t) + w * 2.0 * t;
                let dls = du * (s.log_std.get(i, j).exp() * s.z.get(i, j)) - w;
                up.set(i, j, du);
                up.set(i, ACT + j, dls * s.pass.get(i, j));
            }
        }
        let g = self.actor.backward(&s.tape, &up).unwrap();
        adam_step(&mut self.actor, &g.params, &mut self.actor_opt).unwrap();

        let mean = s.log_prob.iter().map(|lp| lp + self.target_entropy).sum::<f64>() / b as f64;
        self.alpha_t += 1;
        let mut p = [self.log_alpha];
        let mut m = [self.alpha_m];
        let mut v = [self.alpha_v];
        adam_update(&mut p, &[-mean], &mut m, &mut v, self.alpha_t, &self.alpha_cfg);
        self.log_alpha = p[0];
        self.alpha_m = m[0];
        self.alpha_v = v[0];
        self.actor_count += 1;
    }
}

pub const H: f64 = 1e-5;

/// Scalar loss `sum(weights ∘ output)`; the dropout stream is cloned so every
/// evaluation sees the same masks.
pub fn loss(net: &MlpParams, x: &Matrix, weights: &Matrix, dropout: &RngStream) -> f64 {
    let mut rng = dropout.clone();
    let tape = net.forward(x, Mode::Train, Some(&mut rng)).unwrap();
    tape.output()
        .as_slice()
        .iter()
        .zip(weights.as_slice())
        .map(|(a, b)| a * b)
        .sum()
}

pub fn rel_err(a: f64, n: f64) -> f64 {
    (a - n).abs() / a.abs().max(n.abs()).max(1e-3)
}

/// Largest relative error between analytic and central-difference gradients
/// over every parameter and every input entry.
pub fn max_gradient_error(seed: u64, sizes: &[usize], reg: HiddenRegularization, act: Activation) -> f64 {
    let mut init = RngStream::new(seed, "init");
    let mut net = MlpParams::new(sizes, act, reg, 1.0, &mut init).unwrap();
    // Perturb LayerNorm affine away from the identity so its gradient path is exercised.
    let mut tweak = RngStream::new(seed, "tweak");
    let mut layers = net.layers().to_vec();
    for l in &mut layers {
        if let Some(n) = &mut l.norm {
            n.gain.iter_mut().for_each(|g| *g = tweak.uniform_range(0.5, 1.5));
            n.shift.iter_mut().for_each(|s| *s = tweak.uniform_range(-0.3, 0.3));
        }
    }
    net = MlpParams::from_layers(layers, act).unwrap();

    let batch = 3;
    let mut data = RngStream::new(seed, "data");
    let x = Matrix::from_vec(
        batch,
        sizes[0],
        (0..batch * sizes[0]).map(|_| data.normal()).collect(),
    )
    .unwrap();
    let out_dim = *sizes.last().unwrap();
    let w = Matrix::from_vec(
        batch,
        out_dim,
        (0..batch * out_dim).map(|_| data.normal()).collect(),
    )
    .unwrap();
    let dropout = RngStream::new(seed, "dropout");

    let mut rng = dropout.clone();
    let tape = net.forward(&x, Mode::Train, Some(&mut rng)).unwrap();
    let grads = net.backward(&tape, &w).unwrap();

    let mut worst = 0.0f64;
    let analytic: Vec<Vec<f64>> = grads.params.tensors().iter().map(|t| t.to_vec()).collect();
    for (ti, g) in analytic.iter().enumerate() {
        for (k, &a) in g.iter().enumerate() {
            let mut plus = net.clone();
            plus.tensors_mut()[ti][k] += H;
            let mut minus = net.clone();
            minus.tensors_mut()[ti][k] -= H;
            let n = (loss(&plus, &x, &w, &dropout) - loss(&minus, &x, &w, &dropout)) / (2.0 * H);
            worst = worst.max(rel_err(a, n));
        }
    }
    for k in 0..x.as_slice().len() {
        let mut xp = x.clone();
        xp.as_mut_slice()[k] += H;
        let mut xm = x.clone();
        xm.as_mut_slice()[k] -= H;
        let n = (loss(&net, &xp, &w, &dropout) - loss(&net, &xm, &w, &dropout)) / (2.0 * H);
        worst = worst.max(rel_err(grads.input.as_slice()[k], n));
    }
    worst
}
