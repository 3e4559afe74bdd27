//! Tanh-squashed Gaussian policy with a learned entropy temperature.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{
    adam_step, adam_update, Activation, AdamConfig, AdamState, Matrix, MlpGrads, MlpParams, Mode,
    RngStream, Tape,
};

/// Emitted actions are clamped to this magnitude so they stay strictly inside
/// `(−1, 1)` even where `tanh` rounds to ±1.
pub const ACTION_LIMIT: f64 = 1.0 - f64::EPSILON;

const HALF_LOG_2PI: f64 = 0.918_938_533_204_672_8;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// `ln(1 + eˣ)` without overflow.
fn softplus(x: f64) -> f64 {
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

/// `ln(1 − tanh²(u))` in a form that stays finite for large `|u|`.
pub fn log_tanh_jacobian(u: f64) -> f64 {
    2.0 * (std::f64::consts::LN_2 - u - softplus(-2.0 * u))
}

/// Log-density of the squashed action `tanh(u)` under a diagonal Gaussian on
/// `u`, including the change-of-variables correction.
pub fn squashed_log_prob(mean: &[f64], log_std: &[f64], pre_tanh: &[f64]) -> f64 {
    mean.iter()
        .zip(log_std)
        .zip(pre_tanh)
        .map(|((&m, &ls), &u)| {
            let z = (u - m) / ls.exp();
            -0.5 * z * z - ls - HALF_LOG_2PI - log_tanh_jacobian(u)
        })
        .sum()
}

/// Result of a batched policy evaluation, kept for the reparameterized
/// gradient.
#[derive(Clone, Debug)]
pub struct PolicySample {
    pub tape: Tape,
    pub noise: Matrix,
    pub mean: Matrix,
    pub log_std: Matrix,
    /// 1 where the raw log-std was inside its bounds, 0 where clamped.
    clamp_pass: Matrix,
    pub pre_tanh: Matrix,
    pub actions: Matrix,
    pub log_prob: Vec<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Policy {
    pub net: MlpParams,
    pub optim: AdamState,
    pub log_std_min: f64,
    pub log_std_max: f64,
    pub log_alpha: f64,
    pub alpha_config: AdamConfig,
    pub alpha_step: u64,
    pub alpha_moments: [f64; 2],
}

impl Policy {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        obs_dim: usize,
        act_dim: usize,
        hidden: &[usize],
        lr: f64,
        alpha_lr: f64,
        init_alpha: f64,
        log_std_bounds: (f64, f64),
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut sizes = vec![obs_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(2 * act_dim);
        let net = MlpParams::new(&sizes, Activation::Relu, Default::default(), 1.0, rng)?;
        let optim = AdamState::new(&net, AdamConfig::with_lr(lr));
        Ok(Self {
            net,
            optim,
            log_std_min: log_std_bounds.0,
            log_std_max: log_std_bounds.1,
            log_alpha: init_alpha.ln(),
            alpha_config: AdamConfig::with_lr(alpha_lr),
            alpha_step: 0,
            alpha_moments: [0.0; 2],
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.net.input_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.net.output_dim() / 2
    }

    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// Batched evaluation. With `noise = None` the pre-squash value is the
    /// mean (deterministic action); otherwise `u = μ + σ·z` row by row.
    pub fn evaluate(&self, obs: &Matrix, noise: Option<&Matrix>) -> Result<PolicySample> {
        let tape = self.net.forward(obs, Mode::Eval, None)?;
        let out = tape.output();
        let (b, m) = (out.rows(), self.act_dim());
        let noise = match noise {
            Some(z) if z.shape() != (b, m) => {
                return Err(Error::shape("policy noise", format!("({b}, {m})"), format!("{:?}", z.shape())))
            }
            Some(z) => z.clone(),
            None => Matrix::zeros(b, m),
        };
        let mut mean = Matrix::zeros(b, m);
        let mut log_std = Matrix::zeros(b, m);
        let mut clamp_pass = Matrix::zeros(b, m);
        let mut pre_tanh = Matrix::zeros(b, m);
        let mut actions = Matrix::zeros(b, m);
        let mut log_prob = Vec::with_capacity(b);
        for i in 0..b {
            let row = out.row(i);
            let mut lp = 0.0;
            for j in 0..m {
                let mu = row[j];
                let raw = row[m + j];
                let ls = raw.clamp(self.log_std_min, self.log_std_max);
                let z = noise.get(i, j);
                let u = mu + ls.exp() * z;
                mean.set(i, j, mu);
                clamp_pass.set(i, j, if raw == ls { 1.0 } else { 0.0 });
                log_std.set(i, j, ls);
                pre_tanh.set(i, j, u);
                actions.set(i, j, u.tanh().clamp(-ACTION_LIMIT, ACTION_LIMIT));
                lp += -0.5 * z * z - ls - HALF_LOG_2PI - log_tanh_jacobian(u);
            }
            if !lp.is_finite() {
                return Err(Error::NonFinite(format!("policy log-probability (row {i})")));
            }
            log_prob.push(lp);
        }
        Ok(PolicySample {
            tape,
            noise,
            mean,
            log_std,
            clamp_pass,
            pre_tanh,
            actions,
            log_prob,
        })
    }

    /// Draws standard normal noise for a `rows × act_dim` batch.
    pub fn draw_noise(&self, rows: usize, rng: &mut RngStream) -> Matrix {
        let m = self.act_dim();
        Matrix::from_vec(rows, m, (0..rows * m).map(|_| rng.normal()).collect())
            .expect("sized above")
    }

    /// Single observation. Returns the action and its log-probability.
    pub fn sample_action(
        &self,
        obs: &[f64],
        rng: &mut RngStream,
        mode: ActionMode,
    ) -> Result<(Vec<f64>, f64)> {
        let x = Matrix::row_vector(obs);
        let s = match mode {
            ActionMode::Stochastic => {
                let z = self.draw_noise(1, rng);
                self.evaluate(&x, Some(&z))?
            }
            ActionMode::Deterministic => self.evaluate(&x, None)?,
        };
        Ok((s.actions.row(0).to_vec(), s.log_prob[0]))
    }

    /// Gradient of `Σ_b (d_actions_b · a_b) + logp_weight · Σ_b log π(a_b)`
    /// with respect to the network parameters, through the reparameterized
    /// sample.
    pub fn backward(
        &self,
        sample: &PolicySample,
        d_actions: &Matrix,
        logp_weight: f64,
    ) -> Result<MlpGrads> {
        let (b, m) = sample.actions.shape();
        if d_actions.shape() != (b, m) {
            return Err(Error::shape(
                "policy backward",
                format!("({b}, {m})"),
                format!("{:?}", d_actions.shape()),
            ));
        }
        let mut upstream = Matrix::zeros(b, 2 * m);
        for i in 0..b {
            for j in 0..m {
                let a = sample.pre_tanh.get(i, j).tanh();
                let sigma_z = sample.log_std.get(i, j).exp() * sample.noise.get(i, j);
                // d log π / du = 2·tanh(u); da/du = 1 − tanh²(u).
                let du = d_actions.get(i, j) * (1.0 - a * a) + logp_weight * 2.0 * a;
                let dlog_std = du * sigma_z - logp_weight;
                upstream.set(i, j, du);
                upstream.set(i, m + j, dlog_std * sample.clamp_pass.get(i, j));
            }
        }
        let mut grads = self.net.zero_grads();
        self.net.backward_into(&sample.tape, &upstream, &mut grads, None)?;
        Ok(grads)
    }

    pub fn apply_gradients(&mut self, grads: &MlpGrads) -> Result<()> {
        adam_step(&mut self.net, grads, &mut self.optim)
    }

    /// One Adam step on `log α` for the loss `−log α · mean(log π + target)`.
    /// Returns the loss value.
    pub fn update_alpha(&mut self, log_probs: &[f64], target_entropy: f64) -> Result<f64> {
        if log_probs.is_empty() {
            return Err(Error::Empty("temperature update batch"));
        }
        let mean = log_probs.iter().map(|lp| lp + target_entropy).sum::<f64>() / log_probs.len() as f64;
        let loss = -self.log_alpha * mean;
        let grad = [-mean];
        if !grad[0].is_finite() {
            return Err(Error::NonFinite("temperature gradient".into()));
        }
        self.alpha_step += 1;
        let mut p = [self.log_alpha];
        let [mut m, mut v] = self.alpha_moments.map(|x| [x]);
        adam_update(&mut p, &grad, &mut m, &mut v, self.alpha_step, &self.alpha_config);
        self.log_alpha = p[0];
        self.alpha_moments = [m[0], v[0]];
        Ok(loss)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Dense;

    /// One-dimensional policy whose outputs are the constants `(mu, raw_std)`.
    fn constant_policy(mu: f64, raw_std: f64) -> Policy {
        let net = MlpParams::from_layers(
            vec![Dense {
                weight: Matrix::zeros(1, 2),
                bias: vec![mu, raw_std],
                norm: None,
                dropout_rate: 0.0,
            }],
            Activation::Relu,
        )
        .unwrap();
        Policy {
            optim: AdamState::new(&net, AdamConfig::default()),
            net,
            log_std_min: -10.0,
            log_std_max: 2.0,
            log_alpha: 0.0,
            alpha_config: AdamConfig::default(),
            alpha_step: 0,
            alpha_moments: [0.0; 2],
        }
    }

    #[test]
    fn density_at_mode_is_gaussian_peak() {
        let p = constant_policy(0.0, 0.0);
        let z = Matrix::zeros(1, 1);
        let s = p.evaluate(&Matrix::row_vector(&[0.0]), Some(&z)).unwrap();
        assert!(s.log_std.get(0, 0).abs() < 1e-12);
        assert_eq!(s.actions.get(0, 0), 0.0);
        assert!((s.log_prob[0] - -0.918_938_533_204_672_7).abs() < 1e-12);
    }

    #[test]
    fn squashed_density_integrates_to_one() {
        for (mu, ls) in [(0.0, 0.0), (0.8, -0.5), (-1.5, 0.3)] {
            // Midpoint rule in u-space, where a = tanh(u) and da = (1 − a²)du.
            let n = 200_000;
            let (lo, hi) = (mu - 12.0 * f64::exp(ls), mu + 12.0 * f64::exp(ls));
            let h = (hi - lo) / n as f64;
            let total: f64 = (0..n)
                .map(|k| {
                    let u: f64 = lo + (k as f64 + 0.5) * h;
                    let jac = 1.0 - u.tanh().powi(2);
                    squashed_log_prob(&[mu], &[ls], &[u]).exp() * jac * h
                })
                .sum();
            assert!((total - 1.0).abs() <= 1e-3, "{mu} {ls}: {total}");
        }
    }

    #[test]
    fn log_std_is_clamped_with_blocked_gradient() {
        let p = constant_policy(0.0, 5.0);
        let s = p.evaluate(&Matrix::row_vector(&[0.0]), Some(&Matrix::zeros(1, 1))).unwrap();
        assert_eq!(s.log_std.get(0, 0), 2.0);
        let g = p.backward(&s, &Matrix::zeros(1, 1), 1.0).unwrap();
        assert_eq!(g.layers[0].bias[1], 0.0);
    }

    #[test]
    fn saturated_mean_stays_inside_unit_box() {
        let p = constant_policy(50.0, 0.0);
        let mut rng = RngStream::new(0, "noise");
        let (a, lp) = p
            .sample_action(&[0.0], &mut rng, ActionMode::Deterministic)
            .unwrap();
        assert!(a[0] < 1.0 && a[0] > 0.999);
        assert!(lp.is_finite());
    }

    #[test]
    fn log_jacobian_is_stable() {
        for u in [-40.0, -3.0, 0.0, 0.7, 25.0] {
            let direct = (1.0 - f64::tanh(u).powi(2)).ln();
            let stable = log_tanh_jacobian(u);
            assert!(stable.is_finite());
            if u.abs() < 5.0 {
                assert!((direct - stable).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn temperature_stays_positive_and_moves_toward_target() {
        let mut p = constant_policy(0.0, 0.0);
        // log π far above −target ⇒ entropy too low ⇒ α must grow.
        let a0 = p.alpha();
        for _ in 0..10 {
            p.update_alpha(&[3.0, 2.0], -1.0).unwrap();
        }
        assert!(p.alpha() > a0);
        for _ in 0..10_000 {
            p.update_alpha(&[-5.0], -1.0).unwrap();
        }
        assert!(p.alpha() > 0.0 && p.alpha() < a0);
    }
}
