//! Torque-limited pendulum rewarded for spinning at the target rate.
//! `θ = 0` hangs straight down.

use serde::{Deserialize, Serialize};

use super::reward::{reward_velocity, RewardParams};
use super::{substep_count, EnvSpec, Environment, Step, StepInfo};
use crate::error::{Error, Result};
use crate::nn::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PendulumParams {
    pub mass: f64,
    pub length: f64,
    pub gravity: f64,
    pub damping: f64,
    pub torque_limit: f64,
    pub dt: f64,
    pub control_period: f64,
    pub step_limit: usize,
    /// Half-width of the uniform angle perturbation at reset.
    pub reset_noise: f64,
    pub reward: RewardParams,
}

impl Default for PendulumParams {
    fn default() -> Self {
        Self {
            mass: 1.0,
            length: 1.0,
            gravity: 9.81,
            damping: 0.1,
            torque_limit: 15.0,
            dt: 1e-3,
            control_period: 0.05,
            step_limit: 200,
            reset_noise: 0.05,
            reward: RewardParams {
                contact_gating: false,
                ..RewardParams::new(2.0)
            },
        }
    }
}

impl PendulumParams {
    pub fn validate(&self) -> Result<()> {
        substep_count(self.control_period, self.dt)?;
        self.reward.validate()?;
        if !(self.mass > 0.0 && self.length > 0.0 && self.torque_limit > 0.0) {
            return Err(Error::Config("pendulum mass, length and torque limit must be positive".into()));
        }
        if self.step_limit == 0 {
            return Err(Error::Config("pendulum step limit must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PendulumState {
    pub theta: f64,
    pub omega: f64,
    pub prev_action: f64,
    pub time: f64,
}

#[derive(Clone, Debug)]
pub struct Pendulum {
    params: PendulumParams,
    spec: EnvSpec,
    substeps: usize,
    state: PendulumState,
    steps: usize,
}

impl Pendulum {
    pub fn new(params: PendulumParams) -> Result<Self> {
        params.validate()?;
        let substeps = substep_count(params.control_period, params.dt)?;
        let spec = EnvSpec {
            name: "pendulum_spin",
            obs_dim: 4,
            act_dim: 1,
            control_period: params.control_period,
            dt: params.dt,
            step_limit: params.step_limit,
            pitch_limit: f64::INFINITY,
        };
        Ok(Self {
            params,
            spec,
            substeps,
            state: PendulumState::default(),
            steps: 0,
        })
    }

    pub fn params(&self) -> &PendulumParams {
        &self.params
    }

    pub fn state(&self) -> &PendulumState {
        &self.state
    }

    pub fn set_state(&mut self, state: PendulumState) {
        self.state = state;
    }

    /// Kinetic plus potential energy, zero at rest hanging down.
    pub fn energy(&self) -> f64 {
        let p = &self.params;
        let s = &self.state;
        0.5 * p.mass * p.length * p.length * s.omega * s.omega
            + p.mass * p.gravity * p.length * (1.0 - s.theta.cos())
    }

    fn accel(&self, theta: f64, omega: f64, torque: f64) -> f64 {
        let p = &self.params;
        -(p.gravity / p.length) * theta.sin() - p.damping * omega + torque / (p.mass * p.length * p.length)
    }

    /// Advances the physics by `n` substeps at constant torque (velocity
    /// Verlet, damping evaluated at the half-step velocity).
    pub fn integrate(&mut self, torque: f64, n: usize) {
        let dt = self.params.dt;
        let (mut th, mut om) = (self.state.theta, self.state.omega);
        let mut acc = self.accel(th, om, torque);
        for _ in 0..n {
            let half = om + 0.5 * dt * acc;
            th += dt * half;
            acc = self.accel(th, half, torque);
            om = half + 0.5 * dt * acc;
        }
        self.state.theta = th;
        self.state.omega = om;
        self.state.time += n as f64 * dt;
    }

    fn observe(&self) -> Vec<f64> {
        let s = &self.state;
        vec![s.theta.cos(), s.theta.sin(), s.omega, s.prev_action]
    }
}

impl Environment for Pendulum {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64> {
        let w = self.params.reset_noise;
        let theta = if w > 0.0 { rng.uniform_range(-w, w) } else { 0.0 };
        self.state = PendulumState {
            theta,
            ..PendulumState::default()
        };
        self.steps = 0;
        self.observe()
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != 1 {
            return Err(Error::shape("pendulum action", 1, action.len()));
        }
        let a = action[0].clamp(-1.0, 1.0);
        self.integrate(self.params.torque_limit * a, self.substeps);
        self.state.prev_action = a;
        self.steps += 1;
        if !self.state.theta.is_finite() {
            return Err(Error::NonFinite("pendulum angle".into()));
        }
        if !self.state.omega.is_finite() {
            return Err(Error::NonFinite("pendulum angular velocity".into()));
        }
        let v = self.state.omega;
        let r = reward_velocity(v, &self.params.reward);
        Ok(Step {
            obs: self.observe(),
            reward: r,
            done: false,
            truncated: self.steps >= self.params.step_limit,
            info: StepInfo {
                velocity: v,
                observed_velocity: v,
                reward_velocity: r,
                contacts: [false; 2],
                lifted: false,
                reversals: 0.0,
            },
        })
    }

    fn state_fields(&self) -> Vec<(&'static str, f64)> {
        let s = &self.state;
        vec![("theta", s.theta), ("omega", s.omega), ("prev_action", s.prev_action)]
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rest_stays_at_rest_with_half_reward() {
        let mut env = Pendulum::new(PendulumParams::default()).unwrap();
        env.set_state(PendulumState::default());
        for _ in 0..20 {
            let s = env.step(&[0.0]).unwrap();
            assert_eq!(s.reward, 0.5);
            assert!(!s.done);
        }
        assert_eq!(env.state().theta, 0.0);
        assert_eq!(env.state().omega, 0.0);
    }

    #[test]
    fn spinning_at_target_earns_full_reward() {
        let params = PendulumParams::default();
        assert_eq!(reward_velocity(2.0, &params.reward), 1.0);
    }

    #[test]
    fn frictionless_energy_is_conserved() {
        let params = PendulumParams {
            damping: 0.0,
            ..PendulumParams::default()
        };
        for (theta, omega) in [(1.0, 0.0), (0.3, 4.0), (2.5, -1.0), (0.0, 7.0)] {
            let mut env = Pendulum::new(params.clone()).unwrap();
            env.set_state(PendulumState {
                theta,
                omega,
                ..Default::default()
            });
            let e0 = env.energy();
            let mut worst = 0.0f64;
            for _ in 0..10_000 {
                env.integrate(0.0, 1);
                worst = worst.max((env.energy() - e0).abs() / e0);
            }
            assert!(worst <= 1e-3, "{theta} {omega}: {worst:e}");
        }
    }

    #[test]
    fn truncates_at_step_limit() {
        let mut env = Pendulum::new(PendulumParams {
            step_limit: 3,
            ..PendulumParams::default()
        })
        .unwrap();
        env.reset(&mut RngStream::new(0, "r"));
        let flags: Vec<bool> = (0..3).map(|_| env.step(&[0.2]).unwrap().truncated).collect();
        assert_eq!(flags, vec![false, false, true]);
    }
}
