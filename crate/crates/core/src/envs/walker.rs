//! Planar walker: a rigid body on two two-link legs (front hip at `+d`, rear
//! hip at `-d`). Joints follow PD torques against their own inertia; the
//! ground acts on the feet through a penalty spring-damper and a smoothed
//! Coulomb friction that propels the body.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::control::{map_action, pd_torque_into, ActionMap, PdGains};
use super::reward::{observe_velocity, reward_total, reward_velocity, RewardParams};
use super::{substep_count, EnvSpec, Environment, Step, StepInfo};
use crate::error::{Error, Result};
use crate::nn::RngStream;

pub const OBS_DIM: usize = 18;
pub const ACT_DIM: usize = 4;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkerParams {
    pub mass: f64,
    pub pitch_inertia: f64,
    pub thigh: f64,
    pub shin: f64,
    pub hip_offset: f64,
    pub joint_inertia: f64,
    pub joint_damping: f64,
    pub ground_stiffness: f64,
    pub ground_damping: f64,
    pub friction: f64,
    pub slip_velocity: f64,
    pub drag: f64,
    pub pitch_stiffness: f64,
    pub pitch_damping: f64,
    pub gravity: f64,
    pub dt: f64,
    pub control_period: f64,
    pub step_limit: usize,
    pub pitch_limit_deg: f64,
    /// Episodes also end when the body sinks below this height (m).
    pub min_height: f64,
    /// Half-width of the uniform joint perturbation at reset (rad).
    pub reset_noise: f64,
    pub gains: PdGains,
    pub action: ActionMap,
    pub reward: RewardParams,
    /// Multiplicative bias of the velocity estimate (1 = exact).
    pub velocity_bias: f64,
    pub velocity_noise: f64,
    /// A lift interval ends every `lift_every` env steps (0 = never).
    pub lift_every: usize,
    pub lift_steps: usize,
}

impl Default for WalkerParams {
    fn default() -> Self {
        Self {
            mass: 10.0,
            pitch_inertia: 0.4,
            thigh: 0.2,
            shin: 0.2,
            hip_offset: 0.25,
            joint_inertia: 0.05,
            joint_damping: 0.1,
            ground_stiffness: 4000.0,
            ground_damping: 50.0,
            friction: 1.0,
            slip_velocity: 0.05,
            drag: 0.5,
            pitch_stiffness: 200.0,
            pitch_damping: 30.0,
            gravity: 9.81,
            dt: 0.0025,
            control_period: 0.05,
            step_limit: 1000,
            pitch_limit_deg: 30.0,
            min_height: 0.1,
            reset_noise: 0.05,
            gains: PdGains {
                kp: 200.0,
                kd: 10.0,
                torque_limit: 20.0,
            },
            action: ActionMap {
                default: vec![0.0, 0.9, 0.0, 0.9],
                offset: vec![0.8, 0.4, 0.8, 0.4],
                filter: 0.0,
            },
            reward: RewardParams::new(0.5),
            velocity_bias: 1.0,
            velocity_noise: 0.0,
            lift_every: 0,
            lift_steps: 0,
        }
    }
}

impl WalkerParams {
    /// The offset box widened to the full joint range: hips `[-1.6, 1.6]`,
    /// knees `[-0.7, 2.5]`.
    pub fn unconstrained_action() -> ActionMap {
        ActionMap {
            default: vec![0.0, 0.9, 0.0, 0.9],
            offset: vec![1.6; 4],
            filter: 0.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        substep_count(self.control_period, self.dt)?;
        self.gains.validate()?;
        self.action.validate()?;
        self.reward.validate()?;
        if self.action.len() != ACT_DIM {
            return Err(Error::shape("walker action map", ACT_DIM, self.action.len()));
        }
        let positive = [
            ("mass", self.mass),
            ("pitch_inertia", self.pitch_inertia),
            ("thigh", self.thigh),
            ("shin", self.shin),
            ("joint_inertia", self.joint_inertia),
            ("slip_velocity", self.slip_velocity),
            ("pitch_limit_deg", self.pitch_limit_deg),
        ];
        if let Some((name, v)) = positive.iter().find(|(_, v)| !(*v > 0.0)) {
            return Err(Error::Config(format!("walker {name} = {v} must be positive")));
        }
        if !(self.velocity_bias > 0.0 && self.velocity_bias <= 1.0) {
            return Err(Error::Config(format!(
                "velocity bias {} outside (0, 1]",
                self.velocity_bias
            )));
        }
        if self.step_limit == 0 {
            return Err(Error::Config("walker step limit must be positive".into()));
        }
        if self.lift_every > 0 && self.lift_steps >= self.lift_every {
            return Err(Error::Config("lift_steps must be shorter than lift_every".into()));
        }
        Ok(())
    }

    fn uses_estimator(&self) -> bool {
        self.velocity_bias != 1.0 || self.velocity_noise > 0.0
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WalkerState {
    pub x: f64,
    pub vx: f64,
    pub z: f64,
    pub vz: f64,
    pub pitch: f64,
    pub pitch_rate: f64,
    pub q: [f64; 4],
    pub qd: [f64; 4],
    pub contacts: [bool; 2],
    pub prev_action: [f64; 4],
    pub time: f64,
}

impl WalkerState {
    fn check_finite(&self) -> Result<()> {
        let scalars = [
            ("body x", self.x),
            ("body velocity", self.vx),
            ("body height", self.z),
            ("vertical velocity", self.vz),
            ("pitch", self.pitch),
            ("pitch rate", self.pitch_rate),
        ];
        if let Some((name, v)) = scalars.iter().find(|(_, v)| !v.is_finite()) {
            return Err(Error::NonFinite(format!("walker {name} = {v}")));
        }
        for j in 0..4 {
            if !self.q[j].is_finite() {
                return Err(Error::NonFinite(format!("walker joint angle {j} = {}", self.q[j])));
            }
            if !self.qd[j].is_finite() {
                return Err(Error::NonFinite(format!("walker joint velocity {j} = {}", self.qd[j])));
            }
        }
        Ok(())
    }
}

/// Foot position and velocity relative to the hip for one leg.
#[derive(Clone, Copy, Debug)]
struct Foot {
    x: f64,
    z: f64,
    xd: f64,
    zd: f64,
}

fn foot(p: &WalkerParams, q1: f64, q2: f64, qd1: f64, qd2: f64) -> Foot {
    let (s1, c1) = q1.sin_cos();
    let (s12, c12) = (q1 + q2).sin_cos();
    let w12 = qd1 + qd2;
    Foot {
        x: p.thigh * s1 + p.shin * s12,
        z: -p.thigh * c1 - p.shin * c12,
        xd: p.thigh * c1 * qd1 + p.shin * c12 * w12,
        zd: p.thigh * s1 * qd1 + p.shin * s12 * w12,
    }
}

/// Ground reaction on one foot: `(F_x, F_n)`.
fn ground_force(p: &WalkerParams, s: &WalkerState, leg: usize) -> (f64, f64) {
    let f = foot(p, s.q[2 * leg], s.q[2 * leg + 1], s.qd[2 * leg], s.qd[2 * leg + 1]);
    let h = s.z + f.z;
    if h >= 0.0 {
        return (0.0, 0.0);
    }
    let hd = s.vz + f.zd;
    let fn_ = (-p.ground_stiffness * h - p.ground_damping * hd).max(0.0);
    let fx = -p.friction * fn_ * ((s.vx + f.xd) / p.slip_velocity).tanh();
    (fx, fn_)
}

#[derive(Clone, Debug)]
pub struct Walker {
    params: WalkerParams,
    spec: EnvSpec,
    substeps: usize,
    state: WalkerState,
    target: Vec<f64>,
    steps: usize,
    total_steps: u64,
    noise: RngStream,
}

impl Walker {
    pub fn new(params: WalkerParams) -> Result<Self> {
        params.validate()?;
        let substeps = substep_count(params.control_period, params.dt)?;
        let spec = EnvSpec {
            name: "minimal_walker",
            obs_dim: OBS_DIM,
            act_dim: ACT_DIM,
            control_period: params.control_period,
            dt: params.dt,
            step_limit: params.step_limit,
            pitch_limit: params.pitch_limit_deg * PI / 180.0,
        };
        let mut w = Self {
            target: params.action.default.clone(),
            params,
            spec,
            substeps,
            state: WalkerState {
                x: 0.0,
                vx: 0.0,
                z: 0.0,
                vz: 0.0,
                pitch: 0.0,
                pitch_rate: 0.0,
                q: [0.0; 4],
                qd: [0.0; 4],
                contacts: [false; 2],
                prev_action: [0.0; 4],
                time: 0.0,
            },
            steps: 0,
            total_steps: 0,
            noise: RngStream::new(0, "walker.velocity_noise"),
        };
        w.stand(&w.params.action.default.clone());
        Ok(w)
    }

    pub fn params(&self) -> &WalkerParams {
        &self.params
    }

    pub fn state(&self) -> &WalkerState {
        &self.state
    }

    pub fn set_state(&mut self, state: WalkerState) {
        self.state = state;
    }

    /// Places the body at rest on feet posed at `q`, at the height where two
    /// feet carry the weight statically.
    pub fn stand(&mut self, q: &[f64]) {
        let p = &self.params;
        let lowest = (0..2)
            .map(|k| foot(p, q[2 * k], q[2 * k + 1], 0.0, 0.0).z)
            .fold(f64::INFINITY, f64::min);
        let sink = p.mass * p.gravity / (2.0 * p.ground_stiffness);
        let s = &mut self.state;
        s.x = 0.0;
        s.vx = 0.0;
        s.z = -lowest - sink;
        s.vz = 0.0;
        s.pitch = 0.0;
        s.pitch_rate = 0.0;
        s.q.copy_from_slice(q);
        s.qd = [0.0; 4];
        s.prev_action = [0.0; 4];
        s.time = 0.0;
        let contacts = [0, 1].map(|k| ground_force(&self.params, &self.state, k).1 > 0.0);
        self.state.contacts = contacts;
        self.target = self.params.action.default.clone();
        self.steps = 0;
    }

    /// Foot positions `(x, z)` in the world frame, ignoring pitch.
    pub fn feet(&self) -> [(f64, f64); 2] {
        let s = &self.state;
        [0, 1].map(|k| {
            let f = foot(&self.params, s.q[2 * k], s.q[2 * k + 1], 0.0, 0.0);
            let hip = if k == 0 { self.params.hip_offset } else { -self.params.hip_offset };
            (s.x + hip + f.x, s.z + f.z)
        })
    }

    fn lifted_at(&self, step: u64) -> (bool, bool) {
        let p = &self.params;
        if p.lift_every == 0 || p.lift_steps == 0 {
            return (false, false);
        }
        let phase = (step % p.lift_every as u64) as usize;
        let start = p.lift_every - p.lift_steps;
        (phase >= start, phase == p.lift_every - 1)
    }

    fn observe(&self, v_obs: f64) -> Vec<f64> {
        let s = &self.state;
        let mut o = Vec::with_capacity(OBS_DIM);
        o.extend_from_slice(&[s.pitch, s.pitch_rate, v_obs, s.vz]);
        o.extend_from_slice(&s.q);
        o.extend_from_slice(&s.qd);
        o.extend(s.contacts.iter().map(|&c| if c { 1.0 } else { 0.0 }));
        o.extend_from_slice(&s.prev_action);
        o
    }

    fn substep(&mut self, torque: &[f64; 4], lifted: bool) -> usize {
        let p = &self.params;
        let dt = p.dt;
        let s = &mut self.state;
        let mut reversals = 0;
        for j in 0..4 {
            let qdd = (torque[j] - p.joint_damping * s.qd[j]) / p.joint_inertia;
            let before = s.qd[j];
            s.qd[j] += dt * qdd;
            if before * s.qd[j] < 0.0 {
                reversals += 1;
            }
        }
        if lifted {
            // Held in the air: no ground forces, body translation frozen.
            let alpha = (-p.pitch_stiffness * s.pitch - p.pitch_damping * s.pitch_rate) / p.pitch_inertia;
            s.pitch_rate += dt * alpha;
            s.vx = 0.0;
            s.vz = 0.0;
        } else {
            let (fx0, fn0) = ground_force(p, s, 0);
            let (fx1, fn1) = ground_force(p, s, 1);
            let ax = (fx0 + fx1 - p.drag * s.vx) / p.mass;
            let az = (fn0 + fn1) / p.mass - p.gravity;
            let alpha = (p.hip_offset * (fn0 - fn1) - p.pitch_stiffness * s.pitch
                - p.pitch_damping * s.pitch_rate)
                / p.pitch_inertia;
            s.vx += dt * ax;
            s.vz += dt * az;
            s.pitch_rate += dt * alpha;
        }
        for j in 0..4 {
            s.q[j] += dt * s.qd[j];
        }
        s.x += dt * s.vx;
        s.z += dt * s.vz;
        s.pitch += dt * s.pitch_rate;
        s.time += dt;
        reversals
    }
}

impl Environment for Walker {
    fn spec(&self) -> &EnvSpec {
        &self.spec
    }

    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64> {
        let w = self.params.reset_noise;
        let q: Vec<f64> = self
            .params
            .action
            .default
            .iter()
            .map(|p| if w > 0.0 { p + rng.uniform_range(-w, w) } else { *p })
            .collect();
        self.noise = rng.child("velocity_noise");
        self.stand(&q);
        let v = self.state.vx;
        self.observe(v)
    }

    fn step(&mut self, action: &[f64]) -> Result<Step> {
        if action.len() != ACT_DIM {
            return Err(Error::shape("walker action", ACT_DIM, action.len()));
        }
        let a: Vec<f64> = action.iter().map(|v| v.clamp(-1.0, 1.0)).collect();
        self.target = map_action(&a, &self.params.action, &self.target);
        let (lifted, lift_ends) = self.lifted_at(self.total_steps);
        let mut torque = [0.0; 4];
        let mut reversals = 0;
        for _ in 0..self.substeps {
            pd_torque_into(&self.target, &self.state.q, &self.state.qd, &self.params.gains, &mut torque);
            reversals += self.substep(&torque, lifted);
        }
        self.state.check_finite()?;
        let contacts = if lifted {
            [false; 2]
        } else {
            [0, 1].map(|k| ground_force(&self.params, &self.state, k).1 > 0.0)
        };
        self.state.contacts = contacts;
        self.state.prev_action.copy_from_slice(&a);
        self.steps += 1;
        self.total_steps += 1;

        let v = self.state.vx;
        let v_obs = if self.params.uses_estimator() {
            observe_velocity(v, self.params.velocity_bias, self.params.velocity_noise, &mut self.noise)
        } else {
            v
        };
        let in_contact = contacts[0] || contacts[1];
        let reward = reward_total(v_obs, 0.0, in_contact, &self.params.reward);
        let done = self.state.pitch.abs() > self.spec.pitch_limit || self.state.z < self.params.min_height;
        let truncated = !done && (self.steps >= self.params.step_limit || lift_ends);
        Ok(Step {
            obs: self.observe(v_obs),
            reward,
            done,
            truncated,
            info: StepInfo {
                velocity: v,
                observed_velocity: v_obs,
                reward_velocity: reward_velocity(v_obs, &self.params.reward),
                contacts,
                lifted,
                reversals: reversals as f64 / 4.0,
            },
        })
    }

    fn state_fields(&self) -> Vec<(&'static str, f64)> {
        let s = &self.state;
        let feet = self.feet();
        vec![
            ("x", s.x),
            ("vx", s.vx),
            ("z", s.z),
            ("vz", s.vz),
            ("pitch", s.pitch),
            ("pitch_rate", s.pitch_rate),
            ("q0", s.q[0]),
            ("q1", s.q[1]),
            ("q2", s.q[2]),
            ("q3", s.q[3]),
            ("qd0", s.qd[0]),
            ("qd1", s.qd[1]),
            ("qd2", s.qd[2]),
            ("qd3", s.qd[3]),
            ("contact0", f64::from(u8::from(s.contacts[0]))),
            ("contact1", f64::from(u8::from(s.contacts[1]))),
            ("foot0_x", feet[0].0),
            ("foot0_z", feet[0].1),
            ("foot1_x", feet[1].0),
            ("foot1_z", feet[1].1),
        ]
    }
}
