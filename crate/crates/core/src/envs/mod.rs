//! Environments: a planar two-leg walker driven through PD position targets,
//! and a torque-limited pendulum spin task that shares the reward path.

mod control;
mod gait;
mod pendulum;
mod reward;
mod walker;

use std::fmt;
use std::io::Write;
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use control::{map_action, pd_torque, ActionMap, PdGains};
pub use gait::{scripted_gait, GaitParams};
pub use pendulum::{Pendulum, PendulumParams, PendulumState};
pub use reward::{observe_velocity, reward_total, reward_velocity, RewardParams};
pub use walker::{Walker, WalkerParams, WalkerState};

use crate::error::{Error, Result};
use crate::nn::RngStream;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnvSpec {
    pub name: &'static str,
    pub obs_dim: usize,
    pub act_dim: usize,
    pub control_period: f64,
    pub dt: f64,
    pub step_limit: usize,
    /// Pitch magnitude (rad) beyond which an episode terminates.
    pub pitch_limit: f64,
}

impl EnvSpec {
    pub fn substeps(&self) -> usize {
        (self.control_period / self.dt).round() as usize
    }
}

/// Checks that `dt` divides the control period.
pub(crate) fn substep_count(control_period: f64, dt: f64) -> Result<usize> {
    if !(dt > 0.0 && control_period > 0.0) {
        return Err(Error::Config("control period and dt must be positive".into()));
    }
    let n = (control_period / dt).round();
    if n < 1.0 || (n * dt - control_period).abs() > 1e-9 * control_period {
        return Err(Error::Config(format!(
            "dt {dt} does not divide the control period {control_period}"
        )));
    }
    Ok(n as usize)
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct StepInfo {
    /// True forward velocity (m/s for the walker, rad/s for the pendulum).
    pub velocity: f64,
    /// The velocity the reward saw (after the estimator model).
    pub observed_velocity: f64,
    pub reward_velocity: f64,
    pub contacts: [bool; 2],
    /// The step fell inside a lift interval.
    pub lifted: bool,
    /// Joint-velocity sign reversals during the step, averaged over joints.
    pub reversals: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Step {
    pub obs: Vec<f64>,
    pub reward: f64,
    pub done: bool,
    pub truncated: bool,
    pub info: StepInfo,
}

pub trait Environment {
    fn spec(&self) -> &EnvSpec;

    /// Starts a new episode and returns the first observation.
    fn reset(&mut self, rng: &mut RngStream) -> Vec<f64>;

    fn step(&mut self, action: &[f64]) -> Result<Step>;

    /// Named scalar state for trajectory dumps.
    fn state_fields(&self) -> Vec<(&'static str, f64)>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum EnvKind {
    #[serde(rename = "pendulum_spin")]
    PendulumSpin,
    #[serde(rename = "minimal_walker")]
    MinimalWalker,
}

impl EnvKind {
    pub fn name(self) -> &'static str {
        match self {
            EnvKind::PendulumSpin => "pendulum_spin",
            EnvKind::MinimalWalker => "minimal_walker",
        }
    }
}

impl fmt::Display for EnvKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for EnvKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "pendulum_spin" => Ok(EnvKind::PendulumSpin),
            "minimal_walker" => Ok(EnvKind::MinimalWalker),
            _ => Err(Error::Config(format!(
                "unknown environment {s:?} (expected pendulum_spin or minimal_walker)"
            ))),
        }
    }
}

/// Per-control-step trajectory recorder.
#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    header: Vec<String>,
    rows: Vec<Vec<f64>>,
}

impl Trajectory {
    pub fn new() -> Self {
        Self::default()
    }

    /// Appends one row: time, every state field, the action, reward and done.
    pub fn record(&mut self, env: &dyn Environment, time: f64, action: &[f64], reward: f64, done: bool) {
        let fields = env.state_fields();
        if self.header.is_empty() {
            self.header.push("time".into());
            self.header.extend(fields.iter().map(|(n, _)| n.to_string()));
            self.header.extend((0..action.len()).map(|i| format!("action_{i}")));
            self.header.push("reward".into());
            self.header.push("done".into());
        }
        let mut row = vec![time];
        row.extend(fields.iter().map(|(_, v)| *v));
        row.extend_from_slice(action);
        row.push(reward);
        row.push(if done { 1.0 } else { 0.0 });
        self.rows.push(row);
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn write_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let mut out = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(out, "{}", self.header.join(","))?;
        for row in &self.rows {
            let cells: Vec<String> = row.iter().map(|v| v.to_string()).collect();
            writeln!(out, "{}", cells.join(","))?;
        }
        out.flush()?;
        Ok(())
    }
}
