//! Action-to-torque path: offset box around a default pose, optional target
//! low-pass filter, clamped PD law.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Joint targets live in `[default - offset, default + offset]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ActionMap {
    pub default: Vec<f64>,
    pub offset: Vec<f64>,
    /// First-order filter coefficient on the targets; 0 disables it.
    pub filter: f64,
}

impl ActionMap {
    pub fn new(default: Vec<f64>, offset: Vec<f64>, filter: f64) -> Result<Self> {
        let map = Self {
            default,
            offset,
            filter,
        };
        map.validate()?;
        Ok(map)
    }

    pub fn validate(&self) -> Result<()> {
        if self.default.len() != self.offset.len() {
            return Err(Error::shape("action map offsets", self.default.len(), self.offset.len()));
        }
        if let Some(o) = self.offset.iter().find(|o| !(**o > 0.0)) {
            return Err(Error::Config(format!("action offset {o} must be positive")));
        }
        if !(0.0..1.0).contains(&self.filter) {
            return Err(Error::Config(format!("filter coefficient {} outside [0, 1)", self.filter)));
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.default.len()
    }

    pub fn is_empty(&self) -> bool {
        self.default.is_empty()
    }

    pub fn lower(&self) -> Vec<f64> {
        self.default.iter().zip(&self.offset).map(|(p, o)| p - o).collect()
    }

    pub fn upper(&self) -> Vec<f64> {
        self.default.iter().zip(&self.offset).map(|(p, o)| p + o).collect()
    }
}

/// Maps a normalized action to joint targets. Actions are clamped to
/// `[-1, 1]` first; with a filter, the result is blended with `prev_target`.
pub fn map_action(action: &[f64], map: &ActionMap, prev_target: &[f64]) -> Vec<f64> {
    debug_assert_eq!(action.len(), map.len());
    let beta = map.filter;
    action
        .iter()
        .zip(&map.default)
        .zip(&map.offset)
        .zip(prev_target)
        .map(|(((a, p), o), prev)| {
            let raw = p + a.clamp(-1.0, 1.0) * o;
            let q = if beta > 0.0 {
                beta * prev + (1.0 - beta) * raw
            } else {
                raw
            };
            // A previous target outside the box (e.g. after a map change)
            // must not leak through the filter.
            q.clamp(p - o, p + o)
        })
        .collect()
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PdGains {
    pub kp: f64,
    pub kd: f64,
    pub torque_limit: f64,
}

impl PdGains {
    pub fn validate(&self) -> Result<()> {
        if !(self.kp > 0.0 && self.kd >= 0.0 && self.torque_limit > 0.0) {
            return Err(Error::Config(format!(
                "pd gains need kp > 0, kd >= 0, torque_limit > 0 (got {}, {}, {})",
                self.kp, self.kd, self.torque_limit
            )));
        }
        Ok(())
    }
}

/// `τ = clamp(Kp (q* − q) − Kd q̇, ±τ_max)` per joint.
pub fn pd_torque(target: &[f64], q: &[f64], qd: &[f64], gains: &PdGains) -> Vec<f64> {
    let mut out = vec![0.0; q.len()];
    pd_torque_into(target, q, qd, gains, &mut out);
    out
}

pub(crate) fn pd_torque_into(target: &[f64], q: &[f64], qd: &[f64], gains: &PdGains, out: &mut [f64]) {
    for i in 0..out.len() {
        let tau = gains.kp * (target[i] - q[i]) - gains.kd * qd[i];
        out[i] = tau.clamp(-gains.torque_limit, gains.torque_limit);
    }
}
