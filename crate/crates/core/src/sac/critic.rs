use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, AdamConfig, AdamState, HiddenRegularization, Matrix, MlpParams, RngStream};

/// Online Q networks, their EMA targets, and one optimizer per critic.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CriticEnsemble {
    pub online: Vec<MlpParams>,
    pub target: Vec<MlpParams>,
    pub optims: Vec<AdamState>,
}

impl CriticEnsemble {
    /// Each critic maps `[obs | action]` to a scalar. Targets start as exact
    /// copies of their online networks.
    pub fn new(
        n: usize,
        input_dim: usize,
        hidden: &[usize],
        reg: HiddenRegularization,
        lr: f64,
        rng: &mut RngStream,
    ) -> Result<Self> {
        let mut sizes = vec![input_dim];
        sizes.extend_from_slice(hidden);
        sizes.push(1);
        let online = (0..n)
            .map(|i| MlpParams::new(&sizes, Activation::Relu, reg, 1.0, &mut rng.fork(i as u64)))
            .collect::<Result<Vec<_>>>()?;
        let target = online.clone();
        let optims = online
            .iter()
            .map(|p| AdamState::new(p, AdamConfig::with_lr(lr)))
            .collect();
        Ok(Self {
            online,
            target,
            optims,
        })
    }

    pub fn len(&self) -> usize {
        self.online.len()
    }

    pub fn is_empty(&self) -> bool {
        self.online.is_empty()
    }

    pub fn input_dim(&self) -> usize {
        self.online[0].input_dim()
    }

    /// Applies [`ema_update`] to every critic.
    pub fn soft_update(&mut self, rate: f64) -> Result<()> {
        for (o, t) in self.online.iter().zip(self.target.iter_mut()) {
            ema_update(o, t, rate)?;
        }
        Ok(())
    }
}

/// `target ← (1 − ρ)·target + ρ·online`, elementwise.
pub fn ema_update(online: &MlpParams, target: &mut MlpParams, rate: f64) -> Result<()> {
    if !online.same_shape(target) {
        return Err(Error::shape("ema update", "matching networks", "different shapes"));
    }
    if !(rate > 0.0 && rate <= 1.0) {
        return Err(Error::Config(format!("ema rate {rate} outside (0, 1]")));
    }
    let keep = 1.0 - rate;
    for (t, o) in target.tensors_mut().into_iter().zip(online.tensors()) {
        for (tv, &ov) in t.iter_mut().zip(o) {
            *tv = keep * *tv + rate * ov;
        }
    }
    target.touch();
    Ok(())
}

/// Concatenates observations and actions column-wise into `out`.
pub fn critic_input_into(obs: &Matrix, actions: &Matrix, out: &mut Matrix) {
    let (b, o) = obs.shape();
    let m = actions.cols();
    out.resize(b, o + m);
    for i in 0..b {
        let row = out.row_mut(i);
        row[..o].copy_from_slice(obs.row(i));
        row[o..].copy_from_slice(actions.row(i));
    }
}

/// Elementwise minimum over the selected critics' outputs (`B × 1` each).
pub fn subset_min(values: &[Matrix], subset: &[usize]) -> Vec<f64> {
    let rows = values[subset[0]].rows();
    (0..rows)
        .map(|r| {
            subset
                .iter()
                .map(|&i| values[i].get(r, 0))
                .fold(f64::INFINITY, f64::min)
        })
        .collect()
}
