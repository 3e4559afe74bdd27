use serde::{Deserialize, Serialize};

use super::mlp::{MlpGrads, MlpParams};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }
}

/// Adam moments for one network.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first: MlpGrads,
    pub second: MlpGrads,
}

impl AdamState {
    pub fn new(params: &MlpParams, config: AdamConfig) -> Self {
        Self {
            config,
            step: 0,
            first: params.zero_grads(),
            second: params.zero_grads(),
        }
    }
}

/// One bias-corrected Adam step on `params`. Rejects non-finite gradients
/// before touching anything.
pub fn adam_step(params: &mut MlpParams, grads: &MlpGrads, state: &mut AdamState) -> Result<()> {
    let layer_of = params.tensor_layers();
    let g = grads.tensors();
    if g.len() != layer_of.len() {
        return Err(Error::shape("adam gradients", layer_of.len(), g.len()));
    }
    for ((t, p), l) in g.iter().zip(params.tensors()).zip(&layer_of) {
        if t.len() != p.len() {
            return Err(Error::shape("adam gradient tensor", p.len(), t.len()));
        }
        if t.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of layer {l}")));
        }
    }

    state.step += 1;
    let cfg = state.config;
    let step = state.step;
    for (((p, g), m), v) in params
        .tensors_mut()
        .into_iter()
        .zip(g)
        .zip(state.first.tensors_mut())
        .zip(state.second.tensors_mut())
    {
        adam_update(p, g, m, v, step, &cfg);
    }
    params.touch();
    Ok(())
}

/// Elementwise Adam update of a flat tensor at (1-based) step `t`.
pub fn adam_update(
    params: &mut [f64],
    grads: &[f64],
    first: &mut [f64],
    second: &mut [f64],
    t: u64,
    cfg: &AdamConfig,
) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for i in 0..params.len() {
        let g = grads[i];
        first[i] = cfg.beta1 * first[i] + (1.0 - cfg.beta1) * g;
        second[i] = cfg.beta2 * second[i] + (1.0 - cfg.beta2) * g * g;
        let m_hat = first[i] / bc1;
        let v_hat = second[i] / bc2;
        params[i] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::{Activation, Dense, Matrix, RngStream};

    fn scalar_param(v: f64) -> MlpParams {
        MlpParams::from_layers(
            vec![Dense {
                weight: Matrix::from_vec(1, 1, vec![v]).unwrap(),
                bias: vec![0.0],
                norm: None,
                dropout_rate: 0.0,
            }],
            Activation::Relu,
        )
        .unwrap()
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let mut p = scalar_param(0.0);
        let mut state = AdamState::new(&p, AdamConfig::with_lr(0.1));
        let mut g = p.zero_grads();
        g.layers[0].weight.as_mut_slice()[0] = 1.0;
        adam_step(&mut p, &g, &mut state).unwrap();
        let w = p.layers()[0].weight.get(0, 0);
        // m̂ = 1, v̂ = 1 → Δ = −0.1·1/(1 + 1e-8)
        assert!((w - -0.1).abs() < 1e-8, "{w}");
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradients_leave_params_and_decay_moments() {
        let mut rng = RngStream::new(0, "init");
        let mut p = MlpParams::new(&[3, 4, 1], Activation::Relu, Default::default(), 1.0, &mut rng)
            .unwrap();
        let mut state = AdamState::new(&p, AdamConfig::default());
        let zero = p.zero_grads();
        let before = p.clone();
        adam_step(&mut p, &zero, &mut state).unwrap();
        assert_eq!(before.tensors(), p.tensors());

        // Moments from an earlier non-zero step decay geometrically.
        let mut g = p.zero_grads();
        for t in g.tensors_mut() {
            t.fill(0.5);
        }
        adam_step(&mut p, &g, &mut state).unwrap();
        let m_before = state.first.clone();
        let v_before = state.second.clone();
        adam_step(&mut p, &zero, &mut state).unwrap();
        for (a, b) in state.first.tensors().iter().zip(m_before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, 0.9 * y);
            }
        }
        for (a, b) in state.second.tensors().iter().zip(v_before.tensors()) {
            for (x, y) in a.iter().zip(b) {
                assert_eq!(*x, 0.999 * y);
            }
        }
    }

    #[test]
    fn non_finite_gradient_names_layer() {
        let mut rng = RngStream::new(0, "init");
        let mut p =
            MlpParams::new(&[2, 3, 1], Activation::Relu, Default::default(), 1.0, &mut rng).unwrap();
        let mut state = AdamState::new(&p, AdamConfig::default());
        let mut g = p.zero_grads();
        g.layers[1].bias[0] = f64::NAN;
        let err = adam_step(&mut p, &g, &mut state).unwrap_err();
        assert!(err.to_string().contains("layer 1"), "{err}");
        assert_eq!(state.step, 0);
    }

    #[test]
    fn identical_inputs_are_bitwise_identical() {
        let run = || {
            let mut rng = RngStream::new(11, "init");
            let mut p =
                MlpParams::new(&[2, 5, 1], Activation::Relu, Default::default(), 1.0, &mut rng)
                    .unwrap();
            let mut state = AdamState::new(&p, AdamConfig::default());
            let mut g = p.zero_grads();
            for (i, t) in g.tensors_mut().into_iter().enumerate() {
                for (j, v) in t.iter_mut().enumerate() {
                    *v = ((i * 31 + j) as f64).sin();
                }
            }
            for _ in 0..5 {
                adam_step(&mut p, &g, &mut state).unwrap();
            }
            (p, state)
        };
        assert_eq!(run(), run());
    }
}
