//! Velocity-interval reward with yaw penalty and contact gating.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::RngStream;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RewardParams {
    pub target_velocity: f64,
    pub yaw_weight: f64,
    /// Zero reward on steps without any foot contact.
    pub contact_gating: bool,
    /// Replace the piecewise shape with a continuous tolerance curve.
    pub continuous_margin: bool,
}

impl RewardParams {
    pub fn new(target_velocity: f64) -> Self {
        Self {
            target_velocity,
            yaw_weight: 0.1,
            contact_gating: true,
            continuous_margin: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.target_velocity > 0.0) {
            return Err(Error::Config(format!(
                "target velocity {} must be positive",
                self.target_velocity
            )));
        }
        Ok(())
    }
}

/// Piecewise velocity reward. Full reward on `[v_t, 2 v_t]`, zero at or beyond
/// `-v_t` and `4 v_t`, linear in `|v - v_t|` elsewhere (which leaves jumps at
/// `2 v_t` and `4 v_t`).
///
/// With `continuous_margin` the two flanks instead fall linearly from 1 to 0
/// over `2 v_t` on either side of the interval.
pub fn reward_velocity(v: f64, params: &RewardParams) -> f64 {
    let vt = params.target_velocity;
    if params.continuous_margin {
        let gap = if v < vt {
            vt - v
        } else if v > 2.0 * vt {
            v - 2.0 * vt
        } else {
            0.0
        };
        return (1.0 - gap / (2.0 * vt)).max(0.0);
    }
    if (vt..=2.0 * vt).contains(&v) {
        1.0
    } else if v <= -vt || v >= 4.0 * vt {
        0.0
    } else {
        1.0 - (v - vt).abs() / (2.0 * vt)
    }
}

/// `r_v(v) - w·v_yaw²`, or 0 when gating is on and no foot touches the ground.
pub fn reward_total(v: f64, v_yaw: f64, in_contact: bool, params: &RewardParams) -> f64 {
    if params.contact_gating && !in_contact {
        return 0.0;
    }
    reward_velocity(v, params) - params.yaw_weight * v_yaw * v_yaw
}

/// Emulates a biased, noisy velocity estimate: `bias·v + ε`, `ε ~ N(0, σ²)`.
pub fn observe_velocity(true_v: f64, bias: f64, noise_std: f64, rng: &mut RngStream) -> f64 {
    let eps = if noise_std > 0.0 {
        noise_std * rng.normal()
    } else {
        0.0
    };
    bias * true_v + eps
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn observed_velocity_bias() {
        let mut rng = RngStream::new(0, "v");
        assert_eq!(observe_velocity(0.73, 1.0, 0.0, &mut rng), 0.73);
        assert!((observe_velocity(1.0, 0.8, 0.0, &mut rng) - 0.8).abs() <= 1e-12);
        // Holding v_t / bias earns full reward under the biased estimate.
        let p = RewardParams::new(0.5);
        let v = observe_velocity(0.5 / 0.8, 0.8, 0.0, &mut rng);
        assert_eq!(reward_velocity(v, &p), 1.0);
    }

    #[test]
    fn continuous_margin_has_no_jumps() {
        let p = RewardParams {
            continuous_margin: true,
            ..RewardParams::new(1.0)
        };
        let mut prev = reward_velocity(-3.0, &p);
        let mut v = -3.0;
        while v < 6.0 {
            v += 1e-3;
            let r = reward_velocity(v, &p);
            assert!((r - prev).abs() <= 1e-3 / 2.0 + 1e-12);
            assert!((0.0..=1.0).contains(&r));
            prev = r;
        }
    }
}
