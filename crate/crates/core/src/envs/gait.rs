use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

/// Open-loop anti-phase gait used to calibrate the walker.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GaitParams {
    pub hip_amplitude: f64,
    pub knee_amplitude: f64,
    /// rad/s
    pub frequency: f64,
    pub knee_phase: f64,
}

impl Default for GaitParams {
    fn default() -> Self {
        Self {
            hip_amplitude: 0.6,
            knee_amplitude: 0.8,
            frequency: 2.0 * PI * 1.25,
            knee_phase: PI / 2.0,
        }
    }
}

/// Normalized action `[hip0, knee0, hip1, knee1]` at time `t`; leg `k` is
/// shifted by `kπ`.
pub fn scripted_gait(t: f64, g: &GaitParams) -> [f64; 4] {
    let mut a = [0.0; 4];
    for k in 0..2 {
        let phase = g.frequency * t + k as f64 * PI;
        a[2 * k] = g.hip_amplitude * phase.sin();
        a[2 * k + 1] = g.knee_amplitude * (phase + g.knee_phase).sin();
    }
    a
}
