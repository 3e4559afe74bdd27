use crate::error::{Error, Result};

pub const DEFAULT_EPS: f64 = 1e-5;

/// `gain_i · (x_i − mean) / sqrt(var + eps) + shift_i`, with the population
/// (1/n) variance.
pub fn layer_norm(x: &[f64], gain: &[f64], shift: &[f64], eps: f64) -> Result<Vec<f64>> {
    if x.is_empty() {
        return Err(Error::Empty("layer_norm input"));
    }
    if gain.len() != x.len() || shift.len() != x.len() {
        return Err(Error::shape(
            "layer_norm",
            x.len(),
            format!("gain {} / shift {}", gain.len(), shift.len()),
        ));
    }
    let mut xhat = vec![0.0; x.len()];
    normalize_row(x, eps, &mut xhat);
    Ok(xhat
        .iter()
        .zip(gain.iter().zip(shift))
        .map(|(&h, (&g, &s))| g * h + s)
        .collect())
}

/// Writes the pre-affine normalized row into `xhat` and returns `1/σ`.
pub(crate) fn normalize_row(x: &[f64], eps: f64, xhat: &mut [f64]) -> f64 {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv_std = 1.0 / (var + eps).sqrt();
    for (h, &v) in xhat.iter_mut().zip(x) {
        *h = (v - mean) * inv_std;
    }
    inv_std
}

/// Gradient w.r.t. the normalization input given the gradient w.r.t. `xhat`.
pub(crate) fn normalize_row_backward(xhat: &[f64], inv_std: f64, dxhat: &[f64], dx: &mut [f64]) {
    let n = xhat.len() as f64;
    let mean_d = dxhat.iter().sum::<f64>() / n;
    let mean_dx = dxhat.iter().zip(xhat).map(|(d, h)| d * h).sum::<f64>() / n;
    for ((o, &d), &h) in dx.iter_mut().zip(dxhat).zip(xhat) {
        *o = inv_std * (d - mean_d - h * mean_dx);
    }
}
