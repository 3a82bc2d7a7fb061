//! Test-time corruptions: additive per-channel baseline ramps and dropped channels.

use rand::seq::index::sample;
use rand::Rng as _;

use crate::error::{invalid, Result};
use crate::params::Rng;
use crate::tensor::Tensor;

/// `t/T − 1/2` for the 1-based time index `t`.
pub fn drift_ramp(t: usize, len: usize) -> f64 {
    t as f64 / len as f64 - 0.5
}

/// Population standard deviation of every column of `x: [T, C]`.
pub fn channel_std(x: &Tensor<f64>) -> Vec<f64> {
    let (t, c) = (x.shape()[0], x.shape()[1]);
    (0..c)
        .map(|ch| {
            let mean = (0..t).map(|i| x.data()[i * c + ch]).sum::<f64>() / t as f64;
            ((0..t).map(|i| (x.data()[i * c + ch] - mean).powi(2)).sum::<f64>() / t as f64).sqrt()
        })
        .collect()
}

fn check_2d(x: &Tensor<f64>) -> Result<(usize, usize)> {
    match x.shape() {
        &[t, c] => Ok((t, c)),
        s => Err(invalid(format!("expected a [T, C] recording, got {s:?}"))),
    }
}

/// `x'(t, c) = x(t, c) + s·a_c·(t/T − 1/2)` with the given amplitudes.
pub fn inject_drift_with(x: &Tensor<f64>, s: f64, amplitudes: &[f64]) -> Result<Tensor<f64>> {
    let (t, c) = check_2d(x)?;
    if !(s >= 0.0) {
        return Err(invalid(format!("drift strength must be non-negative, got {s}")));
    }
    if amplitudes.len() != c {
        return Err(invalid(format!("need {c} drift amplitudes, got {}", amplitudes.len())));
    }
    let mut out = x.clone();
    for i in 0..t {
        let r = drift_ramp(i + 1, t);
        for (v, &a) in out.data_mut()[i * c..(i + 1) * c].iter_mut().zip(amplitudes) {
            *v += s * a * r;
        }
    }
    Ok(out)
}

/// Drift with `a_c ~ U(−σ_c, σ_c)` drawn per call, `σ_c` the channel's own std.
pub fn inject_drift(x: &Tensor<f64>, s: f64, rng: &mut Rng) -> Result<Tensor<f64>> {
    check_2d(x)?;
    let amplitudes: Vec<f64> = channel_std(x)
        .into_iter()
        .map(|sigma| if sigma > 0.0 { rng.random_range(-sigma..=sigma) } else { 0.0 })
        .collect();
    inject_drift_with(x, s, &amplitudes)
}

/// `⌊p·C⌋`, tolerant of representation error in `p`.
pub fn masked_count(p: f64, channels: usize) -> usize {
    ((p * channels as f64 + 1e-9).floor() as usize).min(channels)
}

/// Zeroes the listed channels.
pub fn mask_channels_with(x: &Tensor<f64>, channels: &[usize]) -> Result<Tensor<f64>> {
    let (t, c) = check_2d(x)?;
    if let Some(ch) = channels.iter().find(|&&ch| ch >= c) {
        return Err(invalid(format!("channel {ch} out of range")));
    }
    let mut out = x.clone();
    for i in 0..t {
        for &ch in channels {
            out.data_mut()[i * c + ch] = 0.0;
        }
    }
    Ok(out)
}

/// Zeroes `⌊p·C⌋` distinct channels chosen uniformly.
pub fn mask_channels(x: &Tensor<f64>, p: f64, rng: &mut Rng) -> Result<Tensor<f64>> {
    let (_, c) = check_2d(x)?;
    if !(0.0..=1.0).contains(&p) {
        return Err(invalid(format!("mask rate must lie in [0, 1], got {p}")));
    }
    let chosen = sample(rng, c, masked_count(p, c)).into_vec();
    mask_channels_with(x, &chosen)
}
