//! Multi-scale convolutional embedding.
//!
//! Each scale runs a same-padded depthwise convolution over time and lifts
//! the single filtered value per channel to `D` features. The scales are
//! concatenated, projected back to `D` and layer-normalized, so output
//! `(t, c, :)` only ever depends on input channel `c`.

use crate::autodiff::nn::{conv1d_depthwise, ConvMode};
use crate::autodiff::ops::concat;
use crate::autodiff::tape::Var;
use crate::error::{invalid, Result};
use crate::params::{uniform, Bound, Linear, ParamId, ParamStore, Rng};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug)]
pub struct Scale {
    pub kernel_size: usize,
    /// `[C, k]`
    pub depthwise: ParamId,
    /// `[1, D]`
    pub lift: ParamId,
}

#[derive(Clone, Debug)]
pub struct Mce {
    pub scales: Vec<Scale>,
    /// `[M·D, D]`, no bias.
    pub proj: ParamId,
    pub ln_gain: ParamId,
    pub ln_bias: ParamId,
}

impl Mce {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        kernels: &[usize],
        channels: usize,
        d_model: usize,
    ) -> Result<Self> {
        if kernels.is_empty() {
            return Err(invalid("at least one kernel size is required"));
        }
        if let Some(k) = kernels.iter().find(|&&k| k % 2 == 0) {
            return Err(invalid(format!("kernel sizes must be odd, got {k}")));
        }
        let scales = kernels
            .iter()
            .map(|&k| Scale {
                kernel_size: k,
                depthwise: store.add(format!("{name}.k{k}.depthwise"), uniform(rng, [channels, k], 1.0 / (k as f64).sqrt())),
                lift: store.add(format!("{name}.k{k}.lift"), uniform(rng, [1, d_model], 1.0)),
            })
            .collect::<Vec<_>>();
        let width = scales.len() * d_model;
        Ok(Self {
            proj: store.add(format!("{name}.proj"), uniform(rng, [width, d_model], 1.0 / (width as f64).sqrt())),
            ln_gain: store.add(format!("{name}.ln.gain"), Tensor::ones([d_model])),
            ln_bias: store.add(format!("{name}.ln.bias"), Tensor::zeros([d_model])),
            scales,
        })
    }

    pub fn param_count(kernels: &[usize], channels: usize, d_model: usize) -> usize {
        let m = kernels.len();
        kernels.iter().map(|k| channels * k + d_model).sum::<usize>() + m * d_model * d_model + 2 * d_model
    }

    /// One scale's features `[T, C, D]` from `x: [T, C]`.
    pub fn single_scale<'t, F: Real>(&self, p: &Bound<'t, F>, x: Var<'t, F>, m: usize) -> Result<Var<'t, F>> {
        let scale = self.scales.get(m).ok_or_else(|| invalid(format!("no scale {m}")))?;
        let shape = x.shape();
        if shape.len() != 2 {
            return Err(invalid("embedding input must be [T, C]"));
        }
        let e = conv1d_depthwise(x, p.get(scale.depthwise), ConvMode::Same)?;
        e.reshape(&[shape[0], shape[1], 1])?.matmul(p.get(scale.lift))
    }

    /// Projected features before layer normalization.
    pub fn pre_norm<'t, F: Real>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        let feats = (0..self.scales.len())
            .map(|m| self.single_scale(p, x, m))
            .collect::<Result<Vec<_>>>()?;
        concat(&feats, 2)?.matmul(p.get(self.proj))
    }

    /// `[T, C] -> [T, C, D]`.
    pub fn forward<'t, F: Real>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        self.pre_norm(p, x)?.layernorm(p.get(self.ln_gain), p.get(self.ln_bias))
    }
}

/// Token embedding: the multi-scale stack or a per-value linear lift.
#[derive(Clone, Debug)]
pub enum Embedding {
    MultiScale(Mce),
    /// `x(t, c) ↦ x(t, c)·w + b` with `w, b ∈ R^D`.
    Linear(Linear),
}

impl Embedding {
    pub fn forward<'t, F: Real>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        match self {
            Embedding::MultiScale(m) => m.forward(p, x),
            Embedding::Linear(l) => {
                let s = x.shape();
                if s.len() != 2 {
                    return Err(invalid("embedding input must be [T, C]"));
                }
                l.forward(p, x.reshape(&[s[0], s[1], 1])?)
            }
        }
    }
}
