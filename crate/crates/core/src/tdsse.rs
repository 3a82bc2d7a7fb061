//! Tri-branch differential state-space encoder.
//!
//! Raw, first-difference and spectral views of the token stream are
//! encoded in parallel, denoised by element-wise gates and mixed by a
//! softmax over views computed from their pooled summaries. The mixture is
//! added back onto the input.

use crate::autodiff::fft::{complex_mul, irfft, rfft, rfft_bins, ComplexVar};
use crate::autodiff::nn::dropout;
use crate::autodiff::ops::concat;
use crate::autodiff::tape::Var;
use crate::error::{invalid, Result};
use crate::params::{Bound, Linear, ParamId, ParamStore, Rng};
use crate::ssm::{BiSsm, SsmConfig};
use crate::tensor::{Real, Tensor};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum View {
    Raw,
    Diff,
    Freq,
}

impl View {
    pub const ALL: [View; 3] = [View::Raw, View::Diff, View::Freq];

    pub fn name(self) -> &'static str {
        match self {
            View::Raw => "raw",
            View::Diff => "diff",
            View::Freq => "freq",
        }
    }
}

/// `ΔZ[0] = 0`, `ΔZ[t] = Z[t] − Z[t−1]` along axis 0.
pub fn diff_view<'t, F: Real>(z: Var<'t, F>) -> Result<Var<'t, F>> {
    let shape = z.shape();
    let t = *shape.first().ok_or_else(|| invalid("diff_view of rank-0 tensor"))?;
    let mut head = shape.clone();
    head[0] = 1;
    let zero = z.tape().constant(Tensor::zeros(head));
    if t < 2 {
        return Ok(zero);
    }
    let d = z.narrow(0, 1, t - 1)?.sub(z.narrow(0, 0, t - 1)?)?;
    concat(&[zero, d], 0)
}

/// `irfft(rfft(z) ⊙ W, T)` along axis 0 with `W` broadcast over trailing axes.
pub fn freq_view<'t, F: Real>(z: Var<'t, F>, w: ComplexVar<'t, F>) -> Result<Var<'t, F>> {
    let t = *z.shape().first().ok_or_else(|| invalid("freq_view of rank-0 tensor"))?;
    irfft(complex_mul(rfft(z)?, w)?, t)
}

/// Trainable complex spectral filter `[F, 1, D]`.
#[derive(Clone, Copy, Debug)]
pub struct FreqFilter {
    pub re: ParamId,
    pub im: ParamId,
}

/// View-selection network: `[s_1; …; s_V] -> H_g -> V`.
#[derive(Clone, Copy, Debug)]
pub struct GlobalGate {
    pub hidden: Linear,
    pub out: Linear,
}

#[derive(Clone, Debug)]
pub struct Tdsse {
    pub views: Vec<View>,
    pub raw: Option<BiSsm>,
    pub diff: Option<BiSsm>,
    pub freq: Option<FreqFilter>,
    /// One local gate per entry of `views`.
    pub local: Vec<Linear>,
    pub global: Option<GlobalGate>,
    pub dropout: f64,
}

/// Encoder output and the view weights it used.
pub struct TdsseOutput<'t, F: Real> {
    pub z: Var<'t, F>,
    /// `[V]`, one weight per configured view.
    pub alpha: Var<'t, F>,
}

impl Tdsse {
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        views: &[View],
        ssm: SsmConfig,
        seq_len: usize,
        dropout: f64,
    ) -> Result<Self> {
        if views.is_empty() {
            return Err(invalid("TDSSE needs at least one view"));
        }
        for (i, v) in views.iter().enumerate() {
            if views[..i].contains(v) {
                return Err(invalid(format!("duplicate view {}", v.name())));
            }
        }
        let d = ssm.d_model;
        let has = |v: View| views.contains(&v);
        let raw = has(View::Raw).then(|| BiSsm::init(store, rng, &format!("{name}.raw"), ssm)).transpose()?;
        let diff = has(View::Diff).then(|| BiSsm::init(store, rng, &format!("{name}.diff"), ssm)).transpose()?;
        let freq = has(View::Freq).then(|| {
            let bins = rfft_bins(seq_len);
            FreqFilter {
                re: store.add(format!("{name}.freq.re"), Tensor::ones([bins, 1, d])),
                im: store.add(format!("{name}.freq.im"), Tensor::zeros([bins, 1, d])),
            }
        });
        let local = views
            .iter()
            .map(|v| Linear::new(store, rng, &format!("{name}.gate.{}", v.name()), d, d, true))
            .collect();
        let global = (views.len() > 1).then(|| GlobalGate {
            hidden: Linear::new(store, rng, &format!("{name}.global.hidden"), views.len() * d, d, true),
            out: Linear::new(store, rng, &format!("{name}.global.out"), d, views.len(), true),
        });
        Ok(Self {
            views: views.to_vec(),
            raw,
            diff,
            freq,
            local,
            global,
            dropout,
        })
    }

    /// Encoded view `H_v` of `z: [T, C, D]`.
    pub fn view<'t, F: Real>(&self, p: &Bound<'t, F>, view: View, z: Var<'t, F>) -> Result<Var<'t, F>> {
        let missing = || invalid(format!("view {} is not configured", view.name()));
        // The SSM runs over time with one lane per channel.
        let over_time = |ssm: &BiSsm, x: Var<'t, F>| -> Result<Var<'t, F>> {
            ssm.forward(p, x.permute(&[1, 0, 2])?)?.permute(&[1, 0, 2])
        };
        match view {
            View::Raw => over_time(self.raw.as_ref().ok_or_else(missing)?, z),
            View::Diff => over_time(self.diff.as_ref().ok_or_else(missing)?, diff_view(z)?),
            View::Freq => {
                let w = self.freq.ok_or_else(missing)?;
                freq_view(z, ComplexVar { re: p.get(w.re), im: p.get(w.im) })
            }
        }
    }

    /// `σ(Linear_i(h)) ⊙ h`.
    pub fn local_gate<'t, F: Real>(&self, p: &Bound<'t, F>, i: usize, h: Var<'t, F>) -> Result<Var<'t, F>> {
        self.local[i].forward(p, h)?.sigmoid().mul(h)
    }

    /// Softmax weights over the gated views.
    pub fn global_gate<'t, F: Real>(&self, p: &Bound<'t, F>, gated: &[Var<'t, F>]) -> Result<Var<'t, F>> {
        let Some(gate) = &self.global else {
            return Ok(gated[0].tape().constant(Tensor::ones([1])));
        };
        let summaries = gated
            .iter()
            .map(|h| {
                let s = h.shape();
                h.reshape(&[s[0] * s[1], s[2]])?.mean_axis(0)
            })
            .collect::<Result<Vec<_>>>()?;
        let s = concat(&summaries, 0)?;
        let n = s.shape()[0];
        let hidden = gate.hidden.forward(p, s.reshape(&[1, n])?)?.silu()?;
        let logits = gate.out.forward(p, hidden)?;
        logits.softmax()?.reshape(&[gated.len()])
    }

    /// `Σ_i α_i H̃_i` (with dropout when `rng` is given) `+ z`.
    pub fn forward<'t, F: Real>(&self, p: &Bound<'t, F>, z: Var<'t, F>, rng: Option<&mut Rng>) -> Result<TdsseOutput<'t, F>> {
        self.forward_with_residual(p, z, z, rng)
    }

    /// Like [`Tdsse::forward`] but adds `residual` instead of the input.
    pub fn forward_with_residual<'t, F: Real>(
        &self,
        p: &Bound<'t, F>,
        z: Var<'t, F>,
        residual: Var<'t, F>,
        rng: Option<&mut Rng>,
    ) -> Result<TdsseOutput<'t, F>> {
        if z.shape().len() != 3 {
            return Err(invalid("TDSSE input must be [T, C, D]"));
        }
        let gated = self
            .views
            .iter()
            .enumerate()
            .map(|(i, &v)| self.local_gate(p, i, self.view(p, v, z)?))
            .collect::<Result<Vec<_>>>()?;
        let alpha = self.global_gate(p, &gated)?;
        let mut fused: Option<Var<'t, F>> = None;
        for (i, h) in gated.iter().enumerate() {
            let term = h.mul(alpha.narrow(0, i, 1)?)?;
            fused = Some(match fused {
                Some(acc) => acc.add(term)?,
                None => term,
            });
        }
        let mut fused = fused.expect("at least one view");
        if let Some(rng) = rng {
            fused = dropout(fused, self.dropout, rng)?;
        }
        Ok(TdsseOutput { z: fused.add(residual)?, alpha })
    }
}
