//! Bidirectional selective state-space block.

use crate::autodiff::nn::{conv1d_depthwise, ConvMode};
use crate::autodiff::ops::concat;
use crate::autodiff::tape::Var;
use crate::error::{invalid, Result};
use crate::params::{normal, uniform, Bound, ParamId, ParamStore, Rng};
use crate::ssm::scan::{selective_scan_with, ScanKernel};
use crate::tensor::{Real, Tensor};

/// Step-size bias giving `softplus(b_Δ) = 0.1`.
pub fn delta_bias_init() -> f64 {
    (0.1f64.exp() - 1.0).ln()
}

/// Shape hyperparameters of one SSM block.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct SsmConfig {
    /// Model width `D`.
    pub d_model: usize,
    /// State size `N`.
    pub d_state: usize,
    /// Expansion factor `E`; the inner width is `E·D`.
    pub expand: usize,
    /// Width of the causal local convolution.
    pub d_conv: usize,
    pub kernel: ScanKernel,
}

impl SsmConfig {
    pub fn d_inner(&self) -> usize {
        self.expand * self.d_model
    }

    pub fn validate(&self) -> Result<()> {
        if self.d_model == 0 || self.d_state == 0 || self.expand == 0 || self.d_conv == 0 {
            return Err(invalid(format!("SSM dimensions must be positive: {self:?}")));
        }
        Ok(())
    }

    /// Trainable element count of one [`BiSsm`].
    pub fn param_count(&self) -> usize {
        let (d, n, di, k) = (self.d_model, self.d_state, self.d_inner(), self.d_conv);
        let direction = d * k + d * di + d + 1 + d * di + n + n * di + di * n + di;
        2 * direction + 2 * di * d + d
    }
}

/// Parameters of one scan direction.
#[derive(Clone, Copy, Debug)]
pub struct SsmDirection {
    pub conv_k: ParamId,
    pub w_u: ParamId,
    pub w_delta: ParamId,
    pub b_delta: ParamId,
    pub w_g: ParamId,
    pub a_log: ParamId,
    pub b: ParamId,
    pub c: ParamId,
    pub d_skip: ParamId,
}

/// Per-token inputs of a scan.
pub struct SelectiveParams<'t, F: Real> {
    /// `[.., T, D_in]`
    pub u: Var<'t, F>,
    /// `[.., T]`
    pub delta: Var<'t, F>,
    /// `[.., T, D_in]`, entries in (0, 1).
    pub gate: Var<'t, F>,
}

impl SsmDirection {
    pub fn init<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, cfg: &SsmConfig) -> Self {
        let (d, n, di, k) = (cfg.d_model, cfg.d_state, cfg.d_inner(), cfg.d_conv);
        let inv_d = 1.0 / (d as f64).sqrt();
        let inv_n = 1.0 / (n as f64).sqrt();
        let a_log = Tensor::from_fn([n], |i| {
            if n == 1 {
                F::zero()
            } else {
                F::lit((n as f64).ln() * i as f64 / (n - 1) as f64)
            }
        });
        Self {
            conv_k: store.add(format!("{name}.conv_k"), uniform(rng, [d, k], 1.0 / (k as f64).sqrt())),
            w_u: store.add(format!("{name}.w_u"), uniform(rng, [d, di], inv_d)),
            w_delta: store.add(format!("{name}.w_delta"), uniform(rng, [d], inv_d)),
            b_delta: store.add(format!("{name}.b_delta"), Tensor::full([1], F::lit(delta_bias_init()))),
            w_g: store.add(format!("{name}.w_g"), uniform(rng, [d, di], inv_d)),
            a_log: store.add(format!("{name}.a_log"), a_log),
            b: store.add(format!("{name}.B"), normal(rng, [n, di], inv_n)),
            c: store.add(format!("{name}.C"), normal(rng, [di, n], inv_n)),
            d_skip: store.add(format!("{name}.D"), Tensor::ones([di])),
        }
    }

    /// `u = SiLU(causal_conv(h))·W_u`, `δ = softplus(h·w_Δ + b_Δ)`, `g = σ(h·W_g)`.
    pub fn selective_params<'t, F: Real>(&self, p: &Bound<'t, F>, h: Var<'t, F>) -> Result<SelectiveParams<'t, F>> {
        let shape = h.shape();
        let d = *shape.last().ok_or_else(|| invalid("SSM input must be [.., T, D]"))?;
        let conv = conv1d_depthwise(h, p.get(self.conv_k), ConvMode::Causal)?;
        let u = conv.silu()?.matmul(p.get(self.w_u))?;
        let w_delta = p.get(self.w_delta).reshape(&[d, 1])?;
        let delta = h
            .matmul(w_delta)?
            .add(p.get(self.b_delta))?
            .softplus()
            .reshape(&shape[..shape.len() - 1])?;
        let gate = h.matmul(p.get(self.w_g))?.sigmoid();
        Ok(SelectiveParams { u, delta, gate })
    }

    /// Gated scan output `[.., T, D_in]`.
    pub fn forward<'t, F: Real>(&self, p: &Bound<'t, F>, h: Var<'t, F>, kernel: ScanKernel) -> Result<Var<'t, F>> {
        let sp = self.selective_params(p, h)?;
        let y = selective_scan_with(
            kernel,
            sp.u,
            sp.delta,
            p.get(self.a_log),
            p.get(self.b),
            p.get(self.c),
            p.get(self.d_skip),
        )?;
        sp.gate.mul(y)
    }
}

/// Forward and time-reversed scans fused by a linear map.
#[derive(Clone, Copy, Debug)]
pub struct BiSsm {
    pub cfg: SsmConfig,
    pub fwd: SsmDirection,
    pub bwd: SsmDirection,
    pub w_o: ParamId,
    pub b_o: ParamId,
}

impl BiSsm {
    pub fn init<F: Real>(store: &mut ParamStore<F>, rng: &mut Rng, name: &str, cfg: SsmConfig) -> Result<Self> {
        cfg.validate()?;
        let fwd = SsmDirection::init(store, rng, &format!("{name}.fwd"), &cfg);
        let bwd = SsmDirection::init(store, rng, &format!("{name}.bwd"), &cfg);
        let di = cfg.d_inner();
        let w_o = store.add(
            format!("{name}.w_o"),
            uniform(rng, [2 * di, cfg.d_model], 1.0 / ((2 * di) as f64).sqrt()),
        );
        let b_o = store.add(format!("{name}.b_o"), Tensor::zeros([cfg.d_model]));
        Ok(Self { cfg, fwd, bwd, w_o, b_o })
    }

    /// Direction outputs `(o→, o←)`, the latter restored to forward time order.
    pub fn directions<'t, F: Real>(&self, p: &Bound<'t, F>, h: Var<'t, F>) -> Result<(Var<'t, F>, Var<'t, F>)> {
        let rank = h.shape().len();
        if rank < 2 {
            return Err(invalid("SSM input must be [.., T, D]"));
        }
        let time = rank - 2;
        let of = self.fwd.forward(p, h, self.cfg.kernel)?;
        let ob = self.bwd.forward(p, h.flip(time)?, self.cfg.kernel)?.flip(time)?;
        Ok((of, ob))
    }

    /// `z_t = [o→_t ; o←_t]·W_o + b_o` over input `[.., T, D]`.
    pub fn forward<'t, F: Real>(&self, p: &Bound<'t, F>, h: Var<'t, F>) -> Result<Var<'t, F>> {
        let (of, ob) = self.directions(p, h)?;
        let last = of.shape().len() - 1;
        concat(&[of, ob], last)?.matmul(p.get(self.w_o))?.add(p.get(self.b_o))
    }
}
