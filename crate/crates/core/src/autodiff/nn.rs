//! Fused layer normalization and depthwise temporal convolution.

use std::sync::Arc;

use crate::autodiff::tape::Var;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Real, Tensor};

/// Variance stabilizer used by every layer norm in the model.
pub const LAYERNORM_EPS: f64 = 1e-5;

/// Padding convention of [`conv1d_depthwise`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ConvMode {
    /// Symmetric zero padding; requires an odd kernel no longer than the sequence.
    Same,
    /// Pads only the past, so output `t` sees inputs `t-k+1..=t`.
    Causal,
}

/// Normalizes the last axis to zero mean and unit variance, then applies `gain` and `bias`.
pub fn layernorm<'t, F: Real>(
    x: Var<'t, F>,
    gain: Var<'t, F>,
    bias: Var<'t, F>,
) -> Result<Var<'t, F>> {
    let xv = x.value();
    let gv = gain.value();
    let bv = bias.value();
    let d = *xv.shape().last().ok_or_else(|| invalid("layernorm of rank-0 tensor"))?;
    if d == 0 {
        return Err(invalid("layernorm needs D >= 1"));
    }
    if gv.shape() != [d] || bv.shape() != [d] {
        return Err(Error::ShapeMismatch {
            op: "layernorm",
            lhs: xv.shape().to_vec(),
            rhs: gv.shape().to_vec(),
        });
    }
    let eps = F::lit(LAYERNORM_EPS);
    let inv_d = F::one() / F::lit(d as f64);
    let rows = xv.numel() / d;
    let mut xhat = vec![F::zero(); xv.numel()];
    let mut inv_std = vec![F::zero(); rows];
    let mut out = vec![F::zero(); xv.numel()];
    for r in 0..rows {
        let row = &xv.data()[r * d..(r + 1) * d];
        let mean = row.iter().copied().sum::<F>() * inv_d;
        let var = row.iter().map(|&v| (v - mean) * (v - mean)).sum::<F>() * inv_d;
        let is = F::one() / (var + eps).sqrt();
        inv_std[r] = is;
        for j in 0..d {
            let h = (row[j] - mean) * is;
            xhat[r * d + j] = h;
            out[r * d + j] = h * gv.data()[j] + bv.data()[j];
        }
    }
    let y = Tensor::new(xv.shape().to_vec(), out)?;
    let shape = xv.shape().to_vec();
    let xhat = Arc::new(xhat);
    Ok(x.tape.push_op(
        y,
        &[x, gain, bias],
        Box::new(move |g, needs| {
            let gd = g.data();
            let gx = needs[0].then(|| {
                let mut gx = vec![F::zero(); gd.len()];
                for r in 0..rows {
                    let mut m1 = F::zero();
                    let mut m2 = F::zero();
                    for j in 0..d {
                        let dh = gd[r * d + j] * gv.data()[j];
                        m1 += dh;
                        m2 += dh * xhat[r * d + j];
                    }
                    m1 *= inv_d;
                    m2 *= inv_d;
                    for j in 0..d {
                        let dh = gd[r * d + j] * gv.data()[j];
                        gx[r * d + j] = inv_std[r] * (dh - m1 - xhat[r * d + j] * m2);
                    }
                }
                Tensor::new(shape.clone(), gx).expect("shape")
            });
            let gg = needs[1].then(|| {
                let mut acc = vec![F::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += gd[r * d + j] * xhat[r * d + j];
                    }
                }
                Tensor::vector(acc)
            });
            let gb = needs[2].then(|| {
                let mut acc = vec![F::zero(); d];
                for r in 0..rows {
                    for j in 0..d {
                        acc[j] += gd[r * d + j];
                    }
                }
                Tensor::vector(acc)
            });
            vec![gx, gg, gb]
        }),
    ))
}

/// Per-channel 1-D convolution along the time axis.
///
/// `x` is `[.., T, C]` (leading axes are independent sequences) and
/// `kernel` is `[C, k]`. Output entry `(t, c)` is
/// `Σ_j kernel[c, j] · x[t + j - offset, c]` with zero padding, where
/// `offset = (k-1)/2` for [`ConvMode::Same`] and `k-1` for [`ConvMode::Causal`].
pub fn conv1d_depthwise<'t, F: Real>(
    x: Var<'t, F>,
    kernel: Var<'t, F>,
    mode: ConvMode,
) -> Result<Var<'t, F>> {
    let xv = x.value();
    let kv = kernel.value();
    let r = xv.rank();
    if r < 2 {
        return Err(invalid("conv1d_depthwise expects [.., T, C]"));
    }
    let (t_len, c) = (xv.shape()[r - 2], xv.shape()[r - 1]);
    let [kc, k] = kv.dims2("conv1d_depthwise kernel")?;
    if kc != c {
        return Err(Error::ShapeMismatch {
            op: "conv1d_depthwise",
            lhs: xv.shape().to_vec(),
            rhs: kv.shape().to_vec(),
        });
    }
    if k == 0 {
        return Err(invalid("kernel width must be at least 1"));
    }
    let offset = match mode {
        ConvMode::Same => {
            if k % 2 == 0 {
                return Err(invalid(format!("same-mode kernel width {k} must be odd")));
            }
            if k > t_len {
                return Err(invalid(format!("kernel width {k} exceeds sequence length {t_len}")));
            }
            (k - 1) / 2
        }
        ConvMode::Causal => k - 1,
    };
    let batch = xv.numel() / (t_len * c).max(1);
    let mut out = vec![F::zero(); xv.numel()];
    let (xd, kd) = (xv.data(), kv.data());
    for b in 0..batch {
        let base = b * t_len * c;
        for t in 0..t_len {
            let o = &mut out[base + t * c..base + (t + 1) * c];
            for j in 0..k {
                let src = t as isize + j as isize - offset as isize;
                if src < 0 || src >= t_len as isize {
                    continue;
                }
                let s = base + src as usize * c;
                for ch in 0..c {
                    o[ch] += kd[ch * k + j] * xd[s + ch];
                }
            }
        }
    }
    let y = Tensor::new(xv.shape().to_vec(), out)?;
    Ok(x.tape.push_op(
        y,
        &[x, kernel],
        Box::new(move |g, needs| {
            let (xd, kd, gd) = (xv.data(), kv.data(), g.data());
            let mut gx = needs[0].then(|| vec![F::zero(); xd.len()]);
            let mut gk = needs[1].then(|| vec![F::zero(); kd.len()]);
            for b in 0..batch {
                let base = b * t_len * c;
                for t in 0..t_len {
                    for j in 0..k {
                        let src = t as isize + j as isize - offset as isize;
                        if src < 0 || src >= t_len as isize {
                            continue;
                        }
                        let s = base + src as usize * c;
                        let o = base + t * c;
                        for ch in 0..c {
                            let go = gd[o + ch];
                            if let Some(gx) = gx.as_mut() {
                                gx[s + ch] += kd[ch * k + j] * go;
                            }
                            if let Some(gk) = gk.as_mut() {
                                gk[ch * k + j] += xd[s + ch] * go;
                            }
                        }
                    }
                }
            }
            vec![
                gx.map(|v| Tensor::new(xv.shape().to_vec(), v).expect("shape")),
                gk.map(|v| Tensor::new(kv.shape().to_vec(), v).expect("shape")),
            ]
        }),
    ))
}

/// Inverted dropout: zeroes each entry with probability `rate` and scales
/// survivors by `1/(1−rate)`.
pub fn dropout<'t, F: Real>(x: Var<'t, F>, rate: f64, rng: &mut crate::params::Rng) -> Result<Var<'t, F>> {
    use rand::Rng as _;
    if !(0.0..1.0).contains(&rate) {
        return Err(invalid(format!("dropout rate must lie in [0, 1), got {rate}")));
    }
    if rate == 0.0 {
        return Ok(x);
    }
    let keep = F::lit(1.0 / (1.0 - rate));
    let mask = Tensor::from_fn(x.shape(), |_| if rng.random::<f64>() < rate { F::zero() } else { keep });
    x.mul(x.tape.constant(mask))
}

impl<'t, F: Real> Var<'t, F> {
    pub fn layernorm(self, gain: Var<'t, F>, bias: Var<'t, F>) -> Result<Self> {
        layernorm(self, gain, bias)
    }
}
