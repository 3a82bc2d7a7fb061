//! Real FFT along the leading (time) axis, with differentiable wrappers.
//!
//! Complex transforms of any length come from `rustfft`. Real columns are
//! transformed two at a time by packing them into the real and imaginary
//! parts of one complex sequence.

use num_complex::Complex;

use crate::autodiff::tape::Var;
use crate::error::{invalid, Error, Result};
use crate::tensor::{Real, Tensor};

/// Real and imaginary parts of a complex array.
#[derive(Clone, Debug, PartialEq)]
pub struct ComplexPair<F: Real = f64> {
    pub re: Tensor<F>,
    pub im: Tensor<F>,
}

impl<F: Real> ComplexPair<F> {
    pub fn new(re: Tensor<F>, im: Tensor<F>) -> Result<Self> {
        if re.shape() != im.shape() {
            return Err(Error::ShapeMismatch {
                op: "complex pair",
                lhs: re.shape().to_vec(),
                rhs: im.shape().to_vec(),
            });
        }
        Ok(Self { re, im })
    }
}

/// Differentiable complex value recorded on a tape.
#[derive(Clone, Copy, Debug)]
pub struct ComplexVar<'t, F: Real> {
    pub re: Var<'t, F>,
    pub im: Var<'t, F>,
}

/// Number of non-negative frequency bins of a length-`t` real signal.
pub fn rfft_bins(t: usize) -> usize {
    t / 2 + 1
}

/// Real FFT of every column of a `[t, cols]` row-major block.
/// Returns `(re, im)`, each `[t/2 + 1, cols]`.
fn rfft_cols<F: Real>(x: &[F], t: usize, cols: usize) -> (Vec<F>, Vec<F>) {
    let bins = rfft_bins(t);
    let plan = F::fft_plan(t, false);
    let mut re = vec![F::zero(); bins * cols];
    let mut im = vec![F::zero(); bins * cols];
    let mut buf = vec![Complex::new(F::zero(), F::zero()); t];
    let half = F::lit(0.5);
    let mut c = 0;
    while c < cols {
        let pair = c + 1 < cols;
        for (s, b) in buf.iter_mut().enumerate() {
            let second = if pair { x[s * cols + c + 1] } else { F::zero() };
            *b = Complex::new(x[s * cols + c], second);
        }
        plan.process(&mut buf);
        for k in 0..bins {
            let zk = buf[k];
            let zn = buf[(t - k) % t].conj();
            let first = (zk + zn) * half;
            re[k * cols + c] = first.re;
            im[k * cols + c] = first.im;
            if pair {
                // (Z_k - conj Z_{n-k}) / 2i
                let d = (zk - zn) * half;
                re[k * cols + c + 1] = d.im;
                im[k * cols + c + 1] = -d.re;
            }
        }
        c += 2;
    }
    (re, im)
}

/// Inverse of [`rfft_cols`]: Hermitian extension, the imaginary parts of
/// the DC bin (and the Nyquist bin for even `t`) are ignored.
fn irfft_cols<F: Real>(re: &[F], im: &[F], t: usize, cols: usize) -> Vec<F> {
    let bins = rfft_bins(t);
    let plan = F::fft_plan(t, true);
    let mut out = vec![F::zero(); t * cols];
    let mut buf = vec![Complex::new(F::zero(), F::zero()); t];
    let scale = F::one() / F::lit(t as f64);
    let spectrum = |k: usize, c: usize| -> Complex<F> {
        let (kk, conj) = if k < bins { (k, false) } else { (t - k, true) };
        let mut z = Complex::new(re[kk * cols + c], im[kk * cols + c]);
        if kk == 0 || (t.is_multiple_of(2) && kk == t / 2) {
            z.im = F::zero();
        }
        if conj {
            z.conj()
        } else {
            z
        }
    };
    let i = Complex::new(F::zero(), F::one());
    let mut c = 0;
    while c < cols {
        let pair = c + 1 < cols;
        for (k, b) in buf.iter_mut().enumerate() {
            let mut z = spectrum(k, c);
            if pair {
                z = z + i * spectrum(k, c + 1);
            }
            *b = z;
        }
        plan.process(&mut buf);
        for s in 0..t {
            out[s * cols + c] = buf[s].re * scale;
            if pair {
                out[s * cols + c + 1] = buf[s].im * scale;
            }
        }
        c += 2;
    }
    out
}

/// Weight of bin `k` in the Hermitian sum: 1 for DC and Nyquist, 2 otherwise.
fn bin_weight(k: usize, t: usize) -> f64 {
    if k == 0 || (t.is_multiple_of(2) && k == t / 2) {
        1.0
    } else {
        2.0
    }
}

fn split_time_axis<F: Real>(x: &Tensor<F>) -> Result<(usize, usize)> {
    let t = *x.shape().first().ok_or_else(|| invalid("rfft of rank-0 tensor"))?;
    if t == 0 {
        return Err(invalid("rfft needs T >= 1"));
    }
    Ok((t, x.numel() / t))
}

/// Real FFT along axis 0: `[T, ..] -> [T/2+1, ..]` complex.
pub fn rfft_tensor<F: Real>(x: &Tensor<F>) -> Result<ComplexPair<F>> {
    let (t, cols) = split_time_axis(x)?;
    let (re, im) = rfft_cols(x.data(), t, cols);
    let mut shape = x.shape().to_vec();
    shape[0] = rfft_bins(t);
    ComplexPair::new(Tensor::new(shape.clone(), re)?, Tensor::new(shape, im)?)
}

/// Inverse real FFT along axis 0 back to length `t`.
pub fn irfft_tensor<F: Real>(z: &ComplexPair<F>, t: usize) -> Result<Tensor<F>> {
    let bins = *z.re.shape().first().ok_or_else(|| invalid("irfft of rank-0 tensor"))?;
    if z.re.shape() != z.im.shape() {
        return Err(Error::ShapeMismatch {
            op: "irfft",
            lhs: z.re.shape().to_vec(),
            rhs: z.im.shape().to_vec(),
        });
    }
    if t == 0 || bins != rfft_bins(t) {
        return Err(invalid(format!(
            "irfft to length {t} needs {} bins, got {bins}",
            rfft_bins(t.max(1))
        )));
    }
    let cols = z.re.numel() / bins;
    let out = irfft_cols(z.re.data(), z.im.data(), t, cols);
    let mut shape = z.re.shape().to_vec();
    shape[0] = t;
    Tensor::new(shape, out)
}

/// Differentiable real FFT along axis 0.
pub fn rfft<'t, F: Real>(x: Var<'t, F>) -> Result<ComplexVar<'t, F>> {
    let xv = x.value();
    let (t, cols) = split_time_axis(&xv)?;
    let bins = rfft_bins(t);
    let (re, im) = rfft_cols(xv.data(), t, cols);
    let mut stacked = re;
    stacked.extend(im);
    let mut shape = vec![2, bins];
    shape.extend_from_slice(&xv.shape()[1..]);
    let y = Tensor::new(shape.clone(), stacked)?;
    let x_shape = xv.shape().to_vec();
    let node = x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| {
            // ∂x_t = Re Σ_k G_k e^{+iθ_kt} = T · irfft(G_k / w_k).
            let n = bins * cols;
            let (gr, gi) = g.data().split_at(n);
            let mut sr = gr.to_vec();
            let mut si = gi.to_vec();
            for k in 0..bins {
                let s = F::lit(t as f64 / bin_weight(k, t));
                for c in 0..cols {
                    sr[k * cols + c] *= s;
                    si[k * cols + c] *= s;
                }
            }
            // irfft drops Im of DC/Nyquist, whose forward adjoint is zero anyway.
            let gx = irfft_cols(&sr, &si, t, cols);
            vec![Some(Tensor::new(x_shape.clone(), gx).expect("shape"))]
        }),
    );
    let mut part_shape = shape[1..].to_vec();
    if part_shape.is_empty() {
        part_shape.push(1);
    }
    let re = node.narrow(0, 0, 1)?.reshape(&part_shape)?;
    let im = node.narrow(0, 1, 1)?.reshape(&part_shape)?;
    Ok(ComplexVar { re, im })
}

/// Differentiable inverse real FFT along axis 0.
pub fn irfft<'t, F: Real>(z: ComplexVar<'t, F>, t: usize) -> Result<Var<'t, F>> {
    let re = z.re.value();
    let im = z.im.value();
    let pair = ComplexPair::new((*re).clone(), (*im).clone())?;
    let y = irfft_tensor(&pair, t)?;
    let bins = rfft_bins(t);
    let cols = re.numel() / bins;
    let z_shape = re.shape().to_vec();
    Ok(z.re.tape.push_op(
        y,
        &[z.re, z.im],
        Box::new(move |g, _| {
            let (mut gr, mut gi) = rfft_cols(g.data(), t, cols);
            for k in 0..bins {
                let s = F::lit(bin_weight(k, t) / t as f64);
                for c in 0..cols {
                    gr[k * cols + c] *= s;
                    gi[k * cols + c] *= s;
                }
            }
            vec![
                Some(Tensor::new(z_shape.clone(), gr).expect("shape")),
                Some(Tensor::new(z_shape.clone(), gi).expect("shape")),
            ]
        }),
    ))
}

/// `(a+bi)(c+di)` with `w` broadcast onto `z` along trailing axes.
pub fn complex_mul<'t, F: Real>(
    z: ComplexVar<'t, F>,
    w: ComplexVar<'t, F>,
) -> Result<ComplexVar<'t, F>> {
    let re = z.re.mul(w.re)?.sub(z.im.mul(w.im)?)?;
    let im = z.re.mul(w.im)?.add(z.im.mul(w.re)?)?;
    Ok(ComplexVar { re, im })
}
