//! Matrix exponential by scaling and squaring of a truncated Taylor series.

use crate::autodiff::tape::Var;
use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};

/// Largest matrix side accepted by [`matrix_exp`].
pub const MATRIX_EXP_CAP: usize = 256;

const TERM_TOL: f64 = 1e-16;
const MAX_TERMS: usize = 64;

fn inf_norm<F: Real>(m: &Tensor<F>, n: usize) -> F {
    (0..n)
        .map(|i| m.data()[i * n..(i + 1) * n].iter().map(|v| v.abs()).sum::<F>())
        .fold(F::zero(), F::max)
}

fn expm_unchecked<F: Real>(m: &Tensor<F>, n: usize) -> Result<Tensor<F>> {
    let norm = inf_norm(m, n).as_f64();
    let mut s = 0u32;
    if norm > 0.5 {
        s = (norm / 0.5).log2().ceil() as u32;
        // Rounding in log2 can leave the scaled norm a hair above 0.5.
        while norm / 2f64.powi(s as i32) > 0.5 {
            s += 1;
        }
    }
    let scale = F::lit(0.5f64.powi(s as i32));
    let x = m.map(|v| v * scale);
    let mut sum = Tensor::<F>::eye(n);
    let mut term = Tensor::<F>::eye(n);
    for k in 1..=MAX_TERMS {
        let inv_k = F::one() / F::lit(k as f64);
        term = term.matmul(&x)?.map(|v| v * inv_k);
        sum.add_assign(&term);
        if inf_norm(&term, n).as_f64() < TERM_TOL {
            break;
        }
    }
    for _ in 0..s {
        sum = sum.matmul(&sum)?;
    }
    Ok(sum)
}

/// `exp(M)` for a square matrix of side at most `cap`.
pub fn matrix_exp_capped<F: Real>(m: &Tensor<F>, cap: usize) -> Result<Tensor<F>> {
    let [r, c] = m.dims2("matrix_exp")?;
    if r != c {
        return Err(Error::InvalidShape {
            shape: m.shape().to_vec(),
            reason: "matrix_exp expects a square matrix".into(),
        });
    }
    if r > cap {
        return Err(Error::SizeCap { size: r, cap });
    }
    if !m.all_finite() {
        return Err(Error::NonFinite("matrix_exp"));
    }
    expm_unchecked(m, r)
}

/// `exp(M)` with the default size cap.
pub fn matrix_exp_tensor<F: Real>(m: &Tensor<F>) -> Result<Tensor<F>> {
    matrix_exp_capped(m, MATRIX_EXP_CAP)
}

/// Fréchet derivative adjoint: `∂L/∂M` given `G = ∂L/∂exp(M)`.
///
/// The upper-right block of `exp([[Mᵀ, G], [0, Mᵀ]])` equals
/// `Σ_k 1/k! Σ_{j<k} (Mᵀ)^j G (Mᵀ)^{k-1-j}`, the term-by-term product rule
/// applied to the Taylor series.
pub fn matrix_exp_adjoint<F: Real>(m: &Tensor<F>, g: &Tensor<F>) -> Result<Tensor<F>> {
    let [n, _] = m.dims2("matrix_exp adjoint")?;
    let mt = m.t()?;
    let big = Tensor::from_fn([2 * n, 2 * n], |i| {
        let (r, c) = (i / (2 * n), i % (2 * n));
        match (r < n, c < n) {
            (true, true) => mt.data()[r * n + c],
            (true, false) => g.data()[r * n + c - n],
            (false, false) => mt.data()[(r - n) * n + c - n],
            (false, true) => F::zero(),
        }
    });
    let e = expm_unchecked(&big, 2 * n)?;
    Ok(Tensor::from_fn([n, n], |i| e.data()[(i / n) * 2 * n + n + i % n]))
}

/// Differentiable matrix exponential.
pub fn matrix_exp<'t, F: Real>(m: Var<'t, F>) -> Result<Var<'t, F>> {
    let mv = m.value();
    let y = matrix_exp_tensor(&mv)?;
    Ok(m.tape.push_op(
        y,
        &[m],
        Box::new(move |g, _| vec![Some(matrix_exp_adjoint(&mv, g).expect("square matrix"))]),
    ))
}

impl<'t, F: Real> Var<'t, F> {
    pub fn matrix_exp(self) -> Result<Self> {
        matrix_exp(self)
    }
}
