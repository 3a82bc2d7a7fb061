//! Zero-order-hold discretization of a diagonal continuous-time system.

use crate::error::{invalid, Error, Result};
use crate::tensor::{Real, Tensor};

/// Below this `|δ·a|` the input coefficient uses its Taylor expansion.
pub const ZOH_SERIES_THRESHOLD: f64 = 1e-6;

/// `(Ā, b)` for one state lane, where `B̄ = b·B`.
///
/// `Ā = exp(δa)` and `b = (exp(δa) − 1)/a`; near `δa = 0` the removable
/// singularity is replaced by `δ(1 + δa/2)`.
#[inline]
pub fn zoh_scalar<F: Real>(a: F, delta: F) -> (F, F) {
    let x = delta * a;
    let abar = x.exp();
    let b = if x.abs() < F::lit(ZOH_SERIES_THRESHOLD) {
        delta * (F::one() + x * F::lit(0.5))
    } else {
        x.exp_m1() / a
    };
    (abar, b)
}

/// Partial derivatives `(∂b/∂δ, ∂b/∂a)` of the input coefficient.
#[inline]
pub(crate) fn zoh_coeff_grads<F: Real>(a: F, delta: F, abar: F) -> (F, F) {
    let x = delta * a;
    if x.abs() < F::lit(ZOH_SERIES_THRESHOLD) {
        return (F::one() + x, delta * delta * F::lit(0.5));
    }
    // ∂b/∂a = δ² φ(δa) with φ(x) = (x eˣ − (eˣ − 1)) / x².
    let phi = if x.abs() < F::lit(1e-2) {
        let x2 = x * x;
        F::lit(0.5) + x / F::lit(3.0) + x2 / F::lit(8.0) + x2 * x / F::lit(30.0) + x2 * x2 / F::lit(144.0)
    } else {
        (x * abar - x.exp_m1()) / (x * x)
    };
    (abar, delta * delta * phi)
}

/// Discretizes `a` (`[N]`, negative) and `B` (`[N, D_in]`) at step `delta`.
pub fn zoh_discretize<F: Real>(a: &Tensor<F>, delta: F, b: &Tensor<F>) -> Result<(Tensor<F>, Tensor<F>)> {
    if !(delta > F::zero()) {
        return Err(invalid(format!("ZOH step must be positive, got {delta}")));
    }
    let n = a.numel();
    if a.rank() != 1 || b.rank() != 2 || b.shape()[0] != n {
        return Err(Error::ShapeMismatch {
            op: "zoh_discretize",
            lhs: a.shape().to_vec(),
            rhs: b.shape().to_vec(),
        });
    }
    let din = b.shape()[1];
    let mut abar = vec![F::zero(); n];
    let mut bbar = vec![F::zero(); n * din];
    for i in 0..n {
        let (ab, bc) = zoh_scalar(a.data()[i], delta);
        abar[i] = ab;
        for j in 0..din {
            bbar[i * din + j] = bc * b.data()[i * din + j];
        }
    }
    Ok((Tensor::vector(abar), Tensor::new([n, din], bbar)?))
}
