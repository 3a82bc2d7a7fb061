//! Dense row-major tensors and the scalar abstraction shared by every module.
//!
//! Two precisions are supported: `f32` for training runs and `f64` for
//! verification. Code that is generic over [`Real`] compiles for both.

use std::fmt::{Debug, Display, LowerExp};
use std::cell::RefCell;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};
use std::sync::Arc;

use num_traits::{Float, FloatConst, FromPrimitive, ToPrimitive};

use crate::error::{Error, Result};

/// Floating-point scalar usable as a tensor element.
pub trait Real:
    Float
    + FloatConst
    + FromPrimitive
    + ToPrimitive
    + Default
    + Debug
    + Display
    + LowerExp
    + Send
    + Sync
    + 'static
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + rustfft::FftNum
{
    /// True for the verification precision. Operations with a
    /// precision-dependent error contract (division by zero) use it.
    const VERIFICATION: bool;

    /// `c = alpha * a · b + beta * c` with explicit row/column strides.
    #[allow(clippy::too_many_arguments)]
    fn gemm(
        m: usize,
        k: usize,
        n: usize,
        alpha: Self,
        a: &[Self],
        rsa: isize,
        csa: isize,
        b: &[Self],
        rsb: isize,
        csb: isize,
        beta: Self,
        c: &mut [Self],
        rsc: isize,
        csc: isize,
    );

    /// Cached complex FFT of length `n`; unnormalized in both directions.
    fn fft_plan(n: usize, inverse: bool) -> Arc<dyn rustfft::Fft<Self>>;

    /// Converts an `f64` literal.
    #[inline]
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

fn check_extent(len: usize, rows: usize, cols: usize, rs: isize, cs: isize) {
    if rows == 0 || cols == 0 {
        return;
    }
    let last = (rows as isize - 1) * rs + (cols as isize - 1) * cs;
    assert!(rs >= 0 && cs >= 0 && (last as usize) < len, "gemm operand out of bounds");
}

macro_rules! impl_real {
    ($t:ty, $verify:expr, $gemm:path) => {
        impl Real for $t {
            const VERIFICATION: bool = $verify;

            fn fft_plan(n: usize, inverse: bool) -> Arc<dyn rustfft::Fft<Self>> {
                thread_local! {
                    static PLANNER: RefCell<rustfft::FftPlanner<$t>> =
                        RefCell::new(rustfft::FftPlanner::new());
                }
                PLANNER.with(|p| {
                    let mut p = p.borrow_mut();
                    if inverse {
                        p.plan_fft_inverse(n)
                    } else {
                        p.plan_fft_forward(n)
                    }
                })
            }

            fn gemm(
                m: usize,
                k: usize,
                n: usize,
                alpha: Self,
                a: &[Self],
                rsa: isize,
                csa: isize,
                b: &[Self],
                rsb: isize,
                csb: isize,
                beta: Self,
                c: &mut [Self],
                rsc: isize,
                csc: isize,
            ) {
                check_extent(a.len(), m, k, rsa, csa);
                check_extent(b.len(), k, n, rsb, csb);
                check_extent(c.len(), m, n, rsc, csc);
                if m == 0 || n == 0 {
                    return;
                }
                // SAFETY: every operand extent was bounds-checked above.
                unsafe {
                    $gemm(
                        m,
                        k,
                        n,
                        alpha,
                        a.as_ptr(),
                        rsa,
                        csa,
                        b.as_ptr(),
                        rsb,
                        csb,
                        beta,
                        c.as_mut_ptr(),
                        rsc,
                        csc,
                    );
                }
            }
        }
    };
}

impl_real!(f32, false, matrixmultiply::sgemm);
impl_real!(f64, true, matrixmultiply::dgemm);

/// Dense n-dimensional array stored in row-major order.
#[derive(Clone, PartialEq)]
pub struct Tensor<F = f64> {
    shape: Vec<usize>,
    data: Vec<F>,
}

impl<F: Real> Debug for Tensor<F> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Tensor")
            .field("shape", &self.shape)
            .field("data", &self.data)
            .finish()
    }
}

pub(crate) fn numel(shape: &[usize]) -> usize {
    shape.iter().product()
}

pub(crate) fn strides(shape: &[usize]) -> Vec<usize> {
    let mut s = vec![1; shape.len()];
    for i in (0..shape.len().saturating_sub(1)).rev() {
        s[i] = s[i + 1] * shape[i + 1];
    }
    s
}

impl<F: Real> Tensor<F> {
    pub fn new(shape: impl Into<Vec<usize>>, data: Vec<F>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != data.len() {
            return Err(Error::InvalidShape {
                reason: format!("expected {} elements, got {}", numel(&shape), data.len()),
                shape,
            });
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::zero())
    }

    pub fn ones(shape: impl Into<Vec<usize>>) -> Self {
        Self::full(shape, F::one())
    }

    pub fn full(shape: impl Into<Vec<usize>>, value: F) -> Self {
        let shape = shape.into();
        let data = vec![value; numel(&shape)];
        Self { shape, data }
    }

    pub fn scalar(value: F) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<F>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    /// Builds a tensor from `f64` values, casting to `F`.
    pub fn from_f64(shape: impl Into<Vec<usize>>, data: &[f64]) -> Result<Self> {
        Self::new(shape, data.iter().map(|&x| F::lit(x)).collect())
    }

    /// Fills a tensor from a function of the flat row-major index.
    pub fn from_fn(shape: impl Into<Vec<usize>>, f: impl FnMut(usize) -> F) -> Self {
        let shape = shape.into();
        let data = (0..numel(&shape)).map(f).collect();
        Self { shape, data }
    }

    pub fn eye(n: usize) -> Self {
        Self::from_fn([n, n], |i| if i / n == i % n { F::one() } else { F::zero() })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<F> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.data.len() != 1 {
            return Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: "item() requires exactly one element".into(),
            });
        }
        Ok(self.data[0])
    }

    pub fn reshape(mut self, shape: impl Into<Vec<usize>>) -> Result<Self> {
        let shape = shape.into();
        if numel(&shape) != self.data.len() {
            return Err(Error::ShapeMismatch {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    fn flat_index(&self, index: &[usize]) -> usize {
        assert_eq!(index.len(), self.shape.len(), "index rank mismatch");
        let mut flat = 0;
        for (i, (&ix, &ext)) in index.iter().zip(&self.shape).enumerate() {
            assert!(ix < ext, "index {ix} out of bounds for axis {i} of extent {ext}");
            flat = flat * ext + ix;
        }
        flat
    }

    pub fn get(&self, index: &[usize]) -> F {
        self.data[self.flat_index(index)]
    }

    pub fn set(&mut self, index: &[usize], value: F) {
        let i = self.flat_index(index);
        self.data[i] = value;
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    pub fn cast<G: Real>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| G::lit(x.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    /// Largest absolute elementwise difference; `None` if shapes differ.
    pub fn max_abs_diff(&self, other: &Self) -> Option<F> {
        if self.shape != other.shape {
            return None;
        }
        Some(
            self.data
                .iter()
                .zip(&other.data)
                .fold(F::zero(), |m, (&a, &b)| m.max((a - b).abs())),
        )
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.shape, other.shape);
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Transpose of a rank-2 tensor.
    pub fn t(&self) -> Result<Self> {
        let [m, n] = self.dims2("transpose")?;
        let mut out = vec![F::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor::new([n, m], out)
    }

    pub(crate) fn dims2(&self, op: &'static str) -> Result<[usize; 2]> {
        match self.shape[..] {
            [m, n] => Ok([m, n]),
            _ => Err(Error::InvalidShape {
                shape: self.shape.clone(),
                reason: format!("{op} expects a rank-2 tensor"),
            }),
        }
    }

    /// Plain matrix product of two rank-2 tensors.
    pub fn matmul(&self, rhs: &Self) -> Result<Self> {
        let [m, k] = self.dims2("matmul")?;
        let [k2, n] = rhs.dims2("matmul")?;
        if k != k2 {
            return Err(Error::ShapeMismatch {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: rhs.shape.clone(),
            });
        }
        let mut out = vec![F::zero(); m * n];
        F::gemm(
            m,
            k,
            n,
            F::one(),
            &self.data,
            k as isize,
            1,
            &rhs.data,
            n as isize,
            1,
            F::zero(),
            &mut out,
            n as isize,
            1,
        );
        Tensor::new([m, n], out)
    }
}

/// How the right operand of a binary operation maps onto the output.
#[derive(Clone, Debug)]
pub(crate) enum Broadcast {
    Same,
    Scalar,
    /// The operand repeats every `n` output elements.
    Tile(usize),
    /// Strides of the operand expressed in output dimensions (0 = broadcast).
    General(Vec<usize>),
}

/// Trailing-axis broadcast of `b` onto `out`; only size-1 expansion is allowed.
pub(crate) fn broadcast_plan(out: &[usize], b: &[usize]) -> Option<Broadcast> {
    if b == out {
        return Some(Broadcast::Same);
    }
    if b.len() > out.len() {
        return None;
    }
    let offset = out.len() - b.len();
    for (i, &bd) in b.iter().enumerate() {
        if bd != out[offset + i] && bd != 1 {
            return None;
        }
    }
    if numel(b) == 1 {
        return Some(Broadcast::Scalar);
    }
    let first = b.iter().position(|&d| d != 1).unwrap_or(b.len());
    let core = &b[first..];
    if core == &out[out.len() - core.len()..] {
        return Some(Broadcast::Tile(numel(core)));
    }
    let bs = strides(b);
    let mut s = vec![0; out.len()];
    for (i, &bd) in b.iter().enumerate() {
        if bd != 1 {
            s[offset + i] = bs[i];
        }
    }
    Some(Broadcast::General(s))
}

/// Visits `(out_index, b_index)` pairs in output order.
pub(crate) fn for_each_broadcast(
    out: &[usize],
    plan: &Broadcast,
    mut f: impl FnMut(usize, usize),
) {
    let n = numel(out);
    match plan {
        Broadcast::Same => (0..n).for_each(|i| f(i, i)),
        Broadcast::Scalar => (0..n).for_each(|i| f(i, 0)),
        Broadcast::Tile(m) => {
            for base in (0..n).step_by((*m).max(1)) {
                (0..*m).for_each(|j| f(base + j, j));
            }
        }
        Broadcast::General(bs) => {
            if n == 0 {
                return;
            }
            let rank = out.len();
            let inner = out[rank - 1];
            let inner_stride = bs[rank - 1];
            let mut idx = vec![0usize; rank - 1];
            let mut base = 0usize;
            let mut o = 0usize;
            loop {
                for j in 0..inner {
                    f(o + j, base + j * inner_stride);
                }
                o += inner;
                // Advance the odometer over the leading axes.
                let mut ax = rank - 1;
                loop {
                    if ax == 0 {
                        return;
                    }
                    ax -= 1;
                    idx[ax] += 1;
                    base += bs[ax];
                    if idx[ax] < out[ax] {
                        break;
                    }
                    base -= bs[ax] * idx[ax];
                    idx[ax] = 0;
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        assert!(Tensor::<f64>::new([2, 3], vec![0.0; 5]).is_err());
        assert!(Tensor::<f64>::new([2, 3], vec![0.0; 6]).is_ok());
    }

    #[test]
    fn general_broadcast_visits_expected_pairs() {
        let plan = broadcast_plan(&[2, 3, 2], &[2, 1, 2]).unwrap();
        assert!(matches!(plan, Broadcast::General(_)));
        let mut pairs = Vec::new();
        for_each_broadcast(&[2, 3, 2], &plan, |o, b| pairs.push((o, b)));
        let b_idx: Vec<usize> = pairs.iter().map(|p| p.1).collect();
        assert_eq!(b_idx, vec![0, 1, 0, 1, 0, 1, 2, 3, 2, 3, 2, 3]);
    }

    #[test]
    fn broadcast_rejects_non_unit_expansion() {
        assert!(broadcast_plan(&[3, 4], &[3]).is_none());
        assert!(broadcast_plan(&[3, 4], &[2, 3, 4]).is_none());
        assert!(matches!(broadcast_plan(&[3, 4], &[4]), Some(Broadcast::Tile(4))));
        assert!(matches!(broadcast_plan(&[3, 4], &[1, 4]), Some(Broadcast::Tile(4))));
    }

    #[test]
    fn matmul_small() {
        let a = Tensor::<f64>::from_f64([1, 2], &[1.0, 2.0]).unwrap();
        let b = Tensor::<f64>::from_f64([2, 1], &[3.0, 4.0]).unwrap();
        assert_eq!(a.matmul(&b).unwrap().data(), &[11.0]);
    }
}
