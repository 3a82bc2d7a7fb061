//! Elementwise, activation, matrix, shape and reduction primitives.

use std::sync::Arc;

use crate::autodiff::tape::Var;
use crate::error::{invalid, Error, Result};
use crate::tensor::{broadcast_plan, for_each_broadcast, numel, strides, Broadcast, Real, Tensor};

/// Binary elementwise operation tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BinaryOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

/// Pointwise and row-wise activation tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Sigmoid,
    Silu,
    Softplus,
    SoftmaxLastDim,
}

/// Reduction tags.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduce {
    Mean,
    Sum,
    AbsSum,
    Trace,
}

#[inline]
pub fn sigmoid<F: Real>(x: F) -> F {
    if x >= F::zero() {
        F::one() / (F::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (F::one() + e)
    }
}

/// `log(1 + e^x)`, returning `x` itself above 30.
#[inline]
pub fn softplus<F: Real>(x: F) -> F {
    if x > F::lit(30.0) {
        x
    } else {
        x.exp().ln_1p()
    }
}

fn reduce_to(
    out_shape: &[usize],
    plan: &Broadcast,
    b_len: usize,
    mut term: impl FnMut(usize, usize) -> f64,
) -> Vec<f64> {
    let mut acc = vec![0.0; b_len];
    for_each_broadcast(out_shape, plan, |i, j| acc[j] += term(i, j));
    acc
}

fn unary_op<'t, F: Real>(
    x: Var<'t, F>,
    f: impl Fn(F) -> F,
    df: impl Fn(F, F) -> F + 'static,
) -> Var<'t, F> {
    let xv = x.value();
    let y = xv.map(&f);
    let yv = Arc::new(y.clone());
    x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| {
            let data = g
                .data()
                .iter()
                .zip(xv.data())
                .zip(yv.data())
                .map(|((&g, &x), &y)| g * df(x, y))
                .collect();
            vec![Some(Tensor::new(g.shape().to_vec(), data).expect("shape"))]
        }),
    )
}

/// Elementwise `a <op> b` with `b` broadcast onto `a` along trailing axes.
pub fn elementwise<'t, F: Real>(op: BinaryOp, a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    let av = a.value();
    let bv = b.value();
    let out_shape = av.shape().to_vec();
    let plan = broadcast_plan(&out_shape, bv.shape()).ok_or_else(|| Error::ShapeMismatch {
        op: "elementwise",
        lhs: out_shape.clone(),
        rhs: bv.shape().to_vec(),
    })?;
    if op == BinaryOp::Div && F::VERIFICATION && bv.data().iter().any(|&x| x == F::zero()) {
        return Err(Error::DivisionByZero("elementwise div"));
    }
    let mut out = vec![F::zero(); av.numel()];
    {
        let (ad, bd) = (av.data(), bv.data());
        let mut apply = |f: fn(F, F) -> F| for_each_broadcast(&out_shape, &plan, |i, j| out[i] = f(ad[i], bd[j]));
        match op {
            BinaryOp::Add => apply(|x, y| x + y),
            BinaryOp::Sub => apply(|x, y| x - y),
            BinaryOp::Mul => apply(|x, y| x * y),
            BinaryOp::Div => apply(|x, y| x / y),
            BinaryOp::Pow => apply(|x, y| x.powf(y)),
        }
    }
    let y = Tensor::new(out_shape.clone(), out)?;
    let yv = Arc::new(y.clone());
    Ok(a.tape.push_op(
        y,
        &[a, b],
        Box::new(move |g, needs| {
            let (ad, bd, gd, yd) = (av.data(), bv.data(), g.data(), yv.data());
            let b_shape = bv.shape().to_vec();
            let same = matches!(plan, Broadcast::Same);
            let ga = needs[0].then(|| {
                let mut out = vec![F::zero(); gd.len()];
                match op {
                    BinaryOp::Add | BinaryOp::Sub => out.copy_from_slice(gd),
                    BinaryOp::Mul => for_each_broadcast(&out_shape, &plan, |i, j| out[i] = gd[i] * bd[j]),
                    BinaryOp::Div => for_each_broadcast(&out_shape, &plan, |i, j| out[i] = gd[i] / bd[j]),
                    BinaryOp::Pow => for_each_broadcast(&out_shape, &plan, |i, j| {
                        out[i] = gd[i] * bd[j] * ad[i].powf(bd[j] - F::one())
                    }),
                }
                Tensor::new(out_shape.clone(), out).expect("shape")
            });
            let gb = needs[1].then(|| {
                let term = |i: usize, j: usize| -> F {
                    match op {
                        BinaryOp::Add => gd[i],
                        BinaryOp::Sub => -gd[i],
                        BinaryOp::Mul => gd[i] * ad[i],
                        BinaryOp::Div => -gd[i] * ad[i] / (bd[j] * bd[j]),
                        BinaryOp::Pow => {
                            if ad[i] > F::zero() {
                                gd[i] * yd[i] * ad[i].ln()
                            } else {
                                F::zero()
                            }
                        }
                    }
                };
                if same {
                    let data = (0..gd.len()).map(|i| term(i, i)).collect();
                    Tensor::new(b_shape.clone(), data).expect("shape")
                } else {
                    let acc = reduce_to(&out_shape, &plan, bd.len(), |i, j| term(i, j).as_f64());
                    Tensor::new(b_shape.clone(), acc.into_iter().map(F::lit).collect())
                        .expect("shape")
                }
            });
            vec![ga, gb]
        }),
    ))
}

/// Pointwise activations and the last-axis softmax.
pub fn activation<'t, F: Real>(tag: Activation, x: Var<'t, F>) -> Result<Var<'t, F>> {
    Ok(match tag {
        Activation::Sigmoid => unary_op(x, sigmoid, |_, y| y * (F::one() - y)),
        Activation::Silu => unary_op(
            x,
            |x| x * sigmoid(x),
            |x, _| {
                let s = sigmoid(x);
                s * (F::one() + x * (F::one() - s))
            },
        ),
        Activation::Softplus => unary_op(x, softplus, |x, _| sigmoid(x)),
        Activation::SoftmaxLastDim => softmax_lastdim(x, false)?,
    })
}

fn softmax_lastdim<'t, F: Real>(x: Var<'t, F>, log: bool) -> Result<Var<'t, F>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let d = *shape.last().ok_or_else(|| invalid("softmax of a rank-0 tensor"))?;
    if d == 0 {
        return Err(invalid("softmax over an empty axis"));
    }
    let mut probs = vec![F::zero(); xv.numel()];
    let mut out = vec![F::zero(); xv.numel()];
    for ((row, p), o) in xv
        .data()
        .chunks(d)
        .zip(probs.chunks_mut(d))
        .zip(out.chunks_mut(d))
    {
        let m = row.iter().fold(F::neg_infinity(), |m, &v| m.max(v));
        let mut s = F::zero();
        for (pi, &v) in p.iter_mut().zip(row) {
            *pi = (v - m).exp();
            s += *pi;
        }
        let ls = s.ln();
        for ((pi, oi), &v) in p.iter_mut().zip(o.iter_mut()).zip(row) {
            *pi /= s;
            *oi = if log { v - m - ls } else { *pi };
        }
    }
    let probs = Arc::new(probs);
    let y = Tensor::new(shape.clone(), out)?;
    Ok(x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![F::zero(); g.numel()];
            for ((gr, pr), o) in g.data().chunks(d).zip(probs.chunks(d)).zip(gx.chunks_mut(d)) {
                if log {
                    let s: F = gr.iter().copied().sum();
                    for ((oi, &gi), &pi) in o.iter_mut().zip(gr).zip(pr) {
                        *oi = gi - pi * s;
                    }
                } else {
                    let s: F = gr.iter().zip(pr).map(|(&a, &b)| a * b).sum();
                    for ((oi, &gi), &pi) in o.iter_mut().zip(gr).zip(pr) {
                        *oi = pi * (gi - s);
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), gx).expect("shape"))]
        }),
    ))
}

/// `a · b` where `a` is `[.., k]` (leading axes flattened into rows) and `b` is `[k, n]`.
pub fn matmul<'t, F: Real>(a: Var<'t, F>, b: Var<'t, F>) -> Result<Var<'t, F>> {
    let av = a.value();
    let bv = b.value();
    let mismatch = || Error::ShapeMismatch {
        op: "matmul",
        lhs: av.shape().to_vec(),
        rhs: bv.shape().to_vec(),
    };
    let [k, n] = match bv.shape() {
        &[k, n] => [k, n],
        _ => return Err(mismatch()),
    };
    if av.rank() == 0 || *av.shape().last().unwrap() != k {
        return Err(mismatch());
    }
    let rows = numel(&av.shape()[..av.rank() - 1]);
    let mut out_shape = av.shape().to_vec();
    *out_shape.last_mut().unwrap() = n;
    let mut out = vec![F::zero(); rows * n];
    F::gemm(
        rows,
        k,
        n,
        F::one(),
        av.data(),
        k as isize,
        1,
        bv.data(),
        n as isize,
        1,
        F::zero(),
        &mut out,
        n as isize,
        1,
    );
    let y = Tensor::new(out_shape, out)?;
    Ok(a.tape.push_op(
        y,
        &[a, b],
        Box::new(move |g, needs| {
            let ga = needs[0].then(|| {
                let mut ga = vec![F::zero(); rows * k];
                // G [rows×n] · bᵀ [n×k]
                F::gemm(
                    rows,
                    n,
                    k,
                    F::one(),
                    g.data(),
                    n as isize,
                    1,
                    bv.data(),
                    1,
                    n as isize,
                    F::zero(),
                    &mut ga,
                    k as isize,
                    1,
                );
                Tensor::new(av.shape().to_vec(), ga).expect("shape")
            });
            let gb = needs[1].then(|| {
                let mut gb = vec![F::zero(); k * n];
                // aᵀ [k×rows] · G [rows×n]
                F::gemm(
                    k,
                    rows,
                    n,
                    F::one(),
                    av.data(),
                    1,
                    k as isize,
                    g.data(),
                    n as isize,
                    1,
                    F::zero(),
                    &mut gb,
                    n as isize,
                    1,
                );
                Tensor::new([k, n], gb).expect("shape")
            });
            vec![ga, gb]
        }),
    ))
}

/// `w · x[b]` for every leading index `b`, with `w: [m, k]` and `x: [.., k, n]`.
pub fn left_matmul<'t, F: Real>(w: Var<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
    let wv = w.value();
    let xv = x.value();
    let mismatch = || Error::ShapeMismatch {
        op: "left_matmul",
        lhs: wv.shape().to_vec(),
        rhs: xv.shape().to_vec(),
    };
    let [m, k] = match wv.shape() {
        &[m, k] => [m, k],
        _ => return Err(mismatch()),
    };
    let r = xv.rank();
    if r < 2 || xv.shape()[r - 2] != k {
        return Err(mismatch());
    }
    let n = xv.shape()[r - 1];
    let batch = numel(&xv.shape()[..r - 2]);
    let mut out_shape = xv.shape().to_vec();
    out_shape[r - 2] = m;
    let mut out = vec![F::zero(); batch * m * n];
    for bi in 0..batch {
        F::gemm(
            m,
            k,
            n,
            F::one(),
            wv.data(),
            k as isize,
            1,
            &xv.data()[bi * k * n..(bi + 1) * k * n],
            n as isize,
            1,
            F::zero(),
            &mut out[bi * m * n..(bi + 1) * m * n],
            n as isize,
            1,
        );
    }
    let y = Tensor::new(out_shape, out)?;
    Ok(w.tape.push_op(
        y,
        &[w, x],
        Box::new(move |g, needs| {
            let gd = g.data();
            let gw = needs[0].then(|| {
                let mut gw = vec![F::zero(); m * k];
                for bi in 0..batch {
                    // G[b] [m×n] · x[b]ᵀ [n×k]
                    F::gemm(
                        m,
                        n,
                        k,
                        F::one(),
                        &gd[bi * m * n..(bi + 1) * m * n],
                        n as isize,
                        1,
                        &xv.data()[bi * k * n..(bi + 1) * k * n],
                        1,
                        n as isize,
                        F::one(),
                        &mut gw,
                        k as isize,
                        1,
                    );
                }
                Tensor::new([m, k], gw).expect("shape")
            });
            let gx = needs[1].then(|| {
                let mut gx = vec![F::zero(); batch * k * n];
                for bi in 0..batch {
                    // wᵀ [k×m] · G[b] [m×n]
                    F::gemm(
                        k,
                        m,
                        n,
                        F::one(),
                        wv.data(),
                        1,
                        k as isize,
                        &gd[bi * m * n..(bi + 1) * m * n],
                        n as isize,
                        1,
                        F::zero(),
                        &mut gx[bi * k * n..(bi + 1) * k * n],
                        n as isize,
                        1,
                    );
                }
                Tensor::new(xv.shape().to_vec(), gx).expect("shape")
            });
            vec![gw, gx]
        }),
    ))
}

fn check_axis(axis: usize, rank: usize) -> Result<()> {
    if axis >= rank {
        Err(Error::InvalidAxis { axis, rank })
    } else {
        Ok(())
    }
}

/// Splits `shape` around `axis` into (outer, extent, inner).
fn split_at_axis(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    (
        numel(&shape[..axis]),
        shape[axis],
        numel(&shape[axis + 1..]),
    )
}

pub fn reshape<'t, F: Real>(x: Var<'t, F>, shape: &[usize]) -> Result<Var<'t, F>> {
    let xv = x.value();
    let old = xv.shape().to_vec();
    let y = (*xv).clone().reshape(shape.to_vec())?;
    Ok(x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| vec![Some(g.clone().reshape(old.clone()).expect("shape"))]),
    ))
}

fn permute_tensor<F: Real>(x: &Tensor<F>, axes: &[usize]) -> Tensor<F> {
    let shape = x.shape();
    let out_shape: Vec<usize> = axes.iter().map(|&a| shape[a]).collect();
    let in_strides = strides(shape);
    let src_strides: Vec<usize> = axes.iter().map(|&a| in_strides[a]).collect();
    let n = x.numel();
    let mut out = Vec::with_capacity(n);
    let rank = axes.len();
    if n > 0 {
        let mut idx = vec![0usize; rank];
        let mut off = 0usize;
        let data = x.data();
        loop {
            out.push(data[off]);
            let mut ax = rank;
            loop {
                if ax == 0 {
                    return Tensor::new(out_shape, out).expect("shape");
                }
                ax -= 1;
                idx[ax] += 1;
                off += src_strides[ax];
                if idx[ax] < out_shape[ax] {
                    break;
                }
                off -= src_strides[ax] * idx[ax];
                idx[ax] = 0;
            }
        }
    }
    Tensor::new(out_shape, out).expect("shape")
}

pub fn permute<'t, F: Real>(x: Var<'t, F>, axes: &[usize]) -> Result<Var<'t, F>> {
    let xv = x.value();
    let rank = xv.rank();
    let mut seen = vec![false; rank];
    if axes.len() != rank {
        return Err(invalid(format!("permutation {axes:?} for rank {rank}")));
    }
    for &a in axes {
        check_axis(a, rank)?;
        if std::mem::replace(&mut seen[a], true) {
            return Err(invalid(format!("repeated axis in permutation {axes:?}")));
        }
    }
    let mut inverse = vec![0; rank];
    for (i, &a) in axes.iter().enumerate() {
        inverse[a] = i;
    }
    let y = permute_tensor(&xv, axes);
    Ok(x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| vec![Some(permute_tensor(g, &inverse))]),
    ))
}

pub fn concat<'t, F: Real>(xs: &[Var<'t, F>], axis: usize) -> Result<Var<'t, F>> {
    let first = xs.first().ok_or_else(|| invalid("concat of zero tensors"))?;
    let values: Vec<Arc<Tensor<F>>> = xs.iter().map(|x| x.value()).collect();
    let base = values[0].shape().to_vec();
    check_axis(axis, base.len())?;
    for v in &values[1..] {
        let s = v.shape();
        let compatible = s.len() == base.len()
            && s.iter()
                .zip(&base)
                .enumerate()
                .all(|(i, (a, b))| i == axis || a == b);
        if !compatible {
            return Err(Error::ShapeMismatch {
                op: "concat",
                lhs: base.clone(),
                rhs: s.to_vec(),
            });
        }
    }
    let extents: Vec<usize> = values.iter().map(|v| v.shape()[axis]).collect();
    let total: usize = extents.iter().sum();
    let (outer, _, inner) = split_at_axis(&base, axis);
    let mut out_shape = base.clone();
    out_shape[axis] = total;
    let mut out = Vec::with_capacity(outer * total * inner);
    for o in 0..outer {
        for (v, &e) in values.iter().zip(&extents) {
            out.extend_from_slice(&v.data()[o * e * inner..(o + 1) * e * inner]);
        }
    }
    let y = Tensor::new(out_shape, out)?;
    let shapes: Vec<Vec<usize>> = values.iter().map(|v| v.shape().to_vec()).collect();
    Ok(first.tape.push_op(
        y,
        xs,
        Box::new(move |g, needs| {
            let gd = g.data();
            let mut offset = 0;
            let mut grads = Vec::with_capacity(shapes.len());
            for ((shape, &e), &need) in shapes.iter().zip(&extents).zip(needs) {
                if need {
                    let mut part = Vec::with_capacity(outer * e * inner);
                    for o in 0..outer {
                        let start = (o * total + offset) * inner;
                        part.extend_from_slice(&gd[start..start + e * inner]);
                    }
                    grads.push(Some(Tensor::new(shape.clone(), part).expect("shape")));
                } else {
                    grads.push(None);
                }
                offset += e;
            }
            grads
        }),
    ))
}

/// Slice `[start, start + len)` along `axis`.
pub fn narrow<'t, F: Real>(x: Var<'t, F>, axis: usize, start: usize, len: usize) -> Result<Var<'t, F>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    check_axis(axis, shape.len())?;
    if start + len > shape[axis] {
        return Err(invalid(format!(
            "narrow [{start}, {}) exceeds extent {} of axis {axis}",
            start + len,
            shape[axis]
        )));
    }
    let (outer, ext, inner) = split_at_axis(&shape, axis);
    let mut out_shape = shape.clone();
    out_shape[axis] = len;
    let mut out = Vec::with_capacity(outer * len * inner);
    for o in 0..outer {
        let s = (o * ext + start) * inner;
        out.extend_from_slice(&xv.data()[s..s + len * inner]);
    }
    let y = Tensor::new(out_shape, out)?;
    Ok(x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![F::zero(); outer * ext * inner];
            for o in 0..outer {
                let s = (o * ext + start) * inner;
                gx[s..s + len * inner].copy_from_slice(&g.data()[o * len * inner..(o + 1) * len * inner]);
            }
            vec![Some(Tensor::new(shape.clone(), gx).expect("shape"))]
        }),
    ))
}

fn flip_tensor<F: Real>(x: &Tensor<F>, axis: usize) -> Tensor<F> {
    let (outer, ext, inner) = split_at_axis(x.shape(), axis);
    let mut out = Vec::with_capacity(x.numel());
    for o in 0..outer {
        for e in (0..ext).rev() {
            let s = (o * ext + e) * inner;
            out.extend_from_slice(&x.data()[s..s + inner]);
        }
    }
    Tensor::new(x.shape().to_vec(), out).expect("shape")
}

/// Reverses the order of entries along `axis`.
pub fn flip<'t, F: Real>(x: Var<'t, F>, axis: usize) -> Result<Var<'t, F>> {
    let xv = x.value();
    check_axis(axis, xv.rank())?;
    let y = flip_tensor(&xv, axis);
    Ok(x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| vec![Some(flip_tensor(g, axis))]),
    ))
}

fn sum_axis<'t, F: Real>(x: Var<'t, F>, axis: usize, scale: F) -> Result<Var<'t, F>> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    check_axis(axis, shape.len())?;
    let (outer, ext, inner) = split_at_axis(&shape, axis);
    let mut out = vec![F::zero(); outer * inner];
    for o in 0..outer {
        for e in 0..ext {
            let src = &xv.data()[(o * ext + e) * inner..(o * ext + e + 1) * inner];
            for (acc, &v) in out[o * inner..(o + 1) * inner].iter_mut().zip(src) {
                *acc += v;
            }
        }
    }
    out.iter_mut().for_each(|v| *v *= scale);
    let mut out_shape = shape.clone();
    out_shape.remove(axis);
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let y = Tensor::new(out_shape, out)?;
    Ok(x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| {
            let mut gx = vec![F::zero(); outer * ext * inner];
            for o in 0..outer {
                let src = &g.data()[o * inner..(o + 1) * inner];
                for e in 0..ext {
                    for (dst, &v) in gx[(o * ext + e) * inner..(o * ext + e + 1) * inner]
                        .iter_mut()
                        .zip(src)
                    {
                        *dst = v * scale;
                    }
                }
            }
            vec![Some(Tensor::new(shape.clone(), gx).expect("shape"))]
        }),
    ))
}

fn sum_all<'t, F: Real>(x: Var<'t, F>, scale: F) -> Var<'t, F> {
    let xv = x.value();
    let shape = xv.shape().to_vec();
    let y = Tensor::scalar(xv.sum() * scale);
    x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| vec![Some(Tensor::full(shape.clone(), g.data()[0] * scale))]),
    )
}

fn trace<'t, F: Real>(x: Var<'t, F>) -> Result<Var<'t, F>> {
    let xv = x.value();
    let [m, n] = xv.dims2("trace")?;
    if m != n {
        return Err(invalid(format!("trace of a non-square {m}x{n} matrix")));
    }
    let y = Tensor::scalar((0..n).map(|i| xv.data()[i * n + i]).sum());
    Ok(x.tape.push_op(
        y,
        &[x],
        Box::new(move |g, _| {
            let mut gx = Tensor::zeros([n, n]);
            for i in 0..n {
                gx.data_mut()[i * n + i] = g.data()[0];
            }
            vec![Some(gx)]
        }),
    ))
}

/// Reductions over the given axes (all axes when `axes` is empty).
///
/// `Trace` requires a square rank-2 input and ignores `axes`.
pub fn reduce<'t, F: Real>(tag: Reduce, x: Var<'t, F>, axes: &[usize]) -> Result<Var<'t, F>> {
    if tag == Reduce::Trace {
        return trace(x);
    }
    let x = if tag == Reduce::AbsSum { x.abs() } else { x };
    let shape = x.shape();
    if axes.is_empty() {
        let scale = if tag == Reduce::Mean {
            F::one() / F::lit(shape.iter().product::<usize>().max(1) as f64)
        } else {
            F::one()
        };
        return Ok(sum_all(x, scale));
    }
    let mut sorted = axes.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    for &a in &sorted {
        check_axis(a, shape.len())?;
    }
    let mut out = x;
    for &a in sorted.iter().rev() {
        let scale = if tag == Reduce::Mean {
            F::one() / F::lit(shape[a].max(1) as f64)
        } else {
            F::one()
        };
        out = sum_axis(out, a, scale)?;
    }
    Ok(out)
}

impl<'t, F: Real> Var<'t, F> {
    pub fn add(self, rhs: Var<'t, F>) -> Result<Self> {
        elementwise(BinaryOp::Add, self, rhs)
    }

    pub fn sub(self, rhs: Var<'t, F>) -> Result<Self> {
        elementwise(BinaryOp::Sub, self, rhs)
    }

    pub fn mul(self, rhs: Var<'t, F>) -> Result<Self> {
        elementwise(BinaryOp::Mul, self, rhs)
    }

    pub fn div(self, rhs: Var<'t, F>) -> Result<Self> {
        elementwise(BinaryOp::Div, self, rhs)
    }

    pub fn pow(self, rhs: Var<'t, F>) -> Result<Self> {
        elementwise(BinaryOp::Pow, self, rhs)
    }

    pub fn add_scalar(self, c: F) -> Self {
        unary_op(self, move |x| x + c, |_, _| F::one())
    }

    pub fn mul_scalar(self, c: F) -> Self {
        unary_op(self, move |x| x * c, move |_, _| c)
    }

    /// `c - x`.
    pub fn rsub_scalar(self, c: F) -> Self {
        unary_op(self, move |x| c - x, |_, _| -F::one())
    }

    pub fn neg(self) -> Self {
        self.mul_scalar(-F::one())
    }

    pub fn powf(self, p: F) -> Self {
        unary_op(self, move |x| x.powf(p), move |x, _| p * x.powf(p - F::one()))
    }

    pub fn exp(self) -> Self {
        unary_op(self, |x| x.exp(), |_, y| y)
    }

    pub fn tanh(self) -> Self {
        unary_op(self, |x| x.tanh(), |_, y| F::one() - y * y)
    }

    /// `|x|` with subgradient 0 at the origin.
    pub fn abs(self) -> Self {
        unary_op(
            self,
            |x| x.abs(),
            |x, _| {
                if x > F::zero() {
                    F::one()
                } else if x < F::zero() {
                    -F::one()
                } else {
                    F::zero()
                }
            },
        )
    }

    pub fn sigmoid(self) -> Self {
        unary_op(self, sigmoid, |_, y| y * (F::one() - y))
    }

    pub fn silu(self) -> Result<Self> {
        activation(Activation::Silu, self)
    }

    pub fn softplus(self) -> Self {
        unary_op(self, softplus, |x, _| sigmoid(x))
    }

    pub fn softmax(self) -> Result<Self> {
        softmax_lastdim(self, false)
    }

    pub fn log_softmax(self) -> Result<Self> {
        softmax_lastdim(self, true)
    }

    pub fn matmul(self, rhs: Var<'t, F>) -> Result<Self> {
        matmul(self, rhs)
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        reshape(self, shape)
    }

    pub fn permute(self, axes: &[usize]) -> Result<Self> {
        permute(self, axes)
    }

    /// Transpose of a rank-2 variable.
    pub fn t(self) -> Result<Self> {
        permute(self, &[1, 0])
    }

    pub fn narrow(self, axis: usize, start: usize, len: usize) -> Result<Self> {
        narrow(self, axis, start, len)
    }

    pub fn flip(self, axis: usize) -> Result<Self> {
        flip(self, axis)
    }

    pub fn sum(self) -> Self {
        sum_all(self, F::one())
    }

    pub fn mean(self) -> Self {
        let n = self.value().numel().max(1);
        sum_all(self, F::one() / F::lit(n as f64))
    }

    pub fn sum_axis(self, axis: usize) -> Result<Self> {
        sum_axis(self, axis, F::one())
    }

    pub fn mean_axis(self, axis: usize) -> Result<Self> {
        let ext = self.value().shape().get(axis).copied().unwrap_or(1).max(1);
        sum_axis(self, axis, F::one() / F::lit(ext as f64))
    }

    pub fn trace(self) -> Result<Self> {
        trace(self)
    }
}
