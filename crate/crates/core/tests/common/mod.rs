//! Gradient-check cases for every differentiable primitive.

#![allow(dead_code)]

use medmamba::autodiff::gradcheck::{grad_check, DEFAULT_STEP};
use medmamba::autodiff::{complex_mul, concat, conv1d_depthwise, irfft, matrix_exp, rfft, ComplexVar, ConvMode};
use medmamba::autodiff::nn::dropout;
use medmamba::params::Rng;
use medmamba::sgm::{dag_loss, normalize_adjacency, pool_nodes, sparsity_loss};
use medmamba::ssm::{selective_scan_with, ScanKernel};
use medmamba::{Result, Tape, Tensor, Var};
use rand::{Rng as _, SeedableRng};

type Objective = Box<dyn for<'t> Fn(&'t Tape<f64>, &[Var<'t, f64>]) -> Result<Var<'t, f64>> + Sync>;

#[derive(Clone, Copy)]
pub enum Domain {
    Uniform(f64, f64),
    /// `|x| ∈ [lo, hi]` with a random sign.
    AwayFromZero(f64, f64),
}

pub struct Case {
    pub name: &'static str,
    pub inputs: Vec<(Vec<usize>, Domain)>,
    pub f: Objective,
}

/// `Σ y ⊙ W` with fixed non-trivial weights.
pub fn wsum<'t>(y: Var<'t, f64>) -> Result<Var<'t, f64>> {
    let w = Tensor::from_fn(y.shape(), |i| (1.3 * i as f64 + 0.7).sin());
    Ok(y.mul(y.tape().constant(w))?.sum())
}

fn case(name: &'static str, inputs: &[(&[usize], Domain)], f: Objective) -> Case {
    Case {
        name,
        inputs: inputs.iter().map(|(s, d)| (s.to_vec(), *d)).collect(),
        f,
    }
}

const U: Domain = Domain::Uniform(-1.0, 1.0);
const POS: Domain = Domain::Uniform(0.5, 2.0);
const NZ: Domain = Domain::AwayFromZero(0.2, 1.5);
const UNIT: Domain = Domain::Uniform(0.05, 0.95);

pub fn cases() -> Vec<Case> {
    vec![
        case("add", &[(&[2, 3], U), (&[2, 3], U)], Box::new(|_, p| wsum(p[0].add(p[1])?))),
        case("add_broadcast", &[(&[2, 3], U), (&[3], U)], Box::new(|_, p| wsum(p[0].add(p[1])?))),
        case("sub_general_broadcast", &[(&[4, 3], U), (&[4, 1], U)], Box::new(|_, p| wsum(p[0].sub(p[1])?))),
        case("mul", &[(&[3, 2], U), (&[3, 2], U)], Box::new(|_, p| wsum(p[0].mul(p[1])?))),
        case("mul_scalar_operand", &[(&[5], U), (&[1], U)], Box::new(|_, p| wsum(p[0].mul(p[1])?))),
        case("div", &[(&[4], U), (&[4], NZ)], Box::new(|_, p| wsum(p[0].div(p[1])?))),
        case("pow", &[(&[4], POS), (&[4], U)], Box::new(|_, p| wsum(p[0].pow(p[1])?))),
        case("add_scalar", &[(&[4], U)], Box::new(|_, p| wsum(p[0].add_scalar(0.3)))),
        case("mul_scalar", &[(&[4], U)], Box::new(|_, p| wsum(p[0].mul_scalar(-1.7)))),
        case("rsub_scalar", &[(&[4], U)], Box::new(|_, p| wsum(p[0].rsub_scalar(2.0)))),
        case("neg", &[(&[4], U)], Box::new(|_, p| wsum(p[0].neg()))),
        case("powf", &[(&[4], POS)], Box::new(|_, p| wsum(p[0].powf(2.5)))),
        case("exp", &[(&[4], U)], Box::new(|_, p| wsum(p[0].exp()))),
        case("tanh", &[(&[4], U)], Box::new(|_, p| wsum(p[0].tanh()))),
        case("abs", &[(&[5], NZ)], Box::new(|_, p| wsum(p[0].abs()))),
        case("sigmoid", &[(&[5], Domain::Uniform(-3.0, 3.0))], Box::new(|_, p| wsum(p[0].sigmoid()))),
        case("silu", &[(&[5], Domain::Uniform(-3.0, 3.0))], Box::new(|_, p| wsum(p[0].silu()?))),
        case("softplus", &[(&[5], Domain::Uniform(-3.0, 3.0))], Box::new(|_, p| wsum(p[0].softplus()))),
        case("softmax", &[(&[3, 4], U)], Box::new(|_, p| wsum(p[0].softmax()?))),
        case("log_softmax", &[(&[3, 4], U)], Box::new(|_, p| wsum(p[0].log_softmax()?))),
        case("matmul", &[(&[3, 4], U), (&[4, 2], U)], Box::new(|_, p| wsum(p[0].matmul(p[1])?))),
        case("matmul_batched", &[(&[2, 3, 4], U), (&[4, 5], U)], Box::new(|_, p| wsum(p[0].matmul(p[1])?))),
        case(
            "left_matmul",
            &[(&[3, 4], U), (&[2, 4, 2], U)],
            Box::new(|_, p| wsum(medmamba::autodiff::left_matmul(p[0], p[1])?)),
        ),
        case("reshape", &[(&[2, 6], U)], Box::new(|_, p| wsum(p[0].reshape(&[3, 4])?.exp()))),
        case("permute", &[(&[2, 3, 4], U)], Box::new(|_, p| wsum(p[0].permute(&[2, 0, 1])?.exp()))),
        case("transpose", &[(&[3, 4], U)], Box::new(|_, p| wsum(p[0].t()?.exp()))),
        case("narrow", &[(&[5, 3], U)], Box::new(|_, p| wsum(p[0].narrow(0, 1, 3)?.exp()))),
        case("flip", &[(&[4, 3], U)], Box::new(|_, p| wsum(p[0].flip(0)?.exp()))),
        case("sum", &[(&[3, 2], U)], Box::new(|_, p| Ok(p[0].exp().sum()))),
        case("mean", &[(&[3, 2], U)], Box::new(|_, p| Ok(p[0].exp().mean()))),
        case("sum_axis", &[(&[3, 4], U)], Box::new(|_, p| wsum(p[0].exp().sum_axis(1)?))),
        case("mean_axis", &[(&[3, 4], U)], Box::new(|_, p| wsum(p[0].exp().mean_axis(0)?))),
        case("trace", &[(&[4, 4], U)], Box::new(|_, p| p[0].exp().trace())),
        case("concat", &[(&[2, 3], U), (&[2, 2], U)], Box::new(|_, p| wsum(concat(&[p[0], p[1]], 1)?.exp()))),
        case(
            "layernorm",
            &[(&[3, 5], U), (&[5], U), (&[5], U)],
            Box::new(|_, p| wsum(p[0].layernorm(p[1], p[2])?)),
        ),
        case(
            "conv1d_same",
            &[(&[9, 3], U), (&[3, 5], U)],
            Box::new(|_, p| wsum(conv1d_depthwise(p[0], p[1], ConvMode::Same)?)),
        ),
        case(
            "conv1d_causal",
            &[(&[7, 2, 3], U), (&[3, 4], U)],
            Box::new(|_, p| wsum(conv1d_depthwise(p[0], p[1], ConvMode::Causal)?)),
        ),
        case(
            "dropout",
            &[(&[6, 4], U)],
            Box::new(|_, p| wsum(dropout(p[0], 0.3, &mut Rng::seed_from_u64(3))?)),
        ),
        case(
            "rfft_even",
            &[(&[8, 3], U)],
            Box::new(|_, p| {
                let z = rfft(p[0])?;
                wsum(z.re)?.add(wsum(z.im.mul_scalar(0.7))?)
            }),
        ),
        case(
            "rfft_odd",
            &[(&[7, 2], U)],
            Box::new(|_, p| {
                let z = rfft(p[0])?;
                wsum(z.re.mul_scalar(-0.4))?.add(wsum(z.im)?)
            }),
        ),
        case(
            "irfft",
            &[(&[5, 2], U), (&[5, 2], U)],
            Box::new(|_, p| wsum(irfft(ComplexVar { re: p[0], im: p[1] }, 8)?)),
        ),
        case(
            "complex_mul",
            &[(&[4, 2], U), (&[4, 2], U), (&[4, 1], U), (&[4, 1], U)],
            Box::new(|_, p| {
                let z = complex_mul(ComplexVar { re: p[0], im: p[1] }, ComplexVar { re: p[2], im: p[3] })?;
                wsum(z.re)?.add(wsum(z.im)?)
            }),
        ),
        case("matrix_exp", &[(&[4, 4], U)], Box::new(|_, p| wsum(matrix_exp(p[0])?))),
        case("dag_loss", &[(&[4, 4], UNIT)], Box::new(|_, p| dag_loss(p[0]))),
        case("sparsity_loss", &[(&[3, 3], NZ)], Box::new(|_, p| sparsity_loss(p[0]))),
        case(
            "normalize_adjacency",
            &[(&[4, 4], UNIT)],
            Box::new(|_, p| wsum(normalize_adjacency(p[0], 1e-6)?)),
        ),
        case("pool_nodes", &[(&[5, 3, 2], U)], Box::new(|_, p| wsum(pool_nodes(p[0])?.exp()))),
        case(
            "selective_scan",
            &[(&[2, 5, 3], U), (&[2, 5], Domain::Uniform(0.05, 1.0)), (&[4], U), (&[4, 3], U), (&[3, 4], U), (&[3], U)],
            Box::new(|_, p| wsum(selective_scan_with(ScanKernel::Sequential, p[0], p[1], p[2], p[3], p[4], p[5])?)),
        ),
        case(
            "parallel_scan",
            &[(&[2, 5, 3], U), (&[2, 5], Domain::Uniform(0.05, 1.0)), (&[4], U), (&[4, 3], U), (&[3, 4], U), (&[3], U)],
            Box::new(|_, p| wsum(selective_scan_with(ScanKernel::Parallel, p[0], p[1], p[2], p[3], p[4], p[5])?)),
        ),
    ]
}

pub fn draw(rng: &mut Rng, shape: &[usize], domain: Domain) -> Tensor<f64> {
    Tensor::from_fn(shape.to_vec(), |_| match domain {
        Domain::Uniform(lo, hi) => rng.random_range(lo..hi),
        Domain::AwayFromZero(lo, hi) => {
            let v = rng.random_range(lo..hi);
            if rng.random_bool(0.5) {
                v
            } else {
                -v
            }
        }
    })
}

/// Worst relative error of `case` over `points` random inputs.
pub fn check_case(case: &Case, points: usize, seed: u64) -> f64 {
    let mut rng = Rng::seed_from_u64(seed);
    (0..points)
        .map(|_| {
            let params: Vec<Tensor<f64>> = case.inputs.iter().map(|(s, d)| draw(&mut rng, s, *d)).collect();
            grad_check(&case.f, &params, DEFAULT_STEP)
                .unwrap_or_else(|e| panic!("{}: {e}", case.name))
                .max_rel_error
        })
        .fold(0.0, f64::max)
}
