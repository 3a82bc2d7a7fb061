//! Spatial graph module: a per-sample directed channel graph with sparsity
//! and acyclicity priors, graph diffusion, a channel-axis SSM, and a gated
//! fusion of the two pathways.
//!
//! Adjacency entry `A[i, j]` is the weight of the edge from source channel
//! `j` to target channel `i`.

use std::sync::Arc;

use crate::autodiff::expm::matrix_exp_tensor;
use crate::autodiff::ops::{left_matmul, Reduce};
use crate::autodiff::tape::Var;
use crate::error::{invalid, Error, Result};
use crate::params::{uniform, Bound, Linear, ParamId, ParamStore, Rng};
use crate::ssm::{BiSsm, SsmConfig};
use crate::tensor::{Real, Tensor};

/// Degree stabilizer of the random-walk normalization.
pub const ADJ_EPS: f64 = 1e-8;

/// Weight of every off-diagonal edge in the fixed graph.
pub const FIXED_EDGE_WEIGHT: f64 = 0.5;

/// How the adjacency is obtained.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum GraphMode {
    /// Learned from the pooled node features of each sample.
    Learned,
    /// Constant uniform off-diagonal graph.
    Fixed,
    /// No graph: only the channel SSM on the raw tokens remains.
    Disabled,
}

/// `tr(exp(A⊙A)) − C` and its gradient `2A ⊙ exp(A⊙A)ᵀ`.
pub fn dag_loss_tensor<F: Real>(a: &Tensor<F>) -> Result<(F, Tensor<F>)> {
    let [r, c] = a.dims2("dag_loss")?;
    if r != c {
        return Err(Error::InvalidShape {
            shape: a.shape().to_vec(),
            reason: "dag_loss expects a square matrix".into(),
        });
    }
    let e = matrix_exp_tensor(&a.map(|v| v * v))?;
    let trace = (0..r).map(|i| e.data()[i * r + i]).sum::<F>();
    let et = e.t()?;
    let two = F::lit(2.0);
    let grad = Tensor::from_fn([r, r], |i| two * a.data()[i] * et.data()[i]);
    Ok((trace - F::lit(r as f64), grad))
}

/// Differentiable acyclicity penalty.
pub fn dag_loss<'t, F: Real>(a: Var<'t, F>) -> Result<Var<'t, F>> {
    let (value, grad) = dag_loss_tensor(&a.value())?;
    let grad = Arc::new(grad);
    Ok(a.tape().push_op(
        Tensor::scalar(value),
        &[a],
        Box::new(move |g, _| {
            let s = g.data()[0];
            vec![Some(grad.map(|v| v * s))]
        }),
    ))
}

/// `L_SP = Σ |A_ij|`.
pub fn sparsity_loss<'t, F: Real>(a: Var<'t, F>) -> Result<Var<'t, F>> {
    crate::autodiff::ops::reduce(Reduce::AbsSum, a, &[])
}

/// `Ã_ij = A_ij / (Σ_j A_ij + ε)`.
pub fn normalize_adjacency<'t, F: Real>(a: Var<'t, F>, eps: f64) -> Result<Var<'t, F>> {
    let c = a.shape()[0];
    let degree = a.sum_axis(1)?.reshape(&[c, 1])?.add_scalar(F::lit(eps));
    a.div(degree)
}

/// `1 − I`.
fn off_diagonal<F: Real>(c: usize) -> Tensor<F> {
    Tensor::from_fn([c, c], |i| if i / c == i % c { F::zero() } else { F::one() })
}

/// Mean over time: `[T, C, D] -> [C, D]`.
pub fn pool_nodes<'t, F: Real>(z: Var<'t, F>) -> Result<Var<'t, F>> {
    z.mean_axis(0)
}

#[derive(Clone, Copy, Debug)]
pub struct GraphParams {
    /// Node projections `φ₁, φ₂`; only a learned graph has them.
    pub phi: Option<(Linear, Linear)>,
    pub w0: ParamId,
    pub w1: ParamId,
    pub gate_graph: Linear,
    pub gate_ssm: Linear,
}

#[derive(Clone, Debug)]
pub struct Sgm {
    pub mode: GraphMode,
    pub channels: usize,
    pub eps: f64,
    /// Present unless the graph is disabled.
    pub graph: Option<GraphParams>,
    /// Frozen adjacency of [`GraphMode::Fixed`].
    pub fixed_adjacency: Option<ParamId>,
    pub spatial: BiSsm,
    pub out: Linear,
}

/// Module output plus the per-sample graph and its priors.
pub struct SgmOutput<'t, F: Real> {
    pub z: Var<'t, F>,
    /// Pre-normalized adjacency `[C, C]`; absent when the graph is disabled.
    pub adjacency: Option<Var<'t, F>>,
    /// Structure priors; present only for a learned graph.
    pub l_sp: Option<Var<'t, F>>,
    pub l_dag: Option<Var<'t, F>>,
}

impl Sgm {
    #[allow(clippy::too_many_arguments)]
    pub fn init<F: Real>(
        store: &mut ParamStore<F>,
        rng: &mut Rng,
        name: &str,
        mode: GraphMode,
        channels: usize,
        d_node: usize,
        ssm: SsmConfig,
    ) -> Result<Self> {
        if mode != GraphMode::Disabled && channels < 2 {
            return Err(invalid("a channel graph needs at least 2 channels"));
        }
        if d_node == 0 {
            return Err(invalid("node embedding width must be positive"));
        }
        let d = ssm.d_model;
        let inv_d = 1.0 / (d as f64).sqrt();
        let graph = (mode != GraphMode::Disabled).then(|| {
            let phi = (mode == GraphMode::Learned).then(|| {
                (
                    Linear::new(store, rng, &format!("{name}.phi1"), d, d_node, true),
                    Linear::new(store, rng, &format!("{name}.phi2"), d, d_node, true),
                )
            });
            GraphParams {
                phi,
                w0: store.add(format!("{name}.w0"), uniform(rng, [d, d], inv_d)),
                w1: store.add(format!("{name}.w1"), uniform(rng, [d, d], inv_d)),
                gate_graph: Linear::new(store, rng, &format!("{name}.gate_graph"), d, d, true),
                gate_ssm: Linear::new(store, rng, &format!("{name}.gate_ssm"), d, d, true),
            }
        });
        let fixed_adjacency = (mode == GraphMode::Fixed).then(|| {
            store.add_frozen(
                format!("{name}.fixed_adjacency"),
                off_diagonal::<F>(channels).map(|v| v * F::lit(FIXED_EDGE_WEIGHT)),
            )
        });
        let spatial = BiSsm::init(store, rng, &format!("{name}.spatial"), ssm)?;
        let out = Linear::new(store, rng, &format!("{name}.out"), d, d, true);
        Ok(Self {
            mode,
            channels,
            eps: ADJ_EPS,
            graph,
            fixed_adjacency,
            spatial,
            out,
        })
    }

    /// `A = σ(tanh(φ₁(U)) tanh(φ₂(U))ᵀ) ⊙ (1 − I)` from pooled nodes `U: [C, D]`.
    pub fn learn_adjacency<'t, F: Real>(&self, p: &Bound<'t, F>, u: Var<'t, F>) -> Result<Var<'t, F>> {
        let (phi1, phi2) = self
            .graph
            .as_ref()
            .and_then(|g| g.phi)
            .ok_or_else(|| invalid("adjacency is not learned in this configuration"))?;
        let c = u.shape()[0];
        if c < 2 {
            return Err(invalid("a channel graph needs at least 2 channels"));
        }
        let v1 = phi1.forward(p, u)?.tanh();
        let v2 = phi2.forward(p, u)?.tanh();
        let mask = u.tape().constant(off_diagonal(c));
        v1.matmul(v2.t()?)?.sigmoid().mul(mask)
    }

    /// `z W₀ + (Ã z) W₁` applied at every time step.
    pub fn graph_diffusion<'t, F: Real>(&self, p: &Bound<'t, F>, z: Var<'t, F>, a_norm: Var<'t, F>) -> Result<Var<'t, F>> {
        let g = self.graph.as_ref().ok_or_else(|| invalid("graph is disabled"))?;
        let local = z.matmul(p.get(g.w0))?;
        let neigh = left_matmul(a_norm, z)?.matmul(p.get(g.w1))?;
        local.add(neigh)
    }

    /// Bidirectional SSM across channels (time steps are independent lanes).
    pub fn channel_ssm<'t, F: Real>(&self, p: &Bound<'t, F>, x: Var<'t, F>) -> Result<Var<'t, F>> {
        self.spatial.forward(p, x)
    }

    /// `Linear(λ⊙h_g + (1−λ)⊙h_s) + z` with `λ = σ(Lin(h_g) + Lin(h_s))`.
    pub fn spatial_fuse<'t, F: Real>(
        &self,
        p: &Bound<'t, F>,
        h_graph: Var<'t, F>,
        h_ssm: Var<'t, F>,
        z: Var<'t, F>,
    ) -> Result<Var<'t, F>> {
        let g = self.graph.as_ref().ok_or_else(|| invalid("graph is disabled"))?;
        let lambda = g.gate_graph.forward(p, h_graph)?.add(g.gate_ssm.forward(p, h_ssm)?)?.sigmoid();
        let mixed = h_ssm.add(lambda.mul(h_graph.sub(h_ssm)?)?)?;
        self.out.forward(p, mixed)?.add(z)
    }

    /// `[T, C, D] -> [T, C, D]`.
    pub fn forward<'t, F: Real>(&self, p: &Bound<'t, F>, z: Var<'t, F>) -> Result<SgmOutput<'t, F>> {
        let shape = z.shape();
        if shape.len() != 3 || shape[1] != self.channels {
            return Err(invalid(format!("SGM input must be [T, {}, D], got {shape:?}", self.channels)));
        }
        let (adjacency, l_sp, l_dag) = match self.mode {
            GraphMode::Disabled => {
                let h = self.channel_ssm(p, z)?;
                return Ok(SgmOutput {
                    z: self.out.forward(p, h)?.add(z)?,
                    adjacency: None,
                    l_sp: None,
                    l_dag: None,
                });
            }
            GraphMode::Fixed => {
                let id = self.fixed_adjacency.expect("fixed graph stores its adjacency");
                (p.get(id), None, None)
            }
            GraphMode::Learned => {
                let a = self.learn_adjacency(p, pool_nodes(z)?)?;
                (a, Some(sparsity_loss(a)?), Some(dag_loss(a)?))
            }
        };
        let a_norm = normalize_adjacency(adjacency, self.eps)?;
        let h_graph = self.graph_diffusion(p, z, a_norm)?;
        let h_ssm = self.channel_ssm(p, left_matmul(a_norm, z)?)?;
        Ok(SgmOutput {
            z: self.spatial_fuse(p, h_graph, h_ssm, z)?,
            adjacency: Some(adjacency),
            l_sp,
            l_dag,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Tape;

    #[test]
    fn dag_loss_examples() {
        let (v, _) = dag_loss_tensor(&Tensor::<f64>::zeros([3, 3])).unwrap();
        assert_eq!(v, 0.0);
        let cyc = Tensor::<f64>::from_f64([2, 2], &[0.0, 1.0, 1.0, 0.0]).unwrap();
        let (v, _) = dag_loss_tensor(&cyc).unwrap();
        assert!((v - (2.0 * 1f64.cosh() - 2.0)).abs() < 1e-12);
        let upper = Tensor::<f64>::from_f64([3, 3], &[0.0, 0.7, 0.3, 0.0, 0.0, 0.9, 0.0, 0.0, 0.0]).unwrap();
        assert!(dag_loss_tensor(&upper).unwrap().0.abs() < 1e-12);
    }

    #[test]
    fn normalization_rows() {
        let tape = Tape::new();
        let a = tape.constant(Tensor::<f64>::from_f64([3, 3], &[0.0, 2.0, 2.0, 0.0, 0.0, 0.0, 1.0, 3.0, 0.0]).unwrap());
        let n = normalize_adjacency(a, ADJ_EPS).unwrap().value();
        assert!((n.get(&[0, 1]) - 0.5).abs() < 1e-8);
        assert_eq!(&n.data()[3..6], &[0.0, 0.0, 0.0]);
        assert!((n.get(&[2, 1]) - 0.75).abs() < 1e-8);
    }
}
