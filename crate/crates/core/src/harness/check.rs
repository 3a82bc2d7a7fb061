//! End-to-end gradient check of the full objective.

use rand::SeedableRng;

use crate::autodiff::gradcheck::{grad_check, GradCheckReport};
use crate::error::Result;
use crate::model::{MedMamba, ModelConfig};
use crate::params::{normal, Bound, Rng};
use crate::tensor::Tensor;

/// `T=8, C=3, D=4, N=4, L=1, K=2` with both priors active.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        d_model: 4,
        n_layers: 1,
        d_state: 4,
        d_conv: 2,
        expand: 2,
        kernels: vec![3, 5],
        d_node: None,
        n_classes: 2,
        channels: 3,
        seq_len: 8,
        lambda_sp: 0.01,
        lambda_dag: 0.5,
        dropout: 0.0,
        seed: 7,
        ..ModelConfig::default()
    }
}

/// Compares the backward pass of the loss on one random sample with central
/// differences over every parameter, in `f64`.
pub fn model_grad_check(cfg: &ModelConfig, h: f64) -> Result<GradCheckReport> {
    let model = MedMamba::<f64>::init(cfg)?;
    let mut rng = Rng::seed_from_u64(cfg.seed ^ 0x5EED);
    let x: Tensor<f64> = normal(&mut rng, [cfg.seq_len, cfg.channels], 1.0);
    let label = 1 % cfg.n_classes;
    grad_check(
        |tape, vars| {
            let p = Bound::from_vars(vars.to_vec());
            let out = model.forward(&p, tape.constant(x.clone()), None)?;
            model.loss(&out, label)
        },
        &model.store.values(),
        h,
    )
}
