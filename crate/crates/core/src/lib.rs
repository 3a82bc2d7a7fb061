//! Differentiable building blocks and experiment harness for MedMamba, a
//! multichannel time-series classifier combining multi-scale convolutional
//! embeddings, a tri-branch selective state-space encoder and an adaptive
//! directed channel graph.

pub mod autodiff;
pub mod data;
pub mod error;
pub mod fmt;
pub mod harness;
pub mod mce;
pub mod model;
pub mod params;
pub mod sgm;
pub mod ssm;
pub mod tdsse;
pub mod tensor;

pub use autodiff::{Tape, Var};
pub use data::{Dataset, Sample};
pub use error::{Error, Result};
pub use harness::{ExperimentConfig, MetricsReport, TrainConfig};
pub use model::{MedMamba, ModelConfig, Variant};
pub use params::{ParamId, ParamStore};
pub use tensor::{Real, Tensor};
