//! Reverse-mode automatic differentiation over dense tensors.

pub mod expm;
pub mod fft;
pub mod gradcheck;
pub mod nn;
pub mod ops;
pub mod tape;

pub use expm::{matrix_exp, matrix_exp_tensor, MATRIX_EXP_CAP};
pub use fft::{complex_mul, irfft, irfft_tensor, rfft, rfft_bins, rfft_tensor, ComplexPair, ComplexVar};
pub use gradcheck::{grad_check, GradCheckReport};
pub use nn::{conv1d_depthwise, layernorm, ConvMode, LAYERNORM_EPS};
pub use ops::{
    activation, concat, elementwise, flip, left_matmul, matmul, narrow, permute, reduce, reshape,
    sigmoid, softplus, Activation, BinaryOp, Reduce,
};
pub use tape::{Gradients, Tape, Var};
