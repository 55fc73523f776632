//! Tensors, parameters, reverse-mode differentiation and the network blocks
//! built on them.

pub mod blocks;
pub mod checkpoint;
pub mod gradcheck;
pub mod loss;
pub mod params;
pub mod tape;
pub mod tensor;

pub use blocks::{Activation, Dense, GraphAttention, GruCell, Mlp, MlpSpec, ResidualBlock, TypePairEncoder};
pub use gradcheck::{grad_check, GradReport};
pub use params::{Grads, ParamId, ParamStore};
pub use tape::{Tape, Var};
pub use tensor::Tensor2;
