//! Minimal reverse-mode automatic differentiation and the network pieces
//! built on it.

mod graph;
pub mod gradcheck;
pub mod losses;
mod matrix;
mod nn;
mod optim;
mod param;
pub mod stochastic;

pub use graph::{Graph, NodeId};
pub use matrix::Matrix;
pub use nn::{Activation, LayerNorm, Linear, Mlp, MlpNodes, MlpSpec, LAYER_NORM_EPS};
pub use optim::{adam_step, clip_gradient_norm, soft_update, Adam, AdamState, ADAM_BETA1, ADAM_BETA2, ADAM_EPS};
pub use param::{Gradients, Param};
