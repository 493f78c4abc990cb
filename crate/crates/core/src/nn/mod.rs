//! Differentiable building blocks with hand-written reverse-mode gradients.

mod config;
pub mod gradcheck;
mod graph;
pub mod layers;
mod params;
mod tensor;

pub use config::ModelConfig;
pub use gradcheck::{
    check_graph_gradients, finite_difference_gradient, max_relative_error, GradCheckReport,
};
pub use graph::{kl_divergence, Gradients, Graph, Var, LAYER_NORM_EPS};
pub(crate) use graph::velocity_penalty;
pub use layers::{
    batched_positional_encoding, positional_encoding, reparameterize, reparameterize_vars,
    reparameterize_with_noise, standard_normal, ConvSmooth, LatentVars, LayerNorm, Linear, Lstm,
    LstmState, MultiHeadAttention, VaeLatent,
};
pub use params::{Param, ParamId, ParamStore};
pub use tensor::Mat;
