//! `ptnn` is a small, dependency-light neural-network kernel.
//!
//! Everything is `f64` and row-major. Networks are built as [`Sequential`]
//! stacks of [`LayerSpec`]s whose weights live in a named [`ParameterSet`].
//! Forward passes are pure; [`Sequential::forward_trace`] keeps the
//! intermediate activations so that [`Sequential::backward_trace`] can compute
//! exact reverse-mode gradients. Larger models (multi-head, attention) chain
//! several sequentials by hand using the same trace/backward pair.

mod checkpoint;
mod error;
mod layers;
mod loss;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{load_into, read_checkpoint, write_checkpoint, CHECKPOINT_MAGIC, CHECKPOINT_VERSION};
pub use error::{NnError, Result};
pub use layers::{backward, forward, LayerSpec, Sequential, Trace};
pub use loss::{
    argmax, batch_loss, clamp_events, cross_entropy_grad, loss, softmax, softmax_backward, LossConfig,
    LOG_EPSILON,
};
pub use optim::{optimizer_step, Sgd};
pub use params::{param_count, Gradients, Param, ParamRole, ParameterSet};
pub use tensor::Tensor;
