//! Feed-forward networks with manual reverse-mode gradients, Adam and soft
//! target updates.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{adam_step, AdamConfig, AdamState};
pub use gradcheck::{finite_diff_gradient, gradients_agree};
pub use mlp::{soft_update, Activation, ForwardCache, Gradients, Mlp, OutputActivation};
