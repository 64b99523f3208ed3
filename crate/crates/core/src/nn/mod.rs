//! Dense networks, reverse-mode gradients and Adam.

mod adam;
mod gradcheck;
mod mlp;

pub use adam::{AdamConfig, AdamState};
pub use gradcheck::{grad_check, grad_check_with_step, relative_error, GradCheck, FD_STEP};
pub use mlp::{Activation, ForwardCache, Gradients, Mlp};
pub(crate) use mlp::ByteReader;
