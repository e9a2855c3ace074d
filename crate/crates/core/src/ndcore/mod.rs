//! Dense tensors, a tape-based reverse-mode autodiff, MLPs, and SGD.

mod autodiff;
mod gradcheck;
mod mlp;
mod optim;
mod tensor;

pub use autodiff::{Gradients, Tape, Var};
pub use gradcheck::{gradient_check, GradCheck};
pub use mlp::{Activation, Architecture, Mlp, MlpRecord, RECORD_VERSION};
pub use optim::{clip_grad_norm, Sgd, SgdConfig, UpdateRule};
pub use tensor::Tensor;
