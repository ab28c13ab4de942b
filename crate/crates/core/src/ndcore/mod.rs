//! Dense numerical substrate: tensors, MLPs with hand-derived gradients,
//! optimizers and initializers.

mod gradpen;
mod init;
mod loss;
mod mlp;
mod optim;
mod tensor;
pub mod vecops;

pub use gradpen::{input_grad_matching, InputGradMatch};
pub use init::{kaiming_init, InitMode};
pub use loss::{softmax, softmax_cross_entropy, Reduction};
pub use mlp::{
    jacobian_vector_transpose, mlp_backward, mlp_forward, mlp_predict, Activation, LayerSlot, MlpCache, MlpGrads,
    MlpSpec,
};
pub use optim::{clip_grad_norm, cosine_lr, OptimConfig, OptimKind, OptimState};
pub use tensor::Tensor;
