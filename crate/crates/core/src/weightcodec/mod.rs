//! Weight vectorization, the VAE weight encoder, and weight-space augmentation.

mod augment;
mod vae;
mod weightvec;

pub use augment::{augment, AugmentConfig, AugmentKind};
pub use vae::{kl_standard_normal, train_vae, vae_loss, VaeConfig, VaeLoss, VaeModel, VaeTrainConfig};
pub use weightvec::{chunk, flatten_pad, LayerParams, WeightVec};
