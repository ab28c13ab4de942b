//! Generative flow models over neural-network weight space.
//!
//! The crate learns to sample classifier weights by matching the trajectories
//! that gradient descent traces through parameter space. Three meta-models are
//! supported: conditional flow matching ([`metatrain::MetaKind::Cfm`]),
//! multi-marginal flow matching over piecewise-linear paths
//! ([`metatrain::MetaKind::Mmfm`]) and a JKO-style potential whose gradient
//! reproduces the descent increments ([`metatrain::MetaKind::Jko`]).
//!
//! A trained velocity field can be reward fine-tuned with deterministic
//! adjoint matching ([`adjointft`]), and the fine-tuned generator doubles as a
//! covariate-shift detector ([`shiftdetect`]).
//!
//! Everything runs in `f64` on small dense MLPs with hand-derived gradients
//! ([`ndcore`]); there is no autodiff tape.

pub mod adjointft;
pub mod basezoo;
pub mod error;
pub mod flowgen;
pub mod metatrain;
pub mod ndcore;
pub mod otmetrics;
pub mod pathlib;
pub mod rng;
pub mod shiftdetect;
pub mod weightcodec;

pub use error::{Error, Result};
pub use ndcore::{Activation, MlpSpec, Tensor};
pub use weightcodec::WeightVec;
