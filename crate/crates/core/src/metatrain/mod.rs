//! Meta-model training: conditional flow matching, multi-marginal flow
//! matching, and JKO-style potentials over weight trajectories.

mod context;
mod embed;
mod losses;
mod models;
mod train;
mod zoo;

pub use context::{context_features, ContextEncoder};
pub use embed::TimeEmbedding;
pub use losses::{cfm_loss, jko_residual, jkonet_loss, mmfm_loss, FmDraws, LossGrads, PathKind};
pub use models::{ModelHeader, PotentialModel, VelocityModel};
pub use train::{train_meta, MetaConfig, MetaKind, MetaModel, TrainedMeta};
pub use zoo::{ot_pair_source, quadratic_flow_runs, Coupling, KnotSelection, SourceDist, SourceKind, WeightZoo};
