//! Reward fine-tuning of a flow meta-model by deterministic adjoint matching,
//! with the score/velocity algebra of the underlying noise schedules.

mod adjoint;
mod finetune;
mod schedule;

pub use adjoint::{lean_adjoint_backward, lean_adjoint_with, AdjointState};
pub use finetune::{
    adjoint_matching_step, finetune, grad_timesteps, AmStep, FtConfig, FtLogRow, FtResult, NegCeReward, Reward,
    RewardKind, RewardSpec,
};
pub use schedule::{
    memoryless_eps, mm_eta, mm_score_from_velocity, mm_velocity_from_score, score_from_velocity, velocity_from_score,
};
