//! Covariate-shift detection by constrained-disagreement fine-tuning of a
//! weight-generating model, with the accompanying two-sample tests.

mod detectron;
mod losses;
mod stats;

pub use detectron::{
    detectron_run, meta_detectron, shift_study, summarize, CdcConfig, DetectronSetup, RunStats, SeedRecord, ShiftReport,
};
pub use losses::{cdc_loss, dce_loss, disagreement_rate, entropy_stat, entropy_stats, CdcReward};
pub use stats::{aggregate, auroc, disagreement_test, ks_two_sample, leave_one_out_rate, quantile};
