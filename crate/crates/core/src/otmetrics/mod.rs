//! Verification instruments: exact small-sample 2-Wasserstein distance,
//! the empirical action gap, and a central-difference gradient checker.

mod action_gap;
mod assignment;
mod gradcheck;
mod wasserstein;

pub use action_gap::{
    action_gap_from_curves, action_gap_from_field, mismatch_profile_from_field, w2_bound_rhs, GapProfile,
};
pub use assignment::{assignment_cost, linear_assignment};
pub use gradcheck::{grad_check, GradCheckReport};
pub use wasserstein::{w2_exact, w2_sq_exact, PointCloud};
