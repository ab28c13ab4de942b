//! Conditional probability paths and their target vector fields.

mod gauss;
mod pwl;
mod spline;

pub use gauss::{gaussian_target_field, GaussPathParams, Schedule};
pub use pwl::{pwl_mean, pwl_velocity, segment_index, MarginalBatch};
pub use spline::{cubic_spline_fit, SplineCoeffs};
