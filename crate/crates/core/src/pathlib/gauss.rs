use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Interpolation schedule `(α_t, β_t)` with `α₀ = β₁ = 0` and `α₁ = β₀ = 1`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    /// `α_t = t`, `β_t = 1 − t`.
    #[default]
    Linear,
    /// `α_t = sin(πt/2)`, `β_t = cos(πt/2)`.
    Trig,
}

/// Affine Gaussian path `x_t = β_t x₀ + α_t x₁ + σ ξ` with constant `σ`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GaussPathParams {
    pub schedule: Schedule,
    pub sigma: f64,
}

impl Default for GaussPathParams {
    fn default() -> Self {
        Self { schedule: Schedule::Linear, sigma: 1e-3 }
    }
}

impl GaussPathParams {
    pub fn alpha(&self, t: f64) -> f64 {
        match self.schedule {
            Schedule::Linear => t,
            Schedule::Trig => (std::f64::consts::FRAC_PI_2 * t).sin(),
        }
    }

    pub fn beta(&self, t: f64) -> f64 {
        match self.schedule {
            Schedule::Linear => 1.0 - t,
            Schedule::Trig => (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }

    pub fn alpha_dot(&self, t: f64) -> f64 {
        match self.schedule {
            Schedule::Linear => 1.0,
            Schedule::Trig => std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).cos(),
        }
    }

    pub fn beta_dot(&self, t: f64) -> f64 {
        match self.schedule {
            Schedule::Linear => -1.0,
            Schedule::Trig => -std::f64::consts::FRAC_PI_2 * (std::f64::consts::FRAC_PI_2 * t).sin(),
        }
    }
}

/// Vector field `u = (σ̇/σ)(x − μ) + μ̇` generating the path `N(μ_t, σ_t² I)`.
pub fn gaussian_target_field(mu: &[f64], mu_dot: &[f64], sigma: f64, sigma_dot: f64, x: &[f64]) -> Result<Vec<f64>> {
    if !(sigma > 0.0) {
        return Err(Error::domain(format!("target field is singular for sigma_t = {sigma}")));
    }
    if mu.len() != x.len() || mu_dot.len() != x.len() {
        return Err(Error::dim("mean, mean velocity and point must share a dimension"));
    }
    let r = sigma_dot / sigma;
    Ok(x.iter().zip(mu.iter().zip(mu_dot)).map(|(xi, (m, md))| r * (xi - m) + md).collect())
}
