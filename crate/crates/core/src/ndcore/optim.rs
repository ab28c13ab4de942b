use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimKind {
    Sgd,
    Adamw,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OptimConfig {
    pub kind: OptimKind,
    pub lr: f64,
    #[serde(default)]
    pub weight_decay: f64,
    #[serde(default)]
    pub momentum: f64,
    #[serde(default = "default_beta1")]
    pub beta1: f64,
    #[serde(default = "default_beta2")]
    pub beta2: f64,
    #[serde(default = "default_eps")]
    pub eps: f64,
}

fn default_beta1() -> f64 {
    0.9
}
fn default_beta2() -> f64 {
    0.999
}
fn default_eps() -> f64 {
    1e-8
}

impl OptimConfig {
    pub fn sgd(lr: f64) -> Self {
        Self {
            kind: OptimKind::Sgd,
            lr,
            weight_decay: 0.0,
            momentum: 0.0,
            beta1: default_beta1(),
            beta2: default_beta2(),
            eps: default_eps(),
        }
    }

    pub fn adamw(lr: f64, weight_decay: f64) -> Self {
        Self { kind: OptimKind::Adamw, lr, weight_decay, ..Self::sgd(lr) }
    }
}

/// Optimizer with its moment buffers. Owned by exactly one training loop.
#[derive(Clone, Debug)]
pub struct OptimState {
    pub config: OptimConfig,
    pub step: u64,
    first: Vec<f64>,
    second: Vec<f64>,
}

impl OptimState {
    pub fn new(config: OptimConfig, n_params: usize) -> Result<Self> {
        if !(config.lr >= 0.0) || !config.lr.is_finite() {
            return Err(Error::config(format!("learning rate must be finite and non-negative, got {}", config.lr)));
        }
        let second = match config.kind {
            OptimKind::Adamw => vec![0.0; n_params],
            OptimKind::Sgd => Vec::new(),
        };
        Ok(Self { config, step: 0, first: vec![0.0; n_params], second })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.config.lr = lr;
    }

    /// Applies one update in place.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != grads.len() || params.len() != self.first.len() {
            return Err(Error::dim(format!(
                "optimizer sized for {} parameters, got params {} / grads {}",
                self.first.len(),
                params.len(),
                grads.len()
            )));
        }
        ensure_finite(grads, "gradient")?;
        self.step += 1;
        let c = &self.config;
        match c.kind {
            OptimKind::Sgd => {
                for ((p, &g), buf) in params.iter_mut().zip(grads).zip(self.first.iter_mut()) {
                    let d = g + c.weight_decay * *p;
                    let d = if c.momentum != 0.0 {
                        *buf = c.momentum * *buf + d;
                        *buf
                    } else {
                        d
                    };
                    *p -= c.lr * d;
                }
            }
            OptimKind::Adamw => {
                let t = self.step as i32;
                let bc1 = 1.0 - c.beta1.powi(t);
                let bc2 = 1.0 - c.beta2.powi(t);
                for (((p, &g), m), v) in
                    params.iter_mut().zip(grads).zip(self.first.iter_mut()).zip(self.second.iter_mut())
                {
                    *p -= c.lr * c.weight_decay * *p;
                    *m = c.beta1 * *m + (1.0 - c.beta1) * g;
                    *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
                    let mhat = *m / bc1;
                    let vhat = *v / bc2;
                    *p -= c.lr * mhat / (vhat.sqrt() + c.eps);
                }
            }
        }
        Ok(())
    }
}

/// Rescales `grads` so their global L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = grads.iter().map(|g| g * g).sum::<f64>().sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}

/// Cosine annealing from `base` at step 0 to `min` at `total` steps.
pub fn cosine_lr(base: f64, min: f64, step: usize, total: usize) -> f64 {
    if total == 0 {
        return base;
    }
    let frac = (step.min(total) as f64) / total as f64;
    min + 0.5 * (base - min) * (1.0 + (std::f64::consts::PI * frac).cos())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sgd_single_step() {
        let mut st = OptimState::new(OptimConfig::sgd(0.1), 1).unwrap();
        let mut p = [1.0];
        st.step(&mut p, &[1.0]).unwrap();
        assert!((p[0] - 0.9).abs() < 1e-15);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn sgd_on_half_square_matches_closed_form() {
        let mut st = OptimState::new(OptimConfig::sgd(0.1), 1).unwrap();
        let mut p = [1.0];
        for _ in 0..100 {
            let g = [p[0]];
            st.step(&mut p, &g).unwrap();
        }
        assert!((p[0] - 0.9f64.powi(100)).abs() < 1e-18);
        assert!((p[0] - 2.656e-5).abs() < 1e-8);
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut st = OptimState::new(OptimConfig::sgd(0.0), 3).unwrap();
        let mut p = [1.0, -2.0, 3.5];
        st.step(&mut p, &[0.3, 0.1, -9.0]).unwrap();
        assert_eq!(p, [1.0, -2.0, 3.5]);
    }

    #[test]
    fn adamw_zero_grad_only_decays() {
        let mut st = OptimState::new(OptimConfig::adamw(0.01, 0.1), 2).unwrap();
        let mut p = [2.0, -1.0];
        st.step(&mut p, &[0.0, 0.0]).unwrap();
        assert!((p[0] - 2.0 * (1.0 - 0.001)).abs() < 1e-15);
        assert!((p[1] + (1.0 - 0.001)).abs() < 1e-15);
    }

    #[test]
    fn non_finite_grad_reports_index() {
        let mut st = OptimState::new(OptimConfig::sgd(0.1), 3).unwrap();
        let mut p = [0.0; 3];
        let err = st.step(&mut p, &[0.0, f64::NAN, 1.0]).unwrap_err();
        assert!(matches!(err, Error::NonFinite { index: 1, .. }));
    }

    #[test]
    fn clipping_and_cosine() {
        let mut g = [3.0, 4.0];
        assert_eq!(clip_grad_norm(&mut g, 1.0), 5.0);
        assert!((g[0] - 0.6).abs() < 1e-15);
        assert_eq!(cosine_lr(1.0, 0.0, 0, 10), 1.0);
        assert!(cosine_lr(1.0, 0.1, 10, 10) - 0.1 < 1e-15);
    }
}
