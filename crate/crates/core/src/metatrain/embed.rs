use serde::{Deserialize, Serialize};
use std::f64::consts::PI;

/// Sinusoidal time features `(sin ω_i t, cos ω_i t)` with `ω_i = π·2^i`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct TimeEmbedding {
    dim: usize,
}

impl TimeEmbedding {
    /// `dim` is rounded down to an even number.
    pub fn new(dim: usize) -> Self {
        Self { dim: dim / 2 * 2 }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn write(&self, t: f64, out: &mut [f64]) {
        for i in 0..self.dim / 2 {
            let w = PI * (1u64 << i) as f64 * t;
            out[2 * i] = w.sin();
            out[2 * i + 1] = w.cos();
        }
    }

    pub fn embed(&self, t: f64) -> Vec<f64> {
        let mut v = vec![0.0; self.dim];
        self.write(t, &mut v);
        v
    }
}
