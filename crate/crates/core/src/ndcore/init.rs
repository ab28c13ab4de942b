use rand::Rng;
use serde::{Deserialize, Serialize};

use super::mlp::MlpSpec;
use crate::rng::{normal, uniform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitMode {
    Uniform,
    Normal,
}

/// Kaiming (He) initialization with the ReLU gain.
///
/// Weights of a layer with fan-in `n` are drawn from `U(-√(6/n), √(6/n))` or
/// `N(0, 2/n)`; biases start at zero.
pub fn kaiming_init<R: Rng + ?Sized>(spec: &MlpSpec, mode: InitMode, rng: &mut R) -> Vec<f64> {
    let mut params = vec![0.0; spec.param_count()];
    for slot in spec.layers() {
        let fan_in = slot.input as f64;
        let w = &mut params[slot.weight_offset..slot.bias_offset];
        match mode {
            InitMode::Uniform => {
                let bound = (6.0 / fan_in).sqrt();
                w.iter_mut().for_each(|v| *v = uniform(rng, -bound, bound));
            }
            InitMode::Normal => {
                let std = (2.0 / fan_in).sqrt();
                w.iter_mut().for_each(|v| *v = std * normal(rng));
            }
        }
    }
    params
}
