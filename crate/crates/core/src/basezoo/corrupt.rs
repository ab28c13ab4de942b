use rand::Rng;
use serde::{Deserialize, Serialize};

use super::dataset::{Split, SynthDataset};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::rng::{normal, seeded};

/// Input corruption: a rotation of the first two features, additive jitter,
/// a Gaussian blur across features, and random feature erasure, in that order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorruptionLevel {
    pub level: u8,
    pub rotation_max_deg: f64,
    pub jitter_scale: f64,
    pub blur_sigma: f64,
    pub erase_prob: f64,
}

impl CorruptionLevel {
    pub fn identity() -> Self {
        Self { level: 0, rotation_max_deg: 0.0, jitter_scale: 0.0, blur_sigma: 0.0, erase_prob: 0.0 }
    }

    /// Preset levels 0–3, each adding to the previous one.
    pub fn preset(level: u8) -> Result<Self> {
        let base = Self::identity();
        Ok(match level {
            0 => base,
            1 => Self { level, rotation_max_deg: 15.0, ..base },
            2 => Self { level, rotation_max_deg: 25.0, jitter_scale: 0.15, ..base },
            3 => Self { level, rotation_max_deg: 35.0, jitter_scale: 0.3, blur_sigma: 0.5, erase_prob: 0.1 },
            _ => return Err(Error::config(format!("corruption level {level} is not in 0..=3"))),
        })
    }

    pub fn is_identity(&self) -> bool {
        self.rotation_max_deg == 0.0 && self.jitter_scale == 0.0 && self.blur_sigma == 0.0 && self.erase_prob == 0.0
    }

    fn validate(&self) -> Result<()> {
        if self.level > 3 {
            return Err(Error::config("corruption level must be in 0..=3"));
        }
        if self.level == 0 && !self.is_identity() {
            return Err(Error::config("corruption level 0 must be the identity"));
        }
        if self.jitter_scale < 0.0 || self.blur_sigma < 0.0 || !(0.0..=1.0).contains(&self.erase_prob) {
            return Err(Error::config("corruption magnitudes out of range"));
        }
        Ok(())
    }
}

fn blur_kernel(sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as i64;
    let mut k: Vec<f64> = (-radius..=radius).map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp()).collect();
    let s: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= s);
    k
}

fn corrupt_inputs<R: Rng>(x: &Tensor, lvl: &CorruptionLevel, rng: &mut R) -> Tensor {
    let mut out = x.clone();
    let d = x.cols();
    let (s, c) = lvl.rotation_max_deg.to_radians().sin_cos();
    let kernel = (lvl.blur_sigma > 0.0).then(|| blur_kernel(lvl.blur_sigma));
    for i in 0..out.rows() {
        let row = out.row_mut(i);
        if lvl.rotation_max_deg != 0.0 {
            let (a, b) = (row[0], row[1]);
            row[0] = c * a - s * b;
            row[1] = s * a + c * b;
        }
        if lvl.jitter_scale > 0.0 {
            row.iter_mut().for_each(|v| *v += lvl.jitter_scale * normal(rng));
        }
        if let Some(k) = &kernel {
            let r = (k.len() / 2) as i64;
            let src = row.to_vec();
            for (j, v) in row.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (o, kv) in k.iter().enumerate() {
                    // reflect at the borders
                    let mut idx = j as i64 + o as i64 - r;
                    while idx < 0 || idx >= d as i64 {
                        idx = if idx < 0 { -idx - 1 } else { 2 * d as i64 - idx - 1 };
                    }
                    acc += kv * src[idx as usize];
                }
                *v = acc;
            }
        }
        if lvl.erase_prob > 0.0 {
            row.iter_mut().for_each(|v| {
                if rng.random::<f64>() < lvl.erase_prob {
                    *v = 0.0;
                }
            });
        }
    }
    out
}

/// Applies `lvl` to both splits; labels are unchanged.
pub fn corrupt(ds: &SynthDataset, lvl: &CorruptionLevel, seed: u64) -> Result<SynthDataset> {
    lvl.validate()?;
    if lvl.is_identity() {
        return Ok(ds.clone());
    }
    let mut rng = seeded(seed);
    let apply =
        |s: &Split, rng: &mut _| Split { inputs: corrupt_inputs(&s.inputs, lvl, rng), labels: s.labels.clone() };
    let train = apply(&ds.train, &mut rng);
    let val = apply(&ds.val, &mut rng);
    Ok(SynthDataset { name: format!("{}-c{}", ds.name, lvl.level), config: ds.config.clone(), train, val })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::basezoo::{make_dataset, DatasetConfig};

    #[test]
    fn level_zero_is_bit_identical() {
        let ds = make_dataset(&DatasetConfig::default()).unwrap();
        let out = corrupt(&ds, &CorruptionLevel::preset(0).unwrap(), 3).unwrap();
        assert_eq!(out.train.inputs.data(), ds.train.inputs.data());
        assert_eq!(out.val.labels, ds.val.labels);
    }

    #[test]
    fn half_turn_negates_class_means() {
        let ds = make_dataset(&DatasetConfig { modes_per_class: 1, ..DatasetConfig::default() }).unwrap();
        let lvl = CorruptionLevel { level: 1, rotation_max_deg: 180.0, ..CorruptionLevel::identity() };
        let out = corrupt(&ds, &lvl, 0).unwrap();
        let before = ds.train.class_means(4);
        let after = out.train.class_means(4);
        for (b, a) in before.iter().zip(&after) {
            for (x, y) in b.iter().zip(a) {
                assert!((x + y).abs() < 1e-12);
            }
        }
        assert_eq!(out.train.labels, ds.train.labels);
    }

    #[test]
    fn blur_kernel_is_normalized() {
        let k = blur_kernel(0.7);
        assert!((k.iter().sum::<f64>() - 1.0).abs() < 1e-15);
        assert_eq!(k.len() % 2, 1);
    }

    #[test]
    fn invalid_levels_are_rejected() {
        assert!(CorruptionLevel::preset(4).is_err());
        let ds = make_dataset(&DatasetConfig::default()).unwrap();
        let bad = CorruptionLevel { level: 0, jitter_scale: 0.1, ..CorruptionLevel::identity() };
        assert!(corrupt(&ds, &bad, 0).is_err());
    }
}
