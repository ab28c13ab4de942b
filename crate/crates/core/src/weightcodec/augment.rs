use rand::Rng;
use serde::{Deserialize, Serialize};

use super::weightvec::WeightVec;
use crate::error::{Error, Result};
use crate::rng::{normal, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AugmentKind {
    Noise,
    Dropout,
    Mixup,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentConfig {
    pub noise_std: f64,
    pub dropout_p: f64,
    /// Fixed interpolation weight; drawn from `U[0, 1]` when absent.
    pub mixup_alpha: Option<f64>,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self { noise_std: 5e-3, dropout_p: 0.02, mixup_alpha: None }
    }
}

/// Weight-space augmentation. Entries outside the pad mask are never modified
/// by noise or dropout; mixup requires both vectors to share an architecture.
pub fn augment(
    w: &WeightVec,
    kind: AugmentKind,
    partner: Option<&WeightVec>,
    cfg: &AugmentConfig,
    seed: u64,
) -> Result<WeightVec> {
    let mut rng = seeded(seed);
    let mut out = w.clone();
    match kind {
        AugmentKind::Noise => {
            let mask = w.pad_mask().to_vec();
            for (v, m) in out.values_mut().iter_mut().zip(mask) {
                if m {
                    *v += cfg.noise_std * normal(&mut rng);
                }
            }
        }
        AugmentKind::Dropout => {
            if !(0.0..=1.0).contains(&cfg.dropout_p) {
                return Err(Error::config("dropout probability must lie in [0, 1]"));
            }
            let mask = w.pad_mask().to_vec();
            for (v, m) in out.values_mut().iter_mut().zip(mask) {
                if m && rng.random::<f64>() < cfg.dropout_p {
                    *v = 0.0;
                }
            }
        }
        AugmentKind::Mixup => {
            let p = partner.ok_or_else(|| Error::contract("mixup needs a partner vector"))?;
            if p.arch() != w.arch() || p.dim() != w.dim() {
                return Err(Error::contract("mixup partner has a different architecture"));
            }
            let alpha = match cfg.mixup_alpha {
                Some(a) => a,
                None => rng.random::<f64>(),
            };
            for (v, q) in out.values_mut().iter_mut().zip(p.values()) {
                *v = (1.0 - alpha) * *v + alpha * q;
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::{Activation, MlpSpec};

    fn wv(vals: &[f64], dim: usize) -> WeightVec {
        let a = MlpSpec::new(vec![vals.len() - 1, 1], Activation::Relu).unwrap();
        WeightVec::from_params(&a, vals, dim).unwrap()
    }

    #[test]
    fn mixup_with_zero_alpha_is_identity() {
        let a = wv(&[1.0, 2.0, 3.0], 4);
        let b = wv(&[-1.0, 0.0, 5.0], 4);
        let cfg = AugmentConfig { mixup_alpha: Some(0.0), ..AugmentConfig::default() };
        assert_eq!(augment(&a, AugmentKind::Mixup, Some(&b), &cfg, 0).unwrap(), a);
    }

    #[test]
    fn dropout_zero_is_identity() {
        let a = wv(&[1.0, 2.0, 3.0], 4);
        let cfg = AugmentConfig { dropout_p: 0.0, ..AugmentConfig::default() };
        assert_eq!(augment(&a, AugmentKind::Dropout, None, &cfg, 3).unwrap(), a);
    }

    #[test]
    fn noise_std_matches_configuration() {
        let a = wv(&[0.0, 0.0, 0.0], 3);
        let cfg = AugmentConfig::default();
        let mut sq = 0.0;
        let n = 10_000;
        for s in 0..n {
            let out = augment(&a, AugmentKind::Noise, None, &cfg, s).unwrap();
            sq += out.values()[0].powi(2);
        }
        let std = (sq / n as f64).sqrt();
        assert!((std / 5e-3 - 1.0).abs() < 0.05, "{std}");
    }

    #[test]
    fn mixup_rejects_other_architectures() {
        let a = wv(&[1.0, 2.0, 3.0], 4);
        let b = wv(&[1.0, 2.0], 4);
        assert!(matches!(
            augment(&a, AugmentKind::Mixup, Some(&b), &AugmentConfig::default(), 0),
            Err(Error::Contract(_))
        ));
    }
}
