//! TOML run configuration. Every section is optional and defaults to the
//! library defaults; unknown keys are rejected.

use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use weightflow::adjointft::{FtConfig, RewardSpec};
use weightflow::basezoo::{DatasetConfig, PretrainConfig};
use weightflow::metatrain::{KnotSelection, MetaConfig, MetaKind};
use weightflow::shiftdetect::CdcConfig;
use weightflow::weightcodec::{VaeConfig, VaeTrainConfig};

use crate::error::{CliError, CliResult};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    /// Run directory name under `<workspace>/runs/`.
    pub name: String,
    pub dataset: DatasetConfig,
    pub base: BaseSection,
    pub vae: VaeSection,
    pub meta: MetaSection,
    pub finetune: FinetuneSection,
    pub detect: DetectSection,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            name: "default".into(),
            dataset: DatasetConfig::default(),
            base: BaseSection::default(),
            vae: VaeSection::default(),
            meta: MetaSection::default(),
            finetune: FinetuneSection::default(),
            detect: DetectSection::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaseSection {
    /// Independent pretraining runs; run `i` uses seed `seed + i`.
    pub n_runs: usize,
    pub train: PretrainConfig,
}

impl Default for BaseSection {
    fn default() -> Self {
        Self { n_runs: 1, train: PretrainConfig::default() }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeSection {
    /// Train meta-models in the VAE latent space.
    pub enabled: bool,
    pub model: VaeConfig,
    pub train: VaeTrainConfig,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaSection {
    pub kind: MetaKind,
    /// Number of interpolation segments; CFM always uses one.
    pub k: usize,
    pub selection: KnotSelection,
    /// Samples drawn by `generate`.
    pub n_generate: usize,
    pub steps: usize,
    pub record_every: usize,
    pub train: MetaConfig,
}

impl Default for MetaSection {
    fn default() -> Self {
        Self {
            kind: MetaKind::Cfm,
            k: 1,
            selection: KnotSelection::Grid,
            n_generate: 64,
            steps: 100,
            record_every: 1,
            train: MetaConfig::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FinetuneSection {
    /// Corruption preset (0–3) of the target dataset.
    pub corruption_level: u8,
    pub corruption_seed: u64,
    /// Meta-model to fine-tune; must be a velocity model.
    pub base_kind: MetaKind,
    pub ft: FtConfig,
    pub reward: RewardSpec,
}

impl Default for FinetuneSection {
    fn default() -> Self {
        Self {
            corruption_level: 2,
            corruption_seed: 11,
            base_kind: MetaKind::Cfm,
            ft: FtConfig::default(),
            reward: RewardSpec::default(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DetectSection {
    /// Corruption preset of the suspect distribution Q.
    pub shift_level: u8,
    pub shift_seed: u64,
    pub seeds: usize,
    pub base_kind: MetaKind,
    pub ft: FtConfig,
    pub reward: RewardSpec,
    pub cdc: CdcConfig,
}

impl Default for DetectSection {
    fn default() -> Self {
        Self {
            shift_level: 3,
            shift_seed: 21,
            seeds: 10,
            base_kind: MetaKind::Cfm,
            ft: FtConfig::default(),
            // Half the fine-tuning rate keeps in-distribution accuracy drift under 1.5 points.
            reward: RewardSpec { reward_lr: 0.75, ..RewardSpec::default() },
            cdc: CdcConfig::default(),
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> CliResult<Self> {
        let cfg: Self = toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Reads a config file and returns it with the SHA-256 of its bytes.
    pub fn load(path: &Path) -> CliResult<(Self, String)> {
        let text = std::fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        Ok((Self::parse(&text)?, sha256_hex(text.as_bytes())))
    }

    fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.name.is_empty() || self.name.contains(['/', '\\']) || self.name == ".." {
            return bad(format!("name {:?} is not a plain directory name", self.name));
        }
        if self.base.n_runs == 0 {
            return bad("base.n_runs must be positive".into());
        }
        if self.meta.k == 0 {
            return bad("meta.k must be positive".into());
        }
        if self.meta.n_generate == 0 || self.meta.steps == 0 || self.meta.record_every == 0 {
            return bad("meta.n_generate, meta.steps and meta.record_every must be positive".into());
        }
        if self.detect.seeds < 3 {
            return bad("detect.seeds must be at least 3".into());
        }
        Ok(())
    }
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}
