//! Typed artifacts on top of the container: trajectories, VAEs, meta-models
//! and weight batches, each with its sidecar.

use std::path::Path;

use serde::{Deserialize, Serialize};
use weightflow::basezoo::{PretrainRun, TrajectoryTensor};
use weightflow::metatrain::{
    ContextEncoder, MetaKind, MetaModel, ModelHeader, PotentialModel, SourceDist, SourceKind, TrainedMeta,
    VelocityModel,
};
use weightflow::ndcore::OptimKind;
use weightflow::weightcodec::{VaeConfig, VaeModel};
use weightflow::{MlpSpec, Tensor};

use crate::container::{read_sidecar, write_sidecar, Container, Kind};
use crate::error::{CliError, CliResult};

/// Where an artifact came from. Deliberately free of timestamps so that
/// reruns produce identical files.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub command: String,
    pub seed: u64,
    pub config_sha256: String,
    pub dataset: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajMeta {
    pub arch: Option<MlpSpec>,
    pub optimizer: OptimKind,
    pub lr: f64,
    pub save_epochs: usize,
    pub saves_per_epoch: usize,
    /// Training iteration of every checkpoint row after the initial one.
    pub iteration_indices: Vec<u64>,
    /// `iteration · lr` of every checkpoint row.
    pub times: Vec<f64>,
    pub final_val_acc: f64,
    pub provenance: Provenance,
}

/// Row 0 is the initialization, then one row per checkpoint.
pub fn save_trajectory(path: &Path, run: &PretrainRun, prov: Provenance) -> CliResult<()> {
    let t = &run.trajectory;
    let mut payload = t.init().to_vec();
    payload.extend_from_slice(t.data().data());
    Container::new(Kind::Traj, t.dim(), payload)?.write(path)?;
    write_sidecar(
        path,
        &TrajMeta {
            arch: t.arch().cloned(),
            optimizer: t.optimizer(),
            lr: t.lr(),
            save_epochs: t.n_epochs(),
            saves_per_epoch: t.saves_per_epoch(),
            iteration_indices: t.iterations().to_vec(),
            times: t.iterations().iter().map(|&i| i as f64 * t.lr()).collect(),
            final_val_acc: run.final_val_acc,
            provenance: prov,
        },
    )
}

pub fn load_trajectory(path: &Path) -> CliResult<(TrajectoryTensor, TrajMeta)> {
    let c = Container::read_kind(path, &[Kind::Traj])?;
    let meta: TrajMeta = read_sidecar(path)?;
    let d = c.dim as usize;
    if c.count as usize != 1 + meta.save_epochs * meta.saves_per_epoch {
        return Err(CliError::Data(format!(
            "{}: {} rows do not match the sidecar's checkpoint grid",
            path.display(),
            c.count
        )));
    }
    let init = c.payload[..d].to_vec();
    let data = Tensor::new(vec![meta.save_epochs, meta.saves_per_epoch, d], c.payload[d..].to_vec())?;
    let t =
        TrajectoryTensor::new(data, meta.iteration_indices.clone(), meta.arch.clone(), meta.optimizer, meta.lr, init)?;
    Ok((t, meta))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct VaeMeta {
    pub dim: usize,
    pub config: VaeConfig,
    pub final_loss: f64,
    pub provenance: Provenance,
}

pub fn save_vae(path: &Path, vae: &VaeModel, cfg: &VaeConfig, final_loss: f64, prov: Provenance) -> CliResult<()> {
    let flat = vae.flat_params();
    Container::new(Kind::Vae, flat.len(), flat)?.write(path)?;
    write_sidecar(path, &VaeMeta { dim: vae.dim(), config: cfg.clone(), final_loss, provenance: prov })
}

pub fn load_vae(path: &Path) -> CliResult<VaeModel> {
    let c = Container::read_kind(path, &[Kind::Vae])?;
    let meta: VaeMeta = read_sidecar(path)?;
    let mut vae = VaeModel::new(meta.dim, &meta.config, 0)?;
    vae.set_flat_params(&c.payload)?;
    Ok(vae)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetaModelMeta {
    pub kind: MetaKind,
    pub header: ModelHeader,
    pub source: SourceKind,
    /// Base classifier architecture of the decoded weights.
    pub arch: MlpSpec,
    /// Trained in the VAE latent space rather than on padded weights.
    pub latent: bool,
    pub k: usize,
    pub times: Vec<f64>,
    pub context_encoder: Option<MlpSpec>,
    pub final_loss: f64,
    pub provenance: Provenance,
}

pub fn meta_kind_tag(kind: MetaKind) -> Kind {
    match kind {
        MetaKind::Cfm => Kind::Cfm,
        MetaKind::Mmfm => Kind::Mmfm,
        MetaKind::Jko => Kind::Jko,
    }
}

/// A trained meta-model plus what is needed to decode and evaluate its samples.
#[derive(Clone, Debug)]
pub struct StoredMeta {
    pub meta: TrainedMeta,
    pub info: MetaModelMeta,
}

pub fn save_meta(path: &Path, m: &TrainedMeta, info: &MetaModelMeta) -> CliResult<()> {
    let mut payload = m.model.params().to_vec();
    if let Some(e) = &m.context_encoder {
        payload.extend_from_slice(&e.params);
    }
    let n = payload.len();
    Container::new(meta_kind_tag(m.kind), n, payload)?.write(path)?;
    write_sidecar(path, info)
}

pub fn load_meta(path: &Path) -> CliResult<StoredMeta> {
    let c = Container::read_kind(path, &[Kind::Cfm, Kind::Mmfm, Kind::Jko])?;
    let info: MetaModelMeta = read_sidecar(path)?;
    if meta_kind_tag(info.kind) != c.kind || c.count != 1 {
        return Err(CliError::Data(format!("{}: container kind or shape disagrees with the sidecar", path.display())));
    }
    let n_model = info.header.spec.param_count();
    if c.payload.len() < n_model {
        return Err(CliError::Data(format!("{}: parameter vector too short", path.display())));
    }
    let (mp, ep) = c.payload.split_at(n_model);
    let model = match info.kind {
        MetaKind::Jko => MetaModel::Potential(PotentialModel::from_parts(info.header.clone(), mp.to_vec())?),
        _ => MetaModel::Velocity(VelocityModel::from_parts(info.header.clone(), mp.to_vec())?),
    };
    let context_encoder = match &info.context_encoder {
        Some(spec) if spec.param_count() == ep.len() => {
            Some(ContextEncoder { spec: spec.clone(), params: ep.to_vec() })
        }
        None if ep.is_empty() => None,
        _ => {
            return Err(CliError::Data(format!(
                "{}: context encoder parameters do not match the sidecar",
                path.display()
            )))
        }
    };
    let arch = if info.latent { None } else { Some(info.arch.clone()) };
    let source = SourceDist::new(info.source, arch, info.header.state_dim)?;
    Ok(StoredMeta {
        meta: TrainedMeta { kind: info.kind, model, context_encoder, source, loss_curve: Vec::new() },
        info,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightsMeta {
    pub arch: MlpSpec,
    /// The meta-model or run that produced the rows.
    pub origin: String,
    pub provenance: Provenance,
}

pub fn save_weights(path: &Path, rows: &Tensor, meta: &WeightsMeta) -> CliResult<()> {
    Container::new(Kind::Weights, rows.cols(), rows.data().to_vec())?.write(path)?;
    write_sidecar(path, meta)
}

pub fn load_weights(path: &Path) -> CliResult<(Tensor, WeightsMeta)> {
    let c = Container::read_kind(path, &[Kind::Weights])?;
    let meta: WeightsMeta = read_sidecar(path)?;
    let t = Tensor::new(vec![c.count as usize, c.dim as usize], c.payload)?;
    Ok((t, meta))
}
