use rand::seq::SliceRandom;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::context::ContextEncoder;
use super::losses::{cfm_loss, jkonet_loss, mmfm_loss, FmDraws, LossGrads, PathKind};
use super::models::{PotentialModel, VelocityModel};
use super::zoo::{ot_pair_source, Coupling, SourceDist, SourceKind, WeightZoo};
use crate::error::{Error, Result};
use crate::ndcore::{clip_grad_norm, Activation, OptimConfig, OptimKind, OptimState, Tensor};
use crate::pathlib::GaussPathParams;
use crate::rng::{derive_seed, seeded};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MetaKind {
    Cfm,
    Mmfm,
    Jko,
}

impl MetaKind {
    /// AdamW learning rate used when the configuration leaves it unset.
    pub fn default_lr(self) -> f64 {
        match self {
            MetaKind::Cfm => 1e-4,
            MetaKind::Mmfm => 3e-4,
            MetaKind::Jko => 5e-3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            MetaKind::Cfm => "cfm",
            MetaKind::Mmfm => "mmfm",
            MetaKind::Jko => "jko",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetaConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub time_embed_dim: usize,
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: Option<f64>,
    pub weight_decay: f64,
    /// Gradient-norm clip; 0 disables clipping.
    pub grad_clip: f64,
    pub coupling: Coupling,
    /// Replace knot 0 by fresh source samples in every batch.
    pub fresh_source: bool,
    pub source: SourceKind,
    pub path: GaussPathParams,
    pub path_kind: PathKind,
    /// Width of the conditioning vector; 0 trains an unconditional model.
    pub context_dim: usize,
    pub context_hidden: Vec<usize>,
}

impl Default for MetaConfig {
    fn default() -> Self {
        Self {
            hidden: vec![128, 128],
            activation: Activation::Relu,
            time_embed_dim: 12,
            epochs: 1000,
            batch_size: 64,
            lr: None,
            weight_decay: 2e-6,
            grad_clip: 0.0,
            coupling: Coupling::Independent,
            fresh_source: true,
            source: SourceKind::KaimingUniform,
            path: GaussPathParams::default(),
            path_kind: PathKind::PiecewiseLinear,
            context_dim: 0,
            context_hidden: vec![32],
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum MetaModel {
    Velocity(VelocityModel),
    Potential(PotentialModel),
}

impl MetaModel {
    pub fn param_count(&self) -> usize {
        match self {
            MetaModel::Velocity(m) => m.params.len(),
            MetaModel::Potential(m) => m.params.len(),
        }
    }

    pub fn params(&self) -> &[f64] {
        match self {
            MetaModel::Velocity(m) => &m.params,
            MetaModel::Potential(m) => &m.params,
        }
    }

    pub fn as_velocity(&self) -> Option<&VelocityModel> {
        match self {
            MetaModel::Velocity(m) => Some(m),
            MetaModel::Potential(_) => None,
        }
    }

    pub fn as_potential(&self) -> Option<&PotentialModel> {
        match self {
            MetaModel::Potential(m) => Some(m),
            MetaModel::Velocity(_) => None,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainedMeta {
    pub kind: MetaKind,
    pub model: MetaModel,
    pub context_encoder: Option<ContextEncoder>,
    pub source: SourceDist,
    /// Mean batch loss of every epoch.
    pub loss_curve: Vec<f64>,
}

impl TrainedMeta {
    /// Encoded context rows for raw features, when the model is conditional.
    pub fn encode_context(&self, features: &Tensor) -> Result<Option<Tensor>> {
        match &self.context_encoder {
            Some(e) => Ok(Some(e.encode(features)?)),
            None => Ok(None),
        }
    }
}

fn init_model(kind: MetaKind, zoo: &WeightZoo, cfg: &MetaConfig, seed: u64) -> Result<MetaModel> {
    let d = zoo.dim();
    Ok(match kind {
        MetaKind::Jko => {
            MetaModel::Potential(PotentialModel::new(d, cfg.time_embed_dim, &cfg.hidden, cfg.activation, seed)?)
        }
        _ => MetaModel::Velocity(VelocityModel::new(
            d,
            cfg.time_embed_dim,
            cfg.context_dim,
            &cfg.hidden,
            cfg.activation,
            seed,
        )?),
    })
}

/// Trains a CFM, MMFM or JKO meta-model on `zoo` with AdamW.
pub fn train_meta(kind: MetaKind, zoo: &WeightZoo, cfg: &MetaConfig, seed: u64) -> Result<TrainedMeta> {
    if zoo.is_empty() {
        return Err(Error::contract("cannot train on an empty zoo"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    if kind == MetaKind::Jko && zoo.optimizer != OptimKind::Sgd {
        return Err(Error::contract("JKO potentials need trajectories pretrained with plain SGD"));
    }
    if kind == MetaKind::Jko && cfg.context_dim > 0 {
        return Err(Error::config("potential models are unconditional"));
    }
    let ctx_encoder = match (cfg.context_dim, &zoo.contexts) {
        (0, _) => None,
        (c, Some(f)) => Some(ContextEncoder::new(f.cols(), &cfg.context_hidden, c, derive_seed(seed, 3))?),
        (_, None) => return Err(Error::config("context_dim > 0 but the zoo carries no contexts")),
    };
    let source = SourceDist::new(cfg.source, zoo.arch.clone(), zoo.dim())?;
    let mut model = init_model(kind, zoo, cfg, derive_seed(seed, 1))?;
    let n_model = model.param_count();
    let mut params = model.params().to_vec();
    if let Some(e) = &ctx_encoder {
        params.extend_from_slice(&e.params);
    }
    let lr = cfg.lr.unwrap_or(kind.default_lr());
    let mut opt = OptimState::new(OptimConfig::adamw(lr, cfg.weight_decay), params.len())?;
    let mut rng = seeded(derive_seed(seed, 2));
    let mut order: Vec<usize> = (0..zoo.len()).collect();
    let mut curve = Vec::with_capacity(cfg.epochs);
    let kk = zoo.segments();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mut sum = 0.0;
        let mut batches = 0;
        for anchor in order.chunks(cfg.batch_size) {
            let (model_p, enc_p) = params.split_at(n_model);
            let rows = zoo.batch_rows(anchor, cfg.coupling, &mut rng);
            let m = anchor.len();
            let feats = zoo.contexts.as_ref().map(|c| c.select_rows(anchor));
            let ctx = match (&ctx_encoder, &feats) {
                (Some(e), Some(f)) => Some(crate::ndcore::mlp_predict(&e.spec, enc_p, f)?),
                _ => None,
            };
            let mut knots: Vec<Tensor> = (0..=kk).map(|k| zoo.knots[k].select_rows(&rows[k])).collect();
            if cfg.fresh_source {
                knots[0] = source.sample(&mut rng, m);
                if cfg.coupling == Coupling::MinibatchOt {
                    knots[0] = ot_pair_source(&knots[0], &knots[1]);
                }
            }
            let out: LossGrads = match (kind, &model) {
                (MetaKind::Cfm, MetaModel::Velocity(v)) => {
                    let draws = FmDraws::sample(&mut rng, m, zoo.dim());
                    cfm_loss(v, model_p, &knots[0], &knots[kk], ctx.as_ref(), &cfg.path, &draws)?
                }
                (MetaKind::Mmfm, MetaModel::Velocity(v)) => {
                    let draws = FmDraws::sample(&mut rng, m, zoo.dim());
                    mmfm_loss(v, model_p, &knots, &zoo.times, ctx.as_ref(), cfg.path.sigma, cfg.path_kind, &draws)?
                }
                (MetaKind::Jko, MetaModel::Potential(p)) => {
                    let seg: Vec<usize> = (0..m).map(|_| rng.random_range(0..kk)).collect();
                    let d = zoo.dim();
                    let mut xt = Tensor::zeros(&[m, d]);
                    let mut xn = Tensor::zeros(&[m, d]);
                    for (i, &k) in seg.iter().enumerate() {
                        xt.row_mut(i).copy_from_slice(knots[k].row(i));
                        xn.row_mut(i).copy_from_slice(knots[k + 1].row(i));
                    }
                    let t: Vec<f64> = seg.iter().map(|&k| zoo.times[k]).collect();
                    let dt: Vec<f64> = seg.iter().map(|&k| zoo.times[k + 1] - zoo.times[k]).collect();
                    let (loss, grad_params) = jkonet_loss(p, model_p, &xt, &xn, &t, &dt)?;
                    LossGrads { loss, grad_params, grad_ctx: None }
                }
                _ => unreachable!("model kind matches meta kind"),
            };
            if !out.loss.is_finite() {
                return Err(Error::Training(format!("{} loss diverged at epoch {epoch}", kind.as_str())));
            }
            let mut grads = out.grad_params;
            if let (Some(e), Some(f), Some(gc)) = (&ctx_encoder, &feats, &out.grad_ctx) {
                grads.extend(e.backward(enc_p, f, gc)?);
            }
            if cfg.grad_clip > 0.0 {
                clip_grad_norm(&mut grads, cfg.grad_clip);
            }
            opt.step(&mut params, &grads).map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            sum += out.loss;
            batches += 1;
        }
        curve.push(sum / batches as f64);
    }
    let (model_p, enc_p) = params.split_at(n_model);
    match &mut model {
        MetaModel::Velocity(v) => v.params = model_p.to_vec(),
        MetaModel::Potential(p) => p.params = model_p.to_vec(),
    }
    let context_encoder = ctx_encoder.map(|mut e| {
        e.params = enc_p.to_vec();
        e
    });
    Ok(TrainedMeta { kind, model, context_encoder, source, loss_curve: curve })
}
