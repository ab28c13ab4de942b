use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::dataset::{evaluate_classifier, SynthDataset};
use crate::error::{Error, Result};
use crate::ndcore::{
    kaiming_init, mlp_backward, mlp_forward, softmax_cross_entropy, Activation, InitMode, MlpSpec, OptimConfig,
    OptimKind, OptimState, Reduction, Tensor,
};
use crate::rng::seeded;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub init: InitMode,
    pub optim: OptimConfig,
    pub n_epochs: usize,
    pub batch_size: usize,
    pub save_epochs: usize,
    pub saves_per_epoch: usize,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        Self {
            hidden: vec![16, 16],
            activation: Activation::Relu,
            init: InitMode::Uniform,
            optim: OptimConfig::sgd(0.1),
            n_epochs: 50,
            batch_size: 32,
            save_epochs: 10,
            saves_per_epoch: 1,
        }
    }
}

impl PretrainConfig {
    /// Classifier architecture `d_in → hidden… → C` for a dataset.
    pub fn arch_for(&self, ds: &SynthDataset) -> Result<MlpSpec> {
        let mut w = vec![ds.input_dim()];
        w.extend(&self.hidden);
        w.push(ds.n_classes());
        MlpSpec::new(w, self.activation)
    }
}

/// Checkpoints of one training run, `[save_epochs × saves_per_epoch × D]`,
/// ordered by training iteration.
#[derive(Clone, Debug, PartialEq)]
pub struct TrajectoryTensor {
    data: Tensor,
    iterations: Vec<u64>,
    arch: Option<MlpSpec>,
    optimizer: OptimKind,
    lr: f64,
    init: Vec<f64>,
}

impl TrajectoryTensor {
    /// `iterations` labels every flattened row and must be strictly increasing.
    /// Without an architecture the rows are treated as raw state vectors.
    pub fn new(
        data: Tensor,
        iterations: Vec<u64>,
        arch: Option<MlpSpec>,
        optimizer: OptimKind,
        lr: f64,
        init: Vec<f64>,
    ) -> Result<Self> {
        if data.ndim() != 3 {
            return Err(Error::dim("trajectory data must be [epochs × saves × D]"));
        }
        let (e, s, d) = (data.shape()[0], data.shape()[1], data.shape()[2]);
        if e == 0 || s == 0 {
            return Err(Error::contract("a trajectory needs at least one checkpoint"));
        }
        if iterations.len() != e * s {
            return Err(Error::dim(format!("{} iteration labels for {} checkpoints", iterations.len(), e * s)));
        }
        if iterations.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::contract("checkpoints must be sorted by training iteration"));
        }
        if let Some(a) = &arch {
            if a.param_count() > d {
                return Err(Error::dim(format!(
                    "architecture has {} parameters but checkpoints have width {d}",
                    a.param_count()
                )));
            }
        }
        if init.len() != d {
            return Err(Error::dim("initial state width differs from checkpoints"));
        }
        data.check_finite("trajectory")?;
        Ok(Self { data, iterations, arch, optimizer, lr, init })
    }

    pub fn data(&self) -> &Tensor {
        &self.data
    }

    pub fn n_epochs(&self) -> usize {
        self.data.shape()[0]
    }

    pub fn saves_per_epoch(&self) -> usize {
        self.data.shape()[1]
    }

    pub fn dim(&self) -> usize {
        self.data.shape()[2]
    }

    pub fn n_rows(&self) -> usize {
        self.n_epochs() * self.saves_per_epoch()
    }

    /// Flattened row `i` (epoch-major).
    pub fn row(&self, i: usize) -> &[f64] {
        let d = self.dim();
        &self.data.data()[i * d..(i + 1) * d]
    }

    pub fn checkpoint(&self, epoch: usize, save: usize) -> &[f64] {
        self.row(epoch * self.saves_per_epoch() + save)
    }

    pub fn last(&self) -> &[f64] {
        self.row(self.n_rows() - 1)
    }

    pub fn iterations(&self) -> &[u64] {
        &self.iterations
    }

    pub fn arch(&self) -> Option<&MlpSpec> {
        self.arch.as_ref()
    }

    pub fn optimizer(&self) -> OptimKind {
        self.optimizer
    }

    pub fn lr(&self) -> f64 {
        self.lr
    }

    pub fn init(&self) -> &[f64] {
        &self.init
    }

    /// Zero-pads every state (including the initial one) to `dim`.
    pub fn padded(&self, dim: usize) -> Result<Self> {
        let d = self.dim();
        if dim < d {
            return Err(Error::dim(format!("cannot pad width {d} down to {dim}")));
        }
        let mut data = Vec::with_capacity(self.n_rows() * dim);
        for i in 0..self.n_rows() {
            data.extend_from_slice(self.row(i));
            data.resize((i + 1) * dim, 0.0);
        }
        let mut init = self.init.clone();
        init.resize(dim, 0.0);
        Self::new(
            Tensor::new(vec![self.n_epochs(), self.saves_per_epoch(), dim], data)?,
            self.iterations.clone(),
            self.arch.clone(),
            self.optimizer,
            self.lr,
            init,
        )
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PretrainRun {
    pub trajectory: TrajectoryTensor,
    pub final_params: Vec<f64>,
    pub final_val_acc: f64,
    pub final_val_loss: f64,
    /// Mean training cross-entropy of each epoch.
    pub epoch_losses: Vec<f64>,
}

/// Save epochs evenly spaced over the run, always ending at the final epoch.
pub fn save_epoch_indices(n_epochs: usize, save_epochs: usize) -> Vec<usize> {
    (0..save_epochs).map(|j| (((j + 1) * n_epochs) as f64 / save_epochs as f64).round() as usize - 1).collect()
}

/// Trains a classifier from a fresh Kaiming initialization, recording the first
/// `saves_per_epoch` post-update iterates of each save epoch.
pub fn pretrain_and_checkpoint(ds: &SynthDataset, cfg: &PretrainConfig, seed: u64) -> Result<PretrainRun> {
    let arch = cfg.arch_for(ds)?;
    let mut rng = seeded(seed);
    let init = kaiming_init(&arch, cfg.init, &mut rng);
    pretrain_from(ds, &arch, cfg, init, seed)
}

/// As [`pretrain_and_checkpoint`] but starting from the given parameters.
pub fn pretrain_from(
    ds: &SynthDataset,
    arch: &MlpSpec,
    cfg: &PretrainConfig,
    init: Vec<f64>,
    seed: u64,
) -> Result<PretrainRun> {
    if cfg.n_epochs == 0 || cfg.batch_size == 0 {
        return Err(Error::config("n_epochs and batch_size must be positive"));
    }
    if cfg.save_epochs == 0 || cfg.save_epochs > cfg.n_epochs {
        return Err(Error::config(format!("save_epochs must lie in [1, {}], got {}", cfg.n_epochs, cfg.save_epochs)));
    }
    let n = ds.train.len();
    let iters_per_epoch = n.div_ceil(cfg.batch_size);
    if cfg.saves_per_epoch == 0 || cfg.saves_per_epoch > iters_per_epoch {
        return Err(Error::contract(format!(
            "saves_per_epoch must lie in [1, {iters_per_epoch}], got {}",
            cfg.saves_per_epoch
        )));
    }
    let mut optim = OptimState::new(cfg.optim.clone(), arch.param_count())?;
    let mut params = init.clone();
    let mut rng = seeded(crate::rng::derive_seed(seed, 0x5eed));
    let save_at = save_epoch_indices(cfg.n_epochs, cfg.save_epochs);
    let mut saved = Vec::with_capacity(cfg.save_epochs * cfg.saves_per_epoch * params.len());
    let mut iterations = Vec::new();
    let mut epoch_losses = Vec::with_capacity(cfg.n_epochs);
    let mut order: Vec<usize> = (0..n).collect();
    let mut iteration: u64 = 0;
    let mut next_save = 0;
    for epoch in 0..cfg.n_epochs {
        order.shuffle(&mut rng);
        let saving = next_save < save_at.len() && save_at[next_save] == epoch;
        let mut loss_sum = 0.0;
        for (b, idx) in order.chunks(cfg.batch_size).enumerate() {
            let batch = ds.train.subset(idx);
            let (logits, cache) = mlp_forward(arch, &params, &batch.inputs)?;
            let (loss, grad) = softmax_cross_entropy(&logits, &batch.labels, Reduction::Mean)?;
            if !loss.is_finite() {
                return Err(Error::Training(format!("non-finite loss at epoch {epoch}, iteration {iteration}")));
            }
            loss_sum += loss * idx.len() as f64;
            let g = mlp_backward(&cache, &grad)?;
            optim.step(&mut params, &g.params).map_err(|e| Error::Training(format!("epoch {epoch}: {e}")))?;
            iteration += 1;
            if saving && b < cfg.saves_per_epoch {
                saved.extend_from_slice(&params);
                iterations.push(iteration);
            }
        }
        if saving {
            next_save += 1;
        }
        epoch_losses.push(loss_sum / n as f64);
    }
    let (final_val_acc, final_val_loss) = evaluate_classifier(arch, &params, &ds.val)?;
    let data = Tensor::new(vec![cfg.save_epochs, cfg.saves_per_epoch, arch.param_count()], saved)?;
    let trajectory = TrajectoryTensor::new(data, iterations, Some(arch.clone()), cfg.optim.kind, cfg.optim.lr, init)?;
    Ok(PretrainRun { trajectory, final_params: params, final_val_acc, final_val_loss, epoch_losses })
}
