use std::f64::consts::{PI, TAU};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{mlp_predict, softmax_cross_entropy, MlpSpec, Reduction, Tensor};
use crate::rng::{normal, seeded, uniform};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    /// Gaussian clusters on the unit circle; each class owns `modes_per_class`
    /// evenly interleaved modes.
    #[default]
    Clusters,
    /// Interleaved half-circle arcs, one per class.
    TwoArcs,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DatasetConfig {
    pub name: String,
    pub kind: DatasetKind,
    pub n_classes: usize,
    pub n_samples: usize,
    pub input_dim: usize,
    pub spread: f64,
    pub modes_per_class: usize,
    pub val_fraction: f64,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            name: "clusters4".into(),
            kind: DatasetKind::Clusters,
            n_classes: 4,
            n_samples: 2000,
            input_dim: 2,
            spread: 0.15,
            modes_per_class: 2,
            val_fraction: 0.25,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Split {
    pub inputs: Tensor,
    pub labels: Vec<usize>,
}

impl Split {
    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    pub fn subset(&self, idx: &[usize]) -> Split {
        Split { inputs: self.inputs.select_rows(idx), labels: idx.iter().map(|&i| self.labels[i]).collect() }
    }

    /// Mean feature vector of each class; classes without samples get zeros.
    pub fn class_means(&self, n_classes: usize) -> Vec<Vec<f64>> {
        let d = self.inputs.cols();
        let mut sums = vec![vec![0.0; d]; n_classes];
        let mut counts = vec![0usize; n_classes];
        for (row, &y) in self.inputs.iter_rows().zip(&self.labels) {
            counts[y] += 1;
            sums[y].iter_mut().zip(row).for_each(|(s, v)| *s += v);
        }
        for (s, c) in sums.iter_mut().zip(counts) {
            if c > 0 {
                s.iter_mut().for_each(|v| *v /= c as f64);
            }
        }
        sums
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthDataset {
    pub name: String,
    pub config: DatasetConfig,
    pub train: Split,
    pub val: Split,
}

impl SynthDataset {
    pub fn n_classes(&self) -> usize {
        self.config.n_classes
    }

    pub fn input_dim(&self) -> usize {
        self.config.input_dim
    }
}

pub fn make_dataset(cfg: &DatasetConfig) -> Result<SynthDataset> {
    let c = cfg.n_classes;
    if c < 2 {
        return Err(Error::config("a dataset needs at least two classes"));
    }
    if cfg.n_samples < c {
        return Err(Error::config(format!("{} samples cannot cover {c} classes", cfg.n_samples)));
    }
    if cfg.input_dim < 2 {
        return Err(Error::config("input_dim must be at least 2"));
    }
    if cfg.modes_per_class == 0 || !(cfg.spread >= 0.0) {
        return Err(Error::config("modes_per_class must be positive and spread nonnegative"));
    }
    if !(0.0..1.0).contains(&cfg.val_fraction) {
        return Err(Error::config("val_fraction must lie in [0, 1)"));
    }
    let mut rng = seeded(cfg.seed);
    let n = cfg.n_samples;
    let d = cfg.input_dim;
    let mut data = Vec::with_capacity(n * d);
    let mut labels = Vec::with_capacity(n);
    for i in 0..n {
        let y = i % c;
        let (px, py) = match cfg.kind {
            DatasetKind::Clusters => {
                let m = (i / c) % cfg.modes_per_class;
                let angle = TAU * (y + m * c) as f64 / (c * cfg.modes_per_class) as f64;
                (angle.cos(), angle.sin())
            }
            DatasetKind::TwoArcs => {
                let theta = uniform(&mut rng, 0.0, PI);
                let sign = if y % 2 == 0 { 1.0 } else { -1.0 };
                let cx = y as f64;
                let cy = if y % 2 == 0 { 0.0 } else { 0.5 };
                (cx + theta.cos(), cy + sign * theta.sin())
            }
        };
        data.push(px + cfg.spread * normal(&mut rng));
        data.push(py + cfg.spread * normal(&mut rng));
        for _ in 2..d {
            data.push(cfg.spread * normal(&mut rng));
        }
        labels.push(y);
    }
    let all = Tensor::new(vec![n, d], data)?;
    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let n_val = ((n as f64) * cfg.val_fraction).round() as usize;
    let (val_idx, train_idx) = order.split_at(n_val);
    let full = Split { inputs: all, labels };
    Ok(SynthDataset {
        name: cfg.name.clone(),
        config: cfg.clone(),
        train: full.subset(train_idx),
        val: full.subset(val_idx),
    })
}

/// Accuracy and mean cross-entropy of a classifier on a split.
pub fn evaluate_classifier(arch: &MlpSpec, params: &[f64], split: &Split) -> Result<(f64, f64)> {
    if arch.input_dim() != split.inputs.cols() {
        return Err(Error::contract(format!(
            "classifier input width {} does not match data width {}",
            arch.input_dim(),
            split.inputs.cols()
        )));
    }
    let logits = mlp_predict(arch, params, &split.inputs)?;
    if split.labels.iter().any(|&y| y >= arch.output_dim()) {
        return Err(Error::contract("classifier has fewer outputs than the dataset has classes"));
    }
    let (ce, _) = softmax_cross_entropy(&logits, &split.labels, Reduction::Mean)?;
    let correct = logits.iter_rows().zip(&split.labels).filter(|(row, &y)| argmax(row) == y).count();
    Ok((correct as f64 / split.len().max(1) as f64, ce))
}

pub(crate) fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (j, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = j;
        }
    }
    best
}
