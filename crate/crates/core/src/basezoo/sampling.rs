use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::pretrain::TrajectoryTensor;
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::rng::{normal, seeded};

/// Standard deviation of the optional perturbation added to sampled rows.
pub const NOISE_STD: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SampleConfig {
    pub add_noise: bool,
    pub replacement: bool,
}

impl Default for SampleConfig {
    fn default() -> Self {
        Self { add_noise: false, replacement: true }
    }
}

/// Draws `K·S` checkpoint rows uniformly, sorts them by training iteration and
/// reshapes them to `[K × S × D]`. Also returns the iteration label of every row.
pub fn sample_trajectories(
    x: &TrajectoryTensor,
    k: usize,
    cfg: &SampleConfig,
    seed: u64,
) -> Result<(Tensor, Vec<u64>)> {
    let s = x.saves_per_epoch();
    let rows = x.n_rows();
    let want = k * s;
    if k == 0 {
        return Err(Error::contract("K must be positive"));
    }
    if !cfg.replacement && want > rows {
        return Err(Error::Sampling(format!("{want} rows requested without replacement from {rows}")));
    }
    if k > x.n_epochs() {
        return Err(Error::contract(format!("K = {k} exceeds the {} saved epochs", x.n_epochs())));
    }
    let mut rng = seeded(seed);
    let mut idx: Vec<usize> = if cfg.replacement {
        (0..want).map(|_| rng.random_range(0..rows)).collect()
    } else {
        index::sample(&mut rng, rows, want).into_vec()
    };
    // Rows are stored in iteration order, so sorting indices sorts by time.
    idx.sort_unstable();
    let d = x.dim();
    let mut data = Vec::with_capacity(want * d);
    for &i in &idx {
        data.extend_from_slice(x.row(i));
    }
    if cfg.add_noise {
        data.iter_mut().for_each(|v| *v += NOISE_STD * normal(&mut rng));
    }
    let iters = idx.iter().map(|&i| x.iterations()[i]).collect();
    Ok((Tensor::new(vec![k, s, d], data)?, iters))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::OptimKind;

    fn traj(e: usize, s: usize, d: usize) -> TrajectoryTensor {
        let data: Vec<f64> = (0..e * s * d).map(|i| i as f64).collect();
        let iters = (1..=(e * s) as u64).map(|i| 3 * i).collect();
        TrajectoryTensor::new(Tensor::new(vec![e, s, d], data).unwrap(), iters, None, OptimKind::Sgd, 0.1, vec![0.0; d])
            .unwrap()
    }

    #[test]
    fn all_rows_without_replacement_is_a_copy() {
        let x = traj(6, 1, 3);
        let cfg = SampleConfig { replacement: false, add_noise: false };
        let (out, _) = sample_trajectories(&x, 6, &cfg, 9).unwrap();
        assert_eq!(out.data(), x.data().data());
    }

    #[test]
    fn single_row_is_verbatim() {
        let x = traj(4, 1, 5);
        let (out, it) = sample_trajectories(&x, 1, &SampleConfig::default(), 2).unwrap();
        let pos = x.iterations().iter().position(|&v| v == it[0]).unwrap();
        assert_eq!(out.data(), x.row(pos));
    }

    #[test]
    fn sampled_times_are_nondecreasing() {
        let x = traj(10, 2, 4);
        for seed in 0..20 {
            let (_, it) = sample_trajectories(&x, 3, &SampleConfig::default(), seed).unwrap();
            assert!(it.windows(2).all(|w| w[0] <= w[1]));
        }
    }

    #[test]
    fn errors() {
        let x = traj(3, 2, 2);
        assert!(matches!(sample_trajectories(&x, 4, &SampleConfig::default(), 0), Err(Error::Contract(_))));
        let cfg = SampleConfig { replacement: false, add_noise: false };
        assert!(matches!(sample_trajectories(&x, 4, &cfg, 0), Err(Error::Sampling(_))));
    }
}
