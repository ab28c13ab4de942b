use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::basezoo::{sample_trajectories, SampleConfig, TrajectoryTensor};
use crate::error::{Error, Result};
use crate::ndcore::vecops::dist_sq;
use crate::ndcore::{kaiming_init, InitMode, MlpSpec, OptimKind, Tensor};
use crate::otmetrics::linear_assignment;
use crate::rng::{normal_vec, seeded};

/// Source distribution `p₀`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum SourceKind {
    #[default]
    KaimingUniform,
    KaimingNormal,
    StdGauss,
}

#[derive(Clone, Debug, PartialEq)]
pub struct SourceDist {
    pub kind: SourceKind,
    pub arch: Option<MlpSpec>,
    pub dim: usize,
}

impl SourceDist {
    pub fn new(kind: SourceKind, arch: Option<MlpSpec>, dim: usize) -> Result<Self> {
        match (&kind, &arch) {
            (SourceKind::StdGauss, _) => {}
            (_, None) => return Err(Error::config("Kaiming sources need a base architecture")),
            (_, Some(a)) if a.param_count() > dim => {
                return Err(Error::dim("architecture does not fit the state dimension"))
            }
            _ => {}
        }
        Ok(Self { kind, arch, dim })
    }

    /// `n` samples as an `[n × dim]` tensor; Kaiming samples are zero-padded.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R, n: usize) -> Tensor {
        let mut data = Vec::with_capacity(n * self.dim);
        for _ in 0..n {
            match (self.kind, &self.arch) {
                (SourceKind::StdGauss, _) => data.extend(normal_vec(rng, self.dim, 1.0)),
                (k, Some(a)) => {
                    let mode = if k == SourceKind::KaimingNormal { InitMode::Normal } else { InitMode::Uniform };
                    let mut p = kaiming_init(a, mode, rng);
                    p.resize(self.dim, 0.0);
                    data.extend(p);
                }
                _ => unreachable!("validated in new"),
            }
        }
        Tensor::new(vec![n, self.dim], data).expect("shape")
    }
}

/// How knots are picked from each recorded trajectory.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum KnotSelection {
    /// Save epochs nearest to the fractions `k/K` of the run.
    #[default]
    Grid,
    /// Uniform draws sorted by time.
    Alg1,
}

/// How rows of different knots are paired inside a training batch.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Coupling {
    /// Each knot is sampled independently (product of marginals).
    #[default]
    Independent,
    /// Every knot uses the same zoo row, i.e. the same recorded trajectory.
    Trajectory,
    /// Independent draws re-paired knot to knot by exact minibatch assignment.
    MinibatchOt,
}

/// Time-indexed marginal samples: `knots[k]` is `[n × D]`, aligned by row along
/// recorded trajectories, with `knots[0]` the initializations.
#[derive(Clone, Debug, PartialEq)]
pub struct WeightZoo {
    pub knots: Vec<Tensor>,
    pub times: Vec<f64>,
    pub arch: Option<MlpSpec>,
    pub optimizer: OptimKind,
    /// Raw context features per row, fed to a context encoder.
    pub contexts: Option<Tensor>,
}

impl WeightZoo {
    pub fn new(knots: Vec<Tensor>, times: Vec<f64>, arch: Option<MlpSpec>, optimizer: OptimKind) -> Result<Self> {
        if knots.len() < 2 || knots.len() != times.len() {
            return Err(Error::contract("a zoo needs at least two knots, one time each"));
        }
        let shape = knots[0].shape().to_vec();
        if shape.len() != 2 || shape[0] == 0 {
            return Err(Error::contract("zoo knots must be nonempty [n × D] tensors"));
        }
        if knots.iter().any(|k| k.shape() != shape.as_slice()) {
            return Err(Error::dim("all knots must share one shape"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("knot times must be strictly increasing"));
        }
        Ok(Self { knots, times, arch, optimizer, contexts: None })
    }

    pub fn with_contexts(mut self, contexts: Tensor) -> Result<Self> {
        if contexts.rows() != self.len() {
            return Err(Error::dim("one context row per zoo row is required"));
        }
        self.contexts = Some(contexts);
        Ok(self)
    }

    /// Builds `K+1` knots on the uniform grid from recorded trajectories; each run
    /// contributes `saves_per_epoch` rows and knot 0 holds the run's initialization.
    pub fn from_trajectories(runs: &[TrajectoryTensor], k: usize, selection: KnotSelection, seed: u64) -> Result<Self> {
        let first = runs.first().ok_or_else(|| Error::contract("no trajectories given"))?;
        if k == 0 {
            return Err(Error::contract("K must be at least 1"));
        }
        let d = first.dim();
        let mut rows: Vec<Vec<f64>> = vec![Vec::new(); k + 1];
        for (r, run) in runs.iter().enumerate() {
            if run.dim() != d || run.saves_per_epoch() != first.saves_per_epoch() {
                return Err(Error::dim("all trajectories must share width and saves per epoch"));
            }
            if run.optimizer() != first.optimizer() {
                return Err(Error::contract("trajectories mix optimizers"));
            }
            let s = run.saves_per_epoch();
            for _ in 0..s {
                rows[0].extend_from_slice(run.init());
            }
            match selection {
                KnotSelection::Grid => {
                    let e = run.n_epochs();
                    if k > e {
                        return Err(Error::contract(format!("K = {k} exceeds the {e} saved epochs")));
                    }
                    for j in 1..=k {
                        let epoch = ((j * e) as f64 / k as f64).round() as usize - 1;
                        for si in 0..s {
                            rows[j].extend_from_slice(run.checkpoint(epoch, si));
                        }
                    }
                }
                KnotSelection::Alg1 => {
                    let (sampled, _) =
                        sample_trajectories(run, k, &SampleConfig::default(), crate::rng::derive_seed(seed, r as u64))?;
                    for j in 1..=k {
                        let off = (j - 1) * s * d;
                        rows[j].extend_from_slice(&sampled.data()[off..off + s * d]);
                    }
                }
            }
        }
        let n = rows[0].len() / d;
        let knots = rows.into_iter().map(|r| Tensor::new(vec![n, d], r)).collect::<Result<Vec<_>>>()?;
        let times = (0..=k).map(|j| j as f64 / k as f64).collect();
        Self::new(knots, times, first.arch().cloned(), first.optimizer())
    }

    pub fn len(&self) -> usize {
        self.knots[0].rows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dim(&self) -> usize {
        self.knots[0].cols()
    }

    /// Number of segments `K`.
    pub fn segments(&self) -> usize {
        self.knots.len() - 1
    }

    pub fn endpoints(&self) -> &Tensor {
        &self.knots[self.segments()]
    }

    /// Rows for one batch: `out[k]` are the row indices used for knot `k`.
    pub(crate) fn batch_rows<R: Rng + ?Sized>(
        &self,
        anchor: &[usize],
        coupling: Coupling,
        rng: &mut R,
    ) -> Vec<Vec<usize>> {
        let n = self.len();
        let kk = self.knots.len();
        match coupling {
            Coupling::Trajectory => vec![anchor.to_vec(); kk],
            Coupling::Independent | Coupling::MinibatchOt => {
                let mut out: Vec<Vec<usize>> = (0..kk)
                    .map(|k| {
                        if k + 1 == kk {
                            anchor.to_vec()
                        } else {
                            (0..anchor.len()).map(|_| rng.random_range(0..n)).collect()
                        }
                    })
                    .collect();
                if coupling == Coupling::MinibatchOt {
                    for k in (0..kk - 1).rev() {
                        let perm = ot_pairing(&self.knots[k + 1], &out[k + 1], &self.knots[k], &out[k]);
                        out[k] = perm.into_iter().map(|j| out[k][j]).collect();
                    }
                }
                out
            }
        }
    }
}

/// For each row of `a[ia]`, the index into `ib` it is matched to.
pub(crate) fn ot_pairing(a: &Tensor, ia: &[usize], b: &Tensor, ib: &[usize]) -> Vec<usize> {
    let m = ia.len();
    let mut cost = vec![0.0; m * m];
    for (i, &ra) in ia.iter().enumerate() {
        for (j, &rb) in ib.iter().enumerate() {
            cost[i * m + j] = dist_sq(a.row(ra), b.row(rb));
        }
    }
    linear_assignment(&cost, m).expect("finite square cost")
}

/// Re-pairs source rows with target rows by exact minibatch OT; returns the
/// permuted source.
pub fn ot_pair_source(x0: &Tensor, x1: &Tensor) -> Tensor {
    let idx: Vec<usize> = (0..x0.rows()).collect();
    let perm = ot_pairing(x1, &idx, x0, &idx);
    x0.select_rows(&perm)
}

/// Gradient-descent trajectories on `L(x) = ½‖x‖²` from `N(0, I)` starts.
///
/// Each run takes `steps` iterations of step `lr` and saves every `save_every`
/// iterations, so the continuous-time limit is `x_t = x₀ e^{−t}` with
/// `t = iteration · lr`.
pub fn quadratic_flow_runs(
    n_runs: usize,
    dim: usize,
    lr: f64,
    steps: usize,
    save_every: usize,
    seed: u64,
) -> Result<Vec<TrajectoryTensor>> {
    if save_every == 0 || steps % save_every != 0 {
        return Err(Error::config("steps must be a positive multiple of save_every"));
    }
    let mut rng = seeded(seed);
    (0..n_runs)
        .map(|_| {
            let init = normal_vec(&mut rng, dim, 1.0);
            let mut x = init.clone();
            let mut data = Vec::new();
            let mut iters = Vec::new();
            for it in 1..=steps {
                x.iter_mut().for_each(|v| *v -= lr * *v);
                if it % save_every == 0 {
                    data.extend_from_slice(&x);
                    iters.push(it as u64);
                }
            }
            let e = iters.len();
            TrajectoryTensor::new(Tensor::new(vec![e, 1, dim], data)?, iters, None, OptimKind::Sgd, lr, init)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_knots_follow_trajectories() {
        let runs = quadratic_flow_runs(3, 4, 0.01, 100, 10, 1).unwrap();
        let zoo = WeightZoo::from_trajectories(&runs, 2, KnotSelection::Grid, 0).unwrap();
        assert_eq!(zoo.len(), 3);
        assert_eq!(zoo.times, vec![0.0, 0.5, 1.0]);
        for r in 0..3 {
            assert_eq!(zoo.knots[0].row(r), runs[r].init());
            assert_eq!(zoo.knots[2].row(r), runs[r].last());
            assert_eq!(zoo.knots[1].row(r), runs[r].checkpoint(4, 0));
        }
    }

    #[test]
    fn trajectory_coupling_reuses_rows() {
        let runs = quadratic_flow_runs(5, 2, 0.1, 10, 1, 0).unwrap();
        let zoo = WeightZoo::from_trajectories(&runs, 3, KnotSelection::Alg1, 0).unwrap();
        let rows = zoo.batch_rows(&[1, 3], Coupling::Trajectory, &mut seeded(0));
        assert!(rows.iter().all(|r| r == &vec![1, 3]));
    }

    #[test]
    fn ot_pairing_recovers_a_known_matching() {
        let x1 = Tensor::from_rows(&[vec![0.0], vec![10.0], vec![20.0]]).unwrap();
        let x0 = Tensor::from_rows(&[vec![19.0], vec![1.0], vec![11.0]]).unwrap();
        let p = ot_pair_source(&x0, &x1);
        assert_eq!(p.data(), &[1.0, 11.0, 19.0]);
    }

    #[test]
    fn kaiming_source_is_padded() {
        let a = MlpSpec::new(vec![2, 3], crate::ndcore::Activation::Relu).unwrap();
        let s = SourceDist::new(SourceKind::KaimingUniform, Some(a), 12).unwrap();
        let x = s.sample(&mut seeded(2), 4);
        assert_eq!(x.shape(), &[4, 12]);
        assert!(x.iter_rows().all(|r| r[9..].iter().all(|&v| v == 0.0) && r[8] == 0.0));
        assert!(SourceDist::new(SourceKind::KaimingNormal, None, 3).is_err());
    }
}
