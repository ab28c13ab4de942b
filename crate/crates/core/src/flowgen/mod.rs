//! Generation by fixed-step Euler integration of a velocity field or by
//! discrete potential descent, plus evaluation of generated classifiers.

use serde::{Deserialize, Serialize};

use crate::basezoo::{evaluate_classifier, SynthDataset};
use crate::error::{Error, Result};
use crate::metatrain::{MetaModel, PotentialModel, TrainedMeta, VelocityModel};
use crate::ndcore::{MlpSpec, Tensor};
use crate::rng::seeded;
use crate::weightcodec::{VaeModel, WeightVec};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct GenConfig {
    pub steps: usize,
    pub seed: u64,
    pub decode: bool,
    /// Evaluate every this many steps in [`trajectory_losses`].
    pub record_every: usize,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self { steps: 100, seed: 0, decode: false, record_every: 1 }
    }
}

/// States of a batch of trajectories at the grid times.
#[derive(Clone, Debug, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    /// One `[n × D]` tensor per grid time, including both endpoints.
    pub states: Vec<Tensor>,
}

impl Trajectory {
    pub fn endpoint(&self) -> &Tensor {
        self.states.last().expect("trajectory is never empty")
    }

    pub fn steps(&self) -> usize {
        self.states.len() - 1
    }
}

fn check_state(x: &Tensor, step: usize) -> Result<()> {
    x.check_finite("state").map_err(|_| Error::Integration { step, reason: "state became non-finite".into() })
}

/// Euler rollout `x_{t+h} = x_t + h·v(x_t, t)` with `h = 1/steps`, evaluating the
/// field at left endpoints `0, h, …, 1−h`.
pub fn integrate_field<F>(mut field: F, x0: &Tensor, steps: usize) -> Result<Trajectory>
where
    F: FnMut(&Tensor, f64) -> Result<Tensor>,
{
    if steps == 0 {
        return Err(Error::config("steps must be at least 1"));
    }
    let h = 1.0 / steps as f64;
    let mut states = Vec::with_capacity(steps + 1);
    let mut times = Vec::with_capacity(steps + 1);
    let mut x = x0.clone();
    check_state(&x, 0)?;
    for s in 0..steps {
        let t = s as f64 * h;
        let v = field(&x, t)?;
        if v.shape() != x.shape() {
            return Err(Error::dim("field returned the wrong shape"));
        }
        let mut next = x.clone();
        next.data_mut().iter_mut().zip(v.data()).for_each(|(a, b)| *a += h * b);
        check_state(&next, s + 1)?;
        states.push(std::mem::replace(&mut x, next));
        times.push(t);
    }
    states.push(x);
    times.push(1.0);
    Ok(Trajectory { times, states })
}

pub fn integrate(model: &VelocityModel, x0: &Tensor, ctx: Option<&Tensor>, cfg: &GenConfig) -> Result<Trajectory> {
    integrate_with_params(model, &model.params, x0, ctx, cfg.steps)
}

pub fn integrate_with_params(
    model: &VelocityModel,
    params: &[f64],
    x0: &Tensor,
    ctx: Option<&Tensor>,
    steps: usize,
) -> Result<Trajectory> {
    if x0.cols() != model.state_dim() {
        return Err(Error::dim("source width does not match the model"));
    }
    let n = x0.rows();
    integrate_field(|x, t| model.forward_with(params, x, &vec![t; n], ctx), x0, steps)
}

/// Potential descent `x_{j+1} = x_j − τ ∇ₓV(x_j, t_j)` with `τ = 1/k`, `t_j = j/k`.
pub fn jko_generate(potential: &PotentialModel, x0: &Tensor, k_steps: usize) -> Result<Trajectory> {
    if k_steps == 0 {
        return Err(Error::config("JKO generation needs at least one step"));
    }
    let n = x0.rows();
    integrate_field(|x, t| Ok(potential.grad_x(x, &vec![t; n])?.map(|g| -g)), x0, k_steps)
}

/// Runs the meta-model from `x0` with `steps` Euler steps (velocity models) or
/// `steps` descent steps (potentials).
pub fn run_meta(meta: &TrainedMeta, x0: &Tensor, ctx: Option<&Tensor>, steps: usize) -> Result<Trajectory> {
    match &meta.model {
        MetaModel::Velocity(v) => integrate_with_params(v, &v.params, x0, ctx, steps),
        MetaModel::Potential(p) => jko_generate(p, x0, steps),
    }
}

/// Draws `n` source samples and returns the generated endpoints.
pub fn generate(meta: &TrainedMeta, n: usize, ctx: Option<&Tensor>, steps: usize, seed: u64) -> Result<Tensor> {
    let x0 = meta.source.sample(&mut seeded(seed), n);
    Ok(run_meta(meta, &x0, ctx, steps)?.endpoint().clone())
}

/// Validation accuracy and cross-entropy of a weight vector's classifier.
pub fn eval_weights(w: &WeightVec, ds: &SynthDataset) -> Result<(f64, f64)> {
    evaluate_classifier(w.arch(), w.params(), &ds.val)
}

/// Mean accuracy and loss over the rows of `states`, each decoded (when a VAE is
/// given) and read as a padded parameter vector of `arch`.
pub fn eval_rows(states: &Tensor, arch: &MlpSpec, ds: &SynthDataset, vae: Option<&VaeModel>) -> Result<(f64, f64)> {
    let decoded;
    let rows = match vae {
        Some(v) => {
            decoded = v.decode(states)?;
            &decoded
        }
        None => states,
    };
    if rows.cols() < arch.param_count() {
        return Err(Error::contract("state width cannot hold the base architecture"));
    }
    let (mut acc, mut loss) = (0.0, 0.0);
    for r in rows.iter_rows() {
        let (a, l) = evaluate_classifier(arch, &r[..arch.param_count()], &ds.val)?;
        acc += a;
        loss += l;
    }
    let n = rows.rows() as f64;
    Ok((acc / n, loss / n))
}

/// One row of the inference-trajectory loss series.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrajPoint {
    pub step: usize,
    pub t: f64,
    pub val_loss: f64,
    pub val_acc: f64,
}

/// Validation loss and accuracy of intermediate states every `record_every`
/// steps, always including the first and last state.
pub fn trajectory_losses(
    traj: &Trajectory,
    arch: &MlpSpec,
    ds: &SynthDataset,
    vae: Option<&VaeModel>,
    record_every: usize,
) -> Result<Vec<TrajPoint>> {
    if record_every == 0 {
        return Err(Error::config("record_every must be positive"));
    }
    let last = traj.steps();
    let mut out = Vec::new();
    for s in 0..=last {
        if s % record_every == 0 || s == last {
            let (val_acc, val_loss) = eval_rows(&traj.states[s], arch, ds, vae)?;
            out.push(TrajPoint { step: s, t: traj.times[s], val_loss, val_acc });
        }
    }
    Ok(out)
}

/// First normalized time at which the loss series is within `rel` of its final value.
pub fn time_to_within(series: &[TrajPoint], rel: f64) -> f64 {
    let fin = series.last().map(|p| p.val_loss).unwrap_or(0.0);
    series.iter().find(|p| (p.val_loss - fin).abs() <= rel * fin.abs()).map(|p| p.t).unwrap_or(1.0)
}
