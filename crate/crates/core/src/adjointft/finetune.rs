use rand::seq::index::sample;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::adjoint::lean_adjoint_backward;
use crate::basezoo::Split;
use crate::error::{Error, Result};
use crate::flowgen::integrate_with_params;
use crate::metatrain::{SourceDist, VelocityModel};
use crate::ndcore::{
    clip_grad_norm, cosine_lr, mlp_backward, mlp_forward, softmax_cross_entropy, MlpSpec, OptimConfig, OptimState,
    Reduction, Tensor,
};
use crate::rng::seeded;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum RewardKind {
    #[default]
    NegCe,
    NegCdc,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RewardSpec {
    pub kind: RewardKind,
    pub batch_size: usize,
    pub reward_lr: f64,
    pub reward_momentum: f64,
    pub pad_reg_weight: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        Self { kind: RewardKind::NegCe, batch_size: 64, reward_lr: 1.5, reward_momentum: 0.01, pad_reg_weight: 0.0 }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FtConfig {
    pub h: f64,
    pub iterations: usize,
    /// Trajectories per iteration (`M`).
    pub traj_batch: usize,
    /// The last `grad_last` grid steps always enter the regression.
    pub grad_last: usize,
    /// Plus `grad_uniform` steps drawn from the first `uniform_window`.
    pub grad_uniform: usize,
    pub uniform_window: usize,
    /// Regress on every grid step instead of the subsampled set.
    pub full_sum: bool,
    pub a1_batches: usize,
    pub grad_clip: f64,
    pub lr: f64,
    pub weight_decay: f64,
    pub eta_min: f64,
}

impl Default for FtConfig {
    fn default() -> Self {
        Self {
            h: 0.025,
            iterations: 150,
            traj_batch: 8,
            grad_last: 10,
            grad_uniform: 10,
            uniform_window: 30,
            full_sum: false,
            a1_batches: 3,
            grad_clip: 1.0,
            lr: 2e-5,
            weight_decay: 5e-4,
            eta_min: 1e-6,
        }
    }
}

impl FtConfig {
    pub fn steps(&self) -> Result<usize> {
        let n = (1.0 / self.h).round();
        if !(self.h > 0.0) || (n * self.h - 1.0).abs() > 1e-9 {
            return Err(Error::config(format!("1/h must be an integer, got h = {}", self.h)));
        }
        Ok(n as usize)
    }
}

/// A terminal loss `ℓ(X₁)` on generated weight vectors; the reward is `−ℓ`.
pub trait Reward {
    /// Per-row loss and gradient for a batch of generated vectors, using one
    /// dataset batch drawn from `rng` for all rows.
    fn loss_grad(&self, x1: &Tensor, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Tensor)>;

    /// Number of leading coordinates that hold classifier parameters; the rest is padding.
    fn active_dim(&self) -> usize;
}

/// Summed cross-entropy of the generated classifier on a batch of `split`.
#[derive(Clone, Debug)]
pub struct NegCeReward {
    pub arch: MlpSpec,
    pub split: Split,
    pub batch_size: usize,
}

impl NegCeReward {
    pub fn new(arch: MlpSpec, split: Split, batch_size: usize) -> Result<Self> {
        if batch_size == 0 || split.len() == 0 {
            return Err(Error::config("reward batch size and dataset must be non-empty"));
        }
        Ok(Self { arch, split, batch_size })
    }
}

/// Loss and parameter gradient of a classifier on `(inputs, labels)`.
pub(crate) fn ce_param_grad(
    arch: &MlpSpec,
    params: &[f64],
    inputs: &Tensor,
    labels: &[usize],
    reduction: Reduction,
) -> Result<(f64, Vec<f64>)> {
    let (logits, cache) = mlp_forward(arch, params, inputs)?;
    let (loss, g) = softmax_cross_entropy(&logits, labels, reduction)?;
    Ok((loss, mlp_backward(&cache, &g)?.params))
}

impl Reward for NegCeReward {
    fn loss_grad(&self, x1: &Tensor, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Tensor)> {
        let idx: Vec<usize> = (0..self.batch_size).map(|_| rng.random_range(0..self.split.len())).collect();
        let batch = self.split.subset(&idx);
        let p = self.arch.param_count();
        let mut losses = Vec::with_capacity(x1.rows());
        let mut grads = Tensor::zeros(x1.shape());
        for (i, row) in x1.iter_rows().enumerate() {
            let (l, g) = ce_param_grad(&self.arch, &row[..p], &batch.inputs, &batch.labels, Reduction::Sum)?;
            losses.push(l);
            grads.row_mut(i)[..p].copy_from_slice(&g);
        }
        Ok((losses, grads))
    }

    fn active_dim(&self) -> usize {
        self.arch.param_count()
    }
}

/// Grid steps that enter the regression this iteration, sorted.
pub fn grad_timesteps<R: Rng + ?Sized>(n_steps: usize, cfg: &FtConfig, rng: &mut R) -> Result<Vec<usize>> {
    if cfg.full_sum {
        return Ok((0..n_steps).collect());
    }
    let last = cfg.grad_last.min(n_steps);
    let window = cfg.uniform_window.min(n_steps - last);
    if cfg.grad_uniform > window {
        return Err(Error::config(format!("cannot draw {} timesteps from a window of {window}", cfg.grad_uniform)));
    }
    let mut out: Vec<usize> = sample(rng, window, cfg.grad_uniform).into_iter().collect();
    out.extend(n_steps - last..n_steps);
    out.sort_unstable();
    Ok(out)
}

fn tile(ctx: Option<&Tensor>, m: usize) -> Option<Tensor> {
    ctx.map(|c| c.select_rows(&vec![0; m]))
}

/// Outcome of one adjoint-matching iteration.
#[derive(Clone, Debug)]
pub struct AmStep {
    pub am_loss: f64,
    pub mean_reward: f64,
    pub grads: Vec<f64>,
}

/// One iteration: on-policy rollouts of the fine-tuned field, terminal adjoint
/// from the reward, lean adjoint through the frozen base field and the
/// regression gradient of `Σ_t ‖v_ft − (v_base − ã_t)‖²` (mean over trajectories).
///
/// `momentum` carries the reward-gradient buffer across iterations.
#[allow(clippy::too_many_arguments)]
pub fn adjoint_matching_step(
    base: &VelocityModel,
    ft_params: &[f64],
    ctx: Option<&Tensor>,
    source: &SourceDist,
    reward: &dyn Reward,
    spec: &RewardSpec,
    cfg: &FtConfig,
    momentum: &mut Option<Tensor>,
    rng: &mut ChaCha8Rng,
) -> Result<AmStep> {
    let n_steps = cfg.steps()?;
    let m = cfg.traj_batch.max(1);
    let ctx_m = tile(ctx, m);
    let x0 = source.sample(rng, m);
    let traj = integrate_with_params(base, ft_params, &x0, ctx_m.as_ref(), n_steps)?;
    let x1 = traj.endpoint();

    let mut a1 = Tensor::zeros(x1.shape());
    let mut loss_sum = 0.0;
    let nb = cfg.a1_batches.max(1);
    for _ in 0..nb {
        let (l, g) = reward.loss_grad(x1, rng)?;
        loss_sum += l.iter().sum::<f64>();
        a1.data_mut().iter_mut().zip(g.data()).for_each(|(a, gi)| *a += gi / nb as f64);
    }
    let mut mean_loss = loss_sum / (nb * m) as f64;
    let active = reward.active_dim();
    if spec.pad_reg_weight > 0.0 && active < x1.cols() {
        let mut pad = 0.0;
        for i in 0..m {
            for j in active..x1.cols() {
                let v = x1.row(i)[j];
                pad += v * v;
                a1.row_mut(i)[j] += 2.0 * spec.pad_reg_weight * v;
            }
        }
        mean_loss += spec.pad_reg_weight * pad / m as f64;
    }
    if let Err(Error::NonFinite { index, .. }) = a1.check_finite("reward gradient") {
        return Err(Error::NonFinite { index, context: "reward gradient".into() });
    }
    if !mean_loss.is_finite() {
        return Err(Error::NonFinite { index: 0, context: "reward".into() });
    }
    let buf = match momentum.take() {
        Some(mut b) if b.shape() == a1.shape() => {
            b.data_mut().iter_mut().zip(a1.data()).for_each(|(bi, gi)| *bi = spec.reward_momentum * *bi + gi);
            b
        }
        _ => a1,
    };
    let a1 = buf.map(|v| spec.reward_lr * v);
    *momentum = Some(buf);

    let adj = lean_adjoint_backward(base, ctx_m.as_ref(), &traj, &a1, cfg.h)?;
    let mut grads = vec![0.0; ft_params.len()];
    let mut am_loss = 0.0;
    for j in grad_timesteps(n_steps, cfg, rng)? {
        let x = &traj.states[j];
        let t = vec![traj.times[j]; m];
        let vb = base.forward(x, &t, ctx_m.as_ref())?;
        let mut step_loss = 0.0;
        let (_, g) = base.forward_backward(ft_params, x, &t, ctx_m.as_ref(), |vf| {
            let mut d = vf.clone();
            for ((di, bi), ai) in d.data_mut().iter_mut().zip(vb.data()).zip(adj.adjoints[j].data()) {
                let r = *di - (bi - ai);
                step_loss += r * r;
                *di = 2.0 * r / m as f64;
            }
            Ok(d)
        })?;
        am_loss += step_loss / m as f64;
        grads.iter_mut().zip(&g.params).for_each(|(a, b)| *a += b);
    }
    Ok(AmStep { am_loss, mean_reward: -mean_loss, grads })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct FtLogRow {
    pub iteration: usize,
    pub mean_reward: f64,
    pub am_loss: f64,
}

#[derive(Clone, Debug)]
pub struct FtResult {
    pub model: VelocityModel,
    pub log: Vec<FtLogRow>,
}

/// Fine-tunes a copy of `base` for `cfg.iterations` AdamW steps with cosine
/// learning-rate decay; `base` itself is never modified.
#[allow(clippy::too_many_arguments)]
pub fn finetune(
    base: &VelocityModel,
    ctx: Option<&Tensor>,
    source: &SourceDist,
    reward: &dyn Reward,
    spec: &RewardSpec,
    cfg: &FtConfig,
    seed: u64,
) -> Result<FtResult> {
    cfg.steps()?;
    if source.dim != base.state_dim() {
        return Err(Error::dim("source width does not match the model"));
    }
    let mut params = base.params.clone();
    let mut opt = OptimState::new(OptimConfig::adamw(cfg.lr, cfg.weight_decay), params.len())?;
    let mut rng = seeded(seed);
    let mut momentum = None;
    let mut log = Vec::with_capacity(cfg.iterations);
    for it in 0..cfg.iterations {
        let mut step = adjoint_matching_step(base, &params, ctx, source, reward, spec, cfg, &mut momentum, &mut rng)?;
        if !step.am_loss.is_finite() {
            return Err(Error::Training(format!("adjoint matching diverged at iteration {it}")));
        }
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut step.grads, cfg.grad_clip);
        }
        opt.set_lr(cosine_lr(cfg.lr, cfg.eta_min, it, cfg.iterations));
        opt.step(&mut params, &step.grads).map_err(|e| Error::Training(format!("iteration {it}: {e}")))?;
        log.push(FtLogRow { iteration: it, mean_reward: step.mean_reward, am_loss: step.am_loss });
    }
    let mut model = base.clone();
    model.params = params;
    Ok(FtResult { model, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::metatrain::SourceKind;
    use crate::ndcore::Activation;

    struct Quadratic {
        target: Vec<f64>,
    }

    impl Reward for Quadratic {
        fn loss_grad(&self, x1: &Tensor, _: &mut ChaCha8Rng) -> Result<(Vec<f64>, Tensor)> {
            let mut g = x1.clone();
            let mut l = Vec::new();
            for i in 0..x1.rows() {
                let row = g.row_mut(i);
                let mut s = 0.0;
                for (v, t) in row.iter_mut().zip(&self.target) {
                    s += (*v - t).powi(2);
                    *v = 2.0 * (*v - t);
                }
                l.push(s);
            }
            Ok((l, g))
        }

        fn active_dim(&self) -> usize {
            self.target.len()
        }
    }

    struct Zero(usize);

    impl Reward for Zero {
        fn loss_grad(&self, x1: &Tensor, _: &mut ChaCha8Rng) -> Result<(Vec<f64>, Tensor)> {
            Ok((vec![0.0; x1.rows()], Tensor::zeros(x1.shape())))
        }

        fn active_dim(&self) -> usize {
            self.0
        }
    }

    fn setup() -> (VelocityModel, SourceDist) {
        let v = VelocityModel::new(3, 4, 0, &[16], Activation::Tanh, 2).unwrap();
        (v, SourceDist::new(SourceKind::StdGauss, None, 3).unwrap())
    }

    fn small_cfg(iterations: usize) -> FtConfig {
        FtConfig {
            h: 0.1,
            iterations,
            grad_last: 3,
            grad_uniform: 3,
            uniform_window: 7,
            lr: 1e-2,
            ..FtConfig::default()
        }
    }

    #[test]
    fn timestep_subset_has_the_stated_shape() {
        let cfg = FtConfig::default();
        let mut rng = seeded(0);
        for _ in 0..20 {
            let ts = grad_timesteps(40, &cfg, &mut rng).unwrap();
            assert_eq!(ts.len(), 20);
            assert!(ts.windows(2).all(|w| w[0] < w[1]));
            assert_eq!(&ts[10..], &(30..40).collect::<Vec<_>>()[..]);
            assert!(ts[..10].iter().all(|&t| t < 30));
        }
        let all = grad_timesteps(40, &FtConfig { full_sum: true, ..cfg }, &mut rng).unwrap();
        assert_eq!(all, (0..40).collect::<Vec<_>>());
    }

    #[test]
    fn non_integral_step_count_is_rejected() {
        let cfg = FtConfig { h: 0.03, ..FtConfig::default() };
        assert!(matches!(cfg.steps(), Err(Error::Config(_))));
    }

    #[test]
    fn zero_iterations_return_the_base_field() {
        let (v, src) = setup();
        let r = finetune(&v, None, &src, &Zero(3), &RewardSpec::default(), &small_cfg(0), 0).unwrap();
        assert_eq!(r.model, v);
        assert!(r.log.is_empty());
    }

    #[test]
    fn zero_reward_leaves_the_field_at_base() {
        let (v, src) = setup();
        let cfg = FtConfig { weight_decay: 0.0, ..small_cfg(10) };
        let r = finetune(&v, None, &src, &Zero(3), &RewardSpec::default(), &cfg, 0).unwrap();
        assert!(r.log.iter().all(|row| row.am_loss == 0.0));
        assert_eq!(r.model.params, v.params);

        // Decoupled weight decay alone moves the field; regression keeps it close.
        let cfg = FtConfig { lr: FtConfig::default().lr, ..small_cfg(20) };
        let r = finetune(&v, None, &src, &Zero(3), &RewardSpec::default(), &cfg, 0).unwrap();
        assert!(r.log.iter().all(|row| row.am_loss < 1e-6), "{:?}", r.log.last());
    }

    #[test]
    fn base_field_is_never_modified() {
        let (v, src) = setup();
        let before = v.clone();
        let reward = Quadratic { target: vec![2.0, -1.0, 0.5] };
        let r = finetune(&v, None, &src, &reward, &RewardSpec::default(), &small_cfg(5), 2).unwrap();
        assert_eq!(v, before);
        assert_ne!(r.model.params, v.params);
    }

    #[test]
    fn quadratic_reward_is_improved() {
        let (v, src) = setup();
        let reward = Quadratic { target: vec![2.0, -1.0, 0.5] };
        let spec = RewardSpec { reward_lr: 0.5, ..RewardSpec::default() };
        let cfg = FtConfig { iterations: 60, ..small_cfg(60) };
        let r = finetune(&v, None, &src, &reward, &spec, &cfg, 1).unwrap();
        let head: f64 = r.log[..10].iter().map(|l| l.mean_reward).sum::<f64>() / 10.0;
        let tail: f64 = r.log[50..].iter().map(|l| l.mean_reward).sum::<f64>() / 10.0;
        assert!(tail > head + 0.5, "{head} -> {tail}");
    }

    #[test]
    fn one_step_lowers_the_matching_loss() {
        let (v, src) = setup();
        let reward = Quadratic { target: vec![1.0, 1.0, 1.0] };
        let spec = RewardSpec { reward_momentum: 0.0, ..RewardSpec::default() };
        let cfg = FtConfig { full_sum: true, ..small_cfg(1) };
        let step = |p: &[f64]| {
            let mut mom = None;
            adjoint_matching_step(&v, p, None, &src, &reward, &spec, &cfg, &mut mom, &mut seeded(4)).unwrap()
        };
        let s0 = step(&v.params);
        let moved: Vec<f64> = v.params.iter().zip(&s0.grads).map(|(p, g)| p - 1e-3 * g).collect();
        assert!(step(&moved).am_loss < s0.am_loss);
    }

    #[test]
    fn padding_penalty_reaches_the_terminal_adjoint() {
        let (v, src) = setup();
        let spec = RewardSpec { pad_reg_weight: 1.0, ..RewardSpec::default() };
        let cfg = small_cfg(1);
        let mut mom = None;
        let s =
            adjoint_matching_step(&v, &v.params, None, &src, &Zero(1), &spec, &cfg, &mut mom, &mut seeded(0)).unwrap();
        assert!(s.mean_reward < 0.0);
        assert!(s.am_loss > 0.0);
        assert!(mom.unwrap().data().iter().step_by(3).all(|&g| g == 0.0));
    }
}
