use rand::Rng;
use serde::{Deserialize, Serialize};

use super::models::{PotentialModel, VelocityModel};
use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::pathlib::{cubic_spline_fit, segment_index, GaussPathParams, MarginalBatch, Schedule};
use crate::rng::normal_vec;

/// Random draws shared by the flow-matching losses: one time per row and one
/// standard-normal perturbation per entry.
#[derive(Clone, Debug, PartialEq)]
pub struct FmDraws {
    pub t: Vec<f64>,
    pub xi: Tensor,
}

impl FmDraws {
    pub fn sample<R: Rng + ?Sized>(rng: &mut R, n: usize, dim: usize) -> Self {
        let t = (0..n).map(|_| rng.random::<f64>()).collect();
        let xi = Tensor::new(vec![n, dim], normal_vec(rng, n * dim, 1.0)).expect("shape");
        Self { t, xi }
    }
}

/// Loss value with gradients for the model parameters and, when the model is
/// conditional, for the context rows.
#[derive(Clone, Debug, PartialEq)]
pub struct LossGrads {
    pub loss: f64,
    pub grad_params: Vec<f64>,
    pub grad_ctx: Option<Tensor>,
}

/// Interpolant through the knots used by the multi-marginal loss.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum PathKind {
    #[default]
    PiecewiseLinear,
    CubicSpline,
}

fn regress(
    model: &VelocityModel,
    params: &[f64],
    xt: &Tensor,
    t: &[f64],
    ctx: Option<&Tensor>,
    target: &Tensor,
) -> Result<LossGrads> {
    let n = xt.rows();
    let mut loss = 0.0;
    let (_, grads) = model.forward_backward(params, xt, t, ctx, |v| {
        let mut g = v.clone();
        for (gi, ui) in g.data_mut().iter_mut().zip(target.data()) {
            let r = *gi - ui;
            loss += r * r;
            *gi = 2.0 * r / n as f64;
        }
        Ok(g)
    })?;
    loss /= n as f64;
    let grad_ctx = ctx.map(|_| {
        let start = model.state_dim() + model.header.time_embed.dim();
        grads.input.column_slice(start, start + model.context_dim())
    });
    Ok(LossGrads { loss, grad_params: grads.params, grad_ctx })
}

fn check_pair(x0: &Tensor, x1: &Tensor, draws: &FmDraws) -> Result<()> {
    if x0.shape() != x1.shape() || draws.xi.shape() != x0.shape() || draws.t.len() != x0.rows() {
        return Err(Error::dim("source, target and draws must share one [n × D] shape"));
    }
    Ok(())
}

/// Conditional flow matching on the affine Gaussian path between paired rows
/// of `x0` and `x1`.
pub fn cfm_loss(
    model: &VelocityModel,
    params: &[f64],
    x0: &Tensor,
    x1: &Tensor,
    ctx: Option<&Tensor>,
    path: &GaussPathParams,
    draws: &FmDraws,
) -> Result<LossGrads> {
    check_pair(x0, x1, draws)?;
    let mut xt = x0.clone();
    let mut target = x0.clone();
    for i in 0..x0.rows() {
        let t = draws.t[i];
        let (a, b, ad, bd) = (path.alpha(t), path.beta(t), path.alpha_dot(t), path.beta_dot(t));
        let (p, q, e) = (x0.row(i), x1.row(i), draws.xi.row(i));
        let (xr, ur) = (xt.row_mut(i), target.row_mut(i));
        for j in 0..p.len() {
            match path.schedule {
                Schedule::Linear => {
                    xr[j] = p[j] + t * (q[j] - p[j]) + path.sigma * e[j];
                    ur[j] = q[j] - p[j];
                }
                _ => {
                    xr[j] = b * p[j] + a * q[j] + path.sigma * e[j];
                    ur[j] = ad * q[j] + bd * p[j];
                }
            }
        }
    }
    regress(model, params, &xt, &draws.t, ctx, &target)
}

/// Multi-marginal flow matching. `knots[k]` holds the `k`-th marginal sample of
/// every row; `times` are the knot times.
pub fn mmfm_loss(
    model: &VelocityModel,
    params: &[f64],
    knots: &[Tensor],
    times: &[f64],
    ctx: Option<&Tensor>,
    sigma: f64,
    kind: PathKind,
    draws: &FmDraws,
) -> Result<LossGrads> {
    if knots.len() < 2 || knots.len() != times.len() {
        return Err(Error::contract(format!(
            "multi-marginal loss needs K ≥ 1 and one time per knot, got {} knots and {} times",
            knots.len(),
            times.len()
        )));
    }
    check_pair(&knots[0], &knots[knots.len() - 1], draws)?;
    if times.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::domain("knot times must be strictly increasing"));
    }
    let (t_lo, t_hi) = (times[0], times[times.len() - 1]);
    let n = knots[0].rows();
    let d = knots[0].cols();
    let t: Vec<f64> = draws.t.iter().map(|u| t_lo + u * (t_hi - t_lo)).collect();
    let mut xt = Tensor::zeros(&[n, d]);
    let mut target = Tensor::zeros(&[n, d]);
    for i in 0..n {
        let e = draws.xi.row(i);
        match kind {
            PathKind::PiecewiseLinear => {
                let k = segment_index(times, t[i])?;
                let dt = times[k + 1] - times[k];
                let a = (t[i] - times[k]) / dt;
                let (p, q) = (knots[k].row(i), knots[k + 1].row(i));
                let (xr, ur) = (xt.row_mut(i), target.row_mut(i));
                for j in 0..d {
                    xr[j] = p[j] + a * (q[j] - p[j]) + sigma * e[j];
                    ur[j] = (q[j] - p[j]) / dt;
                }
            }
            PathKind::CubicSpline => {
                let rows: Vec<&[f64]> = knots.iter().map(|kt| kt.row(i)).collect();
                let z = MarginalBatch::new(Tensor::from_rows(&rows)?, times.to_vec())?;
                let s = cubic_spline_fit(&z)?;
                let mu = s.eval(t[i])?;
                let du = s.deriv(t[i])?;
                let (xr, ur) = (xt.row_mut(i), target.row_mut(i));
                for j in 0..d {
                    xr[j] = mu[j] + sigma * e[j];
                    ur[j] = du[j];
                }
            }
        }
    }
    regress(model, params, &xt, &t, ctx, &target)
}

/// Mean over rows of `‖g_i + (x_{t+1} − x_t)/Δt‖²` for given potential gradients `g`.
pub fn jko_residual(grad_v: &Tensor, x_t: &Tensor, x_next: &Tensor, dt: &[f64]) -> Result<f64> {
    if grad_v.shape() != x_t.shape() || x_t.shape() != x_next.shape() || dt.len() != x_t.rows() {
        return Err(Error::dim("gradients, pairs and steps must agree in shape"));
    }
    let n = x_t.rows();
    let mut total = 0.0;
    for i in 0..n {
        for ((g, a), b) in grad_v.row(i).iter().zip(x_t.row(i)).zip(x_next.row(i)) {
            let r = g + (b - a) / dt[i];
            total += r * r;
        }
    }
    Ok(total / n as f64)
}

/// JKO-style potential loss on consecutive pairs:
/// mean over rows of `‖∇ₓV(x_t, t) + (x_{t+1} − x_t)/Δt‖²`.
pub fn jkonet_loss(
    potential: &PotentialModel,
    params: &[f64],
    x_t: &Tensor,
    x_next: &Tensor,
    t: &[f64],
    dt: &[f64],
) -> Result<(f64, Vec<f64>)> {
    if x_t.shape() != x_next.shape() || t.len() != x_t.rows() || dt.len() != x_t.rows() {
        return Err(Error::dim("pairs, times and steps must agree in length"));
    }
    if dt.iter().any(|&h| !(h > 0.0)) {
        return Err(Error::domain("time steps must be positive"));
    }
    let n = x_t.rows();
    let mut offsets = x_next.clone();
    for i in 0..n {
        let base = x_t.row(i);
        for (o, b) in offsets.row_mut(i).iter_mut().zip(base) {
            *o = (*o - b) / dt[i];
        }
    }
    let (obj, mut grad) = potential.grad_matching(params, x_t, t, &offsets)?;
    grad.iter_mut().for_each(|g| *g /= n as f64);
    Ok((obj / n as f64, grad))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ndcore::Activation;
    use crate::otmetrics::grad_check;
    use crate::rng::{normal_vec, seeded};

    fn rand_t(n: usize, d: usize, seed: u64) -> Tensor {
        Tensor::new(vec![n, d], normal_vec(&mut seeded(seed), n * d, 1.0)).unwrap()
    }

    fn zero_model(d: usize) -> VelocityModel {
        let mut m = VelocityModel::new(d, 4, 0, &[6], Activation::Tanh, 0).unwrap();
        m.params.iter_mut().for_each(|p| *p = 0.0);
        m
    }

    #[test]
    fn zero_model_unit_target_has_unit_loss() {
        let m = zero_model(3);
        let x0 = Tensor::zeros(&[1, 3]);
        let x1 = Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        let draws = FmDraws::sample(&mut seeded(1), 1, 3);
        let path = GaussPathParams::default();
        let out = cfm_loss(&m, &m.params, &x0, &x1, None, &path, &draws).unwrap();
        assert_eq!(out.loss, 1.0);
    }

    #[test]
    fn exact_constant_model_has_zero_loss() {
        let mut m = zero_model(2);
        let x0 = Tensor::from_rows(&[vec![0.5, 1.0], vec![0.5, 1.0]]).unwrap();
        let x1 = Tensor::from_rows(&[vec![1.5, -1.0], vec![1.5, -1.0]]).unwrap();
        let n = m.params.len();
        m.params[n - 2] = 1.0;
        m.params[n - 1] = -2.0;
        let draws = FmDraws::sample(&mut seeded(2), 2, 2);
        let out = cfm_loss(&m, &m.params, &x0, &x1, None, &GaussPathParams::default(), &draws).unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn one_segment_mmfm_equals_cfm() {
        let m = VelocityModel::new(5, 6, 0, &[8], Activation::Tanh, 3).unwrap();
        let x0 = rand_t(7, 5, 1);
        let x1 = rand_t(7, 5, 2);
        let draws = FmDraws::sample(&mut seeded(3), 7, 5);
        let path = GaussPathParams { sigma: 0.05, ..GaussPathParams::default() };
        let a = cfm_loss(&m, &m.params, &x0, &x1, None, &path, &draws).unwrap();
        let b =
            mmfm_loss(&m, &m.params, &[x0, x1], &[0.0, 1.0], None, 0.05, PathKind::PiecewiseLinear, &draws).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn constant_knots_give_zero_target() {
        let m = zero_model(4);
        let x = rand_t(3, 4, 5);
        let draws = FmDraws::sample(&mut seeded(4), 3, 4);
        let out = mmfm_loss(
            &m,
            &m.params,
            &[x.clone(), x.clone(), x],
            &[0.0, 0.5, 1.0],
            None,
            1e-3,
            PathKind::PiecewiseLinear,
            &draws,
        )
        .unwrap();
        assert_eq!(out.loss, 0.0);
    }

    #[test]
    fn mmfm_rejects_single_knot() {
        let m = zero_model(2);
        let x = rand_t(2, 2, 0);
        let draws = FmDraws::sample(&mut seeded(4), 2, 2);
        assert!(matches!(
            mmfm_loss(&m, &m.params, &[x], &[0.0], None, 1e-3, PathKind::PiecewiseLinear, &draws),
            Err(Error::Contract(_))
        ));
    }

    #[test]
    fn mmfm_mean_matches_pathlib() {
        // A model with zero weights except the output bias returns a constant, so the
        // loss exposes the target; compare against pwl_velocity row by row.
        use crate::pathlib::{pwl_velocity, MarginalBatch};
        let m = zero_model(3);
        let knots = vec![rand_t(4, 3, 1), rand_t(4, 3, 2), rand_t(4, 3, 3)];
        let times = [0.0, 0.3, 1.0];
        let draws = FmDraws::sample(&mut seeded(9), 4, 3);
        let out = mmfm_loss(&m, &m.params, &knots, &times, None, 0.0, PathKind::PiecewiseLinear, &draws).unwrap();
        let mut expect = 0.0;
        for i in 0..4 {
            let rows: Vec<&[f64]> = knots.iter().map(|k| k.row(i)).collect();
            let z = MarginalBatch::new(Tensor::from_rows(&rows).unwrap(), times.to_vec()).unwrap();
            let u = pwl_velocity(&z, draws.t[i]).unwrap();
            expect += u.iter().map(|v| v * v).sum::<f64>();
        }
        assert!((out.loss - expect / 4.0).abs() < 1e-12);
    }

    #[test]
    fn flow_losses_pass_gradient_checks() {
        for seed in 0..20 {
            let m = VelocityModel::new(8, 4, 3, &[10], Activation::Tanh, seed).unwrap();
            let x0 = rand_t(4, 8, seed + 1);
            let x1 = rand_t(4, 8, seed + 2);
            let xm = rand_t(4, 8, seed + 3);
            let ctx = rand_t(4, 3, seed + 4);
            let draws = FmDraws::sample(&mut seeded(seed), 4, 8);
            let path = GaussPathParams { sigma: 0.1, ..GaussPathParams::default() };
            let f = |p: &[f64]| {
                let o = cfm_loss(&m, p, &x0, &x1, Some(&ctx), &path, &draws).unwrap();
                (o.loss, o.grad_params)
            };
            let r = grad_check(f, &m.params, 1e-5, 1e-4);
            assert!(r.max_rel_err < 1e-5, "cfm seed {seed}: {r:?}");
            for kind in [PathKind::PiecewiseLinear, PathKind::CubicSpline] {
                let f = |p: &[f64]| {
                    let ks = [x0.clone(), xm.clone(), x1.clone()];
                    let o = mmfm_loss(&m, p, &ks, &[0.0, 0.4, 1.0], Some(&ctx), 0.1, kind, &draws).unwrap();
                    (o.loss, o.grad_params)
                };
                let r = grad_check(f, &m.params, 1e-5, 1e-4);
                assert!(r.max_rel_err < 1e-5, "mmfm {kind:?} seed {seed}: {r:?}");
            }
            // context gradient
            let f = |c: &[f64]| {
                let ct = Tensor::new(vec![4, 3], c.to_vec()).unwrap();
                let o = cfm_loss(&m, &m.params, &x0, &x1, Some(&ct), &path, &draws).unwrap();
                (o.loss, o.grad_ctx.unwrap().into_data())
            };
            let r = grad_check(f, ctx.data(), 1e-5, 1e-4);
            assert!(r.max_rel_err < 1e-5, "ctx seed {seed}: {r:?}");
        }
    }

    #[test]
    fn jko_loss_passes_gradient_checks() {
        for seed in 0..20 {
            let p = PotentialModel::new(8, 4, &[10, 6], Activation::Tanh, seed).unwrap();
            let xt = rand_t(5, 8, seed + 10);
            let xn = rand_t(5, 8, seed + 11);
            let t = vec![0.0, 0.25, 0.5, 0.75, 0.25];
            let dt = vec![0.25; 5];
            let f = |q: &[f64]| jkonet_loss(&p, q, &xt, &xn, &t, &dt).unwrap();
            let r = grad_check(f, &p.params, 1e-5, 1e-4);
            assert!(r.max_rel_err < 1e-5, "seed {seed}: {r:?}");
        }
    }

    #[test]
    fn quadratic_potential_reproduces_descent_exactly() {
        let lr = 0.1;
        let xt = rand_t(6, 8, 1);
        let xn = xt.map(|v| v - lr * v);
        let r = jko_residual(&xt, &xt, &xn, &[lr; 6]).unwrap();
        assert!(r < 1e-26, "{r}");
    }

    #[test]
    fn stationary_pairs_measure_gradient_norm() {
        let p = PotentialModel::new(3, 4, &[5], Activation::Tanh, 2).unwrap();
        let x = rand_t(4, 3, 7);
        let t = vec![0.5; 4];
        let (loss, _) = jkonet_loss(&p, &p.params, &x, &x, &t, &[0.1; 4]).unwrap();
        let g = p.grad_x(&x, &t).unwrap();
        let expect = g.data().iter().map(|v| v * v).sum::<f64>() / 4.0;
        assert!((loss - expect).abs() < 1e-12);
    }
}
