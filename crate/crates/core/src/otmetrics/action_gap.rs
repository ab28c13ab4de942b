//! Empirical action gap: half the mean squared mismatch between a curve's velocity
//! and the negative loss gradient, averaged over curves and a uniform time grid.

use crate::error::{Error, Result};
use crate::ndcore::vecops::{add, norm_sq};
use crate::ndcore::Tensor;

/// Per-time mismatch recorded along Euler rollouts of a field.
#[derive(Clone, Debug, PartialEq)]
pub struct GapProfile {
    /// Left-endpoint grid times `0, h, …, 1−h`.
    pub times: Vec<f64>,
    /// Mean over curves of `‖∇L(x_t) + v(x_t, t)‖²` at each grid time (no ½ factor).
    pub mean_sq: Vec<f64>,
    /// Rolled-out states, one `[n_curves × D]` tensor per grid time plus the endpoint.
    pub states: Vec<Tensor>,
}

impl GapProfile {
    /// `½ · h · Σ mean_sq`, the action gap over `[0, 1]`.
    pub fn action_gap(&self) -> f64 {
        0.5 * self.integral_to(self.times.len())
    }

    /// `∫₀^{t_n} E‖∇L + v‖² dt` by the left Riemann sum over the first `n` cells.
    pub fn integral_to(&self, n: usize) -> f64 {
        let h = 1.0 / self.times.len() as f64;
        self.mean_sq[..n.min(self.mean_sq.len())].iter().sum::<f64>() * h
    }
}

/// Rolls each start point forward under `field` with `n_times` Euler steps and records
/// the squared mismatch against `-grad_l` at every left-endpoint time.
pub fn mismatch_profile_from_field<F, G>(field: F, grad_l: G, starts: &Tensor, n_times: usize) -> Result<GapProfile>
where
    F: Fn(&[f64], f64) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    if n_times == 0 {
        return Err(Error::contract("action gap needs at least one time step"));
    }
    if starts.ndim() != 2 || starts.rows() == 0 {
        return Err(Error::dim("starts must be a nonempty [n × D] tensor"));
    }
    let h = 1.0 / n_times as f64;
    let n = starts.rows();
    let mut state = starts.clone();
    let mut times = Vec::with_capacity(n_times);
    let mut mean_sq = Vec::with_capacity(n_times);
    let mut states = vec![state.clone()];
    for step in 0..n_times {
        let t = step as f64 * h;
        let mut acc = 0.0;
        for i in 0..n {
            let x = state.row(i).to_vec();
            let v = field(&x, t);
            let g = grad_l(&x);
            if v.len() != x.len() || g.len() != x.len() {
                return Err(Error::dim("field or gradient oracle returned wrong length"));
            }
            acc += norm_sq(&add(&g, &v));
            let row = state.row_mut(i);
            for (r, vi) in row.iter_mut().zip(&v) {
                *r += h * vi;
            }
        }
        state
            .check_finite("action-gap rollout")
            .map_err(|_| Error::Integration { step, reason: "non-finite state".into() })?;
        times.push(t);
        mean_sq.push(acc / n as f64);
        states.push(state.clone());
    }
    Ok(GapProfile { times, mean_sq, states })
}

/// Action gap of a velocity field, with curves generated by Euler integration.
pub fn action_gap_from_field<F, G>(field: F, grad_l: G, starts: &Tensor, n_times: usize) -> Result<f64>
where
    F: Fn(&[f64], f64) -> Vec<f64>,
    G: Fn(&[f64]) -> Vec<f64>,
{
    Ok(mismatch_profile_from_field(field, grad_l, starts, n_times)?.action_gap())
}

/// Action gap of sampled curves, each `[T × D]` on the uniform grid `t_j = j/(T−1)`.
///
/// Velocities come from central differences in the interior and one-sided
/// differences at the two ends.
pub fn action_gap_from_curves<G>(curves: &[Tensor], grad_l: G) -> Result<f64>
where
    G: Fn(&[f64]) -> Vec<f64>,
{
    if curves.is_empty() {
        return Err(Error::contract("action gap needs at least one curve"));
    }
    let mut total = 0.0;
    let mut count = 0usize;
    for c in curves {
        let t_len = c.rows();
        if c.ndim() != 2 || t_len < 2 {
            return Err(Error::dim("each curve must be [T × D] with T ≥ 2"));
        }
        let h = 1.0 / (t_len - 1) as f64;
        for j in 0..t_len {
            let (lo, hi) = if j == 0 {
                (0, 1)
            } else if j == t_len - 1 {
                (t_len - 2, t_len - 1)
            } else {
                (j - 1, j + 1)
            };
            let span = (hi - lo) as f64 * h;
            let g = grad_l(c.row(j));
            let mismatch: Vec<f64> =
                g.iter().zip(c.row(hi).iter().zip(c.row(lo))).map(|(gi, (a, b))| gi + (a - b) / span).collect();
            total += norm_sq(&mismatch);
            count += 1;
        }
    }
    Ok(0.5 * total / count as f64)
}

/// Right-hand side `e^{(1+2K)t} · gap_integral` of the W2 stability bound.
pub fn w2_bound_rhs(t: f64, k_lip: f64, gap_integral: f64) -> f64 {
    ((1.0 + 2.0 * k_lip) * t).exp() * gap_integral
}

#[cfg(test)]
mod tests {
    use super::*;

    fn starts() -> Tensor {
        Tensor::from_rows(&[vec![1.0, -0.5], vec![0.3, 2.0], vec![-1.0, 0.0]]).unwrap()
    }

    #[test]
    fn exact_gradient_flow_has_zero_gap() {
        let g = action_gap_from_field(|x, _| x.iter().map(|v| -v).collect(), |x| x.to_vec(), &starts(), 50).unwrap();
        assert!(g.abs() < 1e-15);
    }

    #[test]
    fn sampled_exact_curves_have_small_gap() {
        let curves: Vec<Tensor> = (0..3)
            .map(|i| {
                let x0 = starts().row(i).to_vec();
                let rows: Vec<Vec<f64>> = (0..=200)
                    .map(|j| {
                        let t = j as f64 / 200.0;
                        x0.iter().map(|v| v * (-t).exp()).collect()
                    })
                    .collect();
                Tensor::from_rows(&rows).unwrap()
            })
            .collect();
        let g = action_gap_from_curves(&curves, |x| x.to_vec()).unwrap();
        assert!(g < 1e-4, "{g}");
    }

    #[test]
    fn constant_curve_with_zero_gradient() {
        let g = action_gap_from_field(|x, _| vec![0.0; x.len()], |x| vec![0.0; x.len()], &starts(), 10).unwrap();
        assert_eq!(g, 0.0);
    }

    #[test]
    fn constant_offset_gives_half_norm() {
        let c = [0.3, -0.4];
        let g = action_gap_from_field(
            |x, _| x.iter().zip(&c).map(|(v, ci)| -v + ci).collect(),
            |x| x.to_vec(),
            &starts(),
            20,
        )
        .unwrap();
        assert!((g - 0.125).abs() < 1e-12, "{g}");
    }
}
