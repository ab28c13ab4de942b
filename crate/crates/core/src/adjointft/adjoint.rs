use crate::error::{Error, Result};
use crate::flowgen::Trajectory;
use crate::metatrain::VelocityModel;
use crate::ndcore::Tensor;

/// Lean adjoints `ã_t` on the forward grid; `adjoints[j]` pairs with `states[j]`.
#[derive(Clone, Debug, PartialEq)]
pub struct AdjointState {
    pub times: Vec<f64>,
    pub states: Vec<Tensor>,
    pub adjoints: Vec<Tensor>,
}

impl AdjointState {
    /// Gradient of the terminal objective with respect to the initial state.
    pub fn initial(&self) -> &Tensor {
        &self.adjoints[0]
    }
}

/// Backward recursion `ã_j = ã_{j+1} + h·(∂v/∂x)(X_j, t_j)ᵀ ã_{j+1}` for an Euler
/// rollout with step `h`.
///
/// `vjp(x, t, a)` must return `(∂v/∂x)(x, t)ᵀ a` row-wise. The recursion is the
/// exact chain rule of the discrete rollout, so `ã_0` is the gradient of the
/// terminal objective with respect to `X_0`.
pub fn lean_adjoint_with<F>(mut vjp: F, traj: &Trajectory, a1: &Tensor, h: f64) -> Result<AdjointState>
where
    F: FnMut(&Tensor, f64, &Tensor) -> Result<Tensor>,
{
    let n = traj.steps();
    if n == 0 || ((n as f64) * h - 1.0).abs() > 1e-9 {
        return Err(Error::contract(format!("trajectory has {n} steps but h = {h} implies {}", (1.0 / h).round())));
    }
    for (j, &t) in traj.times.iter().enumerate() {
        if (t - j as f64 * h).abs() > 1e-9 {
            return Err(Error::contract("trajectory times are not on the h-grid"));
        }
    }
    if a1.shape() != traj.endpoint().shape() {
        return Err(Error::dim("terminal adjoint shape differs from the state"));
    }
    let mut adjoints = vec![a1.clone(); n + 1];
    for j in (0..n).rev() {
        let a = &adjoints[j + 1];
        let jt = vjp(&traj.states[j], traj.times[j], a)?;
        let mut next = a.clone();
        next.data_mut().iter_mut().zip(jt.data()).for_each(|(x, g)| *x += h * g);
        adjoints[j] = next;
    }
    Ok(AdjointState { times: traj.times.clone(), states: traj.states.clone(), adjoints })
}

/// Lean adjoint through the frozen base field of `model`.
pub fn lean_adjoint_backward(
    model: &VelocityModel,
    ctx: Option<&Tensor>,
    traj: &Trajectory,
    a1: &Tensor,
    h: f64,
) -> Result<AdjointState> {
    lean_adjoint_with(|x, t, a| model.vjp_state(x, &vec![t; x.rows()], ctx, a), traj, a1, h)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::flowgen::{integrate_field, integrate_with_params};
    use crate::ndcore::{Activation, Tensor};
    use crate::otmetrics::grad_check;
    use crate::rng::{normal_vec, seeded};

    /// Row-wise `x ↦ M x` (or `Mᵀ x`) for a `2 × 2` matrix.
    fn apply(m: [[f64; 2]; 2], x: &Tensor, transpose: bool) -> Result<Tensor> {
        let rows: Vec<Vec<f64>> = x
            .iter_rows()
            .map(|r| (0..2).map(|i| (0..2).map(|j| if transpose { m[j][i] } else { m[i][j] } * r[j]).sum()).collect())
            .collect();
        Tensor::from_rows(&rows)
    }

    #[test]
    fn constant_field_keeps_adjoint() {
        let x0 = Tensor::from_rows(&[vec![1.0, 2.0]]).unwrap();
        let tr = integrate_field(|x, _| Ok(Tensor::full(x.shape(), 1.0)), &x0, 4).unwrap();
        let a1 = Tensor::from_rows(&[vec![0.3, -0.7]]).unwrap();
        let st = lean_adjoint_with(|x, _, _| Ok(Tensor::zeros(x.shape())), &tr, &a1, 0.25).unwrap();
        assert!(st.adjoints.iter().all(|a| a == &a1));
    }

    #[test]
    fn linear_field_single_step() {
        let a = [[0.0, 1.0], [-2.0, 0.5]];
        let x0 = Tensor::from_rows(&[vec![1.0, 1.0]]).unwrap();
        let tr = integrate_field(|x, _| apply(a, x, false), &x0, 1).unwrap();
        let a1 = Tensor::from_rows(&[vec![1.0, 3.0]]).unwrap();
        let st = lean_adjoint_with(|_, _, c| apply(a, c, true), &tr, &a1, 1.0).unwrap();
        // (I + Aᵀ) a1 = (1 + 0·1 − 2·3, 3 + 1·1 + 0.5·3)
        assert_eq!(st.initial().data(), &[-5.0, 5.5]);
    }

    #[test]
    fn grid_mismatch_is_a_contract_error() {
        let x0 = Tensor::from_rows(&[vec![1.0]]).unwrap();
        let tr = integrate_field(|x, _| Ok(x.clone()), &x0, 10).unwrap();
        let r = lean_adjoint_with(|x, _, _| Ok(x.clone()), &tr, &x0, 0.05);
        assert!(matches!(r, Err(Error::Contract(_))));
    }

    fn reward(x: &[f64]) -> (f64, Vec<f64>) {
        let v: f64 = x.iter().enumerate().map(|(i, xi)| (xi - 0.1 * i as f64).powi(2)).sum();
        let g = x.iter().enumerate().map(|(i, xi)| 2.0 * (xi - 0.1 * i as f64) * v.cos());
        (v.sin(), g.collect())
    }

    #[test]
    fn adjoint_gradient_matches_finite_differences() {
        for (steps, tol) in [(40usize, 1e-3), (200, 1e-4)] {
            for seed in 0..5 {
                let model = VelocityModel::new(8, 4, 0, &[16], Activation::Tanh, seed).unwrap();
                let h = 1.0 / steps as f64;
                let f = |x0: &[f64]| {
                    let x = Tensor::from_rows(&[x0.to_vec()]).unwrap();
                    let tr = integrate_with_params(&model, &model.params, &x, None, steps).unwrap();
                    let (r, g) = reward(tr.endpoint().data());
                    let a1 = Tensor::from_rows(&[g]).unwrap();
                    let st = lean_adjoint_backward(&model, None, &tr, &a1, h).unwrap();
                    (r, st.initial().data().to_vec())
                };
                let p = normal_vec(&mut seeded(seed + 50), 8, 0.5);
                let rep = grad_check(f, &p, 1e-5, 1e-8);
                assert!(rep.max_rel_err < tol, "steps {steps} seed {seed}: {}", rep.max_rel_err);
            }
        }
    }
}
