//! Second-order pass for scalar networks: gradients with respect to the
//! parameters of a penalty on the network's input gradient.

use super::mlp::{mlp_forward, MlpSpec};
use super::tensor::Tensor;
use super::vecops::axpy;
use crate::error::{Error, Result};

/// Result of [`input_grad_matching`].
#[derive(Clone, Debug, PartialEq)]
pub struct InputGradMatch {
    /// `Σ_i ‖∇ₓf(x_i)[..m] + d_i‖²` summed over the batch.
    pub objective: f64,
    /// Gradient of `objective` with respect to the parameters.
    pub grad_params: Vec<f64>,
    /// Input gradients `∇ₓf(x_i)`, shape `[n × input_dim]`.
    pub input_grads: Tensor,
}

/// For a scalar-output MLP `f`, evaluates `Σ_i ‖∇ₓf(x_i)[..m] + d_i‖²` where `m` is
/// the width of `offsets`, together with its exact parameter gradient.
///
/// Input coordinates beyond `m` (for example a time embedding) enter the network
/// but are excluded from the penalty.
pub fn input_grad_matching(spec: &MlpSpec, params: &[f64], x: &Tensor, offsets: &Tensor) -> Result<InputGradMatch> {
    if spec.output_dim() != 1 {
        return Err(Error::contract(format!(
            "input-gradient matching needs a scalar network, got output width {}",
            spec.output_dim()
        )));
    }
    let (_, cache) = mlp_forward(spec, params, x)?;
    let n = cache.batch;
    let m = offsets.last_dim();
    if offsets.rows() != n || m > spec.input_dim() {
        return Err(Error::dim(format!(
            "offsets of shape {:?} do not fit a batch of {n} with input width {}",
            offsets.shape(),
            spec.input_dim()
        )));
    }
    let slots = spec.layers();
    let n_layers = slots.len();
    let act = spec.activation();
    let mut grad_params = vec![0.0; spec.param_count()];
    let mut input_grads = Vec::with_capacity(n * spec.input_dim());
    let mut objective = 0.0;

    for i in 0..n {
        let a_of = |l: usize| -> &[f64] {
            let w = slots[l].input;
            &cache.acts[l][i * w..(i + 1) * w]
        };
        // First-order pass: delta[l] = ∂f/∂z_l, g[l] = ∂f/∂h_l (g[0] = ∇ₓf).
        let mut delta: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        let mut g: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        delta[n_layers - 1] = vec![1.0];
        for l in (0..n_layers).rev() {
            let slot = &slots[l];
            let w = &params[slot.weight_offset..slot.bias_offset];
            let gl: Vec<f64> = (0..slot.input)
                .map(|k| super::vecops::dot(&w[k * slot.output..(k + 1) * slot.output], &delta[l]))
                .collect();
            if l > 0 {
                let a = a_of(l);
                delta[l - 1] = gl.iter().zip(a).map(|(gv, &av)| gv * act.deriv_from_output(av)).collect();
            }
            g[l] = gl;
        }

        let d = offsets.row(i);
        let mut gbar = vec![0.0; spec.input_dim()];
        for k in 0..m {
            let r = g[0][k] + d[k];
            objective += r * r;
            gbar[k] = 2.0 * r;
        }
        input_grads.extend_from_slice(&g[0]);

        // Reverse of the first-order pass, collecting cotangents on pre-activations.
        let mut zbar: Vec<Vec<f64>> = vec![Vec::new(); n_layers];
        for l in 0..n_layers {
            let slot = &slots[l];
            let gw = &mut grad_params[slot.weight_offset..slot.bias_offset];
            for k in 0..slot.input {
                if gbar[k] != 0.0 {
                    axpy(gbar[k], &delta[l], &mut gw[k * slot.output..(k + 1) * slot.output]);
                }
            }
            if l + 1 == n_layers {
                break;
            }
            let w = &params[slot.weight_offset..slot.bias_offset];
            let mut dbar = vec![0.0; slot.output];
            for k in 0..slot.input {
                if gbar[k] != 0.0 {
                    axpy(gbar[k], &w[k * slot.output..(k + 1) * slot.output], &mut dbar);
                }
            }
            let a = a_of(l + 1);
            let gnext = &g[l + 1];
            zbar[l] = (0..slot.output).map(|j| dbar[j] * gnext[j] * act.second_deriv_from_output(a[j])).collect();
            gbar = (0..slot.output).map(|j| dbar[j] * act.deriv_from_output(a[j])).collect();
        }

        // Ordinary reverse pass through the forward network, seeded by zbar.
        let mut up = vec![0.0; 1];
        for l in (0..n_layers).rev() {
            let slot = &slots[l];
            let mut total = up;
            if l + 1 < n_layers {
                let a = a_of(l + 1);
                for (j, t) in total.iter_mut().enumerate() {
                    *t = *t * act.deriv_from_output(a[j]) + zbar[l][j];
                }
            }
            let h = a_of(l);
            let (gw, gb) = grad_params[slot.weight_offset..slot.end()].split_at_mut(slot.weight_len());
            axpy(1.0, &total, gb);
            for (k, &hk) in h.iter().enumerate() {
                if hk != 0.0 {
                    axpy(hk, &total, &mut gw[k * slot.output..(k + 1) * slot.output]);
                }
            }
            if l == 0 {
                break;
            }
            let w = &params[slot.weight_offset..slot.bias_offset];
            up = (0..slot.input)
                .map(|k| super::vecops::dot(&w[k * slot.output..(k + 1) * slot.output], &total))
                .collect();
        }
    }

    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = spec.input_dim();
    Ok(InputGradMatch { objective, grad_params, input_grads: Tensor::new(shape, input_grads)? })
}
