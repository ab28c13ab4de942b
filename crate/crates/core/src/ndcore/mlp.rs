use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use super::vecops::{axpy, dot};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
        }
    }

    /// Derivative expressed through the activation output `a = σ(z)`.
    #[inline]
    pub fn deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => 1.0 - a * a,
        }
    }

    /// Second derivative expressed through the activation output.
    #[inline]
    pub fn second_deriv_from_output(self, a: f64) -> f64 {
        match self {
            Activation::Relu => 0.0,
            Activation::Tanh => -2.0 * a * (1.0 - a * a),
        }
    }
}

/// Where one dense layer lives inside the flat parameter vector.
///
/// Weights are stored `[input × output]` row-major, followed by the bias.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LayerSlot {
    pub input: usize,
    pub output: usize,
    pub weight_offset: usize,
    pub bias_offset: usize,
}

impl LayerSlot {
    pub fn weight_len(&self) -> usize {
        self.input * self.output
    }

    pub fn end(&self) -> usize {
        self.bias_offset + self.output
    }
}

/// Fully connected network: hidden layers use `activation`, the last layer is linear.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct MlpSpec {
    layer_widths: Vec<usize>,
    activation: Activation,
}

impl MlpSpec {
    pub fn new(layer_widths: Vec<usize>, activation: Activation) -> Result<Self> {
        if layer_widths.len() < 2 {
            return Err(Error::config("an MLP needs at least two layer widths"));
        }
        if layer_widths.iter().any(|&w| w == 0) {
            return Err(Error::config(format!("layer widths must be positive, got {layer_widths:?}")));
        }
        Ok(Self { layer_widths, activation })
    }

    pub fn widths(&self) -> &[usize] {
        &self.layer_widths
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn input_dim(&self) -> usize {
        self.layer_widths[0]
    }

    pub fn output_dim(&self) -> usize {
        *self.layer_widths.last().unwrap()
    }

    pub fn num_layers(&self) -> usize {
        self.layer_widths.len() - 1
    }

    pub fn param_count(&self) -> usize {
        self.layer_widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    pub fn layers(&self) -> Vec<LayerSlot> {
        let mut offset = 0;
        self.layer_widths
            .windows(2)
            .map(|w| {
                let slot =
                    LayerSlot { input: w[0], output: w[1], weight_offset: offset, bias_offset: offset + w[0] * w[1] };
                offset = slot.end();
                slot
            })
            .collect()
    }

    pub(crate) fn check_params(&self, params: &[f64]) -> Result<()> {
        if params.len() != self.param_count() {
            return Err(Error::dim(format!(
                "expected {} parameters for {:?}, got {}",
                self.param_count(),
                self.layer_widths,
                params.len()
            )));
        }
        Ok(())
    }

    fn check_input(&self, x: &Tensor) -> Result<()> {
        if x.last_dim() != self.input_dim() {
            return Err(Error::dim(format!(
                "input last dim {} does not match layer width {}",
                x.last_dim(),
                self.input_dim()
            )));
        }
        Ok(())
    }
}

/// Activations retained by [`mlp_forward`] for an exact backward pass.
#[derive(Debug)]
pub struct MlpCache<'a> {
    pub(crate) spec: &'a MlpSpec,
    pub(crate) params: &'a [f64],
    /// `acts[0]` is the input, `acts[l]` the post-activation output of hidden layer `l`.
    pub(crate) acts: Vec<Vec<f64>>,
    pub(crate) batch: usize,
}

impl MlpCache<'_> {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct MlpGrads {
    pub params: Vec<f64>,
    pub input: Tensor,
}

fn dense_forward(slot: &LayerSlot, params: &[f64], h: &[f64], batch: usize) -> Vec<f64> {
    let w = &params[slot.weight_offset..slot.bias_offset];
    let b = &params[slot.bias_offset..slot.end()];
    let mut z = Vec::with_capacity(batch * slot.output);
    for i in 0..batch {
        z.extend_from_slice(b);
        let zi = &mut z[i * slot.output..(i + 1) * slot.output];
        for (k, &hk) in h[i * slot.input..(i + 1) * slot.input].iter().enumerate() {
            if hk != 0.0 {
                axpy(hk, &w[k * slot.output..(k + 1) * slot.output], zi);
            }
        }
    }
    z
}

/// Runs the network on a batch `x` of shape `[.., input_dim]`.
///
/// A 1-D input is treated as a single sample and yields a 1-D output.
pub fn mlp_forward<'a>(spec: &'a MlpSpec, params: &'a [f64], x: &Tensor) -> Result<(Tensor, MlpCache<'a>)> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    let batch = x.rows();
    let slots = spec.layers();
    let act = spec.activation();
    let mut acts = Vec::with_capacity(slots.len());
    acts.push(x.data().to_vec());
    let mut logits = Vec::new();
    for (l, slot) in slots.iter().enumerate() {
        let mut z = dense_forward(slot, params, &acts[l], batch);
        if l + 1 < slots.len() {
            z.iter_mut().for_each(|v| *v = act.apply(*v));
            acts.push(z);
        } else {
            logits = z;
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = spec.output_dim();
    let out = Tensor::new(shape, logits)?;
    Ok((out, MlpCache { spec, params, acts, batch }))
}

/// Forward pass without retaining activations.
pub fn mlp_predict(spec: &MlpSpec, params: &[f64], x: &Tensor) -> Result<Tensor> {
    spec.check_params(params)?;
    spec.check_input(x)?;
    let batch = x.rows();
    let slots = spec.layers();
    let act = spec.activation();
    let mut h = x.data().to_vec();
    for (l, slot) in slots.iter().enumerate() {
        h = dense_forward(slot, params, &h, batch);
        if l + 1 < slots.len() {
            h.iter_mut().for_each(|v| *v = act.apply(*v));
        }
    }
    let mut shape = x.shape().to_vec();
    *shape.last_mut().unwrap() = spec.output_dim();
    Tensor::new(shape, h)
}

impl MlpCache<'_> {
    fn check_grad(&self, grad_out: &Tensor) -> Result<()> {
        if grad_out.last_dim() != self.spec.output_dim() || grad_out.rows() != self.batch {
            return Err(Error::contract(format!(
                "gradient of shape {:?} does not belong to a cached forward pass of batch {} \
                 and output width {}",
                grad_out.shape(),
                self.batch,
                self.spec.output_dim()
            )));
        }
        Ok(())
    }

    /// Reverse pass accumulating parameter gradients into `grad_params`
    /// (when given) and returning the gradient with respect to the input.
    pub(crate) fn backward_into(&self, grad_out: &[f64], mut grad_params: Option<&mut [f64]>) -> Vec<f64> {
        let slots = self.spec.layers();
        let act = self.spec.activation();
        let batch = self.batch;
        let mut delta = grad_out.to_vec();
        for l in (0..slots.len()).rev() {
            let slot = &slots[l];
            let h = &self.acts[l];
            if let Some(gp) = grad_params.as_deref_mut() {
                let (gw, gb) = gp[slot.weight_offset..slot.end()].split_at_mut(slot.weight_len());
                for i in 0..batch {
                    let di = &delta[i * slot.output..(i + 1) * slot.output];
                    axpy(1.0, di, gb);
                    for (k, &hk) in h[i * slot.input..(i + 1) * slot.input].iter().enumerate() {
                        if hk != 0.0 {
                            axpy(hk, di, &mut gw[k * slot.output..(k + 1) * slot.output]);
                        }
                    }
                }
            }
            let w = &self.params[slot.weight_offset..slot.bias_offset];
            let mut dh = vec![0.0; batch * slot.input];
            for i in 0..batch {
                let di = &delta[i * slot.output..(i + 1) * slot.output];
                let dhi = &mut dh[i * slot.input..(i + 1) * slot.input];
                for (k, v) in dhi.iter_mut().enumerate() {
                    *v = dot(&w[k * slot.output..(k + 1) * slot.output], di);
                }
            }
            if l > 0 {
                for (d, &a) in dh.iter_mut().zip(h.iter()) {
                    *d *= act.deriv_from_output(a);
                }
            }
            delta = dh;
        }
        delta
    }
}

/// Exact gradients of `Σ grad_logits ⊙ logits` with respect to parameters and input.
pub fn mlp_backward(cache: &MlpCache<'_>, grad_logits: &Tensor) -> Result<MlpGrads> {
    cache.check_grad(grad_logits)?;
    let mut grad_params = vec![0.0; cache.spec.param_count()];
    let grad_x = cache.backward_into(grad_logits.data(), Some(&mut grad_params));
    let mut shape = grad_logits.shape().to_vec();
    *shape.last_mut().unwrap() = cache.spec.input_dim();
    Ok(MlpGrads { params: grad_params, input: Tensor::new(shape, grad_x)? })
}

/// `(∂f/∂x)ᵀ a` for every sample of the batch, via a reverse pass over inputs only.
pub fn jacobian_vector_transpose(spec: &MlpSpec, params: &[f64], x: &Tensor, a: &Tensor) -> Result<Tensor> {
    let (out, cache) = mlp_forward(spec, params, x)?;
    if a.shape() != out.shape() {
        return Err(Error::dim(format!("cotangent shape {:?} differs from output shape {:?}", a.shape(), out.shape())));
    }
    let gx = cache.backward_into(a.data(), None);
    Tensor::new(x.shape().to_vec(), gx)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::{normal_vec, seeded};

    fn random_params(spec: &MlpSpec, seed: u64) -> Vec<f64> {
        normal_vec(&mut seeded(seed), spec.param_count(), 0.7)
    }

    #[test]
    fn param_count_matches_layout() {
        let spec = MlpSpec::new(vec![2, 16, 16, 4], Activation::Relu).unwrap();
        assert_eq!(spec.param_count(), 2 * 16 + 16 + 16 * 16 + 16 + 16 * 4 + 4);
        assert_eq!(spec.layers().last().unwrap().end(), spec.param_count());
        assert!(MlpSpec::new(vec![3], Activation::Relu).is_err());
        assert!(MlpSpec::new(vec![3, 0, 1], Activation::Relu).is_err());
    }

    #[test]
    fn identity_single_layer() {
        let spec = MlpSpec::new(vec![2, 2], Activation::Tanh).unwrap();
        let params = vec![1.0, 0.0, 0.0, 1.0, 0.0, 0.0];
        let (y, _) = mlp_forward(&spec, &params, &Tensor::vector(vec![1.0, 2.0])).unwrap();
        assert_eq!(y.data(), &[1.0, 2.0]);
    }

    #[test]
    fn zero_weights_give_zero_logits() {
        let spec = MlpSpec::new(vec![3, 5, 2], Activation::Relu).unwrap();
        let params = vec![0.0; spec.param_count()];
        let x = Tensor::from_rows(&[vec![1.0, -2.0, 3.0], vec![0.5, 0.5, 0.5]]).unwrap();
        let (y, _) = mlp_forward(&spec, &params, &x).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_matches_scalar_reference() {
        let spec = MlpSpec::new(vec![2, 4, 2], Activation::Tanh).unwrap();
        let p = random_params(&spec, 11);
        let x = [0.3, -0.7];
        // straight-line evaluation with the [in × out] layout
        let mut h = [0.0; 4];
        for j in 0..4 {
            let z = p[8 + j] + x[0] * p[j] + x[1] * p[4 + j];
            h[j] = z.tanh();
        }
        let mut expected = [0.0; 2];
        for o in 0..2 {
            let mut z = p[12 + 8 + o];
            for k in 0..4 {
                z += h[k] * p[12 + k * 2 + o];
            }
            expected[o] = z;
        }
        let (y, _) = mlp_forward(&spec, &p, &Tensor::vector(x.to_vec())).unwrap();
        for o in 0..2 {
            assert!((y.data()[o] - expected[o]).abs() < 1e-15);
        }
    }

    #[test]
    fn dimension_errors() {
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu).unwrap();
        let p = vec![0.0; spec.param_count()];
        assert!(matches!(mlp_forward(&spec, &p, &Tensor::vector(vec![1.0, 2.0])), Err(Error::Dimension(_))));
        assert!(matches!(mlp_forward(&spec, &p[..3], &Tensor::vector(vec![1.0, 2.0, 3.0])), Err(Error::Dimension(_))));
    }

    #[test]
    fn linear_grad_is_outer_product() {
        // y = W x with W stored [in × out]; d(eᵀy)/dW[k][o] = x[k] e[o]
        let spec = MlpSpec::new(vec![3, 2], Activation::Relu).unwrap();
        let p = random_params(&spec, 3);
        let x = Tensor::row_vector(vec![0.5, -1.0, 2.0]);
        let e = Tensor::row_vector(vec![1.5, -0.25]);
        let (_, cache) = mlp_forward(&spec, &p, &x).unwrap();
        let g = mlp_backward(&cache, &e).unwrap();
        for k in 0..3 {
            for o in 0..2 {
                assert_eq!(g.params[k * 2 + o], x.data()[k] * e.data()[o]);
            }
        }
        assert_eq!(&g.params[6..], e.data());
    }

    #[test]
    fn zero_upstream_gives_zero_grads() {
        let spec = MlpSpec::new(vec![2, 8, 3], Activation::Tanh).unwrap();
        let p = random_params(&spec, 5);
        let x = Tensor::from_rows(&[vec![0.1, 0.2], vec![-0.3, 0.9]]).unwrap();
        let (_, cache) = mlp_forward(&spec, &p, &x).unwrap();
        let g = mlp_backward(&cache, &Tensor::zeros(&[2, 3])).unwrap();
        assert!(g.params.iter().all(|&v| v == 0.0));
        assert!(g.input.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn mismatched_gradient_is_contract_error() {
        let spec = MlpSpec::new(vec![2, 3], Activation::Tanh).unwrap();
        let p = random_params(&spec, 1);
        let (_, cache) = mlp_forward(&spec, &p, &Tensor::zeros(&[4, 2])).unwrap();
        assert!(matches!(mlp_backward(&cache, &Tensor::zeros(&[3, 3])), Err(Error::Contract(_))));
    }

    #[test]
    fn jvt_of_linear_map_is_transpose() {
        // v(x) = A x, stored as W[k][o] = A[o][k]
        let spec = MlpSpec::new(vec![3, 3], Activation::Relu).unwrap();
        let mut p = random_params(&spec, 9);
        p[9..].iter_mut().for_each(|b| *b = 0.0);
        let a_vec = vec![0.2, -1.0, 0.7];
        let x = Tensor::vector(vec![1.0, 2.0, 3.0]);
        let r = jacobian_vector_transpose(&spec, &p, &x, &Tensor::vector(a_vec.clone())).unwrap();
        for k in 0..3 {
            let expected: f64 = (0..3).map(|o| p[k * 3 + o] * a_vec[o]).sum();
            assert!((r.data()[k] - expected).abs() < 1e-14);
        }
        let zero = jacobian_vector_transpose(&spec, &p, &x, &Tensor::zeros(&[3])).unwrap();
        assert!(zero.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn forward_does_not_mutate_and_is_deterministic() {
        let spec = MlpSpec::new(vec![2, 6, 2], Activation::Relu).unwrap();
        let p = random_params(&spec, 2);
        let x = Tensor::from_rows(&[vec![0.4, -0.1]]).unwrap();
        let (p0, x0) = (p.clone(), x.clone());
        let a = mlp_predict(&spec, &p, &x).unwrap();
        let (b, _) = mlp_forward(&spec, &p, &x).unwrap();
        assert_eq!(a, b);
        assert_eq!(p, p0);
        assert_eq!(x, x0);
    }
}
