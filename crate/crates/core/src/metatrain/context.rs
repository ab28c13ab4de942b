use crate::basezoo::Split;
use crate::error::{Error, Result};
use crate::ndcore::{kaiming_init, mlp_backward, mlp_forward, mlp_predict, Activation, InitMode, MlpSpec, Tensor};
use crate::rng::seeded;

/// Raw context features of a labeled sample: the per-class feature means,
/// concatenated in class order. Invariant to the order of the samples.
pub fn context_features(split: &Split, n_classes: usize) -> Vec<f64> {
    split.class_means(n_classes).concat()
}

/// Maps context features to the conditioning vector of a velocity model.
#[derive(Clone, Debug, PartialEq)]
pub struct ContextEncoder {
    pub spec: MlpSpec,
    pub params: Vec<f64>,
}

impl ContextEncoder {
    pub fn new(feature_dim: usize, hidden: &[usize], out_dim: usize, seed: u64) -> Result<Self> {
        if out_dim == 0 {
            return Err(Error::config("context dimension must be positive"));
        }
        let mut w = vec![feature_dim];
        w.extend(hidden);
        w.push(out_dim);
        let spec = MlpSpec::new(w, Activation::Tanh)?;
        let params = kaiming_init(&spec, InitMode::Uniform, &mut seeded(seed));
        Ok(Self { spec, params })
    }

    pub fn out_dim(&self) -> usize {
        self.spec.output_dim()
    }

    pub fn encode(&self, features: &Tensor) -> Result<Tensor> {
        mlp_predict(&self.spec, &self.params, features)
    }

    /// Parameter gradient of `Σ grad_ctx ⊙ encode(features)`.
    pub fn backward(&self, params: &[f64], features: &Tensor, grad_ctx: &Tensor) -> Result<Vec<f64>> {
        let (_, cache) = mlp_forward(&self.spec, params, features)?;
        Ok(mlp_backward(&cache, grad_ctx)?.params)
    }
}
