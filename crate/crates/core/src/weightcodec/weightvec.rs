use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::ndcore::{MlpSpec, Tensor};

/// Weights and bias of one dense layer; `weight` is `[in × out]`.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerParams {
    pub weight: Tensor,
    pub bias: Vec<f64>,
}

/// Flattened, zero-padded parameter vector of a base classifier.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct WeightVec {
    values: Vec<f64>,
    pad_mask: Vec<bool>,
    arch: MlpSpec,
    dataset_tag: Option<String>,
}

impl WeightVec {
    /// Wraps a flat parameter vector laid out as `arch` and zero-pads it to `target_dim`.
    pub fn from_params(arch: &MlpSpec, params: &[f64], target_dim: usize) -> Result<Self> {
        let raw = arch.param_count();
        if params.len() != raw {
            return Err(Error::dim(format!("{} parameters given for an architecture with {raw}", params.len())));
        }
        if target_dim < raw {
            return Err(Error::dim(format!("target dimension {target_dim} is smaller than the {raw} parameters")));
        }
        let mut values = params.to_vec();
        values.resize(target_dim, 0.0);
        let mut pad_mask = vec![true; raw];
        pad_mask.resize(target_dim, false);
        Ok(Self { values, pad_mask, arch: arch.clone(), dataset_tag: None })
    }

    /// Rebuilds a vector from raw padded values, e.g. a generated sample.
    ///
    /// Pad entries are kept as given so that callers can inspect leakage into them.
    pub fn from_padded(arch: &MlpSpec, values: Vec<f64>) -> Result<Self> {
        let raw = arch.param_count();
        if values.len() < raw {
            return Err(Error::dim(format!("padded vector of length {} cannot hold {raw} parameters", values.len())));
        }
        let mut pad_mask = vec![true; raw];
        pad_mask.resize(values.len(), false);
        Ok(Self { values, pad_mask, arch: arch.clone(), dataset_tag: None })
    }

    pub fn with_tag(mut self, tag: impl Into<String>) -> Self {
        self.dataset_tag = Some(tag.into());
        self
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    pub fn pad_mask(&self) -> &[bool] {
        &self.pad_mask
    }

    pub fn arch(&self) -> &MlpSpec {
        &self.arch
    }

    pub fn dataset_tag(&self) -> Option<&str> {
        self.dataset_tag.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.values.len()
    }

    /// The real parameters, in the layout `arch` expects.
    pub fn params(&self) -> &[f64] {
        &self.values[..self.arch.param_count()]
    }

    pub fn to_tensor(&self) -> Tensor {
        Tensor::vector(self.values.clone())
    }

    /// Per-layer weights and biases.
    pub fn unflatten(&self) -> Vec<LayerParams> {
        let p = self.params();
        self.arch
            .layers()
            .into_iter()
            .map(|s| LayerParams {
                weight: Tensor::new(vec![s.input, s.output], p[s.weight_offset..s.bias_offset].to_vec())
                    .expect("layout table is consistent"),
                bias: p[s.bias_offset..s.end()].to_vec(),
            })
            .collect()
    }
}

/// Concatenates per-layer parameters in layer order and zero-pads to `target_dim`.
pub fn flatten_pad(arch: &MlpSpec, layers: &[LayerParams], target_dim: usize) -> Result<WeightVec> {
    let slots = arch.layers();
    if layers.len() != slots.len() {
        return Err(Error::dim(format!("{} layers given for an architecture with {}", layers.len(), slots.len())));
    }
    let mut flat = Vec::with_capacity(arch.param_count());
    for (l, (slot, lp)) in slots.iter().zip(layers).enumerate() {
        if lp.weight.shape() != [slot.input, slot.output] || lp.bias.len() != slot.output {
            return Err(Error::dim(format!(
                "layer {l}: expected weight [{} × {}] and bias {}, got {:?} and {}",
                slot.input,
                slot.output,
                slot.output,
                lp.weight.shape(),
                lp.bias.len()
            )));
        }
        flat.extend_from_slice(lp.weight.data());
        flat.extend_from_slice(&lp.bias);
    }
    WeightVec::from_params(arch, &flat, target_dim)
}

/// Zero-pads `w` to a multiple of `chunk_len` and splits it into equal pieces.
pub fn chunk(w: &WeightVec, chunk_len: usize) -> Result<Vec<Tensor>> {
    if chunk_len == 0 {
        return Err(Error::contract("chunk length must be positive"));
    }
    Ok(w.values()
        .chunks(chunk_len)
        .map(|c| {
            let mut v = c.to_vec();
            v.resize(chunk_len, 0.0);
            Tensor::vector(v)
        })
        .collect())
}
