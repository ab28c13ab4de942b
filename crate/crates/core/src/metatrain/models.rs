use serde::{Deserialize, Serialize};

use super::embed::TimeEmbedding;
use crate::error::{Error, Result};
use crate::ndcore::{
    input_grad_matching, jacobian_vector_transpose, kaiming_init, mlp_backward, mlp_forward, mlp_predict, Activation,
    InitMode, MlpGrads, MlpSpec, Tensor,
};
use crate::rng::seeded;

/// Architecture of a meta-model, without its parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelHeader {
    pub state_dim: usize,
    pub time_embed: TimeEmbedding,
    pub context_dim: usize,
    pub spec: MlpSpec,
}

/// Packs rows `[x, emb(t), y]` into a network input batch.
pub(crate) fn assemble_input(
    x: &Tensor,
    t: &[f64],
    ctx: Option<&Tensor>,
    embed: &TimeEmbedding,
    context_dim: usize,
) -> Result<Tensor> {
    let n = x.rows();
    let d = x.cols();
    if t.len() != n {
        return Err(Error::dim(format!("{} times for {n} states", t.len())));
    }
    match ctx {
        Some(c) if c.rows() != n || c.cols() != context_dim => {
            return Err(Error::dim(format!(
                "context of shape {:?} does not match {n} rows of width {context_dim}",
                c.shape()
            )))
        }
        None if context_dim > 0 => {
            return Err(Error::contract("model expects a context vector"));
        }
        _ => {}
    }
    let e = embed.dim();
    let w = d + e + context_dim;
    let mut data = vec![0.0; n * w];
    for i in 0..n {
        let row = &mut data[i * w..(i + 1) * w];
        row[..d].copy_from_slice(x.row(i));
        embed.write(t[i], &mut row[d..d + e]);
        if let Some(c) = ctx {
            row[d + e..].copy_from_slice(c.row(i));
        }
    }
    Tensor::new(vec![n, w], data)
}

fn build_spec(in_dim: usize, hidden: &[usize], out: usize, act: Activation) -> Result<MlpSpec> {
    let mut w = vec![in_dim];
    w.extend(hidden);
    w.push(out);
    MlpSpec::new(w, act)
}

/// Conditional velocity field `v_θ(x, t; y)`.
#[derive(Clone, Debug, PartialEq)]
pub struct VelocityModel {
    pub header: ModelHeader,
    pub params: Vec<f64>,
}

impl VelocityModel {
    pub fn new(
        state_dim: usize,
        time_embed_dim: usize,
        context_dim: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let time_embed = TimeEmbedding::new(time_embed_dim);
        let spec = build_spec(state_dim + time_embed.dim() + context_dim, hidden, state_dim, activation)?;
        let params = kaiming_init(&spec, InitMode::Uniform, &mut seeded(seed));
        Ok(Self { header: ModelHeader { state_dim, time_embed, context_dim, spec }, params })
    }

    pub fn from_parts(header: ModelHeader, params: Vec<f64>) -> Result<Self> {
        if header.spec.output_dim() != header.state_dim
            || header.spec.input_dim() != header.state_dim + header.time_embed.dim() + header.context_dim
        {
            return Err(Error::contract("velocity header is inconsistent"));
        }
        if params.len() != header.spec.param_count() {
            return Err(Error::dim("velocity parameter count mismatch"));
        }
        Ok(Self { header, params })
    }

    pub fn state_dim(&self) -> usize {
        self.header.state_dim
    }

    pub fn context_dim(&self) -> usize {
        self.header.context_dim
    }

    pub fn input(&self, x: &Tensor, t: &[f64], ctx: Option<&Tensor>) -> Result<Tensor> {
        if x.cols() != self.state_dim() {
            return Err(Error::dim(format!(
                "state width {} does not match model width {}",
                x.cols(),
                self.state_dim()
            )));
        }
        assemble_input(x, t, ctx, &self.header.time_embed, self.header.context_dim)
    }

    /// Velocities for a batch `[n × D]` at per-row times.
    pub fn forward(&self, x: &Tensor, t: &[f64], ctx: Option<&Tensor>) -> Result<Tensor> {
        let inp = self.input(x, t, ctx)?;
        mlp_predict(&self.header.spec, &self.params, &inp)
    }

    /// Forward with a given parameter vector (used by fine-tuning).
    pub fn forward_with(&self, params: &[f64], x: &Tensor, t: &[f64], ctx: Option<&Tensor>) -> Result<Tensor> {
        let inp = self.input(x, t, ctx)?;
        mlp_predict(&self.header.spec, params, &inp)
    }

    /// Output and the gradients of `Σ grad_out ⊙ v` (parameters, full input).
    pub fn forward_backward(
        &self,
        params: &[f64],
        x: &Tensor,
        t: &[f64],
        ctx: Option<&Tensor>,
        grad_out: impl FnOnce(&Tensor) -> Result<Tensor>,
    ) -> Result<(Tensor, MlpGrads)> {
        let inp = self.input(x, t, ctx)?;
        let (out, cache) = mlp_forward(&self.header.spec, params, &inp)?;
        let g = grad_out(&out)?;
        let grads = mlp_backward(&cache, &g)?;
        Ok((out, grads))
    }

    /// `(∂v/∂x)ᵀ a` restricted to the state coordinates.
    pub fn vjp_state(&self, x: &Tensor, t: &[f64], ctx: Option<&Tensor>, a: &Tensor) -> Result<Tensor> {
        let inp = self.input(x, t, ctx)?;
        let full = jacobian_vector_transpose(&self.header.spec, &self.params, &inp, a)?;
        Ok(full.column_slice(0, self.state_dim()))
    }
}

/// Scalar potential `V_θ(x, t)` whose negative gradient drives the state.
#[derive(Clone, Debug, PartialEq)]
pub struct PotentialModel {
    pub header: ModelHeader,
    pub params: Vec<f64>,
}

impl PotentialModel {
    pub fn new(
        state_dim: usize,
        time_embed_dim: usize,
        hidden: &[usize],
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        let time_embed = TimeEmbedding::new(time_embed_dim);
        let spec = build_spec(state_dim + time_embed.dim(), hidden, 1, activation)?;
        let params = kaiming_init(&spec, InitMode::Uniform, &mut seeded(seed));
        Ok(Self { header: ModelHeader { state_dim, time_embed, context_dim: 0, spec }, params })
    }

    pub fn from_parts(header: ModelHeader, params: Vec<f64>) -> Result<Self> {
        if header.spec.output_dim() != 1
            || header.context_dim != 0
            || header.spec.input_dim() != header.state_dim + header.time_embed.dim()
        {
            return Err(Error::contract("potential header is inconsistent"));
        }
        if params.len() != header.spec.param_count() {
            return Err(Error::dim("potential parameter count mismatch"));
        }
        Ok(Self { header, params })
    }

    pub fn state_dim(&self) -> usize {
        self.header.state_dim
    }

    fn input(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        if x.cols() != self.state_dim() {
            return Err(Error::dim("state width does not match the potential"));
        }
        assemble_input(x, t, None, &self.header.time_embed, 0)
    }

    pub fn potential(&self, x: &Tensor, t: &[f64]) -> Result<Vec<f64>> {
        let inp = self.input(x, t)?;
        Ok(mlp_predict(&self.header.spec, &self.params, &inp)?.into_data())
    }

    /// `∇ₓV_θ(x, t)` for every row.
    pub fn grad_x(&self, x: &Tensor, t: &[f64]) -> Result<Tensor> {
        let inp = self.input(x, t)?;
        let (out, cache) = mlp_forward(&self.header.spec, &self.params, &inp)?;
        let g = mlp_backward(&cache, &Tensor::full(out.shape(), 1.0))?;
        Ok(g.input.column_slice(0, self.state_dim()))
    }

    /// `Σ_i ‖∇ₓV(x_i, t_i) + d_i‖²` and its parameter gradient.
    pub fn grad_matching(&self, params: &[f64], x: &Tensor, t: &[f64], offsets: &Tensor) -> Result<(f64, Vec<f64>)> {
        let inp = self.input(x, t)?;
        let r = input_grad_matching(&self.header.spec, params, &inp, offsets)?;
        Ok((r.objective, r.grad_params))
    }
}
