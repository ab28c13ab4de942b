//! Variational autoencoder over flattened weight vectors, with Gaussian noise
//! injected into the input and the latent code during training.

use serde::{Deserialize, Serialize};

use crate::error::{ensure_finite, Error, Result};
use crate::ndcore::{
    clip_grad_norm, kaiming_init, mlp_backward, mlp_forward, mlp_predict, Activation, InitMode, MlpSpec, OptimConfig,
    OptimState, Tensor,
};
use crate::rng::{derive_seed, normal_vec, seeded};
use rand::seq::SliceRandom;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeConfig {
    pub latent_dim: usize,
    pub hidden: Vec<usize>,
    pub activation: Activation,
    pub beta: f64,
    pub sigma_in: f64,
    pub sigma_lat: f64,
}

impl Default for VaeConfig {
    fn default() -> Self {
        Self {
            latent_dim: 16,
            hidden: vec![128],
            activation: Activation::Relu,
            beta: 1e-5,
            sigma_in: 1e-3,
            sigma_lat: 1e-2,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct VaeLoss {
    pub loss: f64,
    pub recon: f64,
    pub kl: f64,
}

/// Encoder `D → 2·latent` (mean and log-variance) and decoder `latent → D`.
#[derive(Clone, Debug, PartialEq)]
pub struct VaeModel {
    pub encoder: MlpSpec,
    pub decoder: MlpSpec,
    pub enc_params: Vec<f64>,
    pub dec_params: Vec<f64>,
    pub latent_dim: usize,
    pub beta: f64,
    pub sigma_in: f64,
    pub sigma_lat: f64,
}

/// `KL(N(μ, e^{logvar}) ‖ N(0, 1))` summed over coordinates.
pub fn kl_standard_normal(mu: &[f64], logvar: &[f64]) -> f64 {
    mu.iter().zip(logvar).map(|(m, lv)| 0.5 * (m * m + lv.exp() - 1.0 - lv)).sum()
}

struct Noise {
    input: Vec<f64>,
    eps: Vec<f64>,
    latent: Vec<f64>,
}

impl VaeModel {
    pub fn new(dim: usize, cfg: &VaeConfig, seed: u64) -> Result<Self> {
        if cfg.latent_dim == 0 || cfg.latent_dim >= dim {
            return Err(Error::config(format!("latent_dim must lie in [1, {dim}), got {}", cfg.latent_dim)));
        }
        if cfg.beta < 0.0 || cfg.sigma_in < 0.0 || cfg.sigma_lat < 0.0 {
            return Err(Error::config("beta and noise scales must be nonnegative"));
        }
        let mut enc_w = vec![dim];
        enc_w.extend(&cfg.hidden);
        enc_w.push(2 * cfg.latent_dim);
        let mut dec_w = vec![cfg.latent_dim];
        dec_w.extend(&cfg.hidden);
        dec_w.push(dim);
        let encoder = MlpSpec::new(enc_w, cfg.activation)?;
        let decoder = MlpSpec::new(dec_w, cfg.activation)?;
        let mut rng = seeded(seed);
        let enc_params = kaiming_init(&encoder, InitMode::Uniform, &mut rng);
        let dec_params = kaiming_init(&decoder, InitMode::Uniform, &mut rng);
        Ok(Self {
            encoder,
            decoder,
            enc_params,
            dec_params,
            latent_dim: cfg.latent_dim,
            beta: cfg.beta,
            sigma_in: cfg.sigma_in,
            sigma_lat: cfg.sigma_lat,
        })
    }

    pub fn dim(&self) -> usize {
        self.encoder.input_dim()
    }

    /// Encoder and decoder parameters concatenated, for persistence.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut v = self.enc_params.clone();
        v.extend_from_slice(&self.dec_params);
        v
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        let ne = self.encoder.param_count();
        if flat.len() != ne + self.decoder.param_count() {
            return Err(Error::dim("VAE parameter vector has the wrong length"));
        }
        self.enc_params = flat[..ne].to_vec();
        self.dec_params = flat[ne..].to_vec();
        Ok(())
    }

    fn check_batch(&self, x: &Tensor) -> Result<()> {
        if x.last_dim() != self.dim() {
            return Err(Error::dim(format!("VAE expects width {}, got {}", self.dim(), x.last_dim())));
        }
        Ok(())
    }

    /// Posterior means, `[n × latent]`.
    pub fn encode_mean(&self, x: &Tensor) -> Result<Tensor> {
        self.check_batch(x)?;
        let out = mlp_predict(&self.encoder, &self.enc_params, x)?;
        Ok(out.column_slice(0, self.latent_dim))
    }

    pub fn decode(&self, z: &Tensor) -> Result<Tensor> {
        mlp_predict(&self.decoder, &self.dec_params, z)
    }

    fn draw_noise(&self, n: usize, seed: u64) -> Noise {
        let mut rng = seeded(seed);
        let l = self.latent_dim;
        Noise {
            input: normal_vec(&mut rng, n * self.dim(), self.sigma_in),
            eps: normal_vec(&mut rng, n * l, 1.0),
            latent: normal_vec(&mut rng, n * l, self.sigma_lat),
        }
    }

    /// Loss on a batch `[n × D]` with noise drawn from `seed`.
    pub fn loss(&self, x: &Tensor, seed: u64) -> Result<VaeLoss> {
        Ok(self.loss_and_grads(x, seed)?.0)
    }

    /// Loss and gradients `(encoder, decoder)`; identical seeds give identical noise.
    pub fn loss_and_grads(&self, x: &Tensor, seed: u64) -> Result<(VaeLoss, Vec<f64>, Vec<f64>)> {
        self.check_batch(x)?;
        let x = if x.ndim() == 1 { Tensor::new(vec![1, x.len()], x.data().to_vec())? } else { x.clone() };
        let n = x.rows();
        let d = self.dim();
        let l = self.latent_dim;
        let noise = self.draw_noise(n, seed);
        let mut noisy = x.clone();
        noisy.data_mut().iter_mut().zip(&noise.input).for_each(|(v, e)| *v += e);

        let (enc_out, enc_cache) = mlp_forward(&self.encoder, &self.enc_params, &noisy)?;
        let mut z = Tensor::zeros(&[n, l]);
        let mut kl = 0.0;
        for i in 0..n {
            let row = enc_out.row(i);
            let (mu, lv) = row.split_at(l);
            kl += kl_standard_normal(mu, lv);
            let zi = z.row_mut(i);
            for j in 0..l {
                zi[j] = mu[j] + (0.5 * lv[j]).exp() * noise.eps[i * l + j] + noise.latent[i * l + j];
            }
        }
        kl /= n as f64;
        let (xhat, dec_cache) = mlp_forward(&self.decoder, &self.dec_params, &z)?;
        let scale = 1.0 / (n * d) as f64;
        let mut recon = 0.0;
        let mut g_xhat = Tensor::zeros(&[n, d]);
        for ((g, yh), y) in g_xhat.data_mut().iter_mut().zip(xhat.data()).zip(x.data()) {
            let r = yh - y;
            recon += r * r;
            *g = 2.0 * r * scale;
        }
        recon *= scale;
        let loss = recon + self.beta * kl;
        ensure_finite(&[loss], "vae loss")?;

        let dec_g = mlp_backward(&dec_cache, &g_xhat)?;
        let mut g_enc_out = Tensor::zeros(&[n, 2 * l]);
        let bn = self.beta / n as f64;
        for i in 0..n {
            let row = enc_out.row(i);
            let gz = dec_g.input.row(i);
            let go = g_enc_out.row_mut(i);
            for j in 0..l {
                let mu = row[j];
                let lv = row[l + j];
                go[j] = gz[j] + bn * mu;
                go[l + j] = gz[j] * noise.eps[i * l + j] * 0.5 * (0.5 * lv).exp() + bn * 0.5 * (lv.exp() - 1.0);
            }
        }
        let enc_g = mlp_backward(&enc_cache, &g_enc_out)?;
        Ok((VaeLoss { loss, recon, kl }, enc_g.params, dec_g.params))
    }
}

/// Loss of `model` on one weight vector (or a batch) with noise drawn from `seed`.
pub fn vae_loss(model: &VaeModel, w: &Tensor, seed: u64) -> Result<VaeLoss> {
    model.loss(w, seed)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct VaeTrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub weight_decay: f64,
    pub grad_clip: f64,
}

impl Default for VaeTrainConfig {
    fn default() -> Self {
        Self { steps: 2000, batch_size: 32, lr: 1e-3, weight_decay: 2e-6, grad_clip: 1.0 }
    }
}

/// Trains `model` in place with AdamW; returns the per-step loss.
pub fn train_vae(model: &mut VaeModel, zoo: &Tensor, cfg: &VaeTrainConfig, seed: u64) -> Result<Vec<f64>> {
    if zoo.ndim() != 2 || zoo.rows() == 0 {
        return Err(Error::contract("VAE training needs a nonempty [n × D] zoo"));
    }
    if cfg.batch_size == 0 {
        return Err(Error::config("batch_size must be positive"));
    }
    let ne = model.encoder.param_count();
    let mut params = model.flat_params();
    let mut opt = OptimState::new(OptimConfig::adamw(cfg.lr, cfg.weight_decay), params.len())?;
    let mut rng = seeded(seed);
    let mut order: Vec<usize> = (0..zoo.rows()).collect();
    let mut cursor = order.len();
    let mut curve = Vec::with_capacity(cfg.steps);
    for step in 0..cfg.steps {
        let mut idx = Vec::with_capacity(cfg.batch_size);
        while idx.len() < cfg.batch_size.min(zoo.rows()) {
            if cursor == order.len() {
                order.shuffle(&mut rng);
                cursor = 0;
            }
            idx.push(order[cursor]);
            cursor += 1;
        }
        let batch = zoo.select_rows(&idx);
        let (l, ge, gd) = model.loss_and_grads(&batch, derive_seed(seed, step as u64 + 1))?;
        if !l.loss.is_finite() {
            return Err(Error::Training(format!("VAE loss diverged at step {step}")));
        }
        let mut g = ge;
        g.extend(gd);
        if cfg.grad_clip > 0.0 {
            clip_grad_norm(&mut g, cfg.grad_clip);
        }
        opt.step(&mut params, &g)?;
        model.enc_params.copy_from_slice(&params[..ne]);
        model.dec_params.copy_from_slice(&params[ne..]);
        curve.push(l.loss);
    }
    Ok(curve)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::otmetrics::grad_check;

    fn linear_model(dim: usize, latent: usize) -> VaeModel {
        let cfg = VaeConfig {
            latent_dim: latent,
            hidden: vec![],
            activation: Activation::Tanh,
            beta: 0.0,
            sigma_in: 0.0,
            sigma_lat: 0.0,
        };
        VaeModel::new(dim, &cfg, 0).unwrap()
    }

    #[test]
    fn identity_autoencoder_has_zero_loss() {
        let mut m = linear_model(3, 2);
        m.enc_params.iter_mut().for_each(|v| *v = 0.0);
        m.dec_params.iter_mut().for_each(|v| *v = 0.0);
        // encoder weight [3 × 4]: μ_j = x_j for j < 2; log-variance bias −100.
        m.enc_params[0] = 1.0;
        m.enc_params[4 + 1] = 1.0;
        m.enc_params[12 + 2] = -100.0;
        m.enc_params[12 + 3] = -100.0;
        // decoder weight [2 × 3]: x̂_j = z_j.
        m.dec_params[0] = 1.0;
        m.dec_params[3 + 1] = 1.0;
        let w = Tensor::from_rows(&[vec![1.0, -2.0, 0.0]]).unwrap();
        let l = vae_loss(&m, &w, 5).unwrap();
        assert!(l.recon < 1e-30, "{l:?}");
    }

    #[test]
    fn kl_closed_forms() {
        assert_eq!(kl_standard_normal(&[0.0], &[0.0]), 0.0);
        assert_eq!(kl_standard_normal(&[1.0], &[0.0]), 0.5);
        assert!(kl_standard_normal(&[0.3, -1.0], &[0.5, -2.0]) > 0.0);
    }

    #[test]
    fn gradients_match_finite_differences() {
        for seed in 0..20 {
            let cfg = VaeConfig {
                latent_dim: 2,
                hidden: vec![5],
                activation: Activation::Tanh,
                beta: 0.3,
                sigma_in: 0.05,
                sigma_lat: 0.1,
            };
            let m = VaeModel::new(6, &cfg, seed).unwrap();
            let x = Tensor::new(vec![3, 6], normal_vec(&mut seeded(seed + 100), 18, 1.0)).unwrap();
            let ne = m.encoder.param_count();
            let f = |p: &[f64]| {
                let mut mm = m.clone();
                mm.set_flat_params(p).unwrap();
                let (l, ge, gd) = mm.loss_and_grads(&x, 9).unwrap();
                let mut g = ge;
                g.extend(gd);
                (l.loss, g)
            };
            let r = grad_check(f, &m.flat_params(), 1e-5, 1e-4);
            assert!(r.max_rel_err < 1e-5, "seed {seed}: {r:?} (encoder has {ne})");
        }
    }

    #[test]
    fn training_halves_loss_on_small_zoo() {
        let zoo = Tensor::new(vec![20, 24], normal_vec(&mut seeded(3), 480, 0.5)).unwrap();
        let cfg = VaeConfig { latent_dim: 8, hidden: vec![32], ..VaeConfig::default() };
        let mut m = VaeModel::new(24, &cfg, 1).unwrap();
        let before = m.loss(&zoo, 0).unwrap().loss;
        let tc = VaeTrainConfig { steps: 500, batch_size: 20, ..VaeTrainConfig::default() };
        train_vae(&mut m, &zoo, &tc, 2).unwrap();
        let after = m.loss(&zoo, 0).unwrap().loss;
        assert!(after < 0.5 * before, "{before} → {after}");
    }

    #[test]
    fn loss_is_deterministic_under_seed() {
        let m = VaeModel::new(10, &VaeConfig { latent_dim: 3, ..VaeConfig::default() }, 4).unwrap();
        let x = Tensor::new(vec![2, 10], normal_vec(&mut seeded(1), 20, 1.0)).unwrap();
        assert_eq!(m.loss(&x, 7).unwrap(), m.loss(&x, 7).unwrap());
        assert_eq!(m.encode_mean(&x).unwrap(), m.encode_mean(&x).unwrap());
    }
}
