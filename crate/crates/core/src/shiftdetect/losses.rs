use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::adjointft::Reward;
use crate::basezoo::Split;
use crate::error::{Error, Result};
use crate::ndcore::{
    mlp_backward, mlp_forward, mlp_predict, softmax, softmax_cross_entropy, MlpSpec, Reduction, Tensor,
};

const PROB_FLOOR: f64 = 1e-12;

/// Disagreement cross-entropy `(1/(1−N)) Σ_{c≠f} log ŷ_c`, probabilities clamped at 1e−12.
pub fn dce_loss(y_hat: &[f64], f_label: usize) -> Result<f64> {
    let n = y_hat.len();
    if n < 2 || f_label >= n {
        return Err(Error::dim(format!("label {f_label} for {n} classes")));
    }
    let s: f64 = (0..n).filter(|&c| c != f_label).map(|c| y_hat[c].max(PROB_FLOOR).ln()).sum();
    Ok(s / (1.0 - n as f64))
}

/// Summed dce over rows of `logits` and its gradient with respect to the logits.
fn dce_from_logits(logits: &Tensor, f_labels: &[usize]) -> (f64, Tensor) {
    let n = logits.cols();
    let k = 1.0 / (n as f64 - 1.0);
    let floor = PROB_FLOOR.ln();
    let mut grad = Tensor::zeros(logits.shape());
    let mut total = 0.0;
    for (i, &f) in f_labels.iter().enumerate() {
        let z = logits.row(i);
        let m = z.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + z.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        let g = grad.row_mut(i);
        for c in (0..n).filter(|&c| c != f) {
            let lp = z[c] - lse;
            if lp < floor {
                total -= k * floor;
                continue;
            }
            total -= k * lp;
            // ∂(−k·log ŷ_c)/∂z_j = k(ŷ_j − [j = c])
            for (j, gj) in g.iter_mut().enumerate() {
                *gj += k * (z[j] - lse).exp();
            }
            g[c] -= k;
        }
    }
    (total, grad)
}

pub(crate) fn predict_labels(arch: &MlpSpec, params: &[f64], x: &Tensor) -> Result<Vec<usize>> {
    let logits = mlp_predict(arch, params, x)?;
    Ok(logits.iter_rows().map(argmax).collect())
}

fn argmax(row: &[f64]) -> usize {
    row.iter().enumerate().fold((0, f64::NEG_INFINITY), |b, (i, &v)| if v > b.1 { (i, v) } else { b }).0
}

/// `(Σ_P ce(g(x), y) + λ Σ_Q dce(g(x̃), argmax f(x̃))) / (|P| + |Q|)`.
pub fn cdc_loss(arch: &MlpSpec, g: &[f64], f: &[f64], p: &Split, q: &Tensor, lambda: f64) -> Result<f64> {
    let total = p.len() + q.rows();
    if total == 0 {
        return Err(Error::contract("CDC loss needs a non-empty P or Q batch"));
    }
    let mut sum = 0.0;
    if p.len() > 0 {
        let logits = mlp_predict(arch, g, &p.inputs)?;
        sum += softmax_cross_entropy(&logits, &p.labels, Reduction::Sum)?.0;
    }
    if q.rows() > 0 {
        let f_labels = predict_labels(arch, f, q)?;
        let probs = softmax(&mlp_predict(arch, g, q)?);
        for (row, &fl) in probs.iter_rows().zip(&f_labels) {
            sum += lambda * dce_loss(row, fl)?;
        }
    }
    Ok(sum / total as f64)
}

/// Per-sample `Σ_c p̂_c log p̂_c` with `p̂ = (softmax f + softmax g)/2`.
pub fn entropy_stat(f_probs: &[f64], g_probs: &[f64]) -> f64 {
    f_probs
        .iter()
        .zip(g_probs)
        .map(|(a, b)| {
            let p = 0.5 * (a + b);
            if p > 0.0 {
                p * p.ln()
            } else {
                0.0
            }
        })
        .sum()
}

pub fn entropy_stats(arch: &MlpSpec, f: &[f64], g: &[f64], x: &Tensor) -> Result<Vec<f64>> {
    let pf = softmax(&mlp_predict(arch, f, x)?);
    let pg = softmax(&mlp_predict(arch, g, x)?);
    Ok(pf.iter_rows().zip(pg.iter_rows()).map(|(a, b)| entropy_stat(a, b)).collect())
}

/// Fraction of rows of `x` on which `f` and `g` predict different classes.
pub fn disagreement_rate(arch: &MlpSpec, f: &[f64], g: &[f64], x: &Tensor) -> Result<f64> {
    let a = predict_labels(arch, f, x)?;
    let b = predict_labels(arch, g, x)?;
    Ok(a.iter().zip(&b).filter(|(x, y)| x != y).count() as f64 / a.len().max(1) as f64)
}

/// Minibatch CDC objective for reward fine-tuning.
///
/// The P term is a minibatch of `batch_size` labeled rows rescaled to the full
/// split; the whole objective is multiplied by `batch_size` so its scale matches
/// a summed cross-entropy over one batch.
#[derive(Clone, Debug)]
pub struct CdcReward {
    pub arch: MlpSpec,
    pub p: Split,
    pub q: Tensor,
    /// Labels of the frozen base classifier on `q`.
    pub f_labels: Vec<usize>,
    pub lambda: f64,
    pub batch_size: usize,
}

impl CdcReward {
    pub fn new(arch: MlpSpec, p: Split, q: Tensor, f: &[f64], lambda: f64, batch_size: usize) -> Result<Self> {
        if p.len() == 0 || batch_size == 0 {
            return Err(Error::contract("CDC reward needs labeled P data"));
        }
        let f_labels = predict_labels(&arch, f, &q)?;
        Ok(Self { arch, p, q, f_labels, lambda, batch_size })
    }
}

impl Reward for CdcReward {
    fn loss_grad(&self, x1: &Tensor, rng: &mut ChaCha8Rng) -> Result<(Vec<f64>, Tensor)> {
        let idx: Vec<usize> = (0..self.batch_size).map(|_| rng.random_range(0..self.p.len())).collect();
        let batch = self.p.subset(&idx);
        let n_p = self.p.len() as f64;
        let m = self.batch_size as f64;
        let scale = m / (n_p + self.q.rows() as f64);
        let w_p = scale * n_p / m;
        let w_q = scale * self.lambda;
        let pc = self.arch.param_count();
        let mut losses = Vec::with_capacity(x1.rows());
        let mut grads = Tensor::zeros(x1.shape());
        for (i, row) in x1.iter_rows().enumerate() {
            let params = &row[..pc];
            let (logits, cache) = mlp_forward(&self.arch, params, &batch.inputs)?;
            let (ce, mut g_ce) = softmax_cross_entropy(&logits, &batch.labels, Reduction::Sum)?;
            g_ce.data_mut().iter_mut().for_each(|v| *v *= w_p);
            let mut gp = mlp_backward(&cache, &g_ce)?.params;
            let mut loss = w_p * ce;
            if self.q.rows() > 0 {
                let (ql, qc) = mlp_forward(&self.arch, params, &self.q)?;
                let (dce, mut g_dce) = dce_from_logits(&ql, &self.f_labels);
                g_dce.data_mut().iter_mut().for_each(|v| *v *= w_q);
                let gq = mlp_backward(&qc, &g_dce)?.params;
                gp.iter_mut().zip(&gq).for_each(|(a, b)| *a += b);
                loss += w_q * dce;
            }
            losses.push(loss);
            grads.row_mut(i)[..pc].copy_from_slice(&gp);
        }
        Ok((losses, grads))
    }

    fn active_dim(&self) -> usize {
        self.arch.param_count()
    }
}
