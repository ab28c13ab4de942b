use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Reduction {
    Mean,
    Sum,
}

/// Row-wise softmax computed through log-sum-exp.
pub fn softmax(logits: &Tensor) -> Tensor {
    let mut out = logits.clone();
    for r in 0..out.rows() {
        let row = out.row_mut(r);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut s = 0.0;
        for v in row.iter_mut() {
            *v = (*v - m).exp();
            s += *v;
        }
        row.iter_mut().for_each(|v| *v /= s);
    }
    out
}

/// Fused softmax cross-entropy. Returns the reduced loss and its gradient
/// with respect to the logits.
pub fn softmax_cross_entropy(logits: &Tensor, labels: &[usize], reduction: Reduction) -> Result<(f64, Tensor)> {
    let n = logits.rows();
    let c = logits.cols();
    if labels.len() != n {
        return Err(Error::dim(format!("{} labels for {} logit rows", labels.len(), n)));
    }
    if let Some(&bad) = labels.iter().find(|&&y| y >= c) {
        return Err(Error::dim(format!("label {bad} out of range for {c} classes")));
    }
    let scale = match reduction {
        Reduction::Mean => 1.0 / n.max(1) as f64,
        Reduction::Sum => 1.0,
    };
    let mut grad = Tensor::zeros(&[n, c]);
    let mut total = 0.0;
    for (i, &y) in labels.iter().enumerate() {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let lse = m + row.iter().map(|v| (v - m).exp()).sum::<f64>().ln();
        total += lse - row[y];
        let g = grad.row_mut(i);
        for (j, gj) in g.iter_mut().enumerate() {
            *gj = (row[j] - lse).exp() * scale;
        }
        g[y] -= scale;
    }
    Ok((total * scale, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn uniform_logits_give_log_c() {
        let logits = Tensor::zeros(&[3, 4]);
        let (l, g) = softmax_cross_entropy(&logits, &[0, 1, 3], Reduction::Mean).unwrap();
        assert!((l - 4f64.ln()).abs() < 1e-14);
        // each gradient row sums to zero
        for r in g.iter_rows() {
            assert!(r.iter().sum::<f64>().abs() < 1e-15);
        }
    }

    #[test]
    fn large_logits_stay_finite() {
        let logits = Tensor::from_rows(&[vec![1000.0, -1000.0]]).unwrap();
        let (l, g) = softmax_cross_entropy(&logits, &[1], Reduction::Sum).unwrap();
        assert!((l - 2000.0).abs() < 1e-9);
        assert!(g.data().iter().all(|v| v.is_finite()));
        let p = softmax(&logits);
        assert_eq!(p.data(), &[1.0, 0.0]);
    }
}
