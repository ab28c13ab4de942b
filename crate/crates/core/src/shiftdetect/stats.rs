use crate::error::{Error, Result};

/// Two-sample Kolmogorov-Smirnov statistic and asymptotic p-value.
///
/// The p-value uses the Kolmogorov limit at `λ = √n_e · D` with
/// `n_e = n_a n_b / (n_a + n_b)`.
pub fn ks_two_sample(a: &[f64], b: &[f64]) -> Result<(f64, f64)> {
    if a.is_empty() || b.is_empty() {
        return Err(Error::contract("KS test needs two non-empty samples"));
    }
    if a.iter().chain(b).any(|v| v.is_nan()) {
        return Err(Error::domain("KS test received NaN"));
    }
    let mut xa = a.to_vec();
    let mut xb = b.to_vec();
    xa.sort_by(f64::total_cmp);
    xb.sort_by(f64::total_cmp);
    let (na, nb) = (xa.len(), xb.len());
    let (mut i, mut j, mut d) = (0, 0, 0.0f64);
    while i < na && j < nb {
        let v = xa[i].min(xb[j]);
        while i < na && xa[i] <= v {
            i += 1;
        }
        while j < nb && xb[j] <= v {
            j += 1;
        }
        d = d.max((i as f64 / na as f64 - j as f64 / nb as f64).abs());
    }
    let ne = (na * nb) as f64 / (na + nb) as f64;
    Ok((d, kolmogorov_sf(ne.sqrt() * d)))
}

/// `P(K > λ) = 2 Σ_{j≥1} (−1)^{j−1} e^{−2 j² λ²}`, capped to `[0, 1]`.
fn kolmogorov_sf(lambda: f64) -> f64 {
    if lambda < 1e-3 {
        return 1.0;
    }
    let mut sum = 0.0;
    for j in 1..=100 {
        let term = (-2.0 * (j * j) as f64 * lambda * lambda).exp();
        sum += if j % 2 == 1 { term } else { -term };
        if term < 1e-16 {
            break;
        }
    }
    (2.0 * sum).clamp(0.0, 1.0)
}

/// Order-statistic quantile at position `p(n+1)` with linear interpolation,
/// clamped to the sample range.
pub fn quantile(values: &[f64], p: f64) -> f64 {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let n = v.len();
    let h = (p * (n + 1) as f64).clamp(1.0, n as f64);
    let lo = h.floor() as usize;
    let frac = h - lo as f64;
    if lo >= n {
        return v[n - 1];
    }
    v[lo - 1] + frac * (v[lo] - v[lo - 1])
}

/// True when `phi_q` exceeds the `(1 − alpha)` quantile of the null rates.
pub fn disagreement_test(null: &[f64], phi_q: f64, alpha: f64) -> Result<bool> {
    if null.len() < 2 {
        return Err(Error::contract("disagreement test needs at least two null samples"));
    }
    Ok(phi_q > quantile(null, 1.0 - alpha))
}

/// Probability that a shifted statistic exceeds a null one, ties counting half.
pub fn auroc(null: &[f64], shifted: &[f64]) -> f64 {
    if null.is_empty() || shifted.is_empty() {
        return 0.5;
    }
    let mut wins = 0.0;
    for s in shifted {
        for n in null {
            wins += if s > n {
                1.0
            } else if s == n {
                0.5
            } else {
                0.0
            };
        }
    }
    wins / (null.len() * shifted.len()) as f64
}

/// `(TPR@α, AUROC)` of shifted statistics against a null sample.
pub fn aggregate(null: &[f64], shifted: &[f64], alpha: f64) -> Result<(f64, f64)> {
    if shifted.is_empty() {
        return Err(Error::contract("no shifted runs to aggregate"));
    }
    let mut hits = 0;
    for &s in shifted {
        if disagreement_test(null, s, alpha)? {
            hits += 1;
        }
    }
    Ok((hits as f64 / shifted.len() as f64, auroc(null, shifted)))
}

/// Fraction of null statistics significant against the remaining null ones.
pub fn leave_one_out_rate(null: &[f64], alpha: f64) -> Result<f64> {
    if null.len() < 3 {
        return Err(Error::contract("leave-one-out calibration needs three or more null runs"));
    }
    let mut hits = 0;
    for i in 0..null.len() {
        let rest: Vec<f64> = null.iter().enumerate().filter(|&(j, _)| j != i).map(|(_, &v)| v).collect();
        if disagreement_test(&rest, null[i], alpha)? {
            hits += 1;
        }
    }
    Ok(hits as f64 / null.len() as f64)
}
