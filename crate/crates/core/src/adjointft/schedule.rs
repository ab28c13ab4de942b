use crate::error::{Error, Result};
use crate::ndcore::Tensor;
use crate::pathlib::{segment_index, GaussPathParams};

/// Memory-less noise level `ε(t) = σ_t √(2 / ((t + h)(1 − t + h)))`.
pub fn memoryless_eps(t: f64, sigma_t: f64, h_stab: f64) -> f64 {
    sigma_t * (2.0 / ((t + h_stab) * (1.0 - t + h_stab))).sqrt()
}

/// Coefficients `(a, c)` of `v = a·x + c·s` for the two-marginal Gaussian path.
fn gauss_coeffs(t: f64, p: &GaussPathParams) -> Result<(f64, f64)> {
    let (alpha, beta) = (p.alpha(t), p.beta(t));
    if !(alpha > 0.0) || !(beta > 0.0) {
        return Err(Error::domain(format!("score conversion is singular at t = {t}")));
    }
    let a = p.alpha_dot(t) / alpha;
    let c = (a * beta - p.beta_dot(t)) * p.sigma * p.sigma / beta;
    Ok((a, c))
}

fn combine(v: &Tensor, x: &Tensor, fx: f64, fv: f64) -> Result<Tensor> {
    if v.shape() != x.shape() {
        return Err(Error::dim("velocity/score and state shapes differ"));
    }
    let data = v.data().iter().zip(x.data()).map(|(vi, xi)| fv * vi + fx * xi).collect();
    Tensor::new(v.shape().to_vec(), data)
}

/// Score of the Gaussian path implied by the marginal velocity `v`.
pub fn score_from_velocity(v: &Tensor, x: &Tensor, t: f64, p: &GaussPathParams) -> Result<Tensor> {
    let (a, c) = gauss_coeffs(t, p)?;
    combine(v, x, -a / c, 1.0 / c)
}

pub fn velocity_from_score(s: &Tensor, x: &Tensor, t: f64, p: &GaussPathParams) -> Result<Tensor> {
    let (a, c) = gauss_coeffs(t, p)?;
    combine(s, x, a, c)
}

/// Segment-local `(s, r, ṡ)` for `t` on the knot grid; singular where `s` or `r` vanishes.
fn segment_coords(t: f64, times: &[f64]) -> Result<(f64, f64, f64)> {
    let k = segment_index(times, t)?;
    let len = times[k + 1] - times[k];
    let s = (t - times[k]) / len;
    let r = 1.0 - s;
    if s <= 0.0 || r <= 0.0 {
        return Err(Error::domain(format!("t = {t} sits on a knot; the conversion is singular")));
    }
    Ok((s, r, 1.0 / len))
}

/// `η_t = σ² ṡ / (s r)` for the piecewise-linear multi-marginal path.
pub fn mm_eta(t: f64, times: &[f64], sigma_t: f64) -> Result<f64> {
    let (s, r, sd) = segment_coords(t, times)?;
    Ok(sigma_t * sigma_t * sd / (s * r))
}

/// Multi-marginal score from velocity, inverting `v = (ṡ/s)·x + η_t·score`.
pub fn mm_score_from_velocity(v: &Tensor, x: &Tensor, t: f64, times: &[f64], sigma_t: f64) -> Result<Tensor> {
    let (s, _, sd) = segment_coords(t, times)?;
    let eta = mm_eta(t, times, sigma_t)?;
    combine(v, x, -sd / s / eta, 1.0 / eta)
}

pub fn mm_velocity_from_score(score: &Tensor, x: &Tensor, t: f64, times: &[f64], sigma_t: f64) -> Result<Tensor> {
    let (s, _, sd) = segment_coords(t, times)?;
    let eta = mm_eta(t, times, sigma_t)?;
    combine(score, x, sd / s, eta)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathlib::Schedule;
    use crate::rng::{normal_vec, seeded};
    use rand::Rng;

    fn rand_t(seed: u64, n: usize) -> (Tensor, Tensor, f64) {
        let mut rng = seeded(seed);
        let v = Tensor::new(vec![n, 3], normal_vec(&mut rng, 3 * n, 1.0)).unwrap();
        let x = Tensor::new(vec![n, 3], normal_vec(&mut rng, 3 * n, 1.0)).unwrap();
        (v, x, rng.random_range(0.02..0.98))
    }

    fn max_diff(a: &Tensor, b: &Tensor) -> f64 {
        a.data().iter().zip(b.data()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
    }

    #[test]
    fn eps_examples() {
        assert!((memoryless_eps(0.5, 1e-3, 0.0) - 1e-3 * 8f64.sqrt()).abs() < 1e-15);
        for t in [0.1, 0.3, 0.45] {
            assert!((memoryless_eps(t, 1.0, 0.0) - memoryless_eps(1.0 - t, 1.0, 0.0)).abs() < 1e-12);
        }
        // The stabilizer bounds √(2/(t(1−t))) by 10 at the grid ends.
        let h = 0.025;
        assert!(memoryless_eps(0.0, 1.0, h) <= 10.0);
        assert!(memoryless_eps(1.0, 1.0, h) <= 10.0);
    }

    #[test]
    fn score_linear_schedule_example() {
        let p = GaussPathParams { schedule: Schedule::Linear, sigma: 1.0 };
        let v = Tensor::from_rows(&[vec![3.0, -1.0]]).unwrap();
        let x = Tensor::from_rows(&[vec![0.5, 2.0]]).unwrap();
        let s = score_from_velocity(&v, &x, 0.5, &p).unwrap();
        assert!((s.data()[0] - 0.25 * (3.0 - 1.0)).abs() < 1e-15);
        assert!((s.data()[1] - 0.25 * (-1.0 - 4.0)).abs() < 1e-15);
        let v0 = x.map(|xi| 2.0 * xi);
        assert!(score_from_velocity(&v0, &x, 0.5, &p).unwrap().data().iter().all(|&z| z.abs() < 1e-15));
    }

    #[test]
    fn score_round_trip() {
        for seed in 0..20 {
            let (v, x, t) = rand_t(seed, 4);
            for schedule in [Schedule::Linear, Schedule::Trig] {
                let p = GaussPathParams { schedule, sigma: 0.3 };
                let s = score_from_velocity(&v, &x, t, &p).unwrap();
                let back = velocity_from_score(&s, &x, t, &p).unwrap();
                assert!(max_diff(&back, &v) < 1e-12);
            }
        }
    }

    #[test]
    fn singular_times_are_domain_errors() {
        let p = GaussPathParams::default();
        let (v, x, _) = rand_t(0, 1);
        assert!(matches!(score_from_velocity(&v, &x, 0.0, &p), Err(Error::Domain(_))));
        assert!(matches!(mm_eta(0.5, &[0.0, 0.5, 1.0], 1.0), Err(Error::Domain(_))));
        assert!(matches!(mm_score_from_velocity(&v, &x, 1.0, &[0.0, 1.0], 1.0), Err(Error::Domain(_))));
    }

    #[test]
    fn single_segment_reduces_to_gaussian_path() {
        let p = GaussPathParams { schedule: Schedule::Linear, sigma: 0.2 };
        for seed in 0..10 {
            let (v, x, t) = rand_t(seed, 2);
            let a = score_from_velocity(&v, &x, t, &p).unwrap();
            let b = mm_score_from_velocity(&v, &x, t, &[0.0, 1.0], 0.2).unwrap();
            assert!(max_diff(&a, &b) < 1e-12);
            let eps = memoryless_eps(t, 0.2, 0.0);
            let eta = mm_eta(t, &[0.0, 1.0], 0.2).unwrap();
            assert!((eps - (2.0 * eta).sqrt()).abs() < 1e-14);
        }
    }

    #[test]
    fn mm_round_trip_on_three_segments() {
        let times = [0.0, 0.2, 0.7, 1.0];
        for seed in 0..20 {
            let (v, x, t) = rand_t(100 + seed, 3);
            if times.contains(&t) {
                continue;
            }
            let s = mm_score_from_velocity(&v, &x, t, &times, 1e-2).unwrap();
            let back = mm_velocity_from_score(&s, &x, t, &times, 1e-2).unwrap();
            let scale = v.data().iter().map(|z| z.abs()).fold(1.0, f64::max);
            assert!(max_diff(&back, &v) < 1e-12 * scale);
            assert!(mm_eta(t, &times, 1e-2).unwrap().is_finite());
        }
    }
}
