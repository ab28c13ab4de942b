use crate::error::{Error, Result};
use crate::ndcore::Tensor;

/// One draw `z = (x₀, …, x_K)` with strictly increasing knot times.
#[derive(Clone, Debug, PartialEq)]
pub struct MarginalBatch {
    knots: Tensor,
    times: Vec<f64>,
    context: Option<Vec<f64>>,
}

impl MarginalBatch {
    /// `knots` is `[(K+1) × D]`, one row per marginal.
    pub fn new(knots: Tensor, times: Vec<f64>) -> Result<Self> {
        if knots.ndim() != 2 || knots.rows() != times.len() {
            return Err(Error::dim(format!("{} knot rows for {} times", knots.rows(), times.len())));
        }
        if times.len() < 2 {
            return Err(Error::contract("a path needs at least two knots"));
        }
        if times.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("knot times must be strictly increasing"));
        }
        Ok(Self { knots, times, context: None })
    }

    /// Knots on the uniform grid `t_k = k/K`.
    pub fn uniform(knots: Tensor) -> Result<Self> {
        let k = knots.rows().saturating_sub(1).max(1);
        let times = (0..knots.rows()).map(|i| i as f64 / k as f64).collect();
        Self::new(knots, times)
    }

    pub fn with_context(mut self, context: Vec<f64>) -> Self {
        self.context = Some(context);
        self
    }

    pub fn knots(&self) -> &Tensor {
        &self.knots
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn context(&self) -> Option<&[f64]> {
        self.context.as_deref()
    }

    /// Number of segments `K`.
    pub fn segments(&self) -> usize {
        self.times.len() - 1
    }

    pub fn dim(&self) -> usize {
        self.knots.cols()
    }
}

/// Active segment `k` with `t ∈ [t_k, t_{k+1})`; `t = t_K` maps to the last segment.
pub fn segment_index(times: &[f64], t: f64) -> Result<usize> {
    let last = times.len() - 1;
    if !(t >= times[0] && t <= times[last]) {
        return Err(Error::domain(format!("t = {t} lies outside [{}, {}]", times[0], times[last])));
    }
    let k = times.partition_point(|&tk| tk <= t);
    Ok(k.saturating_sub(1).min(last - 1))
}

pub fn pwl_mean(z: &MarginalBatch, t: f64) -> Result<Vec<f64>> {
    let k = segment_index(&z.times, t)?;
    let (t0, t1) = (z.times[k], z.times[k + 1]);
    let a = (t - t0) / (t1 - t0);
    let (x0, x1) = (z.knots.row(k), z.knots.row(k + 1));
    Ok(x0.iter().zip(x1).map(|(p, q)| p + a * (q - p)).collect())
}

pub fn pwl_velocity(z: &MarginalBatch, t: f64) -> Result<Vec<f64>> {
    let k = segment_index(&z.times, t)?;
    let dt = z.times[k + 1] - z.times[k];
    let (x0, x1) = (z.knots.row(k), z.knots.row(k + 1));
    Ok(x0.iter().zip(x1).map(|(p, q)| (q - p) / dt).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar(knots: &[f64], times: &[f64]) -> MarginalBatch {
        let rows: Vec<Vec<f64>> = knots.iter().map(|&v| vec![v]).collect();
        MarginalBatch::new(Tensor::from_rows(&rows).unwrap(), times.to_vec()).unwrap()
    }

    #[test]
    fn mean_at_knots() {
        let z = scalar(&[0.0, 1.0, 3.0], &[0.0, 0.5, 1.0]);
        assert_eq!(pwl_mean(&z, 0.5).unwrap(), vec![1.0]);
        assert_eq!(pwl_mean(&z, 1.0).unwrap(), vec![3.0]);
        assert_eq!(pwl_mean(&z, 0.75).unwrap(), vec![2.0]);
    }

    #[test]
    fn two_knot_mean_and_velocity() {
        let z = scalar(&[0.0, 2.0], &[0.0, 1.0]);
        assert_eq!(pwl_mean(&z, 0.25).unwrap(), vec![0.5]);
        for t in [0.0, 0.3, 0.99, 1.0] {
            assert_eq!(pwl_velocity(&z, t).unwrap(), vec![2.0]);
        }
    }

    #[test]
    fn three_knot_velocity() {
        let z = scalar(&[0.0, 1.0, 3.0], &[0.0, 0.5, 1.0]);
        assert_eq!(pwl_velocity(&z, 0.25).unwrap(), vec![2.0]);
        assert_eq!(pwl_velocity(&z, 0.75).unwrap(), vec![4.0]);
        assert_eq!(pwl_velocity(&z, 0.5).unwrap(), vec![4.0]);
    }

    #[test]
    fn outside_range_is_domain_error() {
        let z = scalar(&[0.0, 2.0], &[0.0, 1.0]);
        assert!(matches!(pwl_mean(&z, 1.5), Err(Error::Domain(_))));
        assert!(matches!(pwl_velocity(&z, -0.1), Err(Error::Domain(_))));
    }

    #[test]
    fn rejects_unsorted_times() {
        let t = Tensor::from_rows(&[vec![0.0], vec![1.0]]).unwrap();
        assert!(MarginalBatch::new(t, vec![0.5, 0.5]).is_err());
    }
}
