use super::assignment::{assignment_cost, linear_assignment};
use crate::error::{Error, Result};
use crate::ndcore::vecops::dist_sq;
use crate::ndcore::Tensor;

/// Uniformly weighted empirical distribution `[n × D]`.
#[derive(Clone, Debug, PartialEq)]
pub struct PointCloud {
    points: Tensor,
}

impl PointCloud {
    pub fn new(points: Tensor) -> Result<Self> {
        if points.rows() == 0 {
            return Err(Error::contract("a point cloud needs at least one point"));
        }
        points.check_finite("point cloud")?;
        Ok(Self { points })
    }

    pub fn from_rows<R: AsRef<[f64]>>(rows: &[R]) -> Result<Self> {
        Self::new(Tensor::from_rows(rows)?)
    }

    pub fn len(&self) -> usize {
        self.points.rows()
    }

    pub fn is_empty(&self) -> bool {
        self.points.rows() == 0
    }

    pub fn dim(&self) -> usize {
        self.points.cols()
    }

    pub fn points(&self) -> &Tensor {
        &self.points
    }
}

/// Squared 2-Wasserstein distance between equal-size uniform clouds, solved exactly
/// as an assignment problem.
pub fn w2_sq_exact(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::contract(format!("w2_exact needs equal cloud sizes, got {} and {}", a.len(), b.len())));
    }
    if a.dim() != b.dim() {
        return Err(Error::dim(format!("cloud dimensions differ: {} vs {}", a.dim(), b.dim())));
    }
    let n = a.len();
    let mut cost = vec![0.0; n * n];
    for i in 0..n {
        for j in 0..n {
            cost[i * n + j] = dist_sq(a.points.row(i), b.points.row(j));
        }
    }
    let perm = linear_assignment(&cost, n)?;
    Ok(assignment_cost(&cost, n, &perm) / n as f64)
}

pub fn w2_exact(a: &PointCloud, b: &PointCloud) -> Result<f64> {
    Ok(w2_sq_exact(a, b)?.sqrt())
}
