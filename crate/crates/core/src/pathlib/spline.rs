use super::pwl::{segment_index, MarginalBatch};
use crate::error::Result;
use crate::ndcore::Tensor;

/// Natural cubic spline through the knots of a [`MarginalBatch`], stored as knot
/// values and second derivatives (zero at both ends).
#[derive(Clone, Debug, PartialEq)]
pub struct SplineCoeffs {
    times: Vec<f64>,
    values: Tensor,
    second: Tensor,
}

/// Fits the natural cubic spline by a tridiagonal (Thomas) solve per coordinate.
pub fn cubic_spline_fit(z: &MarginalBatch) -> Result<SplineCoeffs> {
    let t = z.times().to_vec();
    let y = z.knots();
    let n = t.len();
    let d = y.cols();
    let mut second = Tensor::zeros(&[n, d]);
    if n > 2 {
        let m = n - 2;
        let h: Vec<f64> = t.windows(2).map(|w| w[1] - w[0]).collect();
        let sub: Vec<f64> = (0..m).map(|i| h[i]).collect();
        let diag: Vec<f64> = (0..m).map(|i| 2.0 * (h[i] + h[i + 1])).collect();
        let sup: Vec<f64> = (0..m).map(|i| h[i + 1]).collect();
        for c in 0..d {
            let rhs: Vec<f64> = (0..m)
                .map(|i| {
                    let (y0, y1, y2) = (y.row(i)[c], y.row(i + 1)[c], y.row(i + 2)[c]);
                    6.0 * ((y2 - y1) / h[i + 1] - (y1 - y0) / h[i])
                })
                .collect();
            let sol = thomas(&sub, &diag, &sup, &rhs);
            for (i, v) in sol.into_iter().enumerate() {
                second.row_mut(i + 1)[c] = v;
            }
        }
    }
    Ok(SplineCoeffs { times: t, values: y.clone(), second })
}

/// Solves a tridiagonal system; `sub[0]` and `sup[m−1]` are ignored.
fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let m = diag.len();
    let mut c = vec![0.0; m];
    let mut d = vec![0.0; m];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..m {
        let den = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / den;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / den;
    }
    let mut x = vec![0.0; m];
    x[m - 1] = d[m - 1];
    for i in (0..m - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

impl SplineCoeffs {
    pub fn second_derivatives(&self) -> &Tensor {
        &self.second
    }

    fn parts(&self, t: f64) -> Result<(usize, f64, f64, f64)> {
        let k = segment_index(&self.times, t)?;
        let h = self.times[k + 1] - self.times[k];
        Ok((k, h, self.times[k + 1] - t, t - self.times[k]))
    }

    pub fn eval(&self, t: f64) -> Result<Vec<f64>> {
        let (k, h, a, b) = self.parts(t)?;
        let (y0, y1) = (self.values.row(k), self.values.row(k + 1));
        let (m0, m1) = (self.second.row(k), self.second.row(k + 1));
        Ok((0..y0.len())
            .map(|c| {
                m0[c] * a.powi(3) / (6.0 * h)
                    + m1[c] * b.powi(3) / (6.0 * h)
                    + (y0[c] / h - m0[c] * h / 6.0) * a
                    + (y1[c] / h - m1[c] * h / 6.0) * b
            })
            .collect())
    }

    /// Time derivative, the regression target for spline-path flow matching.
    pub fn deriv(&self, t: f64) -> Result<Vec<f64>> {
        let (k, h, a, b) = self.parts(t)?;
        let (y0, y1) = (self.values.row(k), self.values.row(k + 1));
        let (m0, m1) = (self.second.row(k), self.second.row(k + 1));
        Ok((0..y0.len())
            .map(|c| {
                -m0[c] * a * a / (2.0 * h) + m1[c] * b * b / (2.0 * h) + (y1[c] - y0[c]) / h - (m1[c] - m0[c]) * h / 6.0
            })
            .collect())
    }

    pub fn second_deriv(&self, t: f64) -> Result<Vec<f64>> {
        let (k, h, a, b) = self.parts(t)?;
        let (m0, m1) = (self.second.row(k), self.second.row(k + 1));
        Ok((0..m0.len()).map(|c| (m0[c] * a + m1[c] * b) / h).collect())
    }

    /// Exact `∫ ‖γ̈‖² dt` over the full span.
    pub fn bending_energy(&self) -> f64 {
        let mut e = 0.0;
        for k in 0..self.times.len() - 1 {
            let h = self.times[k + 1] - self.times[k];
            for (a, b) in self.second.row(k).iter().zip(self.second.row(k + 1)) {
                e += h / 3.0 * (a * a + a * b + b * b);
            }
        }
        e
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::pathlib::pwl_velocity;
    use crate::rng::{normal_vec, seeded, uniform};

    fn batch(knots: Vec<Vec<f64>>, times: Vec<f64>) -> MarginalBatch {
        MarginalBatch::new(Tensor::from_rows(&knots).unwrap(), times).unwrap()
    }

    #[test]
    fn two_knots_give_a_line() {
        let z = batch(vec![vec![0.0, 1.0], vec![2.0, -1.0]], vec![0.0, 1.0]);
        let s = cubic_spline_fit(&z).unwrap();
        for t in [0.0, 0.2, 0.7, 1.0] {
            let d = s.deriv(t).unwrap();
            let v = pwl_velocity(&z, t).unwrap();
            for (a, b) in d.iter().zip(&v) {
                assert!((a - b).abs() < 1e-14);
            }
        }
    }

    #[test]
    fn parabola_knots_are_interpolated() {
        let times = vec![0.0, 0.4, 1.0];
        let knots = times.iter().map(|t| vec![t * t]).collect();
        let s = cubic_spline_fit(&batch(knots, times.clone())).unwrap();
        for t in times {
            assert!((s.eval(t).unwrap()[0] - t * t).abs() < 1e-14);
        }
    }

    fn dense_solve(mut a: Vec<Vec<f64>>, mut b: Vec<f64>) -> Vec<f64> {
        let n = b.len();
        for col in 0..n {
            let piv = (col..n).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs())).unwrap();
            a.swap(col, piv);
            b.swap(col, piv);
            for r in col + 1..n {
                let f = a[r][col] / a[col][col];
                for c in col..n {
                    a[r][c] -= f * a[col][c];
                }
                b[r] -= f * b[col];
            }
        }
        let mut x = vec![0.0; n];
        for r in (0..n).rev() {
            let s: f64 = (r + 1..n).map(|c| a[r][c] * x[c]).sum();
            x[r] = (b[r] - s) / a[r][r];
        }
        x
    }

    #[test]
    fn tridiagonal_matches_dense_solve_and_minimizes_energy() {
        let mut rng = seeded(17);
        for _ in 0..10 {
            let mut times = vec![0.0];
            for _ in 0..4 {
                let last = *times.last().unwrap();
                times.push(last + uniform(&mut rng, 0.1, 1.0));
            }
            let end = *times.last().unwrap();
            times.iter_mut().for_each(|t| *t /= end);
            let vals = normal_vec(&mut rng, 5, 1.0);
            let knots: Vec<Vec<f64>> = vals.iter().map(|&v| vec![v]).collect();
            let s = cubic_spline_fit(&batch(knots, times.clone())).unwrap();

            // Full (K+1)-unknown system with natural end rows.
            let n = 5;
            let h: Vec<f64> = times.windows(2).map(|w| w[1] - w[0]).collect();
            let mut a = vec![vec![0.0; n]; n];
            let mut b = vec![0.0; n];
            a[0][0] = 1.0;
            a[n - 1][n - 1] = 1.0;
            for i in 1..n - 1 {
                a[i][i - 1] = h[i - 1];
                a[i][i] = 2.0 * (h[i - 1] + h[i]);
                a[i][i + 1] = h[i];
                b[i] = 6.0 * ((vals[i + 1] - vals[i]) / h[i] - (vals[i] - vals[i - 1]) / h[i - 1]);
            }
            let m = dense_solve(a, b);
            for i in 0..n {
                assert!((m[i] - s.second_derivatives().row(i)[0]).abs() < 1e-10);
                assert!((s.eval(times[i]).unwrap()[0] - vals[i]).abs() < 1e-10);
            }

            // Any other H² interpolant (spline plus bumps vanishing at knots) bends more.
            let grid = 20_000;
            let mut e_other = 0.0;
            let dt = 1.0 / grid as f64;
            for j in 0..grid {
                let t = (j as f64 + 0.5) * dt;
                let k = segment_index(&times, t).unwrap();
                let (u, w) = (t - times[k], times[k + 1] - t);
                // second derivative of 3·u²w²
                let bump = 3.0 * (2.0 * w * w - 8.0 * u * w + 2.0 * u * u);
                let v = s.second_deriv(t).unwrap()[0] + bump;
                e_other += v * v * dt;
            }
            assert!(s.bending_energy() <= e_other);
        }
    }

    #[test]
    fn duplicate_times_are_rejected() {
        let t = Tensor::from_rows(&[vec![0.0], vec![1.0], vec![2.0]]).unwrap();
        assert!(MarginalBatch::new(t, vec![0.0, 0.5, 0.5]).is_err());
    }
}
