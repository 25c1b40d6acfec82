//! Compressive Gaussian measurement operator: a wide `q x p` matrix with
//! i.i.d. `N(0, 1/q)` entries, fixed once sampled.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels;
use crate::seeding;
use crate::tensor::Tensor;

use super::LinearOperator;

#[derive(Clone)]
pub struct GaussianOperator {
    matrix: Vec<f64>,
    q: usize,
    p: usize,
    pub seed: u64,
}

impl GaussianOperator {
    /// Sample a compressive operator (`q < p`) with `N(0, 1/q)` entries.
    pub fn sample(q: usize, p: usize, seed: u64) -> Result<Self> {
        if q == 0 || p == 0 {
            return Err(Error::invalid("operator dimensions must be positive"));
        }
        if q >= p {
            return Err(Error::invalid(format!(
                "compressive operator needs q < p, got q={q}, p={p}"
            )));
        }
        let std = (1.0 / q as f64).sqrt();
        let mut rng = seeding::rng(seed, 0);
        let matrix = (0..q * p)
            .map(|_| {
                let g: f64 = rng.sample(StandardNormal);
                g * std
            })
            .collect();
        Ok(GaussianOperator { matrix, q, p, seed })
    }

    /// Wrap an explicit matrix (no compressive constraint; used for
    /// hand-set operators in tests and tools).
    pub fn from_matrix(q: usize, p: usize, matrix: Vec<f64>) -> Result<Self> {
        if matrix.len() != q * p {
            return Err(Error::ShapeMismatch {
                context: "GaussianOperator::from_matrix",
                expected: format!("{}", q * p),
                got: format!("{}", matrix.len()),
            });
        }
        Ok(GaussianOperator {
            matrix,
            q,
            p,
            seed: 0,
        })
    }

    pub fn identity(n: usize) -> Self {
        let mut matrix = vec![0.0; n * n];
        for i in 0..n {
            matrix[i * n + i] = 1.0;
        }
        GaussianOperator {
            matrix,
            q: n,
            p: n,
            seed: 0,
        }
    }

    pub fn matrix(&self) -> &[f64] {
        &self.matrix
    }
}

impl LinearOperator for GaussianOperator {
    fn in_dim(&self) -> usize {
        self.p
    }

    fn out_dim(&self) -> usize {
        self.q
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        if x.len() != self.p {
            return Err(Error::ShapeMismatch {
                context: "gaussian apply",
                expected: format!("{}", self.p),
                got: format!("{}", x.len()),
            });
        }
        Ok(kernels::matvec(&self.matrix, x, self.q, self.p))
    }

    fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        if u.len() != self.q {
            return Err(Error::ShapeMismatch {
                context: "gaussian adjoint",
                expected: format!("{}", self.q),
                got: format!("{}", u.len()),
            });
        }
        Ok(kernels::matvec_t(&self.matrix, u, self.q, self.p))
    }

    fn materialize(&self) -> Result<Tensor> {
        Tensor::matrix(self.q, self.p, self.matrix.clone())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operators::check_adjoint_identity;
    use crate::svd;

    #[test]
    fn apply_is_matrix_product() {
        let a = GaussianOperator::from_matrix(2, 3, vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0]).unwrap();
        assert_eq!(a.apply(&[3.0, 4.0, 5.0]).unwrap(), vec![3.0, 4.0]);
    }

    #[test]
    fn adjoint_is_transpose_row() {
        let a = GaussianOperator::from_matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!(a.apply_adjoint(&[1.0, 0.0]).unwrap(), vec![1.0, 2.0]);
    }

    #[test]
    fn adjoint_identity_thousand_trials() {
        let a = GaussianOperator::sample(10, 25, 77).unwrap();
        check_adjoint_identity(&a, 78);
    }

    #[test]
    fn materialize_is_bit_exact() {
        let a = GaussianOperator::sample(4, 9, 5).unwrap();
        let m = a.materialize().unwrap();
        assert_eq!(m.vals(), a.matrix());
    }

    #[test]
    fn sampling_requires_compression() {
        assert!(GaussianOperator::sample(5, 5, 0).is_err());
        assert!(GaussianOperator::sample(6, 5, 0).is_err());
    }

    #[test]
    fn lipschitz_matches_svd_oracle() {
        let a = GaussianOperator::from_matrix(2, 2, vec![3.0, 0.0, 0.0, 2.0]).unwrap();
        assert!((a.lipschitz_bound().unwrap() - 3.0).abs() < 1e-12);

        let g = GaussianOperator::sample(40, 784, 123).unwrap();
        let bound = g.lipschitz_bound().unwrap();
        let oracle = svd::sigma_max(40, 784, g.matrix());
        assert!((bound - oracle).abs() <= 1e-9 * oracle);
    }

    #[test]
    fn column_norm_statistics() {
        // Entries are N(0, 1/q), so each column's squared norm has mean 1.
        let mut total = 0.0;
        let mut count = 0.0;
        for seed in 0..4 {
            let a = GaussianOperator::sample(50, 200, seed).unwrap();
            for j in 0..200 {
                let mut s = 0.0;
                for i in 0..50 {
                    let v = a.matrix()[i * 200 + j];
                    s += v * v;
                }
                total += s;
                count += 1.0;
            }
        }
        let mean = total / count;
        assert!((mean - 1.0).abs() < 0.1, "mean column norm^2 {mean}");
    }
}
