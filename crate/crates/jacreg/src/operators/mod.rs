//! Linear forward operators `A` of the measurement model `y = A x + n`:
//! compressive Gaussian matrices and Fourier-domain subsampling, with
//! apply/adjoint/materialize/Lipschitz-bound surfaces and the bounded-noise
//! model.

pub mod fft;
mod fourier;
mod gaussian;
pub mod mask;
mod noise;

pub use fourier::FourierMaskOperator;
pub use gaussian::GaussianOperator;
pub use mask::{make_mask, Mask, MaskKind, CENTER_FRACTION};
pub use noise::NoiseModel;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels;
use crate::seeding;
use crate::svd;
use crate::tensor::Tensor;

/// Materialization guard: `out_dim * in_dim` entries at most.
pub const MATERIALIZE_GUARD: usize = 1_000_000;

pub trait LinearOperator: Send + Sync {
    fn in_dim(&self) -> usize;
    fn out_dim(&self) -> usize;

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>>;
    fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>>;

    /// Explicit matrix whose columns are `apply(e_j)`.
    fn materialize(&self) -> Result<Tensor> {
        let (m, n) = (self.out_dim(), self.in_dim());
        if m * n > MATERIALIZE_GUARD {
            return Err(Error::SizeGuard {
                what: "operator materialization",
                needed: m * n,
                limit: MATERIALIZE_GUARD,
            });
        }
        let mut data = vec![0.0; m * n];
        let mut e = vec![0.0; n];
        for j in 0..n {
            e[j] = 1.0;
            let col = self.apply(&e)?;
            e[j] = 0.0;
            for i in 0..m {
                data[i * n + j] = col[i];
            }
        }
        Tensor::matrix(m, n, data)
    }

    /// Lipschitz bound `sigma_max(A)`: SVD of the materialized matrix when
    /// it fits the guard, power iteration on `A^T A` otherwise.
    fn lipschitz_bound(&self) -> Result<f64> {
        if self.out_dim() * self.in_dim() <= MATERIALIZE_GUARD {
            let m = self.materialize()?;
            Ok(svd::sigma_max(self.out_dim(), self.in_dim(), m.vals()))
        } else {
            lipschitz_via_power(self, 300, 0x51_0b)
        }
    }
}

/// `sigma_max(A)` by power iteration on `A^T A`; the route used above the
/// materialization guard, exposed so both routes can be cross-checked.
pub fn lipschitz_via_power(op: &(impl LinearOperator + ?Sized), iters: usize, seed: u64) -> Result<f64> {
    let n = op.in_dim();
    let mut rng = seeding::rng(seed, 0);
    let mut x: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    let mut norm = kernels::norm2(&x);
    if norm == 0.0 {
        return Ok(0.0);
    }
    x = kernels::scale(&x, 1.0 / norm);
    let mut lambda = 0.0;
    for _ in 0..iters {
        let z = op.apply_adjoint(&op.apply(&x)?)?;
        norm = kernels::norm2(&z);
        if norm == 0.0 {
            return Ok(0.0);
        }
        let next = kernels::dot(&x, &z);
        x = kernels::scale(&z, 1.0 / norm);
        if (next - lambda).abs() <= 1e-14 * next.abs() {
            lambda = next;
            break;
        }
        lambda = next;
    }
    Ok(lambda.max(0.0).sqrt())
}

/// 1000-trial adjoint identity check, used across operator tests.
#[cfg(test)]
pub(crate) fn check_adjoint_identity(op: &dyn LinearOperator, seed: u64) {
    let mut rng = seeding::rng(seed, 0);
    for _ in 0..1000 {
        let x: Vec<f64> = (0..op.in_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let u: Vec<f64> = (0..op.out_dim()).map(|_| rng.sample(StandardNormal)).collect();
        let lhs = kernels::dot(&u, &op.apply(&x).unwrap());
        let rhs = kernels::dot(&op.apply_adjoint(&u).unwrap(), &x);
        assert!(
            (lhs - rhs).abs() <= 1e-10 * (1.0 + lhs.abs()),
            "adjoint identity violated: {lhs} vs {rhs}"
        );
    }
}
