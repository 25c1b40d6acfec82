//! Fourier-domain subsampling operator `A = F^-1 M F` with a binary k-space
//! mask `M`, as used for retrospectively undersampled MR measurements.
//!
//! Complex measurements are represented as stacked real/imaginary vectors,
//! so `A` is a real linear map from `R^p` to `R^(2p)` and all downstream
//! norm machinery stays real-valued. With the unitary DFT normalization the
//! Lipschitz bound of `A` is exactly 1 for any mask containing the center.

use crate::error::{Error, Result};

use super::fft::fft2d;
use super::mask::{make_mask, Mask, MaskKind};
use super::LinearOperator;

#[derive(Clone)]
pub struct FourierMaskOperator {
    h: usize,
    w: usize,
    mask: Mask,
    kind: MaskKind,
    /// Mask in frequency layout, as 0/1 weights.
    freq: Vec<f64>,
}

impl FourierMaskOperator {
    pub fn new(kind: MaskKind, h: usize, w: usize, s: f64, seed: u64) -> Result<Self> {
        let mask = make_mask(kind, h, w, s, seed)?;
        Self::from_mask(kind, mask)
    }

    pub fn from_mask(kind: MaskKind, mask: Mask) -> Result<Self> {
        let (h, w) = (mask.h, mask.w);
        let freq = mask.to_frequency_weights();
        Ok(FourierMaskOperator {
            h,
            w,
            mask,
            kind,
            freq,
        })
    }

    pub fn full(h: usize, w: usize) -> Result<Self> {
        Self::from_mask(
            MaskKind::Random2dCenter,
            Mask::from_bits(h, w, vec![1; h * w])?,
        )
    }

    pub fn mask(&self) -> &Mask {
        &self.mask
    }

    pub fn kind(&self) -> MaskKind {
        self.kind
    }

    /// Achieved subsampling ratio (nonzero mask bins over `p`).
    pub fn subsample_ratio(&self) -> f64 {
        self.mask.ratio()
    }

    pub fn image_dims(&self) -> (usize, usize) {
        (self.h, self.w)
    }

    /// `F^-1 M F` acting on a complex image given as (re, im) planes.
    pub fn apply_complex(&self, re: &[f64], im: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let p = self.h * self.w;
        if re.len() != p || im.len() != p {
            return Err(Error::ShapeMismatch {
                context: "fourier apply_complex",
                expected: format!("{p}"),
                got: format!("{} and {}", re.len(), im.len()),
            });
        }
        let mut fr = re.to_vec();
        let mut fi = im.to_vec();
        fft2d(&mut fr, &mut fi, self.h, self.w, false)?;
        for (k, m) in self.freq.iter().enumerate() {
            fr[k] *= m;
            fi[k] *= m;
        }
        fft2d(&mut fr, &mut fi, self.h, self.w, true)?;
        Ok((fr, fi))
    }
}

impl LinearOperator for FourierMaskOperator {
    fn in_dim(&self) -> usize {
        self.h * self.w
    }

    fn out_dim(&self) -> usize {
        2 * self.h * self.w
    }

    fn apply(&self, x: &[f64]) -> Result<Vec<f64>> {
        let p = self.in_dim();
        if x.len() != p {
            return Err(Error::ShapeMismatch {
                context: "fourier apply",
                expected: format!("{p}"),
                got: format!("{}", x.len()),
            });
        }
        let (re, im) = self.apply_complex(x, &vec![0.0; p])?;
        let mut out = re;
        out.extend(im);
        Ok(out)
    }

    /// `A^T u = Re(F^-1 M F (u_re + i u_im))`: the complex map is Hermitian
    /// (unitary conjugation of a real diagonal), so the real adjoint is the
    /// real part of its action on the stacked vector read as complex.
    fn apply_adjoint(&self, u: &[f64]) -> Result<Vec<f64>> {
        let p = self.in_dim();
        if u.len() != 2 * p {
            return Err(Error::ShapeMismatch {
                context: "fourier adjoint",
                expected: format!("{}", 2 * p),
                got: format!("{}", u.len()),
            });
        }
        let (re, _) = self.apply_complex(&u[..p], &u[p..])?;
        Ok(re)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels;
    use crate::operators::check_adjoint_identity;
    use crate::seeding;
    use rand::Rng;

    #[test]
    fn full_mask_is_isometric_embedding() {
        let a = FourierMaskOperator::full(4, 4).unwrap();
        let mut rng = seeding::rng(1, 0);
        let x: Vec<f64> = (0..16).map(|_| rng.random::<f64>()).collect();
        let y = a.apply(&x).unwrap();
        for k in 0..16 {
            assert!((y[k] - x[k]).abs() <= 1e-10);
            assert!(y[16 + k].abs() <= 1e-10);
        }
        // Adjoint of the (x, 0) stacking recovers x.
        let back = a.apply_adjoint(&y).unwrap();
        for k in 0..16 {
            assert!((back[k] - x[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn apply_matches_materialized_matrix() {
        let a = FourierMaskOperator::new(MaskKind::Random2dCenter, 8, 8, 0.2, 3).unwrap();
        let m = a.materialize().unwrap();
        // Impulse image.
        let mut x = vec![0.0; 64];
        x[13] = 1.0;
        let direct = a.apply(&x).unwrap();
        let via_matrix = kernels::matvec(m.vals(), &x, 128, 64);
        for (d, v) in direct.iter().zip(&via_matrix) {
            assert!((d - v).abs() <= 1e-10);
        }
        // And on a random image for the 1D mask.
        let a = FourierMaskOperator::new(MaskKind::Cartesian1d, 8, 8, 0.25, 5).unwrap();
        let m = a.materialize().unwrap();
        let mut rng = seeding::rng(4, 0);
        let x: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let direct = a.apply(&x).unwrap();
        let via_matrix = kernels::matvec(m.vals(), &x, 128, 64);
        for (d, v) in direct.iter().zip(&via_matrix) {
            assert!((d - v).abs() <= 1e-10);
        }
    }

    #[test]
    fn adjoint_identity_thousand_trials() {
        let a = FourierMaskOperator::new(MaskKind::Random2dCenter, 8, 8, 0.25, 11).unwrap();
        check_adjoint_identity(&a, 12);
    }

    #[test]
    fn nonempty_mask_has_unit_lipschitz_bound() {
        for (kind, s) in [
            (MaskKind::Cartesian1d, 0.25),
            (MaskKind::Random2dCenter, 0.2),
        ] {
            let a = FourierMaskOperator::new(kind, 8, 8, s, 19).unwrap();
            let sigma = a.lipschitz_bound().unwrap();
            assert!((sigma - 1.0).abs() <= 1e-6, "sigma {sigma}");
        }
    }

    #[test]
    fn masked_map_is_idempotent() {
        let a = FourierMaskOperator::new(MaskKind::Cartesian1d, 8, 8, 0.5, 23).unwrap();
        let mut rng = seeding::rng(24, 0);
        let x: Vec<f64> = (0..64).map(|_| rng.random::<f64>()).collect();
        let (r1, i1) = a.apply_complex(&x, &vec![0.0; 64]).unwrap();
        let (r2, i2) = a.apply_complex(&r1, &i1).unwrap();
        for k in 0..64 {
            assert!((r1[k] - r2[k]).abs() <= 1e-10 && (i1[k] - i2[k]).abs() <= 1e-10);
        }
    }

    #[test]
    fn achieved_ratio_is_recorded() {
        let a = FourierMaskOperator::new(MaskKind::Random2dCenter, 16, 16, 0.2, 29).unwrap();
        let s = a.subsample_ratio();
        assert!((s - 0.2).abs() <= 1.0 / 256.0, "ratio {s}");
    }
}
