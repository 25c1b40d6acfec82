//! Unitary 1D/2D discrete Fourier transforms: radix-2 for power-of-two
//! lengths, direct evaluation as a fallback for small non-power-of-two
//! sizes. Both directions scale by `1/sqrt(n)`, so the transform is unitary
//! and `ifft(fft(x)) == x` to rounding.

use std::f64::consts::PI;

use crate::error::{Error, Result};

/// Largest non-power-of-two length served by the direct fallback.
pub const DIRECT_DFT_GUARD: usize = 64;

fn fft_radix2(re: &mut [f64], im: &mut [f64], inverse: bool) {
    let n = re.len();
    let mut j = 0;
    for i in 1..n {
        let mut bit = n >> 1;
        while j & bit != 0 {
            j ^= bit;
            bit >>= 1;
        }
        j |= bit;
        if i < j {
            re.swap(i, j);
            im.swap(i, j);
        }
    }
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut len = 2;
    while len <= n {
        let ang = sign * 2.0 * PI / len as f64;
        for start in (0..n).step_by(len) {
            for k in 0..len / 2 {
                let (ci, cr) = (ang * k as f64).sin_cos();
                let a = start + k;
                let b = a + len / 2;
                let tr = re[b] * cr - im[b] * ci;
                let ti = re[b] * ci + im[b] * cr;
                re[b] = re[a] - tr;
                im[b] = im[a] - ti;
                re[a] += tr;
                im[a] += ti;
            }
        }
        len <<= 1;
    }
}

fn dft_direct(re: &[f64], im: &[f64], inverse: bool) -> (Vec<f64>, Vec<f64>) {
    let n = re.len();
    let sign = if inverse { 1.0 } else { -1.0 };
    let mut out_re = vec![0.0; n];
    let mut out_im = vec![0.0; n];
    for k in 0..n {
        let mut ar = 0.0;
        let mut ai = 0.0;
        for j in 0..n {
            let ang = sign * 2.0 * PI * (j * k % n) as f64 / n as f64;
            let (s, c) = ang.sin_cos();
            ar += re[j] * c - im[j] * s;
            ai += re[j] * s + im[j] * c;
        }
        out_re[k] = ar;
        out_im[k] = ai;
    }
    (out_re, out_im)
}

/// In-place unitary 1D transform.
pub fn fft1d(re: &mut [f64], im: &mut [f64], inverse: bool) -> Result<()> {
    let n = re.len();
    if n != im.len() {
        return Err(Error::ShapeMismatch {
            context: "fft1d",
            expected: format!("{n}"),
            got: format!("{}", im.len()),
        });
    }
    if n == 0 {
        return Err(Error::invalid("fft1d on empty input"));
    }
    if n.is_power_of_two() {
        fft_radix2(re, im, inverse);
    } else if n <= DIRECT_DFT_GUARD {
        let (r, i) = dft_direct(re, im, inverse);
        re.copy_from_slice(&r);
        im.copy_from_slice(&i);
    } else {
        return Err(Error::SizeGuard {
            what: "direct DFT fallback",
            needed: n,
            limit: DIRECT_DFT_GUARD,
        });
    }
    let scale = 1.0 / (n as f64).sqrt();
    for v in re.iter_mut().chain(im.iter_mut()) {
        *v *= scale;
    }
    Ok(())
}

/// In-place unitary 2D transform over a row-major `h x w` grid.
pub fn fft2d(re: &mut [f64], im: &mut [f64], h: usize, w: usize, inverse: bool) -> Result<()> {
    if re.len() != h * w || im.len() != h * w {
        return Err(Error::ShapeMismatch {
            context: "fft2d",
            expected: format!("{h}x{w}"),
            got: format!("{} and {}", re.len(), im.len()),
        });
    }
    for r in 0..h {
        fft1d(&mut re[r * w..(r + 1) * w], &mut im[r * w..(r + 1) * w], inverse)?;
    }
    let mut col_re = vec![0.0; h];
    let mut col_im = vec![0.0; h];
    for c in 0..w {
        for r in 0..h {
            col_re[r] = re[r * w + c];
            col_im[r] = im[r * w + c];
        }
        fft1d(&mut col_re, &mut col_im, inverse)?;
        for r in 0..h {
            re[r * w + c] = col_re[r];
            im[r * w + c] = col_im[r];
        }
    }
    Ok(())
}
