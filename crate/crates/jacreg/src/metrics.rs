//! Reconstruction quality metrics: PSNR and windowed SSIM.

use crate::error::{Error, Result};

/// PSNR cap, keeping perfect reconstructions finite.
pub const PSNR_CAP: f64 = 99.0;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

/// `10 log10(data_range^2 / MSE)` in dB, capped at 99.
pub fn psnr(x_hat: &[f64], x: &[f64], data_range: f64) -> Result<f64> {
    if x_hat.len() != x.len() {
        return Err(Error::ShapeMismatch {
            context: "psnr",
            expected: format!("{}", x.len()),
            got: format!("{}", x_hat.len()),
        });
    }
    if x.is_empty() {
        return Err(Error::invalid("psnr on empty signal"));
    }
    let mse = x_hat
        .iter()
        .zip(x)
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        / x.len() as f64;
    if mse == 0.0 {
        return Ok(PSNR_CAP);
    }
    Ok((10.0 * (data_range * data_range / mse).log10()).min(PSNR_CAP))
}

fn gaussian_window() -> Vec<f64> {
    let half = (SSIM_WINDOW / 2) as isize;
    let mut w = Vec::with_capacity(SSIM_WINDOW * SSIM_WINDOW);
    for i in -half..=half {
        for j in -half..=half {
            let r2 = (i * i + j * j) as f64;
            w.push((-r2 / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp());
        }
    }
    let total: f64 = w.iter().sum();
    for v in &mut w {
        *v /= total;
    }
    w
}

/// Valid-mode weighted convolution of an `h x w` image with the SSIM window.
fn filter_valid(img: &[f64], h: usize, w: usize, win: &[f64]) -> Vec<f64> {
    let oh = h - SSIM_WINDOW + 1;
    let ow = w - SSIM_WINDOW + 1;
    let mut out = vec![0.0; oh * ow];
    for oi in 0..oh {
        for oj in 0..ow {
            let mut acc = 0.0;
            for wi in 0..SSIM_WINDOW {
                let row = &img[(oi + wi) * w + oj..(oi + wi) * w + oj + SSIM_WINDOW];
                let wrow = &win[wi * SSIM_WINDOW..(wi + 1) * SSIM_WINDOW];
                for (a, b) in row.iter().zip(wrow) {
                    acc += a * b;
                }
            }
            out[oi * ow + oj] = acc;
        }
    }
    out
}

/// Mean structural similarity over 11x11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, data range 1), valid-mode.
pub fn ssim(x_hat: &[f64], x: &[f64], h: usize, w: usize) -> Result<f64> {
    if x_hat.len() != h * w || x.len() != h * w {
        return Err(Error::ShapeMismatch {
            context: "ssim",
            expected: format!("{}", h * w),
            got: format!("{} and {}", x_hat.len(), x.len()),
        });
    }
    if h < SSIM_WINDOW || w < SSIM_WINDOW {
        return Err(Error::invalid(format!(
            "ssim needs images at least {SSIM_WINDOW} pixels per side, got {h}x{w}"
        )));
    }
    let win = gaussian_window();
    let mu1 = filter_valid(x_hat, h, w, &win);
    let mu2 = filter_valid(x, h, w, &win);
    let sq1: Vec<f64> = x_hat.iter().map(|a| a * a).collect();
    let sq2: Vec<f64> = x.iter().map(|a| a * a).collect();
    let prod: Vec<f64> = x_hat.iter().zip(x).map(|(a, b)| a * b).collect();
    let e1 = filter_valid(&sq1, h, w, &win);
    let e2 = filter_valid(&sq2, h, w, &win);
    let e12 = filter_valid(&prod, h, w, &win);

    let c1 = SSIM_K1 * SSIM_K1;
    let c2 = SSIM_K2 * SSIM_K2;
    let mut total = 0.0;
    for k in 0..mu1.len() {
        let (m1, m2) = (mu1[k], mu2[k]);
        let v1 = e1[k] - m1 * m1;
        let v2 = e2[k] - m2 * m2;
        let cov = e12[k] - m1 * m2;
        let num = (2.0 * m1 * m2 + c1) * (2.0 * cov + c2);
        let den = (m1 * m1 + m2 * m2 + c1) * (v1 + v2 + c2);
        total += num / den;
    }
    Ok(total / mu1.len() as f64)
}
