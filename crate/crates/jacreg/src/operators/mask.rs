//! k-space sampling masks: Cartesian 1D column masks and 2D random masks,
//! both with a fully sampled center, plus PGM export/import.
//!
//! Masks are stored in centered layout (DC at `(h/2, w/2)`, matching how
//! masks are usually displayed); the Fourier operator shifts them into
//! frequency order.

use std::fs;
use std::path::Path;

use rand::seq::SliceRandom;

use crate::error::{Error, Result};
use crate::seeding;

/// Fraction of each dimension that is always fully sampled around the
/// center (band width for 1D, disk radius for 2D).
pub const CENTER_FRACTION: f64 = 0.08;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum MaskKind {
    Cartesian1d,
    Random2dCenter,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Mask {
    pub h: usize,
    pub w: usize,
    /// Row-major 0/1 in centered layout.
    bits: Vec<u8>,
}

impl Mask {
    pub fn from_bits(h: usize, w: usize, bits: Vec<u8>) -> Result<Self> {
        if bits.len() != h * w {
            return Err(Error::ShapeMismatch {
                context: "mask bits",
                expected: format!("{}", h * w),
                got: format!("{}", bits.len()),
            });
        }
        Ok(Mask {
            h,
            w,
            bits: bits.into_iter().map(|b| (b != 0) as u8).collect(),
        })
    }

    pub fn get(&self, i: usize, j: usize) -> bool {
        self.bits[i * self.w + j] != 0
    }

    pub fn nonzero(&self) -> usize {
        self.bits.iter().map(|&b| b as usize).sum()
    }

    /// Achieved subsampling ratio.
    pub fn ratio(&self) -> f64 {
        self.nonzero() as f64 / (self.h * self.w) as f64
    }

    /// Centered layout -> frequency layout (DC first), as 0.0/1.0 weights.
    pub fn to_frequency_weights(&self) -> Vec<f64> {
        let (h, w) = (self.h, self.w);
        let mut out = vec![0.0; h * w];
        for ci in 0..h {
            for cj in 0..w {
                let fi = (ci + h - h / 2) % h;
                let fj = (cj + w - w / 2) % w;
                out[fi * w + fj] = self.bits[ci * w + cj] as f64;
            }
        }
        out
    }

    /// Binary PGM (P5, one byte per bin: 255 sampled, 0 skipped).
    pub fn write_pgm(&self, path: &Path) -> Result<()> {
        let mut data = format!("P5\n{} {}\n255\n", self.w, self.h).into_bytes();
        data.extend(self.bits.iter().map(|&b| if b != 0 { 255u8 } else { 0u8 }));
        fs::write(path, data).map_err(|e| Error::io(path.display().to_string(), e))
    }

    pub fn read_pgm(path: &Path) -> Result<Self> {
        let data = fs::read(path).map_err(|e| Error::io(path.display().to_string(), e))?;
        let parse_err = |detail: &str| Error::Parse {
            path: path.display().to_string(),
            detail: detail.into(),
        };
        // Header: magic, width, height, maxval as whitespace-separated tokens.
        let mut pos = 0;
        let mut tokens = Vec::new();
        while tokens.len() < 4 && pos < data.len() {
            while pos < data.len() && data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            let start = pos;
            while pos < data.len() && !data[pos].is_ascii_whitespace() {
                pos += 1;
            }
            tokens.push(std::str::from_utf8(&data[start..pos]).map_err(|_| parse_err("bad header"))?);
        }
        if tokens.len() < 4 || tokens[0] != "P5" {
            return Err(parse_err("not a binary PGM"));
        }
        let w: usize = tokens[1].parse().map_err(|_| parse_err("bad width"))?;
        let h: usize = tokens[2].parse().map_err(|_| parse_err("bad height"))?;
        pos += 1; // single whitespace after maxval
        if data.len() < pos + h * w {
            return Err(parse_err("truncated pixel data"));
        }
        let bits = data[pos..pos + h * w]
            .iter()
            .map(|&b| (b != 0) as u8)
            .collect();
        Mask::from_bits(h, w, bits)
    }
}

/// Build a sampling mask with the requested kind and subsampling ratio.
///
/// `cartesian1d` selects whole frequency columns: a mandatory center band of
/// width `ceil(0.08 w)` plus uniformly random columns until `round(s * w)`
/// columns are selected. `random2d_center` selects a central disk of radius
/// `ceil(0.08 min(h, w))` plus uniformly random bins until `round(s * h * w)`
/// bins are selected.
pub fn make_mask(kind: MaskKind, h: usize, w: usize, s: f64, seed: u64) -> Result<Mask> {
    if !(s > 0.0 && s <= 1.0) {
        return Err(Error::invalid(format!(
            "subsample ratio must be in (0, 1], got {s}"
        )));
    }
    if h == 0 || w == 0 {
        return Err(Error::invalid("mask dimensions must be positive"));
    }
    let mut bits = vec![0u8; h * w];
    match kind {
        MaskKind::Cartesian1d => {
            let band = (CENTER_FRACTION * w as f64).ceil() as usize;
            let target = (s * w as f64).round() as usize;
            if target < band {
                return Err(Error::invalid(format!(
                    "ratio {s} selects {target} columns, below the mandatory center band of {band}"
                )));
            }
            // Band positioned to contain the DC column at w/2.
            let c0 = w / 2 - band / 2;
            let mut selected = vec![false; w];
            for col in selected.iter_mut().skip(c0).take(band) {
                *col = true;
            }
            let mut rest: Vec<usize> = (0..w).filter(|&c| !(c0..c0 + band).contains(&c)).collect();
            let mut rng = seeding::rng(seed, 0);
            rest.shuffle(&mut rng);
            for &c in rest.iter().take(target - band) {
                selected[c] = true;
            }
            for i in 0..h {
                for (j, &sel) in selected.iter().enumerate() {
                    bits[i * w + j] = sel as u8;
                }
            }
        }
        MaskKind::Random2dCenter => {
            let radius = (CENTER_FRACTION * h.min(w) as f64).ceil() as i64;
            let target = (s * (h * w) as f64).round() as usize;
            let (ci, cj) = ((h / 2) as i64, (w / 2) as i64);
            let mut disk = 0usize;
            for i in 0..h {
                for j in 0..w {
                    let (di, dj) = (i as i64 - ci, j as i64 - cj);
                    if di * di + dj * dj <= radius * radius {
                        bits[i * w + j] = 1;
                        disk += 1;
                    }
                }
            }
            if target < disk {
                return Err(Error::invalid(format!(
                    "ratio {s} selects {target} bins, below the mandatory center disk of {disk}"
                )));
            }
            let mut rest: Vec<usize> = (0..h * w).filter(|&k| bits[k] == 0).collect();
            let mut rng = seeding::rng(seed, 1);
            rest.shuffle(&mut rng);
            for &k in rest.iter().take(target - disk) {
                bits[k] = 1;
            }
        }
    }
    Mask::from_bits(h, w, bits)
}
