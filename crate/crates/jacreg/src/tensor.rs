//! Dense 64-bit float tensors with a global allocation counter.
//!
//! Every buffer that flows through the differentiation engine or an
//! explicit-Jacobian path is a [`Tensor`], so `peak_bytes()` gives an
//! apples-to-apples memory comparison between matrix-free estimators and
//! materialized-matrix baselines.

use std::sync::atomic::{AtomicUsize, Ordering};

use crate::error::{Error, Result};

static CURRENT_BYTES: AtomicUsize = AtomicUsize::new(0);
static PEAK_BYTES: AtomicUsize = AtomicUsize::new(0);

fn note_alloc(bytes: usize) {
    let cur = CURRENT_BYTES.fetch_add(bytes, Ordering::Relaxed) + bytes;
    PEAK_BYTES.fetch_max(cur, Ordering::Relaxed);
}

fn note_free(bytes: usize) {
    CURRENT_BYTES.fetch_sub(bytes, Ordering::Relaxed);
}

/// Bytes currently held by live tensors.
pub fn current_bytes() -> usize {
    CURRENT_BYTES.load(Ordering::Relaxed)
}

/// High-water mark since the last [`reset_peak`].
pub fn peak_bytes() -> usize {
    PEAK_BYTES.load(Ordering::Relaxed)
}

/// Reset the high-water mark to the current live total.
pub fn reset_peak() {
    PEAK_BYTES.store(CURRENT_BYTES.load(Ordering::Relaxed), Ordering::Relaxed);
}

/// Row-major tensor of `f64` values. Shape `[]` is a scalar, `[n]` a vector,
/// `[m, n]` a matrix.
#[derive(Debug)]
pub struct Tensor {
    shape: Vec<usize>,
    vals: Vec<f64>,
}

impl Tensor {
    pub fn new(shape: Vec<usize>, vals: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != vals.len() {
            return Err(Error::ShapeMismatch {
                context: "Tensor::new",
                expected: format!("{expect} values for shape {shape:?}"),
                got: format!("{}", vals.len()),
            });
        }
        note_alloc(vals.len() * 8);
        Ok(Tensor { shape, vals })
    }

    pub fn scalar(x: f64) -> Self {
        Tensor::new(vec![1], vec![x]).expect("scalar shape")
    }

    pub fn vector(vals: Vec<f64>) -> Self {
        let n = vals.len();
        Tensor::new(vec![n], vals).expect("vector shape")
    }

    pub fn matrix(rows: usize, cols: usize, vals: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], vals)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Tensor::new(shape.to_vec(), vec![0.0; n]).expect("zeros shape")
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn vals(&self) -> &[f64] {
        &self.vals
    }

    pub fn vals_mut(&mut self) -> &mut [f64] {
        &mut self.vals
    }

    pub fn len(&self) -> usize {
        self.vals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.vals.is_empty()
    }

    /// Scalar extraction; the tensor must hold exactly one value.
    pub fn item(&self) -> Result<f64> {
        if self.vals.len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "Tensor::item",
                expected: "1 value".into(),
                got: format!("{}", self.vals.len()),
            });
        }
        Ok(self.vals[0])
    }

    pub fn is_vector(&self) -> bool {
        self.shape.len() == 1
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    pub fn all_finite(&self) -> bool {
        self.vals.iter().all(|v| v.is_finite())
    }
}

impl Clone for Tensor {
    fn clone(&self) -> Self {
        note_alloc(self.vals.len() * 8);
        Tensor {
            shape: self.shape.clone(),
            vals: self.vals.clone(),
        }
    }
}

impl Drop for Tensor {
    fn drop(&mut self) {
        note_free(self.vals.len() * 8);
    }
}

impl PartialEq for Tensor {
    fn eq(&self, other: &Self) -> bool {
        self.shape == other.shape && self.vals == other.vals
    }
}
