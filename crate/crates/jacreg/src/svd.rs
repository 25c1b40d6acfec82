//! Singular-value oracle backed by nalgebra.

use nalgebra::DMatrix;

/// Largest singular value of a row-major `rows x cols` matrix.
pub fn sigma_max(rows: usize, cols: usize, data: &[f64]) -> f64 {
    assert_eq!(data.len(), rows * cols);
    let m = DMatrix::from_row_slice(rows, cols, data);
    m.singular_values()
        .iter()
        .copied()
        .fold(0.0f64, f64::max)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn diagonal_case() {
        let d = [3.0, 0.0, 0.0, 2.0];
        assert!((sigma_max(2, 2, &d) - 3.0).abs() < 1e-12);
    }

    #[test]
    fn rectangular_case() {
        // [[1, 0, 0], [0, 0, 0]] has sigma_max 1.
        let d = [1.0, 0.0, 0.0, 0.0, 0.0, 0.0];
        assert!((sigma_max(2, 3, &d) - 1.0).abs() < 1e-12);
    }
}
