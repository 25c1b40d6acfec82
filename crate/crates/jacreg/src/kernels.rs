//! Scalar kernels shared by the tape operations and the detached value paths.
//!
//! Both call sites must produce bit-identical results, so every numeric loop
//! lives here exactly once.

/// `W x` for row-major `W` of shape `m x n`.
pub fn matvec(w: &[f64], x: &[f64], m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), m * n);
    debug_assert_eq!(x.len(), n);
    let mut out = vec![0.0; m];
    for (i, o) in out.iter_mut().enumerate() {
        let row = &w[i * n..(i + 1) * n];
        let mut acc = 0.0;
        for (a, b) in row.iter().zip(x.iter()) {
            acc += a * b;
        }
        *o = acc;
    }
    out
}

/// `W^T u` for row-major `W` of shape `m x n`.
pub fn matvec_t(w: &[f64], u: &[f64], m: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(w.len(), m * n);
    debug_assert_eq!(u.len(), m);
    let mut out = vec![0.0; n];
    for i in 0..m {
        let ui = u[i];
        let row = &w[i * n..(i + 1) * n];
        for (o, wv) in out.iter_mut().zip(row.iter()) {
            *o += wv * ui;
        }
    }
    out
}

/// Outer product `u v^T`, row-major `m x n`.
pub fn outer(u: &[f64], v: &[f64]) -> Vec<f64> {
    let mut out = vec![0.0; u.len() * v.len()];
    for (i, &ui) in u.iter().enumerate() {
        let row = &mut out[i * v.len()..(i + 1) * v.len()];
        for (o, &vj) in row.iter_mut().zip(v.iter()) {
            *o = ui * vj;
        }
    }
    out
}

pub fn add(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}

pub fn sub(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x - y).collect()
}

pub fn mul(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x * y).collect()
}

pub fn div(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| x / y).collect()
}

pub fn neg(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| -x).collect()
}

pub fn scale(a: &[f64], c: f64) -> Vec<f64> {
    a.iter().map(|x| c * x).collect()
}

pub fn relu(a: &[f64]) -> Vec<f64> {
    a.iter().map(|&x| if x > 0.0 { x } else { 0.0 }).collect()
}

/// `step(x) * g` elementwise, with `step(0) = 0`.
pub fn relu_mask_mul(x: &[f64], g: &[f64]) -> Vec<f64> {
    x.iter()
        .zip(g)
        .map(|(&xi, &gi)| if xi > 0.0 { gi } else { 0.0 })
        .collect()
}

/// `A B` for row-major `A` (`m x k`) and `B` (`k x n`).
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    debug_assert_eq!(a.len(), m * k);
    debug_assert_eq!(b.len(), k * n);
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for l in 0..k {
            let ail = a[i * k + l];
            let brow = &b[l * n..(l + 1) * n];
            let orow = &mut out[i * n..(i + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += ail * bv;
            }
        }
    }
    out
}

pub fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = 0.0;
    for (x, y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

pub fn sqrt(a: &[f64]) -> Vec<f64> {
    a.iter().map(|x| x.sqrt()).collect()
}

pub fn norm2(a: &[f64]) -> f64 {
    dot(a, a).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn matvec_and_transpose() {
        let w = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0]; // 2x3
        assert_eq!(matvec(&w, &[1.0, 0.0, -1.0], 2, 3), vec![-2.0, -2.0]);
        assert_eq!(matvec_t(&w, &[1.0, 1.0], 2, 3), vec![5.0, 7.0, 9.0]);
    }

    #[test]
    fn outer_shape_and_values() {
        assert_eq!(
            outer(&[1.0, 2.0], &[3.0, 4.0, 5.0]),
            vec![3.0, 4.0, 5.0, 6.0, 8.0, 10.0]
        );
    }

    #[test]
    fn relu_derivative_is_zero_at_zero() {
        assert_eq!(relu_mask_mul(&[0.0, 1.0, -1.0], &[5.0, 5.0, 5.0]), vec![
            0.0, 5.0, 0.0
        ]);
    }
}
