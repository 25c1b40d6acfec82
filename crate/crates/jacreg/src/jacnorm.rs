//! Matrix-free estimators of `||J||_2`, `||J A||_2` (power method on
//! jvp/vjp pairs), and `||J||_F^2`, `||J A||_F^2` (random unit-sphere
//! projections), plus SVD-backed oracles for verification.
//!
//! The power iteration runs `u <- J v`, `v <- J^T u` with per-iteration
//! normalization; the estimate is `||v^(n)|| / ||u^(n)||` with the final
//! iteration left unnormalized. That ratio is `||J^T u / ||u|| ||`, so the
//! estimate never exceeds the true spectral norm and is non-decreasing in
//! the iteration count.
//!
//! Each estimator has a detached value path and a tape path. The tape path
//! differentiates through the final iteration only, treating earlier
//! iterates as constants (the usual power-iteration gradient approximation);
//! with shared seeds its value matches the detached path bit-for-bit.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::autodiff::{Network, Tape, TapeNet, Var};
use crate::error::{Error, Result};
use crate::kernels;
use crate::operators::LinearOperator;
use crate::seeding;
use crate::svd;
use crate::tensor::Tensor;

#[derive(Clone, Copy, Debug)]
pub struct PowerConfig {
    pub n_iters: usize,
    pub seed: u64,
}

impl PowerConfig {
    pub fn new(n_iters: usize, seed: u64) -> Result<Self> {
        if n_iters == 0 {
            return Err(Error::invalid("power iteration needs n_iters >= 1"));
        }
        Ok(PowerConfig { n_iters, seed })
    }
}

impl Default for PowerConfig {
    fn default() -> Self {
        PowerConfig { n_iters: 3, seed: 0 }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct ProjConfig {
    pub n_proj: usize,
    pub seed: u64,
}

impl ProjConfig {
    pub fn new(n_proj: usize, seed: u64) -> Result<Self> {
        if n_proj == 0 {
            return Err(Error::invalid("projection estimator needs n_proj >= 1"));
        }
        Ok(ProjConfig { n_proj, seed })
    }
}

fn unit_sphere(rng: &mut ChaCha8Rng, dim: usize) -> Vec<f64> {
    loop {
        let v: Vec<f64> = (0..dim).map(|_| rng.sample(StandardNormal)).collect();
        let n = kernels::norm2(&v);
        if n > 0.0 {
            return kernels::scale(&v, 1.0 / n);
        }
    }
}

const MAX_RESTARTS: usize = 3;

struct PowerOutcome {
    sigma: f64,
    /// Normalized input to the final iteration; `None` when every restart
    /// hit a zero iterate (the map is zero, `sigma == 0`).
    final_input: Option<Vec<f64>>,
}

/// Shared power-method core over forward/backward closures. The tape path
/// replays only the final iteration, so the outcome carries its input.
fn power_core(
    fwd: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    bwd: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    cfg: &PowerConfig,
) -> Result<PowerOutcome> {
    'restart: for restart in 0..=MAX_RESTARTS {
        let mut rng = seeding::rng(cfg.seed, restart as u64);
        let mut v = unit_sphere(&mut rng, dim);
        for i in 1..=cfg.n_iters {
            let u = fwd(&v)?;
            let nu = kernels::norm2(&u);
            if nu == 0.0 {
                continue 'restart;
            }
            if i < cfg.n_iters {
                let u_hat = kernels::scale(&u, 1.0 / nu);
                let w = bwd(&u_hat)?;
                let nw = kernels::norm2(&w);
                if nw == 0.0 {
                    continue 'restart;
                }
                v = kernels::scale(&w, 1.0 / nw);
            } else {
                let w = bwd(&u)?;
                let sigma = kernels::norm2(&w) / nu;
                return Ok(PowerOutcome {
                    sigma,
                    final_input: Some(v),
                });
            }
        }
    }
    Ok(PowerOutcome {
        sigma: 0.0,
        final_input: None,
    })
}

/// Power-method estimate for an arbitrary linear map given as
/// forward/adjoint closures over `R^dim`. Returns the estimate and the
/// normalized input of the final iteration (`None` when the map is zero).
pub fn power_method(
    fwd: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    bwd: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    dim: usize,
    cfg: &PowerConfig,
) -> Result<(f64, Option<Vec<f64>>)> {
    let outcome = power_core(fwd, bwd, dim, cfg)?;
    Ok((outcome.sigma, outcome.final_input))
}

/// Estimate `sigma_max(J(y))`.
pub fn spectral(net: &Network, y: &[f64], cfg: &PowerConfig) -> Result<f64> {
    let trace = net.forward_trace(y)?;
    let mut fwd = |v: &[f64]| net.jvp_from_trace(&trace, v);
    let mut bwd = |u: &[f64]| net.vjp_from_trace(&trace, u);
    Ok(power_core(&mut fwd, &mut bwd, net.input_dim(), cfg)?.sigma)
}

/// Estimate `sigma_max(J(y) A)` by power iteration on the composite map.
pub fn spectral_composite(
    net: &Network,
    y: &[f64],
    op: &dyn LinearOperator,
    cfg: &PowerConfig,
) -> Result<f64> {
    check_composite_dims(net, op)?;
    let trace = net.forward_trace(y)?;
    let mut fwd = |v: &[f64]| net.jvp_from_trace(&trace, &op.apply(v)?);
    let mut bwd = |u: &[f64]| op.apply_adjoint(&net.vjp_from_trace(&trace, u)?);
    Ok(power_core(&mut fwd, &mut bwd, op.in_dim(), cfg)?.sigma)
}

fn check_composite_dims(net: &Network, op: &dyn LinearOperator) -> Result<()> {
    if op.out_dim() != net.input_dim() {
        return Err(Error::ShapeMismatch {
            context: "composite map",
            expected: format!("operator output {}", net.input_dim()),
            got: format!("{}", op.out_dim()),
        });
    }
    Ok(())
}

/// Unbiased estimate of `||J(y)||_F^2`: `p * mean_z ||z^T J||^2` over unit
/// sphere draws `z`.
pub fn frobenius_sq(net: &Network, y: &[f64], cfg: &ProjConfig) -> Result<f64> {
    let trace = net.forward_trace(y)?;
    let p = net.output_dim();
    frob_core(
        &mut |z: &[f64]| net.vjp_from_trace(&trace, z),
        p,
        cfg,
    )
}

/// Unbiased estimate of `||J(y) A||_F^2`; the projected row `z^T J` is
/// carried through `A` via the adjoint, since `(z^T J) A = (A^T (J^T z))^T`.
pub fn frobenius_sq_composite(
    net: &Network,
    y: &[f64],
    op: &dyn LinearOperator,
    cfg: &ProjConfig,
) -> Result<f64> {
    check_composite_dims(net, op)?;
    let trace = net.forward_trace(y)?;
    let p = net.output_dim();
    frob_core(
        &mut |z: &[f64]| op.apply_adjoint(&net.vjp_from_trace(&trace, z)?),
        p,
        cfg,
    )
}

fn frob_core(
    bwd: &mut dyn FnMut(&[f64]) -> Result<Vec<f64>>,
    out_dim: usize,
    cfg: &ProjConfig,
) -> Result<f64> {
    let mut rng = seeding::rng(cfg.seed, 0);
    let mut acc = 0.0;
    for _ in 0..cfg.n_proj {
        let z = unit_sphere(&mut rng, out_dim);
        let g = bwd(&z)?;
        acc += kernels::dot(&g, &g);
    }
    Ok(acc * (out_dim as f64 / cfg.n_proj as f64))
}

/// Max over batch elements of the per-sample spectral estimate, with the
/// argmax index (gradients flow only through the max element). Per-sample
/// seeds derive from `(cfg.seed, index)`.
pub fn batch_max_spectral(
    net: &Network,
    ys: &[&[f64]],
    op: Option<&dyn LinearOperator>,
    cfg: &PowerConfig,
) -> Result<(f64, usize)> {
    if ys.is_empty() {
        return Err(Error::invalid("batch_max_spectral on empty batch"));
    }
    let mut best = f64::NEG_INFINITY;
    let mut best_idx = 0;
    for (i, y) in ys.iter().enumerate() {
        let sub = PowerConfig {
            n_iters: cfg.n_iters,
            seed: seeding::derive(cfg.seed, i as u64),
        };
        let val = match op {
            Some(a) => spectral_composite(net, y, a, &sub)?,
            None => spectral(net, y, &sub)?,
        };
        if val > best {
            best = val;
            best_idx = i;
        }
    }
    Ok((best, best_idx))
}

/// An operator materialized onto a tape, for penalties that need `A^T`
/// applied to tape nodes.
pub struct TapeOperator<'a> {
    pub op: &'a dyn LinearOperator,
    pub leaf: Var,
}

impl<'a> TapeOperator<'a> {
    pub fn bind(tape: &mut Tape, op: &'a dyn LinearOperator) -> Result<Self> {
        let leaf = tape.leaf(op.materialize()?)?;
        Ok(TapeOperator { op, leaf })
    }
}

/// Spectral-norm penalty as a differentiable tape node. Runs the detached
/// power phase, then records the final iteration (`u = J v`, `w = J^T u`,
/// possibly composed with `A`) on the tape; the returned scalar equals the
/// detached estimate with the same seed.
pub fn spectral_penalty_on_tape(
    tape: &mut Tape,
    tnet: &TapeNet,
    net: &Network,
    y: &[f64],
    comp: Option<&TapeOperator>,
    cfg: &PowerConfig,
) -> Result<Var> {
    if cfg.n_iters == 0 {
        return Err(Error::invalid("power iteration needs n_iters >= 1"));
    }
    let trace = net.forward_trace(y)?;
    let outcome = match comp {
        None => {
            let mut fwd = |v: &[f64]| net.jvp_from_trace(&trace, v);
            let mut bwd = |u: &[f64]| net.vjp_from_trace(&trace, u);
            power_core(&mut fwd, &mut bwd, net.input_dim(), cfg)?
        }
        Some(c) => {
            check_composite_dims(net, c.op)?;
            let mut fwd = |v: &[f64]| net.jvp_from_trace(&trace, &c.op.apply(v)?);
            let mut bwd = |u: &[f64]| c.op.apply_adjoint(&net.vjp_from_trace(&trace, u)?);
            power_core(&mut fwd, &mut bwd, c.op.in_dim(), cfg)?
        }
    };
    let Some(v_prev) = outcome.final_input else {
        return tape.scalar_const(0.0);
    };

    let y_var = tape.leaf(Tensor::vector(y.to_vec()))?;
    let tangent_in = match comp {
        None => tape.leaf(Tensor::vector(v_prev))?,
        Some(c) => tape.leaf(Tensor::vector(c.op.apply(&v_prev)?))?,
    };
    let (out, u_var) = tnet.forward_with_tangent(tape, y_var, tangent_in)?;
    let g = tape.backward_emit(out, u_var, &[y_var])?[0];
    let w_var = match comp {
        None => g,
        Some(c) => tape.matvec_t(c.leaf, g)?,
    };
    let nw = tape.norm2(w_var)?;
    let nu = tape.norm2(u_var)?;
    tape.div(nw, nu)
}

/// Frobenius-norm penalty as a differentiable tape node:
/// `factor * sum_k ||z_k^T J [A]||^2` with `factor = p / n_proj`, sweeping a
/// forward pass already recorded on the tape. Matches the detached
/// estimator bit-for-bit under a shared seed.
pub fn frobenius_penalty_on_tape(
    tape: &mut Tape,
    y_var: Var,
    out_var: Var,
    comp: Option<&TapeOperator>,
    cfg: &ProjConfig,
) -> Result<Var> {
    if cfg.n_proj == 0 {
        return Err(Error::invalid("projection estimator needs n_proj >= 1"));
    }
    let out_dim = tape.value(out_var).len();
    let mut rng = seeding::rng(cfg.seed, 0);
    let mut acc: Option<Var> = None;
    for _ in 0..cfg.n_proj {
        let z = unit_sphere(&mut rng, out_dim);
        let z_var = tape.leaf(Tensor::vector(z))?;
        let g = tape.backward_emit(out_var, z_var, &[y_var])?[0];
        let w = match comp {
            None => g,
            Some(c) => tape.matvec_t(c.leaf, g)?,
        };
        let sq = tape.dot(w, w)?;
        acc = Some(match acc {
            None => sq,
            Some(a) => tape.add(a, sq)?,
        });
    }
    tape.scale(acc.expect("n_proj >= 1"), out_dim as f64 / cfg.n_proj as f64)
}

// ---- SVD-backed oracles -------------------------------------------------

/// `sigma_max(J(y))` from the materialized Jacobian.
pub fn spectral_oracle(net: &Network, y: &[f64]) -> Result<f64> {
    let j = net.explicit_jacobian(y)?;
    Ok(svd::sigma_max(net.output_dim(), net.input_dim(), j.vals()))
}

/// `sigma_max(J(y) A)` from materialized factors.
pub fn spectral_composite_oracle(
    net: &Network,
    y: &[f64],
    op: &dyn LinearOperator,
) -> Result<f64> {
    let ja = composite_matrix(net, y, op)?;
    Ok(svd::sigma_max(net.output_dim(), op.in_dim(), ja.vals()))
}

/// `||J(y)||_F^2` from the materialized Jacobian.
pub fn frobenius_sq_oracle(net: &Network, y: &[f64]) -> Result<f64> {
    let j = net.explicit_jacobian(y)?;
    Ok(kernels::dot(j.vals(), j.vals()))
}

/// `||J(y) A||_F^2` from materialized factors.
pub fn frobenius_sq_composite_oracle(
    net: &Network,
    y: &[f64],
    op: &dyn LinearOperator,
) -> Result<f64> {
    let ja = composite_matrix(net, y, op)?;
    Ok(kernels::dot(ja.vals(), ja.vals()))
}

fn composite_matrix(net: &Network, y: &[f64], op: &dyn LinearOperator) -> Result<Tensor> {
    check_composite_dims(net, op)?;
    let j = net.explicit_jacobian(y)?;
    let a = op.materialize()?;
    let (p, q, pin) = (net.output_dim(), net.input_dim(), op.in_dim());
    Tensor::matrix(p, pin, kernels::matmul(j.vals(), a.vals(), p, q, pin))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{mlp_shapes, param_grad, Activation, LayerShape};
    use crate::operators::GaussianOperator;

    fn linear_net(w: Vec<f64>, m: usize, n: usize) -> Network {
        let shapes = vec![LayerShape {
            in_dim: n,
            out_dim: m,
            activation: Activation::Identity,
        }];
        let mut params = w;
        params.extend(std::iter::repeat(0.0).take(m));
        Network::from_params(shapes, params).unwrap()
    }

    fn random_net(widths: &[usize], input: usize, seed: u64) -> Network {
        Network::new(mlp_shapes(input, widths), seed).unwrap()
    }

    fn random_point(dim: usize, seed: u64) -> Vec<f64> {
        let mut rng = seeding::rng(seed, 0);
        (0..dim).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect()
    }

    #[test]
    fn identity_net_converges_immediately() {
        let net = linear_net(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let cfg = PowerConfig::new(1, 5).unwrap();
        let s = spectral(&net, &[0.3, 0.4], &cfg).unwrap();
        assert!((s - 1.0).abs() <= 1e-10);
    }

    #[test]
    fn diagonal_net_converges_to_top_singular_value() {
        let net = linear_net(
            vec![3.0, 0.0, 0.0, 0.0, 2.0, 0.0, 0.0, 0.0, 1.0],
            3,
            3,
        );
        let cfg = PowerConfig::new(20, 7).unwrap();
        let s = spectral(&net, &[0.0, 0.0, 0.0], &cfg).unwrap();
        assert!((s - 3.0).abs() <= 1e-6, "{s}");
    }

    #[test]
    fn spectral_matches_svd_oracle_at_high_iteration_count() {
        let net = random_net(&[20, 20], 20, 11);
        let y = random_point(20, 12);
        let cfg = PowerConfig::new(50, 13).unwrap();
        let est = spectral(&net, &y, &cfg).unwrap();
        let oracle = spectral_oracle(&net, &y).unwrap();
        assert!((est - oracle).abs() <= 1e-6 * oracle, "{est} vs {oracle}");
    }

    #[test]
    fn composite_with_identity_equals_plain_spectral() {
        let net = random_net(&[8, 8], 8, 21);
        let y = random_point(8, 22);
        let id = GaussianOperator::identity(8);
        let cfg = PowerConfig::new(4, 23).unwrap();
        let a = spectral(&net, &y, &cfg).unwrap();
        let b = spectral_composite(&net, &y, &id, &cfg).unwrap();
        assert!((a - b).abs() <= 1e-10);
    }

    #[test]
    fn composite_diagonal_case() {
        let net = linear_net(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let a = GaussianOperator::from_matrix(2, 2, vec![2.0, 0.0, 0.0, 1.0]).unwrap();
        let cfg = PowerConfig::new(20, 31).unwrap();
        let s = spectral_composite(&net, &[0.0, 0.0], &a, &cfg).unwrap();
        assert!((s - 2.0).abs() <= 1e-6);
    }

    #[test]
    fn composite_matches_svd_oracle() {
        let net = random_net(&[20, 20], 10, 41);
        let y = random_point(10, 42);
        let a = GaussianOperator::sample(10, 20, 43).unwrap();
        let cfg = PowerConfig::new(50, 44).unwrap();
        let est = spectral_composite(&net, &y, &a, &cfg).unwrap();
        let oracle = spectral_composite_oracle(&net, &y, &a).unwrap();
        assert!((est - oracle).abs() <= 1e-6 * oracle, "{est} vs {oracle}");
    }

    #[test]
    fn frobenius_identity_limit() {
        let net = linear_net(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            3,
            3,
        );
        let cfg = ProjConfig::new(10_000, 51).unwrap();
        let est = frobenius_sq(&net, &[0.0; 3], &cfg).unwrap();
        assert!((est - 3.0).abs() <= 0.02 * 3.0, "{est}");
    }

    #[test]
    fn frobenius_zero_net() {
        let net = linear_net(vec![0.0; 9], 3, 3);
        let cfg = ProjConfig::new(5, 52).unwrap();
        assert_eq!(frobenius_sq(&net, &[0.0; 3], &cfg).unwrap(), 0.0);
    }

    #[test]
    fn frobenius_matches_explicit_oracle() {
        let net = random_net(&[15, 15], 15, 61);
        let y = random_point(15, 62);
        let cfg = ProjConfig::new(10_000, 63).unwrap();
        let est = frobenius_sq(&net, &y, &cfg).unwrap();
        let oracle = frobenius_sq_oracle(&net, &y).unwrap();
        assert!(
            (est - oracle).abs() <= 0.02 * oracle,
            "{est} vs {oracle}"
        );
    }

    #[test]
    fn frobenius_composite_identity_matches_realizations() {
        let net = random_net(&[9, 9], 9, 71);
        let y = random_point(9, 72);
        let id = GaussianOperator::identity(9);
        let cfg = ProjConfig::new(64, 73).unwrap();
        let a = frobenius_sq(&net, &y, &cfg).unwrap();
        let b = frobenius_sq_composite(&net, &y, &id, &cfg).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn frobenius_composite_known_truth() {
        let net = linear_net(vec![1.0, 0.0, 0.0, 1.0], 2, 2);
        let a = GaussianOperator::from_matrix(2, 2, vec![2.0, 0.0, 0.0, 0.0]).unwrap();
        let cfg = ProjConfig::new(10_000, 81).unwrap();
        let est = frobenius_sq_composite(&net, &[0.0, 0.0], &a, &cfg).unwrap();
        assert!((est - 4.0).abs() <= 0.02 * 4.0, "{est}");
    }

    #[test]
    fn frobenius_composite_matches_oracle() {
        let net = random_net(&[12, 12], 6, 91);
        let y = random_point(6, 92);
        let a = GaussianOperator::sample(6, 12, 93).unwrap();
        let cfg = ProjConfig::new(10_000, 94).unwrap();
        let est = frobenius_sq_composite(&net, &y, &a, &cfg).unwrap();
        let oracle = frobenius_sq_composite_oracle(&net, &y, &a).unwrap();
        assert!((est - oracle).abs() <= 0.02 * oracle, "{est} vs {oracle}");
    }

    #[test]
    fn batch_max_decomposes_into_per_sample_calls() {
        let net = random_net(&[7, 7], 7, 101);
        let ys: Vec<Vec<f64>> = (0..5).map(|i| random_point(7, 200 + i)).collect();
        let refs: Vec<&[f64]> = ys.iter().map(|v| v.as_slice()).collect();
        let cfg = PowerConfig::new(3, 103).unwrap();
        let (max, idx) = batch_max_spectral(&net, &refs, None, &cfg).unwrap();
        let mut expected = f64::NEG_INFINITY;
        let mut expected_idx = 0;
        for (i, y) in refs.iter().enumerate() {
            let sub = PowerConfig {
                n_iters: 3,
                seed: seeding::derive(103, i as u64),
            };
            let v = spectral(&net, y, &sub).unwrap();
            if v > expected {
                expected = v;
                expected_idx = i;
            }
        }
        assert_eq!(max, expected);
        assert_eq!(idx, expected_idx);
        // Identical batch elements reduce to the single-sample value.
        let same: Vec<&[f64]> = vec![&ys[0], &ys[0], &ys[0]];
        let (m, _) = batch_max_spectral(&net, &same, None, &cfg).unwrap();
        let single = spectral(
            &net,
            &ys[0],
            &PowerConfig {
                n_iters: 3,
                seed: seeding::derive(103, 0),
            },
        )
        .unwrap();
        assert_eq!(m, single);
        assert!(batch_max_spectral(&net, &[], None, &cfg).is_err());
    }

    #[test]
    fn estimate_is_a_monotone_lower_bound_in_iteration_count() {
        let net = random_net(&[10, 10], 10, 111);
        let y = random_point(10, 112);
        let oracle = spectral_oracle(&net, &y).unwrap();
        let mut prev = 0.0;
        for n in 1..=30 {
            let cfg = PowerConfig { n_iters: n, seed: 113 };
            let s = spectral(&net, &y, &cfg).unwrap();
            assert!(s <= oracle + 1e-9, "n={n}: {s} > {oracle}");
            assert!(s >= prev - 1e-12, "n={n}: {s} < {prev}");
            prev = s;
        }
    }

    #[test]
    fn spectral_squared_never_exceeds_frobenius() {
        for seed in 0..5 {
            let net = random_net(&[8, 8], 8, 120 + seed);
            let y = random_point(8, 130 + seed);
            let s = spectral(&net, &y, &PowerConfig::new(50, 1).unwrap()).unwrap();
            let f = frobenius_sq_oracle(&net, &y).unwrap();
            assert!(s * s <= f * (1.0 + 1e-9));
        }
    }

    #[test]
    fn scaling_last_layer_scales_estimates_linearly() {
        let net = random_net(&[6, 6], 6, 141);
        let y = random_point(6, 142);
        let c = 2.5;
        let mut scaled = net.clone();
        {
            let n_layers = scaled.shapes().len();
            let last = n_layers - 1;
            let (wstart, wlen) = {
                let s = scaled.shapes()[last];
                let off: usize = scaled.shapes()[..last]
                    .iter()
                    .map(|sh| sh.param_count())
                    .sum();
                (off, s.out_dim * s.in_dim + s.out_dim)
            };
            for p in scaled.params_mut()[wstart..wstart + wlen].iter_mut() {
                *p *= c;
            }
        }
        let pcfg = PowerConfig::new(40, 143).unwrap();
        let s1 = spectral(&net, &y, &pcfg).unwrap();
        let s2 = spectral(&scaled, &y, &pcfg).unwrap();
        assert!((s2 - c * s1).abs() <= 1e-9 * s2, "{s2} vs {}", c * s1);
        let fcfg = ProjConfig::new(64, 144).unwrap();
        let f1 = frobenius_sq(&net, &y, &fcfg).unwrap().sqrt();
        let f2 = frobenius_sq(&scaled, &y, &fcfg).unwrap().sqrt();
        assert!((f2 - c * f1).abs() <= 1e-9 * f2);
    }

    #[test]
    fn composition_bound_holds_at_convergence() {
        let net = random_net(&[10, 10], 5, 151);
        let y = random_point(5, 152);
        let a = GaussianOperator::sample(5, 10, 153).unwrap();
        let cfg = PowerConfig::new(60, 154).unwrap();
        let sja = spectral_composite(&net, &y, &a, &cfg).unwrap();
        let sj = spectral(&net, &y, &cfg).unwrap();
        let la = a.lipschitz_bound().unwrap();
        assert!(sja <= sj * la + 1e-9, "{sja} > {sj} * {la}");
    }

    #[test]
    fn projection_estimator_converges_at_monte_carlo_rate() {
        let net = random_net(&[12, 12], 12, 161);
        let y = random_point(12, 162);
        let oracle = frobenius_sq_oracle(&net, &y).unwrap();

        // Estimate the single-draw standard deviation once.
        let probe: Vec<f64> = (0..200)
            .map(|k| {
                frobenius_sq(
                    &net,
                    &y,
                    &ProjConfig {
                        n_proj: 1,
                        seed: seeding::derive(163, k),
                    },
                )
                .unwrap()
            })
            .collect();
        let mean = probe.iter().sum::<f64>() / probe.len() as f64;
        let sd = (probe.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>()
            / (probe.len() - 1) as f64)
            .sqrt();

        for &n in &[100usize, 1000, 10_000] {
            let est = frobenius_sq(
                &net,
                &y,
                &ProjConfig {
                    n_proj: n,
                    seed: 164,
                },
            )
            .unwrap();
            let tol = 4.0 * sd / (n as f64).sqrt();
            assert!(
                (est - oracle).abs() <= tol,
                "n={n}: |{est} - {oracle}| > {tol}"
            );
        }
    }

    #[test]
    fn tape_penalty_value_matches_detached_estimate() {
        let net = random_net(&[9, 9], 9, 171);
        let y = random_point(9, 172);
        let cfg = PowerConfig::new(3, 173).unwrap();
        let detached = spectral(&net, &y, &cfg).unwrap();
        let mut tape = Tape::new();
        let tnet = TapeNet::bind(&mut tape, &net).unwrap();
        let var = spectral_penalty_on_tape(&mut tape, &tnet, &net, &y, None, &cfg).unwrap();
        assert_eq!(tape.scalar_value(var).unwrap(), detached);

        // Composite version.
        let a = GaussianOperator::sample(9, 14, 174).unwrap();
        let net2 = random_net(&[11, 11], 9, 175);
        let detached = spectral_composite(&net2, &y, &a, &cfg).unwrap();
        let mut tape = Tape::new();
        let tnet = TapeNet::bind(&mut tape, &net2).unwrap();
        let aop = TapeOperator::bind(&mut tape, &a).unwrap();
        let var =
            spectral_penalty_on_tape(&mut tape, &tnet, &net2, &y, Some(&aop), &cfg).unwrap();
        let tv = tape.scalar_value(var).unwrap();
        assert!((tv - detached).abs() <= 1e-12 * (1.0 + detached.abs()));
    }

    #[test]
    fn tape_frobenius_matches_detached_estimate() {
        let net = random_net(&[8, 8], 8, 181);
        let y = random_point(8, 182);
        let cfg = ProjConfig::new(16, 183).unwrap();
        let detached = frobenius_sq(&net, &y, &cfg).unwrap();
        let mut tape = Tape::new();
        let tnet = TapeNet::bind(&mut tape, &net).unwrap();
        let y_var = tape.leaf(Tensor::vector(y.clone())).unwrap();
        let (out, _) = tnet.forward(&mut tape, y_var).unwrap();
        let var = frobenius_penalty_on_tape(&mut tape, y_var, out, None, &cfg).unwrap();
        assert_eq!(tape.scalar_value(var).unwrap(), detached);
    }

    #[test]
    fn zero_map_restarts_and_reports_zero() {
        let net = linear_net(vec![0.0; 9], 3, 3);
        let cfg = PowerConfig::new(3, 191).unwrap();
        assert_eq!(spectral(&net, &[0.0; 3], &cfg).unwrap(), 0.0);
        let mut tape = Tape::new();
        let tnet = TapeNet::bind(&mut tape, &net).unwrap();
        let var = spectral_penalty_on_tape(&mut tape, &tnet, &net, &[0.0; 3], None, &cfg).unwrap();
        assert_eq!(tape.scalar_value(var).unwrap(), 0.0);
    }

    /// Full-unroll gradient of the spectral estimate: every iteration'
    /// normalization included on the tape. The production penalty
    /// differentiates through the final iteration only; on well-conditioned
    /// small nets the two gradients agree within 10% relative.
    fn full_unroll_spectral_grad(net: &Network, y: &[f64], cfg: &PowerConfig) -> Vec<f64> {
        let mut tape = Tape::new();
        let tnet = TapeNet::bind(&mut tape, net).unwrap();
        let y_var = tape.leaf(Tensor::vector(y.to_vec())).unwrap();
        let mut rng = seeding::rng(cfg.seed, 0);
        let v0 = unit_sphere(&mut rng, net.input_dim());
        let mut v = tape.leaf(Tensor::vector(v0)).unwrap();
        let one = tape.scalar_const(1.0).unwrap();
        let mut sigma = None;
        for i in 1..=cfg.n_iters {
            let (out, u) = tnet.forward_with_tangent(&mut tape, y_var, v).unwrap();
            if i < cfg.n_iters {
                let nu = tape.norm2(u).unwrap();
                let inv = tape.div(one, nu).unwrap();
                let u_hat = tape.smul(inv, u).unwrap();
                let w = tape.backward_emit(out, u_hat, &[y_var]).unwrap()[0];
                let nw = tape.norm2(w).unwrap();
                let invw = tape.div(one, nw).unwrap();
                v = tape.smul(invw, w).unwrap();
            } else {
                let w = tape.backward_emit(out, u, &[y_var]).unwrap()[0];
                let nw = tape.norm2(w).unwrap();
                let nu = tape.norm2(u).unwrap();
                sigma = Some(tape.div(nw, nu).unwrap());
            }
        }
        param_grad(&tape, sigma.unwrap(), &tnet).unwrap()
    }

    #[test]
    fn final_iteration_gradient_tracks_full_unroll() {
        let net = random_net(&[6, 6], 6, 201);
        let y = random_point(6, 202);
        let cfg = PowerConfig::new(8, 203).unwrap();

        let full = full_unroll_spectral_grad(&net, &y, &cfg);

        let mut tape = Tape::new();
        let tnet = TapeNet::bind(&mut tape, &net).unwrap();
        let var = spectral_penalty_on_tape(&mut tape, &tnet, &net, &y, None, &cfg).unwrap();
        let approx = param_grad(&tape, var, &tnet).unwrap();

        let diff: f64 = full
            .iter()
            .zip(&approx)
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        let norm: f64 = full.iter().map(|a| a * a).sum::<f64>().sqrt();
        assert!(diff <= 0.10 * norm, "grad deviation {} of {}", diff, norm);
    }
}
