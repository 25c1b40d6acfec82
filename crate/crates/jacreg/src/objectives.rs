//! Training objectives: mean reconstruction distance, spectral-norm and
//! Frobenius-norm Jacobian regularizers (with and without the forward
//! operator composed in), the weight-decay / weight-spectral / plain
//! Jacobian-Frobenius baselines, and the adaptive regularization
//! coefficient policy.
//!
//! Objectives are assembled on a tape so the parameter gradient covers the
//! penalty terms (second-order differentiation through recorded vjp/jvp
//! sweeps). With shared seeds every assembled objective decomposes exactly
//! into the reconstruction loss plus independently computed estimator
//! values.

use crate::autodiff::{param_grad, Network, Tape, TapeNet, Var};
use crate::error::{Error, Result};
use crate::jacnorm::{
    batch_max_spectral, frobenius_penalty_on_tape, spectral_penalty_on_tape, PowerConfig,
    ProjConfig, TapeOperator,
};
use crate::kernels;
use crate::operators::LinearOperator;
use crate::seeding;
use crate::tensor::Tensor;

const TAG_SPEC_JA: u64 = 0xA1;
const TAG_SPEC_J: u64 = 0xA2;
const TAG_FROB_JA: u64 = 0xB1;
const TAG_FROB_J: u64 = 0xB2;
const TAG_WS: u64 = 0xC1;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum RegFamily {
    None,
    SjaSj,
    FjaFj,
    Sja,
    Fja,
    Wd,
    Ws,
    Fj,
}

impl RegFamily {
    pub fn needs_operator(self) -> bool {
        matches!(self, RegFamily::SjaSj | RegFamily::Sja | RegFamily::FjaFj | RegFamily::Fja)
    }
}

#[derive(Clone, Copy, Debug)]
pub struct AdaptivePolicy {
    pub enabled: bool,
    /// Scaling factor `s` of the coefficient policy; 20 works best.
    pub scale: f64,
}

impl Default for AdaptivePolicy {
    fn default() -> Self {
        AdaptivePolicy {
            enabled: false,
            scale: 20.0,
        }
    }
}

#[derive(Clone, Copy, Debug)]
pub struct RegularizerSpec {
    pub family: RegFamily,
    pub lambda1: f64,
    pub lambda2: f64,
    pub adaptive: AdaptivePolicy,
    /// Fraction of training steps on which the regularizer is applied.
    pub step_fraction: f64,
    pub power_iters: usize,
    pub n_proj: usize,
}

impl Default for RegularizerSpec {
    fn default() -> Self {
        RegularizerSpec {
            family: RegFamily::None,
            lambda1: 0.0,
            lambda2: 0.0,
            adaptive: AdaptivePolicy::default(),
            step_fraction: 1.0,
            power_iters: 3,
            n_proj: 1,
        }
    }
}

impl RegularizerSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda1 >= 0.0 && self.lambda1.is_finite()) {
            return Err(Error::invalid("lambda1 must be finite and >= 0"));
        }
        if !(self.lambda2 >= 0.0 && self.lambda2.is_finite()) {
            return Err(Error::invalid("lambda2 must be finite and >= 0"));
        }
        if matches!(self.family, RegFamily::Sja | RegFamily::Fja) && self.lambda2 != 0.0 {
            return Err(Error::invalid(
                "SJA/FJA keep only the composite term: lambda2 must be 0",
            ));
        }
        if !(self.step_fraction > 0.0 && self.step_fraction <= 1.0) {
            return Err(Error::invalid("step_fraction must be in (0, 1]"));
        }
        if self.adaptive.enabled && !(self.adaptive.scale > 0.0) {
            return Err(Error::invalid("adaptive scale must be > 0"));
        }
        if self.power_iters == 0 || self.n_proj == 0 {
            return Err(Error::invalid("power_iters and n_proj must be >= 1"));
        }
        Ok(())
    }
}

/// One supervised pair: ground truth `x` and measurement `y`.
#[derive(Clone, Debug)]
pub struct Sample {
    pub x: Vec<f64>,
    pub y: Vec<f64>,
}

/// Adaptive regularization coefficient from the order-of-magnitude gap
/// between the unregularized loss `l` and the regularizer magnitude `r`:
/// `lambda = max(0, floor(log10(l / r))) / s`. Negative exponents clamp to
/// zero (a negative coefficient would reward large Jacobians).
pub fn adaptive_lambda(l: f64, r: f64, s: f64) -> Result<f64> {
    if !(l > 0.0) || !(r > 0.0) || !(s > 0.0) {
        return Err(Error::invalid(format!(
            "adaptive_lambda needs positive inputs, got l={l}, r={r}, s={s}"
        )));
    }
    let t = (l / r).log10();
    // Snap to the nearest integer when within rounding noise, so exact
    // decade ratios floor cleanly.
    let nearest = t.round();
    let alpha = if (t - nearest).abs() < 1e-9 { nearest } else { t.floor() };
    Ok(alpha.max(0.0) / s)
}

/// Mean reconstruction distance over the batch, on the tape.
pub fn recon_loss(tape: &mut Tape, tnet: &TapeNet, batch: &[Sample]) -> Result<Var> {
    let forwards = record_forwards(tape, tnet, batch)?;
    recon_from_forwards(tape, &forwards)
}

/// Detached reconstruction loss (same arithmetic as the tape path).
pub fn recon_loss_value(net: &Network, batch: &[Sample]) -> Result<f64> {
    if batch.is_empty() {
        return Err(Error::invalid("reconstruction loss over an empty batch"));
    }
    let mut acc = 0.0;
    for s in batch {
        let out = net.forward(&s.y)?;
        let r = kernels::sub(&out, &s.x);
        acc += kernels::norm2(&r);
    }
    Ok(acc * (1.0 / batch.len() as f64))
}

struct SampleForward {
    y_var: Var,
    out: Var,
    dist: Var,
}

fn record_forwards(tape: &mut Tape, tnet: &TapeNet, batch: &[Sample]) -> Result<Vec<SampleForward>> {
    if batch.is_empty() {
        return Err(Error::invalid("objective over an empty batch"));
    }
    let mut forwards = Vec::with_capacity(batch.len());
    for s in batch {
        let y_var = tape.leaf(Tensor::vector(s.y.clone()))?;
        let x_var = tape.leaf(Tensor::vector(s.x.clone()))?;
        let (out, _) = tnet.forward(tape, y_var)?;
        let r = tape.sub(out, x_var)?;
        let dist = tape.norm2(r)?;
        forwards.push(SampleForward { y_var, out, dist });
    }
    Ok(forwards)
}

fn recon_from_forwards(tape: &mut Tape, forwards: &[SampleForward]) -> Result<Var> {
    let mut acc = forwards[0].dist;
    for f in &forwards[1..] {
        acc = tape.add(acc, f.dist)?;
    }
    tape.scale(acc, 1.0 / forwards.len() as f64)
}

/// A built objective: the scalar node plus the coefficients actually used
/// on this step (equal to the configured ones unless adaptive).
pub struct BuiltObjective {
    pub scalar: Var,
    pub recon: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

fn resolve_lambda(fixed: f64, adaptive: AdaptivePolicy, loss: f64, magnitude: f64) -> Result<f64> {
    if !adaptive.enabled {
        return Ok(fixed);
    }
    if loss <= 0.0 || magnitude <= 0.0 {
        return Ok(0.0);
    }
    adaptive_lambda(loss, magnitude, adaptive.scale)
}

/// Spectral objective: reconstruction loss plus `lambda1 * max_i ||J(y_i) A||_2`
/// and (for the two-term family) `lambda2 * max_i ||J(y_i)||_2`. Gradient
/// flows only through the argmax batch element of each term.
pub fn spectral_objective(
    tape: &mut Tape,
    tnet: &TapeNet,
    net: &Network,
    batch: &[Sample],
    op: Option<&dyn LinearOperator>,
    spec: &RegularizerSpec,
    seed: u64,
) -> Result<BuiltObjective> {
    if !matches!(spec.family, RegFamily::SjaSj | RegFamily::Sja) {
        return Err(Error::invalid("spectral objective needs an SJA-family spec"));
    }
    let Some(op) = op else {
        return Err(Error::invalid("missing operator A for the composite penalty"));
    };
    let forwards = record_forwards(tape, tnet, batch)?;
    let mut scalar = recon_from_forwards(tape, &forwards)?;
    let recon = tape.scalar_value(scalar)?;
    let ys: Vec<&[f64]> = batch.iter().map(|s| s.y.as_slice()).collect();

    // Composite term.
    let ja_seed = seeding::derive(seed, TAG_SPEC_JA);
    let cfg = PowerConfig {
        n_iters: spec.power_iters,
        seed: ja_seed,
    };
    let (r1, idx1) = batch_max_spectral(net, &ys, Some(op), &cfg)?;
    let lambda1 = resolve_lambda(spec.lambda1, spec.adaptive, recon, r1)?;
    if lambda1 > 0.0 && r1 > 0.0 {
        let aop = TapeOperator::bind(tape, op)?;
        let sub = PowerConfig {
            n_iters: spec.power_iters,
            seed: seeding::derive(ja_seed, idx1 as u64),
        };
        let sigma = spectral_penalty_on_tape(tape, tnet, net, &batch[idx1].y, Some(&aop), &sub)?;
        let term = tape.scale(sigma, lambda1)?;
        scalar = tape.add(scalar, term)?;
    }

    // Plain Jacobian term, only in the two-term family.
    let mut lambda2 = 0.0;
    if spec.family == RegFamily::SjaSj {
        let j_seed = seeding::derive(seed, TAG_SPEC_J);
        let cfg = PowerConfig {
            n_iters: spec.power_iters,
            seed: j_seed,
        };
        let (r2, idx2) = batch_max_spectral(net, &ys, None, &cfg)?;
        lambda2 = resolve_lambda(spec.lambda2, spec.adaptive, recon, r2)?;
        if lambda2 > 0.0 && r2 > 0.0 {
            let sub = PowerConfig {
                n_iters: spec.power_iters,
                seed: seeding::derive(j_seed, idx2 as u64),
            };
            let sigma = spectral_penalty_on_tape(tape, tnet, net, &batch[idx2].y, None, &sub)?;
            let term = tape.scale(sigma, lambda2)?;
            scalar = tape.add(scalar, term)?;
        }
    }

    Ok(BuiltObjective {
        scalar,
        recon,
        lambda1,
        lambda2,
    })
}

/// Frobenius objective: reconstruction loss plus per-sample projection
/// estimates of `||J A||_F^2` (and `||J||_F^2` for the two-term family),
/// each divided by `n_proj * |B|` as the estimator prescribes.
pub fn frobenius_objective(
    tape: &mut Tape,
    tnet: &TapeNet,
    net: &Network,
    batch: &[Sample],
    op: Option<&dyn LinearOperator>,
    spec: &RegularizerSpec,
    seed: u64,
) -> Result<BuiltObjective> {
    if !matches!(spec.family, RegFamily::FjaFj | RegFamily::Fja) {
        return Err(Error::invalid("frobenius objective needs an FJA-family spec"));
    }
    let Some(op) = op else {
        return Err(Error::invalid("missing operator A for the composite penalty"));
    };
    let _ = net;
    let forwards = record_forwards(tape, tnet, batch)?;
    let mut scalar = recon_from_forwards(tape, &forwards)?;
    let recon = tape.scalar_value(scalar)?;
    let inv_batch = 1.0 / batch.len() as f64;

    // Composite term.
    let ja_seed = seeding::derive(seed, TAG_FROB_JA);
    let aop = TapeOperator::bind(tape, op)?;
    let mut sum: Option<Var> = None;
    for (i, f) in forwards.iter().enumerate() {
        let cfg = ProjConfig {
            n_proj: spec.n_proj,
            seed: seeding::derive(ja_seed, i as u64),
        };
        let pen = frobenius_penalty_on_tape(tape, f.y_var, f.out, Some(&aop), &cfg)?;
        sum = Some(match sum {
            None => pen,
            Some(s) => tape.add(s, pen)?,
        });
    }
    let total = tape.scale(sum.expect("nonempty batch"), inv_batch)?;
    let r1 = tape.scalar_value(total)?;
    let lambda1 = resolve_lambda(spec.lambda1, spec.adaptive, recon, r1)?;
    if lambda1 > 0.0 {
        let term = tape.scale(total, lambda1)?;
        scalar = tape.add(scalar, term)?;
    }

    // Plain Jacobian term.
    let mut lambda2 = 0.0;
    if spec.family == RegFamily::FjaFj {
        let j_seed = seeding::derive(seed, TAG_FROB_J);
        let mut sum: Option<Var> = None;
        for (i, f) in forwards.iter().enumerate() {
            let cfg = ProjConfig {
                n_proj: spec.n_proj,
                seed: seeding::derive(j_seed, i as u64),
            };
            let pen = frobenius_penalty_on_tape(tape, f.y_var, f.out, None, &cfg)?;
            sum = Some(match sum {
                None => pen,
                Some(s) => tape.add(s, pen)?,
            });
        }
        let total = tape.scale(sum.expect("nonempty batch"), inv_batch)?;
        let r2 = tape.scalar_value(total)?;
        lambda2 = resolve_lambda(spec.lambda2, spec.adaptive, recon, r2)?;
        if lambda2 > 0.0 {
            let term = tape.scale(total, lambda2)?;
            scalar = tape.add(scalar, term)?;
        }
    }

    Ok(BuiltObjective {
        scalar,
        recon,
        lambda1,
        lambda2,
    })
}

/// Spectral norm of one weight matrix on the tape: detached power phase
/// plus a recorded final iteration, like the Jacobian penalty.
fn weight_spectral_on_tape(
    tape: &mut Tape,
    w_leaf: Var,
    w: &[f64],
    m: usize,
    n: usize,
    cfg: &PowerConfig,
) -> Result<Var> {
    let mut fwd = |v: &[f64]| Ok(kernels::matvec(w, v, m, n));
    let mut bwd = |u: &[f64]| Ok(kernels::matvec_t(w, u, m, n));
    let (_, final_input) = crate::jacnorm::power_method(&mut fwd, &mut bwd, n, cfg)?;
    let Some(v_prev) = final_input else {
        return tape.scalar_const(0.0);
    };
    let v_var = tape.leaf(Tensor::vector(v_prev))?;
    let u = tape.matvec(w_leaf, v_var)?;
    let w_var = tape.matvec_t(w_leaf, u)?;
    let nw = tape.norm2(w_var)?;
    let nu = tape.norm2(u)?;
    tape.div(nw, nu)
}

/// Baseline regularizers: weight decay (`sum_i ||W_i||_F^2`), weight
/// spectral norms (`sum_i sigma_max(W_i)`), and the plain Jacobian
/// Frobenius estimate summed over the batch.
pub fn baseline_objective(
    tape: &mut Tape,
    tnet: &TapeNet,
    net: &Network,
    batch: &[Sample],
    spec: &RegularizerSpec,
    seed: u64,
) -> Result<BuiltObjective> {
    if !matches!(spec.family, RegFamily::Wd | RegFamily::Ws | RegFamily::Fj) {
        return Err(Error::invalid("baseline objective needs WD/WS/FJ"));
    }
    let forwards = record_forwards(tape, tnet, batch)?;
    let mut scalar = recon_from_forwards(tape, &forwards)?;
    let recon = tape.scalar_value(scalar)?;

    let reg = match spec.family {
        RegFamily::Wd => {
            let mut sum: Option<Var> = None;
            for &w in &tnet.weights {
                let sq = tape.dot(w, w)?;
                sum = Some(match sum {
                    None => sq,
                    Some(s) => tape.add(s, sq)?,
                });
            }
            sum.expect("at least one layer")
        }
        RegFamily::Ws => {
            let ws_seed = seeding::derive(seed, TAG_WS);
            let mut sum: Option<Var> = None;
            for (li, &w_leaf) in tnet.weights.iter().enumerate() {
                let shape = net.shapes()[li];
                let cfg = PowerConfig {
                    n_iters: spec.power_iters,
                    seed: seeding::derive(ws_seed, li as u64),
                };
                let sigma = weight_spectral_on_tape(
                    tape,
                    w_leaf,
                    net.weight(li),
                    shape.out_dim,
                    shape.in_dim,
                    &cfg,
                )?;
                sum = Some(match sum {
                    None => sigma,
                    Some(s) => tape.add(s, sigma)?,
                });
            }
            sum.expect("at least one layer")
        }
        RegFamily::Fj => {
            let j_seed = seeding::derive(seed, TAG_FROB_J);
            let mut sum: Option<Var> = None;
            for (i, f) in forwards.iter().enumerate() {
                let cfg = ProjConfig {
                    n_proj: spec.n_proj,
                    seed: seeding::derive(j_seed, i as u64),
                };
                let pen = frobenius_penalty_on_tape(tape, f.y_var, f.out, None, &cfg)?;
                sum = Some(match sum {
                    None => pen,
                    Some(s) => tape.add(s, pen)?,
                });
            }
            let total = sum.expect("nonempty batch");
            tape.scale(total, 1.0 / batch.len() as f64)?
        }
        _ => unreachable!(),
    };

    let r = tape.scalar_value(reg)?;
    let lambda1 = resolve_lambda(spec.lambda1, spec.adaptive, recon, r)?;
    if lambda1 > 0.0 {
        let term = tape.scale(reg, lambda1)?;
        scalar = tape.add(scalar, term)?;
    }
    Ok(BuiltObjective {
        scalar,
        recon,
        lambda1,
        lambda2: 0.0,
    })
}

/// Assemble the objective for one training step: the reconstruction loss
/// alone on unregularized steps, the family-specific objective otherwise.
pub fn build_objective(
    tape: &mut Tape,
    tnet: &TapeNet,
    net: &Network,
    batch: &[Sample],
    op: Option<&dyn LinearOperator>,
    spec: &RegularizerSpec,
    seed: u64,
    regularize: bool,
) -> Result<BuiltObjective> {
    if !regularize || spec.family == RegFamily::None {
        let forwards = record_forwards(tape, tnet, batch)?;
        let scalar = recon_from_forwards(tape, &forwards)?;
        let recon = tape.scalar_value(scalar)?;
        return Ok(BuiltObjective {
            scalar,
            recon,
            lambda1: 0.0,
            lambda2: 0.0,
        });
    }
    match spec.family {
        RegFamily::None => unreachable!(),
        RegFamily::SjaSj | RegFamily::Sja => {
            spectral_objective(tape, tnet, net, batch, op, spec, seed)
        }
        RegFamily::FjaFj | RegFamily::Fja => {
            frobenius_objective(tape, tnet, net, batch, op, spec, seed)
        }
        RegFamily::Wd | RegFamily::Ws | RegFamily::Fj => {
            baseline_objective(tape, tnet, net, batch, spec, seed)
        }
    }
}

/// Objective value and parameter gradient for one step.
pub struct StepOutcome {
    pub value: f64,
    pub grad: Vec<f64>,
    pub recon: f64,
    pub lambda1: f64,
    pub lambda2: f64,
}

pub fn objective_grad(
    net: &Network,
    batch: &[Sample],
    op: Option<&dyn LinearOperator>,
    spec: &RegularizerSpec,
    seed: u64,
    regularize: bool,
) -> Result<StepOutcome> {
    let mut tape = Tape::new();
    let tnet = TapeNet::bind(&mut tape, net)?;
    let built = build_objective(&mut tape, &tnet, net, batch, op, spec, seed, regularize)?;
    let value = tape.scalar_value(built.scalar)?;
    let grad = param_grad(&tape, built.scalar, &tnet)?;
    Ok(StepOutcome {
        value,
        grad,
        recon: built.recon,
        lambda1: built.lambda1,
        lambda2: built.lambda2,
    })
}
