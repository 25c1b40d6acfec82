//! Feed-forward dense networks over a flat parameter store, with detached
//! (value-only) forward/vjp/jvp paths and tape bindings for differentiable
//! objectives.
//!
//! The detached paths and the tape operations share the kernels in
//! [`crate::kernels`], so a tape-built vjp and a detached vjp agree
//! bit-for-bit. The forward-mode tangent is the default jvp; the double-vjp
//! construction is kept as an independent route and must agree with it.

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{Error, Result};
use crate::kernels;
use crate::seeding;
use crate::tensor::Tensor;

use super::tape::{GradValues, Tape, Var};

pub const EXPLICIT_GUARD: usize = 1_000_000;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Activation {
    Relu,
    Identity,
}

#[derive(Clone, Copy, Debug)]
pub struct LayerShape {
    pub in_dim: usize,
    pub out_dim: usize,
    pub activation: Activation,
}

impl LayerShape {
    pub fn param_count(&self) -> usize {
        self.out_dim * self.in_dim + self.out_dim
    }
}

/// Dense feed-forward network. Parameters live in one flat buffer laid out
/// per layer as row-major `W` followed by `b`.
#[derive(Clone)]
pub struct Network {
    shapes: Vec<LayerShape>,
    params: Vec<f64>,
}

impl Network {
    /// He-initialized weights (`N(0, 2/fan_in)` entries) on relu-activated
    /// layers, zero biases. Identity-activated layers are scaled down 10x:
    /// the He factor is a relu-specific rule, and a full-scale linear output
    /// layer starts the predictions an order of magnitude above the target
    /// scale, which drives the early shrink pressure that kills upstream
    /// relu units.
    pub fn new(shapes: Vec<LayerShape>, seed: u64) -> Result<Self> {
        validate_chain(&shapes)?;
        let total: usize = shapes.iter().map(|s| s.param_count()).sum();
        let mut params = vec![0.0; total];
        let mut offset = 0;
        for (li, s) in shapes.iter().enumerate() {
            let std = match s.activation {
                Activation::Relu => (2.0 / s.in_dim as f64).sqrt(),
                Activation::Identity => 0.1 * (2.0 / s.in_dim as f64).sqrt(),
            };
            let mut rng = seeding::rng(seed, li as u64);
            for w in params[offset..offset + s.out_dim * s.in_dim].iter_mut() {
                let g: f64 = rng.sample(StandardNormal);
                *w = g * std;
            }
            offset += s.param_count();
        }
        Ok(Network { shapes, params })
    }

    pub fn from_params(shapes: Vec<LayerShape>, params: Vec<f64>) -> Result<Self> {
        validate_chain(&shapes)?;
        let total: usize = shapes.iter().map(|s| s.param_count()).sum();
        if params.len() != total {
            return Err(Error::ShapeMismatch {
                context: "Network::from_params",
                expected: format!("{total} params"),
                got: format!("{}", params.len()),
            });
        }
        Ok(Network { shapes, params })
    }

    /// The reconstruction architecture used for compressive measurements:
    /// input width `q`, then three layers of width `p` with activations
    /// (relu, relu, identity).
    pub fn recon_mlp(q: usize, p: usize, seed: u64) -> Result<Self> {
        Network::new(mlp_shapes(q, &[p, p, p]), seed)
    }

    pub fn shapes(&self) -> &[LayerShape] {
        &self.shapes
    }

    pub fn input_dim(&self) -> usize {
        self.shapes.first().map(|s| s.in_dim).unwrap_or(0)
    }

    pub fn output_dim(&self) -> usize {
        self.shapes.last().map(|s| s.out_dim).unwrap_or(0)
    }

    pub fn param_count(&self) -> usize {
        self.params.len()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    fn layer_offset(&self, layer: usize) -> usize {
        self.shapes[..layer].iter().map(|s| s.param_count()).sum()
    }

    pub fn weight(&self, layer: usize) -> &[f64] {
        let s = &self.shapes[layer];
        let off = self.layer_offset(layer);
        &self.params[off..off + s.out_dim * s.in_dim]
    }

    pub fn bias(&self, layer: usize) -> &[f64] {
        let s = &self.shapes[layer];
        let off = self.layer_offset(layer) + s.out_dim * s.in_dim;
        &self.params[off..off + s.out_dim]
    }

    fn check_input(&self, y: &[f64]) -> Result<()> {
        if y.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "network input",
                expected: format!("{}", self.input_dim()),
                got: format!("{}", y.len()),
            });
        }
        Ok(())
    }

    /// Detached forward pass.
    pub fn forward(&self, y: &[f64]) -> Result<Vec<f64>> {
        Ok(self.forward_trace(y)?.output)
    }

    /// Forward pass retaining per-layer preactivations, for detached
    /// vjp/jvp sweeps.
    pub fn forward_trace(&self, y: &[f64]) -> Result<Trace> {
        self.check_input(y)?;
        let mut a = y.to_vec();
        let mut pre = Vec::with_capacity(self.shapes.len());
        for (li, s) in self.shapes.iter().enumerate() {
            let mut z = kernels::matvec(self.weight(li), &a, s.out_dim, s.in_dim);
            for (zi, bi) in z.iter_mut().zip(self.bias(li)) {
                *zi += bi;
            }
            a = match s.activation {
                Activation::Relu => kernels::relu(&z),
                Activation::Identity => z.clone(),
            };
            pre.push(Tensor::vector(z));
        }
        if a.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "forward" });
        }
        Ok(Trace {
            output: a,
            preactivations: pre,
        })
    }

    /// `d^T J(y)` by one detached reverse sweep.
    pub fn vjp(&self, y: &[f64], d: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(y)?;
        self.vjp_from_trace(&trace, d)
    }

    /// Reverse sweep reusing an existing forward trace.
    pub fn vjp_from_trace(&self, trace: &Trace, d: &[f64]) -> Result<Vec<f64>> {
        if d.len() != self.output_dim() {
            return Err(Error::ShapeMismatch {
                context: "vjp seed",
                expected: format!("{}", self.output_dim()),
                got: format!("{}", d.len()),
            });
        }
        let mut g = d.to_vec();
        for (li, s) in self.shapes.iter().enumerate().rev() {
            if s.activation == Activation::Relu {
                g = kernels::relu_mask_mul(trace.preactivations[li].vals(), &g);
            }
            g = kernels::matvec_t(self.weight(li), &g, s.out_dim, s.in_dim);
        }
        if g.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite { op: "vjp" });
        }
        Ok(g)
    }

    /// `J(y) v` by forward-mode tangent propagation.
    pub fn jvp(&self, y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        let trace = self.forward_trace(y)?;
        self.jvp_from_trace(&trace, v)
    }

    /// Tangent propagation reusing an existing forward trace.
    pub fn jvp_from_trace(&self, trace: &Trace, v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "jvp tangent",
                expected: format!("{}", self.input_dim()),
                got: format!("{}", v.len()),
            });
        }
        let mut t = v.to_vec();
        for (li, s) in self.shapes.iter().enumerate() {
            t = kernels::matvec(self.weight(li), &t, s.out_dim, s.in_dim);
            if s.activation == Activation::Relu {
                t = kernels::relu_mask_mul(trace.preactivations[li].vals(), &t);
            }
        }
        Ok(t)
    }

    /// `J(y) v` by the double-vjp construction: a reverse sweep seeded with a
    /// dummy vector is itself swept w.r.t. that dummy. Kept as an independent
    /// route for parity checks against [`Network::jvp`].
    pub fn jvp_double_vjp(&self, y: &[f64], v: &[f64]) -> Result<Vec<f64>> {
        if v.len() != self.input_dim() {
            return Err(Error::ShapeMismatch {
                context: "jvp tangent",
                expected: format!("{}", self.input_dim()),
                got: format!("{}", v.len()),
            });
        }
        let mut tape = Tape::new();
        let tnet = TapeNet::bind(&mut tape, self)?;
        let y_var = tape.leaf(Tensor::vector(y.to_vec()))?;
        let dummy = tape.leaf(Tensor::vector(vec![1.0; self.output_dim()]))?;
        let (out, _) = tnet.forward(&mut tape, y_var)?;
        let g = tape.backward_emit(out, dummy, &[y_var])?[0];
        let v_var = tape.leaf(Tensor::vector(v.to_vec()))?;
        let jv = tape.backward_emit(g, v_var, &[dummy])?[0];
        Ok(tape.value(jv).vals().to_vec())
    }

    /// Materialize `J(y)` row by row through [`Network::vjp`]. Oracle use
    /// only; guarded to `p * q <= 10^6` entries.
    pub fn explicit_jacobian(&self, y: &[f64]) -> Result<Tensor> {
        let (p, q) = (self.output_dim(), self.input_dim());
        if p * q > EXPLICIT_GUARD {
            return Err(Error::SizeGuard {
                what: "explicit jacobian",
                needed: p * q,
                limit: EXPLICIT_GUARD,
            });
        }
        let trace = self.forward_trace(y)?;
        let mut rows = vec![0.0; p * q];
        let mut d = vec![0.0; p];
        for i in 0..p {
            d[i] = 1.0;
            let row = self.vjp_from_trace(&trace, &d)?;
            rows[i * q..(i + 1) * q].copy_from_slice(&row);
            d[i] = 0.0;
        }
        Tensor::matrix(p, q, rows)
    }
}

pub struct Trace {
    pub output: Vec<f64>,
    pub preactivations: Vec<Tensor>,
}

pub fn mlp_shapes(input_dim: usize, widths: &[usize]) -> Vec<LayerShape> {
    let mut shapes = Vec::with_capacity(widths.len());
    let mut prev = input_dim;
    for (i, &w) in widths.iter().enumerate() {
        let activation = if i + 1 == widths.len() {
            Activation::Identity
        } else {
            Activation::Relu
        };
        shapes.push(LayerShape {
            in_dim: prev,
            out_dim: w,
            activation,
        });
        prev = w;
    }
    shapes
}

fn validate_chain(shapes: &[LayerShape]) -> Result<()> {
    if shapes.is_empty() {
        return Err(Error::invalid("network needs at least one layer"));
    }
    for pair in shapes.windows(2) {
        if pair[0].out_dim != pair[1].in_dim {
            return Err(Error::ShapeMismatch {
                context: "layer chain",
                expected: format!("{}", pair[0].out_dim),
                got: format!("{}", pair[1].in_dim),
            });
        }
    }
    Ok(())
}

/// A network bound onto a tape: one leaf per weight matrix and bias vector.
pub struct TapeNet {
    pub weights: Vec<Var>,
    pub biases: Vec<Var>,
    shapes: Vec<LayerShape>,
}

impl TapeNet {
    pub fn bind(tape: &mut Tape, net: &Network) -> Result<Self> {
        let mut weights = Vec::with_capacity(net.shapes.len());
        let mut biases = Vec::with_capacity(net.shapes.len());
        for (li, s) in net.shapes.iter().enumerate() {
            weights.push(tape.leaf(Tensor::matrix(
                s.out_dim,
                s.in_dim,
                net.weight(li).to_vec(),
            )?)?);
            biases.push(tape.leaf(Tensor::vector(net.bias(li).to_vec()))?);
        }
        Ok(TapeNet {
            weights,
            biases,
            shapes: net.shapes.clone(),
        })
    }

    /// Recorded forward pass; returns the output node and per-layer
    /// preactivation nodes.
    pub fn forward(&self, tape: &mut Tape, y: Var) -> Result<(Var, Vec<Var>)> {
        let mut a = y;
        let mut pre = Vec::with_capacity(self.shapes.len());
        for (li, s) in self.shapes.iter().enumerate() {
            let wa = tape.matvec(self.weights[li], a)?;
            let z = tape.add(wa, self.biases[li])?;
            pre.push(z);
            a = match s.activation {
                Activation::Relu => tape.relu(z)?,
                Activation::Identity => z,
            };
        }
        Ok((a, pre))
    }

    /// Recorded forward pass carrying a tangent alongside: returns
    /// `(f(y), J(y) v)` as tape nodes. The tangent of the parameters is zero,
    /// so the tangent chain is `t <- step(z) * (W t)` per layer.
    pub fn forward_with_tangent(&self, tape: &mut Tape, y: Var, v: Var) -> Result<(Var, Var)> {
        let mut a = y;
        let mut t = v;
        for (li, s) in self.shapes.iter().enumerate() {
            let wa = tape.matvec(self.weights[li], a)?;
            let z = tape.add(wa, self.biases[li])?;
            t = tape.matvec(self.weights[li], t)?;
            match s.activation {
                Activation::Relu => {
                    a = tape.relu(z)?;
                    t = tape.relu_mask_mul(z, t)?;
                }
                Activation::Identity => {
                    a = z;
                }
            }
        }
        Ok((a, t))
    }

    /// Flat parameter gradient (zeros where no gradient flowed), laid out
    /// like [`Network::params`].
    pub fn read_param_grads(&self, grads: &GradValues) -> Vec<f64> {
        let total: usize = self.shapes.iter().map(|s| s.param_count()).sum();
        let mut flat = vec![0.0; total];
        let mut offset = 0;
        for (li, s) in self.shapes.iter().enumerate() {
            let wn = s.out_dim * s.in_dim;
            if let Some(g) = grads.get(self.weights[li]) {
                flat[offset..offset + wn].copy_from_slice(g.vals());
            }
            if let Some(g) = grads.get(self.biases[li]) {
                flat[offset + wn..offset + wn + s.out_dim].copy_from_slice(g.vals());
            }
            offset += s.param_count();
        }
        flat
    }
}

/// Gradient of a recorded scalar w.r.t. all parameters of a bound network.
pub fn param_grad(tape: &Tape, scalar: Var, tnet: &TapeNet) -> Result<Vec<f64>> {
    let grads = tape.grad_values(scalar)?;
    Ok(tnet.read_param_grads(&grads))
}
