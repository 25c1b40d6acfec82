//! Recorded differentiable computation over tensors.
//!
//! The tape stores primitive operations in topological order with eagerly
//! computed values. Two reverse sweeps are provided:
//!
//! * [`Tape::backward_emit`] records the adjoint computation as new tape
//!   primitives, so the result of a reverse sweep is itself differentiable.
//!   This is what makes gradients of vjp/jvp-built scalars possible.
//! * [`Tape::grad_values`] runs a plain value-mode sweep and returns adjoint
//!   buffers, used for the final parameter gradient where no further
//!   differentiation is needed.
//!
//! Every primitive's adjoint is expressible in the same primitive set, so
//! emitted sweeps can be swept again to any order.

use crate::error::{Error, Result};
use crate::kernels;
use crate::tensor::Tensor;

/// Handle to a node on a tape. Only valid for the tape that produced it.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Var(pub(crate) usize);

impl Var {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Copy, Debug)]
pub enum Op {
    Leaf,
    /// `W x`, W: [m,n], x: [n] -> [m]
    MatVec(Var, Var),
    /// `W^T u`, W: [m,n], u: [m] -> [n]
    MatVecT(Var, Var),
    /// `u v^T`, [m],[n] -> [m,n]
    Outer(Var, Var),
    Add(Var, Var),
    Sub(Var, Var),
    /// Elementwise product.
    Mul(Var, Var),
    /// Elementwise quotient.
    Div(Var, Var),
    /// Scalar node times tensor node.
    Smul(Var, Var),
    /// Constant multiple.
    Scale(Var, f64),
    Neg(Var),
    Relu(Var),
    /// `step(x) * g`; derivative w.r.t. `x` is zero everywhere.
    ReluMaskMul(Var, Var),
    /// Inner product of equally shaped tensors -> scalar.
    Dot(Var, Var),
    /// Elementwise square root.
    Sqrt(Var),
}

fn op_inputs(op: Op) -> [Option<Var>; 2] {
    match op {
        Op::Leaf => [None, None],
        Op::MatVec(a, b)
        | Op::MatVecT(a, b)
        | Op::Outer(a, b)
        | Op::Add(a, b)
        | Op::Sub(a, b)
        | Op::Mul(a, b)
        | Op::Div(a, b)
        | Op::Smul(a, b)
        | Op::ReluMaskMul(a, b)
        | Op::Dot(a, b) => [Some(a), Some(b)],
        Op::Scale(a, _) | Op::Neg(a) | Op::Relu(a) | Op::Sqrt(a) => [Some(a), None],
    }
}

fn op_name(op: Op) -> &'static str {
    match op {
        Op::Leaf => "leaf",
        Op::MatVec(..) => "matvec",
        Op::MatVecT(..) => "matvec_t",
        Op::Outer(..) => "outer",
        Op::Add(..) => "add",
        Op::Sub(..) => "sub",
        Op::Mul(..) => "mul",
        Op::Div(..) => "div",
        Op::Smul(..) => "smul",
        Op::Scale(..) => "scale",
        Op::Neg(..) => "neg",
        Op::Relu(..) => "relu",
        Op::ReluMaskMul(..) => "relu_mask_mul",
        Op::Dot(..) => "dot",
        Op::Sqrt(..) => "sqrt",
    }
}

struct Node {
    op: Op,
    val: Tensor,
}

/// Adjoint values keyed by node, produced by [`Tape::grad_values`].
pub struct GradValues {
    grads: Vec<Option<Tensor>>,
}

impl GradValues {
    pub fn get(&self, v: Var) -> Option<&Tensor> {
        self.grads.get(v.0).and_then(|g| g.as_ref())
    }
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

impl Tape {
    pub fn new() -> Self {
        Tape { nodes: Vec::new() }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn value(&self, v: Var) -> &Tensor {
        &self.nodes[v.0].val
    }

    pub fn scalar_value(&self, v: Var) -> Result<f64> {
        self.nodes[v.0].val.item()
    }

    fn check(&self, v: Var) -> Result<()> {
        if v.0 >= self.nodes.len() {
            return Err(Error::invalid(format!(
                "var {} does not belong to this tape (len {})",
                v.0,
                self.nodes.len()
            )));
        }
        Ok(())
    }

    fn push(&mut self, op: Op, val: Tensor) -> Result<Var> {
        if !val.all_finite() {
            return Err(Error::NonFinite { op: op_name(op) });
        }
        self.nodes.push(Node { op, val });
        Ok(Var(self.nodes.len() - 1))
    }

    pub fn leaf(&mut self, t: Tensor) -> Result<Var> {
        self.push(Op::Leaf, t)
    }

    pub fn scalar_const(&mut self, x: f64) -> Result<Var> {
        self.push(Op::Leaf, Tensor::scalar(x))
    }

    fn zero_like(&mut self, v: Var) -> Result<Var> {
        let shape = self.nodes[v.0].val.shape().to_vec();
        self.push(Op::Leaf, Tensor::zeros(&shape))
    }

    /// Compute the value a node would take; shared by construction and replay.
    fn eval_op(&self, op: Op) -> Result<Tensor> {
        let t = |v: Var| &self.nodes[v.0].val;
        let mismatch = |context: &'static str, expected: String, got: String| {
            Err(Error::ShapeMismatch {
                context,
                expected,
                got,
            })
        };
        match op {
            Op::Leaf => Err(Error::invalid("leaf nodes carry their own value")),
            Op::MatVec(w, x) => {
                let (wt, xt) = (t(w), t(x));
                if !wt.is_matrix() || !xt.is_vector() || wt.shape()[1] != xt.len() {
                    return mismatch(
                        "matvec",
                        "W [m,n] and x [n]".into(),
                        format!("{:?} and {:?}", wt.shape(), xt.shape()),
                    );
                }
                let (m, n) = (wt.shape()[0], wt.shape()[1]);
                Ok(Tensor::vector(kernels::matvec(wt.vals(), xt.vals(), m, n)))
            }
            Op::MatVecT(w, u) => {
                let (wt, ut) = (t(w), t(u));
                if !wt.is_matrix() || !ut.is_vector() || wt.shape()[0] != ut.len() {
                    return mismatch(
                        "matvec_t",
                        "W [m,n] and u [m]".into(),
                        format!("{:?} and {:?}", wt.shape(), ut.shape()),
                    );
                }
                let (m, n) = (wt.shape()[0], wt.shape()[1]);
                Ok(Tensor::vector(kernels::matvec_t(wt.vals(), ut.vals(), m, n)))
            }
            Op::Outer(u, v) => {
                let (ut, vt) = (t(u), t(v));
                if !ut.is_vector() || !vt.is_vector() {
                    return mismatch(
                        "outer",
                        "two vectors".into(),
                        format!("{:?} and {:?}", ut.shape(), vt.shape()),
                    );
                }
                Tensor::matrix(ut.len(), vt.len(), kernels::outer(ut.vals(), vt.vals()))
            }
            Op::Add(a, b) | Op::Sub(a, b) | Op::Mul(a, b) | Op::Div(a, b) => {
                let (at, bt) = (t(a), t(b));
                if at.shape() != bt.shape() {
                    return mismatch(
                        "elementwise",
                        format!("{:?}", at.shape()),
                        format!("{:?}", bt.shape()),
                    );
                }
                let vals = match op {
                    Op::Add(..) => kernels::add(at.vals(), bt.vals()),
                    Op::Sub(..) => kernels::sub(at.vals(), bt.vals()),
                    Op::Mul(..) => kernels::mul(at.vals(), bt.vals()),
                    _ => kernels::div(at.vals(), bt.vals()),
                };
                Tensor::new(at.shape().to_vec(), vals)
            }
            Op::Smul(s, v) => {
                let (st, vt) = (t(s), t(v));
                let c = st.item().map_err(|_| Error::ShapeMismatch {
                    context: "smul",
                    expected: "scalar first operand".into(),
                    got: format!("{:?}", st.shape()),
                })?;
                Tensor::new(vt.shape().to_vec(), kernels::scale(vt.vals(), c))
            }
            Op::Scale(a, c) => {
                let at = t(a);
                Tensor::new(at.shape().to_vec(), kernels::scale(at.vals(), c))
            }
            Op::Neg(a) => {
                let at = t(a);
                Tensor::new(at.shape().to_vec(), kernels::neg(at.vals()))
            }
            Op::Relu(a) => {
                let at = t(a);
                Tensor::new(at.shape().to_vec(), kernels::relu(at.vals()))
            }
            Op::ReluMaskMul(x, g) => {
                let (xt, gt) = (t(x), t(g));
                if xt.shape() != gt.shape() {
                    return mismatch(
                        "relu_mask_mul",
                        format!("{:?}", xt.shape()),
                        format!("{:?}", gt.shape()),
                    );
                }
                Tensor::new(
                    xt.shape().to_vec(),
                    kernels::relu_mask_mul(xt.vals(), gt.vals()),
                )
            }
            Op::Dot(a, b) => {
                let (at, bt) = (t(a), t(b));
                if at.shape() != bt.shape() {
                    return mismatch(
                        "dot",
                        format!("{:?}", at.shape()),
                        format!("{:?}", bt.shape()),
                    );
                }
                Ok(Tensor::scalar(kernels::dot(at.vals(), bt.vals())))
            }
            Op::Sqrt(a) => {
                let at = t(a);
                Tensor::new(at.shape().to_vec(), kernels::sqrt(at.vals()))
            }
        }
    }

    fn record(&mut self, op: Op) -> Result<Var> {
        for v in op_inputs(op).into_iter().flatten() {
            self.check(v)?;
        }
        let val = self.eval_op(op)?;
        self.push(op, val)
    }

    pub fn matvec(&mut self, w: Var, x: Var) -> Result<Var> {
        self.record(Op::MatVec(w, x))
    }

    pub fn matvec_t(&mut self, w: Var, u: Var) -> Result<Var> {
        self.record(Op::MatVecT(w, u))
    }

    pub fn outer(&mut self, u: Var, v: Var) -> Result<Var> {
        self.record(Op::Outer(u, v))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Add(a, b))
    }

    pub fn sub(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Sub(a, b))
    }

    pub fn mul(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Mul(a, b))
    }

    pub fn div(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Div(a, b))
    }

    pub fn smul(&mut self, s: Var, v: Var) -> Result<Var> {
        self.record(Op::Smul(s, v))
    }

    pub fn scale(&mut self, a: Var, c: f64) -> Result<Var> {
        self.record(Op::Scale(a, c))
    }

    pub fn neg(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Neg(a))
    }

    pub fn relu(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Relu(a))
    }

    pub fn relu_mask_mul(&mut self, x: Var, g: Var) -> Result<Var> {
        self.record(Op::ReluMaskMul(x, g))
    }

    pub fn dot(&mut self, a: Var, b: Var) -> Result<Var> {
        self.record(Op::Dot(a, b))
    }

    pub fn sqrt(&mut self, a: Var) -> Result<Var> {
        self.record(Op::Sqrt(a))
    }

    /// `||v||_2` as a scalar node.
    pub fn norm2(&mut self, v: Var) -> Result<Var> {
        let d = self.dot(v, v)?;
        self.sqrt(d)
    }

    /// Reverse sweep from `output` seeded with `seed`, recording the adjoint
    /// computation as tape primitives. Returns one adjoint node per entry of
    /// `wanted` (a zero leaf where no gradient flows).
    ///
    /// Only adjoints on paths between `wanted` and `output` are emitted, so
    /// a sweep w.r.t. the network input leaves parameter adjoints alone.
    pub fn backward_emit(&mut self, output: Var, seed: Var, wanted: &[Var]) -> Result<Vec<Var>> {
        self.check(output)?;
        self.check(seed)?;
        for w in wanted {
            self.check(*w)?;
        }
        if self.nodes[output.0].val.shape() != self.nodes[seed.0].val.shape() {
            return Err(Error::ShapeMismatch {
                context: "backward_emit seed",
                expected: format!("{:?}", self.nodes[output.0].val.shape()),
                got: format!("{:?}", self.nodes[seed.0].val.shape()),
            });
        }

        let end = output.0;
        // Forward cone of the wanted set.
        let mut in_cone = vec![false; end + 1];
        for w in wanted {
            if w.0 <= end {
                in_cone[w.0] = true;
            }
        }
        for i in 0..=end {
            if in_cone[i] {
                continue;
            }
            in_cone[i] = op_inputs(self.nodes[i].op)
                .into_iter()
                .flatten()
                .any(|v| in_cone[v.0]);
        }
        // Ancestors of the output.
        let mut anc = vec![false; end + 1];
        anc[end] = true;
        for i in (0..=end).rev() {
            if anc[i] {
                for v in op_inputs(self.nodes[i].op).into_iter().flatten() {
                    anc[v.0] = true;
                }
            }
        }
        let active: Vec<bool> = (0..=end).map(|i| in_cone[i] && anc[i]).collect();

        let mut adj: Vec<Option<Var>> = vec![None; end + 1];
        if active[end] {
            adj[end] = Some(seed);
        }
        for i in (0..=end).rev() {
            if !active[i] {
                continue;
            }
            let Some(u) = adj[i] else { continue };
            let op = self.nodes[i].op;
            let out_var = Var(i);
            let contribute = |tape: &mut Tape,
                                  adj: &mut Vec<Option<Var>>,
                                  target: Var,
                                  partial: Var|
             -> Result<()> {
                if target.0 <= end && active[target.0] {
                    adj[target.0] = Some(match adj[target.0] {
                        None => partial,
                        Some(existing) => tape.add(existing, partial)?,
                    });
                }
                Ok(())
            };
            match op {
                Op::Leaf => {}
                Op::MatVec(w, x) => {
                    if w.0 <= end && active[w.0] {
                        let p = self.outer(u, x)?;
                        contribute(self, &mut adj, w, p)?;
                    }
                    if x.0 <= end && active[x.0] {
                        let p = self.matvec_t(w, u)?;
                        contribute(self, &mut adj, x, p)?;
                    }
                }
                Op::MatVecT(w, s) => {
                    if w.0 <= end && active[w.0] {
                        let p = self.outer(s, u)?;
                        contribute(self, &mut adj, w, p)?;
                    }
                    if s.0 <= end && active[s.0] {
                        let p = self.matvec(w, u)?;
                        contribute(self, &mut adj, s, p)?;
                    }
                }
                Op::Outer(a, b) => {
                    if a.0 <= end && active[a.0] {
                        let p = self.matvec(u, b)?;
                        contribute(self, &mut adj, a, p)?;
                    }
                    if b.0 <= end && active[b.0] {
                        let p = self.matvec_t(u, a)?;
                        contribute(self, &mut adj, b, p)?;
                    }
                }
                Op::Add(a, b) => {
                    contribute(self, &mut adj, a, u)?;
                    contribute(self, &mut adj, b, u)?;
                }
                Op::Sub(a, b) => {
                    contribute(self, &mut adj, a, u)?;
                    if b.0 <= end && active[b.0] {
                        let p = self.neg(u)?;
                        contribute(self, &mut adj, b, p)?;
                    }
                }
                Op::Mul(a, b) => {
                    if a.0 <= end && active[a.0] {
                        let p = self.mul(u, b)?;
                        contribute(self, &mut adj, a, p)?;
                    }
                    if b.0 <= end && active[b.0] {
                        let p = self.mul(u, a)?;
                        contribute(self, &mut adj, b, p)?;
                    }
                }
                Op::Div(a, b) => {
                    if a.0 <= end && active[a.0] {
                        let p = self.div(u, b)?;
                        contribute(self, &mut adj, a, p)?;
                    }
                    if b.0 <= end && active[b.0] {
                        let q = self.div(out_var, b)?;
                        let r = self.mul(u, q)?;
                        let p = self.neg(r)?;
                        contribute(self, &mut adj, b, p)?;
                    }
                }
                Op::Smul(s, v) => {
                    if s.0 <= end && active[s.0] {
                        let p = self.dot(u, v)?;
                        contribute(self, &mut adj, s, p)?;
                    }
                    if v.0 <= end && active[v.0] {
                        let p = self.smul(s, u)?;
                        contribute(self, &mut adj, v, p)?;
                    }
                }
                Op::Scale(a, c) => {
                    if a.0 <= end && active[a.0] {
                        let p = self.scale(u, c)?;
                        contribute(self, &mut adj, a, p)?;
                    }
                }
                Op::Neg(a) => {
                    if a.0 <= end && active[a.0] {
                        let p = self.neg(u)?;
                        contribute(self, &mut adj, a, p)?;
                    }
                }
                Op::Relu(x) => {
                    if x.0 <= end && active[x.0] {
                        let p = self.relu_mask_mul(x, u)?;
                        contribute(self, &mut adj, x, p)?;
                    }
                }
                Op::ReluMaskMul(x, g) => {
                    // step(x) is piecewise constant: no adjoint into x.
                    if g.0 <= end && active[g.0] {
                        let p = self.relu_mask_mul(x, u)?;
                        contribute(self, &mut adj, g, p)?;
                    }
                }
                Op::Dot(a, b) => {
                    if a.0 <= end && active[a.0] {
                        let p = self.smul(u, b)?;
                        contribute(self, &mut adj, a, p)?;
                    }
                    if b.0 <= end && active[b.0] {
                        let p = self.smul(u, a)?;
                        contribute(self, &mut adj, b, p)?;
                    }
                }
                Op::Sqrt(a) => {
                    if a.0 <= end && active[a.0] {
                        let twice = self.scale(out_var, 2.0)?;
                        let p = self.div(u, twice)?;
                        contribute(self, &mut adj, a, p)?;
                    }
                }
            }
        }

        wanted
            .iter()
            .map(|w| match adj[w.0] {
                Some(v) => Ok(v),
                None => self.zero_like(*w),
            })
            .collect()
    }

    /// Value-mode reverse sweep from a scalar node; adjoints are plain
    /// buffers, the tape does not grow. Used for parameter gradients.
    pub fn grad_values(&self, output: Var) -> Result<GradValues> {
        self.check(output)?;
        if self.nodes[output.0].val.len() != 1 {
            return Err(Error::ShapeMismatch {
                context: "grad_values",
                expected: "scalar output".into(),
                got: format!("{:?}", self.nodes[output.0].val.shape()),
            });
        }
        let end = output.0;
        let mut adj: Vec<Option<Tensor>> = Vec::with_capacity(end + 1);
        adj.resize_with(end + 1, || None);
        adj[end] = Some(Tensor::scalar(1.0));

        let accumulate = |slot: &mut Option<Tensor>, shape: &[usize], vals: &[f64]| match slot {
            None => {
                *slot = Some(Tensor::new(shape.to_vec(), vals.to_vec()).expect("adjoint shape"));
            }
            Some(t) => {
                for (a, b) in t.vals_mut().iter_mut().zip(vals) {
                    *a += b;
                }
            }
        };

        for i in (0..=end).rev() {
            if adj[i].is_none() {
                continue;
            }
            let op = self.nodes[i].op;
            if matches!(op, Op::Leaf) {
                continue;
            }
            let u = adj[i].as_ref().unwrap().vals().to_vec();
            let val_of = |v: Var| self.nodes[v.0].val.vals();
            let shape_of = |v: Var| self.nodes[v.0].val.shape();
            match op {
                Op::Leaf => unreachable!(),
                Op::MatVec(w, x) => {
                    let (m, n) = (shape_of(w)[0], shape_of(w)[1]);
                    let pw = kernels::outer(&u, val_of(x));
                    accumulate(&mut adj[w.0], shape_of(w), &pw);
                    let px = kernels::matvec_t(val_of(w), &u, m, n);
                    accumulate(&mut adj[x.0], shape_of(x), &px);
                }
                Op::MatVecT(w, s) => {
                    let (m, n) = (shape_of(w)[0], shape_of(w)[1]);
                    let pw = kernels::outer(val_of(s), &u);
                    accumulate(&mut adj[w.0], shape_of(w), &pw);
                    let ps = kernels::matvec(val_of(w), &u, m, n);
                    accumulate(&mut adj[s.0], shape_of(s), &ps);
                }
                Op::Outer(a, b) => {
                    let (m, n) = (val_of(a).len(), val_of(b).len());
                    let pa = kernels::matvec(&u, val_of(b), m, n);
                    accumulate(&mut adj[a.0], shape_of(a), &pa);
                    let pb = kernels::matvec_t(&u, val_of(a), m, n);
                    accumulate(&mut adj[b.0], shape_of(b), &pb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut adj[a.0], shape_of(a), &u);
                    accumulate(&mut adj[b.0], shape_of(b), &u);
                }
                Op::Sub(a, b) => {
                    accumulate(&mut adj[a.0], shape_of(a), &u);
                    let p = kernels::neg(&u);
                    accumulate(&mut adj[b.0], shape_of(b), &p);
                }
                Op::Mul(a, b) => {
                    let pa = kernels::mul(&u, val_of(b));
                    accumulate(&mut adj[a.0], shape_of(a), &pa);
                    let pb = kernels::mul(&u, val_of(a));
                    accumulate(&mut adj[b.0], shape_of(b), &pb);
                }
                Op::Div(a, b) => {
                    let pa = kernels::div(&u, val_of(b));
                    accumulate(&mut adj[a.0], shape_of(a), &pa);
                    let z = self.nodes[i].val.vals();
                    let q = kernels::div(z, val_of(b));
                    let pb = kernels::neg(&kernels::mul(&u, &q));
                    accumulate(&mut adj[b.0], shape_of(b), &pb);
                }
                Op::Smul(s, v) => {
                    let ps = [kernels::dot(&u, val_of(v))];
                    accumulate(&mut adj[s.0], shape_of(s), &ps);
                    let c = val_of(s)[0];
                    let pv = kernels::scale(&u, c);
                    accumulate(&mut adj[v.0], shape_of(v), &pv);
                }
                Op::Scale(a, c) => {
                    let p = kernels::scale(&u, c);
                    accumulate(&mut adj[a.0], shape_of(a), &p);
                }
                Op::Neg(a) => {
                    let p = kernels::neg(&u);
                    accumulate(&mut adj[a.0], shape_of(a), &p);
                }
                Op::Relu(x) => {
                    let p = kernels::relu_mask_mul(val_of(x), &u);
                    accumulate(&mut adj[x.0], shape_of(x), &p);
                }
                Op::ReluMaskMul(x, g) => {
                    let p = kernels::relu_mask_mul(val_of(x), &u);
                    accumulate(&mut adj[g.0], shape_of(g), &p);
                }
                Op::Dot(a, b) => {
                    let c = u[0];
                    let pa = kernels::scale(val_of(b), c);
                    accumulate(&mut adj[a.0], shape_of(a), &pa);
                    let pb = kernels::scale(val_of(a), c);
                    accumulate(&mut adj[b.0], shape_of(b), &pb);
                }
                Op::Sqrt(a) => {
                    let z = self.nodes[i].val.vals();
                    let twice = kernels::scale(z, 2.0);
                    let p = kernels::div(&u, &twice);
                    accumulate(&mut adj[a.0], shape_of(a), &p);
                }
            }
        }

        for g in adj.iter().flatten() {
            if !g.all_finite() {
                return Err(Error::NonFinite { op: "grad_values" });
            }
        }
        Ok(GradValues { grads: adj })
    }

    /// Recompute every non-leaf value from its recorded inputs and compare
    /// bit-for-bit with the stored value.
    pub fn replay_check(&self) -> Result<()> {
        for i in 0..self.nodes.len() {
            if matches!(self.nodes[i].op, Op::Leaf) {
                continue;
            }
            let recomputed = self.eval_op(self.nodes[i].op)?;
            if recomputed != self.nodes[i].val {
                return Err(Error::invalid(format!(
                    "replay mismatch at node {i} ({})",
                    op_name(self.nodes[i].op)
                )));
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn vec_var(tape: &mut Tape, v: &[f64]) -> Var {
        tape.leaf(Tensor::vector(v.to_vec())).unwrap()
    }

    #[test]
    fn values_are_eager_and_replayable() {
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, -2.0, 3.0]);
        let b = vec_var(&mut tape, &[0.5, 0.5, 0.5]);
        let c = tape.mul(a, b).unwrap();
        let d = tape.relu(c).unwrap();
        let s = tape.dot(d, d).unwrap();
        let _ = tape.sqrt(s).unwrap();
        assert_eq!(tape.value(d).vals(), &[0.5, 0.0, 1.5]);
        tape.replay_check().unwrap();
    }

    #[test]
    fn emitted_backward_is_replayable() {
        let mut tape = Tape::new();
        let w = tape
            .leaf(Tensor::matrix(2, 2, vec![1.0, 2.0, 3.0, 4.0]).unwrap())
            .unwrap();
        let x = vec_var(&mut tape, &[1.0, -1.0]);
        let z = tape.matvec(w, x).unwrap();
        let a = tape.relu(z).unwrap();
        let seed = vec_var(&mut tape, &[1.0, 1.0]);
        let grads = tape.backward_emit(a, seed, &[x]).unwrap();
        // z = (-1, -1) so the relu mask is all-zero.
        assert_eq!(tape.value(grads[0]).vals(), &[0.0, 0.0]);
        tape.replay_check().unwrap();
    }

    #[test]
    fn grad_values_chain_rule() {
        // f = sqrt(dot(a*b, a*b)) = ||a*b||, at a=(3,0), b=(1,2): f = 3
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[3.0, 0.0]);
        let b = vec_var(&mut tape, &[1.0, 2.0]);
        let c = tape.mul(a, b).unwrap();
        let d = tape.dot(c, c).unwrap();
        let f = tape.sqrt(d).unwrap();
        assert_eq!(tape.scalar_value(f).unwrap(), 3.0);
        let g = tape.grad_values(f).unwrap();
        // df/dc = c/||c|| = (1, 0); df/da = df/dc * b, df/db = df/dc * a
        assert_eq!(g.get(a).unwrap().vals(), &[1.0, 0.0]);
        assert_eq!(g.get(b).unwrap().vals(), &[3.0, 0.0]);
    }

    #[test]
    fn grad_values_accumulates_shared_inputs() {
        // s = dot(a, a) + dot(a, b): ds/da = 2a + b
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, 2.0]);
        let b = vec_var(&mut tape, &[5.0, 7.0]);
        let d1 = tape.dot(a, a).unwrap();
        let d2 = tape.dot(a, b).unwrap();
        let s = tape.add(d1, d2).unwrap();
        let g = tape.grad_values(s).unwrap();
        assert_eq!(g.get(a).unwrap().vals(), &[7.0, 11.0]);
        assert_eq!(g.get(b).unwrap().vals(), &[1.0, 2.0]);
    }

    #[test]
    fn grad_values_rejects_non_scalar() {
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0, 2.0]);
        assert!(tape.grad_values(a).is_err());
    }

    #[test]
    fn non_finite_is_an_engine_error() {
        let mut tape = Tape::new();
        let a = vec_var(&mut tape, &[1.0]);
        let z = tape.scale(a, 0.0).unwrap();
        assert!(matches!(
            tape.div(a, z),
            Err(Error::NonFinite { .. })
        ));
    }

    #[test]
    fn emit_sweep_matches_value_sweep() {
        // Scalar built from matvec/relu/dot; gradient w.r.t. a leaf must agree
        // between the emitting sweep and the value sweep.
        let mut tape = Tape::new();
        let w = tape
            .leaf(Tensor::matrix(2, 3, vec![0.3, -0.2, 0.5, 1.0, 0.4, -0.7]).unwrap())
            .unwrap();
        let x = vec_var(&mut tape, &[0.2, 1.4, -0.9]);
        let z = tape.matvec(w, x).unwrap();
        let a = tape.relu(z).unwrap();
        let s = tape.dot(a, a).unwrap();

        let one = tape.scalar_const(1.0).unwrap();
        let emitted = tape.backward_emit(s, one, &[x, w]).unwrap();
        let valued = tape.grad_values(s).unwrap();
        assert_eq!(tape.value(emitted[0]).vals(), valued.get(x).unwrap().vals());
        assert_eq!(tape.value(emitted[1]).vals(), valued.get(w).unwrap().vals());
    }

    #[test]
    fn second_order_through_emitted_sweep() {
        // y = dot(x, x); g = dy/dx = 2x; h = dot(g, g) = 4*dot(x,x).
        // dh/dx = 8x, obtained by value-sweeping through the emitted sweep.
        let mut tape = Tape::new();
        let x = vec_var(&mut tape, &[1.5, -2.0]);
        let y = tape.dot(x, x).unwrap();
        let one = tape.scalar_const(1.0).unwrap();
        let g = tape.backward_emit(y, one, &[x]).unwrap()[0];
        assert_eq!(tape.value(g).vals(), &[3.0, -4.0]);
        let h = tape.dot(g, g).unwrap();
        let grads = tape.grad_values(h).unwrap();
        assert_eq!(grads.get(x).unwrap().vals(), &[12.0, -16.0]);
    }
}
