//! Minimal differentiable-computation engine for feed-forward networks:
//! forward evaluation, vjp, jvp, parameter gradients, and gradients of
//! scalars built from vjp/jvp outputs (the reverse sweep can record itself
//! as tape primitives, so derivative computations are differentiable).

mod network;
mod tape;

pub use network::{
    mlp_shapes, param_grad, Activation, LayerShape, Network, TapeNet, Trace, EXPLICIT_GUARD,
};
pub use tape::{GradValues, Op, Tape, Var};
