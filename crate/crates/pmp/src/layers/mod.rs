//! Network building blocks: set abstraction, neighborhood attention,
//! feature propagation, gated recurrence, and the displacement head.
//!
//! Each block comes as a `register` / `forward` pair. `register` creates
//! the block's parameters under a dotted prefix in a [`ParamStore`];
//! `forward` builds the block into a [`Graph`], leasing those parameters
//! by the same prefix. Forward functions take materialized point clouds
//! for geometry decisions (sampling, neighbor search) alongside graph
//! variables carrying the same coordinates, so index structure is fixed
//! while gradients still flow through every distance and feature.

mod fp;
mod gate;
mod head;
mod sa;
mod transformer;

pub use fp::{broadcast_rows, fp_forward, fp_register, interp_apply};
pub use gate::{
    gate_forward, gate_register, gate_state_rows, gate_state_width, gate_zero_state, GateVariant,
};
pub use head::{head_forward, head_register, TANH_MARGIN};
pub use sa::{sa_forward, sa_global_forward, sa_global_register, sa_register, SaOutput};
pub use transformer::{transformer_forward, transformer_register};

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::ParamLease;
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

/// One sampling level of the encoder.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SaLevelConfig {
    pub points_out: usize,
    pub radius: f64,
    pub nsample: usize,
    /// Output width of each MLP layer, already channel-scaled.
    pub mlp: Vec<usize>,
}

/// The three-level encoder; level 3 pools everything into one vector.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub l1: SaLevelConfig,
    pub l2: SaLevelConfig,
    pub global_mlp: Vec<usize>,
}

/// Neighborhood attention block settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransformerConfig {
    /// Neighbors attended per point; clamped to the level's point count.
    pub neighborhood_k: usize,
    pub attention_hidden: usize,
    pub pos_mlp_hidden: usize,
}

/// Decoder feature-propagation MLP widths, already channel-scaled.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FpConfig {
    pub mlp1: Vec<usize>,
    pub mlp2: Vec<usize>,
    pub mlp3: Vec<usize>,
}

/// `x·W + b` as one fused graph node.
pub fn linear<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    name: &str,
    x: Var,
) -> Result<Var> {
    let w = lease.var(g, &format!("{name}.w"))?;
    let b = lease.var(g, &format!("{name}.b"))?;
    g.affine(x, w, b)
}

/// Adds a `[1, C]` bias to every row of `x`.
pub fn add_bias<T: Real>(g: &mut Graph<T>, x: Var, b: Var) -> Result<Var> {
    let n = g.shape(x)[0];
    let ones = g.constant(Tensor::new(vec![n, 1], vec![T::of(1.0); n])?);
    let tiled = g.matmul(ones, b)?;
    g.add(x, tiled)
}

/// Registers `depth` chained linear layers `{prefix}.mlp{i}`.
pub fn mlp_register<T: Real>(
    init: &mut crate::params::ParamInit<'_, T>,
    prefix: &str,
    mut fan_in: usize,
    widths: &[usize],
) {
    for (i, &w) in widths.iter().enumerate() {
        init.linear(&format!("{prefix}.mlp{i}"), fan_in, w);
        fan_in = w;
    }
}

/// Shared pointwise MLP: linear + relu per layer, relu on the last layer
/// included (encoder/decoder convention here).
pub fn mlp_forward<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    prefix: &str,
    mut x: Var,
    depth: usize,
) -> Result<Var> {
    for i in 0..depth {
        x = linear(g, lease, &format!("{prefix}.mlp{i}"), x)?;
        x = g.relu(x);
    }
    Ok(x)
}
