//! Gated fusion of current features with the previous step's features.
//!
//! The full unit (`rpa`) computes update and reset gates like a GRU but
//! blends toward the CURRENT input: h = z*cand + (1-z)*f, so pressing z to
//! zero discards all history. The other variants exist for ablation: the
//! mirrored textbook GRU (z=1 keeps history), plain RNN and LSTM cells, a
//! parameterless add, and a pass-through.
//!
//! Every variant returns (output, new state). States are `[N, C]` rows
//! except the LSTM's, which stacks hidden over cell as `[2N, C]`.

use serde::{Deserialize, Serialize};

use crate::error::Result;
use crate::params::{ParamInit, ParamLease};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

use super::linear;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GateVariant {
    None,
    Add,
    Rnn,
    Lstm,
    Gru,
    Rpa,
}

impl GateVariant {
    pub fn name(&self) -> &'static str {
        match self {
            GateVariant::None => "none",
            GateVariant::Add => "add",
            GateVariant::Rnn => "rnn",
            GateVariant::Lstm => "lstm",
            GateVariant::Gru => "gru",
            GateVariant::Rpa => "rpa",
        }
    }

    pub fn parse(s: &str) -> Result<GateVariant> {
        match s {
            "none" => Ok(GateVariant::None),
            "add" => Ok(GateVariant::Add),
            "rnn" => Ok(GateVariant::Rnn),
            "lstm" => Ok(GateVariant::Lstm),
            "gru" => Ok(GateVariant::Gru),
            "rpa" => Ok(GateVariant::Rpa),
            other => Err(crate::Error::argument(format!("unknown gate variant {other:?}"))),
        }
    }
}

/// State row count for a gate over `n` points (LSTM doubles it).
pub fn gate_state_rows(kind: GateVariant, n: usize) -> usize {
    match kind {
        GateVariant::Lstm => 2 * n,
        _ => n,
    }
}

/// Feature width the state carries; uniform across variants.
pub fn gate_state_width(_kind: GateVariant, channels: usize) -> usize {
    channels
}

/// A zero state, the step-one convention for every variant.
pub fn gate_zero_state<T: Real>(
    g: &mut Graph<T>,
    kind: GateVariant,
    n: usize,
    channels: usize,
) -> Var {
    g.constant(Tensor::zeros(vec![gate_state_rows(kind, n), channels]))
}

pub fn gate_register<T: Real>(
    init: &mut ParamInit<'_, T>,
    prefix: &str,
    kind: GateVariant,
    channels: usize,
) {
    let c2 = 2 * channels;
    match kind {
        GateVariant::None | GateVariant::Add => {}
        GateVariant::Rnn => init.linear(&format!("{prefix}.cand"), c2, channels),
        GateVariant::Gru | GateVariant::Rpa => {
            init.linear(&format!("{prefix}.z"), c2, channels);
            init.linear(&format!("{prefix}.r"), c2, channels);
            init.linear(&format!("{prefix}.cand"), c2, channels);
        }
        GateVariant::Lstm => {
            init.linear(&format!("{prefix}.i"), c2, channels);
            init.linear(&format!("{prefix}.f"), c2, channels);
            init.linear(&format!("{prefix}.o"), c2, channels);
            init.linear(&format!("{prefix}.cand"), c2, channels);
        }
    }
}

fn ones_like<T: Real>(g: &mut Graph<T>, v: Var) -> Var {
    let shape = g.shape(v).to_vec();
    let n = crate::tensor::numel(&shape);
    g.constant(Tensor::new(shape, vec![T::of(1.0); n]).unwrap())
}

/// Stacks two `[N, C]` blocks into `[2N, C]` by row.
fn stack_rows<T: Real>(g: &mut Graph<T>, a: Var, b: Var) -> Result<Var> {
    let (n, c) = (g.shape(a)[0], g.shape(a)[1]);
    let a_flat = g.reshape(a, vec![1, n * c])?;
    let b_flat = g.reshape(b, vec![1, n * c])?;
    let joined = g.concat(a_flat, b_flat)?;
    g.reshape(joined, vec![2 * n, c])
}

pub fn gate_forward<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    prefix: &str,
    kind: GateVariant,
    f: Var,
    state: Var,
) -> Result<(Var, Var)> {
    let n = g.shape(f)[0];
    let expect_rows = gate_state_rows(kind, n);
    if g.shape(state) != [expect_rows, g.shape(f)[1]] {
        return Err(crate::Error::dim(format!(
            "gate {} state must be [{expect_rows}, {}], got {:?}",
            kind.name(),
            g.shape(f)[1],
            g.shape(state)
        )));
    }
    match kind {
        GateVariant::None => Ok((f, state)),
        GateVariant::Add => {
            let out = g.add(f, state)?;
            Ok((out, out))
        }
        GateVariant::Rnn => {
            let x = g.concat(f, state)?;
            let pre = linear(g, lease, &format!("{prefix}.cand"), x)?;
            let out = g.tanh(pre);
            Ok((out, out))
        }
        GateVariant::Gru => {
            let h = state;
            let x = g.concat(f, h)?;
            let z_pre = linear(g, lease, &format!("{prefix}.z"), x)?;
            let z = g.sigmoid(z_pre);
            let r_pre = linear(g, lease, &format!("{prefix}.r"), x)?;
            let r = g.sigmoid(r_pre);
            let rh = g.mul(r, h)?;
            let xc = g.concat(f, rh)?;
            let cand_pre = linear(g, lease, &format!("{prefix}.cand"), xc)?;
            let cand = g.tanh(cand_pre);
            // Textbook orientation: z holds on to history.
            let zh = g.mul(z, h)?;
            let ones = ones_like(g, z);
            let zi = g.sub(ones, z)?;
            let zc = g.mul(zi, cand)?;
            let out = g.add(zh, zc)?;
            Ok((out, out))
        }
        GateVariant::Rpa => {
            let h = state;
            let x = g.concat(f, h)?;
            let z_pre = linear(g, lease, &format!("{prefix}.z"), x)?;
            let z = g.sigmoid(z_pre);
            let r_pre = linear(g, lease, &format!("{prefix}.r"), x)?;
            let r = g.sigmoid(r_pre);
            let rh = g.mul(r, h)?;
            let xc = g.concat(rh, f)?;
            let cand_pre = linear(g, lease, &format!("{prefix}.cand"), xc)?;
            let cand = g.relu(cand_pre);
            // Blend toward the CURRENT input: z=0 forgets all history.
            let zc = g.mul(z, cand)?;
            let ones = ones_like(g, z);
            let zi = g.sub(ones, z)?;
            let zf = g.mul(zi, f)?;
            let out = g.add(zc, zf)?;
            Ok((out, out))
        }
        GateVariant::Lstm => {
            let split: Vec<usize> = (0..n).collect();
            let h = g.gather(state, &split)?;
            let cell_idx: Vec<usize> = (n..2 * n).collect();
            let cell = g.gather(state, &cell_idx)?;
            let x = g.concat(f, h)?;
            let i_pre = linear(g, lease, &format!("{prefix}.i"), x)?;
            let i = g.sigmoid(i_pre);
            let f_pre = linear(g, lease, &format!("{prefix}.f"), x)?;
            let forget = g.sigmoid(f_pre);
            let o_pre = linear(g, lease, &format!("{prefix}.o"), x)?;
            let o = g.sigmoid(o_pre);
            let cand_pre = linear(g, lease, &format!("{prefix}.cand"), x)?;
            let cand = g.tanh(cand_pre);
            let kept = g.mul(forget, cell)?;
            let new = g.mul(i, cand)?;
            let cell_next = g.add(kept, new)?;
            let ct = g.tanh(cell_next);
            let out = g.mul(o, ct)?;
            let state_next = stack_rows(g, out, cell_next)?;
            Ok((out, state_next))
        }
    }
}
