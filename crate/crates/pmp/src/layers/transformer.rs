//! Vector self-attention over k-nearest neighborhoods.
//!
//! Per point i and neighbor j, the relation is r_ij = phi(x_i) - psi(x_j)
//! + eps_ij, where eps_ij encodes the offset p_i - p_j through a small
//! MLP. A second MLP turns each relation into per-channel logits; softmax
//! over the k neighbors weights (alpha(x_j) + eps_ij), and a residual adds
//! the input back. Output width equals input width, so the block drops
//! between encoder levels without reshaping.

use crate::error::Result;
use crate::geometry::{knn, PointCloud};
use crate::params::{ParamInit, ParamLease};
use crate::real::Real;
use crate::tensor::{Graph, Var};

use super::{linear, TransformerConfig};

/// `channels` is the level's feature width; the three projections keep it,
/// the two MLPs pass through the configured hidden widths.
pub fn transformer_register<T: Real>(
    init: &mut ParamInit<'_, T>,
    prefix: &str,
    channels: usize,
    cfg: &TransformerConfig,
) {
    init.linear(&format!("{prefix}.phi"), channels, channels);
    init.linear(&format!("{prefix}.psi"), channels, channels);
    init.linear(&format!("{prefix}.alpha"), channels, channels);
    init.linear(&format!("{prefix}.eps0"), 3, cfg.pos_mlp_hidden);
    init.linear(&format!("{prefix}.eps1"), cfg.pos_mlp_hidden, channels);
    init.linear(&format!("{prefix}.gamma0"), channels, cfg.attention_hidden);
    init.linear(&format!("{prefix}.gamma1"), cfg.attention_hidden, channels);
}

pub fn transformer_forward<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    prefix: &str,
    cloud: &PointCloud,
    coords: Var,
    features: Var,
    cfg: &TransformerConfig,
) -> Result<Var> {
    let n = cloud.len();
    let k = cfg.neighborhood_k.min(n).max(1);
    let neighbors = knn(cloud, cloud, k)?;
    let self_rep: Vec<usize> =
        (0..n).flat_map(|i| std::iter::repeat(i).take(k)).collect();

    let phi = linear(g, lease, &format!("{prefix}.phi"), features)?;
    let psi = linear(g, lease, &format!("{prefix}.psi"), features)?;
    let alpha = linear(g, lease, &format!("{prefix}.alpha"), features)?;

    let phi_i = g.gather(phi, &self_rep)?;
    let psi_j = g.gather(psi, &neighbors)?;
    let alpha_j = g.gather(alpha, &neighbors)?;

    let p_i = g.gather(coords, &self_rep)?;
    let p_j = g.gather(coords, &neighbors)?;
    let offset = g.sub(p_i, p_j)?;
    let eps_h = linear(g, lease, &format!("{prefix}.eps0"), offset)?;
    let eps_h = g.relu(eps_h);
    let eps = linear(g, lease, &format!("{prefix}.eps1"), eps_h)?;

    let diff = g.sub(phi_i, psi_j)?;
    let relation = g.add(diff, eps)?;
    let logits_h = linear(g, lease, &format!("{prefix}.gamma0"), relation)?;
    let logits_h = g.relu(logits_h);
    let logits = linear(g, lease, &format!("{prefix}.gamma1"), logits_h)?;

    let c = g.shape(features)[1];
    let logits = g.reshape(logits, vec![n, k, c])?;
    let weights = g.softmax(logits, 1)?;

    let value = g.add(alpha_j, eps)?;
    let value = g.reshape(value, vec![n, k, c])?;
    let weighted = g.mul(weights, value)?;
    let pooled = g.sum_axis(weighted, 1)?;
    g.add(pooled, features)
}
