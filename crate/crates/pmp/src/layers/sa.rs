//! Set abstraction: sample, group, transform, pool.
//!
//! A level picks `points_out` farthest-point samples, gathers a radius
//! neighborhood around each, runs a shared MLP on `[relative coordinate :
//! neighbor feature]` rows, and max-pools each neighborhood to one feature
//! vector. The global level skips sampling and pools the whole cloud into
//! a single row.

use crate::error::Result;
use crate::geometry::{ball_query, fps, PointCloud};
use crate::params::{ParamInit, ParamLease};
use crate::real::Real;
use crate::tensor::{Graph, Var};

use super::{mlp_forward, mlp_register, SaLevelConfig};

/// A sampled level: the surviving points both as data and as graph nodes.
pub struct SaOutput {
    pub cloud: PointCloud,
    /// Indices of the sampled points in the level's input cloud.
    pub indices: Vec<usize>,
    /// `[M, 3]` coordinates of the sampled points.
    pub coords: Var,
    /// `[M, C_out]` pooled features.
    pub features: Var,
}

/// `in_features` is the per-point feature width entering the level (0 for
/// the raw first level); grouping prepends 3 relative coordinates.
pub fn sa_register<T: Real>(
    init: &mut ParamInit<'_, T>,
    prefix: &str,
    in_features: usize,
    cfg: &SaLevelConfig,
) {
    mlp_register(init, prefix, 3 + in_features, &cfg.mlp);
}

pub fn sa_forward<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    prefix: &str,
    cloud: &PointCloud,
    coords: Var,
    features: Option<Var>,
    cfg: &SaLevelConfig,
) -> Result<SaOutput> {
    let indices = fps(cloud, cfg.points_out)?;
    let sampled = cloud.select(&indices)?;
    let neighbors = ball_query(cloud, &sampled, cfg.radius, cfg.nsample)?;

    let m = cfg.points_out;
    let ns = cfg.nsample;
    // Each center index repeated once per neighbor slot, aligning center
    // rows with the flat neighbor list.
    let center_rep: Vec<usize> = indices.iter().flat_map(|&i| std::iter::repeat(i).take(ns)).collect();

    let grouped_coords = g.gather(coords, &neighbors.indices)?;
    let center_coords = g.gather(coords, &center_rep)?;
    let rel = g.sub(grouped_coords, center_coords)?;
    let grouped = match features {
        Some(f) => {
            let nf = g.gather(f, &neighbors.indices)?;
            g.concat(rel, nf)?
        }
        None => rel,
    };

    let transformed = mlp_forward(g, lease, prefix, grouped, cfg.mlp.len())?;
    let c_out = *cfg.mlp.last().expect("sa level needs at least one MLP layer");
    let stacked = g.reshape(transformed, vec![m, ns, c_out])?;
    let pooled = g.reduce_max(stacked, 1)?;

    let sampled_coords = g.gather(coords, &indices)?;
    Ok(SaOutput { cloud: sampled, indices, coords: sampled_coords, features: pooled })
}

pub fn sa_global_register<T: Real>(
    init: &mut ParamInit<'_, T>,
    prefix: &str,
    in_features: usize,
    widths: &[usize],
) {
    mlp_register(init, prefix, 3 + in_features, widths);
}

/// Pools the whole cloud into one `[1, C]` descriptor; the MLP sees
/// `[absolute coordinate : feature]` rows.
pub fn sa_global_forward<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    prefix: &str,
    coords: Var,
    features: Var,
    widths: &[usize],
) -> Result<Var> {
    let x = g.concat(coords, features)?;
    let transformed = mlp_forward(g, lease, prefix, x, widths.len())?;
    let pooled = g.reduce_max(transformed, 0)?;
    let c = *widths.last().expect("global level needs at least one MLP layer");
    g.reshape(pooled, vec![1, c])
}
