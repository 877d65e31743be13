//! Feature propagation: carry coarse features back to finer point sets.
//!
//! Interpolation uses fixed inverse-distance weights over the 3 nearest
//! coarse points (computed outside the graph), so the graph sees a gather,
//! a constant multiply, and a sum — cheap and fully differentiable wrt the
//! coarse features. After interpolation a level concatenates the encoder's
//! skip features at that resolution and runs its MLP.

use crate::error::Result;
use crate::geometry::InterpWeights;
use crate::params::{ParamInit, ParamLease};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

use super::{mlp_forward, mlp_register};

/// Tiles a single `[1, C]` row to `[rows, C]` through a ones-column
/// product; gradients sum back into the one source row.
pub fn broadcast_rows<T: Real>(g: &mut Graph<T>, x: Var, rows: usize) -> Result<Var> {
    let ones = g.constant(Tensor::new(vec![rows, 1], vec![T::of(1.0); rows])?);
    g.matmul(ones, x)
}

/// Applies precomputed 3-NN weights: out[q] = sum_j w[q][j] * coarse[idx[q][j]].
pub fn interp_apply<T: Real>(
    g: &mut Graph<T>,
    weights: &InterpWeights,
    coarse: Var,
) -> Result<Var> {
    let c = g.shape(coarse)[1];
    let q = weights.indices.len();
    let flat_idx: Vec<usize> = weights.indices.iter().flatten().copied().collect();
    let gathered = g.gather(coarse, &flat_idx)?;
    let tile: Vec<T> = weights
        .weights
        .iter()
        .flatten()
        .flat_map(|&w| std::iter::repeat(T::of(w)).take(c))
        .collect();
    let w_tile = g.constant(Tensor::new(vec![q * 3, c], tile)?);
    let weighted = g.mul(gathered, w_tile)?;
    let stacked = g.reshape(weighted, vec![q, 3, c])?;
    g.sum_axis(stacked, 1)
}

/// `in_features` counts the interpolated width plus any skip width.
pub fn fp_register<T: Real>(
    init: &mut ParamInit<'_, T>,
    prefix: &str,
    in_features: usize,
    widths: &[usize],
) {
    mlp_register(init, prefix, in_features, widths);
}

/// One decoder level: optional skip concat, then the level MLP. The caller
/// interpolates (or broadcasts) `features` to the level's resolution
/// first, so this stays resolution-agnostic.
pub fn fp_forward<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    prefix: &str,
    features: Var,
    skip: Option<Var>,
    widths: &[usize],
) -> Result<Var> {
    let x = match skip {
        Some(s) => g.concat(features, s)?,
        None => features,
    };
    mlp_forward(g, lease, prefix, x, widths.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{interpolate_weights, PointCloud};
    use crate::layers::testutil::{random_cloud, random_tensor};
    use crate::params::{ParamInit, ParamStore};
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    #[test]
    fn broadcast_copies_the_row_and_sums_gradients() {
        let mut g = Graph::<f64>::new();
        let x = g.leaf(
            Tensor::new(vec![1, 3], vec![1.0, 2.0, 3.0]).unwrap().with_grad(),
        );
        let y = broadcast_rows(&mut g, x, 4).unwrap();
        assert_eq!(g.shape(y), &[4, 3]);
        assert_eq!(&g.values(y)[..3], &[1.0, 2.0, 3.0]);
        let loss = g.sum(y);
        g.backward(loss).unwrap();
        assert_eq!(g.grad(x).unwrap(), &[4.0, 4.0, 4.0]);
    }

    #[test]
    fn uniform_coarse_features_interpolate_unchanged() {
        let coarse = random_cloud(6, 1);
        let fine = random_cloud(20, 2);
        let w = interpolate_weights(&coarse, &fine).unwrap();
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::new(vec![6, 2], vec![3.5; 12]).unwrap());
        let out = interp_apply(&mut g, &w, c).unwrap();
        assert_eq!(g.shape(out), &[20, 2]);
        for v in g.values(out) {
            // Convexity: weights sum to 1, so a constant field passes through.
            assert!((v - 3.5).abs() < 1e-9);
        }
    }

    #[test]
    fn coincident_fine_point_copies_its_coarse_feature() {
        let coarse = PointCloud::new(vec![
            [0.0, 0.0, 0.0],
            [1.0, 0.0, 0.0],
            [0.0, 1.0, 0.0],
        ])
        .unwrap();
        let fine = PointCloud::new(vec![[1.0, 0.0, 0.0]]).unwrap();
        let w = interpolate_weights(&coarse, &fine).unwrap();
        let mut g = Graph::<f64>::new();
        let c = g.constant(Tensor::new(vec![3, 1], vec![10.0, 20.0, 30.0]).unwrap());
        let out = interp_apply(&mut g, &w, c).unwrap();
        assert!((g.values(out)[0] - 20.0).abs() < 1e-6);
    }

    #[test]
    fn interpolation_gradient_matches_finite_differences() {
        let coarse = random_cloud(5, 3);
        let fine = random_cloud(11, 4);
        let w = interpolate_weights(&coarse, &fine).unwrap();
        let c0 = random_tensor(vec![5, 3], 5);
        let err = grad_check(
            |g, c| {
                let out = interp_apply(g, &w, c)?;
                Ok(g.sum(out))
            },
            &c0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "interpolation gradient off by {err}");
    }

    #[test]
    fn fp_level_with_skip_matches_finite_differences() {
        let mut store = ParamStore::<f64>::new();
        let mut rng = ChaCha20Rng::seed_from_u64(6);
        let mut init = ParamInit::new(&mut store, &mut rng);
        fp_register(&mut init, "fp", 7, &[8, 6]);
        let skip = random_tensor(vec![9, 3], 7);
        let f0 = random_tensor(vec![9, 4], 8);
        let err = grad_check(
            |g, f| {
                let mut lease = ParamLease::new(&store);
                let s = g.constant(skip.clone());
                let out = fp_forward(g, &mut lease, "fp", f, Some(s), &[8, 6])?;
                Ok(g.sum(out))
            },
            &f0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "fp gradient off by {err}");

        let mut g = Graph::<f64>::new();
        let mut lease = ParamLease::new(&store);
        let f = g.constant(random_tensor(vec![9, 4], 9));
        let s = g.constant(skip.clone());
        let out = fp_forward(&mut g, &mut lease, "fp", f, Some(s), &[8, 6]).unwrap();
        assert_eq!(g.shape(out), &[9, 6]);
    }
}
