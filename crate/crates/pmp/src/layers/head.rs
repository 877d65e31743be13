//! Displacement head: per-point features (plus noise) to a bounded move.
//!
//! The head MLP ends in tanh scaled by the step's search radius, so step k
//! can move a point at most radius_k per coordinate. The noise column
//! block is sampled by the caller and enters as a constant, keeping this
//! layer a pure function of its inputs.

use crate::error::Result;
use crate::params::{ParamInit, ParamLease};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

use super::linear;

/// tanh saturates to exactly 1.0 in floating point for large inputs
/// (around |x| > 19 in f64, |x| > 9 in f32), which would let a saturated
/// unit touch the bound it must stay strictly inside. Scaling by this
/// margin (1 - 2^-20) keeps the strict inequality in both precisions at a
/// sub-ppm cost.
pub const TANH_MARGIN: f64 = 1.0 - 1.0 / (1 << 20) as f64;

/// Head layers `[feat+noise -> hidden[0] -> hidden[1] -> 3]`.
pub fn head_register<T: Real>(
    init: &mut ParamInit<'_, T>,
    prefix: &str,
    feat_width: usize,
    noise_dim: usize,
    hidden: &[usize],
) {
    let mut fan_in = feat_width + noise_dim;
    for (i, &w) in hidden.iter().enumerate() {
        init.linear(&format!("{prefix}.l{i}"), fan_in, w);
        fan_in = w;
    }
    init.linear(&format!("{prefix}.out"), fan_in, 3);
}

/// `noise` must be `[N, noise_dim]` when the head was registered with a
/// nonzero noise width; pass `None` for a noiseless head.
pub fn head_forward<T: Real>(
    g: &mut Graph<T>,
    lease: &mut ParamLease<'_, T>,
    prefix: &str,
    features: Var,
    noise: Option<Tensor<T>>,
    hidden_layers: usize,
    radius: f64,
) -> Result<Var> {
    let mut x = features;
    if let Some(t) = noise {
        let nv = g.constant(t);
        x = g.concat(x, nv)?;
    }
    for i in 0..hidden_layers {
        x = linear(g, lease, &format!("{prefix}.l{i}"), x)?;
        x = g.relu(x);
    }
    let pre = linear(g, lease, &format!("{prefix}.out"), x)?;
    let bounded = g.tanh(pre);
    Ok(g.scale(bounded, radius * TANH_MARGIN))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::layers::testutil::random_tensor;
    use crate::params::ParamStore;
    use crate::tensor::grad_check;
    use rand::SeedableRng;
    use rand_chacha::ChaCha20Rng;

    const N: usize = 6;
    const F: usize = 8;

    fn store(noise_dim: usize, seed: u64) -> ParamStore<f64> {
        let mut s = ParamStore::new();
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let mut init = ParamInit::new(&mut s, &mut rng);
        head_register(&mut init, "head", F, noise_dim, &[8, 4]);
        s
    }

    #[test]
    fn zero_weights_emit_zero_displacement() {
        let mut s = store(0, 1);
        for (_, t) in s.iter_mut() {
            t.values.iter_mut().for_each(|v| *v = 0.0);
        }
        let mut g = Graph::new();
        let mut lease = ParamLease::new(&s);
        let h = g.constant(random_tensor(vec![N, F], 2));
        let out = head_forward(&mut g, &mut lease, "head", h, None, 2, 1.0).unwrap();
        assert_eq!(g.shape(out), &[N, 3]);
        assert!(g.values(out).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn output_stays_strictly_inside_the_radius_even_saturated() {
        let mut s = store(0, 3);
        // Blow the last layer up so tanh saturates to exactly 1.0.
        s.get_mut("head.out.w").unwrap().values.iter_mut().for_each(|v| *v = 1e6);
        s.get_mut("head.out.b").unwrap().values.iter_mut().for_each(|v| *v = 1e6);
        for radius in [1.0, 0.1, 0.01] {
            let mut g = Graph::new();
            let mut lease = ParamLease::new(&s);
            let h = g.constant(random_tensor(vec![N, F], 4));
            let out = head_forward(&mut g, &mut lease, "head", h, None, 2, radius).unwrap();
            for &v in g.values(out) {
                assert!(v.abs() < radius, "|{v}| must stay strictly below {radius}");
            }
        }
    }

    #[test]
    fn noise_changes_the_output() {
        let s = store(4, 5);
        let h0 = random_tensor(vec![N, F], 6);
        let run = |seed: u64| {
            let mut g = Graph::new();
            let mut lease = ParamLease::new(&s);
            let h = g.constant(h0.clone());
            let noise = random_tensor(vec![N, 4], seed);
            let out = head_forward(&mut g, &mut lease, "head", h, Some(noise), 2, 1.0).unwrap();
            g.values(out).to_vec()
        };
        assert_ne!(run(7), run(8));
        assert_eq!(run(7), run(7));
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let s = store(3, 9);
        let h0 = random_tensor(vec![N, F], 10);
        let noise = random_tensor(vec![N, 3], 11);
        let err = grad_check(
            |g, h| {
                let mut lease = ParamLease::new(&s);
                let out = head_forward(g, &mut lease, "head", h, Some(noise.clone()), 2, 0.1)?;
                Ok(g.sum(out))
            },
            &h0,
            1e-5,
        )
        .unwrap();
        assert!(err < 1e-6, "head gradient off by {err}");
    }
}
