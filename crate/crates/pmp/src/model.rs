//! The K-step deformation model: encode the current cloud, propagate
//! features back to the points through gated decoder levels, and move
//! every point by a bounded displacement. Each step re-encodes the
//! deformed cloud; only the gate states carry history between steps.
//!
//! One [`Graph`] spans all steps of a pass, so training gradients flow
//! backward through every intermediate cloud. Geometry decisions (FPS,
//! ball query, kNN, interpolation weights) are recomputed per step from
//! materialized coordinates and enter the graph as constants.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interpolate_weights, PointCloud};
use crate::layers::{
    broadcast_rows, fp_forward, fp_register, gate_forward, gate_register, gate_zero_state,
    head_forward, head_register, interp_apply, sa_forward, sa_global_forward, sa_global_register,
    sa_register, transformer_forward, transformer_register, EncoderConfig, FpConfig,
    GateVariant, SaLevelConfig, TransformerConfig,
};
use crate::params::{ParamInit, ParamLease, ParamStore};
use crate::real::Real;
use crate::tensor::{Graph, Tensor, Var};

fn default_dense_repeats() -> usize {
    4
}

/// Everything that defines a model instance. Channel widths everywhere are
/// the paper-scale widths times `channel_scale`; geometry (point counts,
/// neighborhood sizes) is explicit because it must track the input size.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    /// Expected input cloud size.
    pub n_points: usize,
    /// Deformation steps K.
    pub steps: usize,
    /// Per-step displacement bound; non-increasing, one entry per step.
    pub radius_schedule: Vec<f64>,
    pub gate: GateVariant,
    /// Width of the per-step head noise.
    pub noise_dim: usize,
    pub noise_stddev: f64,
    pub channel_scale: f64,
    /// Default pass count for dense completion.
    #[serde(default = "default_dense_repeats")]
    pub dense_repeats: usize,
    /// Parameter initialization seed.
    pub seed: u64,
    pub l1_points: usize,
    pub l2_points: usize,
    pub l1_radius: f64,
    pub l2_radius: f64,
    pub nsample: usize,
    pub transformer_k: usize,
}

impl ModelConfig {
    /// Full-scale settings: 2048-point clouds, unscaled channels.
    pub fn paper() -> ModelConfig {
        ModelConfig {
            n_points: 2048,
            steps: 3,
            radius_schedule: vec![1.0, 0.1, 0.01],
            gate: GateVariant::Rpa,
            noise_dim: 32,
            noise_stddev: 1.0,
            channel_scale: 1.0,
            dense_repeats: 8,
            seed: 0,
            l1_points: 512,
            l2_points: 128,
            l1_radius: 0.2,
            l2_radius: 0.4,
            nsample: 32,
            transformer_k: 16,
        }
    }

    /// Desk-scale settings: quarter channels, 256-point clouds, wider
    /// search radii so the sparse neighborhoods stay populated.
    pub fn toy() -> ModelConfig {
        ModelConfig {
            n_points: 256,
            steps: 3,
            radius_schedule: vec![1.0, 0.1, 0.01],
            gate: GateVariant::Rpa,
            noise_dim: 8,
            noise_stddev: 1.0,
            channel_scale: 0.25,
            dense_repeats: 4,
            seed: 0,
            l1_points: 32,
            l2_points: 4,
            l1_radius: 0.4,
            l2_radius: 0.8,
            nsample: 8,
            transformer_k: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 {
            return Err(Error::argument("steps must be at least 1"));
        }
        if self.radius_schedule.len() != self.steps {
            return Err(Error::argument(format!(
                "radius_schedule has {} entries for {} steps",
                self.radius_schedule.len(),
                self.steps
            )));
        }
        if self.radius_schedule.iter().any(|&r| !(r > 0.0)) {
            return Err(Error::argument("radius_schedule entries must be positive"));
        }
        if self.radius_schedule.windows(2).any(|w| w[1] > w[0]) {
            return Err(Error::argument("radius_schedule must be non-increasing"));
        }
        if self.l2_points < 3 || self.l1_points < 3 {
            return Err(Error::argument("levels need at least 3 points to interpolate from"));
        }
        if self.l1_points > self.n_points || self.l2_points > self.l1_points {
            return Err(Error::argument(
                "point counts must satisfy n_points >= l1_points >= l2_points",
            ));
        }
        if self.nsample == 0 || self.transformer_k == 0 {
            return Err(Error::argument("neighborhood sizes must be positive"));
        }
        if !(self.channel_scale > 0.0) {
            return Err(Error::argument("channel_scale must be positive"));
        }
        if !(self.l1_radius > 0.0 && self.l2_radius > 0.0) {
            return Err(Error::argument("search radii must be positive"));
        }
        if self.noise_stddev < 0.0 {
            return Err(Error::argument("noise_stddev must be nonnegative"));
        }
        Ok(())
    }

    pub fn scaled(&self, c: usize) -> usize {
        ((c as f64 * self.channel_scale).round() as usize).max(1)
    }

    fn scaled_all(&self, cs: &[usize]) -> Vec<usize> {
        cs.iter().map(|&c| self.scaled(c)).collect()
    }

    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            l1: SaLevelConfig {
                points_out: self.l1_points,
                radius: self.l1_radius,
                nsample: self.nsample,
                mlp: self.scaled_all(&[64, 64, 128]),
            },
            l2: SaLevelConfig {
                points_out: self.l2_points,
                radius: self.l2_radius,
                nsample: self.nsample,
                mlp: self.scaled_all(&[128, 128, 256]),
            },
            global_mlp: self.scaled_all(&[256, 512, 1024]),
        }
    }

    pub fn transformer_config(&self) -> TransformerConfig {
        TransformerConfig {
            neighborhood_k: self.transformer_k,
            attention_hidden: self.scaled(64),
            pos_mlp_hidden: self.scaled(64),
        }
    }

    pub fn fp_config(&self) -> FpConfig {
        FpConfig {
            mlp1: self.scaled_all(&[256, 256]),
            mlp2: self.scaled_all(&[256, 128]),
            mlp3: self.scaled_all(&[128, 128, 128]),
        }
    }

    pub fn head_hidden(&self) -> Vec<usize> {
        self.scaled_all(&[128, 64])
    }
}

/// Width of the dense-mode input noise, always part of the architecture;
/// plain completion feeds zeros through the same channels.
pub const INPUT_NOISE_DIM: usize = 3;

/// Creates and seeds every parameter of the model. Registration order is
/// fixed, so the store is a pure function of the config.
pub fn register_model<T: Real>(cfg: &ModelConfig) -> Result<ParamStore<T>> {
    cfg.validate()?;
    let enc = cfg.encoder_config();
    let tr = cfg.transformer_config();
    let fp = cfg.fp_config();
    let c1 = *enc.l1.mlp.last().unwrap();
    let c2 = *enc.l2.mlp.last().unwrap();
    let c3 = *enc.global_mlp.last().unwrap();
    let f1 = *fp.mlp1.last().unwrap();
    let f2 = *fp.mlp2.last().unwrap();
    let f3 = *fp.mlp3.last().unwrap();

    let mut store = ParamStore::new();
    let mut rng = ChaCha20Rng::seed_from_u64(cfg.seed);
    let mut init = ParamInit::new(&mut store, &mut rng);

    sa_register(&mut init, "enc.sa1", INPUT_NOISE_DIM, &enc.l1);
    transformer_register(&mut init, "enc.tr1", c1, &tr);
    sa_register(&mut init, "enc.sa2", c1, &enc.l2);
    transformer_register(&mut init, "enc.tr2", c2, &tr);
    sa_global_register(&mut init, "enc.sa3", c2, &enc.global_mlp);

    gate_register(&mut init, "dec.rpa1", cfg.gate, c3);
    fp_register(&mut init, "dec.fp1", c3 + c2, &fp.mlp1);
    gate_register(&mut init, "dec.rpa2", cfg.gate, f1);
    fp_register(&mut init, "dec.fp2", f1 + c1, &fp.mlp2);
    gate_register(&mut init, "dec.rpa3", cfg.gate, f2);
    fp_register(&mut init, "dec.fp3", f2 + 3 + INPUT_NOISE_DIM, &fp.mlp3);

    let hidden = cfg.head_hidden();
    for k in 1..=cfg.steps {
        head_register(&mut init, &format!("head.k{k}"), f3, cfg.noise_dim, &hidden);
    }
    Ok(store)
}

/// A full K-step pass still attached to its graph, for training: per-step
/// cloud and displacement nodes plus the parameter lease for gradient
/// collection.
pub struct ForwardPass<'p, T: Real> {
    pub graph: Graph<T>,
    pub lease: ParamLease<'p, T>,
    /// Cloud after each step, `[N, 3]` each.
    pub step_clouds: Vec<Var>,
    /// Displacement emitted by each step, `[N, 3]` each.
    pub displacements: Vec<Var>,
}

fn cloud_of_values<T: Real>(values: &[T]) -> Result<PointCloud> {
    PointCloud::new(
        values
            .chunks_exact(3)
            .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
            .collect(),
    )
}

fn sample_noise<T: Real>(
    rng: &mut ChaCha20Rng,
    rows: usize,
    cols: usize,
    stddev: f64,
) -> Result<Tensor<T>> {
    if stddev == 0.0 {
        return Ok(Tensor::zeros(vec![rows, cols]));
    }
    let normal = Normal::new(0.0, stddev)
        .map_err(|e| Error::argument(format!("bad noise stddev: {e}")))?;
    let values = (0..rows * cols).map(|_| T::of(normal.sample(rng))).collect();
    Tensor::new(vec![rows, cols], values)
}

/// Runs the K-step deformation in one graph. `input_noise` is the dense-
/// mode `[N, 3]` concatenation; `None` feeds zeros through the same
/// channels. The RNG drives only the per-step head noise.
pub fn forward_pass<'p, T: Real>(
    input: &PointCloud,
    params: &'p ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut ChaCha20Rng,
    input_noise: Option<Tensor<T>>,
) -> Result<ForwardPass<'p, T>> {
    cfg.validate()?;
    if input.len() != cfg.n_points {
        return Err(Error::argument(format!(
            "input has {} points, model expects {}",
            input.len(),
            cfg.n_points
        )));
    }
    let n = input.len();
    let enc = cfg.encoder_config();
    let tr = cfg.transformer_config();
    let fp = cfg.fp_config();

    let mut g = Graph::new();
    let mut lease = ParamLease::new(params);

    let noise_t = match input_noise {
        Some(t) => {
            if t.shape != [n, INPUT_NOISE_DIM] {
                return Err(Error::dim(format!(
                    "input noise must be [{n}, {INPUT_NOISE_DIM}], got {:?}",
                    t.shape
                )));
            }
            t
        }
        None => Tensor::zeros(vec![n, INPUT_NOISE_DIM]),
    };
    let input_noise_var = g.constant(noise_t);

    let flat: Vec<T> = input.flat().into_iter().map(T::of).collect();
    let mut coords = g.constant(Tensor::new(vec![n, 3], flat)?);
    let mut cloud = cloud_of_values(g.values(coords))?;

    let c3 = *enc.global_mlp.last().unwrap();
    let f1 = *fp.mlp1.last().unwrap();
    let f2 = *fp.mlp2.last().unwrap();
    let mut state1 = gate_zero_state(&mut g, cfg.gate, cfg.l2_points, c3);
    let mut state2 = gate_zero_state(&mut g, cfg.gate, cfg.l2_points, f1);
    let mut state3 = gate_zero_state(&mut g, cfg.gate, cfg.l1_points, f2);

    let mut step_clouds = Vec::with_capacity(cfg.steps);
    let mut displacements = Vec::with_capacity(cfg.steps);

    for k in 1..=cfg.steps {
        // Encoder on the current cloud; geometry is fixed, features flow.
        let sa1 = sa_forward(&mut g, &mut lease, "enc.sa1", &cloud, coords, Some(input_noise_var), &enc.l1)?;
        let t1 = transformer_forward(&mut g, &mut lease, "enc.tr1", &sa1.cloud, sa1.coords, sa1.features, &tr)?;
        let sa2 = sa_forward(&mut g, &mut lease, "enc.sa2", &sa1.cloud, sa1.coords, Some(t1), &enc.l2)?;
        let t2 = transformer_forward(&mut g, &mut lease, "enc.tr2", &sa2.cloud, sa2.coords, sa2.features, &tr)?;
        let global = sa_global_forward(&mut g, &mut lease, "enc.sa3", sa2.coords, t2, &enc.global_mlp)?;

        // Decoder: gate, then the level's concat+MLP; interpolate between
        // levels. Gate states age by one step each pass through.
        let f0 = broadcast_rows(&mut g, global, cfg.l2_points)?;
        let (h1, s1) = gate_forward(&mut g, &mut lease, "dec.rpa1", cfg.gate, f0, state1)?;
        state1 = s1;
        let d1 = fp_forward(&mut g, &mut lease, "dec.fp1", h1, Some(t2), &fp.mlp1)?;

        let (h2, s2) = gate_forward(&mut g, &mut lease, "dec.rpa2", cfg.gate, d1, state2)?;
        state2 = s2;
        let w21 = interpolate_weights(&sa2.cloud, &sa1.cloud)?;
        let up1 = interp_apply(&mut g, &w21, h2)?;
        let d2 = fp_forward(&mut g, &mut lease, "dec.fp2", up1, Some(t1), &fp.mlp2)?;

        let (h3, s3) = gate_forward(&mut g, &mut lease, "dec.rpa3", cfg.gate, d2, state3)?;
        state3 = s3;
        let w10 = interpolate_weights(&sa1.cloud, &cloud)?;
        let up2 = interp_apply(&mut g, &w10, h3)?;
        let skip0 = g.concat(coords, input_noise_var)?;
        let d3 = fp_forward(&mut g, &mut lease, "dec.fp3", up2, Some(skip0), &fp.mlp3)?;

        let head_noise = if cfg.noise_dim > 0 {
            Some(sample_noise::<T>(rng, n, cfg.noise_dim, cfg.noise_stddev)?)
        } else {
            None
        };
        let radius = cfg.radius_schedule[k - 1];
        let disp = head_forward(&mut g, &mut lease, &format!("head.k{k}"), d3, head_noise, 2, radius)?;

        coords = g.add(coords, disp)?;
        cloud = cloud_of_values(g.values(coords))?;
        step_clouds.push(coords);
        displacements.push(disp);
    }

    Ok(ForwardPass { graph: g, lease, step_clouds, displacements })
}

/// The full record of one deformation: where every point started, how far
/// each step moved it, and the cloud after each step.
#[derive(Debug, Clone, PartialEq)]
pub struct PathTrace {
    pub initial: PointCloud,
    /// Per step, per point displacement vectors.
    pub displacements: Vec<Vec<[f64; 3]>>,
    /// Cloud after each step; the last entry is the completion.
    pub intermediates: Vec<PointCloud>,
}

impl PathTrace {
    pub fn final_cloud(&self) -> &PointCloud {
        self.intermediates.last().unwrap_or(&self.initial)
    }

    /// Total path length across all steps and points.
    pub fn pmd(&self) -> f64 {
        crate::losses::pmd(&self.displacements)
    }

    /// Checks additivity (exact) and the per-step displacement bound
    /// (strict) against a schedule.
    pub fn validate(&self, radius_schedule: &[f64]) -> Result<()> {
        if self.displacements.len() != self.intermediates.len() {
            return Err(Error::contract("trace step counts disagree"));
        }
        let mut expect = self.initial.points.clone();
        for (k, (disp, cloud)) in
            self.displacements.iter().zip(&self.intermediates).enumerate()
        {
            let radius = radius_schedule
                .get(k)
                .copied()
                .ok_or_else(|| Error::contract("schedule shorter than trace"))?;
            for (i, d) in disp.iter().enumerate() {
                for a in 0..3 {
                    if !(d[a].abs() < radius) {
                        return Err(Error::contract(format!(
                            "step {} point {i} axis {a} moved {} against bound {radius}",
                            k + 1,
                            d[a]
                        )));
                    }
                    expect[i][a] += d[a];
                }
            }
            if expect != cloud.points {
                return Err(Error::contract(format!(
                    "step {} cloud is not the exact running sum of displacements",
                    k + 1
                )));
            }
        }
        Ok(())
    }
}

/// One deterministic completion pass; see [`forward_pass`] for the
/// training-facing variant that keeps the graph.
pub fn multi_step_forward<T: Real>(
    input: &PointCloud,
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut ChaCha20Rng,
    input_noise: Option<Tensor<T>>,
) -> Result<PathTrace> {
    let pass = forward_pass(input, params, cfg, rng, input_noise)?;
    let g = &pass.graph;
    let displacements: Vec<Vec<[f64; 3]>> = pass
        .displacements
        .iter()
        .map(|&v| {
            g.values(v)
                .chunks_exact(3)
                .map(|c| [c[0].as_f64(), c[1].as_f64(), c[2].as_f64()])
                .collect()
        })
        .collect();
    // The trace's clouds are the literal running sums of its recorded
    // displacements, so additivity holds exactly in every precision.
    let mut running = input.points.clone();
    let mut intermediates = Vec::with_capacity(displacements.len());
    for disp in &displacements {
        for (p, d) in running.iter_mut().zip(disp) {
            for a in 0..3 {
                p[a] += d[a];
            }
        }
        intermediates.push(PointCloud::new(running.clone())?);
    }
    Ok(PathTrace { initial: input.clone(), displacements, intermediates })
}

/// Repeats the deformation `repeats` times with fresh standard-normal
/// input noise and overlaps the outputs pass-major: `repeats * n` points.
pub fn dense_complete<T: Real>(
    input: &PointCloud,
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    repeats: usize,
    rng: &mut ChaCha20Rng,
) -> Result<PointCloud> {
    if repeats == 0 {
        return Err(Error::argument("dense completion needs at least one pass"));
    }
    let pass_seeds: Vec<u64> = (0..repeats).map(|_| rng.gen()).collect();
    let mut points = Vec::with_capacity(repeats * input.len());
    for seed in pass_seeds {
        let mut pass_rng = ChaCha20Rng::seed_from_u64(seed);
        let noise = sample_noise::<T>(&mut pass_rng, input.len(), INPUT_NOISE_DIM, 1.0)?;
        let trace = multi_step_forward(input, params, cfg, &mut pass_rng, Some(noise))?;
        points.extend_from_slice(&trace.final_cloud().points);
    }
    PointCloud::new(points)
}

/// Dense completion sized to an exact output count, which must be a
/// multiple of the input count.
pub fn upsample<T: Real>(
    input: &PointCloud,
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    target_count: usize,
    rng: &mut ChaCha20Rng,
) -> Result<PointCloud> {
    if input.is_empty() || target_count == 0 || target_count % input.len() != 0 {
        return Err(Error::argument(format!(
            "target count {target_count} is not a positive multiple of the input count {}",
            input.len()
        )));
    }
    dense_complete(input, params, cfg, target_count / input.len(), rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate, ShapeKind, ShapeSpec};

    fn tiny_cfg() -> ModelConfig {
        // Small enough for fast tests, wide enough to exercise every path.
        ModelConfig {
            n_points: 24,
            l1_points: 8,
            l2_points: 4,
            nsample: 4,
            transformer_k: 4,
            noise_dim: 4,
            ..ModelConfig::toy()
        }
    }

    fn sphere(n: usize, seed: u64) -> PointCloud {
        let cloud = generate(&ShapeSpec {
            kind: ShapeKind::Sphere { radius: 0.9 },
            n_points: n,
            seed,
        })
        .unwrap();
        cloud
    }

    #[test]
    fn forward_emits_a_valid_bounded_trace() {
        let cfg = tiny_cfg();
        let params = register_model::<f64>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 1);
        let mut rng = ChaCha20Rng::seed_from_u64(7);
        let trace = multi_step_forward(&input, &params, &cfg, &mut rng, None).unwrap();
        assert_eq!(trace.displacements.len(), 3);
        assert_eq!(trace.intermediates.len(), 3);
        trace.validate(&cfg.radius_schedule).unwrap();
    }

    #[test]
    fn forward_is_deterministic_per_seed() {
        let cfg = tiny_cfg();
        let params = register_model::<f64>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 2);
        let run = |seed: u64| {
            let mut rng = ChaCha20Rng::seed_from_u64(seed);
            multi_step_forward(&input, &params, &cfg, &mut rng, None).unwrap()
        };
        assert_eq!(run(5), run(5));
        assert_ne!(run(5).final_cloud().points, run(6).final_cloud().points);
    }

    #[test]
    fn zero_heads_leave_the_cloud_in_place() {
        let cfg = tiny_cfg();
        let mut params = register_model::<f64>(&cfg).unwrap();
        let names: Vec<String> =
            params.names().filter(|n| n.starts_with("head.")).map(String::from).collect();
        for name in names {
            params.get_mut(&name).unwrap().values.iter_mut().for_each(|v| *v = 0.0);
        }
        let input = sphere(cfg.n_points, 3);
        let mut rng = ChaCha20Rng::seed_from_u64(9);
        let trace = multi_step_forward(&input, &params, &cfg, &mut rng, None).unwrap();
        for cloud in &trace.intermediates {
            assert_eq!(cloud.points, input.points);
        }
        assert_eq!(trace.pmd(), 0.0);
    }

    #[test]
    fn wrong_point_count_is_an_argument_error() {
        let cfg = tiny_cfg();
        let params = register_model::<f64>(&cfg).unwrap();
        let input = sphere(cfg.n_points + 1, 4);
        let mut rng = ChaCha20Rng::seed_from_u64(0);
        assert!(matches!(
            multi_step_forward(&input, &params, &cfg, &mut rng, None),
            Err(crate::Error::Argument(_))
        ));
    }

    #[test]
    fn bad_schedules_are_rejected() {
        let mut cfg = tiny_cfg();
        cfg.radius_schedule = vec![1.0, 0.1];
        assert!(cfg.validate().is_err());
        cfg.radius_schedule = vec![0.1, 1.0, 0.1];
        assert!(cfg.validate().is_err());
        cfg.radius_schedule = vec![1.0, 0.1, 0.0];
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn dense_multiplies_the_point_count_and_passes_differ() {
        let cfg = tiny_cfg();
        let params = register_model::<f64>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 5);
        let mut rng = ChaCha20Rng::seed_from_u64(11);
        let dense = dense_complete(&input, &params, &cfg, 4, &mut rng).unwrap();
        assert_eq!(dense.len(), 4 * cfg.n_points);
        let n = cfg.n_points;
        let first: Vec<_> = dense.points[..n].to_vec();
        let second: Vec<_> = dense.points[n..2 * n].to_vec();
        assert_ne!(first, second, "noise should separate the passes");
    }

    #[test]
    fn upsample_checks_the_multiple() {
        let cfg = tiny_cfg();
        let params = register_model::<f64>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 6);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        let up = upsample(&input, &params, &cfg, 2 * cfg.n_points, &mut rng).unwrap();
        assert_eq!(up.len(), 2 * cfg.n_points);
        let mut rng = ChaCha20Rng::seed_from_u64(12);
        assert!(upsample(&input, &params, &cfg, 2 * cfg.n_points + 1, &mut rng).is_err());
    }

    #[test]
    fn zero_input_noise_matches_the_plain_forward() {
        let cfg = tiny_cfg();
        let params = register_model::<f64>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 7);
        let zeros = Tensor::zeros(vec![cfg.n_points, INPUT_NOISE_DIM]);
        let mut r1 = ChaCha20Rng::seed_from_u64(3);
        let mut r2 = ChaCha20Rng::seed_from_u64(3);
        let a = multi_step_forward(&input, &params, &cfg, &mut r1, None).unwrap();
        let b = multi_step_forward(&input, &params, &cfg, &mut r2, Some(zeros)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn gradients_reach_every_parameter() {
        let cfg = tiny_cfg();
        let params = register_model::<f64>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 8);
        let mut rng = ChaCha20Rng::seed_from_u64(21);
        let mut pass = forward_pass(&input, &params, &cfg, &mut rng, None).unwrap();
        let total = {
            let g = &mut pass.graph;
            let mut acc = g.sum(pass.step_clouds[0]);
            for &v in &pass.step_clouds[1..] {
                let s = g.sum(v);
                acc = g.add(acc, s).unwrap();
            }
            acc
        };
        pass.graph.backward(total).unwrap();
        let grads =
            crate::params::GradStore::collect(&pass.graph, &pass.lease).unwrap();
        // Every registered parameter should have been leased and touched.
        for name in params.names() {
            let g = grads.get(name).unwrap();
            assert!(!g.is_empty(), "parameter {name} saw no gradient");
        }
    }

    #[test]
    #[ignore = "diagnostic: prints per-item training cost at toy scale"]
    fn timing_toy_training_step() {
        let cfg = ModelConfig::toy();
        let params = register_model::<f32>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 40);
        let target = sphere(cfg.n_points, 41);
        let mut rng = ChaCha20Rng::seed_from_u64(1);
        let start = std::time::Instant::now();
        let reps = 10;
        let mut t_fwd = 0.0;
        let mut t_loss = 0.0;
        let mut t_bwd = 0.0;
        let mut t_col = 0.0;
        for _ in 0..reps {
            let t0 = std::time::Instant::now();
            let mut pass = forward_pass(&input, &params, &cfg, &mut rng, None).unwrap();
            let t1 = std::time::Instant::now();
            let mut total = None;
            for &v in &pass.step_clouds {
                let t = g_target(&mut pass.graph, &target);
                let cd = crate::losses::chamfer_loss(
                    &mut pass.graph,
                    v,
                    t,
                    crate::losses::ChamferMode::L2,
                )
                .unwrap();
                total = Some(match total {
                    None => cd,
                    Some(acc) => pass.graph.add(acc, cd).unwrap(),
                });
            }
            let t2 = std::time::Instant::now();
            pass.graph.backward(total.unwrap()).unwrap();
            let t3 = std::time::Instant::now();
            crate::params::GradStore::collect(&pass.graph, &pass.lease).unwrap();
            let t4 = std::time::Instant::now();
            t_fwd += (t1 - t0).as_secs_f64();
            t_loss += (t2 - t1).as_secs_f64();
            t_bwd += (t3 - t2).as_secs_f64();
            t_col += (t4 - t3).as_secs_f64();
        }
        let r = reps as f64;
        println!(
            "toy step: {:.1} ms/item (fwd {:.1} loss {:.1} bwd {:.1} col {:.1})",
            start.elapsed().as_secs_f64() * 1e3 / r,
            t_fwd * 1e3 / r,
            t_loss * 1e3 / r,
            t_bwd * 1e3 / r,
            t_col * 1e3 / r
        );
    }

    fn g_target(g: &mut Graph<f32>, cloud: &PointCloud) -> Var {
        let flat: Vec<f32> = cloud.flat().into_iter().map(|v| v as f32).collect();
        g.constant(Tensor::new(vec![cloud.len(), 3], flat).unwrap())
    }

    #[test]
    fn f32_forward_runs_and_respects_bounds() {
        let cfg = tiny_cfg();
        let params = register_model::<f32>(&cfg).unwrap();
        let input = sphere(cfg.n_points, 9);
        let mut rng = ChaCha20Rng::seed_from_u64(13);
        let trace = multi_step_forward(&input, &params, &cfg, &mut rng, None).unwrap();
        for (k, disp) in trace.displacements.iter().enumerate() {
            let r = cfg.radius_schedule[k];
            for d in disp {
                for a in 0..3 {
                    assert!(d[a].abs() < r);
                }
            }
        }
    }
}
