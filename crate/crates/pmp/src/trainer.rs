//! Adam training loop, binary checkpoints, and held-out evaluation.
//!
//! Training is single-threaded and fully seeded: the shuffle order is a
//! function of (seed, epoch) and each item's noise stream is a function of
//! (seed, epoch, item index), so runs reproduce bit-for-bit and a resumed
//! run continues exactly where the checkpoint left off.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use crate::data::{read_cloud, read_manifest, Split};
use crate::error::{Error, Result};
use crate::geometry::PointCloud;
use crate::losses::{self, chamfer_loss, emd_loss, pmd_term, ChamferMode, EmdSolver};
use crate::model::{forward_pass, multi_step_forward, register_model, ModelConfig};
use crate::params::{GradStore, ParamStore};
use crate::real::Real;
use crate::seed;
use crate::tensor::Tensor;

pub const ADAM_BETA1: f64 = 0.9;
pub const ADAM_BETA2: f64 = 0.999;
pub const ADAM_EPS: f64 = 1e-8;

/// Learning rate halves every this many epochs.
pub const LR_DECAY_EPOCHS: usize = 20;
pub const LR_DECAY: f64 = 0.5;

/// Knobs of one training run. Deserialization rejects unknown keys so a
/// typo in a config file fails loudly instead of silently using a default.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lr0: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub seed: u64,
    /// Weight on the total path length added to the per-step Chamfer sum.
    pub pmd_weight: f64,
    /// Weight on an EMD term against the final cloud; off by default.
    pub emd_weight: f64,
    /// Run held-out evaluation every this many epochs; 0 disables.
    pub eval_every: usize,
    /// Clip the global gradient norm to this value when set.
    pub grad_clip: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr0: 1e-3,
            epochs: 300,
            batch_size: 8,
            seed: 0,
            pmd_weight: 1.0,
            emd_weight: 0.0,
            eval_every: 0,
            grad_clip: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr0.is_finite() && self.lr0 > 0.0) {
            return Err(Error::argument(format!("lr0 must be positive, got {}", self.lr0)));
        }
        if self.batch_size == 0 {
            return Err(Error::argument("batch_size must be at least 1"));
        }
        for (name, w) in [("pmd_weight", self.pmd_weight), ("emd_weight", self.emd_weight)] {
            if !(w.is_finite() && w >= 0.0) {
                return Err(Error::argument(format!("{name} must be finite and >= 0, got {w}")));
            }
        }
        if let Some(c) = self.grad_clip {
            if !(c.is_finite() && c > 0.0) {
                return Err(Error::argument(format!("grad_clip must be positive, got {c}")));
            }
        }
        Ok(())
    }

    /// Step-decayed learning rate: `lr0 * 0.5^(epoch / 20)`, integer division.
    pub fn lr_at(&self, epoch: usize) -> f64 {
        self.lr0 * LR_DECAY.powi((epoch / LR_DECAY_EPOCHS) as i32)
    }
}

/// First and second Adam moments for every parameter, plus the shared step
/// counter. Moments live in the model's own scalar type so that f32
/// checkpoints round-trip without drift.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState<T: Real> {
    pub t: u64,
    m: BTreeMap<String, Vec<T>>,
    v: BTreeMap<String, Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Fresh zeroed state shaped like `params`.
    pub fn zeros(params: &ParamStore<T>) -> Self {
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, tensor) in params.iter() {
            m.insert(name.to_string(), vec![T::zero(); tensor.numel()]);
            v.insert(name.to_string(), vec![T::zero(); tensor.numel()]);
        }
        AdamState { t: 0, m, v }
    }

    pub fn moments(&self, name: &str) -> Option<(&[T], &[T])> {
        Some((self.m.get(name)?.as_slice(), self.v.get(name)?.as_slice()))
    }
}

/// One Adam update over every parameter in the store.
///
/// Requires a gradient for every parameter; a missing one is a contract
/// error naming the tensor. A zero gradient leaves its parameter exactly
/// unchanged because both moments stay zero.
pub fn adam_step<T: Real>(
    params: &mut ParamStore<T>,
    grads: &GradStore<T>,
    state: &mut AdamState<T>,
    lr: f64,
) -> Result<()> {
    state.t += 1;
    let t = state.t as i32;
    let bc1 = T::of(1.0 - ADAM_BETA1.powi(t));
    let bc2 = T::of(1.0 - ADAM_BETA2.powi(t));
    let b1 = T::of(ADAM_BETA1);
    let b2 = T::of(ADAM_BETA2);
    let one = T::one();
    let eps = T::of(ADAM_EPS);
    let lr = T::of(lr);
    for (name, tensor) in params.iter_mut() {
        let g = grads.get(name)?;
        let m = state
            .m
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("optimizer state missing {name:?}")))?;
        let v = state
            .v
            .get_mut(name)
            .ok_or_else(|| Error::contract(format!("optimizer state missing {name:?}")))?;
        if g.len() != tensor.numel() || m.len() != tensor.numel() {
            return Err(Error::contract(format!(
                "size mismatch updating {name:?}: {} values, {} grads, {} moments",
                tensor.numel(),
                g.len(),
                m.len()
            )));
        }
        for i in 0..g.len() {
            m[i] = b1 * m[i] + (one - b1) * g[i];
            v[i] = b2 * v[i] + (one - b2) * g[i] * g[i];
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            tensor.values[i] = tensor.values[i] - lr * m_hat / (v_hat.sqrt() + eps);
        }
    }
    Ok(())
}

pub const CHECKPOINT_MAGIC: [u8; 4] = *b"PMPC";
pub const CHECKPOINT_VERSION: u32 = 1;

/// Decoded checkpoint: the model config it was trained under, the Adam
/// step counter, and every stored tensor under its prefixed name
/// (`param.*`, `m.*`, `v.*`). Values are stored as f32 on disk.
#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    pub adam_t: u64,
    pub tensors: BTreeMap<String, Tensor<f32>>,
}

impl Checkpoint {
    /// Splits the flat tensor map back into a parameter store and Adam
    /// state. Every parameter must come with both moments.
    pub fn split<T: Real>(&self) -> Result<(ParamStore<T>, AdamState<T>)> {
        let mut params = ParamStore::new();
        let mut m = BTreeMap::new();
        let mut v = BTreeMap::new();
        for (name, tensor) in &self.tensors {
            let values: Vec<T> = tensor.values.iter().map(|&x| T::of(x as f64)).collect();
            if let Some(base) = name.strip_prefix("param.") {
                params.insert(base, Tensor::new(tensor.shape.clone(), values)?);
            } else if let Some(base) = name.strip_prefix("m.") {
                m.insert(base.to_string(), values);
            } else if let Some(base) = name.strip_prefix("v.") {
                v.insert(base.to_string(), values);
            } else {
                return Err(Error::Format(format!("unexpected checkpoint tensor {name:?}")));
            }
        }
        for name in params.names() {
            if !m.contains_key(name) || !v.contains_key(name) {
                return Err(Error::Format(format!("checkpoint lacks moments for {name:?}")));
            }
        }
        if m.len() != params.len() || v.len() != params.len() {
            return Err(Error::Format("checkpoint has moments for unknown parameters".into()));
        }
        Ok((params, AdamState { t: self.adam_t, m, v }))
    }
}

fn truncated() -> Error {
    Error::Parse { line: 0, msg: "checkpoint truncated".into() }
}

fn read_bytes<R: Read>(r: &mut R, n: usize) -> Result<Vec<u8>> {
    let mut buf = vec![0u8; n];
    r.read_exact(&mut buf).map_err(|e| {
        if e.kind() == io::ErrorKind::UnexpectedEof { truncated() } else { Error::Io(e) }
    })?;
    Ok(buf)
}

fn read_u32<R: Read>(r: &mut R) -> Result<u32> {
    Ok(u32::from_le_bytes(read_bytes(r, 4)?.try_into().unwrap()))
}

/// Writes `params` and `adam` to `path` in the versioned binary layout:
/// magic, version, config JSON, step counter, then each tensor as
/// (name, dims, f32 little-endian values) in sorted name order.
pub fn save_checkpoint<T: Real>(
    path: &Path,
    cfg: &ModelConfig,
    params: &ParamStore<T>,
    adam: &AdamState<T>,
) -> Result<()> {
    let mut tensors: BTreeMap<String, (Vec<usize>, Vec<f32>)> = BTreeMap::new();
    for (name, tensor) in params.iter() {
        let vals: Vec<f32> = tensor.values.iter().map(|&x| x.as_f64() as f32).collect();
        tensors.insert(format!("param.{name}"), (tensor.shape.clone(), vals));
        let (m, v) = adam
            .moments(name)
            .ok_or_else(|| Error::contract(format!("optimizer state missing {name:?}")))?;
        let mf: Vec<f32> = m.iter().map(|&x| x.as_f64() as f32).collect();
        let vf: Vec<f32> = v.iter().map(|&x| x.as_f64() as f32).collect();
        tensors.insert(format!("m.{name}"), (tensor.shape.clone(), mf));
        tensors.insert(format!("v.{name}"), (tensor.shape.clone(), vf));
    }
    let config_json = serde_json::to_vec(cfg)
        .map_err(|e| Error::Format(format!("config serialization failed: {e}")))?;

    let mut w = BufWriter::new(File::create(path)?);
    w.write_all(&CHECKPOINT_MAGIC)?;
    w.write_all(&CHECKPOINT_VERSION.to_le_bytes())?;
    w.write_all(&(config_json.len() as u32).to_le_bytes())?;
    w.write_all(&config_json)?;
    w.write_all(&adam.t.to_le_bytes())?;
    w.write_all(&(tensors.len() as u32).to_le_bytes())?;
    for (name, (shape, values)) in &tensors {
        let name_bytes = name.as_bytes();
        if name_bytes.len() > u16::MAX as usize {
            return Err(Error::Format(format!("tensor name too long: {name:?}")));
        }
        w.write_all(&(name_bytes.len() as u16).to_le_bytes())?;
        w.write_all(name_bytes)?;
        if shape.len() > u8::MAX as usize {
            return Err(Error::Format(format!("tensor rank too high: {name:?}")));
        }
        w.write_all(&[shape.len() as u8])?;
        for &d in shape {
            w.write_all(&(d as u32).to_le_bytes())?;
        }
        for &x in values {
            w.write_all(&x.to_le_bytes())?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<Checkpoint> {
    let mut r = BufReader::new(File::open(path)?);
    let magic = read_bytes(&mut r, 4)?;
    if magic != CHECKPOINT_MAGIC {
        return Err(Error::Format(format!("not a checkpoint: bad magic {magic:02x?}")));
    }
    let version = read_u32(&mut r)?;
    if version != CHECKPOINT_VERSION {
        return Err(Error::Format(format!(
            "unsupported checkpoint version {version}, expected {CHECKPOINT_VERSION}"
        )));
    }
    let config_len = read_u32(&mut r)? as usize;
    let config_json = read_bytes(&mut r, config_len)?;
    let config: ModelConfig = serde_json::from_slice(&config_json)
        .map_err(|e| Error::Format(format!("bad checkpoint config: {e}")))?;
    let adam_t = u64::from_le_bytes(read_bytes(&mut r, 8)?.try_into().unwrap());
    let count = read_u32(&mut r)? as usize;
    let mut tensors = BTreeMap::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(read_bytes(&mut r, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(read_bytes(&mut r, name_len)?)
            .map_err(|e| Error::Format(format!("bad tensor name: {e}")))?;
        let ndim = read_bytes(&mut r, 1)?[0] as usize;
        let mut shape = Vec::with_capacity(ndim);
        for _ in 0..ndim {
            shape.push(read_u32(&mut r)? as usize);
        }
        let numel: usize = shape.iter().product();
        let raw = read_bytes(&mut r, numel * 4)?;
        let values: Vec<f32> =
            raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect();
        tensors.insert(name, Tensor::new(shape, values)?);
    }
    Ok(Checkpoint { config, adam_t, tensors })
}

/// One (partial, complete) training pair.
#[derive(Debug, Clone)]
pub struct TrainItem {
    pub label: String,
    pub partial: PointCloud,
    pub complete: PointCloud,
}

/// Loads every manifest entry of the given split (or all of them), reading
/// cloud files relative to the manifest's directory.
pub fn load_items(manifest_path: &Path, split: Option<Split>) -> Result<Vec<TrainItem>> {
    let entries = read_manifest(manifest_path)?;
    let dir = manifest_path.parent().unwrap_or_else(|| Path::new("."));
    let mut items = Vec::new();
    for entry in entries {
        if let Some(want) = split {
            if entry.split != want {
                continue;
            }
        }
        let label = entry
            .partial_path
            .trim_end_matches(".xyz")
            .trim_end_matches("_partial")
            .to_string();
        items.push(TrainItem {
            label,
            partial: read_cloud(&dir.join(&entry.partial_path))?,
            complete: read_cloud(&dir.join(&entry.complete_path))?,
        });
    }
    Ok(items)
}

/// Per-epoch training averages, one row of the metrics CSV.
#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Mean Chamfer term per deformation step, in step order.
    pub step_cd: Vec<f64>,
    /// Mean total path length.
    pub pmd: f64,
    /// Mean total loss as optimized (Chamfer sum plus weighted terms).
    pub total: f64,
    pub lr: f64,
}

/// Renders epoch records as CSV with a `step_cd_k` column per step.
pub fn metrics_csv(records: &[EpochRecord], steps: usize) -> String {
    let mut out = String::from("epoch");
    for k in 1..=steps {
        let _ = write!(out, ",step_cd_{k}");
    }
    out.push_str(",pmd,total,lr\n");
    for r in records {
        let _ = write!(out, "{}", r.epoch);
        for k in 0..steps {
            let cd = r.step_cd.get(k).copied().unwrap_or(f64::NAN);
            let _ = write!(out, ",{cd}");
        }
        let _ = writeln!(out, ",{},{},{}", r.pmd, r.total, r.lr);
    }
    out
}

/// What a finished (or aborted) run hands back: the trained weights, the
/// optimizer state to resume from, and the per-epoch loss history. `abort`
/// carries the reason when the loop stopped early on a non-finite loss; the
/// weights are then the last end-of-epoch snapshot.
#[derive(Debug, Clone)]
pub struct TrainOutcome<T: Real> {
    pub params: ParamStore<T>,
    pub adam: AdamState<T>,
    pub records: Vec<EpochRecord>,
    pub abort: Option<String>,
}

/// Weights, optimizer state, and the epoch to continue from, as decoded
/// from a checkpoint.
pub type ResumePoint<T> = (ParamStore<T>, AdamState<T>, usize);

struct ItemLoss<T: Real> {
    step_cd: Vec<f64>,
    pmd: f64,
    total: f64,
    grads: GradStore<T>,
}

fn item_loss<T: Real>(
    item: &TrainItem,
    params: &ParamStore<T>,
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    rng: &mut ChaCha20Rng,
) -> Result<ItemLoss<T>> {
    let mut pass = forward_pass(&item.partial, params, model_cfg, rng, None)?;
    let g = &mut pass.graph;
    let flat: Vec<T> =
        item.complete.points.iter().flat_map(|p| p.iter().map(|&c| T::of(c))).collect();
    let target = g.constant(Tensor::new(vec![item.complete.len(), 3], flat)?);

    let mut step_cd_vars = Vec::with_capacity(pass.step_clouds.len());
    for &cloud in &pass.step_clouds {
        step_cd_vars.push(chamfer_loss(g, cloud, target, ChamferMode::L2)?);
    }
    let mut total = step_cd_vars[0];
    for &v in &step_cd_vars[1..] {
        total = g.add(total, v)?;
    }
    let mut path_sum = pmd_term(g, pass.displacements[0])?;
    for &d in &pass.displacements[1..] {
        let term = pmd_term(g, d)?;
        path_sum = g.add(path_sum, term)?;
    }
    // Per-point mean, so the path term stays commensurate with the
    // per-point-mean Chamfer terms at any cloud size.
    let pmd_var = g.scale(path_sum, 1.0 / item.partial.len() as f64);
    if train_cfg.pmd_weight != 0.0 {
        let weighted = g.scale(pmd_var, train_cfg.pmd_weight);
        total = g.add(total, weighted)?;
    }
    if train_cfg.emd_weight != 0.0 {
        let final_cloud = *pass.step_clouds.last().unwrap();
        let emd = emd_loss(g, final_cloud, target, EmdSolver::Auction)?;
        let weighted = g.scale(emd, train_cfg.emd_weight);
        total = g.add(total, weighted)?;
    }

    let step_cd: Vec<f64> = step_cd_vars.iter().map(|&v| g.values(v)[0].as_f64()).collect();
    let pmd = g.values(pmd_var)[0].as_f64();
    let total_value = g.values(total)[0].as_f64();
    if !total_value.is_finite() {
        return Err(Error::Solver(format!("non-finite loss {total_value} on {:?}", item.label)));
    }
    g.backward(total)?;
    let grads = GradStore::collect(g, &pass.lease)?;
    Ok(ItemLoss { step_cd, pmd, total: total_value, grads })
}

fn clip_gradients<T: Real>(grads: &mut GradStore<T>, max_norm: f64) {
    let mut sq = 0.0f64;
    for (_, g) in grads.iter() {
        for &x in g {
            sq += x.as_f64() * x.as_f64();
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm {
        grads.scale(T::of(max_norm / norm));
    }
}

/// Runs (or resumes) training over `items` and returns the final weights.
///
/// Each epoch shuffles the items under its own seeded stream, walks them in
/// batches, averages the per-item gradients, and takes one Adam step per
/// batch at the epoch's decayed learning rate. A non-finite loss stops the
/// run; the outcome then carries the last end-of-epoch weights and the
/// reason in `abort` instead of an error. `on_epoch` sees every finished
/// epoch with the weights at that point, for logging or mid-run eval.
pub fn train_loop<T: Real>(
    items: &[TrainItem],
    model_cfg: &ModelConfig,
    train_cfg: &TrainConfig,
    resume: Option<ResumePoint<T>>,
    mut on_epoch: impl FnMut(&EpochRecord, &ParamStore<T>),
) -> Result<TrainOutcome<T>> {
    model_cfg.validate()?;
    train_cfg.validate()?;
    if items.is_empty() {
        return Err(Error::argument("train_loop needs at least one item"));
    }
    let (mut params, mut adam, start_epoch) = match resume {
        Some((p, a, e)) => (p, a, e),
        None => {
            let p = register_model::<T>(model_cfg)?;
            let a = AdamState::zeros(&p);
            (p, a, 0)
        }
    };
    let steps = model_cfg.steps;
    let mut records = Vec::new();
    let mut snapshot = (params.clone(), adam.clone());

    for epoch in start_epoch..train_cfg.epochs {
        let lr = train_cfg.lr_at(epoch);
        let mut order: Vec<usize> = (0..items.len()).collect();
        let mut shuffle_rng =
            ChaCha20Rng::seed_from_u64(seed::mix(train_cfg.seed, &[1, epoch as u64]));
        order.shuffle(&mut shuffle_rng);

        let mut cd_sums = vec![0.0f64; steps];
        let mut pmd_sum = 0.0f64;
        let mut total_sum = 0.0f64;

        for batch in order.chunks(train_cfg.batch_size) {
            let mut batch_grads: Option<GradStore<T>> = None;
            for &idx in batch {
                // The noise stream is keyed by the item's identity, not its
                // position in the shuffle, so batching never changes it.
                let mut rng = ChaCha20Rng::seed_from_u64(seed::mix(
                    train_cfg.seed,
                    &[2, epoch as u64, idx as u64],
                ));
                let loss = match item_loss(&items[idx], &params, model_cfg, train_cfg, &mut rng)
                {
                    Ok(l) => l,
                    // A diverged run surfaces either as a non-finite loss
                    // value or as non-finite coordinates inside the next
                    // step's geometry; both end the run with the snapshot.
                    Err(e) if e.to_string().contains("non-finite") => {
                        let (params, adam) = snapshot;
                        return Ok(TrainOutcome {
                            params,
                            adam,
                            records,
                            abort: Some(format!("epoch {epoch}: {e}")),
                        });
                    }
                    Err(e) => return Err(e),
                };
                for (s, &cd) in loss.step_cd.iter().enumerate() {
                    cd_sums[s] += cd;
                }
                pmd_sum += loss.pmd;
                total_sum += loss.total;
                match &mut batch_grads {
                    Some(acc) => acc.accumulate(&loss.grads)?,
                    None => batch_grads = Some(loss.grads),
                }
            }
            let mut grads = batch_grads.expect("chunks are never empty");
            grads.scale(T::of(1.0 / batch.len() as f64));
            if let Some(max_norm) = train_cfg.grad_clip {
                clip_gradients(&mut grads, max_norm);
            }
            adam_step(&mut params, &grads, &mut adam, lr)?;
        }

        let n = items.len() as f64;
        let record = EpochRecord {
            epoch,
            step_cd: cd_sums.iter().map(|s| s / n).collect(),
            pmd: pmd_sum / n,
            total: total_sum / n,
            lr,
        };
        on_epoch(&record, &params);
        records.push(record);
        snapshot = (params.clone(), adam.clone());
    }

    Ok(TrainOutcome { params, adam, records, abort: None })
}

/// Held-out metrics for one shape, or the mean over all of them.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalRow {
    pub label: String,
    pub cd_l1: f64,
    pub cd_l2: f64,
    pub hausdorff: f64,
    pub fidelity: f64,
    pub mmd: f64,
    /// Per-point mean path length spent reaching the completion.
    pub pmd: f64,
}

/// Runs the model over every item and measures the completion against the
/// ground truth: Chamfer in both flavors, Hausdorff, fidelity of the input
/// under the output, MMD, and the path length spent. Deterministic in
/// (params, seed).
pub fn evaluate<T: Real>(
    items: &[TrainItem],
    params: &ParamStore<T>,
    cfg: &ModelConfig,
    eval_seed: u64,
) -> Result<Vec<EvalRow>> {
    let mut rows = Vec::with_capacity(items.len());
    for (idx, item) in items.iter().enumerate() {
        let mut rng = ChaCha20Rng::seed_from_u64(seed::mix(eval_seed, &[4, idx as u64]));
        let trace = multi_step_forward(&item.partial, params, cfg, &mut rng, None)?;
        let out = trace.final_cloud();
        rows.push(EvalRow {
            label: item.label.clone(),
            cd_l1: losses::chamfer(out, &item.complete, ChamferMode::L1)?,
            cd_l2: losses::chamfer(out, &item.complete, ChamferMode::L2)?,
            hausdorff: losses::hausdorff(out, &item.complete)?,
            fidelity: losses::fidelity(&item.partial, out)?,
            mmd: losses::mmd(out, &item.complete)?,
            pmd: trace.pmd() / item.partial.len() as f64,
        });
    }
    Ok(rows)
}

/// Column-wise mean of eval rows, labeled `"mean"`.
pub fn mean_row(rows: &[EvalRow]) -> Option<EvalRow> {
    if rows.is_empty() {
        return None;
    }
    let n = rows.len() as f64;
    let avg = |f: fn(&EvalRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    Some(EvalRow {
        label: "mean".into(),
        cd_l1: avg(|r| r.cd_l1),
        cd_l2: avg(|r| r.cd_l2),
        hausdorff: avg(|r| r.hausdorff),
        fidelity: avg(|r| r.fidelity),
        mmd: avg(|r| r.mmd),
        pmd: avg(|r| r.pmd),
    })
}

pub fn eval_csv(rows: &[EvalRow]) -> String {
    let mut out = String::from("label,cd_l1,cd_l2,hausdorff,fidelity,mmd,pmd\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{}",
            r.label, r.cd_l1, r.cd_l2, r.hausdorff, r.fidelity, r.mmd, r.pmd
        );
    }
    out
}

/// Mean Chamfer-L2 between each partial and its complete cloud: what a
/// model that never moves a point would score.
pub fn zero_displacement_baseline(items: &[TrainItem]) -> Result<f64> {
    if items.is_empty() {
        return Err(Error::argument("baseline needs at least one item"));
    }
    let mut sum = 0.0;
    for item in items {
        sum += losses::chamfer(&item.partial, &item.complete, ChamferMode::L2)?;
    }
    Ok(sum / items.len() as f64)
}
