//! Command implementations behind the `pmp` binary.
//!
//! Every command is deterministic: the same flags, config, and seed write
//! byte-identical CSVs and bit-identical checkpoints. The `PMP_SEED`
//! environment variable overrides every seed a command would otherwise
//! use, so a whole pipeline can be re-keyed without touching configs.

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};

use pmp::data::{
    canonical_kinds, read_cloud, synth_dataset, write_cloud, ShapeKind, Split, SynthConfig,
};
use pmp::layers::GateVariant;
use pmp::model::{dense_complete, multi_step_forward, ModelConfig, PathTrace};
use pmp::params::ParamStore;
use pmp::trainer::{
    eval_csv, evaluate, load_checkpoint, load_items, mean_row, metrics_csv, save_checkpoint,
    train_loop, AdamState, TrainConfig, TrainOutcome,
};

/// Exit code contract: 0 success, 2 usage (clap's own), 3 bad config or
/// schema, 1 anything that fails at runtime.
#[derive(Debug)]
pub struct CliError {
    pub code: i32,
    pub msg: String,
}

pub type CliResult<T> = std::result::Result<T, CliError>;

fn config_error(msg: impl std::fmt::Display) -> CliError {
    CliError { code: 3, msg: one_line(msg) }
}

fn run_error(msg: impl std::fmt::Display) -> CliError {
    CliError { code: 1, msg: one_line(msg) }
}

fn one_line(msg: impl std::fmt::Display) -> String {
    msg.to_string().replace('\n', "; ")
}

#[derive(Debug, Parser)]
#[command(name = "pmp", version, about = "Point cloud completion by learned point moving paths")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate the synthetic (partial, complete) dataset and its manifest.
    Synth(SynthArgs),
    /// Train a model from a JSON run config; writes metrics.csv and final.ckpt.
    Train(TrainArgs),
    /// Complete one partial cloud with a trained checkpoint.
    Complete(CompleteArgs),
    /// Densify a cloud by running completion several times with fresh noise.
    Upsample(UpsampleArgs),
    /// Score a checkpoint on a dataset split; writes a metrics CSV.
    Eval(EvalArgs),
    /// Export the per-step point trajectories of one completion as CSV.
    Paths(PathsArgs),
    /// Sweep a model axis (steps, radius, gate, noise) and emit a comparison CSV.
    Ablate(AblateArgs),
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    /// Output directory for clouds and manifest.json.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Comma-separated subset of line,circle,sphere,cuboid,cylinder,plane.
    #[arg(long)]
    pub kinds: Option<String>,
    #[arg(long, default_value_t = 40)]
    pub seeds_per_kind: usize,
    #[arg(long, default_value_t = 256)]
    pub n_points: usize,
    #[arg(long, default_value_t = 0.5)]
    pub keep: f64,
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// JSON run config: {"model": {...}, "train": {...}, "manifest": "..."}.
    #[arg(long)]
    pub config: PathBuf,
    /// Output directory for metrics.csv and final.ckpt.
    #[arg(long)]
    pub out: PathBuf,
    /// Resume from a checkpoint written by an earlier run of this config.
    #[arg(long)]
    pub resume: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CompleteArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Partial cloud (.xyz) with exactly the model's point count.
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Concatenate this many noise-resampled passes instead of one.
    #[arg(long)]
    pub dense: Option<usize>,
}

#[derive(Debug, Args)]
pub struct UpsampleArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Output size as a multiple of the input size.
    #[arg(long)]
    pub factor: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub manifest: PathBuf,
    /// train, val, test, or all.
    #[arg(long, default_value = "val")]
    pub split: String,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct PathsArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub input: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

#[derive(Debug, Args)]
pub struct AblateArgs {
    #[arg(long)]
    pub manifest: PathBuf,
    /// Directory receiving ablation.csv.
    #[arg(long)]
    pub out: PathBuf,
    /// steps, radius, gate, noise, or all.
    #[arg(long, default_value = "all")]
    pub axis: String,
    /// Axis-specific override, e.g. "1,2,3,4" for steps or
    /// "1,1,1;1,0.5,0.25" for radius schedules.
    #[arg(long)]
    pub values: Option<String>,
    #[arg(long, default_value_t = 30)]
    pub epochs: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
}

/// On-disk run description; every level rejects unknown keys so schema
/// drift fails before any work starts.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub model: ModelConfig,
    pub train: TrainConfig,
    /// Dataset manifest; relative paths resolve against the config file.
    pub manifest: PathBuf,
}

/// `PMP_SEED`, when set, wins over every other seed source.
fn seed_override() -> CliResult<Option<u64>> {
    match std::env::var("PMP_SEED") {
        Ok(v) => v
            .parse::<u64>()
            .map(Some)
            .map_err(|_| config_error(format!("PMP_SEED must be an unsigned integer, got {v:?}"))),
        Err(_) => Ok(None),
    }
}

pub fn run(cli: Cli) -> CliResult<()> {
    let seed_env = seed_override()?;
    match cli.command {
        Command::Synth(args) => cmd_synth(args, seed_env),
        Command::Train(args) => cmd_train(args, seed_env),
        Command::Complete(args) => cmd_complete(args, seed_env),
        Command::Upsample(args) => cmd_upsample(args, seed_env),
        Command::Eval(args) => cmd_eval(args, seed_env),
        Command::Paths(args) => cmd_paths(args, seed_env),
        Command::Ablate(args) => cmd_ablate(args, seed_env),
    }
}

fn parse_kinds(spec: &str) -> CliResult<Vec<ShapeKind>> {
    let all = canonical_kinds();
    let mut kinds = Vec::new();
    for name in spec.split(',').map(str::trim).filter(|s| !s.is_empty()) {
        let kind = all
            .iter()
            .find(|k| k.name() == name)
            .ok_or_else(|| config_error(format!("unknown shape kind {name:?}")))?;
        kinds.push(*kind);
    }
    if kinds.is_empty() {
        return Err(config_error("no shape kinds selected"));
    }
    Ok(kinds)
}

fn cmd_synth(args: SynthArgs, seed_env: Option<u64>) -> CliResult<()> {
    let kinds = match &args.kinds {
        Some(spec) => parse_kinds(spec)?,
        None => canonical_kinds(),
    };
    let cfg = SynthConfig {
        kinds,
        seeds_per_kind: args.seeds_per_kind,
        n_points: args.n_points,
        keep_fraction: args.keep,
        viewpoint: [1.0, 0.0, 0.0],
        base_seed: seed_env.unwrap_or(args.seed),
    };
    let entries = synth_dataset(&args.out, &cfg).map_err(run_error)?;
    println!("wrote {} items to {}", entries.len(), args.out.display());
    Ok(())
}

fn load_run_config(path: &Path) -> CliResult<RunConfig> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| config_error(format!("cannot read config {}: {e}", path.display())))?;
    let mut cfg: RunConfig = serde_json::from_str(&text)
        .map_err(|e| config_error(format!("bad run config {}: {e}", path.display())))?;
    cfg.model.validate().map_err(config_error)?;
    cfg.train.validate().map_err(config_error)?;
    if cfg.manifest.is_relative() {
        if let Some(dir) = path.parent() {
            cfg.manifest = dir.join(&cfg.manifest);
        }
    }
    Ok(cfg)
}

fn cmd_train(args: TrainArgs, seed_env: Option<u64>) -> CliResult<()> {
    let mut cfg = load_run_config(&args.config)?;
    if let Some(seed) = seed_env {
        cfg.model.seed = seed;
        cfg.train.seed = seed;
    }
    let train_items = load_items(&cfg.manifest, Some(Split::Train)).map_err(run_error)?;
    if train_items.is_empty() {
        return Err(run_error("manifest has no training items"));
    }
    let val_items = load_items(&cfg.manifest, Some(Split::Val)).map_err(run_error)?;

    let resume = match &args.resume {
        Some(path) => {
            let ckpt = load_checkpoint(path).map_err(run_error)?;
            if ckpt.config != cfg.model {
                return Err(config_error(format!(
                    "checkpoint {} was trained under a different model config",
                    path.display()
                )));
            }
            let (params, adam): (ParamStore<f32>, AdamState<f32>) =
                ckpt.split().map_err(run_error)?;
            let batches_per_epoch = train_items.len().div_ceil(cfg.train.batch_size) as u64;
            let epoch = (adam.t / batches_per_epoch) as usize;
            Some((params, adam, epoch))
        }
        None => None,
    };

    std::fs::create_dir_all(&args.out).map_err(run_error)?;
    let eval_every = cfg.train.eval_every;
    let out_dir = args.out.clone();
    let model_for_eval = cfg.model.clone();
    let val_for_eval = val_items;
    let eval_seed = cfg.train.seed;
    let mut epoch_eval_error: Option<CliError> = None;

    let outcome: TrainOutcome<f32> = train_loop(
        &train_items,
        &cfg.model,
        &cfg.train,
        resume,
        |record, params| {
            if eval_every > 0
                && (record.epoch + 1) % eval_every == 0
                && !val_for_eval.is_empty()
                && epoch_eval_error.is_none()
            {
                let result = evaluate(&val_for_eval, params, &model_for_eval, eval_seed)
                    .map(|mut rows| {
                        if let Some(mean) = mean_row(&rows) {
                            rows.push(mean);
                        }
                        std::fs::write(
                            out_dir.join(format!("eval_{:04}.csv", record.epoch)),
                            eval_csv(&rows),
                        )
                    });
                match result {
                    Ok(Ok(())) => {}
                    Ok(Err(e)) => epoch_eval_error = Some(run_error(e)),
                    Err(e) => epoch_eval_error = Some(run_error(e)),
                }
            }
        },
    )
    .map_err(run_error)?;
    if let Some(e) = epoch_eval_error {
        return Err(e);
    }

    std::fs::write(args.out.join("metrics.csv"), metrics_csv(&outcome.records, cfg.model.steps))
        .map_err(run_error)?;
    save_checkpoint(&args.out.join("final.ckpt"), &cfg.model, &outcome.params, &outcome.adam)
        .map_err(run_error)?;
    if let Some(reason) = outcome.abort {
        return Err(run_error(format!("training aborted, last good state saved: {reason}")));
    }
    println!(
        "trained {} epochs on {} items; artifacts in {}",
        outcome.records.len(),
        train_items.len(),
        args.out.display()
    );
    Ok(())
}

fn load_model(path: &Path) -> CliResult<(ModelConfig, ParamStore<f32>)> {
    let ckpt = load_checkpoint(path).map_err(run_error)?;
    let (params, _adam): (ParamStore<f32>, AdamState<f32>) = ckpt.split().map_err(run_error)?;
    Ok((ckpt.config, params))
}

fn cmd_complete(args: CompleteArgs, seed_env: Option<u64>) -> CliResult<()> {
    let (cfg, params) = load_model(&args.checkpoint)?;
    let input = read_cloud(&args.input).map_err(run_error)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed_env.unwrap_or(args.seed));
    let output = match args.dense {
        Some(repeats) => {
            dense_complete(&input, &params, &cfg, repeats, &mut rng).map_err(run_error)?
        }
        None => {
            let trace = multi_step_forward(&input, &params, &cfg, &mut rng, None)
                .map_err(run_error)?;
            trace.final_cloud().clone()
        }
    };
    write_cloud(&args.out, &output).map_err(run_error)?;
    println!("wrote {} points to {}", output.len(), args.out.display());
    Ok(())
}

fn cmd_upsample(args: UpsampleArgs, seed_env: Option<u64>) -> CliResult<()> {
    if args.factor == 0 {
        return Err(config_error("factor must be at least 1"));
    }
    let (cfg, params) = load_model(&args.checkpoint)?;
    let input = read_cloud(&args.input).map_err(run_error)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed_env.unwrap_or(args.seed));
    let target = args.factor * input.len();
    let output =
        pmp::model::upsample(&input, &params, &cfg, target, &mut rng).map_err(run_error)?;
    write_cloud(&args.out, &output).map_err(run_error)?;
    println!("wrote {} points to {}", output.len(), args.out.display());
    Ok(())
}

fn parse_split(s: &str) -> CliResult<Option<Split>> {
    match s {
        "train" => Ok(Some(Split::Train)),
        "val" => Ok(Some(Split::Val)),
        "test" => Ok(Some(Split::Test)),
        "all" => Ok(None),
        other => Err(config_error(format!("unknown split {other:?}"))),
    }
}

fn cmd_eval(args: EvalArgs, seed_env: Option<u64>) -> CliResult<()> {
    let split = parse_split(&args.split)?;
    let (cfg, params) = load_model(&args.checkpoint)?;
    let items = load_items(&args.manifest, split).map_err(run_error)?;
    if items.is_empty() {
        return Err(run_error(format!("no items in split {:?}", args.split)));
    }
    let seed = seed_env.unwrap_or(args.seed);
    let mut rows = evaluate(&items, &params, &cfg, seed).map_err(run_error)?;
    if let Some(mean) = mean_row(&rows) {
        rows.push(mean);
    }
    std::fs::write(&args.out, eval_csv(&rows)).map_err(run_error)?;
    println!("evaluated {} items into {}", items.len(), args.out.display());
    Ok(())
}

/// Renders a deformation trace as CSV, point-major: for each point, a step
/// 0 row holding the initial position with zero displacement, then one row
/// per step with the position after that step and the displacement that
/// produced it. N points and K steps give N*(K+1) rows.
pub fn export_paths(trace: &PathTrace) -> String {
    let mut out = String::from("point_id,step,x,y,z,dx,dy,dz\n");
    for (i, start) in trace.initial.points.iter().enumerate() {
        let _ = writeln!(out, "{i},0,{},{},{},0,0,0", start[0], start[1], start[2]);
        for (k, (cloud, disp)) in
            trace.intermediates.iter().zip(&trace.displacements).enumerate()
        {
            let p = cloud.points[i];
            let d = disp[i];
            let _ = writeln!(
                out,
                "{i},{},{},{},{},{},{},{}",
                k + 1,
                p[0],
                p[1],
                p[2],
                d[0],
                d[1],
                d[2]
            );
        }
    }
    out
}

fn cmd_paths(args: PathsArgs, seed_env: Option<u64>) -> CliResult<()> {
    let (cfg, params) = load_model(&args.checkpoint)?;
    let input = read_cloud(&args.input).map_err(run_error)?;
    let mut rng = ChaCha20Rng::seed_from_u64(seed_env.unwrap_or(args.seed));
    let trace = multi_step_forward(&input, &params, &cfg, &mut rng, None).map_err(run_error)?;
    std::fs::write(&args.out, export_paths(&trace)).map_err(run_error)?;
    println!(
        "wrote {} rows to {}",
        trace.initial.len() * (trace.displacements.len() + 1),
        args.out.display()
    );
    Ok(())
}

struct AblationVariant {
    axis: &'static str,
    label: String,
    cfg: ModelConfig,
}

fn steps_schedule(steps: usize) -> Vec<f64> {
    (0..steps).map(|k| 0.1f64.powi(k as i32)).collect()
}

fn steps_variants(base: &ModelConfig, values: Option<&str>) -> CliResult<Vec<AblationVariant>> {
    let list: Vec<usize> = match values {
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| config_error(format!("bad step count {s:?}"))))
            .collect::<CliResult<_>>()?,
        None => vec![1, 2, 3, 4],
    };
    Ok(list
        .into_iter()
        .map(|steps| {
            let mut cfg = base.clone();
            cfg.steps = steps;
            cfg.radius_schedule = steps_schedule(steps);
            AblationVariant { axis: "steps", label: steps.to_string(), cfg }
        })
        .collect())
}

fn radius_variants(base: &ModelConfig, values: Option<&str>) -> CliResult<Vec<AblationVariant>> {
    let schedules: Vec<Vec<f64>> = match values {
        Some(v) => v
            .split(';')
            .map(|sched| {
                sched
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse()
                            .map_err(|_| config_error(format!("bad radius value {s:?}")))
                    })
                    .collect()
            })
            .collect::<CliResult<_>>()?,
        None => vec![vec![1.0, 1.0, 1.0], vec![1.0, 0.5, 0.25], vec![1.0, 0.1, 0.01]],
    };
    Ok(schedules
        .into_iter()
        .map(|schedule| {
            let mut cfg = base.clone();
            cfg.steps = schedule.len();
            cfg.radius_schedule = schedule.clone();
            let label =
                schedule.iter().map(f64::to_string).collect::<Vec<_>>().join("x");
            AblationVariant { axis: "radius", label, cfg }
        })
        .collect())
}

fn gate_variants(base: &ModelConfig, values: Option<&str>) -> CliResult<Vec<AblationVariant>> {
    let names = values.unwrap_or("none,add,rnn,lstm,gru,rpa");
    names
        .split(',')
        .map(|name| {
            let gate = GateVariant::parse(name.trim()).map_err(config_error)?;
            let mut cfg = base.clone();
            cfg.gate = gate;
            Ok(AblationVariant { axis: "gate", label: gate.name().to_string(), cfg })
        })
        .collect()
}

fn noise_variants(base: &ModelConfig, values: Option<&str>) -> CliResult<Vec<AblationVariant>> {
    let dims: Vec<usize> = match values {
        Some(v) => v
            .split(',')
            .map(|s| s.trim().parse().map_err(|_| config_error(format!("bad noise dim {s:?}"))))
            .collect::<CliResult<_>>()?,
        None => vec![0, 8, 16, 32, 64],
    };
    Ok(dims
        .into_iter()
        .map(|dim| {
            let mut cfg = base.clone();
            cfg.noise_dim = dim;
            AblationVariant { axis: "noise", label: dim.to_string(), cfg }
        })
        .collect())
}

fn cmd_ablate(args: AblateArgs, seed_env: Option<u64>) -> CliResult<()> {
    let seed = seed_env.unwrap_or(args.seed);
    let train_items = load_items(&args.manifest, Some(Split::Train)).map_err(run_error)?;
    let val_items = load_items(&args.manifest, Some(Split::Val)).map_err(run_error)?;
    if train_items.is_empty() || val_items.is_empty() {
        return Err(run_error("ablation needs non-empty train and val splits"));
    }
    // Toy hierarchy ratios, rescaled to whatever point count the dataset
    // actually uses (identical to ModelConfig::toy() at 256 points).
    let n = train_items[0].partial.len();
    let mut base = ModelConfig::toy();
    base.n_points = n;
    base.l1_points = (n / 8).max(3);
    base.l2_points = (base.l1_points / 8).max(3);
    base.nsample = (n / 32).max(1);
    base.transformer_k = (n / 32).max(1);
    base.seed = seed;

    let values = args.values.as_deref();
    let variants = match args.axis.as_str() {
        "steps" => steps_variants(&base, values)?,
        "radius" => radius_variants(&base, values)?,
        "gate" => gate_variants(&base, values)?,
        "noise" => noise_variants(&base, values)?,
        "all" => {
            if values.is_some() {
                return Err(config_error("--values needs a specific --axis"));
            }
            let mut all = steps_variants(&base, None)?;
            all.extend(radius_variants(&base, None)?);
            all.extend(gate_variants(&base, None)?);
            all.extend(noise_variants(&base, None)?);
            all
        }
        other => Err(config_error(format!("unknown ablation axis {other:?}")))?,
    };

    let train_cfg = TrainConfig { epochs: args.epochs, seed, ..TrainConfig::default() };
    let mut csv = String::from(
        "axis,variant,epochs,final_total,val_cd_l1,val_cd_l2,val_pmd,all_losses_finite\n",
    );
    for variant in &variants {
        variant.cfg.validate().map_err(config_error)?;
        let outcome: TrainOutcome<f32> =
            train_loop(&train_items, &variant.cfg, &train_cfg, None, |_, _| {})
                .map_err(run_error)?;
        let finite = outcome.abort.is_none()
            && outcome.records.iter().all(|r| r.total.is_finite());
        let final_total =
            outcome.records.last().map(|r| r.total).unwrap_or(f64::NAN);
        let rows = evaluate(&val_items, &outcome.params, &variant.cfg, seed).map_err(run_error)?;
        let mean = mean_row(&rows).expect("val split is non-empty");
        let _ = writeln!(
            csv,
            "{},{},{},{},{},{},{},{}",
            variant.axis,
            variant.label,
            args.epochs,
            final_total,
            mean.cd_l1,
            mean.cd_l2,
            mean.pmd,
            finite
        );
        println!(
            "ablate {}={}: final_total {:.5} val_cd_l2 {:.5}{}",
            variant.axis,
            variant.label,
            final_total,
            mean.cd_l2,
            if finite { "" } else { " (non-finite)" }
        );
    }
    std::fs::create_dir_all(&args.out).map_err(run_error)?;
    let path = args.out.join("ablation.csv");
    std::fs::write(&path, csv).map_err(run_error)?;
    println!("wrote {} variants to {}", variants.len(), path.display());
    Ok(())
}
