//! `patchcast` command-line front end.
//!
//! Exit codes: 0 on success, 1 on runtime failure, 2 on usage or constraint
//! errors (including invalid patch geometry).

use std::path::{Path, PathBuf};
use std::process::ExitCode;

#[global_allocator]
static GLOBAL: mimalloc::MiMalloc = mimalloc::MiMalloc;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};

use patchcast::bench::{run_bench, write_bench_csv, BenchError, BenchSpec};
use patchcast::data::{save_dataset, synth_generate, SynthSpec};
use patchcast::numerics::Checkpoint;
use patchcast::spatial::{export_partition, SpatialError};
use patchcast::training::{checkpoint_config, evaluate, load_source, DataSource, Experiment, PatchGeometry, SplitKind, TrainConfig, TrainError};

#[derive(Parser)]
#[command(name = "patchcast", version, about = "Leaf KD-tree patching and dual-attention traffic forecasting")]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Flat `key = value` configuration file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides the configured seed.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Disable per-sample parallelism.
    #[arg(long, global = true)]
    serial: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Extra `key=value` configuration overrides, applied after `--config`.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    overrides: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset into the output directory.
    Synth(SynthArgs),
    /// Partition a dataset and write GeoJSON and CSV reports.
    Partition(GeometryArgs),
    /// Train a model; writes the checkpoint and per-epoch log.
    Train,
    /// Evaluate a checkpoint and print the per-horizon report.
    Eval(EvalArgs),
    /// Time patched against dense attention.
    Bench(BenchArgs),
}

#[derive(Args)]
struct SynthArgs {
    #[arg(long)]
    points: Option<usize>,
    #[arg(long)]
    days: Option<usize>,
    #[arg(long)]
    slice_minutes: Option<u32>,
    #[arg(long)]
    k_neighbors: Option<usize>,
    #[arg(long)]
    diffusion: Option<f64>,
    #[arg(long)]
    noise: Option<f64>,
}

#[derive(Args)]
struct GeometryArgs {
    /// Dataset directory; defaults to the configured source.
    #[arg(long)]
    dataset: Option<PathBuf>,
    /// Leaf capacity.
    #[arg(long)]
    capacity: Option<usize>,
    /// Leaves merged into each patch.
    #[arg(long, conflicts_with = "patches")]
    leaves_per_patch: Option<usize>,
    /// Target patch count.
    #[arg(long)]
    patches: Option<usize>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint file; defaults to `<out>/checkpoint.pstg`.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Dataset directory; defaults to the source recorded in the checkpoint.
    #[arg(long)]
    dataset: Option<PathBuf>,
    #[arg(long, default_value = "test")]
    split: SplitKind,
}

#[derive(Args)]
struct BenchArgs {
    /// Ascending point counts.
    #[arg(long, value_delimiter = ',', default_value = "1024,2048,4096")]
    sizes: Vec<usize>,
    #[arg(long, default_value_t = 32)]
    width: usize,
    #[arg(long, default_value_t = 1)]
    heads: usize,
    #[arg(long, default_value_t = 2)]
    capacity: usize,
    /// Fixed leaves per patch (fixed patch size across sizes).
    #[arg(long, conflicts_with = "patches")]
    leaves_per_patch: Option<usize>,
    /// Fixed patch count instead of a fixed patch size.
    #[arg(long)]
    patches: Option<usize>,
    #[arg(long, default_value_t = 3)]
    repeats: usize,
    /// Rows estimated to need more memory than this are marked failed.
    #[arg(long, default_value_t = 3072)]
    memory_limit_mb: usize,
    /// Time the forward pass only.
    #[arg(long)]
    forward_only: bool,
}

/// A usage or constraint problem detected outside the library.
#[derive(Debug)]
struct Usage(String);

impl std::fmt::Display for Usage {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for Usage {}

fn train_config(common: &Common) -> Result<TrainConfig> {
    let mut cfg = match &common.config {
        Some(path) => TrainConfig::load(path)?,
        None => TrainConfig::default(),
    };
    for item in &common.overrides {
        let Some((k, v)) = item.split_once('=') else {
            return Err(Usage(format!("--set expects KEY=VALUE, got `{item}`")).into());
        };
        cfg.set(k.trim(), v.trim())?;
    }
    if let Some(seed) = common.seed {
        cfg.seed = seed;
    }
    if common.serial {
        cfg.parallel = false;
    }
    Ok(cfg)
}

fn apply_geometry(cfg: &mut TrainConfig, args: &GeometryArgs) {
    if let Some(dir) = &args.dataset {
        cfg.data = DataSource::Path(dir.clone());
    }
    if let Some(c) = args.capacity {
        cfg.capacity = c;
    }
    if let Some(np) = args.leaves_per_patch {
        cfg.geometry = PatchGeometry::LeavesPerPatch(np);
    }
    if let Some(r) = args.patches {
        cfg.geometry = PatchGeometry::Patches(r);
    }
}

fn create_out(dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).with_context(|| format!("creating {}", dir.display()))
}

fn cmd_synth(common: &Common, args: &SynthArgs) -> Result<()> {
    let cfg = train_config(common)?;
    let mut spec = match cfg.data {
        DataSource::Synth(s) => s,
        DataSource::Path(_) => SynthSpec::default(),
    };
    spec.seed = common.seed.unwrap_or(spec.seed);
    spec.points = args.points.unwrap_or(spec.points);
    spec.days = args.days.unwrap_or(spec.days);
    spec.slice_minutes = args.slice_minutes.unwrap_or(spec.slice_minutes);
    spec.k_neighbors = args.k_neighbors.unwrap_or(spec.k_neighbors);
    spec.diffusion = args.diffusion.unwrap_or(spec.diffusion);
    spec.noise = args.noise.unwrap_or(spec.noise);
    let ds = synth_generate(&spec)?;
    create_out(&common.out)?;
    save_dataset(&ds, &common.out)?;
    println!(
        "wrote {} points x {} slices ({} per day) to {}",
        ds.n_points(),
        ds.n_slices(),
        ds.slices_per_day(),
        common.out.display()
    );
    Ok(())
}

fn cmd_partition(common: &Common, args: &GeometryArgs) -> Result<()> {
    let mut cfg = train_config(common)?;
    apply_geometry(&mut cfg, args);
    let exp = Experiment::prepare(&cfg)?;
    let layout = exp.layout();
    let report = export_partition(&exp.tree, layout, &exp.dataset.points);
    report.write(&common.out).with_context(|| format!("writing partition report to {}", common.out.display()))?;
    println!("N={} C={} N_p={}", layout.n_points(), layout.capacity(), layout.leaves_per_patch());
    println!(
        "R={} P={} M={} pads={}",
        layout.patches(),
        layout.patch_size(),
        layout.slot_count(),
        layout.padded_slots().len()
    );
    Ok(())
}

fn cmd_train(common: &Common) -> Result<()> {
    let cfg = train_config(common)?;
    let exp = Experiment::prepare(&cfg)?;
    let layout = exp.layout();
    log::info!(
        "N={} R={} P={} M={}, {} training slices",
        layout.n_points(),
        layout.patches(),
        layout.patch_size(),
        layout.slot_count(),
        exp.split(SplitKind::Train).len
    );
    let outcome = exp.train()?;
    create_out(&common.out)?;
    outcome.best.save(&common.out.join("checkpoint.pstg"))?;
    outcome.last.save(&common.out.join("last.pstg"))?;
    outcome.log.write_csv(&common.out.join("train_log.csv"))?;
    std::fs::write(common.out.join("config.txt"), cfg.render())?;
    match outcome.log.epochs.iter().find(|r| r.epoch == outcome.best_epoch) {
        Some(best) => println!("best epoch {} of {}: val MAE {:.4}", best.epoch, cfg.epochs, best.val_mae),
        None => println!("no epochs run; saved the initialisation"),
    }
    println!("wrote {}", common.out.display());
    Ok(())
}

fn cmd_eval(common: &Common, args: &EvalArgs) -> Result<()> {
    let path = args.checkpoint.clone().unwrap_or_else(|| common.out.join("checkpoint.pstg"));
    let checkpoint = Checkpoint::load(&path).with_context(|| format!("loading {}", path.display()))?;
    let mut cfg = checkpoint_config(&checkpoint)?;
    if let Some(dir) = &args.dataset {
        cfg.data = DataSource::Path(dir.clone());
    }
    let dataset = load_source(&cfg)?;
    let report = evaluate(&checkpoint, &dataset, args.split)?;
    print!("{report}");
    create_out(&common.out)?;
    report.write_csv(&common.out.join(format!("metrics_{}.csv", args.split)))?;
    Ok(())
}

fn cmd_bench(common: &Common, args: &BenchArgs) -> Result<()> {
    let defaults = BenchSpec::default();
    let geometry = match (args.leaves_per_patch, args.patches) {
        (_, Some(r)) => PatchGeometry::Patches(r),
        (Some(np), None) => PatchGeometry::LeavesPerPatch(np),
        (None, None) => defaults.geometry,
    };
    let spec = BenchSpec {
        sizes: args.sizes.clone(),
        width: args.width,
        heads: args.heads,
        capacity: args.capacity,
        geometry,
        repeats: args.repeats,
        seed: common.seed.unwrap_or(defaults.seed),
        memory_limit_bytes: args.memory_limit_mb << 20,
        backward: !args.forward_only,
    };
    let rows = run_bench(&spec)?;
    create_out(&common.out)?;
    let path = common.out.join("bench.csv");
    write_bench_csv(&rows, &path)?;
    println!("{:<8}{:>7}{:>6}{:>6}{:>8}{:>12}{:>12}{:>16}", "variant", "N", "R", "P", "M", "fwd ms", "bwd ms", "mixing FLOPs");
    let fmt = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |v| format!("{v:.2}"));
    for r in &rows {
        println!(
            "{:<8}{:>7}{:>6}{:>6}{:>8}{:>12}{:>12}{:>16}{}",
            r.variant.to_string(),
            r.points,
            r.patches,
            r.patch_size,
            r.slots,
            fmt(r.forward_ms),
            fmt(r.backward_ms),
            r.flops_counted.map_or_else(|| "-".to_string(), |f| f.to_string()),
            r.failure.as_deref().map_or_else(String::new, |f| format!("  FAILED: {f}"))
        );
    }
    println!("wrote {}", path.display());
    if rows.iter().all(|r| r.failed()) {
        bail!("every benchmark row failed");
    }
    Ok(())
}

fn is_constraint(err: &anyhow::Error) -> bool {
    fn train(e: &TrainError) -> bool {
        matches!(e, TrainError::Config(_) | TrainError::Geometry(_) | TrainError::Spatial(_))
    }
    err.chain().any(|cause| {
        cause.is::<Usage>()
            || cause.is::<SpatialError>()
            || cause.downcast_ref::<TrainError>().is_some_and(train)
            || cause.downcast_ref::<BenchError>().is_some_and(|e| match e {
                BenchError::Config(_) | BenchError::Spatial(_) => true,
                BenchError::Train(t) => train(t),
                _ => false,
            })
    })
}

/// Every `--set` value on the command line, in order. Clap keeps only the
/// occurrences after the subcommand when a global list appears on both sides.
fn all_overrides() -> Vec<String> {
    let mut out = Vec::new();
    let mut args = std::env::args_os().skip(1).map(|a| a.to_string_lossy().into_owned());
    while let Some(arg) = args.next() {
        if arg == "--" {
            break;
        }
        if arg == "--set" {
            out.extend(args.next());
        } else if let Some(v) = arg.strip_prefix("--set=") {
            out.push(v.to_string());
        }
    }
    out
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let mut cli = Cli::parse();
    cli.common.overrides = all_overrides();
    let result = match &cli.command {
        Command::Synth(a) => cmd_synth(&cli.common, a),
        Command::Partition(a) => cmd_partition(&cli.common, a),
        Command::Train => cmd_train(&cli.common),
        Command::Eval(a) => cmd_eval(&cli.common, a),
        Command::Bench(a) => cmd_bench(&cli.common, a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(if is_constraint(&e) { 2 } else { 1 })
        }
    }
}
