//! Command-line entry point: `train`, `eval`, and `plot`.
//!
//! `train` flags mirror the config keys one-to-one; a flag always wins over
//! the config file. Every run writes `metrics.csv`, a final `checkpoint/`,
//! and `resolved-config.json` (the full effective configuration) into the
//! output directory. Exit codes: 2 configuration, 3 data, 4 numeric abort,
//! 5 checkpoint, 6 plotting.

use crate::checkpoint;
use crate::config::{NetvDirection, RunConfig};
use crate::data::{load_images, load_labels, make_view, DatasetView};
use crate::encoder::{build_manifest, ArchId};
use crate::error::{Error, Result};
use crate::knn::evaluate;
use crate::metrics::CsvSink;
use crate::params::SampleMode;
use crate::plot::plot_file;
use crate::rate::PairwiseScope;
use crate::trainer;
use clap::{Args, Parser, Subcommand};
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "minmax-bnn",
    about = "Train a stochastic feature encoder as a two-player rate-reduction game and evaluate it by kNN"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run the alternating training loop and write metrics, checkpoints and
    /// the resolved configuration to the output directory
    Train(Box<TrainArgs>),
    /// Load a checkpoint and print one evaluation report as a JSON line
    Eval(EvalArgs),
    /// Render the accuracy chart from a metrics CSV
    Plot(PlotArgs),
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config file; any flag below overrides its value
    #[arg(long)]
    config: Option<PathBuf>,

    #[arg(long)]
    train_images: Option<PathBuf>,
    #[arg(long)]
    train_labels: Option<PathBuf>,
    #[arg(long)]
    test_images: Option<PathBuf>,
    #[arg(long)]
    test_labels: Option<PathBuf>,
    /// Comma-separated original class ids, e.g. 0,1,2
    #[arg(long, value_delimiter = ',')]
    classes: Option<Vec<u8>>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,

    /// Encoder architecture: mlp or conv-res-lite
    #[arg(long)]
    arch: Option<ArchId>,
    #[arg(long)]
    feature_dim: Option<usize>,

    #[arg(long)]
    eps_sq: Option<f64>,
    /// per_class or whole_batch
    #[arg(long)]
    pairwise_scope: Option<PairwiseScope>,

    #[arg(long)]
    numsteps: Option<u64>,
    #[arg(long)]
    ns: Option<u64>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    beta1: Option<f64>,
    #[arg(long)]
    beta2: Option<f64>,
    #[arg(long)]
    adam_epsilon: Option<f64>,
    #[arg(long)]
    batch_per_class: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma_init: Option<f64>,
    #[arg(long)]
    init_std: Option<f64>,
    /// min (descend) or max (ascend)
    #[arg(long)]
    netv_direction: Option<NetvDirection>,
    #[arg(long)]
    detach_generator_for_d: Option<bool>,
    /// fresh, sigma_zero or noise_zero
    #[arg(long)]
    sample_mode: Option<SampleMode>,

    #[arg(long)]
    k_nn: Option<usize>,
    #[arg(long)]
    eval_every: Option<u64>,
    #[arg(long)]
    checkpoint_every: Option<u64>,
    #[arg(long)]
    timing: Option<bool>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Args)]
struct EvalArgs {
    /// Checkpoint directory written by `train`
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    train_images: PathBuf,
    #[arg(long)]
    train_labels: PathBuf,
    #[arg(long)]
    test_images: PathBuf,
    #[arg(long)]
    test_labels: PathBuf,
    /// Comma-separated original class ids
    #[arg(long, value_delimiter = ',', default_value = "0,1,2,3,4,5,6,7,8,9")]
    classes: Vec<u8>,
    #[arg(long)]
    train_per_class: Option<usize>,
    #[arg(long)]
    test_per_class: Option<usize>,
    #[arg(long, default_value_t = 5)]
    k_nn: usize,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 0)]
    draw_id: u64,
    /// fresh, sigma_zero or noise_zero
    #[arg(long, default_value = "fresh")]
    sample_mode: SampleMode,
}

#[derive(Args)]
struct PlotArgs {
    /// metrics.csv written by `train`
    #[arg(long)]
    metrics: PathBuf,
    /// Output SVG path
    #[arg(long)]
    out: PathBuf,
}

fn merge(mut cfg: RunConfig, a: &TrainArgs) -> RunConfig {
    macro_rules! set {
        ($($field:ident),+ $(,)?) => {
            $(if let Some(v) = &a.$field {
                cfg.$field = v.clone();
            })+
        };
    }
    macro_rules! set_opt {
        ($($field:ident),+ $(,)?) => {
            $(if let Some(v) = &a.$field {
                cfg.$field = Some(v.clone());
            })+
        };
    }
    set_opt!(
        train_images,
        train_labels,
        test_images,
        test_labels,
        train_per_class,
        test_per_class,
    );
    set!(
        classes,
        arch,
        feature_dim,
        eps_sq,
        pairwise_scope,
        numsteps,
        ns,
        lr,
        beta1,
        beta2,
        adam_epsilon,
        batch_per_class,
        seed,
        sigma_init,
        init_std,
        netv_direction,
        detach_generator_for_d,
        sample_mode,
        k_nn,
        eval_every,
        checkpoint_every,
        timing,
        out_dir,
    );
    cfg
}

fn load_views(
    train_images: &Path,
    train_labels: &Path,
    test_images: &Path,
    test_labels: &Path,
    classes: &[u8],
    train_per_class: Option<usize>,
    test_per_class: Option<usize>,
) -> Result<(DatasetView, DatasetView)> {
    let tri = load_images(train_images)?;
    let trl = load_labels(train_labels)?;
    let tei = load_images(test_images)?;
    let tel = load_labels(test_labels)?;
    Ok((
        make_view(&tri, &trl, classes, train_per_class)?,
        make_view(&tei, &tel, classes, test_per_class)?,
    ))
}

fn cmd_train(args: &TrainArgs) -> Result<()> {
    let base = match &args.config {
        Some(path) => RunConfig::from_file(path)?,
        None => RunConfig::default(),
    };
    let cfg = merge(base, args);
    cfg.validate()?;

    let (train_view, test_view) = load_views(
        cfg.require_path("train_images")?,
        cfg.require_path("train_labels")?,
        cfg.require_path("test_images")?,
        cfg.require_path("test_labels")?,
        &cfg.classes,
        cfg.train_per_class,
        cfg.test_per_class,
    )?;

    std::fs::create_dir_all(&cfg.out_dir).map_err(|e| Error::io(&cfg.out_dir, e))?;
    let resolved = cfg.out_dir.join("resolved-config.json");
    std::fs::write(&resolved, cfg.to_json()).map_err(|e| Error::io(&resolved, e))?;

    let mut sink = CsvSink::create(&cfg.out_dir.join("metrics.csv"))?;
    let checkpoint_dir = cfg.out_dir.join("checkpoint");
    let (arch, feature_dim) = (cfg.arch, cfg.feature_dim);
    trainer::run(&cfg, &train_view, &test_view, &mut sink, |_, mu, var| {
        checkpoint::save(&checkpoint_dir, arch, feature_dim, mu, var)
    })?;
    Ok(())
}

fn cmd_eval(args: &EvalArgs) -> Result<()> {
    let ckpt = checkpoint::load(&args.checkpoint)?;
    let manifest = build_manifest(ckpt.arch, ckpt.feature_dim)?;
    let (train_view, test_view) = load_views(
        &args.train_images,
        &args.train_labels,
        &args.test_images,
        &args.test_labels,
        &args.classes,
        args.train_per_class,
        args.test_per_class,
    )?;
    let report = evaluate(
        &manifest,
        &ckpt.mu,
        &ckpt.var,
        &train_view,
        &test_view,
        args.k_nn,
        args.sample_mode,
        args.seed,
        args.draw_id,
        0,
    )?;
    let line = serde_json::to_string(&report)
        .map_err(|e| Error::Config(format!("report serialization: {e}")))?;
    println!("{line}");
    Ok(())
}

fn dispatch() -> Result<()> {
    match Cli::parse().cmd {
        Cmd::Train(args) => cmd_train(&args),
        Cmd::Eval(args) => cmd_eval(&args),
        Cmd::Plot(args) => plot_file(&args.metrics, &args.out),
    }
}

/// Parse arguments, run one command, exit with the contract's code.
pub fn run() -> ! {
    match dispatch() {
        Ok(()) => std::process::exit(0),
        Err(e) => {
            eprintln!("error: {e}");
            std::process::exit(e.exit_code());
        }
    }
}
