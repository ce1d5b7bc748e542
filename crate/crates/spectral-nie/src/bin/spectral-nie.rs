//! Command-line interface: dataset generation, training, evaluation,
//! interpolation scoring, benchmarking, and the analytic self-check suite.
//!
//! Exit codes: 0 success, 1 usage error, 2 data/schema error, 3 numerical
//! failure.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use spectral_nie::datagen::{
    gen_delay_dataset, gen_ie_dataset, split, Dataset, DatasetKind, DelayNetSpec, DownsampleMode,
};
use spectral_nie::io::{
    self, apply_setting, format_config, load_checkpoint, parse_config, read_dataset,
    save_checkpoint, write_dataset, RunConfig,
};
use spectral_nie::selfcheck;
use spectral_nie::train::{benchmark, evaluate, interpolation_eval, train, TrainConfig};
use spectral_nie::{exec, Error};

#[derive(Parser)]
#[command(
    name = "spectral-nie",
    version,
    about = "Spectral-domain learning of integral operators",
    disable_help_subcommand = true
)]
struct Cli {
    /// Cap the worker thread count (default: machine parallelism).
    #[arg(long, global = true)]
    threads: Option<usize>,

    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a dataset file.
    GenData(GenDataArgs),
    /// Train a model and write checkpoint + metrics.
    Train(TrainArgs),
    /// Evaluate a checkpoint on a dataset.
    Eval(EvalArgs),
    /// Evaluate on the full grid from downsampled initializations.
    Interp(InterpArgs),
    /// Train/evaluate a sweep of configs and write the metrics table.
    Benchmark(BenchmarkArgs),
    /// Run the analytic oracle suite and report PASS/FAIL per item.
    Selfcheck,
}

/// Config-file path plus `--set section.key=value` style overrides shared
/// by every data/model-touching subcommand. Common settings also have
/// dedicated flags below.
#[derive(Args, Clone)]
struct ConfigArgs {
    /// Run-config file ([data]/[model]/[solver]/[train] sections).
    #[arg(long)]
    config: Option<PathBuf>,

    /// Extra override, repeatable: --set train.lr=0.005
    #[arg(long = "set", value_name = "SECTION.KEY=VALUE")]
    sets: Vec<String>,

    /// Dataset kind: synthetic-ie | delay-net.
    #[arg(long)]
    kind: Option<String>,
    /// Equation kind of the generated data: fredholm | volterra.
    #[arg(long)]
    ie_kind: Option<String>,
    #[arg(long)]
    samples: Option<String>,
    #[arg(long)]
    points: Option<String>,
    #[arg(long)]
    dim: Option<String>,
    /// Delay-network node count.
    #[arg(long)]
    nodes: Option<String>,
    #[arg(long)]
    lambda: Option<String>,
    #[arg(long)]
    noise_sigma: Option<String>,
    #[arg(long)]
    seed: Option<String>,

    #[arg(long)]
    hidden: Option<String>,
    #[arg(long)]
    n_degree: Option<String>,
    #[arg(long)]
    lr: Option<String>,
    #[arg(long)]
    batch_size: Option<String>,
    #[arg(long)]
    max_epochs: Option<String>,
    #[arg(long)]
    patience_epochs: Option<String>,
    #[arg(long)]
    walltime_cap_s: Option<String>,
    #[arg(long)]
    init_points: Option<String>,
    #[arg(long)]
    mc_samples: Option<String>,
}

impl ConfigArgs {
    /// config file < SPECTRAL_NIE_SEED < flags.
    fn resolve(&self) -> Result<RunConfig, Error> {
        let mut cfg = match &self.config {
            Some(path) => parse_config(&std::fs::read_to_string(path)?)?,
            None => RunConfig::default(),
        };
        if let Ok(seed) = std::env::var("SPECTRAL_NIE_SEED") {
            let seed: u64 = seed
                .parse()
                .map_err(|_| Error::InvalidArg(format!("SPECTRAL_NIE_SEED='{seed}' is not a u64")))?;
            cfg.data.seed = seed;
            cfg.train.seed = seed;
        }
        let flag = |cfg: &mut RunConfig,
                    section: &str,
                    key: &str,
                    value: &Option<String>|
         -> Result<(), Error> {
            if let Some(v) = value {
                apply_setting(cfg, section, key, v)?;
            }
            Ok(())
        };
        flag(&mut cfg, "data", "kind", &self.kind)?;
        flag(&mut cfg, "data", "ie-kind", &self.ie_kind)?;
        flag(&mut cfg, "data", "samples", &self.samples)?;
        flag(&mut cfg, "data", "points", &self.points)?;
        flag(&mut cfg, "data", "dim", &self.dim)?;
        flag(&mut cfg, "data", "nodes", &self.nodes)?;
        flag(&mut cfg, "data", "lambda", &self.lambda)?;
        flag(&mut cfg, "data", "noise-sigma", &self.noise_sigma)?;
        flag(&mut cfg, "model", "hidden", &self.hidden)?;
        flag(&mut cfg, "model", "n-degree", &self.n_degree)?;
        flag(&mut cfg, "train", "lr", &self.lr)?;
        flag(&mut cfg, "train", "batch-size", &self.batch_size)?;
        flag(&mut cfg, "train", "max-epochs", &self.max_epochs)?;
        flag(&mut cfg, "train", "patience-epochs", &self.patience_epochs)?;
        flag(&mut cfg, "train", "walltime-cap-s", &self.walltime_cap_s)?;
        flag(&mut cfg, "train", "init-points", &self.init_points)?;
        flag(&mut cfg, "train", "mc-samples", &self.mc_samples)?;
        if let Some(v) = &self.seed {
            apply_setting(&mut cfg, "data", "seed", v)?;
            apply_setting(&mut cfg, "train", "seed", v)?;
        }
        // data lambda doubles as the learned template's lambda unless the
        // config file or --set override it separately
        for s in &self.sets {
            let (path, value) = s
                .split_once('=')
                .ok_or_else(|| Error::InvalidArg(format!("--set expects SECTION.KEY=VALUE, got '{s}'")))?;
            let (section, key) = path
                .split_once('.')
                .ok_or_else(|| Error::InvalidArg(format!("--set expects SECTION.KEY=VALUE, got '{s}'")))?;
            apply_setting(&mut cfg, section.trim(), key.trim(), value.trim())?;
        }
        Ok(cfg)
    }
}

#[derive(Args)]
struct GenDataArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Output dataset file.
    #[arg(long)]
    out: PathBuf,
    /// Overwrite an existing output file.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Input dataset file.
    #[arg(long)]
    data: PathBuf,
    /// Output directory (checkpoint, metrics.csv, resolved config).
    #[arg(long)]
    out: PathBuf,
    /// Overwrite existing outputs.
    #[arg(long)]
    force: bool,
}

#[derive(Args)]
struct EvalArgs {
    #[command(flatten)]
    config: ConfigArgs,
    /// Checkpoint manifest written by `train`.
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// Optional CSV output path.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct InterpArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    checkpoint: PathBuf,
    #[arg(long)]
    data: PathBuf,
    /// regular:K or irregular:P:SEED.
    #[arg(long)]
    downsample: String,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct BenchmarkArgs {
    #[command(flatten)]
    config: ConfigArgs,
    #[arg(long)]
    data: PathBuf,
    /// Comma-separated Monte Carlo sample counts, one benchmark row each.
    #[arg(long, default_value = "500,1000,2000")]
    mc_sweep: String,
    /// Output CSV path.
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    force: bool,
}

fn parse_downsample(text: &str) -> Result<DownsampleMode, Error> {
    let parts: Vec<&str> = text.split(':').collect();
    match parts.as_slice() {
        ["regular", k] => Ok(DownsampleMode::Regular {
            keep_every: k
                .parse()
                .map_err(|_| Error::InvalidArg(format!("bad keep-every '{k}'")))?,
        }),
        ["irregular", p, seed] => Ok(DownsampleMode::IrregularFraction {
            p: p
                .parse()
                .map_err(|_| Error::InvalidArg(format!("bad fraction '{p}'")))?,
            seed: seed
                .parse()
                .map_err(|_| Error::InvalidArg(format!("bad seed '{seed}'")))?,
        }),
        _ => Err(Error::InvalidArg(format!(
            "--downsample expects regular:K or irregular:P:SEED, got '{text}'"
        ))),
    }
}

fn refuse_existing(path: &Path, force: bool) -> Result<(), Error> {
    if path.exists() && !force {
        return Err(Error::InvalidArg(format!(
            "{} exists; pass --force to overwrite",
            path.display()
        )));
    }
    Ok(())
}

fn generate(cfg: &RunConfig) -> Result<Dataset, Error> {
    match cfg.data.kind {
        DatasetKind::SyntheticIe => gen_ie_dataset(
            cfg.data.ie_kind,
            cfg.data.samples,
            cfg.data.points,
            cfg.data.dim,
            cfg.data.lambda,
            cfg.data.noise_sigma,
            cfg.data.seed,
        ),
        DatasetKind::DelayNet => {
            let spec = DelayNetSpec::seeded(cfg.data.nodes, cfg.data.seed)?;
            gen_delay_dataset(&spec, cfg.data.samples, cfg.data.points, cfg.data.seed)
        }
    }
}

fn cmd_gen_data(args: &GenDataArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    refuse_existing(&args.out, args.force)?;
    let ds = generate(&cfg)?;
    write_dataset(&args.out, &ds)?;
    println!(
        "wrote {}: kind={:?} samples={} points={} dim={} noise_sigma={} seed={}",
        args.out.display(),
        ds.meta.kind,
        ds.samples.len(),
        ds.meta.n_points,
        ds.meta.dim,
        ds.meta.noise_sigma,
        ds.meta.seed
    );
    Ok(())
}

/// Align the model-side config with a loaded checkpoint.
fn adopt_checkpoint(cfg: &mut TrainConfig, n_modes: usize) {
    cfg.n_degree = n_modes - 1;
}

fn cmd_train(args: &TrainArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    let ds = read_dataset(&args.data)?;
    // validate config and build the model before any output is created so
    // a failing run leaves nothing partial behind
    cfg.train.validate()?;
    let model = cfg.train.init_model(ds.meta.dim)?;
    let (ds_train, ds_val, ds_test) = split(&ds, (0.8, 0.1, 0.1), cfg.train.seed)?;
    let (best, metrics) = train(model, &ds_train, &ds_val, &cfg.train)?;
    let test = evaluate(&best, &ds_test, &cfg.train)?;

    std::fs::create_dir_all(&args.out)?;
    let ckpt = args.out.join("checkpoint.json");
    let metrics_path = args.out.join("metrics.csv");
    let config_path = args.out.join("config.resolved");
    refuse_existing(&ckpt, args.force)?;
    refuse_existing(&metrics_path, args.force)?;
    save_checkpoint(&ckpt, &best, cfg.train.seed, metrics.best_epoch as u64)?;
    io::write_text(&metrics_path, &io::metrics_csv(&metrics.epochs))?;
    io::write_text(&config_path, &format_config(&cfg))?;
    println!(
        "trained {} epochs (stop: {}), best val MSE {:.6e} at epoch {}",
        metrics.epochs.len(),
        metrics.stop_reason,
        metrics.best_val_mse,
        metrics.best_epoch
    );
    println!(
        "test MSE {:.6e} +- {:.6e} | params {} | memory estimate {} bytes | walltime {:.1}s",
        test.mse_mean, test.mse_std, metrics.param_count, metrics.memory_bytes, metrics.walltime_s
    );
    println!("outputs in {}", args.out.display());
    Ok(())
}

fn eval_csv(report: &spectral_nie::train::EvalReport) -> String {
    format!(
        "mse_mean,mse_std,n_samples,walltime_s\n{:?},{:?},{},{:?}\n",
        report.mse_mean,
        report.mse_std,
        report.per_sample_mse.len(),
        report.walltime_s
    )
}

fn cmd_eval(args: &EvalArgs) -> Result<(), Error> {
    let mut cfg = args.config.resolve()?;
    let ds = read_dataset(&args.data)?;
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    if model.dim != ds.meta.dim {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint dim {} vs dataset dim {}",
            model.dim, ds.meta.dim
        )));
    }
    adopt_checkpoint(&mut cfg.train, model.n_modes);
    let report = evaluate(&model, &ds, &cfg.train)?;
    println!(
        "eval: MSE {:.6e} +- {:.6e} over {} samples",
        report.mse_mean,
        report.mse_std,
        report.per_sample_mse.len()
    );
    if let Some(out) = &args.out {
        io::write_text(out, &eval_csv(&report))?;
    }
    Ok(())
}

fn cmd_interp(args: &InterpArgs) -> Result<(), Error> {
    let mut cfg = args.config.resolve()?;
    let mode = parse_downsample(&args.downsample)?;
    let ds = read_dataset(&args.data)?;
    let (model, _) = load_checkpoint(&args.checkpoint)?;
    if model.dim != ds.meta.dim {
        return Err(Error::ShapeMismatch(format!(
            "checkpoint dim {} vs dataset dim {}",
            model.dim, ds.meta.dim
        )));
    }
    adopt_checkpoint(&mut cfg.train, model.n_modes);
    let report = interpolation_eval(&model, &ds, mode, &cfg.train)?;
    println!(
        "interp ({}): MSE {:.6e} +- {:.6e} over {} samples",
        args.downsample,
        report.mse_mean,
        report.mse_std,
        report.per_sample_mse.len()
    );
    if let Some(out) = &args.out {
        io::write_text(out, &eval_csv(&report))?;
    }
    Ok(())
}

fn cmd_benchmark(args: &BenchmarkArgs) -> Result<(), Error> {
    let cfg = args.config.resolve()?;
    refuse_existing(&args.out, args.force)?;
    let ds = read_dataset(&args.data)?;
    let sweep: Vec<usize> = args
        .mc_sweep
        .split(',')
        .map(|v| {
            v.trim()
                .parse()
                .map_err(|_| Error::InvalidArg(format!("bad mc count '{v}'")))
        })
        .collect::<Result<_, _>>()?;
    let configs: Vec<(String, TrainConfig)> = sweep
        .iter()
        .map(|&mc| {
            (
                format!("mc{mc}"),
                TrainConfig {
                    mc_samples: mc,
                    ..cfg.train.clone()
                },
            )
        })
        .collect();
    let rows = benchmark(&ds, &configs);
    for (name, row) in &rows {
        match row {
            Ok(r) => println!(
                "{name}: test MSE {:.6e} +- {:.6e}, interp {:.6e}, memory {} bytes",
                r.test_mse_mean, r.test_mse_std, r.interp_mse_mean, r.memory_bytes
            ),
            Err(e) => eprintln!("{name}: FAILED ({e})"),
        }
    }
    io::write_text(&args.out, &io::benchmark_csv(&rows))?;
    println!("wrote {}", args.out.display());
    Ok(())
}

fn cmd_selfcheck() -> Result<bool, Error> {
    let results = selfcheck::run_all();
    let mut all_ok = true;
    for r in &results {
        println!(
            "{} {} ({})",
            if r.passed { "PASS" } else { "FAIL" },
            r.name,
            r.detail
        );
        all_ok &= r.passed;
    }
    Ok(all_ok)
}

fn exit_code_for(err: &Error) -> u8 {
    match err {
        Error::InvalidArg(_) => 1,
        Error::Schema(_) | Error::Io(_) | Error::ShapeMismatch(_) => 2,
        Error::NonFinite { .. } | Error::SingularSystem | Error::Diverged { .. } => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            // help/version requests are successes; everything else is usage
            let _ = e.print();
            return if e.use_stderr() {
                ExitCode::from(1)
            } else {
                ExitCode::SUCCESS
            };
        }
    };
    if let Some(n) = cli.threads {
        if n == 0 {
            eprintln!("error: --threads must be >= 1");
            return ExitCode::from(1);
        }
        exec::set_threads(n);
    }
    let outcome = match &cli.cmd {
        Cmd::GenData(args) => cmd_gen_data(args),
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::Interp(args) => cmd_interp(args),
        Cmd::Benchmark(args) => cmd_benchmark(args),
        Cmd::Selfcheck => {
            return match cmd_selfcheck() {
                Ok(true) => ExitCode::SUCCESS,
                Ok(false) => ExitCode::from(3),
                Err(e) => {
                    eprintln!("error: {e}");
                    ExitCode::from(exit_code_for(&e))
                }
            }
        }
    };
    match outcome {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code_for(&e))
        }
    }
}
