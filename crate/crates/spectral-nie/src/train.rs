//! Training loop with validation-based early stopping, evaluation and
//! interpolation metrics, and the benchmark table used for resource
//! reporting.

use std::time::Instant;

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chebyshev::{cheb_nodes, eval_matrix, project_mc, ChebCoeffs, CollocationGrid};
use crate::datagen::{derive_seed, downsample, split, Dataset, DownsampleMode, Trajectory};
use crate::error::{Error, Result};
use crate::exec;
use crate::ie::{EquationKind, SolverConfig};
use crate::neural::{
    adam_step, init_params, layer_specs, loss_and_grad, taped_solve, AdamState, MLPParams,
    ProblemTemplate, TrainingSample,
};

/// Everything a training run needs besides the data and initial weights.
#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub kind: EquationKind,
    pub lambda: f64,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience_epochs: usize,
    pub walltime_cap_s: f64,
    /// Number of leading observations used to build each free term.
    pub n_init_points: usize,
    /// Monte Carlo sample count for trajectory projection diagnostics; also
    /// sizes the reported memory estimate.
    pub mc_samples: usize,
    pub seed: u64,
    pub solver: SolverConfig,
    pub hidden: Vec<usize>,
    /// Chebyshev truncation degree N; the solver works with N+1 modes.
    pub n_degree: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            kind: EquationKind::Volterra,
            lambda: 1.0,
            lr: 1e-3,
            batch_size: 32,
            max_epochs: 500,
            patience_epochs: 200,
            walltime_cap_s: 3600.0,
            n_init_points: 2,
            mc_samples: 1000,
            seed: 0,
            solver: SolverConfig::default(),
            hidden: vec![32, 32],
            n_degree: 16,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        self.solver.validate()?;
        if self.n_init_points < 2 {
            return Err(Error::InvalidArg("n_init_points must be >= 2".into()));
        }
        if self.patience_epochs < 1 {
            return Err(Error::InvalidArg("patience_epochs must be >= 1".into()));
        }
        if self.batch_size == 0 || self.mc_samples == 0 || self.n_degree == 0 {
            return Err(Error::InvalidArg(
                "batch_size, mc_samples and n_degree must be positive".into(),
            ));
        }
        if !(self.lr > 0.0) || !(self.walltime_cap_s > 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidArg(
                "lr and walltime_cap_s must be positive and lambda finite".into(),
            ));
        }
        Ok(())
    }

    pub fn n_modes(&self) -> usize {
        self.n_degree + 1
    }

    pub fn template(&self) -> ProblemTemplate {
        ProblemTemplate {
            kind: self.kind,
            lambda: self.lambda,
        }
    }

    /// Fresh seeded parameters matching this config and the dataset dim.
    pub fn init_model(&self, dim: usize) -> Result<MLPParams> {
        init_params(
            &layer_specs(self.n_modes(), dim, &self.hidden),
            self.n_modes(),
            dim,
            self.seed,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub train_mse: f64,
    pub val_mse: f64,
    pub walltime_s: f64,
}

/// Summary of a finished training run.
#[derive(Debug, Clone)]
pub struct Metrics {
    pub epochs: Vec<EpochRecord>,
    pub best_epoch: usize,
    pub best_val_mse: f64,
    pub test_mse_mean: f64,
    pub test_mse_std: f64,
    pub walltime_s: f64,
    pub memory_bytes: usize,
    pub param_count: usize,
    pub stop_reason: String,
}

/// Least-squares Chebyshev fit of degree min(p-1, 2) to the first `p`
/// observations, zero-padded to `n_modes` coefficients. The fit lives on
/// the trajectory's own mapped time interval.
pub fn make_free_term(traj: &Trajectory, p: usize, n_modes: usize) -> Result<ChebCoeffs> {
    if p < 2 || p > traj.times.len() {
        return Err(Error::InvalidArg(format!(
            "n_init_points {p} outside [2, {}]",
            traj.times.len()
        )));
    }
    let tmap = traj.time_map()?;
    let xs: Vec<f64> = traj.times[..p].iter().map(|&t| tmap.to_cheb(t)).collect();
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidArg("duplicate init times".into()));
    }
    let deg = (p - 1).min(2).min(n_modes - 1);
    let v = eval_matrix(&xs, deg + 1);
    let rhs = traj.values.rows(0, p).into_owned();
    let fit = v
        .svd(true, true)
        .solve(&rhs, 1e-12)
        .map_err(|_| Error::SingularSystem)?;
    let mut coeffs = DMatrix::zeros(n_modes, traj.dim());
    coeffs.rows_mut(0, deg + 1).copy_from(&fit);
    ChebCoeffs::new(coeffs)
}

/// Project a sampled trajectory onto the first `n_modes` Chebyshev modes by
/// Monte Carlo integration of its piecewise-linear interpolant. Diagnostic
/// companion of the training loss, which compares values, not coefficients.
pub fn project_trajectory(
    traj: &Trajectory,
    n_modes: usize,
    mc_samples: usize,
    seed: u64,
) -> Result<ChebCoeffs> {
    let tmap = traj.time_map()?;
    let xs: Vec<f64> = traj.times.iter().map(|&t| tmap.to_cheb(t)).collect();
    let interp = |x: f64| {
        let x = x.clamp(xs[0], *xs.last().unwrap());
        let hi = xs.partition_point(|&v| v < x).max(1).min(xs.len() - 1);
        let lo = hi - 1;
        let span = xs[hi] - xs[lo];
        let frac = if span > 0.0 { (x - xs[lo]) / span } else { 0.0 };
        (traj.values.row(lo) * (1.0 - frac) + traj.values.row(hi) * frac).transpose()
    };
    project_mc(interp, traj.dim(), n_modes - 1, mc_samples, seed)
}

/// Pair a free term built from `init`'s leading points with targets taken
/// from `target` (same trajectory for plain training; the full-grid
/// trajectory for interpolation scoring).
fn build_sample(
    init: &Trajectory,
    target: &Trajectory,
    p: usize,
    n_modes: usize,
) -> Result<TrainingSample> {
    let tmap = init.time_map()?;
    let free_term = make_free_term(init, p, n_modes)?;
    let target_times: Vec<f64> = target.times.iter().map(|&t| tmap.to_cheb(t)).collect();
    if target_times.iter().any(|&x| !(-1.0..=1.0).contains(&x)) {
        return Err(Error::InvalidArg(
            "target times fall outside the init trajectory's interval".into(),
        ));
    }
    Ok(TrainingSample {
        free_term,
        target_times,
        targets: target.values.clone(),
    })
}

fn build_samples(ds: &Dataset, p: usize, n_modes: usize) -> Result<Vec<TrainingSample>> {
    ds.samples
        .iter()
        .map(|t| build_sample(t, t, p, n_modes))
        .collect()
}

/// Per-sample MSE of the solved series against each sample's targets.
fn samples_mse(
    params: &MLPParams,
    template: &ProblemTemplate,
    samples: &[TrainingSample],
    grid: &CollocationGrid,
    solver: &SolverConfig,
) -> Result<Vec<f64>> {
    let results: Vec<Result<f64>> = exec::map_slice(samples, |s| {
        let (u, _, _) = taped_solve(params, template, &s.free_term, grid, solver)?;
        let pred = eval_matrix(&s.target_times, u.n_modes()) * &u.coeffs;
        let diff = pred - &s.targets;
        Ok(diff.norm_squared() / (diff.nrows() * diff.ncols()) as f64)
    });
    results.into_iter().collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn memory_estimate(mc_samples: usize, dim: usize, max_tape_bytes: usize) -> usize {
    mc_samples * (dim + 1) * 8 + max_tape_bytes
}

/// Seeded mini-batch training with early stopping on validation MSE.
/// Returns the best-validation parameters and the run metrics. A non-finite
/// loss aborts the run but keeps the last good checkpoint.
pub fn train(
    model: MLPParams,
    ds_train: &Dataset,
    ds_val: &Dataset,
    config: &TrainConfig,
) -> Result<(MLPParams, Metrics)> {
    config.validate()?;
    if ds_train.meta.dim != ds_val.meta.dim {
        return Err(Error::ShapeMismatch(format!(
            "train dim {} vs val dim {}",
            ds_train.meta.dim, ds_val.meta.dim
        )));
    }
    let n_modes = config.n_modes();
    let grid = cheb_nodes(config.n_degree)?;
    let template = config.template();
    let train_samples = build_samples(ds_train, config.n_init_points, n_modes)?;
    let val_samples = build_samples(ds_val, config.n_init_points, n_modes)?;

    let start = Instant::now();
    let mut params = model;
    let mut best = params.clone();
    let mut best_val = f64::INFINITY;
    let mut best_epoch = 0usize;
    let mut since_improvement = 0usize;
    let mut adam = AdamState::new(&params, config.lr);
    let mut epochs = Vec::new();
    let mut max_tape = 0usize;
    let mut stop_reason = "max_epochs".to_string();

    'epochs: for epoch in 1..=config.max_epochs {
        let mut order: Vec<usize> = (0..train_samples.len()).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(config.seed, epoch as u64));
        for i in (1..order.len()).rev() {
            let j = rng.random_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_loss = 0.0;
        let mut seen = 0usize;
        for chunk in order.chunks(config.batch_size) {
            let batch: Vec<TrainingSample> =
                chunk.iter().map(|&i| train_samples[i].clone()).collect();
            match loss_and_grad(&params, &template, &batch, &grid, &config.solver) {
                Ok((loss, grads, tape_bytes)) => {
                    adam_step(&mut params, &grads, &mut adam)?;
                    epoch_loss += loss * batch.len() as f64;
                    seen += batch.len();
                    max_tape = max_tape.max(tape_bytes);
                }
                Err(Error::NonFinite { .. }) | Err(Error::Diverged { .. }) => {
                    stop_reason = "non_finite".into();
                    break 'epochs;
                }
                Err(e) => return Err(e),
            }
        }
        let train_mse = epoch_loss / seen as f64;
        let val_mse = match samples_mse(&params, &template, &val_samples, &grid, &config.solver) {
            Ok(mses) => mean_std(&mses).0,
            Err(Error::NonFinite { .. }) => {
                stop_reason = "non_finite".into();
                break 'epochs;
            }
            Err(e) => return Err(e),
        };
        epochs.push(EpochRecord {
            epoch,
            train_mse,
            val_mse,
            walltime_s: start.elapsed().as_secs_f64(),
        });
        if val_mse < best_val - 1e-7 {
            best_val = val_mse;
            best_epoch = epoch;
            best = params.clone();
            since_improvement = 0;
        } else {
            since_improvement += 1;
            if since_improvement >= config.patience_epochs {
                stop_reason = "patience".into();
                break;
            }
        }
        if start.elapsed().as_secs_f64() >= config.walltime_cap_s {
            stop_reason = "walltime".into();
            break;
        }
    }

    if best_val.is_infinite() {
        // no completed epoch: hand back the initial parameters
        best = params;
    }
    let param_count = best.total_params();
    let metrics = Metrics {
        epochs,
        best_epoch,
        best_val_mse: best_val,
        test_mse_mean: f64::NAN,
        test_mse_std: f64::NAN,
        walltime_s: start.elapsed().as_secs_f64(),
        memory_bytes: memory_estimate(config.mc_samples, ds_train.meta.dim, max_tape),
        param_count,
        stop_reason,
    };
    Ok((best, metrics))
}

/// Mean and standard deviation of the per-sample MSE on a dataset, solving
/// each sample from its own data-derived free term.
#[derive(Debug, Clone)]
pub struct EvalReport {
    pub per_sample_mse: Vec<f64>,
    pub mse_mean: f64,
    pub mse_std: f64,
    pub walltime_s: f64,
}

pub fn evaluate(model: &MLPParams, ds: &Dataset, config: &TrainConfig) -> Result<EvalReport> {
    config.validate()?;
    let grid = cheb_nodes(config.n_degree)?;
    let samples = build_samples(ds, config.n_init_points, config.n_modes())?;
    let start = Instant::now();
    let per_sample = samples_mse(model, &config.template(), &samples, &grid, &config.solver)?;
    let (mse_mean, mse_std) = mean_std(&per_sample);
    Ok(EvalReport {
        per_sample_mse: per_sample,
        mse_mean,
        mse_std,
        walltime_s: start.elapsed().as_secs_f64(),
    })
}

/// Interpolation protocol: free terms come from the downsampled
/// trajectories, but the spectral solution (a polynomial, evaluable
/// anywhere) is scored against every point of the full grid.
pub fn interpolation_eval(
    model: &MLPParams,
    ds_full: &Dataset,
    mode: DownsampleMode,
    config: &TrainConfig,
) -> Result<EvalReport> {
    config.validate()?;
    let ds_down = downsample(ds_full, mode)?;
    let grid = cheb_nodes(config.n_degree)?;
    let samples: Vec<TrainingSample> = ds_down
        .samples
        .iter()
        .zip(&ds_full.samples)
        .map(|(init, full)| build_sample(init, full, config.n_init_points, config.n_modes()))
        .collect::<Result<_>>()?;
    let start = Instant::now();
    let per_sample = samples_mse(model, &config.template(), &samples, &grid, &config.solver)?;
    let (mse_mean, mse_std) = mean_std(&per_sample);
    Ok(EvalReport {
        per_sample_mse: per_sample,
        mse_mean,
        mse_std,
        walltime_s: start.elapsed().as_secs_f64(),
    })
}

/// One row of the benchmark table.
#[derive(Debug, Clone)]
pub struct BenchRow {
    pub name: String,
    pub params: usize,
    pub mc_samples: usize,
    pub memory_bytes: usize,
    pub walltime_s: f64,
    pub test_mse_mean: f64,
    pub test_mse_std: f64,
    pub interp_mse_mean: f64,
    pub interp_mse_std: f64,
}

/// Train + evaluate + interpolation-score one model per config on a fresh
/// 80/10/10 split of `ds`. A failing config yields an Err in its slot;
/// the other rows still run.
pub fn benchmark(ds: &Dataset, configs: &[(String, TrainConfig)]) -> Vec<(String, Result<BenchRow>)> {
    configs
        .iter()
        .map(|(name, config)| {
            let row = (|| -> Result<BenchRow> {
                let start = Instant::now();
                let (ds_train, ds_val, ds_test) = split(ds, (0.8, 0.1, 0.1), config.seed)?;
                let model = config.init_model(ds.meta.dim)?;
                let (trained, metrics) = train(model, &ds_train, &ds_val, config)?;
                let test = evaluate(&trained, &ds_test, config)?;
                let interp = interpolation_eval(
                    &trained,
                    &ds_test,
                    DownsampleMode::Regular { keep_every: 2 },
                    config,
                )?;
                Ok(BenchRow {
                    name: name.clone(),
                    params: metrics.param_count,
                    mc_samples: config.mc_samples,
                    memory_bytes: metrics.memory_bytes,
                    walltime_s: start.elapsed().as_secs_f64(),
                    test_mse_mean: test.mse_mean,
                    test_mse_std: test.mse_std,
                    interp_mse_mean: interp.mse_mean,
                    interp_mse_std: interp.mse_std,
                })
            })();
            (name.clone(), row)
        })
        .collect()
}
