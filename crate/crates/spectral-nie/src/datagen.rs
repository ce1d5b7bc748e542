//! Experiment data generation: integral-equation trajectories with
//! hyperbolic-function kernels solved by an independent Nystrom
//! (quadrature) oracle, a delay-coupled network integrator, and
//! downsampling / splitting utilities. All generators are bit-reproducible
//! per seed; per-sample RNG streams are derived from (seed, index) so
//! parallel and serial generation agree.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::chebyshev::{ChebCoeffs, TimeMap};
use crate::error::{Error, Result};
use crate::exec;
use crate::ie::EquationKind;

/// SplitMix64 step, used to derive independent per-sample seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed
        .wrapping_add(0x9e3779b97f4a7c15)
        .wrapping_add(index.wrapping_mul(0xbf58476d1ce4e5b9));
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
    z ^ (z >> 31)
}

/// Timestamped d-channel observations; `values` has one row per time.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub values: DMatrix<f64>,
}

impl Trajectory {
    pub fn new(times: Vec<f64>, values: DMatrix<f64>) -> Result<Self> {
        if times.len() < 2 {
            return Err(Error::InvalidArg("trajectory needs at least 2 points".into()));
        }
        if times.len() != values.nrows() {
            return Err(Error::ShapeMismatch(format!(
                "{} times vs {} value rows",
                times.len(),
                values.nrows()
            )));
        }
        if !times.windows(2).all(|w| w[1] > w[0]) {
            return Err(Error::InvalidArg("times must be strictly increasing".into()));
        }
        if !values.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("trajectory values"));
        }
        Ok(Self { times, values })
    }

    pub fn dim(&self) -> usize {
        self.values.ncols()
    }

    pub fn time_map(&self) -> Result<TimeMap> {
        TimeMap::new(self.times[0], *self.times.last().unwrap())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    SyntheticIe,
    DelayNet,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "generator", rename_all = "kebab-case")]
pub enum GeneratorParams {
    SyntheticIe {
        ie_kind: EquationKind,
        lambda_requested: f64,
        lambda_effective: f64,
        /// Per kernel entry (i, j): [a, b, c, e, g] of
        /// a*tanh(b*t + c*s) + e*sech(g*s), drawn uniform in [-1, 1].
        kernel_coeffs: Vec<Vec<[f64; 5]>>,
        /// Per-mode scale of the random degree-3 Chebyshev free terms.
        free_term_scales: [f64; 4],
        n_quad: usize,
    },
    DelayNet {
        n_nodes: usize,
        decay: f64,
        coupling_scale: f64,
        max_delay: f64,
        stimulus_amplitude: f64,
        stimulus_onset: f64,
        step: f64,
        /// Simplified tanh-coupled delay network, not an external brain
        /// simulator; declared here so downstream readers know.
        note: String,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetMeta {
    pub kind: DatasetKind,
    pub dim: usize,
    pub n_points: usize,
    pub t_min: f64,
    pub t_max: f64,
    pub noise_sigma: f64,
    pub seed: u64,
    pub params: GeneratorParams,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Dataset {
    pub samples: Vec<Trajectory>,
    pub meta: DatasetMeta,
}

/// Floater-Hormann rational barycentric weights (blending degree `d`),
/// stable on uniform grids where the classical polynomial weights blow up.
fn fh_weights(x: &[f64], d: usize) -> Vec<f64> {
    let n = x.len();
    let d = d.min(n - 1);
    let mut w = vec![0.0; n];
    for k in 0..n {
        let i_min = k.saturating_sub(d);
        let i_max = k.min(n - 1 - d);
        let mut sum = 0.0;
        for i in i_min..=i_max {
            let mut prod = 1.0;
            for j in i..=i + d {
                if j != k {
                    prod /= (x[k] - x[j]).abs();
                }
            }
            sum += prod;
        }
        w[k] = if (k + d) % 2 == 1 { -sum } else { sum };
    }
    w
}

fn barycentric_eval(x: &[f64], y: &[f64], w: &[f64], t: f64) -> f64 {
    let mut num = 0.0;
    let mut den = 0.0;
    for k in 0..x.len() {
        let diff = t - x[k];
        if diff.abs() < 1e-14 {
            return y[k];
        }
        let c = w[k] / diff;
        num += c * y[k];
        den += c;
    }
    num / den
}

/// Solve the linear integral equation y = f + lambda * int K(t,s) y(s) ds
/// on [-1, 1] by trapezoid quadrature (collocating at the quadrature grid)
/// and evaluate at `times` (also in [-1, 1]) by barycentric interpolation.
/// Fredholm builds one dense system; Volterra marches causally.
pub fn nystrom_solve(
    kind: EquationKind,
    lambda: f64,
    f: &dyn Fn(f64) -> DVector<f64>,
    kernel: &dyn Fn(f64, f64) -> DMatrix<f64>,
    n_quad: usize,
    times: &[f64],
) -> Result<Trajectory> {
    if n_quad < 8 {
        return Err(Error::InvalidArg("nystrom_solve needs n_quad >= 8".into()));
    }
    let grid: Vec<f64> = (0..n_quad)
        .map(|j| -1.0 + 2.0 * j as f64 / (n_quad - 1) as f64)
        .collect();
    let h = 2.0 / (n_quad - 1) as f64;
    let d = f(grid[0]).len();

    // solution at the quadrature grid, row per grid point
    let mut y = DMatrix::zeros(n_quad, d);
    match kind {
        EquationKind::Fredholm => {
            let trap = |j: usize| if j == 0 || j == n_quad - 1 { 0.5 * h } else { h };
            let size = n_quad * d;
            let mut a = DMatrix::identity(size, size);
            let mut rhs = DVector::zeros(size);
            for i in 0..n_quad {
                let fi = f(grid[i]);
                for r in 0..d {
                    rhs[i * d + r] = fi[r];
                }
                for j in 0..n_quad {
                    let k = kernel(grid[i], grid[j]);
                    for r in 0..d {
                        for c in 0..d {
                            a[(i * d + r, j * d + c)] -= lambda * trap(j) * k[(r, c)];
                        }
                    }
                }
            }
            let sol = a.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
            for i in 0..n_quad {
                for r in 0..d {
                    y[(i, r)] = sol[i * d + r];
                }
            }
        }
        EquationKind::Volterra => {
            let f0 = f(grid[0]);
            for r in 0..d {
                y[(0, r)] = f0[r];
            }
            for i in 1..n_quad {
                // trapezoid on [-1, t_i]: half weights at both ends
                let mut rhs = f(grid[i]);
                for j in 0..i {
                    let wj = if j == 0 { 0.5 * h } else { h };
                    let k = kernel(grid[i], grid[j]);
                    let yj = y.row(j).transpose();
                    rhs += lambda * wj * k * yj;
                }
                let block = DMatrix::identity(d, d)
                    - lambda * 0.5 * h * kernel(grid[i], grid[i]);
                let yi = block.lu().solve(&rhs).ok_or(Error::SingularSystem)?;
                for r in 0..d {
                    y[(i, r)] = yi[r];
                }
            }
        }
    }

    let w = fh_weights(&grid, 3);
    let mut out = DMatrix::zeros(times.len(), d);
    for (i, &t) in times.iter().enumerate() {
        for c in 0..d {
            let col: Vec<f64> = (0..n_quad).map(|j| y[(j, c)]).collect();
            out[(i, c)] = barycentric_eval(&grid, &col, &w, t);
        }
    }
    Trajectory::new(times.to_vec(), out)
}

/// Build the per-dataset kernel entry coefficients and the matrix kernel
/// evaluator K(t, s) with entries a*tanh(b t + c s) + e*sech(g s).
fn hyperbolic_kernel(
    coeffs: &[Vec<[f64; 5]>],
) -> impl Fn(f64, f64) -> DMatrix<f64> + Sync + '_ {
    let d = coeffs.len();
    move |t: f64, s: f64| {
        DMatrix::from_fn(d, d, |i, j| {
            let [a, b, c, e, g] = coeffs[i][j];
            a * (b * t + c * s).tanh() + e / (g * s).cosh()
        })
    }
}

/// Per-mode scale applied to the uniform draws of the degree-3 free terms.
pub const FREE_TERM_SCALES: [f64; 4] = [1.0, 0.5, 0.25, 0.125];

/// Generate synthetic integral-equation trajectories: a random
/// hyperbolic-function matrix kernel shared by the dataset, a random
/// degree-3 Chebyshev free term per sample, solved by the Nystrom oracle
/// on a uniform `n_points` grid over [0, 1] and perturbed with Gaussian
/// noise. `lambda` is rescaled so the quadrature operator norm estimate
/// stays at or below 0.5.
pub fn gen_ie_dataset(
    kind: EquationKind,
    n_samples: usize,
    n_points: usize,
    dim: usize,
    lambda: f64,
    noise_sigma: f64,
    seed: u64,
) -> Result<Dataset> {
    if n_samples == 0 {
        return Err(Error::InvalidArg("n_samples must be >= 1".into()));
    }
    if n_points < 2 || dim == 0 {
        return Err(Error::InvalidArg("need n_points >= 2 and dim >= 1".into()));
    }
    let (t_min, t_max) = (0.0, 1.0);
    let tmap = TimeMap::new(t_min, t_max)?;
    let times: Vec<f64> = (0..n_points)
        .map(|i| t_min + (t_max - t_min) * i as f64 / (n_points - 1) as f64)
        .collect();
    let cheb_times: Vec<f64> = times.iter().map(|&t| tmap.to_cheb(t)).collect();
    let n_quad = n_points.max(8);

    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 0));
    let kernel_coeffs: Vec<Vec<[f64; 5]>> = (0..dim)
        .map(|_| {
            (0..dim)
                .map(|_| {
                    let mut e = [0.0; 5];
                    for v in &mut e {
                        *v = rng.random::<f64>() * 2.0 - 1.0;
                    }
                    e
                })
                .collect()
        })
        .collect();
    let kernel = hyperbolic_kernel(&kernel_coeffs);

    // operator norm estimate on the quadrature grid: max over t of the
    // integrated matrix inf-norm
    let grid: Vec<f64> = (0..n_quad)
        .map(|j| -1.0 + 2.0 * j as f64 / (n_quad - 1) as f64)
        .collect();
    let h = 2.0 / (n_quad - 1) as f64;
    let mut est: f64 = 0.0;
    for &t in &grid {
        let mut acc = 0.0;
        for (j, &s) in grid.iter().enumerate() {
            let wj = if j == 0 || j == n_quad - 1 { 0.5 * h } else { h };
            let k = kernel(t, s);
            let inf_norm = (0..dim)
                .map(|r| (0..dim).map(|c| k[(r, c)].abs()).sum::<f64>())
                .fold(0.0f64, f64::max);
            acc += wj * inf_norm;
        }
        est = est.max(acc);
    }
    let mut lambda_eff = if lambda.abs() * est > 0.5 {
        0.5 / est
    } else {
        lambda
    };

    for attempt in 0..=3 {
        let results: Vec<Result<Trajectory>> = exec::map_range(n_samples, |idx| {
            let mut srng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 1 + idx as u64));
            let mut fc = DMatrix::zeros(4, dim);
            for mode in 0..4 {
                for c in 0..dim {
                    fc[(mode, c)] =
                        (srng.random::<f64>() * 2.0 - 1.0) * FREE_TERM_SCALES[mode];
                }
            }
            let free = ChebCoeffs::new(fc)?;
            let f_eval = |s: f64| free.eval(s).expect("in range");
            let mut traj =
                nystrom_solve(kind, lambda_eff, &f_eval, &kernel, n_quad, &cheb_times)?;
            for v in traj.values.iter_mut() {
                let z: f64 = srng.sample(StandardNormal);
                *v += noise_sigma * z;
            }
            traj.times = times.clone();
            Ok(traj)
        });
        match results.into_iter().collect::<Result<Vec<_>>>() {
            Ok(samples) => {
                let meta = DatasetMeta {
                    kind: DatasetKind::SyntheticIe,
                    dim,
                    n_points,
                    t_min,
                    t_max,
                    noise_sigma,
                    seed,
                    params: GeneratorParams::SyntheticIe {
                        ie_kind: kind,
                        lambda_requested: lambda,
                        lambda_effective: lambda_eff,
                        kernel_coeffs: kernel_coeffs.clone(),
                        free_term_scales: FREE_TERM_SCALES,
                        n_quad,
                    },
                };
                return Ok(Dataset { samples, meta });
            }
            Err(Error::SingularSystem) if attempt < 3 => {
                lambda_eff *= 0.5;
            }
            Err(e) => return Err(e),
        }
    }
    Err(Error::SingularSystem)
}

/// A tanh-coupled network with pairwise delays:
/// dx_i/dt = -decay*x_i + sum_j W_ij tanh(x_j(t - D_ij)) + stimulus(t).
#[derive(Debug, Clone)]
pub struct DelayNetSpec {
    pub n_nodes: usize,
    pub coupling: DMatrix<f64>,
    pub delays: DMatrix<f64>,
    pub decay: f64,
    pub stimulus_amplitude: f64,
    pub stimulus_onset: f64,
    pub step: f64,
    pub t_end: f64,
    pub coupling_scale: f64,
    pub max_delay: f64,
}

impl DelayNetSpec {
    /// Random coupling in [-scale/n, scale/n] and delays in [0, max_delay],
    /// drawn from a dedicated stream of `seed`.
    pub fn seeded(n_nodes: usize, seed: u64) -> Result<Self> {
        if n_nodes == 0 {
            return Err(Error::InvalidArg("n_nodes must be >= 1".into()));
        }
        let coupling_scale = 4.0;
        let max_delay = 0.5;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, u64::MAX));
        let bound = coupling_scale / n_nodes as f64;
        let coupling =
            DMatrix::from_fn(n_nodes, n_nodes, |_, _| (rng.random::<f64>() * 2.0 - 1.0) * bound);
        let delays = DMatrix::from_fn(n_nodes, n_nodes, |_, _| rng.random::<f64>() * max_delay);
        Ok(Self {
            n_nodes,
            coupling,
            delays,
            decay: 1.0,
            stimulus_amplitude: 0.5,
            stimulus_onset: 0.5,
            step: 0.005,
            t_end: 2.0,
            coupling_scale,
            max_delay,
        })
    }

    pub fn validate(&self) -> Result<()> {
        if self.step <= 0.0 || self.t_end <= 0.0 {
            return Err(Error::InvalidArg("step and t_end must be positive".into()));
        }
        if self.delays.iter().any(|&d| d < 0.0) {
            return Err(Error::InvalidArg("delays must be >= 0".into()));
        }
        if !self.coupling.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("coupling matrix"));
        }
        Ok(())
    }
}

fn delayed_state(history: &[DVector<f64>], x0: &DVector<f64>, step: f64, t: f64, j: usize) -> f64 {
    if t <= 0.0 {
        return x0[j];
    }
    let pos = t / step;
    let lo = pos.floor() as usize;
    if lo + 1 >= history.len() {
        return history.last().unwrap()[j];
    }
    let frac = pos - lo as f64;
    history[lo][j] * (1.0 - frac) + history[lo + 1][j] * frac
}

/// Integrate the delay network with fixed-step explicit Euler from a
/// constant initial history (drawn per sample) and record `n_points`
/// equispaced snapshots of all channels.
pub fn gen_delay_dataset(
    spec: &DelayNetSpec,
    n_samples: usize,
    n_points: usize,
    seed: u64,
) -> Result<Dataset> {
    spec.validate()?;
    if n_samples == 0 || n_points < 2 {
        return Err(Error::InvalidArg("need n_samples >= 1 and n_points >= 2".into()));
    }
    let n_steps = (spec.t_end / spec.step).round() as usize;
    let n = spec.n_nodes;
    let snapshot_idx: Vec<usize> = (0..n_points)
        .map(|i| ((i as f64 / (n_points - 1) as f64) * n_steps as f64).round() as usize)
        .collect();
    let times: Vec<f64> = snapshot_idx.iter().map(|&i| i as f64 * spec.step).collect();

    let results: Vec<Result<DMatrix<f64>>> = exec::map_range(n_samples, |idx| {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, idx as u64));
        let x0 = DVector::from_fn(n, |_, _| rng.random::<f64>() * 2.0 - 1.0);
        let mut history: Vec<DVector<f64>> = Vec::with_capacity(n_steps + 1);
        history.push(x0.clone());
        for step_idx in 0..n_steps {
            let t = step_idx as f64 * spec.step;
            let x = history.last().unwrap().clone();
            let mut dx = DVector::zeros(n);
            let stim = spec.stimulus_amplitude
                * (-((t - spec.stimulus_onset) / 0.1).powi(2)).exp();
            for i in 0..n {
                let mut coupling = 0.0;
                for j in 0..n {
                    let tau = t - spec.delays[(i, j)];
                    coupling +=
                        spec.coupling[(i, j)] * delayed_state(&history, &x0, spec.step, tau, j).tanh();
                }
                dx[i] = -spec.decay * x[i] + coupling + stim;
            }
            let next = &x + dx * spec.step;
            if next.iter().any(|v| !v.is_finite() || v.abs() > 1e6) {
                return Err(Error::Diverged { sample: idx });
            }
            history.push(next);
        }
        let mut values = DMatrix::zeros(n_points, n);
        for (row, &si) in snapshot_idx.iter().enumerate() {
            values.set_row(row, &history[si].transpose());
        }
        Ok(values)
    });

    let samples = results
        .into_iter()
        .map(|r| r.and_then(|values| Trajectory::new(times.clone(), values)))
        .collect::<Result<Vec<_>>>()?;
    let meta = DatasetMeta {
        kind: DatasetKind::DelayNet,
        dim: n,
        n_points,
        t_min: 0.0,
        t_max: *times.last().unwrap(),
        noise_sigma: 0.0,
        seed,
        params: GeneratorParams::DelayNet {
            n_nodes: n,
            decay: spec.decay,
            coupling_scale: spec.coupling_scale,
            max_delay: spec.max_delay,
            stimulus_amplitude: spec.stimulus_amplitude,
            stimulus_onset: spec.stimulus_onset,
            step: spec.step,
            note: "tanh-coupled delay network with Euler integration".into(),
        },
    };
    Ok(Dataset { samples, meta })
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DownsampleMode {
    /// Keep ceil(n / keep_every) points, equispaced by index rounding, with
    /// both endpoints always included (they anchor the time map).
    Regular { keep_every: usize },
    /// Keep a seeded random subset of interior points of size
    /// ceil(p * n) - 2 plus both endpoints.
    IrregularFraction { p: f64, seed: u64 },
}

fn keep_indices(n: usize, mode: DownsampleMode) -> Result<Vec<usize>> {
    match mode {
        DownsampleMode::Regular { keep_every } => {
            if keep_every == 0 {
                return Err(Error::InvalidArg("keep_every must be >= 1".into()));
            }
            let m = n.div_ceil(keep_every);
            if m < 2 {
                return Err(Error::InvalidArg("downsampling keeps fewer than 2 points".into()));
            }
            Ok((0..m)
                .map(|j| ((j * (n - 1)) as f64 / (m - 1) as f64).round() as usize)
                .collect())
        }
        DownsampleMode::IrregularFraction { p, seed } => {
            let keep = (p * n as f64).ceil() as usize;
            if keep < 2 || !(0.0..=1.0).contains(&p) {
                return Err(Error::InvalidArg(format!(
                    "fraction {p} keeps fewer than 2 of {n} points"
                )));
            }
            let mut interior: Vec<usize> = (1..n - 1).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            // partial Fisher-Yates for the first keep-2 slots
            let take = (keep - 2).min(interior.len());
            for i in 0..take {
                let j = rng.random_range(i..interior.len());
                interior.swap(i, j);
            }
            let mut idx: Vec<usize> = interior[..take].to_vec();
            idx.push(0);
            idx.push(n - 1);
            idx.sort_unstable();
            Ok(idx)
        }
    }
}

/// Thin out every trajectory of a dataset, keeping the endpoints.
pub fn downsample(ds: &Dataset, mode: DownsampleMode) -> Result<Dataset> {
    let mut samples = Vec::with_capacity(ds.samples.len());
    for traj in &ds.samples {
        let idx = keep_indices(traj.times.len(), mode)?;
        let times: Vec<f64> = idx.iter().map(|&i| traj.times[i]).collect();
        let mut values = DMatrix::zeros(idx.len(), traj.dim());
        for (row, &i) in idx.iter().enumerate() {
            values.set_row(row, &traj.values.row(i));
        }
        samples.push(Trajectory::new(times, values)?);
    }
    let mut meta = ds.meta.clone();
    meta.n_points = samples.first().map(|t| t.times.len()).unwrap_or(0);
    Ok(Dataset { samples, meta })
}

/// Seeded disjoint partition by sample into train / validation / test.
pub fn split(ds: &Dataset, fractions: (f64, f64, f64), seed: u64) -> Result<(Dataset, Dataset, Dataset)> {
    let (ft, fv, fs) = fractions;
    if ft <= 0.0 || fv <= 0.0 || fs <= 0.0 || (ft + fv + fs - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArg("fractions must be positive and sum to 1".into()));
    }
    let n = ds.samples.len();
    let mut idx: Vec<usize> = (0..n).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for i in (1..n).rev() {
        let j = rng.random_range(0..=i);
        idx.swap(i, j);
    }
    let n_train = (ft * n as f64).round() as usize;
    let n_val = (fv * n as f64).round() as usize;
    if n_train == 0 || n_val == 0 || n_train + n_val >= n {
        return Err(Error::InvalidArg("split produced an empty part".into()));
    }
    let pick = |range: &[usize]| Dataset {
        samples: range.iter().map(|&i| ds.samples[i].clone()).collect(),
        meta: ds.meta.clone(),
    };
    Ok((
        pick(&idx[..n_train]),
        pick(&idx[n_train..n_train + n_val]),
        pick(&idx[n_train + n_val..]),
    ))
}
