//! Chebyshev basis utilities: collocation nodes, series evaluation via the
//! Clenshaw recurrence, projection onto the basis (node-exact transform and
//! Monte Carlo estimate), and the affine map between data time stamps and
//! the reference interval [-1, 1].

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

/// Tolerance for clamping arguments that fall marginally outside [-1, 1]
/// due to roundoff in mapped endpoints.
pub const CLAMP_TOL: f64 = 1e-12;

/// Coefficients of a truncated Chebyshev series for a `dim`-channel
/// function on [-1, 1].
///
/// Full-sum convention: y(t) = sum_{j=0}^{N} coeffs[j] * C_j(t), with no
/// implicit halving of the j = 0 term. Stored as an (N+1) x dim matrix,
/// one column per channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ChebCoeffs {
    pub coeffs: DMatrix<f64>,
}

impl ChebCoeffs {
    pub fn new(coeffs: DMatrix<f64>) -> Result<Self> {
        if coeffs.nrows() == 0 || coeffs.ncols() == 0 {
            return Err(Error::InvalidArg(
                "coefficient matrix must have at least one mode and one channel".into(),
            ));
        }
        if !coeffs.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("Chebyshev coefficients"));
        }
        Ok(Self { coeffs })
    }

    pub fn zeros(n_modes: usize, dim: usize) -> Self {
        Self {
            coeffs: DMatrix::zeros(n_modes, dim),
        }
    }

    /// Single-channel series from a plain coefficient list.
    pub fn from_scalar(coeffs: &[f64]) -> Result<Self> {
        Self::new(DMatrix::from_column_slice(coeffs.len(), 1, coeffs))
    }

    pub fn n_modes(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Evaluate the series at `t` via the Clenshaw recurrence, one value
    /// per channel.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        let t = clamp_unit(t)?;
        let n = self.n_modes();
        let d = self.dim();
        let mut out = DVector::zeros(d);
        for c in 0..d {
            let mut b1 = 0.0;
            let mut b2 = 0.0;
            for j in (1..n).rev() {
                let next = 2.0 * t * b1 - b2 + self.coeffs[(j, c)];
                b2 = b1;
                b1 = next;
            }
            out[c] = t * b1 - b2 + self.coeffs[(0, c)];
        }
        Ok(out)
    }

    /// Evaluate at several points; row i of the result is `eval(ts[i])`.
    pub fn eval_grid(&self, ts: &[f64]) -> Result<DMatrix<f64>> {
        let mut out = DMatrix::zeros(ts.len(), self.dim());
        for (i, &t) in ts.iter().enumerate() {
            out.set_row(i, &self.eval(t)?.transpose());
        }
        Ok(out)
    }
}

fn clamp_unit(t: f64) -> Result<f64> {
    if t.is_nan() || t < -1.0 - CLAMP_TOL || t > 1.0 + CLAMP_TOL {
        return Err(Error::InvalidArg(format!(
            "evaluation point {t} outside [-1, 1]"
        )));
    }
    Ok(t.clamp(-1.0, 1.0))
}

/// Chebyshev extrema grid t_k = cos(k pi / N), k = 0..N, stored in
/// descending order (t_0 = 1, t_N = -1).
#[derive(Debug, Clone)]
pub struct CollocationGrid {
    pub n: usize,
    pub points: Vec<f64>,
}

/// Build the degree-`n` collocation grid. `n = 0` is rejected.
pub fn cheb_nodes(n: usize) -> Result<CollocationGrid> {
    if n == 0 {
        return Err(Error::InvalidArg("collocation grid needs n >= 1".into()));
    }
    let mut points: Vec<f64> = (0..=n).map(|k| (k as f64 * PI / n as f64).cos()).collect();
    // Pin the endpoints (and the midpoint for even n) to exact values.
    points[0] = 1.0;
    points[n] = -1.0;
    if n % 2 == 0 {
        points[n / 2] = 0.0;
    }
    Ok(CollocationGrid { n, points })
}

/// Row vector [C_0(t), ..., C_{m-1}(t)] by the three-term recurrence.
pub fn cheb_values(t: f64, m: usize) -> Vec<f64> {
    let mut row = vec![0.0; m];
    if m == 0 {
        return row;
    }
    row[0] = 1.0;
    if m > 1 {
        row[1] = t;
    }
    for j in 2..m {
        row[j] = 2.0 * t * row[j - 1] - row[j - 2];
    }
    row
}

/// Matrix E with E[i][j] = C_j(ts[i]); `series.eval_grid(ts) = E * coeffs`.
pub fn eval_matrix(ts: &[f64], n_modes: usize) -> DMatrix<f64> {
    DMatrix::from_row_iterator(
        ts.len(),
        n_modes,
        ts.iter().flat_map(|&t| cheb_values(t, n_modes)),
    )
}

/// Discrete Chebyshev transform matrix at the extrema grid: coefficients of
/// the degree-N interpolant are `P * values`, with the usual halved weights
/// on the k = 0 and k = N rows/columns.
pub fn projection_matrix(n: usize) -> DMatrix<f64> {
    let np1 = n + 1;
    let mut p = DMatrix::zeros(np1, np1);
    let corr = |k: usize| if k == 0 || k == n { 2.0 } else { 1.0 };
    for j in 0..np1 {
        for k in 0..np1 {
            let ang = (j * k) as f64 * PI / n as f64;
            p[(j, k)] = 2.0 / (n as f64 * corr(j) * corr(k)) * ang.cos();
        }
    }
    p
}

/// Interpolate node samples: row k of `values` holds the function value at
/// cos(k pi / N). Returns full-sum coefficients of the unique degree-N
/// interpolant; exact (to roundoff) for polynomials of degree <= N.
pub fn project_nodes(values: &DMatrix<f64>) -> Result<ChebCoeffs> {
    if values.nrows() < 2 {
        return Err(Error::ShapeMismatch(format!(
            "node value matrix has {} rows; need N+1 >= 2",
            values.nrows()
        )));
    }
    let n = values.nrows() - 1;
    ChebCoeffs::new(projection_matrix(n) * values)
}

/// Monte Carlo estimate of the Chebyshev projection of `f` up to mode
/// `k_max`: b_k = (2/pi) int f(s) C_k(s) / sqrt(1 - s^2) ds, sampled with
/// theta uniform on (0, pi) and s = cos(theta) so the endpoint weight
/// singularity cancels. The k = 0 coefficient is halved on output to match
/// the full-sum convention. Deterministic for a fixed seed.
pub fn project_mc<F>(f: F, dim: usize, k_max: usize, n_mc: usize, seed: u64) -> Result<ChebCoeffs>
where
    F: Fn(f64) -> DVector<f64>,
{
    if n_mc == 0 {
        return Err(Error::InvalidArg("project_mc needs n_mc >= 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut acc = DMatrix::zeros(k_max + 1, dim);
    for _ in 0..n_mc {
        let theta: f64 = rng.random::<f64>() * PI;
        let s = theta.cos();
        let fs = f(s);
        if fs.len() != dim {
            return Err(Error::ShapeMismatch(format!(
                "integrand returned {} channels, expected {dim}",
                fs.len()
            )));
        }
        let basis = cheb_values(s, k_max + 1);
        for k in 0..=k_max {
            for c in 0..dim {
                acc[(k, c)] += fs[c] * basis[k];
            }
        }
    }
    acc *= 2.0 / n_mc as f64;
    for c in 0..dim {
        acc[(0, c)] *= 0.5;
    }
    ChebCoeffs::new(acc)
}

/// Affine bijection between data time units [t_min, t_max] and [-1, 1].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TimeMap {
    pub t_min: f64,
    pub t_max: f64,
}

impl TimeMap {
    pub fn new(t_min: f64, t_max: f64) -> Result<Self> {
        if !(t_max > t_min) || !t_min.is_finite() || !t_max.is_finite() {
            return Err(Error::InvalidArg(format!(
                "degenerate time interval [{t_min}, {t_max}]"
            )));
        }
        Ok(Self { t_min, t_max })
    }

    pub fn to_cheb(&self, t: f64) -> f64 {
        // Exact at both endpoints: the ratio is 0 or 1 exactly.
        2.0 * ((t - self.t_min) / (self.t_max - self.t_min)) - 1.0
    }

    pub fn from_cheb(&self, x: f64) -> f64 {
        self.t_min + (x + 1.0) * 0.5 * (self.t_max - self.t_min)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    #[test]
    fn nodes_small() {
        assert_eq!(cheb_nodes(1).unwrap().points, vec![1.0, -1.0]);
        assert_eq!(cheb_nodes(2).unwrap().points, vec![1.0, 0.0, -1.0]);
        let g4 = cheb_nodes(4).unwrap();
        let r = 0.5f64.sqrt();
        for (a, b) in g4.points.iter().zip([1.0, r, 0.0, -r, -1.0]) {
            assert_abs_diff_eq!(a, &b, epsilon = 1e-15);
        }
        assert!(cheb_nodes(0).is_err());
    }

    #[test]
    fn nodes_monotone_in_range() {
        let g = cheb_nodes(17).unwrap();
        assert!(g.points.windows(2).all(|w| w[0] > w[1]));
        assert!(g.points.iter().all(|&p| (-1.0..=1.0).contains(&p)));
    }

    #[test]
    fn eval_matches_definition() {
        // C_2(0.5) = 2*0.25 - 1 = -0.5
        let c = ChebCoeffs::from_scalar(&[0.0, 0.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c.eval(0.5).unwrap()[0], -0.5, epsilon = 1e-15);
        // constant
        let c = ChebCoeffs::from_scalar(&[3.0, 0.0, 0.0]).unwrap();
        assert_abs_diff_eq!(c.eval(-0.73).unwrap()[0], 3.0, epsilon = 1e-15);
        // C_k(-1) = (-1)^k
        let c = ChebCoeffs::from_scalar(&[0.0, 1.0, 1.0]).unwrap();
        assert_abs_diff_eq!(c.eval(-1.0).unwrap()[0], 0.0, epsilon = 1e-15);
    }

    #[test]
    fn eval_rejects_out_of_range() {
        let c = ChebCoeffs::from_scalar(&[1.0]).unwrap();
        assert!(c.eval(1.0 + 1e-13).is_ok());
        assert!(c.eval(1.0 + 1e-9).is_err());
        assert!(c.eval(-1.0 - 1e-9).is_err());
    }

    #[test]
    fn eval_grid_identity_function() {
        let c = ChebCoeffs::from_scalar(&[0.0, 1.0]).unwrap();
        let m = c.eval_grid(&[-1.0, 0.0, 1.0]).unwrap();
        assert_eq!(m.as_slice(), &[-1.0, 0.0, 1.0]);
    }

    #[test]
    fn clenshaw_agrees_with_direct_sum() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for n in [1usize, 5, 17, 64] {
            let coeffs: Vec<f64> = (0..=n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let c = ChebCoeffs::from_scalar(&coeffs).unwrap();
            for _ in 0..20 {
                let t = rng.random::<f64>() * 2.0 - 1.0;
                let direct: f64 = cheb_values(t, n + 1)
                    .iter()
                    .zip(&coeffs)
                    .map(|(b, a)| a * b)
                    .sum();
                assert_abs_diff_eq!(c.eval(t).unwrap()[0], direct, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn project_nodes_exact_on_polynomials() {
        let grid = cheb_nodes(4).unwrap();
        // f = 3 C_2
        let vals = DMatrix::from_fn(5, 1, |k, _| {
            let t = grid.points[k];
            3.0 * (2.0 * t * t - 1.0)
        });
        let c = project_nodes(&vals).unwrap();
        let expect = [0.0, 0.0, 3.0, 0.0, 0.0];
        for (a, b) in c.coeffs.iter().zip(expect) {
            assert_abs_diff_eq!(a, &b, epsilon = 1e-12);
        }
        // constant
        let vals = DMatrix::from_element(5, 1, 5.0);
        let c = project_nodes(&vals).unwrap();
        assert_abs_diff_eq!(c.coeffs[(0, 0)], 5.0, epsilon = 1e-12);
        for j in 1..5 {
            assert_abs_diff_eq!(c.coeffs[(j, 0)], 0.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn project_nodes_roundtrip_random_polynomials() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for n in [3usize, 8, 21] {
            let grid = cheb_nodes(n).unwrap();
            let coeffs: Vec<f64> = (0..=n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
            let c = ChebCoeffs::from_scalar(&coeffs).unwrap();
            let vals = c.eval_grid(&grid.points).unwrap();
            let back = project_nodes(&vals).unwrap();
            for (a, b) in back.coeffs.iter().zip(&coeffs) {
                assert_abs_diff_eq!(a, b, epsilon = 1e-10);
            }
        }
    }

    #[test]
    fn exp_interpolation_error_small_and_decreasing() {
        let mut prev = f64::INFINITY;
        for n in [4usize, 6, 8, 10] {
            let grid = cheb_nodes(n).unwrap();
            let vals = DMatrix::from_fn(n + 1, 1, |k, _| grid.points[k].exp());
            let c = project_nodes(&vals).unwrap();
            let mut max_err: f64 = 0.0;
            for i in 0..50 {
                let t = -1.0 + 2.0 * i as f64 / 49.0;
                max_err = max_err.max((c.eval(t).unwrap()[0] - t.exp()).abs());
            }
            assert!(max_err < prev, "error not decreasing at N={n}");
            prev = max_err;
            if n == 10 {
                assert!(max_err < 1e-8, "N=10 error {max_err}");
            }
        }
    }

    #[test]
    fn project_mc_constant_exact_mode_zero() {
        let c = project_mc(|_| DVector::from_element(1, 1.0), 1, 3, 7, 42).unwrap();
        assert_abs_diff_eq!(c.coeffs[(0, 0)], 1.0, epsilon = 1e-15);
    }

    #[test]
    fn project_mc_estimates_c1_within_stderr() {
        let n_mc = 10_000;
        let c = project_mc(|s| DVector::from_element(1, s), 1, 1, n_mc, 3).unwrap();
        // sigma of a single 2*C_1(s)^2 draw is bounded by 2; allow 3 sigma/sqrt(n)
        let tol = 3.0 * 2.0 / (n_mc as f64).sqrt();
        assert!((c.coeffs[(1, 0)] - 1.0).abs() < tol);
    }

    #[test]
    fn project_mc_orthogonality_c3_below_k2() {
        // C_3 is orthogonal to C_0..C_2; estimates should hover near zero
        let f = |s: f64| DVector::from_element(1, 4.0 * s * s * s - 3.0 * s);
        let c = project_mc(f, 1, 2, 20_000, 9).unwrap();
        for k in 0..=2 {
            assert!(c.coeffs[(k, 0)].abs() < 0.05, "mode {k}: {}", c.coeffs[(k, 0)]);
        }
    }

    #[test]
    fn project_mc_unbiased_over_seeds() {
        let n_mc = 1000;
        let n_seeds = 100;
        let mut vals = Vec::with_capacity(n_seeds);
        for seed in 0..n_seeds as u64 {
            let c = project_mc(|s| DVector::from_element(1, s), 1, 1, n_mc, seed).unwrap();
            vals.push(c.coeffs[(1, 0)]);
        }
        let mean: f64 = vals.iter().sum::<f64>() / n_seeds as f64;
        let var: f64 =
            vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n_seeds - 1) as f64;
        let se = (var / n_seeds as f64).sqrt();
        assert!((mean - 1.0).abs() < 4.0 * se, "mean {mean}, se {se}");
    }

    #[test]
    fn project_mc_deterministic_per_seed() {
        let f = |s: f64| DVector::from_element(1, s.sin());
        let a = project_mc(f, 1, 4, 500, 77).unwrap();
        let b = project_mc(f, 1, 4, 500, 77).unwrap();
        assert_eq!(a.coeffs, b.coeffs);
    }

    #[test]
    fn time_map_basics() {
        let m = TimeMap::new(0.0, 1.0).unwrap();
        assert_eq!(m.to_cheb(0.5), 0.0);
        assert_eq!(m.to_cheb(0.0), -1.0);
        assert_eq!(m.to_cheb(1.0), 1.0);
        let id = TimeMap::new(-1.0, 1.0).unwrap();
        assert_abs_diff_eq!(id.to_cheb(0.3), 0.3, epsilon = 1e-15);
        let m = TimeMap::new(2.0, 6.0).unwrap();
        assert_eq!(m.to_cheb(5.0), 0.5);
        assert!(TimeMap::new(1.0, 1.0).is_err());
    }
}
