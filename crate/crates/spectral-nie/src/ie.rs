//! Integral-equation problems of the second kind and their solution by
//! fixed-point (Picard) iteration entirely in Chebyshev coefficient space.

use nalgebra::{DMatrix, DVector, RowDVector};

use crate::chebyshev::{eval_matrix, projection_matrix, ChebCoeffs, CollocationGrid};
use crate::error::{Error, Result};
use crate::exec;
use crate::neural::{forward, MLPParams, Tape};
use crate::spectral::{fredholm_weights, volterra_weights};

/// Fredholm: fixed upper limit alpha(t) = 1. Volterra: moving limit
/// alpha(t) = t.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum EquationKind {
    Fredholm,
    Volterra,
}

/// Pointwise kernel G(y, t, s) -> R^d.
pub type KernelFn = dyn Fn(&DVector<f64>, f64, f64) -> DVector<f64> + Sync + Send;

/// Integrand in spectral form: given the coefficients of the current
/// iterate and a collocation point t_i, produce the coefficients of
/// s -> G(y(s), t_i, s).
pub enum IntegrandEvaluator {
    /// Classical kernel wrapped via node evaluation + projection.
    Classical {
        kernel: Box<KernelFn>,
        nodes: Vec<f64>,
        proj: DMatrix<f64>,
    },
    /// Learned network mapping coefficients directly to coefficients.
    Neural(MLPParams),
}

impl IntegrandEvaluator {
    pub fn spectral_integrand(&self, u: &ChebCoeffs, t: f64) -> Result<ChebCoeffs> {
        match self {
            IntegrandEvaluator::Classical {
                kernel,
                nodes,
                proj,
            } => {
                let d = u.dim();
                let mut vals = DMatrix::zeros(nodes.len(), d);
                for (k, &s) in nodes.iter().enumerate() {
                    let y = u.eval(s)?;
                    let g = kernel(&y, t, s);
                    if g.len() != d {
                        return Err(Error::ShapeMismatch(format!(
                            "kernel returned {} channels, expected {d}",
                            g.len()
                        )));
                    }
                    if !g.iter().all(|v| v.is_finite()) {
                        return Err(Error::non_finite("classical kernel output"));
                    }
                    vals.set_row(k, &g.transpose());
                }
                ChebCoeffs::new(proj * vals)
            }
            IntegrandEvaluator::Neural(params) => {
                let mut scratch = Tape::default();
                forward(params, u, t, &mut scratch)
            }
        }
    }
}

/// Wrap a pointwise kernel: per collocation point the induced function of s
/// is sampled at the grid nodes and projected, yielding the integrand
/// coefficients of the collocation system.
pub fn classical_to_spectral<F>(kernel: F, grid: &CollocationGrid) -> IntegrandEvaluator
where
    F: Fn(&DVector<f64>, f64, f64) -> DVector<f64> + Sync + Send + 'static,
{
    IntegrandEvaluator::Classical {
        kernel: Box::new(kernel),
        nodes: grid.points.clone(),
        proj: projection_matrix(grid.n),
    }
}

/// An integral equation y = f + lambda * int_{-1}^{alpha(t)} G(y, t, s) ds.
pub struct IEProblem {
    pub kind: EquationKind,
    pub lambda: f64,
    pub free_term: ChebCoeffs,
    pub integrand: IntegrandEvaluator,
}

/// Stopping parameters of the fixed-point iteration. `relaxation` < 1
/// damps the update for marginally contractive problems.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct SolverConfig {
    pub tol: f64,
    pub max_iter: usize,
    pub relaxation: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            tol: 1e-6,
            max_iter: 100,
            relaxation: 1.0,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.tol > 0.0) {
            return Err(Error::InvalidArg("solver tol must be > 0".into()));
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidArg("solver max_iter must be >= 1".into()));
        }
        if !(self.relaxation > 0.0 && self.relaxation <= 1.0) {
            return Err(Error::InvalidArg("relaxation must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// Iteration history of one fixed-point solve. `residuals[k]` is the
/// Frobenius norm of u_{k+1} - u_k over the coefficient matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct SolveReport {
    pub iterations: usize,
    pub residuals: Vec<f64>,
    pub converged: bool,
}

/// Precomputed linear operators of one collocation solve: evaluation at
/// the nodes, projection back to coefficients, and per-node integral
/// weight vectors.
pub(crate) struct SolveOps {
    pub c_mat: DMatrix<f64>,
    pub p_mat: DMatrix<f64>,
    pub weights: Vec<DVector<f64>>,
}

impl SolveOps {
    pub fn new(kind: EquationKind, grid: &CollocationGrid, n_modes: usize) -> Result<Self> {
        let weights = match kind {
            EquationKind::Fredholm => {
                let w = fredholm_weights(n_modes);
                vec![w; grid.points.len()]
            }
            EquationKind::Volterra => grid
                .points
                .iter()
                .map(|&t| volterra_weights(n_modes, t))
                .collect::<Result<Vec<_>>>()?,
        };
        Ok(Self {
            c_mat: eval_matrix(&grid.points, n_modes),
            p_mat: projection_matrix(grid.n),
            weights,
        })
    }

    /// One undamped Picard application: f + lambda * I[G(u)] assembled at
    /// the nodes and projected back to coefficients.
    pub fn apply(
        &self,
        integrand: &IntegrandEvaluator,
        lambda: f64,
        f_nodes: &DMatrix<f64>,
        u: &ChebCoeffs,
        nodes: &[f64],
    ) -> Result<DMatrix<f64>> {
        let rows: Vec<Result<RowDVector<f64>>> = exec::map_range(nodes.len(), |i| {
            let b = integrand.spectral_integrand(u, nodes[i])?;
            Ok(lambda * (self.weights[i].transpose() * &b.coeffs))
        });
        let mut y = f_nodes.clone();
        for (i, row) in rows.into_iter().enumerate() {
            let row = row?;
            y.set_row(i, &(y.row(i) + row));
        }
        Ok(&self.p_mat * y)
    }
}

/// Solve by fixed-point iteration from u_0 = f. Non-convergence within
/// `max_iter` is reported, not raised; a non-finite iterate is an error.
pub fn picard_solve(
    problem: &IEProblem,
    grid: &CollocationGrid,
    config: &SolverConfig,
) -> Result<(ChebCoeffs, SolveReport)> {
    config.validate()?;
    if problem.free_term.n_modes() != grid.n + 1 {
        return Err(Error::ShapeMismatch(format!(
            "free term has {} modes, grid expects {}",
            problem.free_term.n_modes(),
            grid.n + 1
        )));
    }
    let ops = SolveOps::new(problem.kind, grid, problem.free_term.n_modes())?;
    let f_nodes = &ops.c_mat * &problem.free_term.coeffs;
    let rho = config.relaxation;

    let mut u = problem.free_term.clone();
    let mut residuals = Vec::new();
    let mut converged = false;
    for _ in 0..config.max_iter {
        let w = ops.apply(
            &problem.integrand,
            problem.lambda,
            &f_nodes,
            &u,
            &grid.points,
        )?;
        let next = &u.coeffs * (1.0 - rho) + w * rho;
        if !next.iter().all(|v| v.is_finite()) {
            return Err(Error::non_finite("Picard iterate"));
        }
        let res = (&next - &u.coeffs).norm();
        residuals.push(res);
        u = ChebCoeffs { coeffs: next };
        if res <= config.tol {
            converged = true;
            break;
        }
    }
    let report = SolveReport {
        iterations: residuals.len(),
        residuals,
        converged,
    };
    Ok((u, report))
}

/// Frobenius distance between `u` and one undamped Picard application of
/// `u`; zero exactly at fixed points.
pub fn residual(problem: &IEProblem, grid: &CollocationGrid, u: &ChebCoeffs) -> Result<f64> {
    let ops = SolveOps::new(problem.kind, grid, u.n_modes())?;
    let f_nodes = &ops.c_mat * &problem.free_term.coeffs;
    let w = ops.apply(
        &problem.integrand,
        problem.lambda,
        &f_nodes,
        u,
        &grid.points,
    )?;
    Ok((&u.coeffs - w).norm())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chebyshev::cheb_nodes;
    use approx::assert_abs_diff_eq;

    fn scalar(cs: &[f64]) -> ChebCoeffs {
        ChebCoeffs::from_scalar(cs).unwrap()
    }

    fn identity_free_term(n: usize) -> ChebCoeffs {
        let mut cs = vec![0.0; n + 1];
        cs[1] = 1.0;
        scalar(&cs)
    }

    #[test]
    fn lambda_zero_returns_f_in_one_iteration() {
        let grid = cheb_nodes(6).unwrap();
        let f = identity_free_term(6);
        let problem = IEProblem {
            kind: EquationKind::Fredholm,
            lambda: 0.0,
            free_term: f.clone(),
            integrand: classical_to_spectral(|y, _, _| y.clone(), &grid),
        };
        let (u, report) = picard_solve(&problem, &grid, &SolverConfig::default()).unwrap();
        assert_eq!(report.iterations, 1);
        assert!(report.converged);
        for (a, b) in u.coeffs.iter().zip(f.coeffs.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-14);
        }
    }

    #[test]
    fn separable_fredholm_closed_form() {
        // y = t + (1/2) int t s y(s) ds  =>  y = 1.5 t
        let grid = cheb_nodes(8).unwrap();
        let problem = IEProblem {
            kind: EquationKind::Fredholm,
            lambda: 0.5,
            free_term: identity_free_term(8),
            integrand: classical_to_spectral(|y, t, s| y * (t * s), &grid),
        };
        let cfg = SolverConfig {
            tol: 1e-10,
            ..SolverConfig::default()
        };
        let (u, report) = picard_solve(&problem, &grid, &cfg).unwrap();
        assert!(report.converged);
        for i in 0..=50 {
            let t = -1.0 + 2.0 * i as f64 / 50.0;
            assert_abs_diff_eq!(u.eval(t).unwrap()[0], 1.5 * t, epsilon = 1e-6);
        }
    }

    #[test]
    fn separable_fredholm_residuals_contract() {
        let grid = cheb_nodes(8).unwrap();
        let problem = IEProblem {
            kind: EquationKind::Fredholm,
            lambda: 0.5,
            free_term: identity_free_term(8),
            integrand: classical_to_spectral(|y, t, s| y * (t * s), &grid),
        };
        let cfg = SolverConfig {
            tol: 1e-12,
            ..SolverConfig::default()
        };
        let (_, report) = picard_solve(&problem, &grid, &cfg).unwrap();
        for w in report.residuals.windows(2).skip(1) {
            if w[0] > 1e-14 {
                assert!(w[1] / w[0] <= 0.4, "ratio {}", w[1] / w[0]);
            }
        }
    }

    #[test]
    fn volterra_exponential() {
        // y = 1 + int_{-1}^t y(s) ds  <=>  y' = y, y(-1) = 1  =>  y = e^{t+1}
        let grid = cheb_nodes(16).unwrap();
        let mut f = vec![0.0; 17];
        f[0] = 1.0;
        let problem = IEProblem {
            kind: EquationKind::Volterra,
            lambda: 1.0,
            free_term: scalar(&f),
            integrand: classical_to_spectral(|y, _, _| y.clone(), &grid),
        };
        let cfg = SolverConfig {
            tol: 1e-12,
            ..SolverConfig::default()
        };
        let (u, report) = picard_solve(&problem, &grid, &cfg).unwrap();
        assert!(report.converged);
        assert_abs_diff_eq!(u.eval(1.0).unwrap()[0], 2.0f64.exp(), epsilon = 1e-4);
        for i in 0..=20 {
            let t = -1.0 + 2.0 * i as f64 / 20.0;
            assert_abs_diff_eq!(u.eval(t).unwrap()[0], (t + 1.0).exp(), epsilon = 1e-4);
        }
    }

    #[test]
    fn volterra_exponential_grid_refinement() {
        let mut prev = f64::INFINITY;
        for n in [8usize, 12, 16] {
            let grid = cheb_nodes(n).unwrap();
            let mut f = vec![0.0; n + 1];
            f[0] = 1.0;
            let problem = IEProblem {
                kind: EquationKind::Volterra,
                lambda: 1.0,
                free_term: scalar(&f),
                integrand: classical_to_spectral(|y, _, _| y.clone(), &grid),
            };
            let cfg = SolverConfig {
                tol: 1e-13,
                max_iter: 200,
                relaxation: 1.0,
            };
            let (u, _) = picard_solve(&problem, &grid, &cfg).unwrap();
            let mut err: f64 = 0.0;
            for i in 0..=40 {
                let t = -1.0 + 2.0 * i as f64 / 40.0;
                err = err.max((u.eval(t).unwrap()[0] - (t + 1.0).exp()).abs());
            }
            assert!(err < prev, "N={n} error {err} not below {prev}");
            prev = err;
        }
    }

    #[test]
    fn residual_examples() {
        let grid = cheb_nodes(6).unwrap();
        let f = identity_free_term(6);
        let problem = IEProblem {
            kind: EquationKind::Fredholm,
            lambda: 0.0,
            free_term: f.clone(),
            integrand: classical_to_spectral(|y, _, _| y.clone(), &grid),
        };
        assert_abs_diff_eq!(residual(&problem, &grid, &f).unwrap(), 0.0, epsilon = 1e-13);
        let mut shifted = f.clone();
        shifted.coeffs[(1, 0)] += 1e-3;
        assert_abs_diff_eq!(
            residual(&problem, &grid, &shifted).unwrap(),
            1e-3,
            epsilon = 1e-12
        );
    }

    #[test]
    fn converged_solve_has_small_fixed_point_residual() {
        let grid = cheb_nodes(8).unwrap();
        let problem = IEProblem {
            kind: EquationKind::Fredholm,
            lambda: 0.5,
            free_term: identity_free_term(8),
            integrand: classical_to_spectral(|y, t, s| y * (t * s), &grid),
        };
        let cfg = SolverConfig {
            tol: 1e-8,
            ..SolverConfig::default()
        };
        let (u, report) = picard_solve(&problem, &grid, &cfg).unwrap();
        assert!(report.converged);
        let r = residual(&problem, &grid, &u).unwrap();
        assert!(r <= 2.0 * cfg.tol / cfg.relaxation, "residual {r}");
    }

    #[test]
    fn classical_spectral_integrand_examples() {
        let grid = cheb_nodes(8).unwrap();
        let one = classical_to_spectral(|y, _, _| DVector::from_element(y.len(), 1.0), &grid);
        let u = identity_free_term(8);
        let b = one.spectral_integrand(&u, 0.3).unwrap();
        assert_abs_diff_eq!(b.coeffs[(0, 0)], 1.0, epsilon = 1e-13);
        for j in 1..=8 {
            assert_abs_diff_eq!(b.coeffs[(j, 0)], 0.0, epsilon = 1e-13);
        }

        let ident = classical_to_spectral(|y, _, _| y.clone(), &grid);
        let b = ident.spectral_integrand(&u, -0.2).unwrap();
        assert_abs_diff_eq!(b.coeffs[(1, 0)], 1.0, epsilon = 1e-13);

        // G = s * y with u = 1 gives the coefficients of s
        let s_times = classical_to_spectral(|y, _, s| y * s, &grid);
        let mut ones = vec![0.0; 9];
        ones[0] = 1.0;
        let b = s_times.spectral_integrand(&scalar(&ones), 0.0).unwrap();
        assert_abs_diff_eq!(b.coeffs[(1, 0)], 1.0, epsilon = 1e-13);
        assert_abs_diff_eq!(b.coeffs[(0, 0)], 0.0, epsilon = 1e-13);
    }

    #[test]
    fn deterministic_reports() {
        let grid = cheb_nodes(10).unwrap();
        let make = || IEProblem {
            kind: EquationKind::Volterra,
            lambda: 0.8,
            free_term: identity_free_term(10),
            integrand: classical_to_spectral(|y, t, s| y * (0.5 * (t + s).tanh()), &grid),
        };
        let cfg = SolverConfig::default();
        let (u1, r1) = picard_solve(&make(), &grid, &cfg).unwrap();
        let (u2, r2) = picard_solve(&make(), &grid, &cfg).unwrap();
        assert_eq!(u1.coeffs, u2.coeffs);
        assert_eq!(r1, r2);
    }
}
