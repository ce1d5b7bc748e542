//! Analytic oracle suite: every check pits a library component against an
//! independently computed reference (Gauss-Legendre quadrature, closed-form
//! solutions, central finite differences). Shared by the `selfcheck` CLI
//! command and the acceptance tests.

use nalgebra::{DMatrix, DVector};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::chebyshev::{cheb_nodes, project_nodes, ChebCoeffs};
use crate::ie::{classical_to_spectral, picard_solve, EquationKind, IEProblem, SolverConfig};
use crate::neural::{
    init_params, layer_specs, loss_and_grad, Gradients, ProblemTemplate, TrainingSample,
};
use crate::spectral::{fredholm_integral, volterra_eval};

/// Outcome of one named check.
#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

fn check(name: &'static str, r: std::result::Result<String, String>) -> CheckResult {
    match r {
        Ok(detail) => CheckResult {
            name,
            passed: true,
            detail,
        },
        Err(detail) => CheckResult {
            name,
            passed: false,
            detail,
        },
    }
}

/// Gauss-Legendre nodes and weights on [-1, 1], by Newton iteration on the
/// Legendre recurrence. Exact (up to rounding) for polynomials of degree
/// <= 2n - 1, which makes it an independent oracle for spectral integrals.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        // Chebyshev-angle initial guess
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        for _ in 0..100 {
            // evaluate P_n and P_n' via the three-term recurrence
            let (mut p0, mut p1) = (1.0, x);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
            let dx = p1 / dp;
            x -= dx;
            if dx.abs() < 1e-15 {
                break;
            }
        }
        let (mut p0, mut p1) = (1.0, x);
        for k in 2..=n {
            let p2 = ((2 * k - 1) as f64 * x * p1 - (k - 1) as f64 * p0) / k as f64;
            p0 = p1;
            p1 = p2;
        }
        let dp = n as f64 * (x * p1 - p0) / (x * x - 1.0);
        nodes[n - 1 - i] = x;
        weights[n - 1 - i] = 2.0 / ((1.0 - x * x) * dp * dp);
    }
    (nodes, weights)
}

/// Quadrature oracle for int_a^b of a scalar function, exact for
/// polynomials of degree <= 2n - 1.
pub fn gl_integral(f: &dyn Fn(f64) -> f64, a: f64, b: f64, n: usize) -> f64 {
    let (nodes, weights) = gauss_legendre(n);
    let half = 0.5 * (b - a);
    let mid = 0.5 * (a + b);
    nodes
        .iter()
        .zip(&weights)
        .map(|(&x, &w)| w * f(mid + half * x))
        .sum::<f64>()
        * half
}

/// Random polynomial integrands of degree <= `deg_max`: both the
/// full-interval and the moving-limit spectral integrals must match the
/// Gauss-Legendre oracle to `tol`.
pub fn check_spectral_exactness(n_draws: usize, deg_max: usize, tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..n_draws {
        let deg = rng.random_range(0..=deg_max);
        let cs: Vec<f64> = (0..=deg).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let b = ChebCoeffs::from_scalar(&cs).unwrap();
        let f = |s: f64| b.eval(s).unwrap()[0];
        let quad_n = deg_max / 2 + 2;
        let full = gl_integral(&f, -1.0, 1.0, quad_n);
        worst = worst.max((fredholm_integral(&b)[0] - full).abs());
        for _ in 0..3 {
            let t = rng.random::<f64>() * 2.0 - 1.0;
            let partial = gl_integral(&f, -1.0, t, quad_n);
            worst = worst.max((volterra_eval(&b, t).unwrap()[0] - partial).abs());
        }
    }
    check(
        "spectral-integration-exactness",
        if worst <= tol {
            Ok(format!("max deviation {worst:.3e} <= {tol:.0e}"))
        } else {
            Err(format!("max deviation {worst:.3e} > {tol:.0e}"))
        },
    )
}

/// volterra_eval(b, 1) must equal fredholm_integral(b) to `tol`.
pub fn check_fredholm_volterra_consistency(n_draws: usize, tol: f64) -> CheckResult {
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut worst: f64 = 0.0;
    for _ in 0..n_draws {
        let n = rng.random_range(1..=24usize);
        let cs: Vec<f64> = (0..=n).map(|_| rng.random::<f64>() * 2.0 - 1.0).collect();
        let b = ChebCoeffs::from_scalar(&cs).unwrap();
        worst = worst.max((volterra_eval(&b, 1.0).unwrap()[0] - fredholm_integral(&b)[0]).abs());
    }
    check(
        "fredholm-volterra-consistency",
        if worst <= tol {
            Ok(format!("max deviation {worst:.3e} <= {tol:.0e}"))
        } else {
            Err(format!("max deviation {worst:.3e} > {tol:.0e}"))
        },
    )
}

/// Separable Fredholm equation K = t*s, lambda = 1/2, f = t: closed form
/// y = 1.5 t, checked uniformly at N = 8.
pub fn check_separable_fredholm(tol: f64) -> CheckResult {
    let run = || -> std::result::Result<f64, String> {
        let n = 8;
        let grid = cheb_nodes(n).map_err(|e| e.to_string())?;
        let f_vals = DMatrix::from_fn(n + 1, 1, |k, _| grid.points[k]);
        let free_term = project_nodes(&f_vals).map_err(|e| e.to_string())?;
        let problem = IEProblem {
            kind: EquationKind::Fredholm,
            lambda: 0.5,
            free_term,
            integrand: classical_to_spectral(
                |y: &DVector<f64>, t: f64, s: f64| y * (t * s),
                &grid,
            ),
        };
        let cfg = SolverConfig {
            tol: 1e-12,
            max_iter: 200,
            relaxation: 1.0,
        };
        let (u, report) = picard_solve(&problem, &grid, &cfg).map_err(|e| e.to_string())?;
        if !report.converged {
            return Err("solver did not converge".into());
        }
        let mut worst: f64 = 0.0;
        for i in 0..=100 {
            let t = -1.0 + 0.02 * i as f64;
            worst = worst.max((u.eval(t).map_err(|e| e.to_string())?[0] - 1.5 * t).abs());
        }
        Ok(worst)
    };
    check(
        "separable-fredholm-closed-form",
        match run() {
            Ok(worst) if worst <= tol => Ok(format!("uniform error {worst:.3e} <= {tol:.0e}")),
            Ok(worst) => Err(format!("uniform error {worst:.3e} > {tol:.0e}")),
            Err(e) => Err(e),
        },
    )
}

/// Volterra form of y' = y: K = 1, f = 1, lambda = 1, closed form e^{t+1},
/// checked uniformly at N = 16.
pub fn check_volterra_exponential(tol: f64) -> CheckResult {
    let run = || -> std::result::Result<f64, String> {
        let n = 16;
        let grid = cheb_nodes(n).map_err(|e| e.to_string())?;
        let free_term = ChebCoeffs::new(DMatrix::from_fn(n + 1, 1, |k, _| {
            if k == 0 {
                1.0
            } else {
                0.0
            }
        }))
        .map_err(|e| e.to_string())?;
        let problem = IEProblem {
            kind: EquationKind::Volterra,
            lambda: 1.0,
            free_term,
            integrand: classical_to_spectral(
                |y: &DVector<f64>, _t: f64, _s: f64| y.clone(),
                &grid,
            ),
        };
        let cfg = SolverConfig {
            tol: 1e-12,
            max_iter: 200,
            relaxation: 1.0,
        };
        let (u, report) = picard_solve(&problem, &grid, &cfg).map_err(|e| e.to_string())?;
        if !report.converged {
            return Err("solver did not converge".into());
        }
        let mut worst: f64 = 0.0;
        for i in 0..=100 {
            let t = -1.0 + 0.02 * i as f64;
            worst = worst.max((u.eval(t).map_err(|e| e.to_string())?[0] - (t + 1.0).exp()).abs());
        }
        Ok(worst)
    };
    check(
        "volterra-exponential-closed-form",
        match run() {
            Ok(worst) if worst <= tol => Ok(format!("uniform error {worst:.3e} <= {tol:.0e}")),
            Ok(worst) => Err(format!("uniform error {worst:.3e} > {tol:.0e}")),
            Err(e) => Err(e),
        },
    )
}

/// Max relative error between analytic and central finite-difference
/// gradients over `n_configs` random small networks/problems. The solver
/// runs a fixed iteration count so perturbed solves share an unroll depth.
pub fn gradient_check_max_rel_err(n_configs: usize, master_seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(master_seed);
    let mut worst: f64 = 0.0;
    for _ in 0..n_configs {
        let n = rng.random_range(2..=5usize);
        let dim = rng.random_range(1..=2usize);
        let grid = cheb_nodes(n).map_err(|e| e.to_string())?;
        let hidden = rng.random_range(3..=6usize);
        let params = init_params(
            &layer_specs(n + 1, dim, &[hidden]),
            n + 1,
            dim,
            rng.random(),
        )
        .map_err(|e| e.to_string())?;
        let template = ProblemTemplate {
            kind: if rng.random::<bool>() {
                EquationKind::Fredholm
            } else {
                EquationKind::Volterra
            },
            lambda: rng.random::<f64>() * 0.8 - 0.4,
        };
        let cfg = SolverConfig {
            tol: 1e-300,
            max_iter: 3,
            relaxation: 1.0,
        };
        let free = ChebCoeffs::new(DMatrix::from_fn(n + 1, dim, |_, _| {
            rng.random::<f64>() * 0.6 - 0.3
        }))
        .map_err(|e| e.to_string())?;
        let times: Vec<f64> = (0..7).map(|i| -1.0 + i as f64 / 3.0).collect();
        let targets = DMatrix::from_fn(times.len(), dim, |_, _| rng.random::<f64>() - 0.5);
        let batch = vec![TrainingSample {
            free_term: free,
            target_times: times,
            targets,
        }];
        let (_, analytic, _) =
            loss_and_grad(&params, &template, &batch, &grid, &cfg).map_err(|e| e.to_string())?;
        let h = 1e-5;
        let mut numeric = Gradients::zeros_like(&params);
        for l in 0..params.layers.len() {
            for idx in 0..params.layers[l].weight.len() {
                let mut plus = params.clone();
                plus.layers[l].weight.as_mut_slice()[idx] += h;
                let mut minus = params.clone();
                minus.layers[l].weight.as_mut_slice()[idx] -= h;
                let lp = loss_and_grad(&plus, &template, &batch, &grid, &cfg)
                    .map_err(|e| e.to_string())?
                    .0;
                let lm = loss_and_grad(&minus, &template, &batch, &grid, &cfg)
                    .map_err(|e| e.to_string())?
                    .0;
                numeric.layers[l].0.as_mut_slice()[idx] = (lp - lm) / (2.0 * h);
            }
            for idx in 0..params.layers[l].bias.len() {
                let mut plus = params.clone();
                plus.layers[l].bias[idx] += h;
                let mut minus = params.clone();
                minus.layers[l].bias[idx] -= h;
                let lp = loss_and_grad(&plus, &template, &batch, &grid, &cfg)
                    .map_err(|e| e.to_string())?
                    .0;
                let lm = loss_and_grad(&minus, &template, &batch, &grid, &cfg)
                    .map_err(|e| e.to_string())?
                    .0;
                numeric.layers[l].1[idx] = (lp - lm) / (2.0 * h);
            }
        }
        for ((aw, ab), (nw, nb)) in analytic.layers.iter().zip(&numeric.layers) {
            for (a, n) in aw.iter().zip(nw.iter()).chain(ab.iter().zip(nb.iter())) {
                let scale = a.abs().max(n.abs());
                if scale > 1e-8 {
                    worst = worst.max((a - n).abs() / scale);
                }
            }
        }
    }
    Ok(worst)
}

pub fn check_gradients(n_configs: usize, tol: f64) -> CheckResult {
    check(
        "gradient-finite-difference",
        match gradient_check_max_rel_err(n_configs, 2024) {
            Ok(worst) if worst < tol => Ok(format!("max relative error {worst:.3e} < {tol:.0e}")),
            Ok(worst) => Err(format!("max relative error {worst:.3e} >= {tol:.0e}")),
            Err(e) => Err(e),
        },
    )
}

/// Interpolation error of exp(t) at the collocation grid for truncation
/// degree N (uniform sampling of the projected series).
pub fn exp_projection_error(n: usize) -> f64 {
    let grid = cheb_nodes(n).unwrap();
    let vals = DMatrix::from_fn(n + 1, 1, |k, _| grid.points[k].exp());
    let coeffs = project_nodes(&vals).unwrap();
    let mut worst: f64 = 0.0;
    for i in 0..=200 {
        let t = -1.0 + 0.01 * i as f64;
        worst = worst.max((coeffs.eval(t).unwrap()[0] - t.exp()).abs());
    }
    worst
}

/// Projection error for exp(t) must decay monotonically over N in
/// {4, 6, 8, 10} and drop below `tol` at N = 10.
pub fn check_spectral_convergence(tol: f64) -> CheckResult {
    let errs: Vec<f64> = [4usize, 6, 8, 10].iter().map(|&n| exp_projection_error(n)).collect();
    let monotone = errs.windows(2).all(|w| w[1] < w[0]);
    check(
        "spectral-convergence-exp",
        if monotone && errs[3] < tol {
            Ok(format!(
                "errors {:.2e} > {:.2e} > {:.2e} > {:.2e} < {tol:.0e}",
                errs[0], errs[1], errs[2], errs[3]
            ))
        } else {
            Err(format!("errors {errs:?} (monotone: {monotone})"))
        },
    )
}

/// Classical Picard solve vs the Nystrom quadrature oracle on a random
/// hyperbolic-kernel draw (the datagen family), noise-free.
pub fn check_picard_vs_nystrom(tol: f64) -> CheckResult {
    let run = || -> std::result::Result<f64, String> {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        let coeffs: Vec<[f64; 5]> = (0..1)
            .map(|_| {
                let mut e = [0.0; 5];
                for v in &mut e {
                    *v = rng.random::<f64>() * 2.0 - 1.0;
                }
                e
            })
            .collect();
        let [a, bb, c, e, g] = coeffs[0];
        let kval = move |t: f64, s: f64| a * (bb * t + c * s).tanh() + e / (g * s).cosh();
        let lambda = 0.3;
        let n = 16;
        let grid = cheb_nodes(n).map_err(|err| err.to_string())?;
        let f_vals = DMatrix::from_fn(n + 1, 1, |k, _| (0.4 * grid.points[k]).sin() + 0.2);
        let free_term = project_nodes(&f_vals).map_err(|err| err.to_string())?;
        let problem = IEProblem {
            kind: EquationKind::Volterra,
            lambda,
            free_term,
            integrand: classical_to_spectral(
                move |y: &DVector<f64>, t: f64, s: f64| y * kval(t, s),
                &grid,
            ),
        };
        let cfg = SolverConfig {
            tol: 1e-12,
            max_iter: 200,
            relaxation: 1.0,
        };
        let (u, _) = picard_solve(&problem, &grid, &cfg).map_err(|err| err.to_string())?;
        let times: Vec<f64> = (0..41).map(|i| -1.0 + 0.05 * i as f64).collect();
        let f_eval = |s: f64| DVector::from_element(1, (0.4 * s).sin() + 0.2);
        let k_eval = move |t: f64, s: f64| DMatrix::from_element(1, 1, kval(t, s));
        let oracle = crate::datagen::nystrom_solve(
            EquationKind::Volterra,
            lambda,
            &f_eval,
            &k_eval,
            200,
            &times,
        )
        .map_err(|err| err.to_string())?;
        let mut worst: f64 = 0.0;
        for (i, &t) in times.iter().enumerate() {
            worst = worst
                .max((u.eval(t).map_err(|err| err.to_string())?[0] - oracle.values[(i, 0)]).abs());
        }
        Ok(worst)
    };
    check(
        "picard-vs-nystrom-oracle",
        match run() {
            Ok(worst) if worst <= tol => Ok(format!("uniform gap {worst:.3e} <= {tol:.0e}")),
            Ok(worst) => Err(format!("uniform gap {worst:.3e} > {tol:.0e}")),
            Err(e) => Err(e),
        },
    )
}

/// The full suite in a fixed order; desk-scale (a few seconds).
pub fn run_all() -> Vec<CheckResult> {
    vec![
        check_spectral_exactness(100, 20, 1e-10),
        check_fredholm_volterra_consistency(1000, 1e-12),
        check_separable_fredholm(1e-6),
        check_volterra_exponential(1e-4),
        check_gradients(5, 1e-4),
        check_spectral_convergence(1e-8),
        check_picard_vs_nystrom(1e-3),
    ]
}
