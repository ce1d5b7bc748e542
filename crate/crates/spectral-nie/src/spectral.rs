//! Spectral integration: closed-form map from the Chebyshev coefficients of
//! an integrand to the coefficients of its antiderivative, plus the Fredholm
//! (full interval) and Volterra (moving upper limit) integral values built
//! on top of it.

use nalgebra::{DMatrix, DVector};

use crate::chebyshev::{cheb_values, ChebCoeffs};
use crate::error::{Error, Result};

/// Antiderivative coefficients d_k for the series
/// F(t) = d_0 / 2 + sum_{k>=1} d_k C_k(t).
///
/// Note the half-d_0 convention here, unlike `ChebCoeffs`. The series is
/// normalized so F(-1) = 0 per channel. One more mode than the integrand
/// (integration raises the degree by one).
#[derive(Debug, Clone, PartialEq)]
pub struct AntiderivCoeffs {
    pub coeffs: DMatrix<f64>,
}

impl AntiderivCoeffs {
    pub fn n_modes(&self) -> usize {
        self.coeffs.nrows()
    }

    pub fn dim(&self) -> usize {
        self.coeffs.ncols()
    }

    /// Evaluate the half-d_0 series at `t`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>> {
        if t.is_nan() || !(-1.0 - 1e-12..=1.0 + 1e-12).contains(&t) {
            return Err(Error::InvalidArg(format!(
                "evaluation point {t} outside [-1, 1]"
            )));
        }
        let t = t.clamp(-1.0, 1.0);
        let basis = cheb_values(t, self.n_modes());
        let mut out = DVector::zeros(self.dim());
        for c in 0..self.dim() {
            let mut acc = 0.5 * self.coeffs[(0, c)];
            for k in 1..self.n_modes() {
                acc += self.coeffs[(k, c)] * basis[k];
            }
            out[c] = acc;
        }
        Ok(out)
    }
}

/// Map integrand coefficients b (full-sum convention) to antiderivative
/// coefficients d: with b_hat_0 = 2 b_0 and b_hat_k = b_k otherwise,
/// d_k = (b_hat_{k-1} - b_hat_{k+1}) / (2k) for k = 1..N+1 and
/// d_0 = 2 sum_{k>=1} (-1)^{k+1} d_k, which makes the half-d_0 series
/// vanish at t = -1. Applied channel-wise.
pub fn antiderivative(b: &ChebCoeffs) -> AntiderivCoeffs {
    let n = b.n_modes() - 1;
    let d = b.dim();
    let mut out = DMatrix::zeros(n + 2, d);
    for c in 0..d {
        let bhat = |k: usize| -> f64 {
            if k > n {
                0.0
            } else if k == 0 {
                2.0 * b.coeffs[(0, c)]
            } else {
                b.coeffs[(k, c)]
            }
        };
        let mut d0 = 0.0;
        let mut sign = 1.0;
        for k in 1..=n + 1 {
            let dk = (bhat(k - 1) - bhat(k + 1)) / (2.0 * k as f64);
            out[(k, c)] = dk;
            d0 += sign * dk;
            sign = -sign;
        }
        out[(0, c)] = 2.0 * d0;
    }
    AntiderivCoeffs { coeffs: out }
}

/// Integral over the whole interval: int_{-1}^{1} = 2 sum_{k>=0} d_{2k+1},
/// per channel.
pub fn fredholm_integral(b: &ChebCoeffs) -> DVector<f64> {
    let d = antiderivative(b);
    let mut out = DVector::zeros(d.dim());
    for c in 0..d.dim() {
        let mut acc = 0.0;
        let mut k = 1;
        while k < d.n_modes() {
            acc += d.coeffs[(k, c)];
            k += 2;
        }
        out[c] = 2.0 * acc;
    }
    out
}

/// Moving-limit integral: int_{-1}^{t} of the degree-N integrand, per
/// channel.
pub fn volterra_eval(b: &ChebCoeffs, t: f64) -> Result<DVector<f64>> {
    antiderivative(b).eval(t)
}

/// Weights of the linear functional b -> int_{-1}^{alpha} b for a single
/// channel: `volterra_weights(m, t)[j]` is the integral of C_j up to `t`,
/// so the Volterra value is the dot product with the coefficient column.
pub fn volterra_weights(n_modes: usize, t: f64) -> Result<DVector<f64>> {
    let mut w = DVector::zeros(n_modes);
    for j in 0..n_modes {
        let mut unit = ChebCoeffs::zeros(n_modes, 1);
        unit.coeffs[(j, 0)] = 1.0;
        w[j] = volterra_eval(&unit, t)?[0];
    }
    Ok(w)
}

/// Same as [`volterra_weights`] for the full-interval integral.
pub fn fredholm_weights(n_modes: usize) -> DVector<f64> {
    let mut w = DVector::zeros(n_modes);
    for j in 0..n_modes {
        let mut unit = ChebCoeffs::zeros(n_modes, 1);
        unit.coeffs[(j, 0)] = 1.0;
        w[j] = fredholm_integral(&unit)[0];
    }
    w
}
