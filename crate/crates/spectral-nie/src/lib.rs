//! Spectral learning of integral operators: Chebyshev collocation,
//! closed-form spectral integration, Picard solvers for Fredholm/Volterra
//! equations of the second kind, and a small neural integrand model trained
//! by backpropagation through the unrolled solver.

pub mod chebyshev;
pub mod datagen;
pub mod error;
pub mod exec;
pub mod ie;
pub mod io;
pub mod neural;
pub mod selfcheck;
pub mod spectral;
pub mod train;

pub use error::{Error, Result};
