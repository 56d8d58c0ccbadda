//! Aging continuous-time random walk limits.
//!
//! `Y_t = A(E_t)` where `A` is a Lévy process and `E_t` the inverse of an
//! independent stable subordinator. The aged increment
//! `Y^{t0}_t = Y_{t+t0} - Y_{t0}` is simulated directly, evaluated through its
//! generalized-beta-prime convolution law, and propagated by an aged
//! fractional Fokker-Planck solver.

pub mod aging;
pub mod cli;
pub mod dist;
pub mod error;
pub mod ffpe;
pub mod frac_calc;
pub mod mc_stats;
pub mod process;
pub mod quad;
pub mod special_fn;
pub mod tol;

#[cfg(test)]
mod testutil;

pub use error::{Error, Result};
pub use special_fn::AlphaScale;
