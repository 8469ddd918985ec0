//! Double-Bloch eigenfunctions of generalized Lamé operators.
//!
//! The crate builds closed-form eigenfunctions of the continuous and difference
//! B2 Calogero–Moser operators and of the Hietarinta operator and its
//! discretization, solves their Hermite–Bloch variety equations, and provides
//! numerical checks for every construction.

pub mod b2cm;
pub mod elliptic;
pub mod error;
pub mod hietarinta;
pub mod numeric;
pub mod qb2;
pub mod quasiinv;
pub mod spectrum;
pub mod thetaforms;

pub use error::{Error, Result};
pub use num_complex::Complex64 as C64;
