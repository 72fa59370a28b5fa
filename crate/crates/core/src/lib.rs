//! Numerical core for flat blowup profiles of the complex Ginzburg-Landau
//! equation `u_t = Δu + (1 + iδ)|u|^{p-1}u` in one space dimension.
//!
//! The solution is followed in similarity variables as a modulated profile
//! `w = e^{iθ} f_b (1 + e_b q)`. The crate provides the Hermite machinery
//! for the moving Gaussian weight, the linear operators and their Mehler
//! semigroups, every term of the equation satisfied by `q`, and a
//! constrained solver with the shooting sweep over unstable modes.

pub mod error;
pub mod hermite;
pub mod linalg;
pub mod mesh;
pub mod model;
pub mod modulation;
pub mod operators;
pub mod params;
pub mod rhs;
pub mod shooting;
pub mod simulator;
pub mod verify;

pub use error::{Error, Result};
pub use hermite::{ModeDecomposition, SpectralBasis, Weight};
pub use mesh::{GridFunction, Mesh};
pub use model::{ComplexSplit, Frame};
pub use num_complex::Complex64;
pub use params::Parameters;
