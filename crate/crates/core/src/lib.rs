//! Exact and Bethe-approximate permanents of non-negative square matrices.
//!
//! * [`exact`]: brute-force and Ryser permanents (ground truth).
//! * [`energy`]: Bethe and fractional Bethe free energies on the Birkhoff polytope.
//! * [`spa`]: sum-product message passing that minimizes the Bethe free energy.
//! * [`fw`]: Frank-Wolfe minimization of (fractional) Bethe free energies.
//! * [`covers`]: graph-cover liftings and degree-M Bethe permanents.
//! * [`analysis`]: vertex classification, Sinkhorn scaling and bound reports.
//!
//! Numeric routines are generic over [`Scalar`] (`f32` or `f64`); the type
//! aliases below fix the scalar to `f64`.

pub mod analysis;
pub mod covers;
pub mod energy;
pub mod error;
pub mod exact;
pub mod fw;
pub mod io;
pub mod matrix;
pub mod scalar;
pub mod spa;

pub use error::{Error, Result};
pub use matrix::{validate_support, DoublyStochastic, LogValue, NonNegMatrix, SupportReport};
pub use scalar::Scalar;

pub type Matrix = NonNegMatrix<f64>;
pub type Gamma = DoublyStochastic<f64>;
pub type LogVal = LogValue<f64>;
pub type Kappa = energy::FracCoefficients<f64>;

pub type MatrixF32 = NonNegMatrix<f32>;
pub type GammaF32 = DoublyStochastic<f32>;
pub type LogValF32 = LogValue<f32>;
