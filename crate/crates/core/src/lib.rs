//! Numerics for the quasiprobability behind out-of-time-ordered correlators.
//!
//! The crate computes the correlator `C(t)` directly, builds the combined
//! quasiprobability amplitude and the complex distribution `P(W, W')` over
//! products of unitary eigenvalues, checks that the mixed second derivative of
//! its characteristic function reproduces `C(t)`, and simulates weak-measurement
//! and interferometric schemes that recover the amplitude from synthetic data.

pub mod error;
pub mod linalg;
pub mod model;
pub mod otoc;
pub mod protocol;
pub mod quasiprob;
pub mod random;
pub mod selftest;

pub use error::{Error, Result};
pub use linalg::{Axis, CMatrix, CVector, C64};
pub use model::{DensityOperator, EigenUnitary, Hamiltonian, OutcomeIndex, Propagator};
pub use otoc::{OtocModel, OtocPoint};
