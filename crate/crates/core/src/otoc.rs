//! Direct evaluation of the out-of-time-ordered correlator
//! `C(t) = Tr(rho W^dagger(t) V^dagger W(t) V)`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::linalg::{trace, CMatrix, C64};
use crate::model::{ensure_dim, DensityOperator, EigenUnitary, Hamiltonian, Propagator};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct OtocPoint {
    pub t: f64,
    pub value: C64,
}

/// Heisenberg-picture operator `U^dagger W U`.
pub fn heisenberg(op: &EigenUnitary, u: &Propagator) -> Result<CMatrix> {
    ensure_dim(op.dim(), u.dim())?;
    Ok(u.u.adjoint() * op.matrix() * &u.u)
}

pub fn otoc_direct(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
) -> Result<OtocPoint> {
    let d = rho.dim();
    ensure_dim(d, w.dim())?;
    ensure_dim(d, v.dim())?;
    ensure_dim(d, u.dim())?;
    let wt = heisenberg(w, u)?;
    let prod = rho.matrix() * wt.adjoint() * v.matrix().adjoint() * &wt * v.matrix();
    Ok(OtocPoint {
        t: u.t,
        value: trace(&prod),
    })
}

/// Everything needed to evaluate `C(t)` at arbitrary times.
#[derive(Debug, Clone)]
pub struct OtocModel {
    pub hamiltonian: Hamiltonian,
    pub rho: DensityOperator,
    pub w: EigenUnitary,
    pub v: EigenUnitary,
}

impl OtocModel {
    pub fn new(
        hamiltonian: Hamiltonian,
        rho: DensityOperator,
        w: EigenUnitary,
        v: EigenUnitary,
    ) -> Result<Self> {
        let d = hamiltonian.dim();
        ensure_dim(d, rho.dim())?;
        ensure_dim(d, w.dim())?;
        ensure_dim(d, v.dim())?;
        Ok(Self {
            hamiltonian,
            rho,
            w,
            v,
        })
    }

    pub fn dim(&self) -> usize {
        self.hamiltonian.dim()
    }

    pub fn propagator(&self, t: f64) -> Propagator {
        self.hamiltonian.propagator(t)
    }

    pub fn otoc_at(&self, t: f64) -> Result<OtocPoint> {
        otoc_direct(&self.rho, &self.w, &self.v, &self.propagator(t))
    }
}

/// `C(t)` for every requested time, in input order. Each `U` comes from the
/// cached eigendecomposition of `H`.
pub fn otoc_sweep(model: &OtocModel, times: &[f64]) -> Result<Vec<OtocPoint>> {
    times.par_iter().map(|&t| model.otoc_at(t)).collect()
}
