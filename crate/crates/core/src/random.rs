//! Seeded generators for random test instances.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::linalg::{c, eig_hermitian, CMatrix, CVector, C64};

pub type InstanceRng = ChaCha8Rng;

pub fn rng_from_seed(seed: u64) -> InstanceRng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn gaussian_c64<R: Rng + ?Sized>(rng: &mut R) -> C64 {
    let re: f64 = rng.sample(StandardNormal);
    let im: f64 = rng.sample(StandardNormal);
    c(re, im)
}

/// Ginibre matrix: i.i.d. standard complex Gaussian entries.
pub fn random_complex_matrix<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    CMatrix::from_fn(dim, dim, |_, _| gaussian_c64(rng))
}

/// GUE-like Hermitian matrix `(G + G^dagger) / 2`.
pub fn random_hermitian<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = random_complex_matrix(dim, rng);
    (&g + g.adjoint()) * c(0.5, 0.0)
}

/// Haar-distributed unitary via QR of a Ginibre matrix with phase fix.
pub fn random_unitary<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = random_complex_matrix(dim, rng);
    let qr = g.qr();
    let mut q = qr.q();
    let r = qr.r();
    for j in 0..dim {
        let d = r[(j, j)];
        let phase = if d.norm() > 0.0 { d / d.norm() } else { c(1.0, 0.0) };
        let mut col = q.column_mut(j);
        col *= phase;
    }
    q
}

pub fn random_state_vector<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CVector {
    let v = CVector::from_fn(dim, |_, _| gaussian_c64(rng));
    let n = v.norm();
    v / c(n, 0.0)
}

/// Full-rank density matrix `G G^dagger / Tr`, eigenvalues bounded away from 0.
pub fn random_full_rank_density<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = random_complex_matrix(dim, rng);
    let mut rho = &g * g.adjoint() + CMatrix::identity(dim, dim) * c(0.05 * dim as f64, 0.0);
    let tr: C64 = rho.diagonal().iter().sum();
    rho /= tr;
    // Clean up rounding so the result is Hermitian to machine precision.
    (&rho + rho.adjoint()) * c(0.5, 0.0)
}

/// Random Hermitian generator scaled so its spectrum spreads over a few radians.
pub fn random_generator<R: Rng + ?Sized>(dim: usize, rng: &mut R) -> CMatrix {
    let g = random_hermitian(dim, rng);
    let spread = eig_hermitian(&g)
        .map(|e| e.eigenvalues.iter().fold(0.0f64, |m, x| m.max(x.abs())))
        .unwrap_or(1.0)
        .max(1e-12);
    g * c(2.5 / spread, 0.0)
}

/// SplitMix64 finalizer, used to derive independent child seeds.
pub fn derive_seed(seed: u64, index: u64) -> u64 {
    let mut z = seed.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}
