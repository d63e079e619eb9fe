//! Physical objects: spin-chain Hamiltonians, local unitaries with grouped
//! spectra, propagators and density operators.
//!
//! An [`EigenUnitary`] keeps its eigenvectors grouped by eigenvalue. The
//! position of a vector inside its group is its degeneracy label, fixed at
//! construction. A projective measurement in this stored basis resolves both
//! the eigenvalue and the degeneracy label, so no separate nondegenerate
//! companion observable is ever built.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{
    basis_vector, c, eig_hermitian, gram_schmidt, hermiticity_defect, identity, inner, max_abs_diff,
    outer, pauli, tensor, trace, unitarity_defect, Axis, CMatrix, CVector, HermitianEigen, C64,
    ONE, TOL_EIG_GROUP, TOL_HERM, TOL_UNITARY,
};

/// Default cap on the Hilbert-space dimension for dense work.
pub const DEFAULT_DIM_CAP: usize = 1 << 10;

/// Eigenvalue-group index plus degeneracy label within that group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct OutcomeIndex {
    pub group: usize,
    pub degeneracy: usize,
}

impl OutcomeIndex {
    pub const fn new(group: usize, degeneracy: usize) -> Self {
        Self { group, degeneracy }
    }
}

#[derive(Debug, Clone)]
pub struct Hamiltonian {
    matrix: CMatrix,
    eigen: HermitianEigen,
    label: String,
}

impl Hamiltonian {
    pub fn from_matrix(matrix: CMatrix, label: impl Into<String>) -> Result<Self> {
        let eigen = eig_hermitian(&matrix)?;
        Ok(Self {
            matrix,
            eigen,
            label: label.into(),
        })
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigen(&self) -> &HermitianEigen {
        &self.eigen
    }

    pub fn label(&self) -> &str {
        &self.label
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn propagator(&self, t: f64) -> Propagator {
        Propagator {
            u: self.eigen.propagator(t),
            t,
            source: self.label.clone(),
        }
    }
}

/// Operator acting as `op` on `site` of an `n`-site qubit chain.
pub fn site_operator(n: usize, site: usize, op: &CMatrix) -> CMatrix {
    let left = identity(1 << site);
    let right = identity(1 << (n - 1 - site));
    tensor(&tensor(&left, op), &right)
}

/// Open-boundary transverse-field Ising chain
/// `H = -J sum Z_k Z_{k+1} - g sum X_k - h sum Z_k`.
pub fn build_tfim(n: usize, j: f64, g: f64, h: f64, dim_cap: usize) -> Result<Hamiltonian> {
    if n == 0 {
        return Err(Error::BadSite { site: 0, n });
    }
    if n >= usize::BITS as usize - 1 || (1usize << n) > dim_cap {
        return Err(Error::DimensionTooLarge {
            dim: 1usize.checked_shl(n as u32).unwrap_or(usize::MAX),
            cap: dim_cap,
        });
    }
    let dim = 1 << n;
    let (x, z) = (pauli(Axis::X), pauli(Axis::Z));
    let mut m = CMatrix::zeros(dim, dim);
    for k in 0..n {
        if k + 1 < n {
            let zz = site_operator(n, k, &z) * site_operator(n, k + 1, &z);
            m -= zz * c(j, 0.0);
        }
        m -= site_operator(n, k, &x) * c(g, 0.0);
        m -= site_operator(n, k, &z) * c(h, 0.0);
    }
    Hamiltonian::from_matrix(m, format!("tfim(n={n}, J={j}, g={g}, h={h})"))
}

/// `U = exp(-i H t)` tagged with its time and source.
#[derive(Debug, Clone)]
pub struct Propagator {
    pub u: CMatrix,
    pub t: f64,
    pub source: String,
}

impl Propagator {
    pub fn identity(dim: usize) -> Self {
        Self {
            u: identity(dim),
            t: 0.0,
            source: "identity".into(),
        }
    }

    pub fn from_unitary(u: CMatrix, t: f64, source: impl Into<String>) -> Result<Self> {
        let defect = unitarity_defect(&u);
        if defect >= TOL_UNITARY {
            return Err(Error::NotUnitary { defect });
        }
        Ok(Self {
            u,
            t,
            source: source.into(),
        })
    }

    pub fn dim(&self) -> usize {
        self.u.nrows()
    }
}

/// Density operator with its spectral decomposition `rho = sum_j p_j |j><j|`.
#[derive(Debug, Clone)]
pub struct DensityOperator {
    matrix: CMatrix,
    eigen: HermitianEigen,
}

impl DensityOperator {
    pub fn from_matrix(matrix: CMatrix) -> Result<Self> {
        let eigen = eig_hermitian(&matrix)?;
        Self::checked(matrix, eigen)
    }

    fn checked(matrix: CMatrix, eigen: HermitianEigen) -> Result<Self> {
        let tr = trace(&matrix);
        if (tr - ONE).norm() > 1e-10 {
            return Err(Error::InvalidState(format!("trace {tr} differs from 1")));
        }
        let min = eigen.eigenvalues.iter().cloned().fold(f64::INFINITY, f64::min);
        if min < -1e-10 {
            return Err(Error::InvalidState(format!("negative eigenvalue {min:e}")));
        }
        Ok(Self { matrix, eigen })
    }

    /// `1 / D`, with the computational basis as its eigenbasis.
    pub fn maximally_mixed(dim: usize) -> Self {
        let p = 1.0 / dim as f64;
        Self {
            matrix: identity(dim) * c(p, 0.0),
            eigen: HermitianEigen {
                eigenvalues: vec![p; dim],
                eigenvectors: (0..dim).map(|i| basis_vector(dim, i)).collect(),
            },
        }
    }

    pub fn pure(psi: &CVector) -> Result<Self> {
        let n = psi.norm();
        if (n - 1.0).abs() > 1e-12 {
            return Err(Error::InvalidState(format!("state vector has norm {n}")));
        }
        Self::from_matrix(outer(psi, psi))
    }

    /// Gibbs state `exp(-H/T) / Z`, built in the eigenbasis of `H`.
    pub fn gibbs(h: &Hamiltonian, temperature: f64) -> Result<Self> {
        if temperature.is_nan() || temperature <= 0.0 {
            return Err(Error::NonpositiveTemperature(temperature));
        }
        let he = h.eigen();
        let e0 = he.eigenvalues.first().copied().unwrap_or(0.0);
        let weights: Vec<f64> = he
            .eigenvalues
            .iter()
            .map(|e| (-(e - e0) / temperature).exp())
            .collect();
        let z: f64 = weights.iter().sum();
        // Ascending populations: walk the energies from the top down.
        let eigenvalues: Vec<f64> = weights.iter().rev().map(|w| w / z).collect();
        let eigenvectors: Vec<CVector> = he.eigenvectors.iter().rev().cloned().collect();
        let eigen = HermitianEigen {
            eigenvalues,
            eigenvectors,
        };
        let matrix = eigen.reconstruct();
        Self::checked(matrix, eigen)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn eigen(&self) -> &HermitianEigen {
        &self.eigen
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    /// Largest off-diagonal modulus of the matrix in the given orthonormal basis.
    pub fn off_diagonal_in(&self, basis: &[CVector]) -> f64 {
        off_diagonal_weight(&self.matrix, basis)
    }
}

pub(crate) fn off_diagonal_weight(m: &CMatrix, basis: &[CVector]) -> f64 {
    let mut worst = 0.0f64;
    let images: Vec<CVector> = basis.iter().map(|b| m * b).collect();
    for (i, a) in basis.iter().enumerate() {
        for (j, mb) in images.iter().enumerate() {
            if i != j {
                worst = worst.max(inner(a, mb).norm());
            }
        }
    }
    worst
}

/// One eigenvalue of a unitary together with an orthonormal basis of its
/// eigenspace. Member `k` carries degeneracy label `k`.
#[derive(Debug, Clone)]
pub struct EigenGroup {
    pub eigenvalue: C64,
    pub members: Vec<CVector>,
}

/// Unitary operator with its grouped spectral decomposition.
#[derive(Debug, Clone)]
pub struct EigenUnitary {
    matrix: CMatrix,
    groups: Vec<EigenGroup>,
    generator_values: Option<Vec<f64>>,
}

impl EigenUnitary {
    /// Assemble from explicit groups; the matrix is `sum_l w_l Pi_l`.
    pub fn from_groups(groups: Vec<EigenGroup>) -> Result<Self> {
        let dim = groups
            .first()
            .and_then(|g| g.members.first())
            .map(|v| v.len())
            .ok_or_else(|| Error::InvalidState("empty spectral decomposition".into()))?;
        let mut matrix = CMatrix::zeros(dim, dim);
        for g in &groups {
            for v in &g.members {
                if v.len() != dim {
                    return Err(Error::DimensionMismatch {
                        expected: dim,
                        found: v.len(),
                    });
                }
                matrix += outer(v, v) * g.eigenvalue;
            }
        }
        let op = Self {
            matrix,
            groups,
            generator_values: None,
        };
        op.check_invariants()?;
        Ok(op)
    }

    pub fn identity(dim: usize) -> Self {
        Self {
            matrix: identity(dim),
            groups: vec![EigenGroup {
                eigenvalue: ONE,
                members: (0..dim).map(|i| basis_vector(dim, i)).collect(),
            }],
            generator_values: Some(vec![0.0]),
        }
    }

    /// Pauli `axis` on `site` of an `n`-qubit chain. Groups are ordered
    /// `{+1, -1}`; degeneracy labels follow the binary index of the other sites.
    pub fn pauli_site(n: usize, site: usize, axis: Axis) -> Result<Self> {
        if site >= n {
            return Err(Error::BadSite { site, n });
        }
        let s = std::f64::consts::FRAC_1_SQRT_2;
        let (plus, minus) = match axis {
            Axis::Z => (vec![ONE, c(0.0, 0.0)], vec![c(0.0, 0.0), ONE]),
            Axis::X => (vec![c(s, 0.0), c(s, 0.0)], vec![c(s, 0.0), c(-s, 0.0)]),
            Axis::Y => (vec![c(s, 0.0), c(0.0, s)], vec![c(s, 0.0), c(0.0, -s)]),
        };
        let left_dim = 1usize << site;
        let right_bits = n - 1 - site;
        let right_dim = 1usize << right_bits;
        let embed = |local: &[C64], rest: usize| -> CVector {
            let l = basis_vector(left_dim, rest >> right_bits);
            let r = basis_vector(right_dim, rest & (right_dim - 1));
            let loc = CVector::from_column_slice(local);
            let lm = CMatrix::from_columns(&[l]);
            let rm = CMatrix::from_columns(&[r]);
            let locm = CMatrix::from_columns(&[loc]);
            tensor(&tensor(&lm, &locm), &rm).column(0).into_owned()
        };
        let rests = 1usize << (n - 1);
        let groups = vec![
            EigenGroup {
                eigenvalue: ONE,
                members: (0..rests).map(|r| embed(&plus, r)).collect(),
            },
            EigenGroup {
                eigenvalue: -ONE,
                members: (0..rests).map(|r| embed(&minus, r)).collect(),
            },
        ];
        let matrix = site_operator(n, site, &pauli(axis));
        let op = Self {
            matrix,
            groups,
            generator_values: None,
        };
        op.check_invariants()?;
        Ok(op)
    }

    /// `W = exp(iG)` for Hermitian `G`, eigenvalues grouped on the unit circle.
    pub fn from_generator(generator: &CMatrix) -> Result<Self> {
        let eig = eig_hermitian(generator)?;
        let phases: Vec<C64> = eig
            .eigenvalues
            .iter()
            .map(|&l| C64::from_polar(1.0, l))
            .collect();

        // Single-linkage clustering on the unit circle.
        let mut clusters: Vec<Vec<usize>> = Vec::new();
        for (k, w) in phases.iter().enumerate() {
            let hit = clusters
                .iter()
                .position(|members| members.iter().any(|&m| (phases[m] - w).norm() < TOL_EIG_GROUP));
            match hit {
                Some(ci) => clusters[ci].push(k),
                None => clusters.push(vec![k]),
            }
        }
        for a in 0..clusters.len() {
            for b in a + 1..clusters.len() {
                let gap = clusters[a]
                    .iter()
                    .flat_map(|&i| clusters[b].iter().map(move |&j| (i, j)))
                    .map(|(i, j)| (phases[i] - phases[j]).norm())
                    .fold(f64::INFINITY, f64::min);
                if gap < 10.0 * TOL_EIG_GROUP {
                    return Err(Error::GroupingAmbiguous { gap });
                }
            }
        }

        let mut groups = Vec::with_capacity(clusters.len());
        let mut generator_values = Vec::with_capacity(clusters.len());
        for members in &clusters {
            let mean: C64 = members.iter().map(|&m| phases[m]).sum::<C64>() / c(members.len() as f64, 0.0);
            let eigenvalue = mean / mean.norm();
            let mut vectors: Vec<CVector> = members.iter().map(|&m| eig.eigenvectors[m].clone()).collect();
            gram_schmidt(&mut vectors);
            generator_values.push(eig.eigenvalues[members[0]]);
            groups.push(EigenGroup {
                eigenvalue,
                members: vectors,
            });
        }
        let matrix = eig.apply_fn(|l| C64::from_polar(1.0, l));
        let op = Self {
            matrix,
            groups,
            generator_values: Some(generator_values),
        };
        op.check_invariants()?;
        Ok(op)
    }

    pub fn matrix(&self) -> &CMatrix {
        &self.matrix
    }

    pub fn groups(&self) -> &[EigenGroup] {
        &self.groups
    }

    pub fn generator_values(&self) -> Option<&[f64]> {
        self.generator_values.as_deref()
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn eigenvalue(&self, group: usize) -> Option<C64> {
        self.groups.get(group).map(|g| g.eigenvalue)
    }

    pub fn vector(&self, idx: OutcomeIndex) -> Result<&CVector> {
        self.groups
            .get(idx.group)
            .and_then(|g| g.members.get(idx.degeneracy))
            .ok_or(Error::IndexOutOfRange {
                group: idx.group,
                degeneracy: idx.degeneracy,
            })
    }

    /// Every outcome in group-major order.
    pub fn outcomes(&self) -> Vec<OutcomeIndex> {
        self.groups
            .iter()
            .enumerate()
            .flat_map(|(gi, g)| (0..g.members.len()).map(move |k| OutcomeIndex::new(gi, k)))
            .collect()
    }

    /// Basis vectors in the order of [`outcomes`](Self::outcomes).
    pub fn basis(&self) -> Vec<CVector> {
        self.groups.iter().flat_map(|g| g.members.iter().cloned()).collect()
    }

    /// Eigenvalue of every basis vector, in the order of [`outcomes`](Self::outcomes).
    pub fn flat_eigenvalues(&self) -> Vec<C64> {
        self.groups
            .iter()
            .flat_map(|g| std::iter::repeat_n(g.eigenvalue, g.members.len()))
            .collect()
    }

    /// Projector onto the eigenspace of `group`.
    pub fn projector(&self, group: usize) -> Option<CMatrix> {
        let g = self.groups.get(group)?;
        let d = self.dim();
        Some(g.members.iter().fold(CMatrix::zeros(d, d), |acc, v| acc + outer(v, v)))
    }

    /// `max | sum_k |k><k| - 1 |` over all stored eigenvectors.
    pub fn completeness_residual(&self) -> f64 {
        let d = self.dim();
        let sum = self
            .groups
            .iter()
            .flat_map(|g| g.members.iter())
            .fold(CMatrix::zeros(d, d), |acc, v| acc + outer(v, v));
        max_abs_diff(&sum, &identity(d))
    }

    /// `sum_l w_l Pi_l`.
    pub fn spectral_reconstruction(&self) -> CMatrix {
        let d = self.dim();
        let mut m = CMatrix::zeros(d, d);
        for g in &self.groups {
            for v in &g.members {
                m += outer(v, v) * g.eigenvalue;
            }
        }
        m
    }

    pub fn check_invariants(&self) -> Result<()> {
        let defect = unitarity_defect(&self.matrix);
        if defect >= TOL_UNITARY {
            return Err(Error::NotUnitary { defect });
        }
        for g in &self.groups {
            if (g.eigenvalue.norm() - 1.0).abs() >= 1e-10 {
                return Err(Error::InvalidState(format!(
                    "eigenvalue {} is off the unit circle",
                    g.eigenvalue
                )));
            }
            for v in &g.members {
                let image = &self.matrix * v;
                let resid = (image - v * g.eigenvalue).norm();
                if resid >= TOL_EIG_GROUP {
                    return Err(Error::InvalidState(format!(
                        "eigenvector residual {resid:e} exceeds the grouping tolerance"
                    )));
                }
            }
        }
        for a in 0..self.groups.len() {
            for b in a + 1..self.groups.len() {
                let gap = (self.groups[a].eigenvalue - self.groups[b].eigenvalue).norm();
                if gap <= TOL_EIG_GROUP {
                    return Err(Error::GroupingAmbiguous { gap });
                }
            }
        }
        let resid = self.completeness_residual();
        if resid >= 1e-9 {
            return Err(Error::InvalidState(format!(
                "eigenvectors are not a complete orthonormal basis (residual {resid:e})"
            )));
        }
        Ok(())
    }
}

/// Hermiticity check used by callers that accept raw matrices.
pub fn ensure_hermitian(m: &CMatrix) -> Result<()> {
    let defect = hermiticity_defect(m);
    if defect >= TOL_HERM {
        return Err(Error::NotHermitian { defect });
    }
    Ok(())
}

pub(crate) fn ensure_dim(expected: usize, found: usize) -> Result<()> {
    if expected != found {
        return Err(Error::DimensionMismatch { expected, found });
    }
    Ok(())
}
