//! Protocol amplitudes, the combined quasiprobability amplitude, the complex
//! distribution `P(W, W')` and its characteristic function.
//!
//! Index order follows the four bras and kets of the closed form:
//! `(w2, a2; w3, a3; v1, l1; v2, l2)`, with
//!
//! ```text
//! A~(w2, w3, v1, v2) = <w3|U|v2> <v2|U^dagger|w2> <w2|U|v1> <v1|rho U^dagger|w3>
//! ```
//!
//! The random variables are `W = conj(w3) conj(v2)` and `W' = w2 v1`, and the
//! mixed second derivative of `G(b, b') = sum exp(-b W - b' W') P(W, W')` at
//! the origin equals the correlator `C(t)`.

use std::collections::{BTreeMap, HashMap};

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, sandwich, CMatrix, CVector, C64, ZERO};
use crate::model::{ensure_dim, off_diagonal_weight, DensityOperator, EigenUnitary, OutcomeIndex, Propagator};
use crate::otoc::{otoc_direct, OtocModel};

/// Default rounding resolution for complex bin keys.
pub const DEFAULT_BIN_QUANTUM: f64 = 1e-9;
/// Default finite-difference step for the characteristic-function derivative.
pub const DEFAULT_FD_STEP: f64 = 1e-4;
/// Largest dimension for which a full `D^4` table is materialized.
pub const TABLE_DIM_CAP: usize = 1 << 6;
/// Tolerance on `|C_moment - C_direct|` for a passing verification.
pub const THEOREM_TOL: f64 = 1e-9;

/// Outcome labels of one protocol realization: final W outcome, V outcome,
/// first W outcome and the eigenvector `j` of `rho`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize)]
pub struct SeptupleIndex {
    pub w2: OutcomeIndex,
    pub v1: OutcomeIndex,
    pub w1: OutcomeIndex,
    pub j: usize,
}

/// Arguments of the combined amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize)]
pub struct QuadIndex {
    pub w2: OutcomeIndex,
    pub w3: OutcomeIndex,
    pub v1: OutcomeIndex,
    pub v2: OutcomeIndex,
}

fn check_dims(rho: &DensityOperator, w: &EigenUnitary, v: &EigenUnitary, u: &Propagator) -> Result<()> {
    let d = rho.dim();
    ensure_dim(d, w.dim())?;
    ensure_dim(d, v.dim())?;
    ensure_dim(d, u.dim())
}

/// `<w2|U|v1> <v1|U^dagger|w1> <w1|U|j> sqrt(p_j)`.
pub fn amplitude_a(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    idx: &SeptupleIndex,
) -> Result<C64> {
    check_dims(rho, w, v, u)?;
    let eig = rho.eigen();
    let j = eig.eigenvectors.get(idx.j).ok_or(Error::IndexOutOfRange {
        group: idx.j,
        degeneracy: 0,
    })?;
    let pj = eig.eigenvalues[idx.j].max(0.0);
    let (w2, v1, w1) = (w.vector(idx.w2)?, v.vector(idx.v1)?, w.vector(idx.w1)?);
    let ud = u.u.adjoint();
    Ok(sandwich(w2, &u.u, v1) * sandwich(v1, &ud, w1) * sandwich(w1, &u.u, j) * pj.sqrt())
}

/// Closed form of the combined amplitude.
pub fn tilde_a_closed(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    idx: &QuadIndex,
) -> Result<C64> {
    check_dims(rho, w, v, u)?;
    let (w2, w3, v1, v2) = (w.vector(idx.w2)?, w.vector(idx.w3)?, v.vector(idx.v1)?, v.vector(idx.v2)?);
    let ud = u.u.adjoint();
    let rho_ud = rho.matrix() * &ud;
    Ok(sandwich(w3, &u.u, v2) * sandwich(v2, &ud, w2) * sandwich(w2, &u.u, v1) * sandwich(v1, &rho_ud, w3))
}

/// Brute-force marginal `sum_{j, w1} conj(A(w2; v2; w3; j)) A(w2; v1; w1; j)`.
pub fn tilde_a_sum(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    idx: &QuadIndex,
) -> Result<C64> {
    check_dims(rho, w, v, u)?;
    let mut total = ZERO;
    for j in 0..rho.dim() {
        let b = amplitude_a(
            rho,
            w,
            v,
            u,
            &SeptupleIndex {
                w2: idx.w2,
                v1: idx.v2,
                w1: idx.w3,
                j,
            },
        )?;
        if b == ZERO {
            continue;
        }
        for w1 in w.outcomes() {
            let a = amplitude_a(
                rho,
                w,
                v,
                u,
                &SeptupleIndex {
                    w2: idx.w2,
                    v1: idx.v1,
                    w1,
                    j,
                },
            )?;
            total += b.conj() * a;
        }
    }
    Ok(total)
}

/// Population `<w|U rho U^dagger|w>` after checking that `U rho U^dagger` is
/// diagonal in the stored W eigenbasis.
pub(crate) fn w_t_populations(rho: &DensityOperator, w: &EigenUnitary, u: &Propagator) -> Result<CMatrix> {
    let evolved = &u.u * rho.matrix() * u.u.adjoint();
    let defect = off_diagonal_weight(&evolved, &w.basis());
    if defect >= 1e-8 {
        return Err(Error::BasisMismatch { defect });
    }
    Ok(evolved)
}

/// Combined amplitude for a state diagonal in the `W(t)` eigenbasis, where
/// the state factor collapses to `<v1|U^dagger|w3> p_{w3}`.
pub fn tilde_a_simple(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    idx: &QuadIndex,
) -> Result<C64> {
    check_dims(rho, w, v, u)?;
    let evolved = w_t_populations(rho, w, u)?;
    let (w2, w3, v1, v2) = (w.vector(idx.w2)?, w.vector(idx.w3)?, v.vector(idx.v1)?, v.vector(idx.v2)?);
    let ud = u.u.adjoint();
    let p_w3 = sandwich(w3, &evolved, w3).re;
    Ok(sandwich(w3, &u.u, v2) * sandwich(v2, &ud, w2) * sandwich(w2, &u.u, v1) * sandwich(v1, &ud, w3) * c(p_w3, 0.0))
}

/// Overlap matrices shared by table construction and streaming binning.
struct Overlaps {
    /// `<w_i|U|v_k>`
    wuv: CMatrix,
    /// `<v_k|rho U^dagger|w_i>`
    state: CMatrix,
}

impl Overlaps {
    fn new(rho: &DensityOperator, w: &EigenUnitary, v: &EigenUnitary, u: &Propagator) -> Self {
        let wb = CMatrix::from_columns(&w.basis());
        let vb = CMatrix::from_columns(&v.basis());
        let wuv = wb.adjoint() * &u.u * &vb;
        let state = vb.adjoint() * rho.matrix() * u.u.adjoint() * &wb;
        Self { wuv, state }
    }

    #[inline]
    fn tilde(&self, w2: usize, w3: usize, v1: usize, v2: usize) -> C64 {
        self.wuv[(w3, v2)] * self.wuv[(w2, v2)].conj() * self.wuv[(w2, v1)] * self.state[(v1, w3)]
    }
}

/// Dense table of combined amplitudes over every index quadruple.
#[derive(Debug, Clone)]
pub struct QuasiAmplitudeTable {
    w_outcomes: Vec<OutcomeIndex>,
    v_outcomes: Vec<OutcomeIndex>,
    w_eigs: Vec<C64>,
    v_eigs: Vec<C64>,
    /// Row-major over `(w2, w3, v1, v2)`.
    entries: Vec<C64>,
}

impl QuasiAmplitudeTable {
    pub fn build(
        rho: &DensityOperator,
        w: &EigenUnitary,
        v: &EigenUnitary,
        u: &Propagator,
        dim_cap: usize,
    ) -> Result<Self> {
        check_dims(rho, w, v, u)?;
        let d = rho.dim();
        if d > dim_cap {
            return Err(Error::DimensionTooLarge { dim: d, cap: dim_cap });
        }
        let ov = Overlaps::new(rho, w, v, u);
        let entries: Vec<C64> = (0..d)
            .into_par_iter()
            .flat_map_iter(|w2| {
                let ov = &ov;
                (0..d).flat_map(move |w3| {
                    (0..d).flat_map(move |v1| (0..d).map(move |v2| ov.tilde(w2, w3, v1, v2)))
                })
            })
            .collect();
        Ok(Self {
            w_outcomes: w.outcomes(),
            v_outcomes: v.outcomes(),
            w_eigs: w.flat_eigenvalues(),
            v_eigs: v.flat_eigenvalues(),
            entries,
        })
    }

    pub fn dim(&self) -> usize {
        self.w_outcomes.len()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn flat(&self, w2: usize, w3: usize, v1: usize, v2: usize) -> usize {
        let d = self.dim();
        ((w2 * d + w3) * d + v1) * d + v2
    }

    fn position(outcomes: &[OutcomeIndex], idx: OutcomeIndex) -> Result<usize> {
        outcomes.iter().position(|o| *o == idx).ok_or(Error::IndexOutOfRange {
            group: idx.group,
            degeneracy: idx.degeneracy,
        })
    }

    pub fn get(&self, idx: &QuadIndex) -> Result<C64> {
        let w2 = Self::position(&self.w_outcomes, idx.w2)?;
        let w3 = Self::position(&self.w_outcomes, idx.w3)?;
        let v1 = Self::position(&self.v_outcomes, idx.v1)?;
        let v2 = Self::position(&self.v_outcomes, idx.v2)?;
        Ok(self.entries[self.flat(w2, w3, v1, v2)])
    }

    /// Flat entries in `(w2, w3, v1, v2)` order.
    pub fn entries(&self) -> &[C64] {
        &self.entries
    }

    /// Every entry with its labels and eigenvalues `(w2, w3, v1, v2)`.
    pub fn rows(&self) -> impl Iterator<Item = (QuadIndex, [C64; 4], C64)> + '_ {
        let d = self.dim();
        (0..self.entries.len()).map(move |k| {
            let v2 = k % d;
            let v1 = (k / d) % d;
            let w3 = (k / (d * d)) % d;
            let w2 = k / (d * d * d);
            let idx = QuadIndex {
                w2: self.w_outcomes[w2],
                w3: self.w_outcomes[w3],
                v1: self.v_outcomes[v1],
                v2: self.v_outcomes[v2],
            };
            let eigs = [self.w_eigs[w2], self.w_eigs[w3], self.v_eigs[v1], self.v_eigs[v2]];
            (idx, eigs, self.entries[k])
        })
    }

    pub fn total(&self) -> C64 {
        self.entries.iter().sum()
    }

    /// Marginal onto one slot (0 = w2, 1 = w3, 2 = v1, 3 = v2), indexed in
    /// flat outcome order.
    pub fn marginal(&self, slot: usize) -> Vec<C64> {
        let d = self.dim();
        let mut out = vec![ZERO; d];
        for (k, z) in self.entries.iter().enumerate() {
            let digit = match slot {
                0 => k / (d * d * d),
                1 => (k / (d * d)) % d,
                2 => (k / d) % d,
                3 => k % d,
                _ => panic!("slot {slot} out of range"),
            };
            out[digit] += z;
        }
        out
    }
}

/// One bin of `P(W, W')`. `w` and `w_prime` are the exact products of the
/// first contribution that landed in the bin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Bin {
    pub w: C64,
    pub w_prime: C64,
    pub value: C64,
}

type BinKey = (i64, i64, i64, i64);

fn quantize(z: C64, quantum: f64) -> (i64, i64) {
    ((z.re / quantum).round() as i64, (z.im / quantum).round() as i64)
}

/// Complex distribution over quantized `(W, W')` pairs.
#[derive(Debug, Clone, Serialize)]
pub struct ComplexDistribution {
    pub quantum: f64,
    bins: Vec<Bin>,
}

impl ComplexDistribution {
    fn from_accumulator(quantum: f64, acc: BTreeMap<BinKey, Bin>) -> Self {
        Self {
            quantum,
            bins: acc.into_values().collect(),
        }
    }

    /// Distribution from explicit bins (merged on quantized keys).
    pub fn from_bins(quantum: f64, bins: impl IntoIterator<Item = Bin>) -> Self {
        let mut acc: BTreeMap<BinKey, Bin> = BTreeMap::new();
        for b in bins {
            let (a, bb) = quantize(b.w, quantum);
            let (cc, dd) = quantize(b.w_prime, quantum);
            acc.entry((a, bb, cc, dd))
                .and_modify(|e| e.value += b.value)
                .or_insert(b);
        }
        Self::from_accumulator(quantum, acc)
    }

    /// Bins sorted by quantized `(Re W, Im W, Re W', Im W')`.
    pub fn bins(&self) -> &[Bin] {
        &self.bins
    }

    pub fn len(&self) -> usize {
        self.bins.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bins.is_empty()
    }

    pub fn total(&self) -> C64 {
        self.bins.iter().map(|b| b.value).sum()
    }

    /// `sum |P|`, the amount by which the quasiprobability overshoots a
    /// genuine distribution.
    pub fn total_variation(&self) -> f64 {
        self.bins.iter().map(|b| b.value.norm()).sum()
    }
}

/// Bin a materialized table: each entry goes to the key
/// `(conj(w3) conj(v2), w2 v1)`.
pub fn build_p(table: &QuasiAmplitudeTable, quantum: f64) -> ComplexDistribution {
    let mut acc: BTreeMap<BinKey, Bin> = BTreeMap::new();
    for (_, [w2, w3, v1, v2], value) in table.rows() {
        let w = w3.conj() * v2.conj();
        let wp = w2 * v1;
        let (a, b) = quantize(w, quantum);
        let (cc, d) = quantize(wp, quantum);
        acc.entry((a, b, cc, d))
            .and_modify(|e| e.value += value)
            .or_insert(Bin { w, w_prime: wp, value });
    }
    ComplexDistribution::from_accumulator(quantum, acc)
}

/// Distinct quantized values among a list of complex numbers.
struct KeyTable {
    ids: Vec<usize>,
    keys: Vec<(i64, i64)>,
    reps: Vec<C64>,
}

impl KeyTable {
    fn new(values: &[C64], quantum: f64) -> Self {
        let mut lookup: HashMap<(i64, i64), usize> = HashMap::new();
        let mut keys = Vec::new();
        let mut reps = Vec::new();
        let ids = values
            .iter()
            .map(|&z| {
                let k = quantize(z, quantum);
                *lookup.entry(k).or_insert_with(|| {
                    keys.push(k);
                    reps.push(z);
                    keys.len() - 1
                })
            })
            .collect();
        Self { ids, keys, reps }
    }
}

/// Accumulate `P(W, W')` directly from the overlaps without storing the
/// `D^4` table. Work is split over `w2`; partial sums merge in `w2` order so
/// the result does not depend on scheduling.
pub fn build_p_streaming(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    quantum: f64,
) -> Result<ComplexDistribution> {
    check_dims(rho, w, v, u)?;
    let d = rho.dim();
    let ov = Overlaps::new(rho, w, v, u);
    let we = w.flat_eigenvalues();
    let ve = v.flat_eigenvalues();

    // W = conj(w3) conj(v2), indexed [w3 * d + v2]; W' = w2 v1, indexed [w2 * d + v1].
    let w_vals: Vec<C64> = (0..d * d).map(|k| we[k / d].conj() * ve[k % d].conj()).collect();
    let wp_vals: Vec<C64> = (0..d * d).map(|k| we[k / d] * ve[k % d]).collect();
    let w_keys = KeyTable::new(&w_vals, quantum);
    let wp_keys = KeyTable::new(&wp_vals, quantum);
    let n_w = w_keys.keys.len();

    let partials: Vec<Vec<((usize, usize), C64)>> = (0..d)
        .into_par_iter()
        .map(|w2| {
            // Local W' ids for this w2, at most d of them.
            let mut local_ids: Vec<usize> = Vec::new();
            let mut local_of = vec![0usize; d];
            for (v1, slot) in local_of.iter_mut().enumerate() {
                let id = wp_keys.ids[w2 * d + v1];
                *slot = match local_ids.iter().position(|&x| x == id) {
                    Some(p) => p,
                    None => {
                        local_ids.push(id);
                        local_ids.len() - 1
                    }
                };
            }
            let mut acc = vec![ZERO; local_ids.len() * n_w];
            for (v1, &local) in local_of.iter().enumerate() {
                let a = ov.wuv[(w2, v1)];
                let row = local * n_w;
                for w3 in 0..d {
                    let r = a * ov.state[(v1, w3)];
                    for v2 in 0..d {
                        let val = ov.wuv[(w3, v2)] * ov.wuv[(w2, v2)].conj() * r;
                        acc[row + w_keys.ids[w3 * d + v2]] += val;
                    }
                }
            }
            let mut out = Vec::new();
            for (li, &gid) in local_ids.iter().enumerate() {
                for wid in 0..n_w {
                    let z = acc[li * n_w + wid];
                    if z != ZERO {
                        out.push(((wid, gid), z));
                    }
                }
            }
            out
        })
        .collect();

    let mut merged: HashMap<(usize, usize), C64> = HashMap::new();
    for part in partials {
        for (k, z) in part {
            *merged.entry(k).or_insert(ZERO) += z;
        }
    }
    let mut acc: BTreeMap<BinKey, Bin> = BTreeMap::new();
    for ((wid, gid), value) in merged {
        let (a, b) = w_keys.keys[wid];
        let (cc, dd) = wp_keys.keys[gid];
        acc.insert(
            (a, b, cc, dd),
            Bin {
                w: w_keys.reps[wid],
                w_prime: wp_keys.reps[gid],
                value,
            },
        );
    }
    Ok(ComplexDistribution::from_accumulator(quantum, acc))
}

/// Characteristic function evaluated at real `(beta, beta')`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CharEval {
    pub beta: f64,
    pub beta_prime: f64,
    pub value: C64,
}

pub fn char_function(p: &ComplexDistribution, beta: f64, beta_prime: f64) -> CharEval {
    let value = p
        .bins()
        .iter()
        .map(|b| (-(b.w * beta) - b.w_prime * beta_prime).exp() * b.value)
        .sum();
    CharEval {
        beta,
        beta_prime,
        value,
    }
}

/// `sum W W' P(W, W')`, the analytic mixed derivative at the origin.
pub fn jarzynski_moment(p: &ComplexDistribution) -> C64 {
    p.bins().iter().map(|b| b.w * b.w_prime * b.value).sum()
}

/// Central-difference estimate of the mixed derivative at the origin.
pub fn jarzynski_fd(p: &ComplexDistribution, h: f64) -> Result<C64> {
    if !(h > 0.0 && h < 0.1) {
        return Err(Error::StepOutOfRange(h));
    }
    let g = |b: f64, bp: f64| char_function(p, b, bp).value;
    Ok((g(h, h) - g(h, -h) - g(-h, h) + g(-h, -h)) / c(4.0 * h * h, 0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct VerifyOptions {
    pub quantum: f64,
    pub fd_step: f64,
    pub dim_cap: usize,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self {
            quantum: DEFAULT_BIN_QUANTUM,
            fd_step: DEFAULT_FD_STEP,
            dim_cap: TABLE_DIM_CAP,
        }
    }
}

/// Both sides of the fluctuation relation at one time.
#[derive(Debug, Clone, Serialize)]
pub struct TheoremReport {
    pub t: f64,
    pub dim: usize,
    pub bins: usize,
    pub c_direct: C64,
    pub c_moment: C64,
    pub c_fd: C64,
    pub err_moment: f64,
    pub err_fd: f64,
    pub fd_step: f64,
    pub tolerance: f64,
    pub pass: bool,
}

pub fn verify_theorem(model: &OtocModel, t: f64, opts: &VerifyOptions) -> Result<TheoremReport> {
    let d = model.dim();
    if d > opts.dim_cap {
        return Err(Error::DimensionTooLarge { dim: d, cap: opts.dim_cap });
    }
    let u = model.propagator(t);
    let direct = otoc_direct(&model.rho, &model.w, &model.v, &u)?.value;
    let p = build_p_streaming(&model.rho, &model.w, &model.v, &u, opts.quantum)?;
    let moment = jarzynski_moment(&p);
    let fd = jarzynski_fd(&p, opts.fd_step)?;
    let err_moment = (moment - direct).norm();
    Ok(TheoremReport {
        t,
        dim: d,
        bins: p.len(),
        c_direct: direct,
        c_moment: moment,
        c_fd: fd,
        err_moment,
        err_fd: (fd - direct).norm(),
        fd_step: opts.fd_step,
        tolerance: THEOREM_TOL,
        pass: err_moment < THEOREM_TOL,
    })
}

/// Born-rule probability `|<v|U^dagger|w>|^2` of finding `v` after preparing
/// `w` and evolving backward.
pub fn backward_transition_probability(wv: &CVector, vv: &CVector, u: &Propagator) -> f64 {
    let evolved = u.u.adjoint() * wv;
    vv.dotc(&evolved).norm_sqr()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{identity, max_abs_diff, trace, Axis, ONE};
    use crate::model::{build_tfim, Hamiltonian, DEFAULT_DIM_CAP};
    use crate::random::{random_full_rank_density, random_generator, random_hermitian, rng_from_seed, InstanceRng};
    use rand::Rng;
    use std::f64::consts::FRAC_1_SQRT_2;

    fn qubit() -> (DensityOperator, EigenUnitary, EigenUnitary, Propagator) {
        (
            DensityOperator::maximally_mixed(2),
            EigenUnitary::pauli_site(1, 0, Axis::Z).unwrap(),
            EigenUnitary::pauli_site(1, 0, Axis::X).unwrap(),
            Propagator::identity(2),
        )
    }

    struct Instance {
        rho: DensityOperator,
        w: EigenUnitary,
        v: EigenUnitary,
        u: Propagator,
    }

    fn random_instance(d: usize, rng: &mut InstanceRng) -> Instance {
        let h = Hamiltonian::from_matrix(random_hermitian(d, rng), "r").unwrap();
        let t = rng.random_range(0.0..2.0);
        Instance {
            rho: DensityOperator::from_matrix(random_full_rank_density(d, rng)).unwrap(),
            w: EigenUnitary::from_generator(&random_generator(d, rng)).unwrap(),
            v: EigenUnitary::from_generator(&random_generator(d, rng)).unwrap(),
            u: h.propagator(t),
        }
    }

    fn random_quad(inst: &Instance, rng: &mut InstanceRng) -> QuadIndex {
        let wo = inst.w.outcomes();
        let vo = inst.v.outcomes();
        QuadIndex {
            w2: wo[rng.random_range(0..wo.len())],
            w3: wo[rng.random_range(0..wo.len())],
            v1: vo[rng.random_range(0..vo.len())],
            v2: vo[rng.random_range(0..vo.len())],
        }
    }

    const Z0: OutcomeIndex = OutcomeIndex::new(0, 0);
    const Z1: OutcomeIndex = OutcomeIndex::new(1, 0);

    #[test]
    fn amplitude_vanishes_on_orthogonal_states() {
        let (_, w, v, u) = qubit();
        let rho = DensityOperator::pure(&crate::linalg::basis_vector(2, 0)).unwrap();
        // rho's eigenvector with weight 1 is |0>; w1 = |1> is orthogonal to it.
        let j = rho.eigen().eigenvalues.iter().position(|p| *p > 0.5).unwrap();
        let idx = SeptupleIndex { w2: Z0, v1: Z0, w1: Z1, j };
        assert!(amplitude_a(&rho, &w, &v, &u, &idx).unwrap().norm() < 1e-15);
    }

    #[test]
    fn amplitude_hand_value() {
        let (rho, w, v, u) = qubit();
        let idx = SeptupleIndex { w2: Z0, v1: Z0, w1: Z0, j: 0 };
        let a = amplitude_a(&rho, &w, &v, &u, &idx).unwrap();
        assert!((a - c(0.5 * FRAC_1_SQRT_2, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn amplitudes_square_sum_to_one() {
        let mut rng = rng_from_seed(71);
        let inst = random_instance(4, &mut rng);
        let mut total = 0.0;
        for w2 in inst.w.outcomes() {
            for v1 in inst.v.outcomes() {
                for w1 in inst.w.outcomes() {
                    for j in 0..4 {
                        let idx = SeptupleIndex { w2, v1, w1, j };
                        total += amplitude_a(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap().norm_sqr();
                    }
                }
            }
        }
        assert!((total - 1.0).abs() < 1e-9);
    }

    #[test]
    fn out_of_range_indices() {
        let (rho, w, v, u) = qubit();
        let bad = QuadIndex { w2: OutcomeIndex::new(2, 0), w3: Z0, v1: Z0, v2: Z0 };
        assert!(matches!(tilde_a_closed(&rho, &w, &v, &u, &bad), Err(Error::IndexOutOfRange { .. })));
        assert!(matches!(tilde_a_sum(&rho, &w, &v, &u, &bad), Err(Error::IndexOutOfRange { .. })));
        let bad = SeptupleIndex { w2: Z0, v1: OutcomeIndex::new(0, 1), w1: Z0, j: 0 };
        assert!(matches!(amplitude_a(&rho, &w, &v, &u, &bad), Err(Error::IndexOutOfRange { .. })));
    }

    #[test]
    fn closed_form_hand_value() {
        let (rho, w, v, u) = qubit();
        let idx = QuadIndex { w2: Z0, w3: Z0, v1: Z0, v2: Z0 };
        let z = tilde_a_closed(&rho, &w, &v, &u, &idx).unwrap();
        assert!((z - c(0.125, 0.0)).norm() < 1e-15);
    }

    #[test]
    fn closed_form_zero_when_first_overlap_vanishes() {
        // W = V = sigma_z, U = 1: <w3|v2> = 0 for w3 = |0>, v2 = |1>.
        let rho = DensityOperator::maximally_mixed(2);
        let w = EigenUnitary::pauli_site(1, 0, Axis::Z).unwrap();
        let idx = QuadIndex { w2: Z0, w3: Z0, v1: Z0, v2: Z1 };
        let z = tilde_a_closed(&rho, &w, &w, &Propagator::identity(2), &idx).unwrap();
        assert_eq!(z, ZERO);
    }

    #[test]
    fn closed_form_matches_brute_force_on_qubits() {
        let mut rng = rng_from_seed(5);
        for _ in 0..50 {
            let inst = random_instance(2, &mut rng);
            let idx = random_quad(&inst, &mut rng);
            let a = tilde_a_closed(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            let b = tilde_a_sum(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn closed_form_matches_brute_force_on_two_qubits() {
        let mut rng = rng_from_seed(6);
        let inst = random_instance(4, &mut rng);
        for _ in 0..20 {
            let idx = random_quad(&inst, &mut rng);
            let a = tilde_a_closed(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            let b = tilde_a_sum(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn pure_state_sum_has_one_live_term() {
        let mut rng = rng_from_seed(8);
        let inst = random_instance(2, &mut rng);
        let psi = crate::random::random_state_vector(2, &mut rng);
        let rho = DensityOperator::pure(&psi).unwrap();
        let live = rho.eigen().eigenvalues.iter().filter(|p| **p > 1e-12).count();
        assert_eq!(live, 1);
        let idx = random_quad(&inst, &mut rng);
        let a = tilde_a_closed(&rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
        let b = tilde_a_sum(&rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
        assert!((a - b).norm() < 1e-12);
    }

    #[test]
    fn simple_form_for_maximally_mixed_state() {
        let mut rng = rng_from_seed(9);
        let mut inst = random_instance(4, &mut rng);
        inst.rho = DensityOperator::maximally_mixed(4);
        for _ in 0..10 {
            let idx = random_quad(&inst, &mut rng);
            let a = tilde_a_simple(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            let b = tilde_a_closed(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            assert!((a - b).norm() < 1e-10);
        }
    }

    #[test]
    fn simple_form_for_w_t_diagonal_state() {
        let mut rng = rng_from_seed(10);
        let inst = random_instance(4, &mut rng);
        // rho = sum p U^dagger |w><w| U with random populations
        let pops: Vec<f64> = {
            let raw: Vec<f64> = (0..4).map(|_| rng.random_range(0.1..1.0)).collect();
            let s: f64 = raw.iter().sum();
            raw.into_iter().map(|x| x / s).collect()
        };
        let ud = inst.u.u.adjoint();
        let mut m = CMatrix::zeros(4, 4);
        for (p, wv) in pops.iter().zip(inst.w.basis()) {
            let x = &ud * wv;
            m += crate::linalg::outer(&x, &x) * c(*p, 0.0);
        }
        let rho = DensityOperator::from_matrix(m).unwrap();
        for _ in 0..10 {
            let idx = random_quad(&inst, &mut rng);
            let a = tilde_a_simple(&rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            let b = tilde_a_closed(&rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            assert!((a - b).norm() < 1e-10);
        }
        // A generic state is rejected.
        let idx = random_quad(&inst, &mut rng);
        assert!(matches!(
            tilde_a_simple(&inst.rho, &inst.w, &inst.v, &inst.u, &idx),
            Err(Error::BasisMismatch { .. })
        ));
    }

    #[test]
    fn coincident_indices_reduce_to_probabilities() {
        let mut rng = rng_from_seed(12);
        let mut inst = random_instance(4, &mut rng);
        inst.rho = DensityOperator::maximally_mixed(4);
        for w2 in inst.w.outcomes() {
            for v1 in inst.v.outcomes() {
                for v2 in inst.v.outcomes() {
                    let idx = QuadIndex { w2, w3: w2, v1, v2 };
                    let z = tilde_a_simple(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
                    let wv = inst.w.vector(w2).unwrap();
                    let p2 = backward_transition_probability(wv, inst.v.vector(v2).unwrap(), &inst.u);
                    let p1 = backward_transition_probability(wv, inst.v.vector(v1).unwrap(), &inst.u);
                    assert!((z - c(p1 * p2 * 0.25, 0.0)).norm() < 1e-12);
                    assert!(z.re >= -1e-12 && z.re <= 1.0 + 1e-12);
                }
            }
        }
    }

    #[test]
    fn table_entries_match_closed_form() {
        let mut rng = rng_from_seed(13);
        let inst = random_instance(4, &mut rng);
        let table = QuasiAmplitudeTable::build(&inst.rho, &inst.w, &inst.v, &inst.u, TABLE_DIM_CAP).unwrap();
        assert_eq!(table.len(), 256);
        for _ in 0..20 {
            let idx = random_quad(&inst, &mut rng);
            let a = table.get(&idx).unwrap();
            let b = tilde_a_closed(&inst.rho, &inst.w, &inst.v, &inst.u, &idx).unwrap();
            assert!((a - b).norm() < 1e-12);
        }
    }

    #[test]
    fn table_respects_dimension_cap() {
        let mut rng = rng_from_seed(14);
        let inst = random_instance(4, &mut rng);
        assert!(matches!(
            QuasiAmplitudeTable::build(&inst.rho, &inst.w, &inst.v, &inst.u, 2),
            Err(Error::DimensionTooLarge { dim: 4, cap: 2 })
        ));
    }

    #[test]
    fn table_marginals() {
        let mut rng = rng_from_seed(15);
        let inst = random_instance(4, &mut rng);
        let table = QuasiAmplitudeTable::build(&inst.rho, &inst.w, &inst.v, &inst.u, TABLE_DIM_CAP).unwrap();
        assert!((table.total() - ONE).norm() < 1e-10);
        let evolved = &inst.u.u * inst.rho.matrix() * inst.u.u.adjoint();
        let m_w2 = table.marginal(0);
        let m_v1 = table.marginal(2);
        for (k, wv) in inst.w.basis().iter().enumerate() {
            assert!((m_w2[k] - sandwich(wv, &evolved, wv)).norm() < 1e-10);
        }
        for (k, vv) in inst.v.basis().iter().enumerate() {
            assert!((m_v1[k] - sandwich(vv, inst.rho.matrix(), vv)).norm() < 1e-10);
        }
        for slot in 0..4 {
            let m = table.marginal(slot);
            let s: C64 = m.iter().sum();
            assert!((s - ONE).norm() < 1e-10);
            for z in m {
                assert!(z.im.abs() < 1e-12 && z.re > -1e-12);
            }
        }
    }

    #[test]
    fn conjugation_symmetry_at_infinite_temperature() {
        let mut rng = rng_from_seed(16);
        let mut inst = random_instance(4, &mut rng);
        inst.rho = DensityOperator::maximally_mixed(4);
        let table = QuasiAmplitudeTable::build(&inst.rho, &inst.w, &inst.v, &inst.u, TABLE_DIM_CAP).unwrap();
        for (idx, _, z) in table.rows() {
            let swapped_w = QuadIndex { w2: idx.w3, w3: idx.w2, ..idx };
            let swapped_v = QuadIndex { v1: idx.v2, v2: idx.v1, ..idx };
            let swapped_both = QuadIndex { w2: idx.w3, w3: idx.w2, v1: idx.v2, v2: idx.v1 };
            assert!((table.get(&swapped_w).unwrap() - z.conj()).norm() < 1e-12);
            assert!((table.get(&swapped_v).unwrap() - z.conj()).norm() < 1e-12);
            assert!((table.get(&swapped_both).unwrap() - z).norm() < 1e-12);
        }
    }

    #[test]
    fn pauli_distribution_has_four_bins() {
        let h = build_tfim(3, 1.0, 1.05, 0.5, DEFAULT_DIM_CAP).unwrap();
        let u = h.propagator(0.8);
        let rho = DensityOperator::maximally_mixed(8);
        let w = EigenUnitary::pauli_site(3, 0, Axis::Z).unwrap();
        let v = EigenUnitary::pauli_site(3, 2, Axis::X).unwrap();
        let table = QuasiAmplitudeTable::build(&rho, &w, &v, &u, TABLE_DIM_CAP).unwrap();
        let p = build_p(&table, DEFAULT_BIN_QUANTUM);
        assert_eq!(p.len(), 4);
        let mut keys: Vec<(i64, i64)> = p
            .bins()
            .iter()
            .map(|b| (b.w.re.round() as i64, b.w_prime.re.round() as i64))
            .collect();
        keys.sort();
        assert_eq!(keys, vec![(-1, -1), (-1, 1), (1, -1), (1, 1)]);
        assert!((p.total() - ONE).norm() < 1e-9);
        assert!(jarzynski_moment(&p).im.abs() < 1e-10);
    }

    #[test]
    fn qubit_moment_matches_correlator() {
        let (rho, w, v, u) = qubit();
        let table = QuasiAmplitudeTable::build(&rho, &w, &v, &u, TABLE_DIM_CAP).unwrap();
        let p = build_p(&table, DEFAULT_BIN_QUANTUM);
        assert!((jarzynski_moment(&p) + ONE).norm() < 1e-12);
        let direct = otoc_direct(&rho, &w, &v, &u).unwrap().value;
        assert!((direct + ONE).norm() < 1e-12);
    }

    #[test]
    fn streaming_matches_table_binning() {
        let mut rng = rng_from_seed(17);
        let inst = random_instance(4, &mut rng);
        let table = QuasiAmplitudeTable::build(&inst.rho, &inst.w, &inst.v, &inst.u, TABLE_DIM_CAP).unwrap();
        let a = build_p(&table, DEFAULT_BIN_QUANTUM);
        let b = build_p_streaming(&inst.rho, &inst.w, &inst.v, &inst.u, DEFAULT_BIN_QUANTUM).unwrap();
        assert_eq!(a.len(), b.len());
        for (x, y) in a.bins().iter().zip(b.bins()) {
            assert!((x.w - y.w).norm() < 1e-15 && (x.w_prime - y.w_prime).norm() < 1e-15);
            assert!((x.value - y.value).norm() < 1e-12);
        }
    }

    #[test]
    fn streaming_is_schedule_independent() {
        let mut rng = rng_from_seed(18);
        let inst = random_instance(8, &mut rng);
        let a = build_p_streaming(&inst.rho, &inst.w, &inst.v, &inst.u, DEFAULT_BIN_QUANTUM).unwrap();
        let pool = rayon::ThreadPoolBuilder::new().num_threads(1).build().unwrap();
        let b = pool
            .install(|| build_p_streaming(&inst.rho, &inst.w, &inst.v, &inst.u, DEFAULT_BIN_QUANTUM))
            .unwrap();
        for (x, y) in a.bins().iter().zip(b.bins()) {
            assert!((x.value - y.value).norm() < 1e-12);
        }
    }

    #[test]
    fn characteristic_function_basics() {
        let single = ComplexDistribution::from_bins(
            DEFAULT_BIN_QUANTUM,
            [Bin { w: ONE, w_prime: ONE, value: ONE }],
        );
        assert_eq!(char_function(&single, 0.0, 0.0).value, ONE);
        let g = char_function(&single, 0.3, -0.2).value;
        assert!((g - c((-0.1f64).exp(), 0.0)).norm() < 1e-15);
        assert_eq!(jarzynski_moment(&single), ONE);
        let fd = jarzynski_fd(&single, 1e-4).unwrap();
        assert!((fd - ONE).norm() < 1e-7);

        let mut rng = rng_from_seed(19);
        let inst = random_instance(4, &mut rng);
        let p = build_p_streaming(&inst.rho, &inst.w, &inst.v, &inst.u, DEFAULT_BIN_QUANTUM).unwrap();
        assert!((char_function(&p, 0.0, 0.0).value - ONE).norm() < 1e-9);
    }

    #[test]
    fn fd_step_range_is_enforced() {
        let p = ComplexDistribution::from_bins(DEFAULT_BIN_QUANTUM, [Bin { w: ONE, w_prime: ONE, value: ONE }]);
        assert!(matches!(jarzynski_fd(&p, 0.0), Err(Error::StepOutOfRange(_))));
        assert!(matches!(jarzynski_fd(&p, 0.1), Err(Error::StepOutOfRange(_))));
        assert!(matches!(jarzynski_fd(&p, f64::NAN), Err(Error::StepOutOfRange(_))));
    }

    #[test]
    fn fd_converges_at_second_order() {
        let mut rng = rng_from_seed(20);
        let inst = random_instance(4, &mut rng);
        let p = build_p_streaming(&inst.rho, &inst.w, &inst.v, &inst.u, DEFAULT_BIN_QUANTUM).unwrap();
        let exact = jarzynski_moment(&p);
        let e1 = (jarzynski_fd(&p, 0.02).unwrap() - exact).norm();
        let e2 = (jarzynski_fd(&p, 0.01).unwrap() - exact).norm();
        let ratio = e1 / e2;
        assert!((3.5..=4.5).contains(&ratio), "ratio {ratio}");
        let scale = p.bins().iter().map(|b| (b.w * b.w_prime).norm()).fold(0.0, f64::max);
        let h = 1e-4;
        assert!((jarzynski_fd(&p, h).unwrap() - exact).norm() < 10.0 * h * h * scale * p.total_variation().max(1.0));
    }

    #[test]
    fn theorem_holds_on_random_instances() {
        let mut rng = rng_from_seed(22);
        for d in [2, 4, 8] {
            let inst = random_instance(d, &mut rng);
            let h = Hamiltonian::from_matrix(random_hermitian(d, &mut rng), "r").unwrap();
            let model = OtocModel::new(h, inst.rho, inst.w, inst.v).unwrap();
            let t = rng.random_range(0.0..2.0);
            let rep = verify_theorem(&model, t, &VerifyOptions::default()).unwrap();
            assert!(rep.pass, "{rep:?}");
            assert!(rep.err_fd < 1e-6);
        }
    }

    #[test]
    fn theorem_with_identity_v() {
        let h = build_tfim(2, 1.0, 1.05, 0.5, DEFAULT_DIM_CAP).unwrap();
        let model = OtocModel::new(
            h,
            DensityOperator::maximally_mixed(4),
            EigenUnitary::pauli_site(2, 0, Axis::Z).unwrap(),
            EigenUnitary::identity(4),
        )
        .unwrap();
        let rep = verify_theorem(&model, 0.9, &VerifyOptions::default()).unwrap();
        for z in [rep.c_direct, rep.c_moment] {
            assert!((z - ONE).norm() < 1e-12);
        }
        assert!((rep.c_fd - ONE).norm() < 1e-6);
    }

    #[test]
    fn theorem_for_gibbs_chain() {
        let h = build_tfim(3, 1.0, 1.05, 0.5, DEFAULT_DIM_CAP).unwrap();
        let rho = DensityOperator::gibbs(&h, 1.0).unwrap();
        let model = OtocModel::new(
            h,
            rho,
            EigenUnitary::pauli_site(3, 0, Axis::Z).unwrap(),
            EigenUnitary::pauli_site(3, 2, Axis::Z).unwrap(),
        )
        .unwrap();
        let rep = verify_theorem(&model, 1.3, &VerifyOptions::default()).unwrap();
        assert!(rep.pass, "{rep:?}");
    }

    #[test]
    fn verify_respects_cap() {
        let h = build_tfim(3, 1.0, 1.05, 0.5, DEFAULT_DIM_CAP).unwrap();
        let model = OtocModel::new(
            h,
            DensityOperator::maximally_mixed(8),
            EigenUnitary::pauli_site(3, 0, Axis::Z).unwrap(),
            EigenUnitary::pauli_site(3, 2, Axis::Z).unwrap(),
        )
        .unwrap();
        let opts = VerifyOptions { dim_cap: 4, ..Default::default() };
        assert!(matches!(verify_theorem(&model, 0.1, &opts), Err(Error::DimensionTooLarge { .. })));
    }

    /// Walk the proof chain with the evolved state `U rho U^dagger` and the
    /// backward-evolved `U V U^dagger`: the moment equals
    /// `Tr(W^dagger V(-t)^dagger W V(-t) rho(t))`, which equals `C(t)`.
    #[test]
    fn proof_chain_intermediate_forms() {
        let mut rng = rng_from_seed(23);
        let inst = random_instance(4, &mut rng);
        let ud = inst.u.u.adjoint();
        let rho_t = &inst.u.u * inst.rho.matrix() * &ud;
        let v_back = &inst.u.u * inst.v.matrix() * &ud;
        let wm = inst.w.matrix();
        let chain = trace(&(wm.adjoint() * v_back.adjoint() * wm * &v_back * &rho_t));
        let p = build_p_streaming(&inst.rho, &inst.w, &inst.v, &inst.u, DEFAULT_BIN_QUANTUM).unwrap();
        let direct = otoc_direct(&inst.rho, &inst.w, &inst.v, &inst.u).unwrap().value;
        assert!((chain - jarzynski_moment(&p)).norm() < 1e-10);
        assert!((chain - direct).norm() < 1e-10);
        // sum over W eigen-decomposition reproduces W^dagger
        let wd = inst
            .w
            .groups()
            .iter()
            .flat_map(|g| g.members.iter().map(move |m| crate::linalg::outer(m, m) * g.eigenvalue.conj()))
            .fold(CMatrix::zeros(4, 4), |a, b| a + b);
        assert!(max_abs_diff(&wd, &wm.adjoint()) < 1e-9);
        assert!(max_abs_diff(&(wm * wm.adjoint()), &identity(4)) < 1e-10);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn normalization_and_theorem(seed in any::<u64>(), dexp in 1u32..4) {
                let mut rng = rng_from_seed(seed);
                let inst = random_instance(1 << dexp, &mut rng);
                let p = build_p_streaming(&inst.rho, &inst.w, &inst.v, &inst.u, DEFAULT_BIN_QUANTUM).unwrap();
                prop_assert!((p.total() - ONE).norm() < 1e-9);
                let direct = otoc_direct(&inst.rho, &inst.w, &inst.v, &inst.u).unwrap().value;
                prop_assert!((jarzynski_moment(&p) - direct).norm() < 1e-9);
            }
        }
    }
}
