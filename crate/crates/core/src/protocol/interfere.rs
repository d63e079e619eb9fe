//! Ancilla interferometry for inner products `z = <a|U|b>` and assembly of
//! the combined amplitude from measured pieces.
//!
//! The ancilla starts in `(|0> + |1>)/sqrt 2`; its `|0>` branch carries
//! `U|b>`, its `|1>` branch carries `|a>`. After a half-angle rotation about
//! x or y the ancilla reads `+1` (state `|0>`) and the system `a` with
//! probability `1/2 [cos^2(t/2) |z|^2 - sin t Im z + sin^2(t/2)]` for the x
//! axis, and the same with `Re z` for the y axis.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Binomial, Distribution};
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, sandwich, tensor, unitarity_defect, Axis, CMatrix, CVector, C64, TOL_UNITARY};
use crate::model::{ensure_dim, off_diagonal_weight, DensityOperator, EigenUnitary, Propagator};
use crate::quasiprob::QuadIndex;
use crate::random::derive_seed;

/// Which way the system is evolved in the `|0>` branch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Direction {
    Forward,
    Reverse,
}

#[derive(Debug, Clone, PartialEq)]
pub struct InterferenceJob {
    pub a: CVector,
    pub b: CVector,
    pub direction: Direction,
    pub angle: f64,
    pub axis: Axis,
}

/// Smallest `|sin(angle)|` accepted by the linear solve.
pub const MIN_SIN: f64 = 1e-12;

fn oriented(u: &CMatrix, direction: Direction) -> Result<CMatrix> {
    let defect = unitarity_defect(u);
    if defect >= TOL_UNITARY {
        return Err(Error::NotUnitary { defect });
    }
    Ok(match direction {
        Direction::Forward => u.clone(),
        Direction::Reverse => u.adjoint(),
    })
}

fn ancilla_rotation(axis: Axis, angle: f64) -> Result<CMatrix> {
    let (s, co) = (0.5 * angle).sin_cos();
    let m = match axis {
        Axis::X => [c(co, 0.0), c(0.0, -s), c(0.0, -s), c(co, 0.0)],
        Axis::Y => [c(co, 0.0), c(-s, 0.0), c(s, 0.0), c(co, 0.0)],
        Axis::Z => return Err(Error::InvalidState("interference rotation axis must be x or y".into())),
    };
    Ok(CMatrix::from_row_slice(2, 2, &m))
}

/// Probability of ancilla `+1` and system `a`, by state-vector simulation of
/// the ancilla-plus-system register.
pub fn interference_probability(job: &InterferenceJob, u: &CMatrix) -> Result<f64> {
    let d = u.nrows();
    ensure_dim(d, job.a.len())?;
    ensure_dim(d, job.b.len())?;
    let op = oriented(u, job.direction)?;
    let h = std::f64::consts::FRAC_1_SQRT_2;
    let branch0 = &op * &job.b;
    let mut psi = CVector::zeros(2 * d);
    psi.rows_mut(0, d).copy_from(&(branch0 * c(h, 0.0)));
    psi.rows_mut(d, d).copy_from(&(&job.a * c(h, 0.0)));
    let rot = tensor(&ancilla_rotation(job.axis, job.angle)?, &CMatrix::identity(d, d));
    let out = rot * psi;
    Ok(job.a.dotc(&out.rows(0, d).into_owned()).norm_sqr())
}

/// `1/2 [cos^2(t/2) |z|^2 - sin t * q + sin^2(t/2)]` with `q = Im z` (x axis)
/// or `Re z` (y axis).
pub fn interference_closed_form(z: C64, angle: f64, axis: Axis) -> f64 {
    let (s, co) = (0.5 * angle).sin_cos();
    let q = match axis {
        Axis::Y => z.re,
        _ => z.im,
    };
    0.5 * (co * co * z.norm_sqr() - angle.sin() * q + s * s)
}

/// Solve the closed form for `Im z` (x axis) or `Re z` (y axis).
fn solve_component(p: f64, mod_sq: f64, angle: f64) -> Result<f64> {
    let sin = angle.sin();
    if sin.abs() < MIN_SIN {
        return Err(Error::SingularAngle(angle));
    }
    let (s, co) = (0.5 * angle).sin_cos();
    Ok((co * co * mod_sq + s * s - 2.0 * p) / sin)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum InferMode {
    Exact,
    Sampled { trials: u64, seed: u64 },
}

/// Inferred inner product with one-sigma errors on each part.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct InnerProductEstimate {
    pub z: C64,
    pub sigma_re: f64,
    pub sigma_im: f64,
}

impl InnerProductEstimate {
    pub fn sigma(&self) -> f64 {
        self.sigma_re.hypot(self.sigma_im)
    }
}

fn binomial_frequency(trials: u64, p: f64, seed: u64) -> Result<f64> {
    let dist = Binomial::new(trials, p.clamp(0.0, 1.0))
        .map_err(|e| Error::InvalidState(format!("binomial parameters: {e}")))?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    Ok(dist.sample(&mut rng) as f64 / trials as f64)
}

/// Binomial variance of a frequency, kept away from zero so that an empty or
/// saturated count still yields a usable error bar.
fn frequency_variance(f: f64, trials: u64) -> f64 {
    let n = trials as f64;
    let f = (f * n + 0.5) / (n + 1.0);
    f * (1.0 - f) / n
}

/// Infer `z = <a|U|b>` (or `<a|U^dagger|b>` in reverse) from an x-axis run at
/// `theta`, a y-axis run at `phi` and a Born-rule run for `|z|^2`.
pub fn interference_infer_z(
    u: &CMatrix,
    a: &CVector,
    b: &CVector,
    direction: Direction,
    theta: f64,
    phi: f64,
    mode: InferMode,
) -> Result<InnerProductEstimate> {
    for angle in [theta, phi] {
        if angle.sin().abs() < MIN_SIN {
            return Err(Error::SingularAngle(angle));
        }
    }
    let job = |axis, angle| InterferenceJob {
        a: a.clone(),
        b: b.clone(),
        direction,
        angle,
        axis,
    };
    let px = interference_probability(&job(Axis::X, theta), u)?;
    let py = interference_probability(&job(Axis::Y, phi), u)?;
    let op = oriented(u, direction)?;
    let mod_sq = sandwich(a, &op, b).norm_sqr();
    match mode {
        InferMode::Exact => Ok(InnerProductEstimate {
            z: c(solve_component(py, mod_sq, phi)?, solve_component(px, mod_sq, theta)?),
            sigma_re: 0.0,
            sigma_im: 0.0,
        }),
        InferMode::Sampled { trials, seed } => {
            if trials == 0 {
                return Err(Error::NoTrials);
            }
            let fx = binomial_frequency(trials, px, derive_seed(seed, 0))?;
            let fy = binomial_frequency(trials, py, derive_seed(seed, 1))?;
            let fq = binomial_frequency(trials, mod_sq, derive_seed(seed, 2))?;
            let sigma = |f: f64, angle: f64| {
                let c2 = (0.5 * angle).cos().powi(2);
                ((4.0 * frequency_variance(f, trials) + c2 * c2 * frequency_variance(fq, trials)) / angle.sin().powi(2))
                    .sqrt()
            };
            Ok(InnerProductEstimate {
                z: c(solve_component(fy, fq, phi)?, solve_component(fx, fq, theta)?),
                sigma_re: sigma(fy, phi),
                sigma_im: sigma(fx, theta),
            })
        }
    }
}

/// Where the probability factor of the state term comes from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum StateFactorSource {
    /// `rho` commutes with `W(t)`: `p = <w3|U rho U^dagger|w3>`.
    WTimeBasis,
    /// `rho` is diagonal in the V eigenbasis: `p = <v1|rho|v1>`.
    VBasis,
}

#[derive(Debug, Clone, Serialize)]
pub struct AssembledTilde {
    pub value: C64,
    /// `[<w3|U|v2>, <v2|U^dagger|w2>, <w2|U|v1>, <v1|U^dagger|w3>]`.
    pub factors: [InnerProductEstimate; 4],
    pub probability: f64,
    pub source: StateFactorSource,
    /// First-order propagated error `p sum_i sigma_i prod_{j != i} |z_j|`.
    pub budget: f64,
}

/// Rebuild `A~(w2, w3, v1, v2)` from four interferometric inner products and
/// a Born-rule population.
#[allow(clippy::too_many_arguments)]
pub fn assemble_tilde_interference(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    idx: &QuadIndex,
    theta: f64,
    phi: f64,
    mode: InferMode,
) -> Result<AssembledTilde> {
    let d = rho.dim();
    ensure_dim(d, w.dim())?;
    ensure_dim(d, v.dim())?;
    ensure_dim(d, u.dim())?;
    let (w2, w3, v1, v2) = (w.vector(idx.w2)?, w.vector(idx.w3)?, v.vector(idx.v1)?, v.vector(idx.v2)?);

    let evolved = &u.u * rho.matrix() * u.u.adjoint();
    let (probability, source) = if off_diagonal_weight(&evolved, &w.basis()) < 1e-8 {
        (sandwich(w3, &evolved, w3).re, StateFactorSource::WTimeBasis)
    } else if off_diagonal_weight(rho.matrix(), &v.basis()) < 1e-8 {
        (sandwich(v1, rho.matrix(), v1).re, StateFactorSource::VBasis)
    } else {
        return Err(Error::UnsupportedState);
    };

    let pieces = [
        (w3, v2, Direction::Forward),
        (v2, w2, Direction::Reverse),
        (w2, v1, Direction::Forward),
        (v1, w3, Direction::Reverse),
    ];
    let mut factors = [InnerProductEstimate { z: C64::new(0.0, 0.0), sigma_re: 0.0, sigma_im: 0.0 }; 4];
    for (k, (a, b, dir)) in pieces.into_iter().enumerate() {
        let m = match mode {
            InferMode::Exact => InferMode::Exact,
            InferMode::Sampled { trials, seed } => InferMode::Sampled {
                trials,
                seed: derive_seed(seed, k as u64),
            },
        };
        factors[k] = interference_infer_z(&u.u, a, b, dir, theta, phi, m)?;
    }
    let value = factors.iter().fold(c(probability, 0.0), |acc, f| acc * f.z);
    let budget = probability
        * (0..4)
            .map(|i| {
                let others: f64 = (0..4).filter(|&j| j != i).map(|j| factors[j].z.norm()).product();
                factors[i].sigma() * others
            })
            .sum::<f64>();
    Ok(AssembledTilde {
        value,
        factors,
        probability,
        source,
        budget,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::{basis_vector, identity, I, ONE};
    use crate::model::{Hamiltonian, OutcomeIndex};
    use crate::quasiprob::tilde_a_closed;
    use crate::random::{random_full_rank_density, random_hermitian, random_state_vector, random_unitary, rng_from_seed};
    use std::f64::consts::{FRAC_PI_2, PI};

    fn job(a: CVector, b: CVector, angle: f64, axis: Axis) -> InterferenceJob {
        InterferenceJob {
            a,
            b,
            direction: Direction::Forward,
            angle,
            axis,
        }
    }

    #[test]
    fn in_phase_gives_one_half() {
        let e0 = basis_vector(2, 0);
        let p = interference_probability(&job(e0.clone(), e0, FRAC_PI_2, Axis::X), &identity(2)).unwrap();
        assert!((p - 0.5).abs() < 1e-15);
    }

    #[test]
    fn quarter_phase_interferes_destructively() {
        let u = CMatrix::from_row_slice(2, 2, &[I, C64::new(0.0, 0.0), C64::new(0.0, 0.0), ONE]);
        let e0 = basis_vector(2, 0);
        let p = interference_probability(&job(e0.clone(), e0, FRAC_PI_2, Axis::X), &u).unwrap();
        assert!(p.abs() < 1e-15);
    }

    #[test]
    fn zero_angle_matches_closed_form() {
        let mut rng = rng_from_seed(5);
        let u = random_unitary(3, &mut rng);
        let (a, b) = (random_state_vector(3, &mut rng), random_state_vector(3, &mut rng));
        let z = sandwich(&a, &u, &b);
        for axis in [Axis::X, Axis::Y] {
            let p = interference_probability(&job(a.clone(), b.clone(), 0.0, axis), &u).unwrap();
            assert!((p - interference_closed_form(z, 0.0, axis)).abs() < 1e-14);
        }
    }

    #[test]
    fn closed_form_on_a_grid() {
        let mut rng = rng_from_seed(6);
        for _ in 0..10 {
            let u = random_unitary(4, &mut rng);
            let (a, b) = (random_state_vector(4, &mut rng), random_state_vector(4, &mut rng));
            let z = sandwich(&a, &u, &b);
            for k in 0..=16 {
                let angle = PI * k as f64 / 16.0;
                for axis in [Axis::X, Axis::Y] {
                    let p = interference_probability(&job(a.clone(), b.clone(), angle, axis), &u).unwrap();
                    assert!((p - interference_closed_form(z, angle, axis)).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn rejects_nonunitary_and_z_axis() {
        let e0 = basis_vector(2, 0);
        let bad = identity(2) * c(1.1, 0.0);
        assert!(matches!(
            interference_probability(&job(e0.clone(), e0.clone(), 1.0, Axis::X), &bad),
            Err(Error::NotUnitary { .. })
        ));
        assert!(interference_probability(&job(e0.clone(), e0, 1.0, Axis::Z), &identity(2)).is_err());
    }

    #[test]
    fn identity_overlap_is_one() {
        let e1 = basis_vector(3, 1);
        let est = interference_infer_z(&identity(3), &e1, &e1, Direction::Forward, 1.0, 2.0, InferMode::Exact).unwrap();
        assert!((est.z - ONE).norm() < 1e-12);
    }

    #[test]
    fn exact_inference_recovers_inner_products() {
        let mut rng = rng_from_seed(7);
        for _ in 0..20 {
            let u = random_unitary(4, &mut rng);
            let (a, b) = (random_state_vector(4, &mut rng), random_state_vector(4, &mut rng));
            for (dir, op) in [(Direction::Forward, u.clone()), (Direction::Reverse, u.adjoint())] {
                let est = interference_infer_z(&u, &a, &b, dir, 0.9, 2.1, InferMode::Exact).unwrap();
                assert!((est.z - sandwich(&a, &op, &b)).norm() < 1e-10);
            }
        }
    }

    #[test]
    fn singular_angles_are_rejected() {
        let e0 = basis_vector(2, 0);
        for (t, p) in [(0.0, 1.0), (1.0, PI)] {
            assert!(matches!(
                interference_infer_z(&identity(2), &e0, &e0, Direction::Forward, t, p, InferMode::Exact),
                Err(Error::SingularAngle(_))
            ));
        }
    }

    #[test]
    fn sampled_inference_within_three_sigma() {
        let mut rng = rng_from_seed(8);
        let mut misses = 0;
        for k in 0..20 {
            let u = random_unitary(4, &mut rng);
            let (a, b) = (random_state_vector(4, &mut rng), random_state_vector(4, &mut rng));
            let z = sandwich(&a, &u, &b);
            let mode = InferMode::Sampled { trials: 100_000, seed: k };
            let est = interference_infer_z(&u, &a, &b, Direction::Forward, FRAC_PI_2, FRAC_PI_2, mode).unwrap();
            if (est.z.re - z.re).abs() > 3.0 * est.sigma_re || (est.z.im - z.im).abs() > 3.0 * est.sigma_im {
                misses += 1;
            }
            let again = interference_infer_z(&u, &a, &b, Direction::Forward, FRAC_PI_2, FRAC_PI_2, mode).unwrap();
            assert_eq!(est, again);
        }
        assert!(misses <= 1, "{misses} of 20 outside 3 sigma");
    }

    fn qubit() -> (DensityOperator, EigenUnitary, EigenUnitary, Propagator) {
        (
            DensityOperator::maximally_mixed(2),
            EigenUnitary::pauli_site(1, 0, Axis::Z).unwrap(),
            EigenUnitary::pauli_site(1, 0, Axis::X).unwrap(),
            Propagator::identity(2),
        )
    }

    #[test]
    fn qubit_assembly_gives_one_eighth() {
        let (rho, w, v, u) = qubit();
        let p0 = OutcomeIndex::new(0, 0);
        let idx = QuadIndex { w2: p0, w3: p0, v1: p0, v2: p0 };
        let out = assemble_tilde_interference(&rho, &w, &v, &u, &idx, FRAC_PI_2, FRAC_PI_2, InferMode::Exact).unwrap();
        let oracle = tilde_a_closed(&rho, &w, &v, &u, &idx).unwrap();
        assert!((oracle - c(0.125, 0.0)).norm() < 1e-12);
        assert!((out.value - oracle).norm() < 1e-12);
        assert!((out.probability - 0.5).abs() < 1e-15);
    }

    #[test]
    fn maximally_mixed_assembly_matches_closed_form() {
        let mut rng = rng_from_seed(9);
        let h = Hamiltonian::from_matrix(random_hermitian(4, &mut rng), "r").unwrap();
        let u = h.propagator(0.8);
        let rho = DensityOperator::maximally_mixed(4);
        let w = EigenUnitary::pauli_site(2, 0, Axis::X).unwrap();
        let v = EigenUnitary::pauli_site(2, 1, Axis::Z).unwrap();
        for w2 in w.outcomes() {
            for v1 in v.outcomes() {
                let idx = QuadIndex { w2, w3: OutcomeIndex::new(1, 1), v1, v2: OutcomeIndex::new(0, 1) };
                let out = assemble_tilde_interference(&rho, &w, &v, &u, &idx, 1.1, 0.7, InferMode::Exact).unwrap();
                assert!((out.probability - 0.25).abs() < 1e-15);
                assert!((out.value - tilde_a_closed(&rho, &w, &v, &u, &idx).unwrap()).norm() < 1e-9);
            }
        }
    }

    #[test]
    fn v_diagonal_state_uses_v_population() {
        let mut rng = rng_from_seed(10);
        let h = Hamiltonian::from_matrix(random_hermitian(2, &mut rng), "r").unwrap();
        let u = h.propagator(0.5);
        let v = EigenUnitary::pauli_site(1, 0, Axis::Z).unwrap();
        let w = EigenUnitary::pauli_site(1, 0, Axis::X).unwrap();
        let rho = DensityOperator::from_matrix(CMatrix::from_row_slice(
            2,
            2,
            &[c(0.7, 0.0), C64::new(0.0, 0.0), C64::new(0.0, 0.0), c(0.3, 0.0)],
        ))
        .unwrap();
        let idx = QuadIndex {
            w2: OutcomeIndex::new(0, 0),
            w3: OutcomeIndex::new(1, 0),
            v1: OutcomeIndex::new(1, 0),
            v2: OutcomeIndex::new(0, 0),
        };
        let out = assemble_tilde_interference(&rho, &w, &v, &u, &idx, 1.0, 1.0, InferMode::Exact).unwrap();
        assert_eq!(out.source, StateFactorSource::VBasis);
        assert!((out.value - tilde_a_closed(&rho, &w, &v, &u, &idx).unwrap()).norm() < 1e-10);
    }

    #[test]
    fn generic_state_is_unsupported() {
        let mut rng = rng_from_seed(11);
        let rho = DensityOperator::from_matrix(random_full_rank_density(2, &mut rng)).unwrap();
        let (_, w, v, u) = qubit();
        let p0 = OutcomeIndex::new(0, 0);
        let idx = QuadIndex { w2: p0, w3: p0, v1: p0, v2: p0 };
        assert!(matches!(
            assemble_tilde_interference(&rho, &w, &v, &u, &idx, 1.0, 1.0, InferMode::Exact),
            Err(Error::UnsupportedState)
        ));
    }

    #[test]
    fn sampled_assembly_within_budget() {
        let mut rng = rng_from_seed(12);
        let h = Hamiltonian::from_matrix(random_hermitian(4, &mut rng), "r").unwrap();
        let u = h.propagator(0.6);
        let rho = DensityOperator::maximally_mixed(4);
        let w = EigenUnitary::pauli_site(2, 0, Axis::Z).unwrap();
        let v = EigenUnitary::pauli_site(2, 1, Axis::X).unwrap();
        let idx = QuadIndex {
            w2: OutcomeIndex::new(0, 0),
            w3: OutcomeIndex::new(0, 1),
            v1: OutcomeIndex::new(1, 0),
            v2: OutcomeIndex::new(0, 0),
        };
        let oracle = tilde_a_closed(&rho, &w, &v, &u, &idx).unwrap();
        let mode = InferMode::Sampled { trials: 100_000, seed: 3 };
        let out = assemble_tilde_interference(&rho, &w, &v, &u, &idx, FRAC_PI_2, FRAC_PI_2, mode).unwrap();
        assert!(out.budget > 0.0);
        assert!((out.value - oracle).norm() < 3.0 * out.budget);
    }
}
