//! Two-weak-measurement scheme for states diagonal in the `W(t)` eigenbasis.
//!
//! One trial prepares `|w3>`, evolves backward, measures `|v1><v1|` weakly
//! with meter `a`, evolves forward, measures `|w2><w2|` weakly with meter
//! `b`, evolves backward and measures the V eigenbasis projectively. The
//! correlation `I = sum x y P(x, y, v2)` carries `Re` or `Im` of the combined
//! amplitude at second order in the couplings, on top of a known background
//! that is nonzero only when `w3 = w2` and `v2 = v1`.
//!
//! The general-state protocol with three weak measurements is not simulated;
//! only the simplified variant above has closed-form inference.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::weighted::WeightedAliasIndex;
use rand_distr::Distribution;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::linalg::{c, eig_hermitian, identity, max_abs_diff, outer, CMatrix, C64};
use crate::model::{ensure_dim, DensityOperator, EigenUnitary, OutcomeIndex, Propagator};
use crate::quasiprob::w_t_populations;

/// Discrete meter: readings `x`, baseline probabilities `p(x)` and complex
/// couplings `g(x)` of nominal size `strength`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WeakMeter {
    pub outcomes: Vec<f64>,
    pub baseline: Vec<f64>,
    pub couplings: Vec<C64>,
    pub strength: f64,
}

impl WeakMeter {
    /// Two-outcome meter, `x = +-1`, `p(x) = 1/2`, `g(x) = x g e^{i phase}`.
    pub fn qubit(strength: f64, phase: f64) -> Self {
        let g = C64::from_polar(strength, phase);
        Self {
            outcomes: vec![1.0, -1.0],
            baseline: vec![0.5, 0.5],
            couplings: vec![g, -g],
            strength,
        }
    }

    pub fn len(&self) -> usize {
        self.outcomes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.outcomes.is_empty()
    }

    /// `sum p(x) = 1` and `sum x p(x) = 0`, both within 1e-12.
    pub fn check_calibration(&self) -> Result<()> {
        if self.outcomes.len() != self.baseline.len() || self.outcomes.len() != self.couplings.len() {
            return Err(Error::UncalibratedMeter("outcome, baseline and coupling lists differ in length".into()));
        }
        let total: f64 = self.baseline.iter().sum();
        if (total - 1.0).abs() > 1e-12 {
            return Err(Error::UncalibratedMeter(format!("baseline sums to {total}")));
        }
        if self.baseline.iter().any(|p| *p < 0.0) {
            return Err(Error::UncalibratedMeter("negative baseline probability".into()));
        }
        let mean: f64 = self.outcomes.iter().zip(&self.baseline).map(|(x, p)| x * p).sum();
        if mean.abs() > 1e-12 {
            return Err(Error::UncalibratedMeter(format!("baseline mean reading {mean:e}")));
        }
        Ok(())
    }

    /// `sum_x x sqrt(p(x)) g(x)`, or with `conj(g)` when `conjugate` is set.
    fn weighted_coupling(&self, conjugate: bool) -> C64 {
        self.outcomes
            .iter()
            .zip(&self.baseline)
            .zip(&self.couplings)
            .map(|((x, p), g)| {
                let g = if conjugate { g.conj() } else { *g };
                g * (x * p.sqrt())
            })
            .sum()
    }
}

/// Whether the coupling combination `alpha` is real or imaginary.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CoupleMode {
    Real,
    Imaginary,
}

/// Meter pair for one inference mode. Real mode couples both meters in phase;
/// imaginary mode rotates meter `a` by a quarter turn.
pub fn meter_pair(strength: f64, mode: CoupleMode) -> (WeakMeter, WeakMeter) {
    let phase_a = match mode {
        CoupleMode::Real => 0.0,
        CoupleMode::Imaginary => std::f64::consts::FRAC_PI_2,
    };
    (WeakMeter::qubit(strength, phase_a), WeakMeter::qubit(strength, 0.0))
}

fn projector_defect(pi: &CMatrix) -> f64 {
    max_abs_diff(&(pi * pi), pi).max(max_abs_diff(pi, &pi.adjoint()))
}

/// Kraus family `M_x = sqrt(p(x)) 1 + g(x) Pi` without any correction.
pub fn kraus_uncorrected(meter: &WeakMeter, projector: &CMatrix) -> Result<Vec<CMatrix>> {
    let defect = projector_defect(projector);
    if defect >= 1e-10 {
        return Err(Error::NotProjector { defect });
    }
    let id = identity(projector.nrows());
    Ok(meter
        .baseline
        .iter()
        .zip(&meter.couplings)
        .map(|(p, g)| &id * c(p.sqrt(), 0.0) + projector * *g)
        .collect())
}

/// Trace-preserving Kraus family for a weak measurement of `projector`.
///
/// The raw family misses completeness by `O(g^2)` on the range of `Pi`.
/// Every operator is multiplied on the right by `S^{-1/2}`, `S = sum M^dagger M`.
/// `S` commutes with `Pi`, so each corrected operator still has the form
/// `sqrt(p(x)) 1 + g'(x) Pi` with `g' - g = O(g^2)`.
pub fn kraus_from_meter(meter: &WeakMeter, projector: &CMatrix) -> Result<Vec<CMatrix>> {
    meter.check_calibration()?;
    let raw = kraus_uncorrected(meter, projector)?;
    let d = projector.nrows();
    let s = raw.iter().fold(CMatrix::zeros(d, d), |acc, m| acc + m.adjoint() * m);
    let eig = eig_hermitian(&s)?;
    let min = eig.eigenvalues.first().copied().unwrap_or(0.0);
    if min < 1e-12 {
        return Err(Error::CompletenessUnreachable { min_eigenvalue: min });
    }
    let inv_sqrt = eig.apply_fn(|l| c(1.0 / l.sqrt(), 0.0));
    let family: Vec<CMatrix> = raw.into_iter().map(|m| m * &inv_sqrt).collect();
    let resid = kraus_completeness_residual(&family);
    if resid >= 1e-10 {
        return Err(Error::CompletenessUnreachable { min_eigenvalue: min });
    }
    Ok(family)
}

/// `max | sum M^dagger M - 1 |`.
pub fn kraus_completeness_residual(family: &[CMatrix]) -> f64 {
    let Some(first) = family.first() else {
        return f64::INFINITY;
    };
    let d = first.ncols();
    let s = family.iter().fold(CMatrix::zeros(d, d), |acc, m| acc + m.adjoint() * m);
    max_abs_diff(&s, &identity(d))
}

/// Labels of the amplitude being targeted: prepared `w3`, weakly measured
/// `v1` (meter `a`) and `w2` (meter `b`).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct WeakTarget {
    pub w3: OutcomeIndex,
    pub w2: OutcomeIndex,
    pub v1: OutcomeIndex,
}

/// Outcome distribution of the two-weak-measurement protocol, conditioned on
/// the prepared `|w3>`. Probabilities are stored row-major over
/// `(x, y, final)`.
#[derive(Debug, Clone, Serialize)]
pub struct WeakStatistics {
    pub target: WeakTarget,
    pub meter_a: WeakMeter,
    pub meter_b: WeakMeter,
    pub finals: Vec<OutcomeIndex>,
    pub probabilities: Vec<f64>,
    /// Population `p_{w3}` of the prepared state in `U rho U^dagger`.
    pub preparation_weight: f64,
    /// Born-rule `|<v2|U^dagger|w3>|^2` per final outcome, meters decoupled.
    pub born_final: Vec<f64>,
    /// Number of trials behind the probabilities; `None` for exact statistics.
    pub trials: Option<u64>,
}

impl WeakStatistics {
    fn flat(&self, ix: usize, iy: usize, k: usize) -> usize {
        (ix * self.meter_b.len() + iy) * self.finals.len() + k
    }

    pub fn probability(&self, ix: usize, iy: usize, k: usize) -> f64 {
        self.probabilities[self.flat(ix, iy, k)]
    }

    pub fn total(&self) -> f64 {
        self.probabilities.iter().sum()
    }

    fn final_position(&self, v2: OutcomeIndex) -> Result<usize> {
        self.finals.iter().position(|f| *f == v2).ok_or(Error::IndexOutOfRange {
            group: v2.group,
            degeneracy: v2.degeneracy,
        })
    }

    /// `sum_{x,y} x y P(x, y, v2)`.
    pub fn correlation(&self, v2: OutcomeIndex) -> Result<f64> {
        let k = self.final_position(v2)?;
        let mut total = 0.0;
        for (ix, x) in self.meter_a.outcomes.iter().enumerate() {
            for (iy, y) in self.meter_b.outcomes.iter().enumerate() {
                total += x * y * self.probability(ix, iy, k);
            }
        }
        Ok(total)
    }

    /// Standard error of [`correlation`](Self::correlation) for sampled data.
    pub fn correlation_std_error(&self, v2: OutcomeIndex) -> Result<Option<f64>> {
        let Some(n) = self.trials else {
            return Ok(None);
        };
        let k = self.final_position(v2)?;
        let mut mean = 0.0;
        let mut second = 0.0;
        for (ix, x) in self.meter_a.outcomes.iter().enumerate() {
            for (iy, y) in self.meter_b.outcomes.iter().enumerate() {
                let p = self.probability(ix, iy, k);
                mean += x * y * p;
                second += (x * y).powi(2) * p;
            }
        }
        Ok(Some(((second - mean * mean).max(0.0) / n as f64).sqrt()))
    }
}

/// Exact outcome probabilities of the simplified weak protocol.
pub fn weak_statistics_exact(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    meter_a: &WeakMeter,
    meter_b: &WeakMeter,
    target: WeakTarget,
) -> Result<WeakStatistics> {
    let d = rho.dim();
    ensure_dim(d, w.dim())?;
    ensure_dim(d, v.dim())?;
    ensure_dim(d, u.dim())?;
    let evolved = w_t_populations(rho, w, u)?;
    let w3 = w.vector(target.w3)?;
    let w2 = w.vector(target.w2)?;
    let v1 = v.vector(target.v1)?;
    let prep = crate::linalg::sandwich(w3, &evolved, w3).re;

    let ka = kraus_from_meter(meter_a, &outer(v1, v1))?;
    let kb = kraus_from_meter(meter_b, &outer(w2, w2))?;
    let ud = u.u.adjoint();
    let finals = v.outcomes();
    let vbasis = v.basis();

    let psi = &ud * w3;
    let born_final: Vec<f64> = vbasis.iter().map(|vv| vv.dotc(&psi).norm_sqr()).collect();

    let mut probabilities = Vec::with_capacity(ka.len() * kb.len() * finals.len());
    for mx in &ka {
        let after_a = &u.u * (mx * &psi);
        for my in &kb {
            let out = &ud * (my * &after_a);
            probabilities.extend(vbasis.iter().map(|vv| vv.dotc(&out).norm_sqr()));
        }
    }
    Ok(WeakStatistics {
        target,
        meter_a: meter_a.clone(),
        meter_b: meter_b.clone(),
        finals,
        probabilities,
        preparation_weight: prep,
        born_final,
        trials: None,
    })
}

/// Aggregated outcome counts of simulated trials.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakTrialRecord {
    pub x: f64,
    pub y: f64,
    #[serde(rename = "final")]
    pub final_outcome: OutcomeIndex,
    pub count: u64,
}

const SAMPLE_CHUNK: u64 = 1 << 16;

/// Draw `trials` i.i.d. outcomes from `stats`. Chunk `k` of the trial stream
/// uses ChaCha stream `k` under `seed`, so results do not depend on threading.
/// One record per outcome, in `(x, y, final)` order, zero counts included.
pub fn weak_sample(stats: &WeakStatistics, trials: u64, seed: u64) -> Result<Vec<WeakTrialRecord>> {
    if trials == 0 {
        return Err(Error::NoTrials);
    }
    let weights: Vec<f64> = stats.probabilities.iter().map(|p| p.max(0.0)).collect();
    let dist = WeightedAliasIndex::new(weights)
        .map_err(|e| Error::InvalidState(format!("outcome weights: {e}")))?;
    let n_chunks = trials.div_ceil(SAMPLE_CHUNK);
    let n_out = stats.probabilities.len();
    let counts = (0..n_chunks)
        .into_par_iter()
        .map(|k| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            rng.set_stream(k);
            let len = SAMPLE_CHUNK.min(trials - k * SAMPLE_CHUNK);
            let mut local = vec![0u64; n_out];
            for _ in 0..len {
                local[dist.sample(&mut rng)] += 1;
            }
            local
        })
        .reduce(
            || vec![0u64; n_out],
            |mut a, b| {
                a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
                a
            },
        );
    let mut records = Vec::with_capacity(n_out);
    for (ix, x) in stats.meter_a.outcomes.iter().enumerate() {
        for (iy, y) in stats.meter_b.outcomes.iter().enumerate() {
            for (k, f) in stats.finals.iter().enumerate() {
                records.push(WeakTrialRecord {
                    x: *x,
                    y: *y,
                    final_outcome: *f,
                    count: counts[stats.flat(ix, iy, k)],
                });
            }
        }
    }
    Ok(records)
}

/// Empirical statistics from sampled records, reusing the meters, target and
/// Born-rule background of `template`.
pub fn statistics_from_records(template: &WeakStatistics, records: &[WeakTrialRecord]) -> Result<WeakStatistics> {
    let mut counts = vec![0u64; template.probabilities.len()];
    for r in records {
        let ix = template.meter_a.outcomes.iter().position(|x| *x == r.x);
        let iy = template.meter_b.outcomes.iter().position(|y| *y == r.y);
        let k = template.finals.iter().position(|f| *f == r.final_outcome);
        match (ix, iy, k) {
            (Some(ix), Some(iy), Some(k)) => counts[template.flat(ix, iy, k)] += r.count,
            _ => {
                return Err(Error::IndexOutOfRange {
                    group: r.final_outcome.group,
                    degeneracy: r.final_outcome.degeneracy,
                })
            }
        }
    }
    let n: u64 = counts.iter().sum();
    if n == 0 {
        return Err(Error::NoTrials);
    }
    let mut out = template.clone();
    out.probabilities = counts.iter().map(|&k| k as f64 / n as f64).collect();
    out.trials = Some(n);
    Ok(out)
}

/// One inferred component of the combined amplitude.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeakInference {
    pub mode: CoupleMode,
    /// `Re A~` in real mode, `Im A~` in imaginary mode.
    pub component: f64,
    pub correlation: f64,
    pub background: f64,
    pub alpha: C64,
    /// Propagated standard error, present for sampled statistics.
    pub std_error: Option<f64>,
}

/// Infer `Re` or `Im` of `A~(w2, w3, v1, v2)` from weak-measurement statistics.
///
/// Subtracts the background `2 Re(beta) |<v2|U^dagger|w3>|^2` (coincident
/// indices only, `beta = sum x y sqrt(p_a p_b) conj(g_a) g_b`), then solves
/// `I - background = 2 Re(alpha X)` for the requested part of `X`, and
/// rescales by the preparation weight `p_{w3}`.
pub fn weak_infer_tilde(stats: &WeakStatistics, v2: OutcomeIndex, mode: CoupleMode) -> Result<WeakInference> {
    let sa = stats.meter_a.weighted_coupling(false);
    let sb = stats.meter_b.weighted_coupling(false);
    let alpha = sa * sb;
    let beta = stats.meter_a.weighted_coupling(true) * sb;
    if alpha.norm() == 0.0 {
        return Err(Error::ZeroCoupling);
    }
    let off_axis = match mode {
        CoupleMode::Real => alpha.im.abs(),
        CoupleMode::Imaginary => alpha.re.abs(),
    };
    if off_axis > 1e-12 * alpha.norm() {
        return Err(Error::UncalibratedMeter(format!(
            "coupling combination {alpha} does not match {mode:?} mode"
        )));
    }

    let k = stats.final_position(v2)?;
    let correlation = stats.correlation(v2)?;
    let t = stats.target;
    let coincident = t.w3 == t.w2 && v2 == t.v1;
    let background = if coincident {
        2.0 * beta.re * stats.born_final[k]
    } else {
        0.0
    };
    let signal = correlation - background;
    let scale = match mode {
        CoupleMode::Real => 2.0 * alpha.re,
        CoupleMode::Imaginary => -2.0 * alpha.im,
    };
    let p = stats.preparation_weight;
    let component = signal / scale * p;
    let std_error = stats
        .correlation_std_error(v2)?
        .map(|se| se / scale.abs() * p);
    Ok(WeakInference {
        mode,
        component,
        correlation,
        background,
        alpha,
        std_error,
    })
}

/// How statistics are produced for an estimate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub enum Sampling {
    Exact,
    Sampled { trials: u64, seed: u64 },
}

/// Complex estimate assembled from a real-mode and an imaginary-mode run.
#[derive(Debug, Clone, Serialize)]
pub struct WeakEstimate {
    pub estimate: C64,
    pub real: WeakInference,
    pub imaginary: WeakInference,
    pub strength: f64,
}

impl WeakEstimate {
    /// Combined standard error `sqrt(se_re^2 + se_im^2)`.
    pub fn std_error(&self) -> Option<f64> {
        match (self.real.std_error, self.imaginary.std_error) {
            (Some(a), Some(b)) => Some(a.hypot(b)),
            _ => None,
        }
    }
}

/// Run both coupling modes at strength `strength` and combine the parts.
#[allow(clippy::too_many_arguments)]
pub fn weak_estimate(
    rho: &DensityOperator,
    w: &EigenUnitary,
    v: &EigenUnitary,
    u: &Propagator,
    target: WeakTarget,
    v2: OutcomeIndex,
    strength: f64,
    sampling: Sampling,
) -> Result<WeakEstimate> {
    let run = |mode: CoupleMode, stream: u64| -> Result<WeakInference> {
        let (ma, mb) = meter_pair(strength, mode);
        let exact = weak_statistics_exact(rho, w, v, u, &ma, &mb, target)?;
        let stats = match sampling {
            Sampling::Exact => exact,
            Sampling::Sampled { trials, seed } => {
                let records = weak_sample(&exact, trials, crate::random::derive_seed(seed, stream))?;
                statistics_from_records(&exact, &records)?
            }
        };
        weak_infer_tilde(&stats, v2, mode)
    };
    let real = run(CoupleMode::Real, 0)?;
    let imaginary = run(CoupleMode::Imaginary, 1)?;
    Ok(WeakEstimate {
        estimate: c(real.component, imaginary.component),
        real,
        imaginary,
        strength,
    })
}

/// Meter with one Kraus operator nudged off completeness, for negative controls.
pub fn perturbed_family(family: &[CMatrix], amount: f64) -> Vec<CMatrix> {
    let mut out = family.to_vec();
    if let Some(m) = out.first_mut() {
        let d = m.nrows();
        *m += identity(d) * c(amount, 0.0);
    }
    out
}
