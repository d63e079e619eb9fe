//! Executes one experiment config and gathers tabular rows and report checks.

use anyhow::{bail, Context};
use rayon::prelude::*;
use serde::Serialize;

use otoc_core::model::build_tfim;
use otoc_core::otoc::otoc_sweep;
use otoc_core::protocol::interfere::{assemble_tilde_interference, InferMode};
use otoc_core::protocol::weak::{
    meter_pair, statistics_from_records, weak_infer_tilde, weak_sample, weak_statistics_exact, CoupleMode,
    WeakInference, WeakTarget, WeakTrialRecord,
};
use otoc_core::quasiprob::{
    build_p_streaming, jarzynski_fd, jarzynski_moment, tilde_a_closed, verify_theorem, QuadIndex, VerifyOptions,
    THEOREM_TOL,
};
use otoc_core::random::derive_seed;
use otoc_core::selftest::{theorem_suite, SUITE_SEED};
use otoc_core::{DensityOperator, EigenUnitary, Hamiltonian, OtocModel, C64};

use crate::config::{read_matrix, ExperimentConfig, Mode, OperatorConfig, StateConfig};

/// One numeric result with the tolerance it was judged against.
#[derive(Debug, Clone, Serialize)]
pub struct Check {
    pub name: String,
    pub t: Option<f64>,
    pub value: f64,
    pub tolerance: f64,
    pub pass: bool,
}

impl Check {
    /// Passes when `value < tolerance`.
    fn below(name: &str, t: Option<f64>, value: f64, tolerance: f64) -> Self {
        Self {
            name: name.to_string(),
            t,
            value,
            tolerance,
            pass: value < tolerance,
        }
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Report {
    pub mode: String,
    pub seed: Option<u64>,
    pub dim: usize,
    pub rows: usize,
    pub checks: Vec<Check>,
    pub pass: bool,
}

/// Cell of a result table. Floats are written with 17 significant digits.
#[derive(Debug, Clone)]
pub enum Cell {
    F(f64),
    U(u64),
    S(String),
}

impl Cell {
    pub fn render(&self) -> String {
        match self {
            Cell::F(x) => format!("{x:.16e}"),
            Cell::U(n) => n.to_string(),
            Cell::S(s) => s.clone(),
        }
    }
}

#[derive(Debug, Clone, Default)]
pub struct Table {
    pub header: Vec<String>,
    pub rows: Vec<Vec<Cell>>,
}

impl Table {
    fn new(header: &[&str]) -> Self {
        Self {
            header: header.iter().map(|s| s.to_string()).collect(),
            rows: Vec::new(),
        }
    }
}

pub struct RunOutput {
    pub results: Table,
    /// Extra tables written next to `results.csv`, by file name.
    pub extra: Vec<(String, Table)>,
    pub report: Report,
}

fn build_model(cfg: &ExperimentConfig) -> anyhow::Result<OtocModel> {
    let cap = cfg.dim_cap();
    let h = match &cfg.model.matrix_file {
        Some(p) => Hamiltonian::from_matrix(read_matrix(p)?, p.display().to_string())?,
        None => build_tfim(cfg.model.n, cfg.model.j, cfg.model.g, cfg.model.h, cap)?,
    };
    let d = h.dim();
    if d > cap {
        bail!("dimension {d} exceeds the cap {cap}");
    }
    let rho = match &cfg.state {
        StateConfig::MaximallyMixed => DensityOperator::maximally_mixed(d),
        StateConfig::Gibbs { temperature } => DensityOperator::gibbs(&h, *temperature)?,
        StateConfig::File { path } => DensityOperator::from_matrix(read_matrix(path)?)?,
    };
    let n_sites = d.trailing_zeros() as usize;
    let op = |c: &OperatorConfig, name: &str| -> anyhow::Result<EigenUnitary> {
        Ok(match c {
            OperatorConfig::Identity => EigenUnitary::identity(d),
            OperatorConfig::Pauli { site, axis } => {
                if !d.is_power_of_two() {
                    bail!("operator {name}: Pauli placement needs a qubit register, dimension is {d}");
                }
                EigenUnitary::pauli_site(n_sites, *site, *axis)?
            }
            OperatorConfig::Generator { path } => EigenUnitary::from_generator(&read_matrix(path)?)?,
        })
    };
    let w = op(&cfg.operators.w, "W")?;
    let v = op(&cfg.operators.v, "V")?;
    Ok(OtocModel::new(h, rho, w, v)?)
}

fn complex_cells(z: C64) -> [Cell; 2] {
    [Cell::F(z.re), Cell::F(z.im)]
}

pub fn run(cfg: &ExperimentConfig) -> anyhow::Result<RunOutput> {
    if cfg.mode == Mode::Verify {
        if let Some(n) = cfg.verify.random_instances {
            return run_verify_suite(cfg, n);
        }
    }
    let model = build_model(cfg)?;
    let (results, extra, checks) = match cfg.mode {
        Mode::Otoc => run_otoc(&model, cfg)?,
        Mode::Quasiprob => run_quasiprob(&model, cfg)?,
        Mode::Verify => run_verify(&model, cfg)?,
        Mode::WeakSim => run_weak(&model, cfg)?,
        Mode::InterfSim => run_interference(&model, cfg)?,
    };
    Ok(finish(cfg, model.dim(), results, extra, checks))
}

fn finish(cfg: &ExperimentConfig, dim: usize, results: Table, extra: Vec<(String, Table)>, checks: Vec<Check>) -> RunOutput {
    let pass = checks.iter().all(|c| c.pass);
    RunOutput {
        report: Report {
            mode: cfg.mode.to_string(),
            seed: cfg.seed,
            dim,
            rows: results.rows.len(),
            checks,
            pass,
        },
        results,
        extra,
    }
}

type ModeOutput = (Table, Vec<(String, Table)>, Vec<Check>);

fn run_otoc(model: &OtocModel, cfg: &ExperimentConfig) -> anyhow::Result<ModeOutput> {
    let pts = otoc_sweep(model, &cfg.times)?;
    let mut table = Table::new(&["t", "c_re", "c_im"]);
    let mut checks = Vec::new();
    for p in &pts {
        let [re, im] = complex_cells(p.value);
        table.rows.push(vec![Cell::F(p.t), re, im]);
        checks.push(Check::below("|C(t)| - 1", Some(p.t), p.value.norm() - 1.0, 1e-9));
    }
    Ok((table, Vec::new(), checks))
}

fn run_quasiprob(model: &OtocModel, cfg: &ExperimentConfig) -> anyhow::Result<ModeOutput> {
    let q = &cfg.quasiprob;
    let d = model.dim();
    if d > q.dim_cap {
        bail!("dimension {d} exceeds the quasiprobability cap {}", q.dim_cap);
    }
    let per_t: Vec<_> = cfg
        .times
        .par_iter()
        .map(|&t| {
            let u = model.propagator(t);
            let p = build_p_streaming(&model.rho, &model.w, &model.v, &u, q.bin_quantum)?;
            let direct = otoc_core::otoc::otoc_direct(&model.rho, &model.w, &model.v, &u)?.value;
            Ok((t, p, direct))
        })
        .collect::<otoc_core::Result<_>>()?;
    let mut table = Table::new(&["t", "w_re", "w_im", "w_prime_re", "w_prime_im", "p_re", "p_im"]);
    let mut checks = Vec::new();
    for (t, p, direct) in &per_t {
        for b in p.bins() {
            let mut row = vec![Cell::F(*t)];
            row.extend(complex_cells(b.w));
            row.extend(complex_cells(b.w_prime));
            row.extend(complex_cells(b.value));
            table.rows.push(row);
        }
        checks.push(Check::below("|sum P - 1|", Some(*t), (p.total() - C64::new(1.0, 0.0)).norm(), 1e-10));
        checks.push(Check::below(
            "|moment - C_direct|",
            Some(*t),
            (jarzynski_moment(p) - direct).norm(),
            THEOREM_TOL,
        ));
        checks.push(Check::below(
            "|fd - C_direct|",
            Some(*t),
            (jarzynski_fd(p, q.h_fd)? - direct).norm(),
            FD_TOL,
        ));
    }
    Ok((table, Vec::new(), checks))
}

const VERIFY_HEADER: [&str; 11] = [
    "instance",
    "t",
    "dim",
    "c_direct_re",
    "c_direct_im",
    "c_moment_re",
    "c_moment_im",
    "c_fd_re",
    "c_fd_im",
    "err_moment",
    "err_fd",
];

const FD_TOL: f64 = 1e-6;

fn verify_rows(
    reports: &[(String, otoc_core::quasiprob::TheoremReport)],
) -> (Table, Vec<Check>) {
    let mut table = Table::new(&VERIFY_HEADER);
    let mut checks = Vec::new();
    for (label, r) in reports {
        let mut row = vec![Cell::S(label.clone()), Cell::F(r.t), Cell::U(r.dim as u64)];
        row.extend(complex_cells(r.c_direct));
        row.extend(complex_cells(r.c_moment));
        row.extend(complex_cells(r.c_fd));
        row.push(Cell::F(r.err_moment));
        row.push(Cell::F(r.err_fd));
        table.rows.push(row);
        checks.push(Check::below(&format!("{label}: |moment - C_direct|"), Some(r.t), r.err_moment, r.tolerance));
        checks.push(Check::below(&format!("{label}: |fd - C_direct|"), Some(r.t), r.err_fd, FD_TOL));
    }
    (table, checks)
}

fn verify_options(cfg: &ExperimentConfig) -> VerifyOptions {
    VerifyOptions {
        quantum: cfg.quasiprob.bin_quantum,
        fd_step: cfg.quasiprob.h_fd,
        dim_cap: cfg.quasiprob.dim_cap,
    }
}

fn run_verify(model: &OtocModel, cfg: &ExperimentConfig) -> anyhow::Result<ModeOutput> {
    let opts = verify_options(cfg);
    let reports = cfg
        .times
        .par_iter()
        .map(|&t| Ok(("configured".to_string(), verify_theorem(model, t, &opts)?)))
        .collect::<otoc_core::Result<Vec<_>>>()?;
    let (table, checks) = verify_rows(&reports);
    Ok((table, Vec::new(), checks))
}

fn run_verify_suite(cfg: &ExperimentConfig, n: usize) -> anyhow::Result<RunOutput> {
    let seed = cfg.seed.unwrap_or(SUITE_SEED);
    let suite = theorem_suite(seed, n)?;
    let opts = verify_options(cfg);
    let reports = suite
        .par_iter()
        .map(|inst| Ok((inst.label.clone(), verify_theorem(&inst.model, inst.t, &opts)?)))
        .collect::<otoc_core::Result<Vec<_>>>()?;
    let (table, checks) = verify_rows(&reports);
    let dim = suite.iter().map(|i| i.model.dim()).max().unwrap_or(0);
    Ok(finish(cfg, dim, table, Vec::new(), checks))
}

fn quad(ix: [otoc_core::OutcomeIndex; 4]) -> QuadIndex {
    QuadIndex {
        w2: ix[0],
        w3: ix[1],
        v1: ix[2],
        v2: ix[3],
    }
}

fn run_weak(model: &OtocModel, cfg: &ExperimentConfig) -> anyhow::Result<ModeOutput> {
    let wc = &cfg.weak;
    let idx = quad(wc.indices());
    let target = WeakTarget {
        w3: idx.w3,
        w2: idx.w2,
        v1: idx.v1,
    };
    let seed = cfg.seed.unwrap_or(0);
    let mut table = Table::new(&[
        "t",
        "strength",
        "estimate_re",
        "estimate_im",
        "exact_stats_re",
        "exact_stats_im",
        "oracle_re",
        "oracle_im",
        "abs_error",
        "std_error",
        "trials",
    ]);
    let mut trials_table = Table::new(&["t", "couple_mode", "x", "y", "v2_group", "v2_degeneracy", "count"]);
    let mut checks = Vec::new();
    for (ti, &t) in cfg.times.iter().enumerate() {
        let u = model.propagator(t);
        let oracle = tilde_a_closed(&model.rho, &model.w, &model.v, &u, &idx)?;
        let mut exact_parts = [0.0; 2];
        let mut est_parts = [0.0; 2];
        let mut ses = [0.0; 2];
        for (k, mode) in [CoupleMode::Real, CoupleMode::Imaginary].into_iter().enumerate() {
            let (ma, mb) = meter_pair(wc.strength, mode);
            let stats = weak_statistics_exact(&model.rho, &model.w, &model.v, &u, &ma, &mb, target)
                .context("weak-measurement statistics")?;
            let exact: WeakInference = weak_infer_tilde(&stats, idx.v2, mode)?;
            exact_parts[k] = exact.component;
            est_parts[k] = exact.component;
            if wc.trials > 0 {
                let stream = derive_seed(seed, (ti * 2 + k) as u64);
                let records: Vec<WeakTrialRecord> = weak_sample(&stats, wc.trials, stream)?;
                for r in &records {
                    trials_table.rows.push(vec![
                        Cell::F(t),
                        Cell::S(format!("{mode:?}").to_lowercase()),
                        Cell::F(r.x),
                        Cell::F(r.y),
                        Cell::U(r.final_outcome.group as u64),
                        Cell::U(r.final_outcome.degeneracy as u64),
                        Cell::U(r.count),
                    ]);
                }
                let sampled = statistics_from_records(&stats, &records)?;
                let inf = weak_infer_tilde(&sampled, idx.v2, mode)?;
                est_parts[k] = inf.component;
                ses[k] = inf.std_error.unwrap_or(f64::NAN);
            }
        }
        let estimate = C64::new(est_parts[0], est_parts[1]);
        let exact_est = C64::new(exact_parts[0], exact_parts[1]);
        let se = ses[0].hypot(ses[1]);
        let err = (estimate - oracle).norm();
        let mut row = vec![Cell::F(t), Cell::F(wc.strength)];
        row.extend(complex_cells(estimate));
        row.extend(complex_cells(exact_est));
        row.extend(complex_cells(oracle));
        row.push(Cell::F(err));
        row.push(Cell::F(se));
        row.push(Cell::U(wc.trials));
        table.rows.push(row);
        checks.push(Check::below(
            "exact-statistics bias |estimate - closed form|",
            Some(t),
            (exact_est - oracle).norm(),
            0.1 * oracle.norm() + 1e-3,
        ));
        if wc.trials > 0 {
            let dev = ((est_parts[0] - exact_parts[0]).abs() / ses[0]).max((est_parts[1] - exact_parts[1]).abs() / ses[1]);
            checks.push(Check::below("sampling deviation in standard errors", Some(t), dev, 3.0));
        }
    }
    let extra = if wc.trials > 0 {
        vec![("trials.csv".to_string(), trials_table)]
    } else {
        Vec::new()
    };
    Ok((table, extra, checks))
}

fn run_interference(model: &OtocModel, cfg: &ExperimentConfig) -> anyhow::Result<ModeOutput> {
    let ic = &cfg.interference;
    let idx = quad(ic.indices());
    let seed = cfg.seed.unwrap_or(0);
    let mut table = Table::new(&[
        "t",
        "estimate_re",
        "estimate_im",
        "oracle_re",
        "oracle_im",
        "abs_error",
        "budget",
        "probability",
        "trials",
    ]);
    let mut checks = Vec::new();
    let per_t = cfg
        .times
        .par_iter()
        .enumerate()
        .map(|(ti, &t)| {
            let u = model.propagator(t);
            let mode = if ic.trials > 0 {
                InferMode::Sampled {
                    trials: ic.trials,
                    seed: derive_seed(seed, ti as u64),
                }
            } else {
                InferMode::Exact
            };
            let out = assemble_tilde_interference(&model.rho, &model.w, &model.v, &u, &idx, ic.theta, ic.phi, mode)?;
            let oracle = tilde_a_closed(&model.rho, &model.w, &model.v, &u, &idx)?;
            Ok((t, out, oracle))
        })
        .collect::<otoc_core::Result<Vec<_>>>()?;
    for (t, out, oracle) in per_t {
        let err = (out.value - oracle).norm();
        let mut row = vec![Cell::F(t)];
        row.extend(complex_cells(out.value));
        row.extend(complex_cells(oracle));
        row.push(Cell::F(err));
        row.push(Cell::F(out.budget));
        row.push(Cell::F(out.probability));
        row.push(Cell::U(ic.trials));
        table.rows.push(row);
        if ic.trials > 0 {
            checks.push(Check::below("|estimate - closed form| / budget", Some(t), err / out.budget, 3.0));
        } else {
            checks.push(Check::below("|estimate - closed form|", Some(t), err, 1e-9));
        }
    }
    Ok((table, Vec::new(), checks))
}
