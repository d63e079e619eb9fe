//! Command-line front end: `otoc run <config>` and `otoc selftest`.

mod config;
mod output;
mod runner;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use config::ExperimentConfig;
use otoc_core::selftest::{run_all, SelftestOptions};

#[derive(Debug, Parser)]
#[command(name = "otoc", version, about = "Correlator, quasiprobability and measurement-scheme numerics")]
struct Cli {
    /// Directory for results.csv and report.json.
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Overrides the seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Run the experiment described by a TOML config.
    Run { config: PathBuf },
    /// Run the fixed-seed acceptance checks.
    Selftest {
        /// Perturb one Kraus operator by this amount (negative control).
        #[arg(long, hide = true, default_value_t = 0.0)]
        inject_kraus_fault: f64,
    },
}

const EXIT_USAGE: u8 = 1;
const EXIT_VERIFY: u8 = 2;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(EXIT_USAGE) } else { ExitCode::SUCCESS };
        }
    };
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new().num_threads(n).build_global() {
            eprintln!("error: cannot set thread count: {e}");
            return ExitCode::from(EXIT_USAGE);
        }
    }
    let result = match &cli.command {
        Command::Run { config } => run(config, &cli),
        Command::Selftest { inject_kraus_fault } => selftest(*inject_kraus_fault, cli.out_dir.as_deref()),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(EXIT_VERIFY),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(EXIT_USAGE)
        }
    }
}

fn run(path: &Path, cli: &Cli) -> anyhow::Result<bool> {
    let mut cfg = ExperimentConfig::load(path)?;
    if cli.seed.is_some() {
        cfg.seed = cli.seed;
    }
    cfg.validate()?;
    let out = runner::run(&cfg)?;
    let dir = cli.out_dir.clone().unwrap_or_else(|| PathBuf::from("."));
    output::write_all(&dir, &out)?;
    for c in out.report.checks.iter().filter(|c| !c.pass) {
        eprintln!("FAIL {}: {:e} (tolerance {:e})", c.name, c.value, c.tolerance);
    }
    println!(
        "{} mode {}: {} rows, {} checks -> {}",
        if out.report.pass { "PASS" } else { "FAIL" },
        out.report.mode,
        out.report.rows,
        out.report.checks.len(),
        dir.display()
    );
    Ok(out.report.pass)
}

fn selftest(fault: f64, out_dir: Option<&Path>) -> anyhow::Result<bool> {
    let results = run_all(&SelftestOptions { kraus_perturbation: fault });
    for r in &results {
        println!("{}", r.line());
    }
    let pass = results.iter().all(|r| r.pass);
    if let Some(dir) = out_dir {
        output::write_selftest(dir, &results, pass)?;
    }
    Ok(pass)
}
