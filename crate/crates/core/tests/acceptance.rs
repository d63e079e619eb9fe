//! One PASS/FAIL line per acceptance criterion. Run with `--nocapture` to see
//! the lines; the test fails if any criterion fails.

use std::process::Command;
use std::time::{Duration, Instant};

use otoc_core::selftest::{run_all, SelftestOptions};

fn cli_binary() -> Option<std::path::PathBuf> {
    // The CLI is a sibling crate; look next to this test's own profile directory.
    let exe = std::env::current_exe().ok()?;
    let profile = exe.parent()?.parent()?;
    let bin = profile.join(format!("otoc{}", std::env::consts::EXE_SUFFIX));
    bin.exists().then_some(bin)
}

#[test]
fn acceptance() {
    let start = Instant::now();
    let results = run_all(&SelftestOptions::default());
    let mut all_pass = true;
    for r in &results {
        println!("{}", r.line());
        all_pass &= r.pass;
    }
    let elapsed = start.elapsed();

    // Criterion 11: the selftest binary exits 0 within the time budget.
    let budget = Duration::from_secs(180);
    let (pass11, detail) = match cli_binary() {
        Some(bin) => {
            let t0 = Instant::now();
            let status = Command::new(&bin).arg("selftest").output();
            let took = t0.elapsed();
            match status {
                Ok(out) => (
                    out.status.code() == Some(0) && took < budget,
                    format!("{} exited {:?} in {:.1}s", bin.display(), out.status.code(), took.as_secs_f64()),
                ),
                Err(e) => (false, format!("could not launch {}: {e}", bin.display())),
            }
        }
        None => (
            all_pass && elapsed < budget,
            format!("CLI binary not built; in-process suite took {:.1}s", elapsed.as_secs_f64()),
        ),
    };
    println!("{} criterion 11 selftest end to end: {detail}", if pass11 { "PASS" } else { "FAIL" });
    all_pass &= pass11;
    assert!(all_pass, "at least one acceptance criterion failed");
}

#[test]
fn kraus_fault_is_detected() {
    let r = otoc_core::selftest::criterion_7(&SelftestOptions { kraus_perturbation: 1e-3 });
    assert!(!r.pass, "{}", r.line());
}
