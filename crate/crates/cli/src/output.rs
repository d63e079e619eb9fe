//! Deterministic writers for `results.csv` and `report.json`.

use std::fs;
use std::path::Path;

use anyhow::Context;
use serde::Serialize;

use otoc_core::selftest::CheckResult;

use crate::runner::{RunOutput, Table};

fn write_table(path: &Path, table: &Table) -> anyhow::Result<()> {
    let mut w = csv::Writer::from_path(path).with_context(|| format!("cannot create {}", path.display()))?;
    w.write_record(&table.header)?;
    for row in &table.rows {
        w.write_record(row.iter().map(|c| c.render()))?;
    }
    w.flush()?;
    Ok(())
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text).with_context(|| format!("cannot write {}", path.display()))
}

pub fn write_all(dir: &Path, out: &RunOutput) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_table(&dir.join("results.csv"), &out.results)?;
    for (name, table) in &out.extra {
        write_table(&dir.join(name), table)?;
    }
    write_json(&dir.join("report.json"), &out.report)
}

#[derive(Serialize)]
struct SelftestReport<'a> {
    mode: &'static str,
    checks: &'a [CheckResult],
    pass: bool,
}

pub fn write_selftest(dir: &Path, results: &[CheckResult], pass: bool) -> anyhow::Result<()> {
    fs::create_dir_all(dir).with_context(|| format!("cannot create {}", dir.display()))?;
    write_json(
        &dir.join("report.json"),
        &SelftestReport {
            mode: "selftest",
            checks: results,
            pass,
        },
    )
}
