use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use besm_core::stats::VerificationReport;
use serde::Serialize;

use crate::output::{create, write_capacity_table};
use crate::{Failure, Outcome};

#[derive(Serialize)]
struct Summary<'a> {
    passed: bool,
    n_reports: usize,
    n_failed: usize,
    /// `verifier_id:inputs_digest` of every failed report.
    failed: Vec<String>,
    reports: &'a [VerificationReport],
}

fn files_with(dir: &Path, keep: impl Fn(&str) -> bool) -> Result<Vec<PathBuf>, Failure> {
    let mut out = Vec::new();
    for entry in fs::read_dir(dir).map_err(|e| Failure::Config(format!("{}: {e}", dir.display())))? {
        let path = entry?.path();
        if path.is_file() && path.file_name().and_then(|n| n.to_str()).is_some_and(&keep) {
            out.push(path);
        }
    }
    out.sort();
    Ok(out)
}

fn load_reports(dir: &Path) -> Result<Vec<VerificationReport>, Failure> {
    if !dir.is_dir() {
        return Err(Failure::Config(format!("{} is not a run directory", dir.display())));
    }
    let mut reports = Vec::new();
    for path in files_with(dir, |n| n.ends_with(".jsonl"))? {
        let text = fs::read_to_string(&path)?;
        for (i, line) in text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty()) {
            let r: VerificationReport = serde_json::from_str(line).map_err(|e| {
                Failure::Config(format!("{}:{}: corrupt report: {e}", path.display(), i + 1))
            })?;
            reports.push(r);
        }
    }
    if reports.is_empty() {
        return Err(Failure::Config(format!("no reports found in {}", dir.display())));
    }
    Ok(reports)
}

/// Concatenates the `overlay_<name>.csv` tables into one long-format table.
fn merge_overlays(dir: &Path) -> Result<(), Failure> {
    let files = files_with(dir, |n| n.starts_with("overlay_") && n.ends_with(".csv"))?;
    if files.is_empty() {
        return Ok(());
    }
    let mut w = create(dir, "ks_overlays.csv")?;
    writeln!(w, "name,q,empirical,reference")?;
    for path in files {
        let name = path
            .file_stem()
            .and_then(|s| s.to_str())
            .and_then(|s| s.strip_prefix("overlay_"))
            .unwrap_or_default()
            .to_string();
        for line in fs::read_to_string(&path)?.lines().skip(1) {
            writeln!(w, "{name},{line}")?;
        }
    }
    w.flush()?;
    Ok(())
}

pub fn run(dir: &Path) -> Outcome {
    let reports = load_reports(dir)?;
    let failed: Vec<String> = reports
        .iter()
        .filter(|r| !r.passed)
        .map(|r| format!("{}:{}", r.verifier_id, r.inputs_digest))
        .collect();
    let summary = Summary {
        passed: failed.is_empty(),
        n_reports: reports.len(),
        n_failed: failed.len(),
        failed,
        reports: &reports,
    };

    let mut s = create(dir, "summary.json")?;
    serde_json::to_writer_pretty(&mut s, &summary).map_err(std::io::Error::from)?;
    writeln!(s)?;
    s.flush()?;

    let mut e = create(dir, "estimates.csv")?;
    writeln!(e, "verifier_id,inputs_digest,seed,passed,label,value,stderr")?;
    for r in &reports {
        for est in &r.estimates {
            writeln!(
                e,
                "{},{},{},{},\"{}\",{:.16e},{:.16e}",
                r.verifier_id, r.inputs_digest, r.seed, r.passed, est.label, est.value, est.stderr
            )?;
        }
    }
    e.flush()?;

    write_capacity_table(dir, &reports)?;
    merge_overlays(dir)?;
    println!(
        "{} reports, {} failed; summary written to {}",
        summary.n_reports,
        summary.n_failed,
        dir.join("summary.json").display()
    );
    Ok(true)
}
