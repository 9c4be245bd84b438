use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use besm_core::linalg::Matrix;
use besm_core::stats::VerificationReport;

use crate::Failure;

/// Parses `identity`, `diag:a,b,...` or a file of `d²` numbers (row-major,
/// separated by whitespace or commas).
pub fn parse_x0(spec: &str, d: usize) -> Result<Matrix, Failure> {
    let m = if spec == "identity" {
        Matrix::identity(d)
    } else if let Some(list) = spec.strip_prefix("diag:") {
        let vals = parse_numbers(list).map_err(Failure::Config)?;
        Matrix::from_diag(&vals)
    } else {
        let text = fs::read_to_string(spec)
            .map_err(|e| Failure::Config(format!("cannot read x0 file {spec}: {e}")))?;
        let vals = parse_numbers(&text).map_err(Failure::Config)?;
        if vals.len() != d * d {
            return Err(Failure::Config(format!(
                "x0 file has {} entries, expected {} for d = {d}",
                vals.len(),
                d * d
            )));
        }
        Matrix::from_row_major(d, vals)?
    };
    if m.dim() != d {
        return Err(Failure::Config(format!("x0 is {0}x{0} but --d is {d}", m.dim())));
    }
    Ok(m)
}

fn parse_numbers(text: &str) -> Result<Vec<f64>, String> {
    text.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<f64>().map_err(|_| format!("not a number: {s:?}")))
        .collect()
}

pub fn create(dir: &Path, name: &str) -> Result<BufWriter<File>, Failure> {
    fs::create_dir_all(dir)?;
    Ok(BufWriter::new(File::create(dir.join(name))?))
}

pub fn write_reports(dir: &Path, name: &str, reports: &[VerificationReport]) -> Result<PathBuf, Failure> {
    let mut w = create(dir, name)?;
    for r in reports {
        writeln!(w, "{}", r.to_json_line())?;
    }
    w.flush()?;
    Ok(dir.join(name))
}

/// Rows `eps,mass,stderr,scaled_mass,ln_eps,ln_mass` from capacity reports.
pub fn write_capacity_table(dir: &Path, reports: &[VerificationReport]) -> Result<bool, Failure> {
    let mut rows = Vec::new();
    for r in reports.iter().filter(|r| r.verifier_id == "capacity") {
        for e in &r.estimates {
            let Some(eps) = e.label.strip_prefix("mass[eps=").and_then(|s| s.strip_suffix(']')) else {
                continue;
            };
            let eps: f64 = eps.parse().map_err(|_| Failure::Runtime(format!("bad label {}", e.label)))?;
            rows.push(format!(
                "{},{eps:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e}",
                r.inputs_digest,
                e.value,
                e.stderr,
                e.value / (eps * eps),
                eps.ln(),
                e.value.ln()
            ));
        }
    }
    if rows.is_empty() {
        return Ok(false);
    }
    let mut w = create(dir, "capacity_loglog.csv")?;
    writeln!(w, "inputs_digest,eps,mass,stderr,scaled_mass,ln_eps,ln_mass")?;
    for row in rows {
        writeln!(w, "{row}")?;
    }
    w.flush()?;
    Ok(true)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn x0_forms() {
        assert_eq!(parse_x0("identity", 3).unwrap(), Matrix::identity(3));
        assert_eq!(parse_x0("diag:2, 3", 2).unwrap(), Matrix::from_diag(&[2.0, 3.0]));
        assert!(matches!(parse_x0("diag:1,2,3", 2), Err(Failure::Config(_))));
        assert!(matches!(parse_x0("diag:1,x", 2), Err(Failure::Config(_))));
        assert!(matches!(parse_x0("/no/such/file", 2), Err(Failure::Config(_))));
    }
}
