//! Machine-readable run outputs: a JSON report plus a per-step CSV.
//!
//! Both files are written on every solve so downstream tooling can pick
//! whichever is convenient. All floating-point fields are printed with 17
//! significant digits, which round-trips f64 exactly; two runs with the
//! same configuration therefore produce byte-identical files.

use std::fs;
use std::path::Path;

use serde::Serialize;

use crate::controller::StepRecord;
use crate::error::Result;

/// Error block for the controlled functional z'p(t_final).
#[derive(Debug, Clone, Serialize)]
pub struct FunctionalReport {
    /// Index of the controlled component in the full state ordering.
    pub component: usize,
    /// Signed true error z'(p_exact - p_computed), when an oracle exists.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub true_error: Option<f64>,
    /// Signed dual-weighted estimate, when the run carried a full dual.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e1: Option<f64>,
    /// Dual-norm-weighted bound, when the run carried a dual.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub e2: Option<f64>,
    /// Dual-free bound; always available.
    pub e3: f64,
}

/// One solve, summarized for serialization.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub problem: String,
    /// The fully resolved configuration the solve actually used.
    pub config: crate::config::FileConfig,
    /// Final-time sup-norm error against the analytic solution.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub linf_error: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub functional: Option<FunctionalReport>,
    /// Matrix-vector products of the forward solve: Arnoldi applications
    /// plus residual evaluations, counted at the sparse multiply.
    pub mvp_primal: usize,
    /// Matrix-vector products spent on the dual solve, when one ran.
    pub mvp_dual: usize,
    pub accepted_steps: usize,
    pub rejected_steps: usize,
    /// Size of the working space after the final step.
    pub final_space: usize,
    pub records: Vec<StepRecord>,
}

/// Comparison of the three estimate modes on one problem.
#[derive(Debug, Clone, Serialize)]
pub struct CompareReport {
    pub problem: String,
    pub config: crate::config::FileConfig,
    pub modes: Vec<RunReport>,
}

/// Per-step comparison of the outflow estimate with the probability loss
/// measured from the mass balance of the captured solution nodes.
#[derive(Debug, Clone, Serialize)]
pub struct FspCompareReport {
    pub problem: String,
    pub config: crate::config::FileConfig,
    pub t: Vec<f64>,
    pub dt: Vec<f64>,
    /// Outflow estimate per step, including mass dropped by shrinks.
    pub outflow: Vec<f64>,
    /// Realized probability loss per step.
    pub loss: Vec<f64>,
    pub cumulative_outflow: f64,
    pub cumulative_loss: f64,
}

/// Fixed-step order study of the propagator.
#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceReport {
    pub problem: String,
    pub config: crate::config::FileConfig,
    pub orders: Vec<ConvergenceSeries>,
}

#[derive(Debug, Clone, Serialize)]
pub struct ConvergenceSeries {
    pub order: usize,
    pub dts: Vec<f64>,
    pub linf_errors: Vec<f64>,
    /// Least-squares slope of log(error) against log(dt).
    pub slope: f64,
}

/// Writes the pinned per-step table. The header is part of the output
/// contract; every float is printed as `{:.16e}` (17 significant digits)
/// and the rejected flag as 0/1.
pub fn emit_csv(records: &[StepRecord], path: &Path) -> Result<()> {
    let mut out = String::with_capacity(128 * (records.len() + 1));
    out.push_str(
        "step,t,dt,krylov_dim,rho_a_l1,magnus_res_l1,outflow,space_size,moan_niesen,rejected\n",
    );
    for r in records {
        out.push_str(&format!(
            "{},{:.16e},{:.16e},{},{:.16e},{:.16e},{:.16e},{},{:.16e},{}\n",
            r.step,
            r.t,
            r.dt,
            r.krylov_dim,
            r.rho_norm,
            r.magnus_norm,
            r.outflow,
            r.space_size,
            r.moan_niesen,
            r.rejected as u8,
        ));
    }
    fs::write(path, out)?;
    Ok(())
}

/// Writes any report as pretty-printed JSON with a trailing newline.
pub fn emit_json<T: Serialize>(value: &T, path: &Path) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)
        .map_err(|e| crate::error::Error::Msg(format!("serializing report: {e}")))?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// Parses a CSV produced by [`emit_csv`] back into records, used by the
/// round-trip tests and available for downstream consumers.
pub fn parse_csv(text: &str) -> Result<Vec<StepRecord>> {
    let mut lines = text.lines();
    let header = lines.next().unwrap_or("");
    let expected =
        "step,t,dt,krylov_dim,rho_a_l1,magnus_res_l1,outflow,space_size,moan_niesen,rejected";
    if header != expected {
        return Err(crate::error::Error::Msg(format!(
            "unexpected CSV header: {header}"
        )));
    }
    let mut records = Vec::new();
    for (i, line) in lines.enumerate() {
        if line.is_empty() {
            continue;
        }
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 10 {
            return Err(crate::error::Error::Msg(format!(
                "row {} has {} fields",
                i + 2,
                fields.len()
            )));
        }
        let num = |s: &str| -> Result<f64> {
            s.parse()
                .map_err(|e| crate::error::Error::Msg(format!("row {}: {e}", i + 2)))
        };
        let int = |s: &str| -> Result<usize> {
            s.parse()
                .map_err(|e| crate::error::Error::Msg(format!("row {}: {e}", i + 2)))
        };
        records.push(StepRecord {
            step: int(fields[0])?,
            t: num(fields[1])?,
            dt: num(fields[2])?,
            krylov_dim: int(fields[3])?,
            rho_norm: num(fields[4])?,
            magnus_norm: num(fields[5])?,
            outflow: num(fields[6])?,
            space_size: int(fields[7])?,
            moan_niesen: num(fields[8])?,
            rejected: int(fields[9])? != 0,
        });
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn sample() -> Vec<StepRecord> {
        vec![
            StepRecord {
                step: 0,
                t: 0.0,
                dt: 1.0 / 3.0,
                krylov_dim: 7,
                rho_norm: 1.234e-9,
                magnus_norm: 5.678e-7,
                outflow: 0.0,
                space_size: 42,
                moan_niesen: 3.25,
                rejected: false,
            },
            StepRecord {
                step: 1,
                t: 1.0 / 3.0,
                dt: 0.125,
                krylov_dim: 3,
                rho_norm: f64::MIN_POSITIVE,
                magnus_norm: 1.0e300,
                outflow: -0.0,
                space_size: 41,
                moan_niesen: 0.0,
                rejected: true,
            },
        ]
    }

    #[test]
    fn csv_round_trip_is_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("steps.csv");
        let records = sample();
        emit_csv(&records, &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        let parsed = parse_csv(&text).unwrap();
        assert_eq!(parsed, records);
    }

    #[test]
    fn empty_run_writes_header_only() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("steps.csv");
        emit_csv(&[], &path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1);
        assert!(text.starts_with("step,t,dt,"));
        assert!(parse_csv(&text).unwrap().is_empty());
    }

    #[test]
    fn rewriting_the_same_records_is_byte_identical() {
        let dir = tempfile::tempdir().unwrap();
        let a = dir.path().join("a.csv");
        let b = dir.path().join("b.csv");
        emit_csv(&sample(), &a).unwrap();
        emit_csv(&sample(), &b).unwrap();
        assert_eq!(std::fs::read(&a).unwrap(), std::fs::read(&b).unwrap());
    }

    #[test]
    fn header_mismatch_is_refused() {
        assert!(parse_csv("step,t\n1,2\n").is_err());
    }
}
