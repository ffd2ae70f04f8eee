//! Artifact serialization: atomic file writes, the verdict JSON object,
//! and the CSV layouts for ensemble, partial-sum, and covariance-check
//! runs. All numbers are formatted with Rust's shortest round-trip
//! Display, so identical inputs serialize to identical bytes.

use std::fs;
use std::io::{self, Write as _};
use std::path::Path;
use std::process;

use serde_json::{json, Value};

use xmem_core::memory::{MemoryVerdict, SeriesValue};

use crate::config::{CommandKind, MeasureSpec};
use crate::excursion::{CltTheory, EnsemblePoint, PartialSumReport, ScalingReport};

/// Write via a temp file in the destination directory plus rename, so an
/// interrupted run leaves either the previous artifact or nothing. A
/// non-regular destination (/dev/null, a pipe) is written through
/// directly; renaming would replace the node itself.
pub fn atomic_write(path: &Path, bytes: &[u8]) -> io::Result<()> {
    match fs::metadata(path) {
        Ok(m) if !m.is_file() => {
            let mut f = fs::OpenOptions::new().write(true).open(path)?;
            return f.write_all(bytes);
        }
        _ => {}
    }
    let dir = match path.parent() {
        Some(p) if !p.as_os_str().is_empty() => p,
        _ => Path::new("."),
    };
    let name = path.file_name().ok_or_else(|| {
        io::Error::new(io::ErrorKind::InvalidInput, "output path has no file name")
    })?;
    let tmp = dir.join(format!(".{}.{}.tmp", name.to_string_lossy(), process::id()));
    let res = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if res.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    res
}

// ---------------------------------------------------------------------------
// JSON artifacts. serde_json's default map keeps keys sorted, so the byte
// output is deterministic.

pub fn verdict_json(
    command: CommandKind,
    verdict: &MemoryVerdict,
    measure: &MeasureSpec,
    transform_label: &str,
    model_label: &str,
) -> String {
    let series: Value = match verdict.series_value {
        SeriesValue::Finite(x) => json!(x),
        SeriesValue::Infinite => json!("infinite"),
        SeriesValue::Undetermined => json!("undetermined"),
    };
    let certificate: Value = match &verdict.divergence_certificate {
        Some(c) => json!({ "k": c.k, "reason": c.reason }),
        None => Value::Null,
    };
    let obj = json!({
        "schema": 1,
        "command": command.name(),
        "verdict": verdict.verdict.to_string(),
        "series_value": series,
        "certificate": certificate,
        "mu": {
            "spec": measure.describe(),
            "total_mass": verdict.mu_used.total_mass(),
        },
        "transform": transform_label,
        "model": model_label,
        "truncation": verdict.truncation,
    });
    finish_json(&obj)
}

pub fn rank_json(
    model_label: &str,
    transform_label: &str,
    z_label: Option<&str>,
    lines: &[(f64, CltTheory)],
) -> String {
    let levels: Vec<Value> = lines
        .iter()
        .map(|(u, t)| {
            json!({
                "level": u,
                "q": t.q,
                "sigma2": t.sigma2,
                "predicted_exponent": t.predicted_exponent,
                "coefficients": t.coefficients,
            })
        })
        .collect();
    let obj = json!({
        "schema": 1,
        "command": "rank",
        "model": model_label,
        "transform": transform_label,
        "z": z_label,
        "levels": levels,
    });
    finish_json(&obj)
}

fn finish_json(v: &Value) -> String {
    let mut s = serde_json::to_string_pretty(v).expect("in-memory json");
    s.push('\n');
    s
}

// ---------------------------------------------------------------------------
// CSV artifacts

pub const ENSEMBLE_HEADER: &str = "experiment_id,d,eta,transform,z_family,level,n,replicates,\
mean,variance,skewness,kurtosis,exponent,exponent_stderr,predicted_exponent,seed";

pub const PARTIAL_SUM_HEADER: &str =
    "experiment_id,alpha,eta,n,replicates,iqr,theta,theta_stderr,predicted_theta,seed";

pub const COV_HEADER: &str = "r,u,v,integral,series,oracle,delta_series,delta_oracle";

/// Fitted slope and prediction for one level of an ensemble.
pub struct LevelSummary {
    pub level: f64,
    pub report: ScalingReport,
    pub predicted_exponent: f64,
}

/// One moment row per (level, n) followed by that level's summary row,
/// which carries n = "all" and the exponent columns instead of moments.
pub fn ensemble_csv(
    experiment_id: &str,
    d: u8,
    eta: Option<f64>,
    transform_label: &str,
    z_family: Option<&str>,
    points: &[EnsemblePoint],
    summaries: &[LevelSummary],
    seed: u64,
) -> String {
    let mut out = String::from(ENSEMBLE_HEADER);
    out.push('\n');
    let eta_s = eta.map(|e| e.to_string()).unwrap_or_default();
    let z_s = z_family.unwrap_or("");
    for s in summaries {
        for p in points.iter().filter(|p| p.level == s.level) {
            out.push_str(&format!(
                "{experiment_id},{d},{eta_s},{transform_label},{z_s},{},{},{},{},{},{},{},,,,{seed}\n",
                p.level, p.n, p.replicates, p.mean, p.variance, p.skewness, p.kurtosis,
            ));
        }
        out.push_str(&format!(
            "{experiment_id},{d},{eta_s},{transform_label},{z_s},{},all,{},,,,,{},{},{},{seed}\n",
            s.level,
            s.report.replicates,
            s.report.exponent,
            s.report.exponent_stderr,
            s.predicted_exponent,
        ));
    }
    out
}

/// One dispersion row per n followed by a summary row with the fitted
/// theta; mirrors the ensemble layout.
pub fn partial_sum_csv(
    experiment_id: &str,
    alpha: f64,
    eta: Option<f64>,
    report: &PartialSumReport,
    seed: u64,
) -> String {
    let mut out = String::from(PARTIAL_SUM_HEADER);
    out.push('\n');
    let eta_s = eta.map(|e| e.to_string()).unwrap_or_default();
    for (n, iqr) in report.n_values.iter().zip(&report.dispersion) {
        out.push_str(&format!(
            "{experiment_id},{alpha},{eta_s},{n},{},{iqr},,,,{seed}\n",
            report.replicates,
        ));
    }
    out.push_str(&format!(
        "{experiment_id},{alpha},{eta_s},all,{},,{},{},{},{seed}\n",
        report.replicates, report.theta_hat, report.theta_stderr, report.predicted_theta,
    ));
    out
}

pub struct CovRow {
    pub r: f64,
    pub u: f64,
    pub v: f64,
    pub integral: f64,
    pub series: f64,
    pub oracle: f64,
}

pub fn cov_csv(rows: &[CovRow]) -> String {
    let mut out = String::from(COV_HEADER);
    out.push('\n');
    for row in rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            row.r,
            row.u,
            row.v,
            row.integral,
            row.series,
            row.oracle,
            (row.integral - row.series).abs(),
            (row.integral - row.oracle).abs(),
        ));
    }
    out
}

// ---------------------------------------------------------------------------
