//! On-disk formats: counts CSV plus sidecar, grid CSV plus metadata,
//! completeness CSV, loss-distribution CSV.

use std::fmt::Write as _;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::protocol::{CompletenessReport, ProtocolSpec};
use crate::reconstruction::LossDistribution;
use crate::scan::ScanGrid;
use crate::simulation::CountsDataset;

pub const COUNTS_HEADER: [&str; 4] = ["setting_index", "theta1_deg", "theta2_deg", "count"];

/// Write `value` as pretty JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path)?;
    Ok(serde_json::from_str(&text)?)
}

/// Sidecar path of a counts file: `counts.csv` -> `counts.json`.
pub fn sidecar_path(counts_csv: &Path) -> PathBuf {
    counts_csv.with_extension("json")
}

/// Metadata stored next to a counts CSV.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CountsSidecar {
    pub seed: u64,
    pub total_events: u64,
    pub spec_hash: Option<String>,
    pub corrected: bool,
    pub settings: usize,
}

pub fn write_counts(path: &Path, spec: &ProtocolSpec, data: &CountsDataset) -> Result<()> {
    let degrees = spec.schedule.degrees();
    if degrees.len() != data.counts.len() {
        return Err(Error::Mismatch(format!(
            "{} counts for {} settings",
            data.counts.len(),
            degrees.len()
        )));
    }
    let mut w = csv::Writer::from_path(path)?;
    w.write_record(COUNTS_HEADER)?;
    for (j, ((t1, t2), k)) in degrees.iter().zip(&data.counts).enumerate() {
        w.write_record([j.to_string(), t1.to_string(), t2.to_string(), k.to_string()])?;
    }
    w.flush()?;
    write_json(
        &sidecar_path(path),
        &CountsSidecar {
            seed: data.seed,
            total_events: data.total_events,
            spec_hash: data.spec_hash.clone(),
            corrected: data.corrected,
            settings: data.counts.len(),
        },
    )
}

/// One parsed counts row.
#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
pub struct CountsRow {
    pub setting_index: usize,
    pub theta1_deg: f64,
    pub theta2_deg: f64,
    pub count: u64,
}

pub fn read_counts_csv(path: &Path) -> Result<Vec<CountsRow>> {
    let mut r = csv::Reader::from_path(path)?;
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != COUNTS_HEADER {
        return Err(Error::Mismatch(format!(
            "counts header must be {}, got {}",
            COUNTS_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for rec in r.deserialize() {
        rows.push(rec?);
    }
    Ok(rows)
}

/// Read a counts file (and its sidecar, if present) and check it against `spec`.
pub fn read_counts(path: &Path, spec: &ProtocolSpec) -> Result<CountsDataset> {
    let rows = read_counts_csv(path)?;
    let degrees = spec.schedule.degrees();
    if rows.len() != degrees.len() {
        return Err(Error::Mismatch(format!(
            "counts file has {} rows but the protocol has {} settings",
            rows.len(),
            degrees.len()
        )));
    }
    for (j, (row, (t1, t2))) in rows.iter().zip(&degrees).enumerate() {
        if row.setting_index != j || (row.theta1_deg - t1).abs() > 1e-9 || (row.theta2_deg - t2).abs() > 1e-9 {
            return Err(Error::Mismatch(format!(
                "row {j} is setting {} at ({}, {}) deg, protocol expects ({t1}, {t2})",
                row.setting_index, row.theta1_deg, row.theta2_deg
            )));
        }
    }
    let sidecar_file = sidecar_path(path);
    let sidecar: Option<CountsSidecar> = if sidecar_file.exists() {
        Some(read_json(&sidecar_file)?)
    } else {
        None
    };
    let hash = spec.hash();
    if let Some(Some(h)) = sidecar.as_ref().map(|s| s.spec_hash.as_ref()) {
        if *h != hash {
            return Err(Error::Mismatch(format!(
                "counts were recorded for protocol {h}, not {hash}"
            )));
        }
    }
    let counts: Vec<u64> = rows.iter().map(|r| r.count).collect();
    Ok(CountsDataset {
        total_events: sidecar.as_ref().map_or(counts.iter().sum(), |s| s.total_events),
        seed: sidecar.as_ref().map_or(0, |s| s.seed),
        corrected: sidecar.as_ref().is_some_and(|s| s.corrected),
        spec_hash: Some(hash),
        counts,
    })
}

/// `sigma_01..sigma_16,rank,ratio,complete` plus one data row.
pub fn completeness_csv(report: &CompletenessReport) -> String {
    let mut out = String::new();
    let names: Vec<String> = (1..=report.singular_values.len()).map(|i| format!("sigma_{i:02}")).collect();
    let _ = writeln!(out, "{},rank,ratio,complete", names.join(","));
    let sv: Vec<String> = report.singular_values.iter().map(|s| s.to_string()).collect();
    let _ = writeln!(out, "{},{},{},{}", sv.join(","), report.rank, report.ratio, report.complete);
    out
}

/// Format with six significant digits.
pub fn sig6(v: f64) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v:.5}");
    }
    let decimals = (5 - v.abs().log10().floor() as i32).max(0) as usize;
    format!("{v:.decimals$}")
}

/// Grid CSV `h1_mm,h2_mm,value`, row-major.
pub fn grid_csv(grid: &ScanGrid) -> String {
    let mut out = String::with_capacity(grid.values.len() * 32);
    out.push_str("h1_mm,h2_mm,value\n");
    let (n1, n2) = grid.shape();
    for i in 0..n1 {
        for j in 0..n2 {
            let _ = writeln!(
                out,
                "{},{},{}",
                sig6(grid.h1.value(i)),
                sig6(grid.h2.value(j)),
                grid.get(i, j)
            );
        }
    }
    out
}

/// Companion JSON of a grid: everything but the values.
#[derive(Debug, Clone, Serialize)]
pub struct GridMetadata<'a> {
    pub kind: crate::scan::ScanKind,
    pub h1: crate::scan::AxisRange,
    pub h2: crate::scan::AxisRange,
    pub shape: (usize, usize),
    pub template: &'a crate::scan::ProtocolTemplate,
    pub loss_params: Option<&'a crate::scan::LossScanParams>,
    pub optimum: crate::scan::Optimum,
}

pub fn loss_csv(dist: &LossDistribution) -> String {
    let mut out = String::from("trial,one_minus_fidelity\n");
    for (t, v) in dist.samples.iter().enumerate() {
        let _ = writeln!(out, "{t},{v}");
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut f = fs::File::create(path)?;
    f.write_all(text.as_bytes())?;
    Ok(())
}
