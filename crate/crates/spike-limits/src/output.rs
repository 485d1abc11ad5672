//! Records CSV, report JSON and plot-data CSV, all written atomically.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::Serialize;
use statrs::distribution::{Continuous, Normal};

use spiked_core::sim::ReplicationRecord;

use crate::error::{HarnessError, Result};
use crate::harness::{projection_label, series, Prepared, VERSION};

pub const RECORDS_FILE: &str = "records.csv";
pub const REPORT_FILE: &str = "report.json";
pub const PLOT_FILE: &str = "plot_data.csv";

/// Histogram bins per statistic in the plot data.
pub const HISTOGRAM_BINS: usize = 40;

/// Points of the theoretical normal density per statistic.
pub const DENSITY_POINTS: usize = 200;

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Writes `bytes` to a sibling temporary file and renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path
        .parent()
        .filter(|d| !d.as_os_str().is_empty())
        .unwrap_or(Path::new("."));
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let name = path
        .file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default();
    let tmp: PathBuf = dir.join(format!(".{name}.{}.tmp", std::process::id()));
    let result = (|| {
        let mut f = fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
        fs::rename(&tmp, path)
    })();
    if result.is_err() {
        let _ = fs::remove_file(&tmp);
    }
    result.map_err(io_err(path))
}

pub fn to_json_bytes<T: Serialize>(value: &T) -> Vec<u8> {
    let mut out = serde_json::to_vec_pretty(value).expect("reports serialize");
    out.push(b'\n');
    out
}

fn hash_line(hash: &str) -> String {
    format!("# config_hash={hash},version={VERSION}\n")
}

fn csv_bytes(hash: &str, header: Vec<String>, rows: Vec<Vec<String>>) -> Vec<u8> {
    let mut out = hash_line(hash).into_bytes();
    {
        let mut w = csv::Writer::from_writer(&mut out);
        w.write_record(&header).expect("in-memory write");
        for row in rows {
            w.write_record(&row).expect("in-memory write");
        }
        w.flush().expect("in-memory write");
    }
    out
}

/// One row per record: `rep, kind, lambda_1..M, theta_1..M, proj columns, seed`.
pub fn records_csv(prep: &Prepared, records: &[ReplicationRecord]) -> Vec<u8> {
    let m = prep.spiked_total();
    let groups = prep.base.spikes().len();
    let mut header = vec!["rep".to_string(), "kind".to_string()];
    header.extend((1..=m).map(|j| format!("lambda_{j}")));
    header.extend((1..=m).map(|j| format!("theta_{j}")));
    for q in 0..prep.projections.len() {
        header.extend((0..groups).map(|k| projection_label(prep, q, k)));
    }
    header.push("seed".to_string());
    let rows = records
        .iter()
        .map(|r| {
            let mut row = vec![r.rep_index.to_string(), r.kind.label().to_string()];
            row.extend(r.lambda.iter().map(f64::to_string));
            row.extend(r.theta.iter().map(f64::to_string));
            for per_group in &r.proj {
                row.extend(per_group.iter().map(f64::to_string));
            }
            row.push(r.seed_used.to_string());
            row
        })
        .collect();
    csv_bytes(&prep.config_hash, header, rows)
}

/// Histograms of every compared statistic with the theoretical normal
/// density sampled at [`DENSITY_POINTS`] abscissae.
pub fn plot_csv(prep: &Prepared, records: &[ReplicationRecord]) -> Vec<u8> {
    let header = ["statistic", "kind", "series", "x_lo", "x_hi", "value"]
        .map(String::from)
        .to_vec();
    let mut rows = Vec::new();
    for s in series(prep, records) {
        let kind = s.kind.label().to_string();
        let sd = s.theory_variance.max(0.0).sqrt();
        let lo = s
            .values
            .iter()
            .copied()
            .fold(s.theory_mean - 4.0 * sd, f64::min);
        let hi = s
            .values
            .iter()
            .copied()
            .fold(s.theory_mean + 4.0 * sd, f64::max);
        let width = if hi > lo {
            (hi - lo) / HISTOGRAM_BINS as f64
        } else {
            1.0
        };
        let mut counts = vec![0usize; HISTOGRAM_BINS];
        for &v in &s.values {
            let b = (((v - lo) / width) as usize).min(HISTOGRAM_BINS - 1);
            counts[b] += 1;
        }
        for (b, c) in counts.iter().enumerate() {
            let x0 = lo + b as f64 * width;
            rows.push(vec![
                s.statistic.clone(),
                kind.clone(),
                "histogram".to_string(),
                x0.to_string(),
                (x0 + width).to_string(),
                c.to_string(),
            ]);
        }
        if sd > 0.0 {
            let normal = Normal::new(s.theory_mean, sd).expect("positive sd");
            for i in 0..DENSITY_POINTS {
                let x = lo + (hi - lo) * i as f64 / (DENSITY_POINTS - 1) as f64;
                rows.push(vec![
                    s.statistic.clone(),
                    kind.clone(),
                    "normal_density".to_string(),
                    x.to_string(),
                    x.to_string(),
                    normal.pdf(x).to_string(),
                ]);
            }
        }
    }
    csv_bytes(&prep.config_hash, header, rows)
}
