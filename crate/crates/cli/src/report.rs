//! Aggregation of per-run `metrics.csv` files into quantile and recovery
//! tables keyed by operand set, `(a, b, c)`, engine and noise level.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use cvgp::metrics::{summarize_quantiles, QuantileSummary};
use serde::Serialize;
use walkdir::WalkDir;

use crate::runner::MetricsRow;
use crate::{write_atomic, CliError};

pub const QUANTILE_HEADER: &str = "operands,a,b,c,engine,sigma,runs,nmse_min,nmse_q25,nmse_median,nmse_q75,nmse_max";
pub const RECOVERY_HEADER: &str = "operands,a,b,c,engine,sigma,runs,recovered,recovery_rate";

#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord)]
pub struct GroupKey {
    pub operands: String,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub engine: String,
    /// Noise level as written in the metrics file.
    pub sigma: String,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct QuantileRow {
    pub operands: String,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub engine: String,
    pub sigma: String,
    pub runs: usize,
    pub nmse_min: f64,
    pub nmse_q25: f64,
    pub nmse_median: f64,
    pub nmse_q75: f64,
    pub nmse_max: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RecoveryRow {
    pub operands: String,
    pub a: usize,
    pub b: usize,
    pub c: usize,
    pub engine: String,
    pub sigma: String,
    pub runs: usize,
    pub recovered: usize,
    pub recovery_rate: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Report {
    pub quantiles: Vec<QuantileRow>,
    pub recovery: Vec<RecoveryRow>,
}

impl Report {
    pub fn quantile(&self, operands: &str, abc: (usize, usize, usize), engine: &str, sigma: f64) -> Option<&QuantileRow> {
        self.quantiles
            .iter()
            .find(|r| r.operands == operands && (r.a, r.b, r.c) == abc && r.engine == engine && r.sigma == sigma.to_string())
    }

    pub fn recovery(&self, operands: &str, abc: (usize, usize, usize), engine: &str, sigma: f64) -> Option<&RecoveryRow> {
        self.recovery
            .iter()
            .find(|r| r.operands == operands && (r.a, r.b, r.c) == abc && r.engine == engine && r.sigma == sigma.to_string())
    }
}

/// Every `metrics.csv` below `dirs`, in path order.
pub fn collect(dirs: &[PathBuf]) -> Result<Vec<MetricsRow>, CliError> {
    let mut rows = Vec::new();
    for dir in dirs {
        if !dir.exists() {
            return Err(CliError::io(dir, std::io::Error::from(std::io::ErrorKind::NotFound)));
        }
        let walker = WalkDir::new(dir).sort_by_file_name();
        for item in walker {
            let item = item.map_err(|e| CliError::io(dir, e.into()))?;
            if item.file_type().is_file() && item.file_name() == "metrics.csv" {
                let mut rdr = csv::Reader::from_path(item.path())?;
                for r in rdr.deserialize() {
                    rows.push(r?);
                }
            }
        }
    }
    Ok(rows)
}

pub fn aggregate(rows: &[MetricsRow]) -> Result<Report, CliError> {
    if rows.is_empty() {
        return Err(CliError::EmptyReport);
    }
    let mut groups: BTreeMap<GroupKey, Vec<&MetricsRow>> = BTreeMap::new();
    for r in rows {
        let key = GroupKey {
            operands: r.operands.clone(),
            a: r.a,
            b: r.b,
            c: r.c,
            engine: r.engine.as_str().to_string(),
            sigma: r.sigma.to_string(),
        };
        groups.entry(key).or_default().push(r);
    }
    let mut report = Report::default();
    for (k, members) in groups {
        let nmse: Vec<f64> = members.iter().map(|r| r.nmse).collect();
        let q: QuantileSummary = summarize_quantiles(&nmse).map_err(|e| CliError::Config(e.to_string()))?;
        let hits = members.iter().filter(|r| r.recovered).count();
        report.quantiles.push(QuantileRow {
            operands: k.operands.clone(),
            a: k.a,
            b: k.b,
            c: k.c,
            engine: k.engine.clone(),
            sigma: k.sigma.clone(),
            runs: q.n,
            nmse_min: q.min,
            nmse_q25: q.q25,
            nmse_median: q.median,
            nmse_q75: q.q75,
            nmse_max: q.max,
        });
        report.recovery.push(RecoveryRow {
            operands: k.operands,
            a: k.a,
            b: k.b,
            c: k.c,
            engine: k.engine,
            sigma: k.sigma,
            runs: members.len(),
            recovered: hits,
            recovery_rate: hits as f64 / members.len() as f64,
        });
    }
    Ok(report)
}

fn table<T: Serialize>(header: &str, rows: &[T]) -> Result<String, CliError> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    let body = w.into_inner().map_err(|e| CliError::Csv(e.into_error().into()))?;
    Ok(format!("{header}\n{}", String::from_utf8_lossy(&body)))
}

/// Writes `quantiles.csv`, one `nmse_n{sigma}.csv` per noise level and
/// `recovery.csv` into `out`. Returns the written paths.
pub fn write(report: &Report, out: &Path) -> Result<Vec<PathBuf>, CliError> {
    let mut files = vec![
        (out.join("quantiles.csv"), table(QUANTILE_HEADER, &report.quantiles)?),
        (out.join("recovery.csv"), table(RECOVERY_HEADER, &report.recovery)?),
    ];
    let mut by_sigma: BTreeMap<&str, Vec<&QuantileRow>> = BTreeMap::new();
    for r in &report.quantiles {
        by_sigma.entry(&r.sigma).or_default().push(r);
    }
    for (sigma, rows) in by_sigma {
        files.push((out.join(format!("nmse_n{sigma}.csv")), table(QUANTILE_HEADER, &rows)?));
    }
    for (path, text) in &files {
        write_atomic(path, text.as_bytes()).map_err(|e| CliError::io(path, e))?;
    }
    Ok(files.into_iter().map(|(p, _)| p).collect())
}
