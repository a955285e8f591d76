//! Experiment reports: rate fits, long-form CSV rows, JSON provenance and
//! the merged summary table.

use std::io::Write;

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::stats::{log_log_fit, Estimate, LogLogFit, Verdict};

pub const SCHEMA_VERSION: u32 = 1;

/// Version string stamped on every report.
pub fn version_string() -> String {
    format!("harris-lab {}", env!("CARGO_PKG_VERSION"))
}

/// One measured point of a series.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FitPoint {
    pub value: f64,
    pub estimate: Estimate,
    pub bound: Option<f64>,
    pub verdict: Verdict,
}

/// Estimates of one quantity over a parameter grid, with the log-log fit of
/// estimate against parameter.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RateFit {
    pub series: String,
    pub parameter: String,
    pub points: Vec<FitPoint>,
    pub fit: Option<LogLogFit>,
}

impl RateFit {
    pub fn new(series: impl Into<String>, parameter: impl Into<String>, points: Vec<FitPoint>) -> Self {
        let xs: Vec<f64> = points.iter().map(|p| p.value).collect();
        let ys: Vec<f64> = points.iter().map(|p| p.estimate.mean).collect();
        let fit = log_log_fit(&xs, &ys);
        Self { series: series.into(), parameter: parameter.into(), points, fit }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub schema_version: u32,
    pub experiment: String,
    pub version: String,
    pub config_hash: String,
    pub master_seed: u64,
    pub config: ExperimentConfig,
    pub fits: Vec<RateFit>,
    /// Free-form remarks (for example fitted exponents next to reference values).
    pub notes: Vec<String>,
}

impl Report {
    pub fn new(config: &ExperimentConfig, fits: Vec<RateFit>, notes: Vec<String>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION,
            experiment: config.experiment.as_str().to_string(),
            version: version_string(),
            config_hash: config.hash(),
            master_seed: config.master_seed,
            config: config.clone(),
            fits,
            notes,
        }
    }

    /// Whether no point failed.
    pub fn passed(&self) -> bool {
        self.points().all(|(_, p)| !p.verdict.is_failure())
    }

    pub fn points(&self) -> impl Iterator<Item = (&RateFit, &FitPoint)> {
        self.fits.iter().flat_map(|f| f.points.iter().map(move |p| (f, p)))
    }

    pub fn fit(&self, series: &str) -> Option<&RateFit> {
        self.fits.iter().find(|f| f.series == series)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }

    /// One row per measured point.
    pub fn write_csv<W: Write>(&self, out: W) -> csv::Result<()> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record([
            "config_hash",
            "master_seed",
            "series",
            "parameter",
            "value",
            "estimate",
            "std_error",
            "ci_low",
            "ci_high",
            "bound",
            "verdict",
        ])?;
        for (f, p) in self.points() {
            let (lo, hi) = p.estimate.ci95();
            w.write_record([
                self.config_hash.clone(),
                self.master_seed.to_string(),
                f.series.clone(),
                f.parameter.clone(),
                p.value.to_string(),
                p.estimate.mean.to_string(),
                p.estimate.std_error.to_string(),
                lo.to_string(),
                hi.to_string(),
                p.bound.map_or(String::new(), |b| b.to_string()),
                p.verdict.as_str().to_string(),
            ])?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn csv_string(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory");
        String::from_utf8(buf).expect("csv is utf-8")
    }
}

/// Wide table merging fits: one row per `(parameter, value)`, four columns
/// per series.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct SummaryTable {
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl SummaryTable {
    pub fn to_csv(&self) -> String {
        if self.header.is_empty() {
            return String::new();
        }
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("writing to memory");
        for r in &self.rows {
            w.write_record(r).expect("writing to memory");
        }
        String::from_utf8(w.into_inner().expect("flush to memory")).expect("csv is utf-8")
    }
}

/// Merges `fits` into a table keyed by parameter name and value. Rows follow
/// the order of first appearance; series without a point at some value leave
/// their cells empty.
pub fn summarize(fits: &[RateFit]) -> SummaryTable {
    if fits.is_empty() {
        return SummaryTable::default();
    }
    let mut header = vec!["parameter".to_string(), "value".to_string()];
    for f in fits {
        for col in ["estimate", "std_error", "bound", "verdict"] {
            header.push(format!("{}_{col}", f.series));
        }
    }
    let mut keys: Vec<(String, f64)> = Vec::new();
    for f in fits {
        for p in &f.points {
            if !keys.iter().any(|(name, v)| *name == f.parameter && *v == p.value) {
                keys.push((f.parameter.clone(), p.value));
            }
        }
    }
    let rows = keys
        .into_iter()
        .map(|(name, value)| {
            let mut row = vec![name.clone(), value.to_string()];
            for f in fits {
                match f.points.iter().find(|p| f.parameter == name && p.value == value) {
                    Some(p) => row.extend([
                        p.estimate.mean.to_string(),
                        p.estimate.std_error.to_string(),
                        p.bound.map_or(String::new(), |b| b.to_string()),
                        p.verdict.as_str().to_string(),
                    ]),
                    None => row.extend(std::iter::repeat_n(String::new(), 4)),
                }
            }
            row
        })
        .collect();
    SummaryTable { header, rows }
}
