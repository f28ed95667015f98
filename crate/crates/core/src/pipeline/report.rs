use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::config::ExperimentConfig;
use crate::error::{Error, Result};
use crate::eval::{ConfusionMatrix, MetricAggregate};
use crate::preprocess::{fingerprint_ids, NormalizationStats};

pub const REPORT_JSON: &str = "report.json";
pub const REPORT_CSV: &str = "report.csv";
pub const MANIFEST_JSON: &str = "manifest.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportMeta {
    pub tool_version: String,
    pub master_seed: u64,
    pub kernel_mode: String,
    pub kernel_fingerprint: String,
    pub undersampler: String,
    pub iforest_seed: u64,
    /// How the isolation forest relates to trials.
    pub iforest_policy: String,
    pub n_train_pool: usize,
    pub n_train_negatives: usize,
    pub n_test: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportCell {
    pub contamination: f64,
    pub test_partition: u32,
    pub tss: MetricAggregate,
    pub hss2: MetricAggregate,
    pub confusion: Vec<ConfusionMatrix>,
    pub n_removed: usize,
    pub train_sizes: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentReport {
    pub config: ExperimentConfig,
    pub meta: ReportMeta,
    /// Ordered by contamination, then test partition.
    pub cells: Vec<ReportCell>,
}

impl ExperimentReport {
    pub fn cell(&self, contamination: f64, test_partition: u32) -> Option<&ReportCell> {
        self.cells
            .iter()
            .find(|c| c.contamination == contamination && c.test_partition == test_partition)
    }

    /// Mean of the per-partition mean scores at one contamination rate.
    pub fn mean_over_partitions(&self, contamination: f64) -> Option<(f64, f64)> {
        let cells: Vec<&ReportCell> = self.cells.iter().filter(|c| c.contamination == contamination).collect();
        if cells.is_empty() {
            return None;
        }
        let k = cells.len() as f64;
        Some((
            cells.iter().map(|c| c.tss.mean).sum::<f64>() / k,
            cells.iter().map(|c| c.hss2.mean).sum::<f64>() / k,
        ))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldRecord {
    pub contamination: f64,
    pub trial: usize,
    pub train_ids: Vec<String>,
    pub normalization: NormalizationStats,
}

/// Instance-id splits of one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitManifest {
    pub train_partition: u32,
    pub train_pool_ids: Vec<String>,
    pub test_ids: BTreeMap<u32, Vec<String>>,
    pub removed: Vec<RemovedSet>,
    pub folds: Vec<FoldRecord>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RemovedSet {
    pub contamination: f64,
    pub ids: Vec<String>,
}

/// Problems found by [`audit`]; empty when the run is clean.
pub fn audit(m: &SplitManifest) -> Vec<String> {
    let mut problems = Vec::new();
    if m.test_ids.contains_key(&m.train_partition) {
        problems.push(format!("partition {} is used for both training and testing", m.train_partition));
    }
    let pool: BTreeSet<&str> = m.train_pool_ids.iter().map(String::as_str).collect();
    let mut tested: BTreeSet<&str> = BTreeSet::new();
    for ids in m.test_ids.values() {
        tested.extend(ids.iter().map(String::as_str));
    }
    for id in pool.intersection(&tested) {
        problems.push(format!("{id} is in the training pool and a test set"));
    }
    for fold in &m.folds {
        let tag = format!("r={} trial={}", fold.contamination, fold.trial);
        for id in &fold.train_ids {
            if !pool.contains(id.as_str()) {
                problems.push(format!("{tag}: training id {id} is outside the training pool"));
            }
            if tested.contains(id.as_str()) {
                problems.push(format!("{tag}: training id {id} is also evaluated"));
            }
        }
        if fold.normalization.fitted_on != fingerprint_ids(fold.train_ids.iter().map(String::as_str)) {
            problems.push(format!("{tag}: normalization was not fitted on the training fold"));
        }
        if let Some(removed) = m.removed.iter().find(|s| s.contamination == fold.contamination) {
            let removed: BTreeSet<&str> = removed.ids.iter().map(String::as_str).collect();
            if fold.train_ids.iter().any(|id| removed.contains(id.as_str())) {
                problems.push(format!("{tag}: a removed outlier was used for training"));
            }
        }
    }
    problems
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
}

pub fn to_json<T: Serialize>(value: &T, context: &str) -> Result<String> {
    let mut s = serde_json::to_string_pretty(value).map_err(|source| Error::Json {
        context: context.to_string(),
        source,
    })?;
    s.push('\n');
    Ok(s)
}

/// One row per contamination rate, test partition and metric.
pub fn to_csv(report: &ExperimentReport) -> String {
    let n_trials = report.cells.iter().map(|c| c.tss.trials.len()).max().unwrap_or(0);
    let mut out = String::from("contamination,test_partition,metric,mean,variance");
    for t in 0..n_trials {
        let _ = write!(out, ",trial_{t}");
    }
    out.push('\n');
    for cell in &report.cells {
        for (name, agg) in [("TSS", &cell.tss), ("HSS2", &cell.hss2)] {
            let _ = write!(
                out,
                "{},{},{name},{},{}",
                cell.contamination, cell.test_partition, agg.mean, agg.variance
            );
            for v in &agg.trials {
                let _ = write!(out, ",{v}");
            }
            out.push('\n');
        }
    }
    out
}

fn write(path: PathBuf, text: &str) -> Result<PathBuf> {
    fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
    Ok(path)
}

pub fn emit_report(report: &ExperimentReport, dir: &Path, formats: &[ReportFormat]) -> Result<Vec<PathBuf>> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut written = Vec::new();
    for format in formats {
        written.push(match format {
            ReportFormat::Json => write(dir.join(REPORT_JSON), &to_json(report, REPORT_JSON)?)?,
            ReportFormat::Csv => write(dir.join(REPORT_CSV), &to_csv(report))?,
        });
    }
    Ok(written)
}

pub fn emit_manifest(manifest: &SplitManifest, dir: &Path) -> Result<PathBuf> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write(dir.join(MANIFEST_JSON), &to_json(manifest, MANIFEST_JSON)?)
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|source| Error::Json {
        context: path.display().to_string(),
        source,
    })
}
