//! Reading and writing partition manifests, missing-value repair, and the
//! synthetic data generator.
//!
//! A manifest is a CSV file with header `instance_id,flare_class,path` and an
//! optional fourth column `partition_id`. Each `path` is resolved relative to
//! the manifest's directory and points at an instance file: a CSV whose header
//! row holds parameter names and whose data rows are timesteps. An empty cell
//! marks a missing value.

use std::collections::{BTreeMap, BTreeSet};
use std::fs;
use std::path::{Path, PathBuf};

use rand::seq::index;
use rand::Rng;
use rand_distr::Normal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mvts::{Dataset, FlareClass, MvtsInstance};
use crate::seed;

pub const MANIFEST_FILE: &str = "manifest.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub instance_id: String,
    pub flare_class: FlareClass,
    pub path: PathBuf,
    pub partition_id: u32,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionManifest {
    /// Shared partition id, or `None` when entries span several partitions
    /// (or there are none).
    pub partition_id: Option<u32>,
    pub entries: Vec<ManifestEntry>,
}

/// Cells filled by interpolation while loading, per instance.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RepairLog {
    pub repaired: BTreeMap<String, usize>,
}

impl RepairLog {
    pub fn total(&self) -> usize {
        self.repaired.values().sum()
    }

    pub fn merge(&mut self, other: RepairLog) {
        self.repaired.extend(other.repaired);
    }
}

pub fn read_manifest(manifest_path: &Path) -> Result<PartitionManifest> {
    read_manifest_with_default(manifest_path, None)
}

fn read_manifest_with_default(manifest_path: &Path, forced: Option<u32>) -> Result<PartitionManifest> {
    let text = fs::read_to_string(manifest_path).map_err(|e| Error::io(manifest_path, e))?;
    let malformed = |message: String| Error::MalformedCsv {
        path: manifest_path.to_path_buf(),
        instance_id: "<manifest>".into(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| malformed(e.to_string()))?.clone();
    let col = |name: &str| headers.iter().position(|h| h.trim() == name);
    let (id_col, class_col, path_col) = match (col("instance_id"), col("flare_class"), col("path")) {
        (Some(a), Some(b), Some(c)) => (a, b, c),
        _ => {
            return Err(malformed(format!(
                "header must contain instance_id,flare_class,path; found {:?}",
                headers.iter().collect::<Vec<_>>()
            )))
        }
    };
    let part_col = col("partition_id");

    let mut entries = Vec::new();
    let mut seen = BTreeSet::new();
    for record in reader.records() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        let field = |i: usize| record.get(i).unwrap_or("").trim();
        let instance_id = field(id_col).to_string();
        if instance_id.is_empty() {
            return Err(malformed("empty instance_id".into()));
        }
        if !seen.insert(instance_id.clone()) {
            return Err(malformed(format!("duplicate instance_id {instance_id:?}")));
        }
        let flare_class = field(class_col).parse::<FlareClass>().map_err(|_| Error::MalformedCsv {
            path: manifest_path.to_path_buf(),
            instance_id: instance_id.clone(),
            message: format!("unparsable flare class {:?}", field(class_col)),
        })?;
        let partition_id = match (forced, part_col) {
            (Some(p), _) => p,
            (None, Some(c)) => field(c).parse::<u32>().ok().filter(|&p| p >= 1).ok_or_else(|| {
                Error::MalformedCsv {
                    path: manifest_path.to_path_buf(),
                    instance_id: instance_id.clone(),
                    message: format!("bad partition_id {:?}", field(c)),
                }
            })?,
            (None, None) => 1,
        };
        entries.push(ManifestEntry {
            instance_id,
            flare_class,
            path: PathBuf::from(field(path_col)),
            partition_id,
        });
    }
    Ok(PartitionManifest {
        partition_id: shared_partition(&entries),
        entries,
    })
}

fn shared_partition(entries: &[ManifestEntry]) -> Option<u32> {
    let first = entries.first()?.partition_id;
    entries.iter().all(|e| e.partition_id == first).then_some(first)
}

/// Loads every instance listed in a manifest. Instances without a
/// `partition_id` column default to partition 1.
pub fn load_partition(manifest_path: &Path) -> Result<Dataset> {
    load_partition_with_log(manifest_path, None).map(|(d, _)| d)
}

/// Like [`load_partition`], assigning `partition_id` to every instance.
pub fn load_partition_as(manifest_path: &Path, partition_id: u32) -> Result<Dataset> {
    load_partition_with_log(manifest_path, Some(partition_id)).map(|(d, _)| d)
}

pub fn load_partition_with_log(manifest_path: &Path, partition_id: Option<u32>) -> Result<(Dataset, RepairLog)> {
    let manifest = read_manifest_with_default(manifest_path, partition_id)?;
    let base = manifest_path.parent().unwrap_or(Path::new("."));

    let loaded: Vec<(MvtsInstance, usize)> = manifest
        .entries
        .par_iter()
        .map(|e| load_instance(&base.join(&e.path), e))
        .collect::<Result<_>>()?;

    let mut log = RepairLog::default();
    let Some((first, _)) = loaded.first() else {
        return Ok((Dataset::empty(Vec::new(), 0), log));
    };
    let names = first.param_names().to_vec();
    let n_steps = first.n_steps();
    for (inst, repaired) in &loaded {
        if inst.param_names() != names.as_slice() || inst.n_steps() != n_steps {
            return Err(Error::InconsistentShape {
                instance_id: inst.instance_id().to_string(),
                expected: format!("{} parameters {:?} x {} timesteps", names.len(), names, n_steps),
                found: format!(
                    "{} parameters {:?} x {} timesteps",
                    inst.n_params(),
                    inst.param_names(),
                    inst.n_steps()
                ),
            });
        }
        if *repaired > 0 {
            log.repaired.insert(inst.instance_id().to_string(), *repaired);
        }
    }
    if log.total() > 0 {
        log::warn!(
            "{}: interpolated {} missing cells across {} instances",
            manifest_path.display(),
            log.total(),
            log.repaired.len()
        );
    }
    let dataset = Dataset::new(names, n_steps, loaded.into_iter().map(|(i, _)| i).collect())?;
    Ok((dataset, log))
}

fn load_instance(path: &Path, entry: &ManifestEntry) -> Result<(MvtsInstance, usize)> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let malformed = |message: String| Error::MalformedCsv {
        path: path.to_path_buf(),
        instance_id: entry.instance_id.clone(),
        message,
    };
    let mut reader = csv::ReaderBuilder::new().flexible(false).from_reader(text.as_bytes());
    let names: Vec<String> = reader
        .headers()
        .map_err(|e| malformed(e.to_string()))?
        .iter()
        .map(|h| h.trim().to_string())
        .collect();
    if names.is_empty() || names.iter().any(String::is_empty) {
        return Err(malformed("empty parameter name in header".into()));
    }
    let n_params = names.len();
    let mut columns: Vec<Vec<f64>> = vec![Vec::new(); n_params];
    for (row_idx, record) in reader.records().enumerate() {
        let record = record.map_err(|e| malformed(e.to_string()))?;
        for (p, cell) in record.iter().enumerate() {
            let cell = cell.trim();
            let v = if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse::<f64>()
                    .map_err(|_| malformed(format!("row {}: cannot parse {cell:?}", row_idx + 1)))?
            };
            columns[p].push(v);
        }
    }
    if columns[0].is_empty() {
        return Err(malformed("no data rows".into()));
    }
    let mut repaired = 0;
    for (p, series) in columns.iter_mut().enumerate() {
        repaired += repair_series(series).ok_or_else(|| Error::MissingParameterRow {
            instance_id: entry.instance_id.clone(),
            parameter: names[p].clone(),
        })?;
    }
    let inst = MvtsInstance::new(
        entry.instance_id.clone(),
        entry.flare_class,
        entry.partition_id,
        names,
        columns,
    )?;
    Ok((inst, repaired))
}

/// Fills non-finite cells in place: linear interpolation between the nearest
/// finite neighbours, nearest-value fill at either end. Returns the number of
/// cells filled, or `None` if the series has no finite value at all.
pub fn repair_series(series: &mut [f64]) -> Option<usize> {
    let known: Vec<usize> = (0..series.len()).filter(|&t| series[t].is_finite()).collect();
    let (&first, &last) = (known.first()?, known.last()?);
    let mut filled = 0;
    for t in 0..first {
        series[t] = series[first];
        filled += 1;
    }
    for t in last + 1..series.len() {
        series[t] = series[last];
        filled += 1;
    }
    for w in known.windows(2) {
        let (t0, t1) = (w[0], w[1]);
        let (v0, v1) = (series[t0], series[t1]);
        let span = (t1 - t0) as f64;
        for t in t0 + 1..t1 {
            series[t] = (v0 * (t1 - t) as f64 + v1 * (t - t0) as f64) / span;
            filled += 1;
        }
    }
    Some(filled)
}

/// Writes `dir/manifest.csv` and one CSV per instance under `dir/instances/`.
/// Values use the shortest decimal form that parses back to the same `f64`.
pub fn write_dataset(d: &Dataset, dir: &Path) -> Result<PartitionManifest> {
    let inst_dir = dir.join("instances");
    fs::create_dir_all(&inst_dir).map_err(|e| Error::io(&inst_dir, e))?;

    let mut entries = Vec::with_capacity(d.len());
    for (k, inst) in d.iter().enumerate() {
        let rel = PathBuf::from("instances").join(format!("{k:06}_{}.csv", sanitize(inst.instance_id())));
        let mut out = String::new();
        out.push_str(&csv_line(inst.param_names().iter().map(String::as_str)));
        for t in 0..inst.n_steps() {
            let cells: Vec<String> = (0..inst.n_params()).map(|p| inst.row(p)[t].to_string()).collect();
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        let path = dir.join(&rel);
        fs::write(&path, out).map_err(|e| Error::io(&path, e))?;
        entries.push(ManifestEntry {
            instance_id: inst.instance_id().to_string(),
            flare_class: inst.flare_class(),
            path: rel,
            partition_id: inst.partition_id(),
        });
    }

    let mut manifest = String::from("instance_id,flare_class,path,partition_id\n");
    for e in &entries {
        let path = e.path.to_string_lossy().replace('\\', "/");
        let id = e.instance_id.as_str();
        let pid = e.partition_id.to_string();
        manifest.push_str(&csv_line([id, e.flare_class.as_str(), path.as_str(), pid.as_str()].into_iter()));
    }
    let path = dir.join(MANIFEST_FILE);
    fs::write(&path, manifest).map_err(|e| Error::io(&path, e))?;

    Ok(PartitionManifest {
        partition_id: shared_partition(&entries),
        entries,
    })
}

fn csv_line<'a>(fields: impl Iterator<Item = &'a str>) -> String {
    let mut line = fields
        .map(|f| {
            if f.contains([',', '"', '\n', '\r']) {
                format!("\"{}\"", f.replace('"', "\"\""))
            } else {
                f.to_string()
            }
        })
        .collect::<Vec<_>>()
        .join(",");
    line.push('\n');
    line
}

fn sanitize(id: &str) -> String {
    id.chars()
        .map(|c| if c.is_ascii_alphanumeric() || matches!(c, '-' | '_' | '.') { c } else { '_' })
        .take(80)
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ClassSignal {
    /// Added per timestep.
    pub drift: f64,
    /// Multiplies the class base level.
    pub amplitude: f64,
}

impl Default for ClassSignal {
    fn default() -> Self {
        Self {
            drift: 0.0,
            amplitude: 1.0,
        }
    }
}

/// Synthetic data generator settings. Counts are per partition.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SynthConfig {
    pub n_per_class: BTreeMap<FlareClass, usize>,
    #[serde(rename = "P")]
    pub n_params: usize,
    #[serde(rename = "T")]
    pub n_steps: usize,
    #[serde(default)]
    pub class_signal: BTreeMap<FlareClass, ClassSignal>,
    pub noise_sd: f64,
    pub outlier_fraction: f64,
    pub outlier_magnitude: f64,
    pub seed: u64,
    #[serde(default = "default_partitions")]
    pub n_partitions: u32,
    /// Defaults to `P01`, `P02`, ...
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub param_names: Option<Vec<String>>,
}

fn default_partitions() -> u32 {
    1
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(format!("synthetic config: {m}")));
        if self.n_params == 0 || self.n_steps == 0 {
            return bad("P and T must be at least 1");
        }
        if !(self.noise_sd > 0.0 && self.noise_sd.is_finite()) {
            return bad("noise_sd must be positive");
        }
        if !(0.0..1.0).contains(&self.outlier_fraction) {
            return bad("outlier_fraction must lie in [0, 1)");
        }
        if !self.outlier_magnitude.is_finite() {
            return bad("outlier_magnitude must be finite");
        }
        if self.n_partitions == 0 {
            return bad("n_partitions must be at least 1");
        }
        if let Some(names) = &self.param_names {
            if names.len() != self.n_params {
                return bad("param_names length must equal P");
            }
        }
        if self
            .class_signal
            .values()
            .any(|s| !s.drift.is_finite() || !s.amplitude.is_finite())
        {
            return bad("class_signal values must be finite");
        }
        Ok(())
    }

    pub fn names(&self) -> Vec<String> {
        self.param_names
            .clone()
            .unwrap_or_else(|| (1..=self.n_params).map(|p| format!("P{p:02}")).collect())
    }

    fn signal(&self, class: FlareClass) -> ClassSignal {
        self.class_signal.get(&class).copied().unwrap_or_default()
    }
}

/// Ids of instances generated as outliers.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OutlierGroundTruth {
    pub ids: BTreeSet<String>,
}

/// Base level of parameter `p` for a class: increases with flare strength and
/// varies mildly across parameters.
pub fn class_base(class: FlareClass, p: usize, n_params: usize) -> f64 {
    (class.strength() + 1) as f64 * (1.0 + 0.5 * p as f64 / n_params as f64)
}

/// `round(fraction * n)` with halves rounded up.
pub fn round_half_up(fraction: f64, n: usize) -> usize {
    (fraction * n as f64 + 0.5).floor() as usize
}

/// Generates `n_per_class` instances of each class in each partition.
/// Non-flaring instances (C, B, N) are eligible to be planted as outliers.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Dataset, OutlierGroundTruth)> {
    cfg.validate()?;
    let names = cfg.names();
    let noise = Normal::new(0.0, cfg.noise_sd).map_err(|e| Error::InvalidConfig(e.to_string()))?;
    let mut instances = Vec::new();
    let mut truth = OutlierGroundTruth::default();

    for partition in 1..=cfg.n_partitions {
        let mut rng = seed::rng(seed::mix(&[cfg.seed, partition as u64]));
        let draw = |class: FlareClass, scale: f64, rng: &mut seed::StageRng| -> Vec<f64> {
            let sig = cfg.signal(class);
            let mut v = Vec::with_capacity(cfg.n_params * cfg.n_steps);
            for p in 0..cfg.n_params {
                let base = sig.amplitude * class_base(class, p, cfg.n_params);
                for t in 0..cfg.n_steps {
                    v.push(scale * (base + sig.drift * t as f64 + rng.sample(noise)));
                }
            }
            v
        };

        let mut drawn: Vec<(String, FlareClass, Vec<f64>)> = Vec::new();
        for class in FlareClass::ALL {
            let count = cfg.n_per_class.get(&class).copied().unwrap_or(0);
            for i in 0..count {
                let id = format!("p{partition}-{class}-{i:05}");
                drawn.push((id, class, draw(class, 1.0, &mut rng)));
            }
        }

        let negatives: Vec<usize> = (0..drawn.len())
            .filter(|&k| drawn[k].1 <= FlareClass::C)
            .collect();
        let n_outliers = round_half_up(cfg.outlier_fraction, negatives.len());
        let mut chosen: Vec<usize> = index::sample(&mut rng, negatives.len(), n_outliers)
            .into_iter()
            .map(|k| negatives[k])
            .collect();
        chosen.sort_unstable();
        for k in chosen {
            let class = drawn[k].1;
            drawn[k].2 = draw(class, cfg.outlier_magnitude, &mut rng);
            truth.ids.insert(drawn[k].0.clone());
        }

        for (id, class, values) in drawn {
            instances.push(MvtsInstance::from_flat(id, class, partition, names.clone(), cfg.n_steps, values)?);
        }
    }
    Ok((Dataset::new(names, cfg.n_steps, instances)?, truth))
}
