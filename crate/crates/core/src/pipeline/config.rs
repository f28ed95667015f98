use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::iforest::IForestConfig;
use crate::ingest::SynthConfig;
use crate::mvts::BinaryTask;
use crate::preprocess::Undersampler;
use crate::svm::SvmConfig;
use crate::tskernel::KernelConfig;

pub const DEFAULT_PARAMETERS: [&str; 5] = ["TOTUSJH", "TOTBSQ", "TOTPOT", "TOTUSJZ", "ABSNJZH"];

pub const DEFAULT_GRID: [f64; 13] = [
    0.0, 0.01, 0.02, 0.05, 0.10, 0.15, 0.20, 0.25, 0.30, 0.35, 0.40, 0.45, 0.50,
];

pub const PRESETS: [&str; 2] = ["experiment-a", "experiment-b"];

/// Where instances come from.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSource {
    /// Generated in memory.
    Synthetic(SynthConfig),
    /// One manifest per partition at `<dir>/partition<k>/manifest.csv`.
    Directory(PathBuf),
    /// A single manifest whose rows carry a `partition_id` column.
    Manifest(PathBuf),
}

impl DataSource {
    /// Resolves relative paths against `base`.
    pub fn resolved(&self, base: &Path) -> DataSource {
        match self {
            DataSource::Synthetic(s) => DataSource::Synthetic(s.clone()),
            DataSource::Directory(p) => DataSource::Directory(base.join(p)),
            DataSource::Manifest(p) => DataSource::Manifest(base.join(p)),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Tss,
    Hss2,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct GridSearchSpec {
    #[serde(rename = "C")]
    pub c_values: Vec<f64>,
    #[serde(rename = "gamma")]
    pub gamma_values: Vec<f64>,
    #[serde(default = "default_objective")]
    pub objective: Metric,
    #[serde(default = "default_validation_fraction")]
    pub validation_fraction: f64,
}

fn default_objective() -> Metric {
    Metric::Tss
}

fn default_validation_fraction() -> f64 {
    0.25
}

impl Default for GridSearchSpec {
    fn default() -> Self {
        Self {
            c_values: vec![1.0, 10.0, 100.0, 1000.0],
            gamma_values: vec![0.001, 0.01, 0.1, 1.0],
            objective: default_objective(),
            validation_fraction: default_validation_fraction(),
        }
    }
}

impl GridSearchSpec {
    pub fn validate(&self) -> Result<()> {
        if self.c_values.is_empty() || self.gamma_values.is_empty() {
            return Err(Error::InvalidConfig("grid search needs at least one C and one gamma".into()));
        }
        if self.c_values.iter().any(|c| !(*c > 0.0 && c.is_finite())) {
            return Err(Error::InvalidConfig("grid search C values must be positive".into()));
        }
        if self.gamma_values.iter().any(|g| !(*g > 0.0 && g.is_finite())) {
            return Err(Error::InvalidConfig("grid search gamma values must be positive".into()));
        }
        if !(self.validation_fraction > 0.0 && self.validation_fraction < 1.0) {
            return Err(Error::InvalidConfig("validation_fraction must lie in (0, 1)".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub task: BinaryTask,
    #[serde(default = "default_parameters")]
    pub parameters: Vec<String>,
    #[serde(default = "default_train_partition")]
    pub train_partition: u32,
    #[serde(default = "default_test_partitions")]
    pub test_partitions: Vec<u32>,
    #[serde(default = "default_grid")]
    pub contamination_grid: Vec<f64>,
    #[serde(default = "default_trials")]
    pub n_trials: usize,
    /// Defaults to random for X_VS_N and climatology for XM_VS_CBN.
    #[serde(default)]
    pub undersampler: Option<Undersampler>,
    #[serde(default)]
    pub kernel: KernelConfig,
    #[serde(default)]
    pub svm: SvmConfig,
    /// `contamination` is taken from the grid; `seed` is mixed with the master seed.
    #[serde(default)]
    pub iforest: IForestConfig,
    #[serde(default)]
    pub master_seed: u64,
    pub data: DataSource,
    /// At most this many instances per flare class per partition.
    #[serde(default)]
    pub subsample: Option<usize>,
    #[serde(default)]
    pub grid_search: Option<GridSearchSpec>,
}

fn default_parameters() -> Vec<String> {
    DEFAULT_PARAMETERS.iter().map(|s| s.to_string()).collect()
}

fn default_train_partition() -> u32 {
    1
}

fn default_test_partitions() -> Vec<u32> {
    vec![2, 3, 4, 5]
}

fn default_grid() -> Vec<f64> {
    DEFAULT_GRID.to_vec()
}

fn default_trials() -> usize {
    10
}

impl ExperimentConfig {
    pub fn new(task: BinaryTask, data: DataSource) -> Self {
        Self {
            task,
            parameters: default_parameters(),
            train_partition: default_train_partition(),
            test_partitions: default_test_partitions(),
            contamination_grid: default_grid(),
            n_trials: default_trials(),
            undersampler: None,
            kernel: KernelConfig::gak(0.01),
            svm: SvmConfig::with_c(100.0),
            iforest: IForestConfig::default(),
            master_seed: 0,
            data,
            subsample: None,
            grid_search: None,
        }
    }

    /// `experiment-a`: X vs N with random undersampling.
    /// `experiment-b`: XM vs CBN with climatology-preserving undersampling.
    /// Both read `data/partition<k>/manifest.csv` unless overridden.
    pub fn preset(name: &str) -> Result<Self> {
        let data = DataSource::Directory(PathBuf::from("data"));
        let (task, undersampler) = match name {
            "experiment-a" => (BinaryTask::XVsN, Undersampler::Random),
            "experiment-b" => (BinaryTask::XmVsCbn, Undersampler::Climatology),
            other => {
                return Err(Error::InvalidConfig(format!(
                    "unknown preset {other:?} (expected one of {})",
                    PRESETS.join(", ")
                )))
            }
        };
        Ok(Self {
            undersampler: Some(undersampler),
            ..Self::new(task, data)
        })
    }

    pub fn from_json(text: &str, context: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text).map_err(|source| Error::Json {
            context: context.to_string(),
            source,
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn undersampler(&self) -> Undersampler {
        self.undersampler.unwrap_or(match self.task {
            BinaryTask::XVsN => Undersampler::Random,
            BinaryTask::XmVsCbn => Undersampler::Climatology,
        })
    }

    pub fn partitions(&self) -> Vec<u32> {
        let mut all = vec![self.train_partition];
        all.extend(&self.test_partitions);
        all
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidConfig(m));
        if self.parameters.is_empty() {
            return bad("parameters must not be empty".into());
        }
        let mut names = self.parameters.clone();
        names.sort();
        names.dedup();
        if names.len() != self.parameters.len() {
            return bad("parameters must be unique".into());
        }
        if self.test_partitions.is_empty() {
            return bad("test_partitions must not be empty".into());
        }
        if self.test_partitions.contains(&self.train_partition) {
            return bad(format!(
                "train partition {} is also a test partition",
                self.train_partition
            ));
        }
        let mut tests = self.test_partitions.clone();
        tests.sort();
        tests.dedup();
        if tests.len() != self.test_partitions.len() {
            return bad("test_partitions must be unique".into());
        }
        let grid = &self.contamination_grid;
        if grid.first() != Some(&0.0) {
            return bad("contamination_grid must start at 0".into());
        }
        if grid.windows(2).any(|w| w[0] >= w[1]) {
            return bad("contamination_grid must be strictly ascending".into());
        }
        if grid.iter().any(|r| !(0.0..=0.5).contains(r)) {
            return bad("contamination rates must lie in [0, 0.5]".into());
        }
        if self.n_trials == 0 {
            return bad("n_trials must be at least 1".into());
        }
        if self.subsample == Some(0) {
            return bad("subsample must be at least 1".into());
        }
        self.kernel.validate()?;
        self.svm.validate()?;
        IForestConfig {
            contamination: 0.0,
            ..self.iforest
        }
        .validate()?;
        if let DataSource::Synthetic(s) = &self.data {
            s.validate()?;
        }
        if let Some(gs) = &self.grid_search {
            gs.validate()?;
        }
        Ok(())
    }
}
