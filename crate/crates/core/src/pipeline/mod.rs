//! End-to-end experiment protocol: partition-level splits, outlier removal on
//! the non-flaring training instances, repeated undersampling and
//! normalization trials, contamination sweep, grid search and reports.

mod config;
mod report;

use std::collections::{BTreeMap, BTreeSet};
use std::path::Path;

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

pub use config::{
    DataSource, ExperimentConfig, GridSearchSpec, Metric, DEFAULT_GRID, DEFAULT_PARAMETERS, PRESETS,
};
pub use report::{
    audit, emit_manifest, emit_report, read_json, to_csv, to_json, ExperimentReport, FoldRecord, RemovedSet,
    ReportCell, ReportFormat, ReportMeta, SplitManifest, MANIFEST_JSON, REPORT_CSV, REPORT_JSON,
};

use crate::error::{Error, Result};
use crate::eval::{aggregate, confusion, ConfusionMatrix, SkillScores};
use crate::iforest::{self, IForestConfig};
use crate::ingest;
use crate::mvts::{BinaryTask, Dataset, Label};
use crate::preprocess::{apply_minmax, fit_minmax, NormalizationStats};
use crate::seed;
use crate::svm::{self, label_of, SvmConfig};
use crate::tskernel::{gram_prepared, prepare_all, self_gram_prepared, KernelConfig, KernelKind, Prepared};

pub const TOOL_VERSION: &str = env!("CARGO_PKG_VERSION");

fn stage(name: &'static str, contamination: f64, trial: usize) -> impl Fn(Error) -> Error {
    move |e| Error::Stage {
        stage: name,
        contamination,
        trial,
        source: Box::new(e),
    }
}

/// Loads every partition the experiment touches, keeps the configured
/// parameters and applies the per-class subsample cap.
pub fn load_data(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Dataset> {
    load_partitions(cfg, base_dir, &cfg.partitions())
}

/// Like [`load_data`] restricted to `wanted`.
pub fn load_partitions(cfg: &ExperimentConfig, base_dir: &Path, wanted: &[u32]) -> Result<Dataset> {
    let raw = match cfg.data.resolved(base_dir) {
        DataSource::Synthetic(s) => ingest::generate_synthetic(&s)?.0,
        DataSource::Manifest(path) => ingest::load_partition(&path)?,
        DataSource::Directory(dir) => {
            let mut instances = Vec::new();
            for &p in wanted {
                let path = dir.join(format!("partition{p}")).join(ingest::MANIFEST_FILE);
                let part = ingest::load_partition_as(&path, p)?.select_parameters(&cfg.parameters)?;
                instances.extend(part.into_instances());
            }
            Dataset::from_instances(instances)?
        }
    };
    let data = raw
        .retain_where(|i| wanted.contains(&i.partition_id()))
        .select_parameters(&cfg.parameters)?;
    Ok(match cfg.subsample {
        Some(cap) => subsample(&data, cap, cfg.master_seed),
        None => data,
    })
}

/// Keeps at most `cap` instances of each flare class in each partition,
/// chosen uniformly and returned in original order.
pub fn subsample(d: &Dataset, cap: usize, master_seed: u64) -> Dataset {
    let mut groups: BTreeMap<(u32, usize), Vec<usize>> = BTreeMap::new();
    for (k, inst) in d.iter().enumerate() {
        groups
            .entry((inst.partition_id(), inst.flare_class().strength()))
            .or_default()
            .push(k);
    }
    let mut keep = Vec::with_capacity(d.len());
    for ((partition, class), members) in groups {
        if members.len() <= cap {
            keep.extend(members);
            continue;
        }
        let mut rng = seed::rng(seed::mix(&[master_seed, seed::tag("subsample"), partition as u64, class as u64]));
        keep.extend(rand::seq::index::sample(&mut rng, members.len(), cap).into_iter().map(|i| members[i]));
    }
    keep.sort_unstable();
    d.with_instances(keep.into_iter().map(|k| d.instances()[k].clone()).collect())
}

pub fn iforest_seed(cfg: &ExperimentConfig) -> u64 {
    seed::mix(&[cfg.master_seed, seed::tag("iforest"), cfg.iforest.seed])
}

/// Isolation-forest scores of the task's non-flaring instances in `train`,
/// from one forest grown on exactly those instances.
pub fn score_negatives(train: &Dataset, cfg: &ExperimentConfig) -> Result<Vec<(String, f64)>> {
    let negatives: Vec<_> = train
        .iter()
        .filter(|i| matches!(cfg.task.label(i.flare_class()), Ok(Label::Negative)))
        .collect();
    let vectors: Vec<_> = negatives.iter().map(|i| iforest::flatten(i)).collect();
    let forest_cfg = IForestConfig {
        seed: iforest_seed(cfg),
        contamination: 0.0,
        ..cfg.iforest
    };
    let model = iforest::fit(&vectors, &forest_cfg).map_err(stage("iforest", 0.0, 0))?;
    let scores = model.score_all(&vectors).map_err(stage("iforest", 0.0, 0))?;
    Ok(negatives
        .iter()
        .zip(scores)
        .map(|(i, s)| (i.instance_id().to_string(), s))
        .collect())
}

/// Loaded, task-filtered data plus the isolation-forest scores of the
/// non-flaring training instances.
#[derive(Debug, Clone)]
pub struct ExperimentContext {
    pub cfg: ExperimentConfig,
    pub train: Dataset,
    pub tests: Vec<(u32, Dataset)>,
    pub iforest_seed: u64,
    negative_scores: Vec<(String, f64)>,
}

impl ExperimentContext {
    pub fn load(cfg: &ExperimentConfig, base_dir: &Path) -> Result<Self> {
        cfg.validate()?;
        Self::new(cfg, &load_data(cfg, base_dir)?)
    }

    /// The forest is only grown when the grid has a positive rate.
    pub fn new(cfg: &ExperimentConfig, data: &Dataset) -> Result<Self> {
        cfg.validate()?;
        let task = cfg.task;
        let train = data.partition(cfg.train_partition).filter_task(task);
        let (pos, neg) = train.label_counts(task);
        if pos == 0 || neg == 0 {
            return Err(Error::InvalidDataset(format!(
                "training partition {} needs both classes of {task} (found {pos} positive, {neg} negative)",
                cfg.train_partition
            )));
        }
        let mut tests = Vec::new();
        for &p in &cfg.test_partitions {
            let t = data.partition(p).filter_task(task);
            if t.is_empty() {
                return Err(Error::InvalidDataset(format!("test partition {p} has no {task} instances")));
            }
            tests.push((p, t));
        }

        let iforest_seed = iforest_seed(cfg);
        let negative_scores = if cfg.contamination_grid.iter().any(|&r| r > 0.0) {
            score_negatives(&train, cfg)?
        } else {
            Vec::new()
        };
        Ok(Self {
            cfg: cfg.clone(),
            train,
            tests,
            iforest_seed,
            negative_scores,
        })
    }

    pub fn n_negatives(&self) -> usize {
        self.train.label_counts(self.cfg.task).1
    }

    /// Non-flaring training ids flagged at contamination `r`.
    pub fn removed(&self, r: f64) -> BTreeSet<String> {
        if r == 0.0 {
            return BTreeSet::new();
        }
        iforest::flag_outliers(&self.negative_scores, r)
    }

    /// Training partition with the flagged outliers taken out.
    pub fn training_pool(&self, r: f64) -> Dataset {
        let removed = self.removed(r);
        self.train.retain_where(|i| !removed.contains(i.instance_id()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PartitionOutcome {
    pub partition: u32,
    pub confusion: ConfusionMatrix,
    pub scores: SkillScores,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialOutcome {
    pub contamination: f64,
    pub trial: usize,
    pub train_ids: Vec<String>,
    pub normalization: NormalizationStats,
    pub n_support: usize,
    pub svm_iterations: usize,
    pub diagonal_shift: Option<f64>,
    pub partitions: Vec<PartitionOutcome>,
}

/// A normalized training fold with its fitted SVM.
pub struct TrainedFold {
    pub fold: Dataset,
    pub normalization: NormalizationStats,
    pub model: svm::SvmModel,
    pub support: Vec<Prepared>,
    pub diagonal_shift: Option<f64>,
}

/// Normalizes `fold`, builds its Gram matrix and trains the SVM.
pub fn train_fold(
    fold: Dataset,
    task: BinaryTask,
    kernel: &KernelConfig,
    svm_cfg: &SvmConfig,
    r: f64,
    trial: usize,
) -> Result<TrainedFold> {
    let normalization = fit_minmax(&fold).map_err(stage("normalize", r, trial))?;
    let normed = apply_minmax(&fold, &normalization).map_err(stage("normalize", r, trial))?;
    let labels = normed.labels(task).map_err(stage("train", r, trial))?;
    let prepared = prepare_all(normed.instances(), kernel).map_err(stage("kernel", r, trial))?;
    let gram = self_gram_prepared(&prepared, kernel).map_err(stage("kernel", r, trial))?;
    let (gram, diagonal_shift) = svm::regularize(&gram, kernel.kind).map_err(stage("kernel", r, trial))?;
    let model = svm::train(&gram, &labels, svm_cfg).map_err(stage("svm", r, trial))?;
    let support = model.support_indices.iter().map(|&i| prepared[i].clone()).collect();
    Ok(TrainedFold {
        fold,
        normalization,
        model,
        support,
        diagonal_shift,
    })
}

impl TrainedFold {
    /// Predicted labels for `test` after applying the fold's normalization.
    pub fn predict(&self, test: &Dataset, kernel: &KernelConfig) -> Result<Vec<Label>> {
        let normed = apply_minmax(test, &self.normalization)?;
        let prepared = prepare_all(normed.instances(), kernel)?;
        let k = gram_prepared(&prepared, &self.support, kernel)?;
        (0..k.n_rows)
            .map(|i| self.model.decision_support(k.row(i)).map(label_of))
            .collect()
    }
}

/// One trial at contamination `r`: undersample the outlier-free pool, fit
/// normalization on the fold, train, and score every test partition.
pub fn run_trial(ctx: &ExperimentContext, r: f64, trial: usize) -> Result<TrialOutcome> {
    let cfg = &ctx.cfg;
    let task = cfg.task;
    let trial_seed = seed::trial_seed(cfg.master_seed, r, trial);
    let pool = ctx.training_pool(r);
    let fold = cfg
        .undersampler()
        .apply(&pool, task, seed::mix(&[trial_seed, seed::tag("undersample")]))
        .map_err(stage("undersample", r, trial))?;
    let svm_cfg = SvmConfig {
        seed: seed::mix(&[trial_seed, seed::tag("svm"), cfg.svm.seed]),
        ..cfg.svm
    };
    let trained = train_fold(fold, task, &cfg.kernel, &svm_cfg, r, trial)?;

    let mut partitions = Vec::with_capacity(ctx.tests.len());
    for (p, test) in &ctx.tests {
        let predictions = trained.predict(test, &cfg.kernel).map_err(stage("predict", r, trial))?;
        let truths = test.labels(task).map_err(stage("predict", r, trial))?;
        let cm = confusion(&predictions, &truths).map_err(stage("score", r, trial))?;
        let scores = SkillScores::from_confusion(&cm).map_err(stage("score", r, trial))?;
        partitions.push(PartitionOutcome {
            partition: *p,
            confusion: cm,
            scores,
        });
    }
    Ok(TrialOutcome {
        contamination: r,
        trial,
        train_ids: trained.fold.iter().map(|i| i.instance_id().to_string()).collect(),
        normalization: trained.normalization,
        n_support: trained.model.support_indices.len(),
        svm_iterations: trained.model.iterations,
        diagonal_shift: trained.diagonal_shift,
        partitions,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct SweepOutput {
    pub report: ExperimentReport,
    pub manifest: SplitManifest,
    pub trials: Vec<TrialOutcome>,
}

pub fn run_sweep(cfg: &ExperimentConfig, base_dir: &Path) -> Result<SweepOutput> {
    sweep(&ExperimentContext::load(cfg, base_dir)?)
}

/// Every (rate, trial) pair runs independently; results are assembled in
/// grid and trial order, so the output does not depend on scheduling.
pub fn sweep(ctx: &ExperimentContext) -> Result<SweepOutput> {
    let cfg = &ctx.cfg;
    let jobs: Vec<(f64, usize)> = cfg
        .contamination_grid
        .iter()
        .flat_map(|&r| (0..cfg.n_trials).map(move |t| (r, t)))
        .collect();
    let trials = jobs
        .par_iter()
        .map(|&(r, t)| {
            log::debug!("trial r={r} #{t}");
            run_trial(ctx, r, t)
        })
        .collect::<Result<Vec<_>>>()?;

    let mut cells = Vec::new();
    let mut removed = Vec::new();
    for &r in &cfg.contamination_grid {
        let at_r: Vec<&TrialOutcome> = trials.iter().filter(|t| t.contamination == r).collect();
        let n_removed = ctx.removed(r);
        for (k, (p, _)) in ctx.tests.iter().enumerate() {
            let outcomes: Vec<&PartitionOutcome> = at_r.iter().map(|t| &t.partitions[k]).collect();
            let tss: Vec<f64> = outcomes.iter().map(|o| o.scores.tss).collect();
            let hss2: Vec<f64> = outcomes.iter().map(|o| o.scores.hss2).collect();
            cells.push(ReportCell {
                contamination: r,
                test_partition: *p,
                tss: aggregate(&tss)?,
                hss2: aggregate(&hss2)?,
                confusion: outcomes.iter().map(|o| o.confusion).collect(),
                n_removed: n_removed.len(),
                train_sizes: at_r.iter().map(|t| t.train_ids.len()).collect(),
            });
        }
        removed.push(RemovedSet {
            contamination: r,
            ids: n_removed.into_iter().collect(),
        });
    }

    let report = ExperimentReport {
        config: cfg.clone(),
        meta: ReportMeta {
            tool_version: TOOL_VERSION.to_string(),
            master_seed: cfg.master_seed,
            kernel_mode: match cfg.kernel.kind {
                KernelKind::Gak => "GAK".into(),
                KernelKind::DtwRbf => "DTW_RBF".into(),
            },
            kernel_fingerprint: cfg.kernel.fingerprint(),
            undersampler: format!("{:?}", cfg.undersampler()).to_lowercase(),
            iforest_seed: ctx.iforest_seed,
            iforest_policy: "one forest per run with a fixed seed; every contamination rate thresholds the same scores and all trials share them".into(),
            n_train_pool: ctx.train.len(),
            n_train_negatives: ctx.n_negatives(),
            n_test: ctx.tests.iter().map(|(p, d)| (*p, d.len())).collect(),
        },
        cells,
    };
    let manifest = SplitManifest {
        train_partition: cfg.train_partition,
        train_pool_ids: ctx.train.iter().map(|i| i.instance_id().to_string()).collect(),
        test_ids: ctx
            .tests
            .iter()
            .map(|(p, d)| (*p, d.iter().map(|i| i.instance_id().to_string()).collect()))
            .collect(),
        removed,
        folds: trials
            .iter()
            .map(|t| FoldRecord {
                contamination: t.contamination,
                trial: t.trial,
                train_ids: t.train_ids.clone(),
                normalization: t.normalization.clone(),
            })
            .collect(),
    };
    Ok(SweepOutput {
        report,
        manifest,
        trials,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridPoint {
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: f64,
    /// `None` when the objective is undefined or training failed.
    pub objective: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridSearchResult {
    #[serde(rename = "C")]
    pub c: f64,
    pub gamma: f64,
    pub metric: Metric,
    pub objective: f64,
    pub table: Vec<GridPoint>,
}

fn metric_value(metric: Metric, cm: &ConfusionMatrix) -> Result<f64> {
    match metric {
        Metric::Tss => crate::eval::tss(cm),
        Metric::Hss2 => crate::eval::hss2(cm),
    }
}

fn sorted_unique(v: &[f64]) -> Vec<f64> {
    let mut v = v.to_vec();
    v.sort_by(f64::total_cmp);
    v.dedup();
    v
}

/// Seeded stratified split of `d` into (train, validation).
pub fn stratified_holdout(d: &Dataset, task: BinaryTask, fraction: f64, seed_value: u64) -> Result<(Dataset, Dataset)> {
    let labels = d.labels(task)?;
    let mut validation = BTreeSet::new();
    for (k, class) in [Label::Positive, Label::Negative].into_iter().enumerate() {
        let mut members: Vec<usize> = (0..d.len()).filter(|&i| labels[i] == class).collect();
        if members.len() < 2 {
            return Err(Error::InvalidDataset(format!(
                "holdout needs at least two {class:?} instances, found {}",
                members.len()
            )));
        }
        members.shuffle(&mut seed::rng(seed::mix(&[seed_value, seed::tag("holdout"), k as u64])));
        let n_val = ingest::round_half_up(fraction, members.len()).clamp(1, members.len() - 1);
        validation.extend(members[..n_val].iter().copied());
    }
    let (mut train, mut val) = (Vec::new(), Vec::new());
    for (i, inst) in d.iter().enumerate() {
        if validation.contains(&i) {
            val.push(inst.clone());
        } else {
            train.push(inst.clone());
        }
    }
    Ok((d.with_instances(train), d.with_instances(val)))
}

/// Exhaustive search over (C, gamma) on a stratified holdout of the
/// undersampled training partition, without outlier removal. Ties go to the
/// smaller C, then the smaller gamma.
pub fn grid_search(ctx: &ExperimentContext, spec: &GridSearchSpec) -> Result<GridSearchResult> {
    spec.validate()?;
    let cfg = &ctx.cfg;
    let task = cfg.task;
    let base = seed::mix(&[cfg.master_seed, seed::tag("gridsearch")]);
    let fold = cfg
        .undersampler()
        .apply(&ctx.train, task, seed::mix(&[base, seed::tag("undersample")]))
        .map_err(stage("undersample", 0.0, 0))?;
    let (train, val) = stratified_holdout(&fold, task, spec.validation_fraction, base)?;
    let stats = fit_minmax(&train)?;
    let (train, val) = (apply_minmax(&train, &stats)?, apply_minmax(&val, &stats)?);
    let train_labels = train.labels(task)?;
    let val_labels = val.labels(task)?;
    let cs = sorted_unique(&spec.c_values);
    let gammas = sorted_unique(&spec.gamma_values);

    let per_gamma = gammas
        .par_iter()
        .map(|&gamma| -> Result<Vec<GridPoint>> {
            let kernel = KernelConfig { gamma, ..cfg.kernel };
            let tp = prepare_all(train.instances(), &kernel)?;
            let vp = prepare_all(val.instances(), &kernel)?;
            let (gram, _) = svm::regularize(&self_gram_prepared(&tp, &kernel)?, kernel.kind)?;
            let kval = gram_prepared(&vp, &tp, &kernel)?;
            let mut points = Vec::with_capacity(cs.len());
            for &c in &cs {
                let svm_cfg = SvmConfig {
                    c,
                    seed: seed::mix(&[base, seed::tag("svm"), cfg.svm.seed]),
                    ..cfg.svm
                };
                let objective = match svm::train(&gram, &train_labels, &svm_cfg) {
                    Ok(model) => {
                        let preds = (0..kval.n_rows)
                            .map(|i| model.decision(kval.row(i)).map(label_of))
                            .collect::<Result<Vec<_>>>()?;
                        metric_value(spec.objective, &confusion(&preds, &val_labels)?).ok()
                    }
                    Err(e @ Error::NotConverged { .. }) => {
                        log::warn!("grid search C={c} gamma={gamma}: {e}");
                        None
                    }
                    Err(e) => return Err(e),
                };
                points.push(GridPoint { c, gamma, objective });
            }
            Ok(points)
        })
        .collect::<Result<Vec<_>>>()?;

    // gamma-major from the parallel map; reorder to C-major for the tie rule
    let mut table: Vec<GridPoint> = per_gamma.into_iter().flatten().collect();
    table.sort_by(|a, b| a.c.total_cmp(&b.c).then(a.gamma.total_cmp(&b.gamma)));
    let mut best: Option<&GridPoint> = None;
    for p in &table {
        if let Some(v) = p.objective {
            if best.and_then(|b| b.objective).is_none_or(|bv| v > bv) {
                best = Some(p);
            }
        }
    }
    let best = best.ok_or(Error::UndefinedSkill("grid search objective undefined for every candidate"))?;
    Ok(GridSearchResult {
        c: best.c,
        gamma: best.gamma,
        metric: spec.objective,
        objective: best.objective.unwrap_or_default(),
        table,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::ingest::SynthConfig;
    use crate::FlareClass::{B, C, M, N, X};

    fn synth(seed: u64, noise_sd: f64) -> SynthConfig {
        SynthConfig {
            n_per_class: BTreeMap::from([(X, 4), (M, 8), (C, 16), (B, 12), (N, 30)]),
            n_params: 3,
            n_steps: 5,
            class_signal: BTreeMap::new(),
            noise_sd,
            outlier_fraction: 0.1,
            outlier_magnitude: 4.0,
            seed,
            n_partitions: 3,
            param_names: Some(vec!["TOTUSJH".into(), "TOTPOT".into(), "ABSNJZH".into()]),
        }
    }

    fn config(seed: u64) -> ExperimentConfig {
        let mut cfg = ExperimentConfig::new(BinaryTask::XmVsCbn, DataSource::Synthetic(synth(seed, 0.8)));
        cfg.parameters = vec!["TOTUSJH".into(), "TOTPOT".into(), "ABSNJZH".into()];
        cfg.test_partitions = vec![2, 3];
        cfg.contamination_grid = vec![0.0, 0.1, 0.5];
        cfg.n_trials = 2;
        cfg.master_seed = seed;
        cfg
    }

    fn context(cfg: &ExperimentConfig) -> ExperimentContext {
        ExperimentContext::load(cfg, Path::new(".")).unwrap()
    }

    #[test]
    fn sweep_shape_and_audit() {
        let cfg = config(3);
        let out = run_sweep(&cfg, Path::new(".")).unwrap();
        assert_eq!(out.report.cells.len(), 3 * 2);
        for cell in &out.report.cells {
            assert_eq!(cell.tss.trials.len(), 2);
            assert_eq!(cell.confusion.len(), 2);
        }
        assert_eq!(out.manifest.folds.len(), 3 * 2);
        assert!(audit(&out.manifest).is_empty(), "{:?}", audit(&out.manifest));
        assert_eq!(out.report.cells[0].contamination, 0.0);
        assert_eq!(out.report.cells[0].test_partition, 2);
        assert_eq!(out.report.cells[0].n_removed, 0);
    }

    #[test]
    fn single_cell_report() {
        let mut cfg = config(4);
        cfg.contamination_grid = vec![0.0];
        cfg.n_trials = 1;
        cfg.test_partitions = vec![2];
        let out = run_sweep(&cfg, Path::new(".")).unwrap();
        assert_eq!(out.report.cells.len(), 1);
        assert_eq!(to_csv(&out.report).lines().count(), 1 + 2);
    }

    #[test]
    fn removal_counts_follow_floor_rule() {
        let ctx = context(&config(5));
        let n_neg = ctx.n_negatives();
        assert_eq!(n_neg, 16 + 12 + 30);
        assert_eq!(ctx.removed(0.0).len(), 0);
        assert_eq!(ctx.removed(0.5).len(), n_neg / 2);
        assert_eq!(ctx.removed(0.1).len(), 5);
        assert!(ctx.removed(0.1).is_subset(&ctx.removed(0.5)));
        assert_eq!(ctx.training_pool(0.5).len(), ctx.train.len() - n_neg / 2);
        let positives: BTreeSet<String> = ctx
            .train
            .iter()
            .filter(|i| matches!(i.flare_class(), X | M))
            .map(|i| i.instance_id().to_string())
            .collect();
        assert!(ctx.removed(0.5).is_disjoint(&positives));
    }

    #[test]
    fn trials_are_deterministic_and_baseline_skips_detection() {
        let cfg = config(6);
        let ctx = context(&cfg);
        assert_eq!(run_trial(&ctx, 0.1, 1).unwrap(), run_trial(&ctx, 0.1, 1).unwrap());
        let mut plain = cfg.clone();
        plain.contamination_grid = vec![0.0];
        let no_forest = context(&plain);
        assert_eq!(run_trial(&ctx, 0.0, 0).unwrap(), run_trial(&no_forest, 0.0, 0).unwrap());
        let full = sweep(&ctx).unwrap();
        let base = sweep(&no_forest).unwrap();
        assert_eq!(full.report.cells[..2], base.report.cells[..]);
    }

    #[test]
    fn undersampled_fold_is_balanced_and_normalized_on_itself() {
        let ctx = context(&config(7));
        let t = run_trial(&ctx, 0.1, 0).unwrap();
        assert_eq!(t.train_ids.len(), 2 * 12);
        assert_eq!(
            t.normalization.fitted_on,
            crate::preprocess::fingerprint_ids(t.train_ids.iter().map(String::as_str))
        );
        assert_eq!(t.partitions.len(), 2);
        for p in &t.partitions {
            assert_eq!(p.confusion.total(), 70);
        }
    }

    #[test]
    fn stage_errors_are_tagged() {
        let mut s = synth(8, 0.8);
        s.n_per_class = BTreeMap::from([(X, 10), (N, 3)]);
        let mut cfg = ExperimentConfig::new(BinaryTask::XVsN, DataSource::Synthetic(s));
        cfg.parameters = vec!["TOTUSJH".into()];
        cfg.test_partitions = vec![2];
        cfg.contamination_grid = vec![0.0];
        cfg.n_trials = 1;
        let ctx = context(&cfg);
        match run_trial(&ctx, 0.0, 0) {
            Err(Error::Stage { stage, source, .. }) => {
                assert_eq!(stage, "undersample");
                assert!(matches!(*source, Error::UndersampleDirection { .. }));
            }
            other => panic!("{other:?}"),
        }
        let mut missing = config(8);
        missing.test_partitions = vec![2, 9];
        assert!(matches!(
            ExperimentContext::load(&missing, Path::new(".")),
            Err(Error::InvalidDataset(_))
        ));
    }

    #[test]
    fn subsample_caps_each_class_per_partition() {
        let (d, _) = ingest::generate_synthetic(&synth(9, 0.8)).unwrap();
        let s = subsample(&d, 10, 1);
        for p in 1..=3 {
            let counts = s.partition(p).class_counts();
            assert_eq!(counts[&X], 4);
            assert_eq!(counts[&M], 8);
            assert_eq!(counts[&C], 10);
            assert_eq!(counts[&N], 10);
        }
        assert_eq!(s, subsample(&d, 10, 1));
        let pos: Vec<usize> = s.iter().map(|i| d.iter().position(|j| j == i).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]));
    }

    #[test]
    fn directory_and_manifest_sources_load_the_same_data() {
        let cfg = config(10);
        let (d, _) = ingest::generate_synthetic(&synth(10, 0.8)).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for p in 1..=3 {
            ingest::write_dataset(&d.partition(p), &dir.path().join(format!("partition{p}"))).unwrap();
        }
        ingest::write_dataset(&d, &dir.path().join("all")).unwrap();
        let mut by_dir = cfg.clone();
        by_dir.data = DataSource::Directory("parts".into());
        let moved = dir.path().join("parts");
        std::fs::create_dir(&moved).unwrap();
        for p in 1..=3 {
            std::fs::rename(dir.path().join(format!("partition{p}")), moved.join(format!("partition{p}"))).unwrap();
        }
        let mut by_manifest = cfg.clone();
        by_manifest.data = DataSource::Manifest("all/manifest.csv".into());
        let a = load_data(&by_dir, dir.path()).unwrap();
        let b = load_data(&by_manifest, dir.path()).unwrap();
        let c = load_data(&cfg, dir.path()).unwrap();
        assert_eq!(a, b);
        assert_eq!(b, c);
    }

    #[test]
    fn grid_search_rules() {
        let mut cfg = config(11);
        let mut clean = synth(11, 0.2);
        clean.outlier_fraction = 0.0;
        cfg.data = DataSource::Synthetic(clean);
        let ctx = context(&cfg);
        let single = GridSearchSpec {
            c_values: vec![10.0],
            gamma_values: vec![0.5],
            ..GridSearchSpec::default()
        };
        let r = grid_search(&ctx, &single).unwrap();
        assert_eq!((r.c, r.gamma), (10.0, 0.5));
        assert_eq!(r.table.len(), 1);
        // well-separated classes: every cell scores perfectly, so the smallest C and gamma win
        let spec = GridSearchSpec {
            c_values: vec![1000.0, 100.0],
            gamma_values: vec![0.1, 0.05],
            ..GridSearchSpec::default()
        };
        let r = grid_search(&ctx, &spec).unwrap();
        assert!(r.table.iter().all(|p| p.objective == Some(1.0)), "{:?}", r.table);
        assert_eq!((r.c, r.gamma), (100.0, 0.05));
        assert_eq!(r, grid_search(&ctx, &spec).unwrap());
    }

    #[test]
    fn stratified_holdout_keeps_both_classes() {
        let ctx = context(&config(12));
        let (train, val) = stratified_holdout(&ctx.train, BinaryTask::XmVsCbn, 0.25, 3).unwrap();
        assert_eq!(train.len() + val.len(), ctx.train.len());
        assert_eq!(val.label_counts(BinaryTask::XmVsCbn), (3, 15));
    }
}
