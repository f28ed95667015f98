//! Labeled multivariate time series and the binary tasks built on flare classes.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// GOES flare class of the strongest flare in the prediction window.
///
/// Variants are declared weakest first so the derived ordering gives
/// `X > M > C > B > N`. A-class reports are folded into `N`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum FlareClass {
    N,
    B,
    C,
    M,
    X,
}

impl FlareClass {
    /// All classes, strongest first.
    pub const ALL: [FlareClass; 5] = [
        FlareClass::X,
        FlareClass::M,
        FlareClass::C,
        FlareClass::B,
        FlareClass::N,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            FlareClass::X => "X",
            FlareClass::M => "M",
            FlareClass::C => "C",
            FlareClass::B => "B",
            FlareClass::N => "N",
        }
    }

    /// 0 for N up to 4 for X.
    pub fn strength(self) -> usize {
        self as usize
    }
}

impl fmt::Display for FlareClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for FlareClass {
    type Err = Error;

    /// Accepts bare letters (`"M"`), GOES magnitudes (`"M1.5"`) and the
    /// flare-quiet spellings `N`, `FQ` and `A`.
    fn from_str(s: &str) -> Result<Self> {
        let t = s.trim();
        if t.eq_ignore_ascii_case("FQ") {
            return Ok(FlareClass::N);
        }
        let mut chars = t.chars();
        let head = chars.next().map(|c| c.to_ascii_uppercase());
        let rest = chars.as_str();
        let magnitude_ok = rest.is_empty() || rest.parse::<f64>().is_ok_and(|m| m.is_finite());
        match (head, magnitude_ok) {
            (Some('X'), true) => Ok(FlareClass::X),
            (Some('M'), true) => Ok(FlareClass::M),
            (Some('C'), true) => Ok(FlareClass::C),
            (Some('B'), true) => Ok(FlareClass::B),
            (Some('N'), true) | (Some('A'), true) => Ok(FlareClass::N),
            _ => Err(Error::UnknownFlareClass(s.to_string())),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BinaryTask {
    /// X-class flares against flare-quiet windows.
    #[serde(rename = "X_VS_N")]
    XVsN,
    /// X and M flares against C, B and flare-quiet windows.
    #[serde(rename = "XM_VS_CBN")]
    XmVsCbn,
}

impl BinaryTask {
    pub fn positives(self) -> &'static [FlareClass] {
        match self {
            BinaryTask::XVsN => &[FlareClass::X],
            BinaryTask::XmVsCbn => &[FlareClass::X, FlareClass::M],
        }
    }

    /// Negative subclasses, strongest first.
    pub fn negatives(self) -> &'static [FlareClass] {
        match self {
            BinaryTask::XVsN => &[FlareClass::N],
            BinaryTask::XmVsCbn => &[FlareClass::C, FlareClass::B, FlareClass::N],
        }
    }

    pub fn contains(self, class: FlareClass) -> bool {
        self.positives().contains(&class) || self.negatives().contains(&class)
    }

    pub fn label(self, class: FlareClass) -> Result<Label> {
        classify_binary(class, self)
    }
}

impl fmt::Display for BinaryTask {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BinaryTask::XVsN => "X_VS_N",
            BinaryTask::XmVsCbn => "XM_VS_CBN",
        })
    }
}

/// Binary label; positive means flaring.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    Positive,
    Negative,
}

impl Label {
    pub fn sign(self) -> f64 {
        match self {
            Label::Positive => 1.0,
            Label::Negative => -1.0,
        }
    }

    pub fn flipped(self) -> Label {
        match self {
            Label::Positive => Label::Negative,
            Label::Negative => Label::Positive,
        }
    }
}

pub fn classify_binary(class: FlareClass, task: BinaryTask) -> Result<Label> {
    if task.positives().contains(&class) {
        Ok(Label::Positive)
    } else if task.negatives().contains(&class) {
        Ok(Label::Negative)
    } else {
        Err(Error::NotInTaskUniverse { class, task })
    }
}

/// One observation window: `P` parameter series of `T` timesteps each.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MvtsInstance {
    instance_id: String,
    flare_class: FlareClass,
    partition_id: u32,
    param_names: Vec<String>,
    n_steps: usize,
    /// Row-major by parameter: `values[p * n_steps + t]`.
    values: Vec<f64>,
}

impl MvtsInstance {
    pub fn new(
        instance_id: impl Into<String>,
        flare_class: FlareClass,
        partition_id: u32,
        param_names: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let instance_id = instance_id.into();
        let n_steps = rows.first().map_or(0, Vec::len);
        if rows.len() != param_names.len() {
            return Err(Error::InconsistentShape {
                instance_id,
                expected: format!("{} parameter rows", param_names.len()),
                found: format!("{} rows", rows.len()),
            });
        }
        if let Some(bad) = rows.iter().find(|r| r.len() != n_steps) {
            return Err(Error::InconsistentShape {
                instance_id,
                expected: format!("{n_steps} timesteps per row"),
                found: format!("a row of {}", bad.len()),
            });
        }
        let values = rows.into_iter().flatten().collect();
        Self::from_flat(instance_id, flare_class, partition_id, param_names, n_steps, values)
    }

    pub fn from_flat(
        instance_id: impl Into<String>,
        flare_class: FlareClass,
        partition_id: u32,
        param_names: Vec<String>,
        n_steps: usize,
        values: Vec<f64>,
    ) -> Result<Self> {
        let instance_id = instance_id.into();
        if n_steps == 0 || param_names.is_empty() {
            return Err(Error::InconsistentShape {
                instance_id,
                expected: "at least one parameter and one timestep".into(),
                found: format!("{}x{}", param_names.len(), n_steps),
            });
        }
        if values.len() != param_names.len() * n_steps {
            return Err(Error::InconsistentShape {
                instance_id,
                expected: format!("{}x{}", param_names.len(), n_steps),
                found: format!("{} values", values.len()),
            });
        }
        check_unique_names(&param_names)?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(Error::NonFinite(format!("instance {instance_id}")));
        }
        if partition_id == 0 {
            return Err(Error::InvalidDataset(format!(
                "instance {instance_id}: partition ids start at 1"
            )));
        }
        Ok(Self {
            instance_id,
            flare_class,
            partition_id,
            param_names,
            n_steps,
            values,
        })
    }

    pub fn instance_id(&self) -> &str {
        &self.instance_id
    }

    pub fn flare_class(&self) -> FlareClass {
        self.flare_class
    }

    pub fn partition_id(&self) -> u32 {
        self.partition_id
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    /// Flat row-major values, parameter by parameter.
    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn row(&self, p: usize) -> &[f64] {
        &self.values[p * self.n_steps..(p + 1) * self.n_steps]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks_exact(self.n_steps)
    }

    /// Same instance with every value passed through `f(param_index, value)`.
    pub(crate) fn map_values(&self, f: impl Fn(usize, f64) -> f64) -> MvtsInstance {
        let n_steps = self.n_steps;
        let values = self
            .values
            .iter()
            .enumerate()
            .map(|(i, &v)| f(i / n_steps, v))
            .collect();
        MvtsInstance {
            values,
            ..self.clone()
        }
    }

    fn with_rows(&self, names: &[String], indices: &[usize]) -> MvtsInstance {
        let mut values = Vec::with_capacity(indices.len() * self.n_steps);
        for &p in indices {
            values.extend_from_slice(self.row(p));
        }
        MvtsInstance {
            param_names: names.to_vec(),
            values,
            ..self.clone()
        }
    }
}

fn check_unique_names(names: &[String]) -> Result<()> {
    let mut seen = HashSet::with_capacity(names.len());
    for n in names {
        if !seen.insert(n.as_str()) {
            return Err(Error::InvalidDataset(format!("duplicate parameter name {n:?}")));
        }
    }
    Ok(())
}

/// A collection of instances sharing parameter names and series length.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    param_names: Vec<String>,
    n_steps: usize,
    instances: Vec<MvtsInstance>,
}

impl Dataset {
    pub fn new(param_names: Vec<String>, n_steps: usize, instances: Vec<MvtsInstance>) -> Result<Self> {
        check_unique_names(&param_names)?;
        let mut ids = HashSet::with_capacity(instances.len());
        for inst in &instances {
            if inst.param_names != param_names || inst.n_steps != n_steps {
                return Err(Error::InconsistentShape {
                    instance_id: inst.instance_id.clone(),
                    expected: format!("{:?} x {}", param_names, n_steps),
                    found: format!("{:?} x {}", inst.param_names, inst.n_steps),
                });
            }
            if !ids.insert(inst.instance_id.as_str()) {
                return Err(Error::InvalidDataset(format!(
                    "duplicate instance id {:?}",
                    inst.instance_id
                )));
            }
        }
        Ok(Self {
            param_names,
            n_steps,
            instances,
        })
    }

    /// Builds a dataset from a nonempty instance list, taking the shape of the first.
    pub fn from_instances(instances: Vec<MvtsInstance>) -> Result<Self> {
        let first = instances.first().ok_or(Error::EmptyDataset)?;
        let names = first.param_names.clone();
        let n_steps = first.n_steps;
        Self::new(names, n_steps, instances)
    }

    pub fn empty(param_names: Vec<String>, n_steps: usize) -> Self {
        Self {
            param_names,
            n_steps,
            instances: Vec::new(),
        }
    }

    pub fn param_names(&self) -> &[String] {
        &self.param_names
    }

    pub fn n_params(&self) -> usize {
        self.param_names.len()
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn instances(&self) -> &[MvtsInstance] {
        &self.instances
    }

    pub fn into_instances(self) -> Vec<MvtsInstance> {
        self.instances
    }

    pub fn len(&self) -> usize {
        self.instances.len()
    }

    pub fn is_empty(&self) -> bool {
        self.instances.is_empty()
    }

    pub fn iter(&self) -> std::slice::Iter<'_, MvtsInstance> {
        self.instances.iter()
    }

    /// Keeps instances matching `keep`, preserving order.
    pub fn retain_where(&self, keep: impl Fn(&MvtsInstance) -> bool) -> Dataset {
        Dataset {
            param_names: self.param_names.clone(),
            n_steps: self.n_steps,
            instances: self.instances.iter().filter(|i| keep(i)).cloned().collect(),
        }
    }

    pub fn partition(&self, partition_id: u32) -> Dataset {
        self.retain_where(|i| i.partition_id == partition_id)
    }

    /// Distinct partition ids, ascending.
    pub fn partition_ids(&self) -> Vec<u32> {
        let mut ids: Vec<u32> = self.instances.iter().map(|i| i.partition_id).collect();
        ids.sort_unstable();
        ids.dedup();
        ids
    }

    pub fn class_counts(&self) -> BTreeMap<FlareClass, usize> {
        let mut counts = BTreeMap::new();
        for inst in &self.instances {
            *counts.entry(inst.flare_class).or_insert(0) += 1;
        }
        counts
    }

    pub(crate) fn with_instances(&self, instances: Vec<MvtsInstance>) -> Dataset {
        Dataset {
            param_names: self.param_names.clone(),
            n_steps: self.n_steps,
            instances,
        }
    }

    /// Appends another dataset of the same shape.
    pub fn concat(&self, other: &Dataset) -> Result<Dataset> {
        let mut all = self.instances.clone();
        all.extend(other.instances.iter().cloned());
        Dataset::new(self.param_names.clone(), self.n_steps, all)
    }

    pub fn filter_task(&self, task: BinaryTask) -> Dataset {
        self.retain_where(|i| task.contains(i.flare_class))
    }

    pub fn select_parameters(&self, names: &[String]) -> Result<Dataset> {
        let missing: Vec<String> = names
            .iter()
            .filter(|n| !self.param_names.contains(n))
            .cloned()
            .collect();
        if !missing.is_empty() {
            return Err(Error::UnknownParameters(missing));
        }
        check_unique_names(names)?;
        let indices: Vec<usize> = names
            .iter()
            .map(|n| self.param_names.iter().position(|p| p == n).unwrap())
            .collect();
        let names = names.to_vec();
        let instances = self
            .instances
            .iter()
            .map(|i| i.with_rows(&names, &indices))
            .collect();
        Ok(Dataset {
            param_names: names,
            n_steps: self.n_steps,
            instances,
        })
    }

    /// (positives, negatives) among instances in the task universe.
    pub fn label_counts(&self, task: BinaryTask) -> (usize, usize) {
        self.instances
            .iter()
            .fold((0, 0), |(p, n), i| match classify_binary(i.flare_class, task) {
                Ok(Label::Positive) => (p + 1, n),
                Ok(Label::Negative) => (p, n + 1),
                Err(_) => (p, n),
            })
    }

    /// Negatives per positive.
    pub fn imbalance_ratio(&self, task: BinaryTask) -> Result<f64> {
        let (pos, neg) = self.label_counts(task);
        if pos == 0 {
            return Err(Error::UndefinedRatio(task));
        }
        Ok(neg as f64 / pos as f64)
    }

    /// Labels of every instance; fails on the first one outside the task.
    pub fn labels(&self, task: BinaryTask) -> Result<Vec<Label>> {
        self.instances
            .iter()
            .map(|i| classify_binary(i.flare_class, task))
            .collect()
    }
}

impl<'a> IntoIterator for &'a Dataset {
    type Item = &'a MvtsInstance;
    type IntoIter = std::slice::Iter<'a, MvtsInstance>;

    fn into_iter(self) -> Self::IntoIter {
        self.instances.iter()
    }
}

/// Renders a ratio as `1:k`, rounding half up.
pub fn format_ratio(ratio: f64) -> String {
    format!("1:{}", (ratio + 0.5).floor() as u64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn inst(id: &str, class: FlareClass, rows: Vec<Vec<f64>>) -> MvtsInstance {
        let names = (0..rows.len()).map(|p| format!("P{p}")).collect();
        MvtsInstance::new(id, class, 1, names, rows).unwrap()
    }

    fn counts_dataset(counts: &[(FlareClass, usize)]) -> Dataset {
        let mut instances = Vec::new();
        for &(class, n) in counts {
            for k in 0..n {
                instances.push(inst(&format!("{class}{k}"), class, vec![vec![0.0]]));
            }
        }
        Dataset::new(vec!["P0".into()], 1, instances).unwrap()
    }

    #[test]
    fn class_order_is_strength_order() {
        assert!(FlareClass::X > FlareClass::M);
        assert!(FlareClass::M > FlareClass::C);
        assert!(FlareClass::C > FlareClass::B);
        assert!(FlareClass::B > FlareClass::N);
        let mut sorted = FlareClass::ALL.to_vec();
        sorted.sort_by(|a, b| b.cmp(a));
        assert_eq!(sorted, FlareClass::ALL);
    }

    #[test]
    fn parses_labels() {
        assert_eq!("X".parse::<FlareClass>().unwrap(), FlareClass::X);
        assert_eq!("m1.2".parse::<FlareClass>().unwrap(), FlareClass::M);
        assert_eq!("A".parse::<FlareClass>().unwrap(), FlareClass::N);
        assert_eq!("FQ".parse::<FlareClass>().unwrap(), FlareClass::N);
        assert!("Z".parse::<FlareClass>().is_err());
        assert!("".parse::<FlareClass>().is_err());
        assert!("Xfoo".parse::<FlareClass>().is_err());
    }

    #[test]
    fn binary_labels() {
        assert_eq!(classify_binary(FlareClass::X, BinaryTask::XmVsCbn).unwrap(), Label::Positive);
        assert_eq!(classify_binary(FlareClass::N, BinaryTask::XmVsCbn).unwrap(), Label::Negative);
        assert!(matches!(
            classify_binary(FlareClass::M, BinaryTask::XVsN),
            Err(Error::NotInTaskUniverse { .. })
        ));
        for task in [BinaryTask::XVsN, BinaryTask::XmVsCbn] {
            for p in task.positives() {
                assert!(!task.negatives().contains(p));
            }
        }
    }

    #[test]
    fn filter_task_partition_one_counts() {
        use FlareClass::*;
        let d = counts_dataset(&[(X, 165), (M, 1089), (C, 6416), (B, 5692), (N, 60130)]);
        let f = d.filter_task(BinaryTask::XVsN);
        assert_eq!(f.len(), 60295);
        assert!(f.labels(BinaryTask::XVsN).is_ok());
        assert!(Dataset::empty(vec!["a".into()], 3).filter_task(BinaryTask::XVsN).is_empty());

        let cbn = counts_dataset(&[(C, 3), (B, 2), (N, 4)]);
        let kept = cbn.filter_task(BinaryTask::XmVsCbn);
        assert_eq!(kept.len(), 9);
        assert_eq!(kept.label_counts(BinaryTask::XmVsCbn), (0, 9));
    }

    #[test]
    fn imbalance_ratios_match_table_one() {
        use FlareClass::*;
        let d = counts_dataset(&[(X, 165), (M, 1089), (C, 6416), (B, 5692), (N, 60130)]);
        let xm = d.imbalance_ratio(BinaryTask::XmVsCbn).unwrap();
        assert!((xm - 72238.0 / 1254.0).abs() < 1e-12);
        assert_eq!(format_ratio(xm), "1:58");
        let xn = d.imbalance_ratio(BinaryTask::XVsN).unwrap();
        assert_eq!(format_ratio(xn), "1:364");
        assert_eq!(
            d.filter_task(BinaryTask::XVsN).imbalance_ratio(BinaryTask::XVsN).unwrap(),
            xn
        );
        let balanced = counts_dataset(&[(X, 10), (N, 10)]);
        assert_eq!(balanced.imbalance_ratio(BinaryTask::XVsN).unwrap(), 1.0);
        let none = counts_dataset(&[(N, 10)]);
        assert!(matches!(none.imbalance_ratio(BinaryTask::XVsN), Err(Error::UndefinedRatio(_))));
    }

    #[test]
    fn table_one_ratio_columns_recompute() {
        // (X, M, C, B, N, "X:N", "XM:CBN")
        let table: [(u64, u64, u64, u64, u64, &str, &str); 5] = [
            (165, 1089, 6416, 5692, 60130, "1:364", "1:58"),
            (72, 1392, 8810, 4978, 73368, "1:1019", "1:60"),
            (136, 1288, 5639, 685, 34762, "1:256", "1:29"),
            (153, 1012, 5956, 846, 43294, "1:283", "1:43"),
            (19, 971, 5763, 5924, 62688, "1:3299", "1:75"),
        ];
        for (x, m, c, b, n, xn, xm) in table {
            assert_eq!(format_ratio(n as f64 / x as f64), xn);
            assert_eq!(format_ratio((c + b + n) as f64 / (x + m) as f64), xm);
        }
    }

    #[test]
    fn select_parameters_orders_and_validates() {
        let names: Vec<String> = ["A", "B", "C"].iter().map(|s| s.to_string()).collect();
        let i = MvtsInstance::new(
            "i",
            FlareClass::X,
            1,
            names.clone(),
            vec![vec![1.0, 2.0], vec![3.0, 4.0], vec![5.0, 6.0]],
        )
        .unwrap();
        let d = Dataset::new(names.clone(), 2, vec![i]).unwrap();
        let sel = d.select_parameters(&["C".into(), "A".into()]).unwrap();
        assert_eq!(sel.param_names(), &["C".to_string(), "A".to_string()]);
        assert_eq!(sel.instances()[0].values(), &[5.0, 6.0, 1.0, 2.0]);
        assert_eq!(sel.select_parameters(&["C".into(), "A".into()]).unwrap(), sel);
        assert_eq!(d.select_parameters(&names).unwrap(), d);
        match d.select_parameters(&["BOGUS".into()]) {
            Err(Error::UnknownParameters(m)) => assert_eq!(m, vec!["BOGUS".to_string()]),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn dataset_invariants_enforced() {
        let a = inst("a", FlareClass::N, vec![vec![1.0, 2.0]]);
        let dup = inst("a", FlareClass::X, vec![vec![1.0, 2.0]]);
        assert!(Dataset::new(vec!["P0".into()], 2, vec![a.clone(), dup]).is_err());
        let short = inst("b", FlareClass::N, vec![vec![1.0]]);
        assert!(Dataset::new(vec!["P0".into()], 2, vec![a, short]).is_err());
        assert!(MvtsInstance::new("c", FlareClass::N, 1, vec!["P".into(), "P".into()], vec![vec![1.0], vec![2.0]]).is_err());
        assert!(MvtsInstance::new("c", FlareClass::N, 1, vec!["P".into()], vec![vec![f64::NAN]]).is_err());
    }
}
