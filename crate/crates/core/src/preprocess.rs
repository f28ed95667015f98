//! Min-max normalization and 1:1 undersampling (random and
//! climatology-preserving).

use rand::seq::index;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mvts::{BinaryTask, Dataset, FlareClass, Label};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ParamRange {
    pub name: String,
    pub min: f64,
    pub max: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub params: Vec<ParamRange>,
    /// Fingerprint of the dataset the ranges were fitted on.
    pub fitted_on: String,
}

/// Short SHA-256 digest over the ordered instance ids.
pub fn fingerprint(d: &Dataset) -> String {
    fingerprint_ids(d.iter().map(|i| i.instance_id()))
}

pub fn fingerprint_ids<'a>(ids: impl IntoIterator<Item = &'a str>) -> String {
    let mut h = Sha256::new();
    for id in ids {
        h.update(id.as_bytes());
        h.update([0u8]);
    }
    h.finalize()[..8].iter().map(|b| format!("{b:02x}")).collect()
}

pub fn fit_minmax(d: &Dataset) -> Result<NormalizationStats> {
    if d.is_empty() {
        return Err(Error::EmptyDataset);
    }
    let params = d
        .param_names()
        .iter()
        .enumerate()
        .map(|(p, name)| {
            let (min, max) = d
                .iter()
                .flat_map(|i| i.row(p).iter().copied())
                .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
            ParamRange {
                name: name.clone(),
                min,
                max,
            }
        })
        .collect();
    Ok(NormalizationStats {
        params,
        fitted_on: fingerprint(d),
    })
}

/// Maps `v` to `(v - min) / (max - min)` per parameter, without clipping.
/// A constant parameter maps to 0.
pub fn apply_minmax(d: &Dataset, stats: &NormalizationStats) -> Result<Dataset> {
    let names: Vec<String> = stats.params.iter().map(|r| r.name.clone()).collect();
    if names != d.param_names() {
        return Err(Error::ParameterMismatch {
            expected: names,
            found: d.param_names().to_vec(),
        });
    }
    let instances = d
        .iter()
        .map(|inst| {
            inst.map_values(|p, v| {
                let r = &stats.params[p];
                let span = r.max - r.min;
                if span > 0.0 {
                    (v - r.min) / span
                } else {
                    0.0
                }
            })
        })
        .collect();
    Ok(d.with_instances(instances))
}

/// Per-subclass draw counts for climatology-preserving undersampling.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SamplePlan {
    /// (subclass, population, target), in the task's negative-class order.
    pub targets: Vec<(FlareClass, usize, usize)>,
    pub total: usize,
}

impl SamplePlan {
    pub fn target(&self, class: FlareClass) -> Option<usize> {
        self.targets.iter().find(|t| t.0 == class).map(|t| t.2)
    }
}

fn split_by_label(d: &Dataset, task: BinaryTask) -> Result<(Vec<usize>, Vec<usize>)> {
    let mut pos = Vec::new();
    let mut neg = Vec::new();
    for (k, label) in d.labels(task)?.into_iter().enumerate() {
        match label {
            Label::Positive => pos.push(k),
            Label::Negative => neg.push(k),
        }
    }
    if pos.len() > neg.len() {
        return Err(Error::UndersampleDirection {
            positives: pos.len(),
            negatives: neg.len(),
        });
    }
    Ok((pos, neg))
}

/// Picks `k` of `pool` uniformly, returned in ascending order.
fn pick(pool: &[usize], k: usize, rng: &mut seed::StageRng) -> Vec<usize> {
    let mut chosen: Vec<usize> = index::sample(rng, pool.len(), k).into_iter().map(|i| pool[i]).collect();
    chosen.sort_unstable();
    chosen
}

fn keep_indices(d: &Dataset, mut keep: Vec<usize>) -> Dataset {
    keep.sort_unstable();
    d.with_instances(keep.into_iter().map(|k| d.instances()[k].clone()).collect())
}

/// Keeps every positive and an equal-sized uniform subset of negatives.
/// Every instance must belong to the task.
pub fn undersample_random(d: &Dataset, task: BinaryTask, seed: u64) -> Result<Dataset> {
    let (pos, neg) = split_by_label(d, task)?;
    let mut rng = seed::rng(seed);
    let mut keep = pick(&neg, pos.len(), &mut rng);
    keep.extend(pos);
    Ok(keep_indices(d, keep))
}

/// Largest-remainder apportionment of the positive count over the negative
/// subclasses, proportional to subclass population. Ties in the remainder go
/// to the larger population, then the lexicographically smaller class name.
pub fn plan_climatology(d: &Dataset, task: BinaryTask) -> Result<SamplePlan> {
    let (pos, neg) = split_by_label(d, task)?;
    let counts = d.class_counts();
    let populations: Vec<(FlareClass, usize)> = task
        .negatives()
        .iter()
        .map(|&c| (c, counts.get(&c).copied().unwrap_or(0)))
        .collect();
    apportion(pos.len(), neg.len(), &populations)
}

/// Hamilton apportionment of `total` draws over subclasses of a population.
pub fn apportion(total: usize, population: usize, subclasses: &[(FlareClass, usize)]) -> Result<SamplePlan> {
    if total == 0 || population == 0 {
        return Ok(SamplePlan {
            targets: subclasses.iter().map(|&(c, n)| (c, n, 0)).collect(),
            total: 0,
        });
    }
    let (total_u, pop_u) = (total as u128, population as u128);
    // quota_i = total * n_i / population; floor and remainder in exact integers
    let mut rows: Vec<(FlareClass, usize, usize, u128)> = subclasses
        .iter()
        .map(|&(c, n)| {
            let num = total_u * n as u128;
            (c, n, (num / pop_u) as usize, num % pop_u)
        })
        .collect();
    let assigned: usize = rows.iter().map(|r| r.2).sum();
    let mut order: Vec<usize> = (0..rows.len()).collect();
    order.sort_by(|&a, &b| {
        rows[b]
            .3
            .cmp(&rows[a].3)
            .then(rows[b].1.cmp(&rows[a].1))
            .then(rows[a].0.as_str().cmp(rows[b].0.as_str()))
    });
    for &k in order.iter().take(total - assigned) {
        rows[k].2 += 1;
    }
    for &(class, available, target, _) in &rows {
        if target > available {
            return Err(Error::PlanExceedsPopulation {
                class,
                target,
                available,
            });
        }
    }
    Ok(SamplePlan {
        targets: rows.into_iter().map(|(c, n, t, _)| (c, n, t)).collect(),
        total,
    })
}

/// Keeps every positive and, per negative subclass, a uniform subset of the
/// planned size.
pub fn undersample_climatology(d: &Dataset, task: BinaryTask, seed: u64) -> Result<Dataset> {
    let plan = plan_climatology(d, task)?;
    let (pos, _) = split_by_label(d, task)?;
    let mut rng = seed::rng(seed);
    let mut keep = pos;
    for &(class, _, target) in &plan.targets {
        let pool: Vec<usize> = (0..d.len()).filter(|&k| d.instances()[k].flare_class() == class).collect();
        keep.extend(pick(&pool, target, &mut rng));
    }
    Ok(keep_indices(d, keep))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Undersampler {
    Random,
    Climatology,
}

impl Undersampler {
    pub fn apply(self, d: &Dataset, task: BinaryTask, seed: u64) -> Result<Dataset> {
        match self {
            Undersampler::Random => undersample_random(d, task, seed),
            Undersampler::Climatology => undersample_climatology(d, task, seed),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mvts::MvtsInstance;
    use proptest::prelude::*;

    fn dataset(rows: &[(&str, FlareClass, Vec<f64>)]) -> Dataset {
        let instances = rows
            .iter()
            .map(|(id, c, v)| MvtsInstance::new(*id, *c, 1, vec!["A".into()], vec![v.clone()]).unwrap())
            .collect();
        Dataset::from_instances(instances).unwrap()
    }

    fn counts(spec: &[(FlareClass, usize)]) -> Dataset {
        let mut rows = Vec::new();
        for &(c, n) in spec {
            for k in 0..n {
                rows.push((format!("{c}{k:06}"), c, vec![k as f64]));
            }
        }
        let instances = rows
            .into_iter()
            .map(|(id, c, v)| MvtsInstance::new(id, c, 1, vec!["A".into()], vec![v]).unwrap())
            .collect();
        Dataset::from_instances(instances).unwrap()
    }

    #[test]
    fn minmax_fit_examples() {
        let s = fit_minmax(&dataset(&[("a", FlareClass::N, vec![2.0, 4.0, 6.0])])).unwrap();
        assert_eq!((s.params[0].min, s.params[0].max), (2.0, 6.0));
        let s = fit_minmax(&dataset(&[("a", FlareClass::N, vec![5.0, 5.0, 5.0])])).unwrap();
        assert_eq!((s.params[0].min, s.params[0].max), (5.0, 5.0));
        let s = fit_minmax(&dataset(&[
            ("a", FlareClass::N, vec![0.0, 1.0]),
            ("b", FlareClass::N, vec![-1.0, 2.0]),
        ]))
        .unwrap();
        assert_eq!((s.params[0].min, s.params[0].max), (-1.0, 2.0));
        assert!(matches!(fit_minmax(&Dataset::empty(vec!["A".into()], 1)), Err(Error::EmptyDataset)));
    }

    #[test]
    fn minmax_apply_examples() {
        let d = dataset(&[("a", FlareClass::N, vec![2.0, 4.0, 6.0])]);
        let s = fit_minmax(&d).unwrap();
        assert_eq!(apply_minmax(&d, &s).unwrap().instances()[0].values(), &[0.0, 0.5, 1.0]);
        let test = dataset(&[("t", FlareClass::N, vec![8.0, 2.0, 0.0])]);
        assert_eq!(apply_minmax(&test, &s).unwrap().instances()[0].values(), &[1.5, 0.0, -0.5]);
        let c = dataset(&[("a", FlareClass::N, vec![5.0, 5.0, 5.0])]);
        let sc = fit_minmax(&c).unwrap();
        assert_eq!(apply_minmax(&c, &sc).unwrap().instances()[0].values(), &[0.0, 0.0, 0.0]);

        let other = Dataset::from_instances(vec![MvtsInstance::new("x", FlareClass::N, 1, vec!["B".into()], vec![vec![1.0]]).unwrap()]).unwrap();
        assert!(matches!(apply_minmax(&other, &s), Err(Error::ParameterMismatch { .. })));
    }

    #[test]
    fn random_undersampling() {
        let d = counts(&[(FlareClass::X, 10), (FlareClass::N, 100)]);
        let u = undersample_random(&d, BinaryTask::XVsN, 3).unwrap();
        assert_eq!(u.len(), 20);
        assert_eq!(u.label_counts(BinaryTask::XVsN), (10, 10));
        assert_eq!(u, undersample_random(&d, BinaryTask::XVsN, 3).unwrap());

        let eq = counts(&[(FlareClass::X, 5), (FlareClass::N, 5)]);
        assert_eq!(undersample_random(&eq, BinaryTask::XVsN, 9).unwrap(), eq);

        let flipped = counts(&[(FlareClass::X, 5), (FlareClass::N, 2)]);
        assert!(matches!(
            undersample_random(&flipped, BinaryTask::XVsN, 1),
            Err(Error::UndersampleDirection { .. })
        ));
        let foreign = counts(&[(FlareClass::X, 1), (FlareClass::M, 1), (FlareClass::N, 3)]);
        assert!(matches!(
            undersample_random(&foreign, BinaryTask::XVsN, 1),
            Err(Error::NotInTaskUniverse { .. })
        ));
    }

    #[test]
    fn climatology_plan_partition_one() {
        use FlareClass::*;
        let plan = apportion(1254, 72238, &[(C, 6416), (B, 5692), (N, 60130)]).unwrap();
        assert_eq!(plan.target(C), Some(111));
        assert_eq!(plan.target(B), Some(99));
        assert_eq!(plan.target(N), Some(1044));
        assert_eq!(plan.total, 1254);
    }

    #[test]
    fn climatology_plan_edges() {
        let single = counts(&[(FlareClass::X, 7), (FlareClass::N, 30)]);
        let plan = plan_climatology(&single, BinaryTask::XVsN).unwrap();
        assert_eq!(plan.targets, vec![(FlareClass::N, 30, 7)]);
        let none = counts(&[(FlareClass::C, 3), (FlareClass::N, 3)]);
        let plan = plan_climatology(&none, BinaryTask::XmVsCbn).unwrap();
        assert!(plan.targets.iter().all(|t| t.2 == 0));
    }

    #[test]
    fn climatology_tie_breaks() {
        use FlareClass::*;
        // quotas 1.5/1.5: equal remainders, larger population wins, then name
        let plan = apportion(3, 6, &[(C, 3), (B, 3)]).unwrap();
        assert_eq!(plan.target(B), Some(2));
        assert_eq!(plan.target(C), Some(1));
        let plan = apportion(1, 5, &[(C, 2), (B, 2), (N, 1)]).unwrap();
        assert_eq!(plan.target(B), Some(1));
    }

    #[test]
    fn climatology_undersampling_counts() {
        use FlareClass::*;
        let d = counts(&[(X, 4), (M, 6), (C, 20), (B, 10), (N, 70)]);
        let a = undersample_climatology(&d, BinaryTask::XmVsCbn, 1).unwrap();
        let b = undersample_climatology(&d, BinaryTask::XmVsCbn, 2).unwrap();
        for u in [&a, &b] {
            let c = u.class_counts();
            assert_eq!(u.label_counts(BinaryTask::XmVsCbn), (10, 10));
            assert_eq!((c[&C], c[&B], c[&N]), (2, 1, 7));
        }
        assert_ne!(a, b);
        let all_pos = counts(&[(X, 4), (N, 1)]);
        assert!(undersample_climatology(&all_pos, BinaryTask::XmVsCbn, 1).is_err());
    }

    proptest! {
        #[test]
        fn minmax_maps_into_unit_interval(vals in prop::collection::vec(-1e6f64..1e6, 1..40)) {
            let d = dataset(&[("a", FlareClass::N, vals.clone())]);
            let out = apply_minmax(&d, &fit_minmax(&d).unwrap()).unwrap();
            let o = out.instances()[0].values();
            prop_assert!(o.iter().all(|v| (0.0..=1.0).contains(v)));
            for i in 0..vals.len() {
                for j in 0..vals.len() {
                    if vals[i] < vals[j] { prop_assert!(o[i] <= o[j]); }
                }
            }
        }

        #[test]
        fn apportionment_within_one_of_quota(pops in prop::collection::vec(0usize..5000, 1..4), frac in 0.0f64..1.0) {
            let classes = [FlareClass::C, FlareClass::B, FlareClass::N];
            let subs: Vec<_> = pops.iter().enumerate().map(|(k, &n)| (classes[k], n)).collect();
            let population: usize = pops.iter().sum();
            let total = (frac * population as f64) as usize;
            let plan = apportion(total, population, &subs).unwrap();
            prop_assert_eq!(plan.targets.iter().map(|t| t.2).sum::<usize>(), total);
            if population > 0 {
                for &(_, n, t) in &plan.targets {
                    let quota = total as f64 * n as f64 / population as f64;
                    prop_assert!((t as f64 - quota).abs() < 1.0);
                    prop_assert!(t <= n);
                }
            }
        }
    }
}
