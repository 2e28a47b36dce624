//! Labelled sample sets: composition, generation, training targets and
//! per-combination splits.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use rand::seq::SliceRandom;

use crate::catalog::{Catalog, CatalogError};
use crate::loads::{LoadClass, LoadInstance};
use crate::probe::{run_probe, DimmingSchedule, MeasurementMatrices, ProbeError};
use crate::seed;
use crate::waveform::SupplyConfig;

/// Number of load-count outputs: one, two or three loads.
pub const MAX_LOADS: usize = 3;

#[derive(Debug, Clone, PartialEq)]
pub enum DatasetError {
    EmptyLabelSet,
    TooManyLabels(usize),
    DuplicateLabel(LoadClass),
    ClassOutOfRange { index: usize, classes: usize },
    UnknownLabel(String),
    InvalidSpec(&'static str),
    Catalog(CatalogError),
    Simulation { combo_id: String, source: ProbeError },
    InsufficientSamples {
        combo_id: String,
        available: usize,
        required: usize,
    },
}

impl fmt::Display for DatasetError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DatasetError::EmptyLabelSet => f.write_str("label set is empty"),
            DatasetError::TooManyLabels(n) => {
                write!(f, "{n} labels given, at most {MAX_LOADS} are supported")
            }
            DatasetError::DuplicateLabel(c) => write!(f, "label {c} appears twice"),
            DatasetError::ClassOutOfRange { index, classes } => {
                write!(f, "class index {index} outside 0..{classes}")
            }
            DatasetError::UnknownLabel(s) => write!(f, "unknown load label `{s}`"),
            DatasetError::InvalidSpec(why) => write!(f, "invalid dataset spec: {why}"),
            DatasetError::Catalog(e) => e.fmt(f),
            DatasetError::Simulation { combo_id, source } => {
                write!(f, "simulating {combo_id}: {source}")
            }
            DatasetError::InsufficientSamples {
                combo_id,
                available,
                required,
            } => write!(
                f,
                "combination {combo_id} has {available} samples, {required} required"
            ),
        }
    }
}

impl core::error::Error for DatasetError {}

impl From<CatalogError> for DatasetError {
    fn from(e: CatalogError) -> Self {
        DatasetError::Catalog(e)
    }
}

/// One to three distinct classes, kept in class-index order.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(try_from = "Vec<LoadClass>", into = "Vec<LoadClass>"))]
pub struct LabelSet(Vec<LoadClass>);

impl LabelSet {
    pub fn new(classes: &[LoadClass]) -> Result<Self, DatasetError> {
        check_labels(classes)?;
        let mut v = classes.to_vec();
        v.sort();
        Ok(LabelSet(v))
    }

    pub fn single(class: LoadClass) -> Self {
        LabelSet(alloc::vec![class])
    }

    pub fn classes(&self) -> &[LoadClass] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    /// Always false; present for API symmetry with `len`.
    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn contains(&self, class: LoadClass) -> bool {
        self.0.contains(&class)
    }

    /// Canonical key: labels sorted lexicographically, joined by `+`.
    pub fn combo_id(&self) -> String {
        let mut labels: Vec<&str> = self.0.iter().map(|c| c.label()).collect();
        labels.sort_unstable();
        labels.join("+")
    }

    pub fn parse_combo_id(s: &str) -> Result<Self, DatasetError> {
        let classes = s
            .split('+')
            .map(|l| LoadClass::from_label(l).ok_or_else(|| DatasetError::UnknownLabel(l.into())))
            .collect::<Result<Vec<_>, _>>()?;
        LabelSet::new(&classes)
    }
}

impl TryFrom<Vec<LoadClass>> for LabelSet {
    type Error = DatasetError;
    fn try_from(v: Vec<LoadClass>) -> Result<Self, Self::Error> {
        LabelSet::new(&v)
    }
}

impl From<LabelSet> for Vec<LoadClass> {
    fn from(l: LabelSet) -> Self {
        l.0
    }
}

impl fmt::Display for LabelSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.combo_id())
    }
}

fn check_labels(classes: &[LoadClass]) -> Result<(), DatasetError> {
    if classes.is_empty() {
        return Err(DatasetError::EmptyLabelSet);
    }
    if classes.len() > MAX_LOADS {
        return Err(DatasetError::TooManyLabels(classes.len()));
    }
    for (i, c) in classes.iter().enumerate() {
        if classes[..i].contains(c) {
            return Err(DatasetError::DuplicateLabel(*c));
        }
    }
    Ok(())
}

/// Training target: `1/N` on each present class, one-hot load count.
#[derive(Debug, Clone, PartialEq)]
pub struct TargetVector {
    pub class_part: Vec<f64>,
    pub count_part: [f64; MAX_LOADS],
}

impl TargetVector {
    pub fn load_count(&self) -> usize {
        self.count_part.iter().position(|&v| v == 1.0).map_or(0, |i| i + 1)
    }
}

pub fn encode_target(labels: &[LoadClass], classes: usize) -> Result<TargetVector, DatasetError> {
    check_labels(labels)?;
    let n = labels.len();
    let mut class_part = alloc::vec![0.0; classes];
    for c in labels {
        let slot = class_part
            .get_mut(c.index())
            .ok_or(DatasetError::ClassOutOfRange {
                index: c.index(),
                classes,
            })?;
        *slot = 1.0 / n as f64;
    }
    let mut count_part = [0.0; MAX_LOADS];
    count_part[n - 1] = 1.0;
    Ok(TargetVector {
        class_part,
        count_part,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Sample {
    pub matrices: MeasurementMatrices,
    pub labels: LabelSet,
    pub combo_id: String,
}

impl Sample {
    pub fn new(matrices: MeasurementMatrices, labels: LabelSet) -> Self {
        let combo_id = labels.combo_id();
        Sample {
            matrices,
            labels,
            combo_id,
        }
    }

    pub fn load_count(&self) -> usize {
        self.labels.len()
    }
}

/// Composition of a generated dataset.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct DatasetSpec {
    /// Classes measured on their own.
    pub single_classes: Vec<LoadClass>,
    pub singles_per_class: usize,
    pub two_load_combos: Vec<LabelSet>,
    pub samples_per_two_load: usize,
    pub three_load_combos: Vec<LabelSet>,
    pub samples_per_three_load: usize,
    pub master_seed: u64,
    /// Seconds of use between consecutive samples of the same combination;
    /// type III members drift by this much per preceding sample.
    pub drift_interval: f64,
}

impl Default for DatasetSpec {
    fn default() -> Self {
        DatasetSpec {
            single_classes: LoadClass::ALL.to_vec(),
            singles_per_class: 250,
            two_load_combos: all_pairs(&LoadClass::ALL),
            samples_per_two_load: 100,
            three_load_combos: default_triples(),
            samples_per_three_load: 100,
            master_seed: 0,
            drift_interval: 60.0,
        }
    }
}

/// Every unordered pair of distinct classes from `classes`.
pub fn all_pairs(classes: &[LoadClass]) -> Vec<LabelSet> {
    let mut out = Vec::new();
    for (i, &a) in classes.iter().enumerate() {
        for &b in &classes[i + 1..] {
            if a != b {
                out.push(LabelSet(if a < b { alloc::vec![a, b] } else { alloc::vec![b, a] }));
            }
        }
    }
    out
}

/// The two three-load combinations measured by default.
pub fn default_triples() -> Vec<LabelSet> {
    use LoadClass::*;
    alloc::vec![
        LabelSet(alloc::vec![Fan, LedBulb, Incandescents]),
        LabelSet(alloc::vec![Fan, LedSpotlight, SolderingIron]),
    ]
}

/// One sample to be generated.
#[derive(Debug, Clone, PartialEq)]
pub struct Job {
    pub labels: LabelSet,
    pub combo_id: String,
    /// Position within the combination.
    pub index: usize,
    pub seed: u64,
}

impl DatasetSpec {
    /// A spec with the same sample counts but only the listed pairs.
    pub fn with_pairs(mut self, pairs: Vec<LabelSet>) -> Self {
        self.two_load_combos = pairs;
        self
    }

    pub fn validate(&self) -> Result<(), DatasetError> {
        check_unique(self.single_classes.iter())?;
        if self.two_load_combos.iter().any(|l| l.len() != 2) {
            return Err(DatasetError::InvalidSpec("two_load_combos entries must have 2 labels"));
        }
        if self.three_load_combos.iter().any(|l| l.len() != 3) {
            return Err(DatasetError::InvalidSpec(
                "three_load_combos entries must have 3 labels",
            ));
        }
        let ids: Vec<String> = self.combos().iter().map(|(l, _)| l.combo_id()).collect();
        for (i, id) in ids.iter().enumerate() {
            if ids[..i].contains(id) {
                return Err(DatasetError::InvalidSpec("combination listed twice"));
            }
        }
        if !(self.drift_interval >= 0.0 && self.drift_interval.is_finite()) {
            return Err(DatasetError::InvalidSpec("drift_interval must be >= 0"));
        }
        Ok(())
    }

    /// Every combination with its sample count, in generation order:
    /// singles, pairs, triples.
    pub fn combos(&self) -> Vec<(LabelSet, usize)> {
        let singles = self
            .single_classes
            .iter()
            .map(|&c| (LabelSet::single(c), self.singles_per_class));
        let pairs = self
            .two_load_combos
            .iter()
            .map(|l| (l.clone(), self.samples_per_two_load));
        let triples = self
            .three_load_combos
            .iter()
            .map(|l| (l.clone(), self.samples_per_three_load));
        singles.chain(pairs).chain(triples).filter(|(_, n)| *n > 0).collect()
    }

    pub fn total_samples(&self) -> usize {
        self.combos().iter().map(|(_, n)| n).sum()
    }

    /// Every sample as an independent job. Seeds depend only on the master
    /// seed, the combination and the index, so jobs may run in any order.
    pub fn jobs(&self) -> Vec<Job> {
        let mut out = Vec::with_capacity(self.total_samples());
        for (labels, n) in self.combos() {
            let combo_id = labels.combo_id();
            for index in 0..n {
                out.push(Job {
                    labels: labels.clone(),
                    combo_id: combo_id.clone(),
                    index,
                    seed: seed::derive(self.master_seed, &combo_id, index as u64),
                });
            }
        }
        out
    }
}

fn check_unique<'a>(it: impl Iterator<Item = &'a LoadClass>) -> Result<(), DatasetError> {
    let mut seen = [false; LoadClass::COUNT];
    for c in it {
        if core::mem::replace(&mut seen[c.index()], true) {
            return Err(DatasetError::DuplicateLabel(*c));
        }
    }
    Ok(())
}

/// Everything besides the spec that generation needs.
#[derive(Debug, Clone, Copy)]
pub struct SimContext<'a> {
    pub catalog: &'a Catalog,
    pub supply: &'a SupplyConfig,
    pub schedule: &'a DimmingSchedule,
    pub drift_interval: f64,
}

/// Instantiates the members of `job`, applies usage drift for the samples
/// that preceded it and probes the joint bank.
pub fn generate_sample(job: &Job, ctx: &SimContext<'_>) -> Result<Sample, DatasetError> {
    let mut bank: Vec<LoadInstance> = Vec::with_capacity(job.labels.len());
    for (slot, &class) in job.labels.classes().iter().enumerate() {
        let mut inst = ctx
            .catalog
            .instantiate(class, seed::derive(job.seed, class.label(), slot as u64))?;
        if ctx.drift_interval > 0.0 {
            let mut rng = seed::rng(seed::derive(job.seed, "drift", slot as u64));
            for _ in 0..job.index {
                inst.drift(ctx.drift_interval, &mut rng);
            }
        }
        bank.push(inst);
    }
    let sim_err = |source| DatasetError::Simulation {
        combo_id: job.combo_id.clone(),
        source,
    };
    let matrices = run_probe(&mut bank, ctx.supply, ctx.schedule).map_err(sim_err)?;
    let (rows, cols) = matrices.shape();
    matrices
        .validate(rows, cols, ctx.supply.solver.tolerance * ctx.supply.peak_voltage())
        .map_err(sim_err)?;
    Ok(Sample::new(matrices, job.labels.clone()))
}

/// Sequential generation; the `plugid` crate runs the same jobs in parallel.
pub fn generate(
    spec: &DatasetSpec,
    catalog: &Catalog,
    supply: &SupplyConfig,
    schedule: &DimmingSchedule,
) -> Result<Dataset, DatasetError> {
    spec.validate()?;
    catalog.validate()?;
    let ctx = SimContext {
        catalog,
        supply,
        schedule,
        drift_interval: spec.drift_interval,
    };
    let samples = spec
        .jobs()
        .iter()
        .map(|j| generate_sample(j, &ctx))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Dataset { samples })
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<Sample>,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Sample indices grouped by combination, in order of appearance.
    pub fn by_combo(&self) -> BTreeMap<String, Vec<usize>> {
        let mut m: BTreeMap<String, Vec<usize>> = BTreeMap::new();
        for (i, s) in self.samples.iter().enumerate() {
            m.entry(s.combo_id.clone()).or_default().push(i);
        }
        m
    }

    pub fn subset(&self, indices: &[usize]) -> Dataset {
        Dataset {
            samples: indices.iter().map(|&i| self.samples[i].clone()).collect(),
        }
    }
}

/// Per-combination selection sizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct Quota {
    pub train: usize,
    /// `None` sends every sample not selected for training to the test set.
    pub test: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(deny_unknown_fields))]
pub struct SplitPolicy {
    pub single: Quota,
    pub multi: Quota,
}

impl SplitPolicy {
    pub fn uniform(train: usize, test: usize) -> Self {
        let q = Quota {
            train,
            test: Some(test),
        };
        SplitPolicy {
            single: q,
            multi: q,
        }
    }

    /// Many single-load and few multi-load training samples; the rest of
    /// every combination is test data.
    pub fn scarce_multi(single_train: usize, multi_train: usize) -> Self {
        SplitPolicy {
            single: Quota {
                train: single_train,
                test: None,
            },
            multi: Quota {
                train: multi_train,
                test: None,
            },
        }
    }
}

/// Train and test indices into `ds`. Within every combination, samples are
/// drawn without replacement from a permutation seeded by `(seed, combo_id)`.
pub fn split_indices(
    ds: &Dataset,
    policy: &SplitPolicy,
    seed: u64,
) -> Result<(Vec<usize>, Vec<usize>), DatasetError> {
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (combo_id, mut idx) in ds.by_combo() {
        let multi = ds.samples[idx[0]].labels.len() > 1;
        let q = if multi { policy.multi } else { policy.single };
        let required = q.train + q.test.unwrap_or(0);
        if idx.len() < required {
            return Err(DatasetError::InsufficientSamples {
                combo_id,
                available: idx.len(),
                required,
            });
        }
        idx.shuffle(&mut seed::rng(seed::derive(seed, &combo_id, 0)));
        let n_test = q.test.unwrap_or(idx.len() - q.train);
        train.extend_from_slice(&idx[..q.train]);
        test.extend_from_slice(&idx[q.train..q.train + n_test]);
    }
    Ok((train, test))
}

pub fn split(
    ds: &Dataset,
    policy: &SplitPolicy,
    seed: u64,
) -> Result<(Dataset, Dataset), DatasetError> {
    let (tr, te) = split_indices(ds, policy, seed)?;
    Ok((ds.subset(&tr), ds.subset(&te)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;
    use LoadClass::*;

    #[test]
    fn combo_id_is_lexicographic() {
        let l = LabelSet::new(&[SolderingIron, Fan, Usb]).unwrap();
        assert_eq!(l.combo_id(), "USB+fan+solderingiron");
        assert_eq!(LabelSet::new(&[Fan, SolderingIron, Usb]).unwrap(), l);
        assert_eq!(LabelSet::parse_combo_id("USB+fan+solderingiron").unwrap(), l);
        assert_eq!(
            LabelSet::parse_combo_id("fan+toaster"),
            Err(DatasetError::UnknownLabel("toaster".into()))
        );
    }

    #[test]
    fn label_set_contract() {
        assert_eq!(LabelSet::new(&[]), Err(DatasetError::EmptyLabelSet));
        assert_eq!(
            LabelSet::new(&[Fan, Usb, Laptop, Monitor]),
            Err(DatasetError::TooManyLabels(4))
        );
        assert_eq!(LabelSet::new(&[Fan, Fan]), Err(DatasetError::DuplicateLabel(Fan)));
    }

    #[test]
    fn encode_target_examples() {
        let t = encode_target(&[Hairdryer], 11).unwrap();
        assert_eq!(t.class_part, vec![0., 0., 0., 0., 1., 0., 0., 0., 0., 0., 0.]);
        assert_eq!(t.count_part, [1.0, 0.0, 0.0]);

        let t = encode_target(&[Usb, LedBulb], 11).unwrap();
        assert_eq!(t.class_part, vec![0.5, 0., 0., 0., 0., 0.5, 0., 0., 0., 0., 0.]);
        assert_eq!(t.count_part, [0.0, 1.0, 0.0]);

        let t = encode_target(&[Usb, Fan, LedBulb], 11).unwrap();
        let third = 1.0 / 3.0;
        assert_eq!(
            t.class_part,
            vec![third, 0., 0., third, 0., third, 0., 0., 0., 0., 0.]
        );
        assert_eq!(t.count_part, [0.0, 0.0, 1.0]);
        assert_eq!(t.load_count(), 3);

        assert_eq!(encode_target(&[], 11), Err(DatasetError::EmptyLabelSet));
        assert_eq!(
            encode_target(&[Usb, Fan, LedBulb, Laptop], 11),
            Err(DatasetError::TooManyLabels(4))
        );
        assert_eq!(
            encode_target(&[Laptop], 4),
            Err(DatasetError::ClassOutOfRange {
                index: 8,
                classes: 4
            })
        );
    }

    #[test]
    fn default_spec_counts() {
        let spec = DatasetSpec::default();
        spec.validate().unwrap();
        assert_eq!(spec.two_load_combos.len(), 55);
        assert_eq!(spec.total_samples(), 11 * 250 + 55 * 100 + 2 * 100);
        let mut ids: Vec<String> = spec.combos().iter().map(|(l, _)| l.combo_id()).collect();
        assert!(ids.contains(&"INCANDESCENTS+fan+ledbulb".into()));
        assert!(ids.contains(&"fan+ledspotlight+solderingiron".into()));
        ids.sort();
        ids.dedup();
        assert_eq!(ids.len(), 11 + 55 + 2);

        let restricted = DatasetSpec::default().with_pairs(all_pairs(&LoadClass::ALL)[..43].to_vec());
        assert_eq!(restricted.total_samples(), 11 * 250 + 43 * 100 + 2 * 100);
    }

    #[test]
    fn singles_only_spec() {
        let spec = DatasetSpec {
            singles_per_class: 7,
            samples_per_two_load: 0,
            three_load_combos: vec![],
            ..DatasetSpec::default()
        };
        assert_eq!(spec.total_samples(), 77);
        assert!(spec.jobs().iter().all(|j| j.labels.len() == 1));
    }

    #[test]
    fn spec_validation() {
        let mut spec = DatasetSpec::default();
        spec.two_load_combos.push(spec.two_load_combos[0].clone());
        assert!(matches!(spec.validate(), Err(DatasetError::InvalidSpec(_))));
        let mut spec = DatasetSpec::default();
        spec.three_load_combos.push(LabelSet::single(Fan));
        assert!(matches!(spec.validate(), Err(DatasetError::InvalidSpec(_))));
        let spec = DatasetSpec {
            single_classes: vec![Fan, Fan],
            ..DatasetSpec::default()
        };
        assert_eq!(spec.validate(), Err(DatasetError::DuplicateLabel(Fan)));
    }

    #[test]
    fn job_seeds_are_stable_and_distinct() {
        let spec = DatasetSpec::default();
        let jobs = spec.jobs();
        assert_eq!(jobs.len(), spec.total_samples());
        assert_eq!(jobs, spec.jobs());
        let mut seeds: Vec<u64> = jobs.iter().map(|j| j.seed).collect();
        seeds.sort_unstable();
        seeds.dedup();
        assert_eq!(seeds.len(), jobs.len());
    }

    fn fake(counts: &[(&[LoadClass], usize)]) -> Dataset {
        let mut samples = Vec::new();
        for (labels, n) in counts {
            for _ in 0..*n {
                samples.push(Sample::new(
                    MeasurementMatrices::zeros(2, 2),
                    LabelSet::new(labels).unwrap(),
                ));
            }
        }
        Dataset { samples }
    }

    #[test]
    fn split_partitions_each_combo() {
        let ds = fake(&[(&[Fan], 100), (&[Fan, Usb], 100)]);
        let (tr, te) = split_indices(&ds, &SplitPolicy::uniform(70, 30), 5).unwrap();
        assert_eq!((tr.len(), te.len()), (140, 60));
        let mut all: Vec<usize> = tr.iter().chain(&te).copied().collect();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), 200);
        assert_eq!(split_indices(&ds, &SplitPolicy::uniform(70, 30), 5).unwrap().0, tr);
        assert_ne!(split_indices(&ds, &SplitPolicy::uniform(70, 30), 6).unwrap().0, tr);

        let (tr, te) = split_indices(&ds, &SplitPolicy::uniform(0, 30), 5).unwrap();
        assert!(tr.is_empty());
        assert_eq!(te.len(), 60);
    }

    #[test]
    fn scarce_multi_split_sizes() {
        let ds = fake(&[(&[Fan], 250), (&[Usb], 250), (&[Fan, Usb], 100), (&[Fan, Usb, Laptop], 100)]);
        let (tr, te) = split(&ds, &SplitPolicy::scarce_multi(160, 10), 1).unwrap();
        assert_eq!(tr.len(), 2 * 160 + 2 * 10);
        assert_eq!(te.len(), 2 * 90 + 2 * 90);
    }

    #[test]
    fn split_reports_short_combo() {
        let ds = fake(&[(&[Fan], 100), (&[Fan, Usb], 20)]);
        assert_eq!(
            split_indices(&ds, &SplitPolicy::uniform(70, 30), 0),
            Err(DatasetError::InsufficientSamples {
                combo_id: "USB+fan".into(),
                available: 20,
                required: 100
            })
        );
    }
}
