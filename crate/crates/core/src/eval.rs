//! Accuracy metrics and the four experiment protocols.
//!
//! Every protocol is split into independent per-run functions and a
//! reduction that consumes run results in run order, so callers may execute
//! runs in any order or in parallel without changing the report.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;
use core::fmt;

use crate::dataset::{
    encode_target, split_indices, Dataset, DatasetError, LabelSet, Quota, SplitPolicy, MAX_LOADS,
};
use crate::net::{self, Example, Head, NetConfig, NetError, Prediction};
use crate::probe::{features, FeatureScale, ProbeError};
use crate::seed;

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    LengthMismatch { predictions: usize, truths: usize },
    EmptyInput,
    EmptyTestSet,
    EmptyTrainingSet,
    NoMultiLoadCombos,
    UnknownCombo(String),
    Dataset(DatasetError),
    Net(NetError),
    Features(ProbeError),
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::LengthMismatch {
                predictions,
                truths,
            } => write!(f, "{predictions} predictions for {truths} truths"),
            EvalError::EmptyInput => f.write_str("no predictions to score"),
            EvalError::EmptyTestSet => f.write_str("the split left no test samples"),
            EvalError::EmptyTrainingSet => f.write_str("the split left no training samples"),
            EvalError::NoMultiLoadCombos => f.write_str("dataset has no multi-load combinations"),
            EvalError::UnknownCombo(c) => write!(f, "combination {c} is not in the dataset"),
            EvalError::Dataset(e) => e.fmt(f),
            EvalError::Net(e) => e.fmt(f),
            EvalError::Features(e) => e.fmt(f),
        }
    }
}

impl core::error::Error for EvalError {}

impl From<DatasetError> for EvalError {
    fn from(e: DatasetError) -> Self {
        EvalError::Dataset(e)
    }
}

impl From<NetError> for EvalError {
    fn from(e: NetError) -> Self {
        EvalError::Net(e)
    }
}

impl From<ProbeError> for EvalError {
    fn from(e: ProbeError) -> Self {
        EvalError::Features(e)
    }
}

fn truth_indices(l: &LabelSet) -> Vec<usize> {
    l.classes().iter().map(|c| c.index()).collect()
}

/// The top-|truth| classes equal the truth set.
pub fn class_detected(p: &Prediction, truth: &LabelSet) -> bool {
    p.top(truth.len()) == truth_indices(truth)
}

/// Predicted count and predicted set are both right.
pub fn strictly_correct(p: &Prediction, truth: &LabelSet) -> bool {
    p.n_hat == truth.len() && p.top_set == truth_indices(truth)
}

fn fraction(
    preds: &[Prediction],
    truths: &[LabelSet],
    hit: impl Fn(&Prediction, &LabelSet) -> bool,
) -> Result<f64, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: preds.len(),
            truths: truths.len(),
        });
    }
    if preds.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    let n = preds.iter().zip(truths).filter(|(p, t)| hit(p, t)).count();
    Ok(n as f64 / preds.len() as f64)
}

/// Share of samples whose top-N classes, with N the true count, are exactly
/// the true set.
pub fn class_detection_accuracy(preds: &[Prediction], truths: &[LabelSet]) -> Result<f64, EvalError> {
    fraction(preds, truths, class_detected)
}

pub fn count_accuracy(preds: &[Prediction], truths: &[LabelSet]) -> Result<f64, EvalError> {
    fraction(preds, truths, |p, t| p.n_hat == t.len())
}

pub fn strict_accuracy(preds: &[Prediction], truths: &[LabelSet]) -> Result<f64, EvalError> {
    fraction(preds, truths, strictly_correct)
}

/// Hit counts for one combination.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Tally {
    pub samples: usize,
    pub class_detection: usize,
    pub count: usize,
    pub strict: usize,
}

impl Tally {
    fn add(&mut self, p: &Prediction, truth: &LabelSet) {
        self.samples += 1;
        self.class_detection += class_detected(p, truth) as usize;
        self.count += (p.n_hat == truth.len()) as usize;
        self.strict += strictly_correct(p, truth) as usize;
    }

    fn merge(&mut self, o: &Tally) {
        self.samples += o.samples;
        self.class_detection += o.class_detection;
        self.count += o.count;
        self.strict += o.strict;
    }
}

/// Per-combination tallies of one run.
pub type RunScores = BTreeMap<String, Tally>;

pub fn tally(preds: &[Prediction], truths: &[LabelSet]) -> Result<RunScores, EvalError> {
    if preds.len() != truths.len() {
        return Err(EvalError::LengthMismatch {
            predictions: preds.len(),
            truths: truths.len(),
        });
    }
    let mut out = RunScores::new();
    for (p, t) in preds.iter().zip(truths) {
        out.entry(t.combo_id()).or_default().add(p, t);
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct ComboAccuracy {
    pub class_detection_acc: f64,
    pub count_acc: f64,
    pub strict_acc: f64,
    /// Test samples pooled over all runs.
    pub samples: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct Aggregate {
    pub avg_class_detection: f64,
    pub worst_class_detection: f64,
    pub avg_count: f64,
    pub avg_strict: f64,
    pub worst_strict: f64,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct EvalReport {
    pub per_combo: BTreeMap<String, ComboAccuracy>,
    /// Averages and minima taken over combinations.
    pub aggregate: Aggregate,
    pub runs: usize,
}

impl EvalReport {
    /// Pools run tallies in run order.
    pub fn from_runs(runs: &[RunScores]) -> Self {
        let mut pooled: BTreeMap<String, Tally> = BTreeMap::new();
        for r in runs {
            for (k, t) in r {
                pooled.entry(k.clone()).or_default().merge(t);
            }
        }
        let per_combo: BTreeMap<String, ComboAccuracy> = pooled
            .into_iter()
            .filter(|(_, t)| t.samples > 0)
            .map(|(k, t)| {
                let n = t.samples as f64;
                (
                    k,
                    ComboAccuracy {
                        class_detection_acc: t.class_detection as f64 / n,
                        count_acc: t.count as f64 / n,
                        strict_acc: t.strict as f64 / n,
                        samples: t.samples,
                    },
                )
            })
            .collect();
        let aggregate = aggregate(per_combo.values());
        EvalReport {
            per_combo,
            aggregate,
            runs: runs.len(),
        }
    }

    /// Accuracies lie in [0, 1] and strict never exceeds class detection or
    /// count accuracy, per combination and in aggregate.
    pub fn invariants_hold(&self) -> bool {
        let unit = |v: f64| (0.0..=1.0).contains(&v);
        let combos_ok = self.per_combo.values().all(|c| {
            unit(c.class_detection_acc)
                && unit(c.count_acc)
                && unit(c.strict_acc)
                && c.strict_acc <= c.class_detection_acc
                && c.strict_acc <= c.count_acc
        });
        let a = &self.aggregate;
        combos_ok
            && [
                a.avg_class_detection,
                a.worst_class_detection,
                a.avg_count,
                a.avg_strict,
                a.worst_strict,
            ]
            .into_iter()
            .all(unit)
            && a.avg_strict <= a.avg_class_detection + 1e-12
            && a.avg_strict <= a.avg_count + 1e-12
            && a.worst_strict <= a.worst_class_detection
    }
}

fn aggregate<'a>(it: impl Iterator<Item = &'a ComboAccuracy> + Clone) -> Aggregate {
    let n = it.clone().count();
    if n == 0 {
        return Aggregate::default();
    }
    let mean = |f: fn(&ComboAccuracy) -> f64| it.clone().map(f).sum::<f64>() / n as f64;
    let min = |f: fn(&ComboAccuracy) -> f64| it.clone().map(f).fold(f64::INFINITY, f64::min);
    Aggregate {
        avg_class_detection: mean(|c| c.class_detection_acc),
        worst_class_detection: min(|c| c.class_detection_acc),
        avg_count: mean(|c| c.count_acc),
        avg_strict: mean(|c| c.strict_acc),
        worst_strict: min(|c| c.strict_acc),
    }
}

/// Protocol sizes and the shared network configuration.
#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
#[cfg_attr(feature = "serde", serde(default, deny_unknown_fields))]
pub struct ExperimentSettings {
    pub runs: usize,
    pub seed: u64,
    /// Per-combination train/test sizes for E1.
    pub e1_train: usize,
    pub e1_test: usize,
    /// Training samples per single-load class and per multi-load
    /// combination for E2; the rest is test data.
    pub e2_single_train: usize,
    pub e2_multi_train: usize,
    /// Training samples per remaining combination in leave-one-out runs.
    pub omit_train: usize,
    pub omit_runs_per_combo: usize,
    /// Restricts the omitted combinations; empty means every multi-load one.
    pub omit_combos: Vec<String>,
    /// Single-load train/test sizes for the single-label model.
    pub mot_train: usize,
    pub mot_test: usize,
}

impl Default for ExperimentSettings {
    fn default() -> Self {
        ExperimentSettings {
            runs: 10,
            seed: 0,
            e1_train: 70,
            e1_test: 30,
            e2_single_train: 160,
            e2_multi_train: 10,
            omit_train: 70,
            omit_runs_per_combo: 10,
            omit_combos: Vec::new(),
            mot_train: 220,
            mot_test: 30,
        }
    }
}

/// A dataset with its classifier inputs computed once.
#[derive(Debug, Clone)]
pub struct Prepared<'a> {
    pub dataset: &'a Dataset,
    pub inputs: Vec<Vec<f64>>,
    pub net: NetConfig,
    pub settings: ExperimentSettings,
}

impl<'a> Prepared<'a> {
    pub fn new(
        dataset: &'a Dataset,
        scale: FeatureScale,
        net: NetConfig,
        settings: ExperimentSettings,
    ) -> Result<Self, EvalError> {
        let inputs = dataset
            .samples
            .iter()
            .map(|s| Ok(features(&s.matrices, scale)?.as_slice().to_vec()))
            .collect::<Result<Vec<_>, ProbeError>>()?;
        Ok(Prepared {
            dataset,
            inputs,
            net,
            settings,
        })
    }

    fn examples(&self, idx: &[usize]) -> Result<Vec<Example>, EvalError> {
        idx.iter()
            .map(|&i| {
                Ok(Example {
                    input: self.inputs[i].clone(),
                    target: encode_target(
                        self.dataset.samples[i].labels.classes(),
                        self.net.classes,
                    )?,
                })
            })
            .collect()
    }

    fn train(&self, idx: &[usize], head: Head, run_seed: u64) -> Result<net::NetParams, EvalError> {
        if idx.is_empty() {
            return Err(EvalError::EmptyTrainingSet);
        }
        let cfg = NetConfig {
            head,
            init_seed: seed::derive(run_seed, "net", 0),
            ..self.net.clone()
        };
        let params = net::init(&cfg)?;
        let (params, _) = net::train(params, &self.examples(idx)?, &cfg)?;
        Ok(params)
    }

    fn predict(&self, p: &net::NetParams, idx: &[usize]) -> Result<Vec<Prediction>, EvalError> {
        Ok(net::forward_batch(p, idx.iter().map(|&i| self.inputs[i].as_slice()))?)
    }

    fn truths(&self, idx: &[usize]) -> Vec<LabelSet> {
        idx.iter()
            .map(|&i| self.dataset.samples[i].labels.clone())
            .collect()
    }

    fn run_seed(&self, tag: &str, run: usize) -> u64 {
        seed::derive(self.settings.seed, tag, run as u64)
    }

    fn split_run(&self, policy: &SplitPolicy, run_seed: u64) -> Result<RunScores, EvalError> {
        let (train, test) = split_indices(self.dataset, policy, run_seed)?;
        if test.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        let p = self.train(&train, Head::SplitSoftmax, run_seed)?;
        tally(&self.predict(&p, &test)?, &self.truths(&test))
    }

    /// One E1 run: uniform per-combination split, fresh model.
    pub fn e1_run(&self, run: usize) -> Result<RunScores, EvalError> {
        let s = &self.settings;
        self.split_run(&SplitPolicy::uniform(s.e1_train, s.e1_test), self.run_seed("e1", run))
    }

    /// One E2 run: plentiful single-load and scarce multi-load training data.
    pub fn e2_run(&self, run: usize) -> Result<RunScores, EvalError> {
        let s = &self.settings;
        self.split_run(
            &SplitPolicy::scarce_multi(s.e2_single_train, s.e2_multi_train),
            self.run_seed("e2", run),
        )
    }

    /// Multi-load combinations to leave out, in key order.
    pub fn omission_targets(&self) -> Result<Vec<String>, EvalError> {
        let by = self.dataset.by_combo();
        let multi: Vec<String> = by
            .iter()
            .filter(|(_, idx)| self.dataset.samples[idx[0]].labels.len() > 1)
            .map(|(k, _)| k.clone())
            .collect();
        if multi.is_empty() {
            return Err(EvalError::NoMultiLoadCombos);
        }
        if self.settings.omit_combos.is_empty() {
            return Ok(multi);
        }
        self.settings
            .omit_combos
            .iter()
            .map(|c| {
                let id = LabelSet::parse_combo_id(c)?.combo_id();
                if multi.contains(&id) {
                    Ok(id)
                } else {
                    Err(EvalError::UnknownCombo(c.clone()))
                }
            })
            .collect()
    }

    /// One leave-one-combination-out run: train without `combo`, predict
    /// every sample of `combo`.
    pub fn omit_run(&self, combo: &str, run: usize) -> Result<OmissionRun, EvalError> {
        let s = &self.settings;
        let run_seed = seed::derive(self.run_seed("omit", run), combo, 0);
        let mut by = self.dataset.by_combo();
        let test = by
            .remove(combo)
            .ok_or_else(|| EvalError::UnknownCombo(combo.into()))?;
        let rest: Vec<usize> = by.into_values().flatten().collect();
        let remaining = self.dataset.subset(&rest);
        let policy = SplitPolicy {
            single: Quota {
                train: s.omit_train,
                test: Some(0),
            },
            multi: Quota {
                train: s.omit_train,
                test: Some(0),
            },
        };
        let (train_local, _) = split_indices(&remaining, &policy, run_seed)?;
        let train: Vec<usize> = train_local.iter().map(|&i| rest[i]).collect();
        let p = self.train(&train, Head::SplitSoftmax, run_seed)?;
        let preds = self.predict(&p, &test)?;
        let truth = &self.dataset.samples[test[0]].labels;
        Ok(OmissionRun::score(&preds, truth))
    }

    /// One single-label run: train on single-load samples only, test on
    /// held-out singles and on every multi-load sample.
    pub fn mot_run(&self, run: usize) -> Result<MotRun, EvalError> {
        let s = &self.settings;
        let run_seed = self.run_seed("mot", run);
        let by = self.dataset.by_combo();
        let singles: Vec<usize> = by
            .values()
            .filter(|idx| self.dataset.samples[idx[0]].labels.len() == 1)
            .flatten()
            .copied()
            .collect();
        let multis: Vec<usize> = by
            .values()
            .filter(|idx| self.dataset.samples[idx[0]].labels.len() > 1)
            .flatten()
            .copied()
            .collect();
        let single_ds = self.dataset.subset(&singles);
        let (tr, te) = split_indices(
            &single_ds,
            &SplitPolicy::uniform(s.mot_train, s.mot_test),
            run_seed,
        )?;
        if te.is_empty() {
            return Err(EvalError::EmptyTestSet);
        }
        let train: Vec<usize> = tr.iter().map(|&i| singles[i]).collect();
        let test: Vec<usize> = te.iter().map(|&i| singles[i]).collect();
        let p = self.train(&train, Head::Plain, run_seed)?;
        Ok(MotRun::score(
            &self.predict(&p, &test)?,
            &self.truths(&test),
            &self.predict(&p, &multis)?,
            &self.truths(&multis),
        ))
    }

    fn e_runs(
        &self,
        f: impl Fn(&Self, usize) -> Result<RunScores, EvalError>,
    ) -> Result<EvalReport, EvalError> {
        let runs = (0..self.settings.runs)
            .map(|r| f(self, r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(EvalReport::from_runs(&runs))
    }

    pub fn experiment_e1(&self) -> Result<EvalReport, EvalError> {
        self.e_runs(Self::e1_run)
    }

    pub fn experiment_e2(&self) -> Result<EvalReport, EvalError> {
        self.e_runs(Self::e2_run)
    }

    pub fn experiment_e3_omit(&self) -> Result<OmissionReport, EvalError> {
        let mut out = Vec::new();
        for combo in self.omission_targets()? {
            let runs = (0..self.settings.omit_runs_per_combo)
                .map(|r| self.omit_run(&combo, r))
                .collect::<Result<Vec<_>, _>>()?;
            out.push((combo, runs));
        }
        Ok(OmissionReport::from_runs(out))
    }

    pub fn experiment_e_mot(&self) -> Result<MotReport, EvalError> {
        let runs = (0..self.settings.runs)
            .map(|r| self.mot_run(r))
            .collect::<Result<Vec<_>, _>>()?;
        Ok(MotReport::from_runs(&runs))
    }
}

/// Predictions for the samples of one omitted combination in one run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct OmissionRun {
    pub samples: usize,
    /// Top-N sets (N the true count) by combination key.
    pub top_sets: BTreeMap<String, usize>,
    /// Predicted load counts 1, 2, 3.
    pub counts: [usize; MAX_LOADS],
    pub at_least_one: usize,
    pub all_n: usize,
    pub all_n_and_count: usize,
}

impl OmissionRun {
    pub fn score(preds: &[Prediction], truth: &LabelSet) -> Self {
        let want = truth_indices(truth);
        let mut r = OmissionRun::default();
        for p in preds {
            let top = p.top(truth.len());
            let key: Vec<&str> = {
                let mut v: Vec<&str> = top
                    .iter()
                    .filter_map(|&i| crate::loads::LoadClass::from_index(i))
                    .map(|c| c.label())
                    .collect();
                v.sort_unstable();
                v
            };
            *r.top_sets.entry(key.join("+")).or_default() += 1;
            r.counts[p.n_hat - 1] += 1;
            r.samples += 1;
            let any = top.iter().any(|i| want.contains(i));
            let all = top == want;
            r.at_least_one += any as usize;
            r.all_n += all as usize;
            r.all_n_and_count += (all && p.n_hat == truth.len()) as usize;
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OmissionRow {
    /// Share of samples whose top-N set was each combination.
    pub top_set_distribution: BTreeMap<String, f64>,
    pub count_distribution: [f64; MAX_LOADS],
    pub at_least_one_correct: f64,
    pub all_n_correct: f64,
    pub all_n_plus_count_correct: f64,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct OmissionReport {
    pub per_combo: BTreeMap<String, OmissionRow>,
    /// Averages of the three hit rates over omitted combinations.
    pub at_least_one_correct: f64,
    pub all_n_correct: f64,
    pub all_n_plus_count_correct: f64,
    pub runs_per_combo: usize,
}

impl OmissionReport {
    pub fn from_runs(rows: Vec<(String, Vec<OmissionRun>)>) -> Self {
        let mut per_combo = BTreeMap::new();
        let mut runs_per_combo = 0;
        for (combo, runs) in rows {
            runs_per_combo = runs.len();
            let mut pooled = OmissionRun::default();
            for r in &runs {
                pooled.samples += r.samples;
                for (k, v) in &r.top_sets {
                    *pooled.top_sets.entry(k.clone()).or_default() += v;
                }
                for i in 0..MAX_LOADS {
                    pooled.counts[i] += r.counts[i];
                }
                pooled.at_least_one += r.at_least_one;
                pooled.all_n += r.all_n;
                pooled.all_n_and_count += r.all_n_and_count;
            }
            if pooled.samples == 0 {
                continue;
            }
            let n = pooled.samples as f64;
            per_combo.insert(
                combo,
                OmissionRow {
                    top_set_distribution: pooled
                        .top_sets
                        .into_iter()
                        .map(|(k, v)| (k, v as f64 / n))
                        .collect(),
                    count_distribution: pooled.counts.map(|c| c as f64 / n),
                    at_least_one_correct: pooled.at_least_one as f64 / n,
                    all_n_correct: pooled.all_n as f64 / n,
                    all_n_plus_count_correct: pooled.all_n_and_count as f64 / n,
                    samples: pooled.samples,
                },
            );
        }
        let m = per_combo.len().max(1) as f64;
        let avg = |f: fn(&OmissionRow) -> f64| per_combo.values().map(f).sum::<f64>() / m;
        OmissionReport {
            at_least_one_correct: avg(|r| r.at_least_one_correct),
            all_n_correct: avg(|r| r.all_n_correct),
            all_n_plus_count_correct: avg(|r| r.all_n_plus_count_correct),
            per_combo,
            runs_per_combo,
        }
    }

    /// `at_least_one >= all_n >= all_n_plus_count` per row and on average.
    pub fn invariants_hold(&self) -> bool {
        let chain = |a: f64, b: f64, c: f64| a >= b && b >= c && c >= 0.0 && a <= 1.0;
        self.per_combo.values().all(|r| {
            chain(r.at_least_one_correct, r.all_n_correct, r.all_n_plus_count_correct)
        }) && chain(
            self.at_least_one_correct,
            self.all_n_correct,
            self.all_n_plus_count_correct,
        )
    }
}

/// Tallies of one single-label run.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct MotRun {
    /// Top-1 hits and totals on held-out singles, per class.
    pub singles: BTreeMap<String, (usize, usize)>,
    /// Top-1-in-truth hits and totals on multi-load samples, per combination.
    pub multis: BTreeMap<String, (usize, usize)>,
}

impl MotRun {
    pub fn score(
        single_preds: &[Prediction],
        single_truths: &[LabelSet],
        multi_preds: &[Prediction],
        multi_truths: &[LabelSet],
    ) -> Self {
        let mut r = MotRun::default();
        for (dst, preds, truths) in [
            (&mut r.singles, single_preds, single_truths),
            (&mut r.multis, multi_preds, multi_truths),
        ] {
            for (p, t) in preds.iter().zip(truths) {
                let top1 = net::argmax(&p.class_probs);
                let hit = t.classes().iter().any(|c| c.index() == top1);
                let e = dst.entry(t.combo_id()).or_default();
                e.0 += hit as usize;
                e.1 += 1;
            }
        }
        r
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
#[cfg_attr(feature = "serde", derive(serde::Serialize, serde::Deserialize))]
pub struct MotReport {
    pub single_per_class: BTreeMap<String, f64>,
    pub multi_per_combo: BTreeMap<String, f64>,
    /// Means and minimum over classes or combinations.
    pub single_avg: f64,
    pub multi_avg: f64,
    pub multi_worst: f64,
    pub runs: usize,
}

impl MotReport {
    pub fn from_runs(runs: &[MotRun]) -> Self {
        let pool = |pick: fn(&MotRun) -> &BTreeMap<String, (usize, usize)>| {
            let mut m: BTreeMap<String, (usize, usize)> = BTreeMap::new();
            for r in runs {
                for (k, (h, n)) in pick(r) {
                    let e = m.entry(k.clone()).or_default();
                    e.0 += h;
                    e.1 += n;
                }
            }
            m.into_iter()
                .filter(|(_, (_, n))| *n > 0)
                .map(|(k, (h, n))| (k, h as f64 / n as f64))
                .collect::<BTreeMap<_, _>>()
        };
        let single_per_class = pool(|r| &r.singles);
        let multi_per_combo = pool(|r| &r.multis);
        let mean = |m: &BTreeMap<String, f64>| m.values().sum::<f64>() / m.len().max(1) as f64;
        MotReport {
            single_avg: mean(&single_per_class),
            multi_avg: mean(&multi_per_combo),
            multi_worst: multi_per_combo
                .values()
                .copied()
                .fold(f64::INFINITY, f64::min)
                .min(1.0),
            single_per_class,
            multi_per_combo,
            runs: runs.len(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::loads::LoadClass::{self, *};
    use alloc::vec;

    fn pred(class_probs: Vec<f64>, n_hat: usize) -> Prediction {
        let mut count_probs = [0.0; 3];
        count_probs[n_hat - 1] = 1.0;
        let top_set = net::top_n(&class_probs, n_hat);
        Prediction {
            class_probs,
            count_probs,
            n_hat,
            top_set,
        }
    }

    fn onto(labels: &[LoadClass], n_hat: usize) -> Prediction {
        let mut p = vec![0.0; 11];
        for c in labels {
            p[c.index()] = 1.0 / labels.len() as f64;
        }
        pred(p, n_hat)
    }

    fn ls(l: &[LoadClass]) -> LabelSet {
        LabelSet::new(l).unwrap()
    }

    #[test]
    fn perfect_predictor_scores_one() {
        let truths = vec![ls(&[Fan]), ls(&[Fan, Usb]), ls(&[Fan, Usb, Laptop])];
        let preds: Vec<_> = truths.iter().map(|t| onto(t.classes(), t.len())).collect();
        assert_eq!(class_detection_accuracy(&preds, &truths), Ok(1.0));
        assert_eq!(strict_accuracy(&preds, &truths), Ok(1.0));
        assert_eq!(count_accuracy(&preds, &truths), Ok(1.0));
    }

    #[test]
    fn wrong_count_is_not_strict() {
        let truths = vec![ls(&[Fan, Usb]); 4];
        let preds: Vec<_> = truths.iter().map(|t| onto(t.classes(), 1)).collect();
        assert_eq!(class_detection_accuracy(&preds, &truths), Ok(1.0));
        assert_eq!(strict_accuracy(&preds, &truths), Ok(0.0));
    }

    #[test]
    fn uniform_probabilities_hit_lowest_index_only() {
        // With equal probabilities the top-1 is class 0, so exactly one of
        // the eleven single-load truths is detected.
        let truths: Vec<_> = LoadClass::ALL.iter().map(|&c| LabelSet::single(c)).collect();
        let preds = vec![pred(vec![1.0 / 11.0; 11], 1); 11];
        let acc = class_detection_accuracy(&preds, &truths).unwrap();
        assert!((acc - 1.0 / 11.0).abs() < 1e-15);
    }

    #[test]
    fn metric_errors() {
        assert_eq!(
            strict_accuracy(&[], &[ls(&[Fan])]),
            Err(EvalError::LengthMismatch {
                predictions: 0,
                truths: 1
            })
        );
        assert_eq!(class_detection_accuracy(&[], &[]), Err(EvalError::EmptyInput));
    }

    #[test]
    fn report_pools_runs_and_keeps_invariants() {
        let t = vec![ls(&[Fan]), ls(&[Fan]), ls(&[Usb, Fan])];
        let run1 = tally(&[onto(&[Fan], 1), onto(&[Usb], 1), onto(&[Usb, Fan], 1)], &t).unwrap();
        let run2 = tally(&[onto(&[Fan], 1), onto(&[Fan], 2), onto(&[Usb, Fan], 2)], &t).unwrap();
        let rep = EvalReport::from_runs(&[run1, run2]);
        assert_eq!(rep.runs, 2);
        let fan = rep.per_combo["fan"];
        assert_eq!(fan.samples, 4);
        assert_eq!(fan.class_detection_acc, 0.75);
        assert_eq!(fan.strict_acc, 0.5);
        let pair = rep.per_combo["USB+fan"];
        assert_eq!((pair.class_detection_acc, pair.strict_acc), (1.0, 0.5));
        assert_eq!(rep.aggregate.avg_strict, 0.5);
        assert_eq!(rep.aggregate.worst_class_detection, 0.75);
        assert!(rep.invariants_hold());
        assert!(EvalReport::from_runs(&[]).invariants_hold());
    }

    #[test]
    fn omission_chain() {
        let truth = ls(&[Usb, Incandescents]);
        let mut big_only = vec![0.0; 11];
        big_only[Incandescents.index()] = 0.9;
        big_only[Laptop.index()] = 0.1;
        let preds = vec![
            pred(big_only, 1),
            onto(&[Usb, Incandescents], 2),
            onto(&[Usb, Incandescents], 1),
            onto(&[Fan, Laptop], 2),
        ];
        let run = OmissionRun::score(&preds, &truth);
        assert_eq!((run.at_least_one, run.all_n, run.all_n_and_count), (3, 2, 1));
        assert_eq!(run.counts, [2, 2, 0]);
        let rep = OmissionReport::from_runs(vec![("INCANDESCENTS+USB".into(), vec![run])]);
        assert!(rep.invariants_hold());
        let row = &rep.per_combo["INCANDESCENTS+USB"];
        assert_eq!(row.top_set_distribution["INCANDESCENTS+USB"], 0.5);
        assert_eq!(row.count_distribution, [0.5, 0.5, 0.0]);
    }

    #[test]
    fn mot_highest_power_oracle() {
        // A model that always names the hairdryer is right on exactly the
        // combinations containing it.
        let combos: Vec<LabelSet> = crate::dataset::all_pairs(&LoadClass::ALL);
        let preds: Vec<_> = combos.iter().map(|_| onto(&[Hairdryer], 1)).collect();
        let singles: Vec<LabelSet> = LoadClass::ALL.iter().map(|&c| LabelSet::single(c)).collect();
        let single_preds: Vec<_> = singles.iter().map(|t| onto(t.classes(), 1)).collect();
        let rep = MotReport::from_runs(&[MotRun::score(&single_preds, &singles, &preds, &combos)]);
        let expected = combos.iter().filter(|c| c.contains(Hairdryer)).count() as f64
            / combos.len() as f64;
        assert!((rep.multi_avg - expected).abs() < 1e-15);
        assert_eq!(rep.single_avg, 1.0);
        assert_eq!(rep.multi_worst, 0.0);
    }
}
