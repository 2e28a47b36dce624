//! CSV tables, class grids and JSON summaries for experiment reports.
//!
//! Values are written with six decimals. Grids are square over the load
//! classes: the diagonal holds the single-load result, the upper triangle
//! the two-load combination of the row and column classes, and every other
//! or unmeasured cell is blank.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::Path;

use plugid_core::eval::{EvalReport, MotReport, OmissionReport};
use plugid_core::{LabelSet, LoadClass};
use serde_json::{json, Value};

fn num(v: f64) -> String {
    format!("{v:.6}")
}

/// Renders a class grid. `cell` receives a combination key.
pub fn grid(cell: impl Fn(&str) -> Option<f64>) -> String {
    let mut out = String::from("class");
    for c in LoadClass::ALL {
        out.push(',');
        out.push_str(c.label());
    }
    out.push('\n');
    for (i, row) in LoadClass::ALL.iter().enumerate() {
        out.push_str(row.label());
        for (j, col) in LoadClass::ALL.iter().enumerate() {
            out.push(',');
            if j < i {
                continue;
            }
            let key = if i == j {
                LabelSet::single(*row).combo_id()
            } else {
                LabelSet::new(&[*row, *col]).expect("distinct pair").combo_id()
            };
            if let Some(v) = cell(&key) {
                out.push_str(&num(v));
            }
        }
        out.push('\n');
    }
    out
}

pub const EVAL_HEADER: &str = "combo_id,loads,class_detection_acc,count_acc,strict_acc,samples";

/// One row per combination, then `@average` and `@worst` rows.
pub fn eval_csv(r: &EvalReport) -> String {
    let mut out = format!("{EVAL_HEADER}\n");
    for (k, c) in &r.per_combo {
        let loads = k.split('+').count();
        let _ = writeln!(
            out,
            "{k},{loads},{},{},{},{}",
            num(c.class_detection_acc),
            num(c.count_acc),
            num(c.strict_acc),
            c.samples
        );
    }
    if !r.per_combo.is_empty() {
        let a = &r.aggregate;
        let total: usize = r.per_combo.values().map(|c| c.samples).sum();
        let _ = writeln!(
            out,
            "@average,,{},{},{},{total}",
            num(a.avg_class_detection),
            num(a.avg_count),
            num(a.avg_strict)
        );
        let _ = writeln!(
            out,
            "@worst,,{},,{},",
            num(a.worst_class_detection),
            num(a.worst_strict)
        );
    }
    out
}

/// The three accuracy grids of an E1 or E2 report, by metric name.
pub fn eval_grids(r: &EvalReport) -> Vec<(&'static str, String)> {
    let pick = |f: fn(&plugid_core::eval::ComboAccuracy) -> f64| {
        grid(|k| r.per_combo.get(k).map(f))
    };
    vec![
        ("class_detection", pick(|c| c.class_detection_acc)),
        ("count", pick(|c| c.count_acc)),
        ("strict", pick(|c| c.strict_acc)),
    ]
}

pub const OMISSION_HEADER: &str = "combo_id,loads,at_least_one_correct,all_n_correct,\
all_n_plus_count_correct,count_1,count_2,count_3,samples,top_sets";

/// One row per omitted combination plus an `@average` row. `top_sets`
/// lists `key:share` pairs separated by `|`, most frequent first.
pub fn omission_csv(r: &OmissionReport) -> String {
    let mut out = format!("{OMISSION_HEADER}\n");
    for (k, row) in &r.per_combo {
        let mut tops: Vec<(&String, &f64)> = row.top_set_distribution.iter().collect();
        tops.sort_by(|a, b| b.1.total_cmp(a.1).then(a.0.cmp(b.0)));
        let tops: Vec<String> = tops.iter().map(|(k, v)| format!("{k}:{}", num(**v))).collect();
        let _ = writeln!(
            out,
            "{k},{},{},{},{},{},{},{},{},{}",
            k.split('+').count(),
            num(row.at_least_one_correct),
            num(row.all_n_correct),
            num(row.all_n_plus_count_correct),
            num(row.count_distribution[0]),
            num(row.count_distribution[1]),
            num(row.count_distribution[2]),
            row.samples,
            tops.join("|")
        );
    }
    if !r.per_combo.is_empty() {
        let _ = writeln!(
            out,
            "@average,,{},{},{},,,,,",
            num(r.at_least_one_correct),
            num(r.all_n_correct),
            num(r.all_n_plus_count_correct)
        );
    }
    out
}

pub fn omission_grids(r: &OmissionReport) -> Vec<(&'static str, String)> {
    let pick = |f: fn(&plugid_core::eval::OmissionRow) -> f64| {
        grid(|k| r.per_combo.get(k).map(f))
    };
    vec![
        ("at_least_one", pick(|r| r.at_least_one_correct)),
        ("all_n", pick(|r| r.all_n_correct)),
        ("all_n_plus_count", pick(|r| r.all_n_plus_count_correct)),
    ]
}

pub const MOT_HEADER: &str = "combo_id,loads,accuracy";

/// Single-class rows, then multi-load rows, then `@single_average`,
/// `@multi_average` and `@multi_worst`.
pub fn mot_csv(r: &MotReport) -> String {
    let mut out = format!("{MOT_HEADER}\n");
    for (k, v) in r.single_per_class.iter().chain(&r.multi_per_combo) {
        let _ = writeln!(out, "{k},{},{}", k.split('+').count(), num(*v));
    }
    if !r.single_per_class.is_empty() {
        let _ = writeln!(out, "@single_average,1,{}", num(r.single_avg));
    }
    if !r.multi_per_combo.is_empty() {
        let _ = writeln!(out, "@multi_average,,{}", num(r.multi_avg));
        let _ = writeln!(out, "@multi_worst,,{}", num(r.multi_worst));
    }
    out
}

pub fn mot_grid(r: &MotReport) -> String {
    grid(|k| {
        r.single_per_class
            .get(k)
            .or_else(|| r.multi_per_combo.get(k))
            .copied()
    })
}

/// Summary of an E1 or E2 report.
pub fn eval_summary(experiment: &str, seed: u64, r: &EvalReport) -> Value {
    let a = &r.aggregate;
    json!({
        "experiment": experiment,
        "seed": seed,
        "runs": r.runs,
        "combos": r.per_combo.len(),
        "avg_class_detection": a.avg_class_detection,
        "worst_class_detection": a.worst_class_detection,
        "avg_count": a.avg_count,
        "avg_strict": a.avg_strict,
        "worst_strict": a.worst_strict,
        "invariants_hold": r.invariants_hold(),
    })
}

pub fn omission_summary(seed: u64, r: &OmissionReport) -> Value {
    json!({
        "experiment": "e3",
        "seed": seed,
        "runs_per_combo": r.runs_per_combo,
        "combos": r.per_combo.len(),
        "at_least_one_correct": r.at_least_one_correct,
        "all_n_correct": r.all_n_correct,
        "all_n_plus_count_correct": r.all_n_plus_count_correct,
        "invariants_hold": r.invariants_hold(),
    })
}

pub fn mot_summary(seed: u64, r: &MotReport) -> Value {
    json!({
        "experiment": "mot",
        "seed": seed,
        "runs": r.runs,
        "single_avg": r.single_avg,
        "multi_avg": r.multi_avg,
        "multi_worst": r.multi_worst,
    })
}

/// `(class_detection, count, strict, samples)` per combination.
pub type EvalRows = BTreeMap<String, (f64, f64, f64, usize)>;

/// Parses a file written by [`eval_csv`]; aggregate rows are skipped.
pub fn parse_eval_csv(text: &str) -> Result<EvalRows, String> {
    let mut lines = text.lines();
    if lines.next() != Some(EVAL_HEADER) {
        return Err("unexpected header".into());
    }
    let mut out = BTreeMap::new();
    for (i, l) in lines.enumerate() {
        if l.starts_with('@') {
            continue;
        }
        let f: Vec<&str> = l.split(',').collect();
        let bad = |what: &str| format!("line {}: {what}", i + 2);
        if f.len() != 6 {
            return Err(bad("expected 6 fields"));
        }
        let p = |s: &str| s.parse::<f64>().map_err(|e| bad(&e.to_string()));
        out.insert(
            f[0].to_string(),
            (
                p(f[2])?,
                p(f[3])?,
                p(f[4])?,
                f[5].parse().map_err(|_| bad("bad sample count"))?,
            ),
        );
    }
    Ok(out)
}

pub fn write_text(path: &Path, text: &str) -> std::io::Result<()> {
    std::fs::write(path, text)
}

pub fn write_json(path: &Path, v: &Value) -> std::io::Result<()> {
    let mut s = serde_json::to_string_pretty(v).expect("json value serializes");
    s.push('\n');
    std::fs::write(path, s)
}
