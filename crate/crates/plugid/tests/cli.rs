use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const TINY: &str = r#"
master_seed = 5

[dataset]
single_classes = ["fan", "USB", "hairdryer", "INCANDESCENTS"]
singles_per_class = 6
two_load_combos = [["fan", "hairdryer"], ["USB", "INCANDESCENTS"]]
samples_per_two_load = 6
three_load_combos = []
samples_per_three_load = 0

[net]
epochs = 2
fc1_width = 16
fc2_width = 8

[experiments]
runs = 2
e1_train = 4
e1_test = 2
e2_single_train = 4
e2_multi_train = 2
omit_train = 4
omit_runs_per_combo = 1
mot_train = 4
mot_test = 2
"#;

fn plugid(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_plugid"))
        .args(args)
        .env_remove("PLUGID_CONFIG")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

struct Fixture {
    _dir: tempfile::TempDir,
    root: PathBuf,
    config: String,
}

impl Fixture {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let root = dir.path().to_path_buf();
        let config = root.join("tiny.toml");
        std::fs::write(&config, TINY).unwrap();
        Fixture {
            config: config.display().to_string(),
            _dir: dir,
            root,
        }
    }

    fn path(&self, p: &str) -> String {
        self.root.join(p).display().to_string()
    }

    fn gen(&self, out: &str, extra: &[&str]) -> Output {
        let out = self.path(out);
        let mut args = vec!["--config", &self.config, "gen", "--out", &out];
        args.extend_from_slice(extra);
        plugid(&args)
    }
}

fn lines(p: &Path) -> usize {
    std::fs::read_to_string(p).unwrap().lines().count()
}

#[test]
fn gen_writes_expected_records_and_manifest() {
    let f = Fixture::new();
    let o = f.gen("run", &[]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let dir = f.root.join("run");
    assert_eq!(lines(&dir.join("dataset.jsonl")), 1 + 6 * 6);
    let manifest: serde_json::Value =
        serde_json::from_str(&std::fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap();
    assert_eq!(manifest["master_seed"], 5);
    assert_eq!(manifest["details"]["combos"]["fan+hairdryer"], 6);
    let stdout = String::from_utf8(o.stdout).unwrap();
    assert!(stdout.contains("INCANDESCENTS+USB\t6"), "{stdout}");
    assert!(stdout.contains("total\t36"), "{stdout}");
}

#[test]
fn gen_is_byte_identical_across_runs_and_jobs() {
    let f = Fixture::new();
    assert_eq!(code(&f.gen("a", &["--jobs", "1"])), 0);
    assert_eq!(code(&f.gen("b", &["--jobs", "3"])), 0);
    assert_eq!(code(&f.gen("c", &["--seed", "6"])), 0);
    let read = |d: &str| std::fs::read(f.root.join(d).join("dataset.jsonl")).unwrap();
    assert_eq!(read("a"), read("b"));
    assert_ne!(read("a"), read("c"));
}

#[test]
fn config_errors_exit_one_with_diagnostic() {
    let f = Fixture::new();
    let bad = f.path("bad.toml");
    std::fs::write(&bad, "master_seed = 1\n[net]\nepochz = 3\n").unwrap();
    let out = f.path("x");
    let o = plugid(&["--config", &bad, "gen", "--out", &out]);
    assert_eq!(code(&o), 1);
    let err = String::from_utf8(o.stderr).unwrap();
    assert!(err.contains("epochz") && err.contains("line 3"), "{err}");

    let o = plugid(&["--config", &f.path("missing.toml"), "gen", "--out", &out]);
    assert_eq!(code(&o), 1);
}

#[test]
fn config_path_comes_from_the_environment() {
    let f = Fixture::new();
    let out = f.path("env");
    let o = Command::new(env!("CARGO_BIN_EXE_plugid"))
        .args(["gen", "--out", &out])
        .env("PLUGID_CONFIG", &f.config)
        .output()
        .unwrap();
    assert_eq!(code(&o), 0);
    assert_eq!(lines(&f.root.join("env/dataset.jsonl")), 37);
}

#[test]
fn unwritable_output_exits_three() {
    let f = Fixture::new();
    let blocker = f.path("file");
    std::fs::write(&blocker, "").unwrap();
    let out = format!("{blocker}/sub");
    let o = plugid(&["--config", &f.config, "gen", "--out", &out]);
    assert_eq!(code(&o), 3);
}

#[test]
fn usage_errors_exit_one_and_help_exits_zero() {
    let o = plugid(&["exp", "e9", "--dataset", "x", "--out", "y"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("Usage"));
    assert_eq!(code(&plugid(&[])), 1);
    for sub in [&[][..], &["gen"], &["exp"], &["inspect"]] {
        let mut args = sub.to_vec();
        args.push("--help");
        let o = plugid(&args);
        assert_eq!(code(&o), 0);
        let help = String::from_utf8(o.stdout).unwrap();
        for flag in ["--config", "--seed", "--jobs"] {
            assert!(help.contains(flag), "{sub:?} help lacks {flag}");
        }
    }
    let help = String::from_utf8(plugid(&["exp", "--help"]).stdout).unwrap();
    for flag in ["--dataset", "--runs", "--out"] {
        assert!(help.contains(flag));
    }
}

#[test]
fn inspect_prints_real_power_matrix() {
    let f = Fixture::new();
    assert_eq!(code(&f.gen("run", &[])), 0);
    let ds = f.path("run/dataset.jsonl");
    let o = plugid(&["inspect", "--dataset", &ds, "--index", "0"]);
    assert_eq!(code(&o), 0);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut it = text.lines();
    assert_eq!(it.next(), Some("fan"));
    let rows: Vec<Vec<f64>> = it
        .map(|l| l.split(',').map(|v| v.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), 14);
    assert!(rows.iter().all(|r| r.len() == 20));

    // Incandescent singles follow the fan, USB and hairdryer singles.
    let o = plugid(&["inspect", "--dataset", &ds, "--index", "18"]);
    let text = String::from_utf8(o.stdout).unwrap();
    let mut it = text.lines();
    assert_eq!(it.next(), Some("INCANDESCENTS"));
    let means: Vec<f64> = it
        .map(|l| l.split(',').map(|v| v.parse::<f64>().unwrap()).sum::<f64>() / 20.0)
        .collect();
    assert!(means.windows(2).all(|w| w[1] < w[0]), "{means:?}");

    assert_eq!(code(&plugid(&["inspect", "--dataset", &ds, "--index", "36"])), 1);
    assert_eq!(code(&plugid(&["inspect", "--dataset", &f.path("nope"), "--index", "0"])), 3);
}

#[test]
fn experiments_write_reports_and_deterministic_summaries() {
    let f = Fixture::new();
    assert_eq!(code(&f.gen("run", &[])), 0);
    let ds = f.path("run/dataset.jsonl");
    for name in ["e1", "e2", "e3", "mot"] {
        let mut summaries = Vec::new();
        for jobs in ["1", "2"] {
            let out = f.path(&format!("{name}-{jobs}"));
            let o = plugid(&[
                "--config", &f.config, "--jobs", jobs, "exp", name, "--dataset", &ds, "--out", &out,
            ]);
            assert_eq!(code(&o), 0, "{name}: {}", String::from_utf8_lossy(&o.stderr));
            let dir = PathBuf::from(&out);
            assert!(dir.join("report.csv").exists());
            assert!(dir.join("manifest.json").exists());
            summaries.push(std::fs::read_to_string(dir.join("summary.json")).unwrap());
        }
        assert_eq!(summaries[0], summaries[1], "{name}");
        let v: serde_json::Value = serde_json::from_str(&summaries[0]).unwrap();
        if name == "e1" || name == "e2" {
            assert!(v["avg_strict"].is_number());
            assert_eq!(v["invariants_hold"], true);
        }
        if name == "e3" {
            assert_eq!(v["invariants_hold"], true);
            assert_eq!(v["combos"], 2);
        }
    }
    let grid = std::fs::read_to_string(f.root.join("mot-1/grid_accuracy.csv")).unwrap();
    assert_eq!(grid.lines().count(), 12);
}

#[test]
fn small_dataset_exits_four() {
    let f = Fixture::new();
    assert_eq!(code(&f.gen("run", &[])), 0);
    let ds = f.path("run/dataset.jsonl");
    let cfg = f.path("big.toml");
    std::fs::write(
        &cfg,
        TINY.replace("e1_train = 4", "e1_train = 40"),
    )
    .unwrap();
    let out = f.path("o");
    let o = plugid(&["--config", &cfg, "exp", "e1", "--dataset", &ds, "--out", &out]);
    assert_eq!(code(&o), 4, "{}", String::from_utf8_lossy(&o.stderr));
}

#[test]
fn corrupt_dataset_exits_three() {
    let f = Fixture::new();
    let ds = f.path("bad.jsonl");
    std::fs::write(&ds, "{\"format\":\"plugid-dataset\"}\n").unwrap();
    let out = f.path("o");
    assert_eq!(code(&plugid(&["exp", "e1", "--dataset", &ds, "--out", &out])), 3);
}
