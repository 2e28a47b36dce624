//! The `plugid` command line.
//!
//! Settings come from the built-in defaults, then the config file, then
//! flags; later sources win. Exit codes: 0 success, 1 configuration or usage
//! error, 2 simulation or training failure, 3 I/O or file-format error,
//! 4 a dataset too small for the requested experiment.

use std::ffi::OsString;
use std::io::Write;
use std::path::{Path, PathBuf};

use clap::{CommandFactory, Parser, Subcommand, ValueEnum};
use plugid_core::eval::{EvalError, Prepared};
use plugid_core::probe::MATRIX_COLS;
use plugid_core::{Dataset, DatasetError};
use serde_json::{json, Value};

use crate::config::{ConfigError, ToolkitConfig};
use crate::export;
use crate::records::{self, RecordError};
use crate::runner::Runner;

pub const DATASET_FILE: &str = "dataset.jsonl";
pub const MANIFEST_FILE: &str = "manifest.json";
pub const SUMMARY_FILE: &str = "summary.json";
pub const REPORT_FILE: &str = "report.csv";

#[derive(Debug, Parser)]
#[command(name = "plugid", version, about = "Smart-plug load identification simulator and classifier")]
pub struct Cli {
    /// TOML config file; built-in defaults apply when omitted.
    #[arg(long, global = true, env = "PLUGID_CONFIG", value_name = "PATH")]
    pub config: Option<PathBuf>,
    /// Master seed, overriding `master_seed` from the config.
    #[arg(long, global = true)]
    pub seed: Option<u64>,
    /// Worker threads; 0 uses every available core. Results do not depend on it.
    #[arg(long, global = true, default_value_t = 0)]
    pub jobs: usize,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate a dataset into a run directory.
    Gen {
        /// Run directory; receives dataset.jsonl and manifest.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Run an experiment on a dataset.
    Exp {
        /// Experiment protocol.
        name: Experiment,
        /// Dataset file written by `gen`.
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Number of runs (per omitted combination for e3), overriding the config.
        #[arg(long)]
        runs: Option<usize>,
        /// Run directory; receives CSV reports, grids, summary.json and manifest.json.
        #[arg(long, value_name = "DIR")]
        out: PathBuf,
    },
    /// Print one sample's combination and real-power matrix as CSV.
    Inspect {
        /// Dataset file written by `gen`.
        #[arg(long, value_name = "PATH")]
        dataset: PathBuf,
        /// Zero-based sample index.
        #[arg(long)]
        index: usize,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Experiment {
    /// Uniform per-combination split.
    E1,
    /// Scarce multi-load training data.
    E2,
    /// Leave one multi-load combination out.
    E3,
    /// Single-label model tested on multi-load samples.
    Mot,
}

impl Experiment {
    fn name(self) -> &'static str {
        match self {
            Experiment::E1 => "e1",
            Experiment::E2 => "e2",
            Experiment::E3 => "e3",
            Experiment::Mot => "mot",
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Usage(String),
    #[error("simulation failed: {0}")]
    Simulation(DatasetError),
    #[error("experiment failed: {0}")]
    Experiment(EvalError),
    #[error("insufficient samples: {0}")]
    Insufficient(String),
    #[error(transparent)]
    Records(#[from] RecordError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Usage(_) => 1,
            CliError::Simulation(_) | CliError::Experiment(_) => 2,
            CliError::Records(_) | CliError::Io { .. } => 3,
            CliError::Insufficient(_) => 4,
        }
    }
}

impl From<EvalError> for CliError {
    fn from(e: EvalError) -> Self {
        match e {
            EvalError::Dataset(DatasetError::InsufficientSamples { .. })
            | EvalError::EmptyTrainingSet
            | EvalError::EmptyTestSet
            | EvalError::NoMultiLoadCombos => CliError::Insufficient(e.to_string()),
            EvalError::UnknownCombo(_) => CliError::Usage(e.to_string()),
            e => CliError::Experiment(e),
        }
    }
}

fn io(path: &Path) -> impl Fn(std::io::Error) -> CliError + '_ {
    move |source| CliError::Io {
        path: path.display().to_string(),
        source,
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code. Diagnostics go to stderr.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            if !e.use_stderr() {
                return 0;
            }
            if !e.to_string().contains("Usage:") {
                eprintln!("\n{}", Cli::command().render_usage());
            }
            return 1;
        }
    };
    match run(&cli, &mut std::io::stdout().lock()) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

pub fn load_config(cli: &Cli) -> Result<ToolkitConfig, CliError> {
    let cfg = match &cli.config {
        Some(p) => ToolkitConfig::load(p)?,
        None => ToolkitConfig::default(),
    };
    Ok(match cli.seed {
        Some(s) => cfg.with_seed(s),
        None => cfg,
    })
}

pub fn run(cli: &Cli, out: &mut dyn Write) -> Result<(), CliError> {
    let cfg = load_config(cli)?;
    let stdout = |r: std::io::Result<()>| r.map_err(io(Path::new("<stdout>")));
    match &cli.command {
        Command::Gen { out: dir } => {
            let ds = Runner::new(cli.jobs)
                .generate(&cfg.dataset_spec(), &cfg.catalog, &cfg.supply, &cfg.schedule)
                .map_err(CliError::Simulation)?;
            std::fs::create_dir_all(dir).map_err(io(dir))?;
            records::save(&ds, &dir.join(DATASET_FILE))?;
            let counts = counts(&ds);
            write_manifest(dir, cli, &cfg, "gen", json!({ "combos": counts }))?;
            for (k, n) in counts.as_object().into_iter().flatten() {
                stdout(writeln!(out, "{k}\t{n}"))?;
            }
            stdout(writeln!(out, "total\t{}", ds.len()))?;
        }
        Command::Exp {
            name,
            dataset,
            runs,
            out: dir,
        } => {
            let summary = experiment(cli, &cfg, *name, dataset, *runs, dir)?;
            let text = serde_json::to_string_pretty(&summary).expect("json value serializes");
            stdout(writeln!(out, "{text}"))?;
        }
        Command::Inspect { dataset, index } => {
            let ds = records::load(dataset)?;
            let s = ds.samples.get(*index).ok_or_else(|| {
                CliError::Usage(format!(
                    "index {index} out of range: dataset has {} samples",
                    ds.len()
                ))
            })?;
            stdout(writeln!(out, "{}", s.combo_id))?;
            let p = &s.matrices.real_power;
            for r in 0..p.rows() {
                let row: Vec<String> = (0..MATRIX_COLS).map(|c| p.get(r, c).to_string()).collect();
                stdout(writeln!(out, "{}", row.join(",")))?;
            }
        }
    }
    Ok(())
}

fn counts(ds: &Dataset) -> Value {
    let m: serde_json::Map<String, Value> = ds
        .by_combo()
        .into_iter()
        .map(|(k, v)| (k, v.len().into()))
        .collect();
    Value::Object(m)
}

fn experiment(
    cli: &Cli,
    cfg: &ToolkitConfig,
    name: Experiment,
    dataset: &Path,
    runs: Option<usize>,
    dir: &Path,
) -> Result<Value, CliError> {
    let mut settings = cfg.experiment_settings();
    if let Some(n) = runs {
        if n == 0 {
            return Err(CliError::Usage("--runs must be positive".into()));
        }
        settings.runs = n;
        settings.omit_runs_per_combo = n;
    }
    let ds = records::load(dataset)?;
    let prepared = Prepared::new(&ds, cfg.feature_scale()?, cfg.net.clone(), settings)?;
    let runner = Runner::new(cli.jobs);
    let seed = cfg.master_seed;
    let mut files: Vec<(String, String)> = Vec::new();
    let summary = match name {
        Experiment::E1 | Experiment::E2 => {
            let r = if name == Experiment::E1 {
                runner.e1(&prepared)?
            } else {
                runner.e2(&prepared)?
            };
            files.push((REPORT_FILE.into(), export::eval_csv(&r)));
            for (metric, g) in export::eval_grids(&r) {
                files.push((format!("grid_{metric}.csv"), g));
            }
            export::eval_summary(name.name(), seed, &r)
        }
        Experiment::E3 => {
            let r = runner.e3(&prepared)?;
            files.push((REPORT_FILE.into(), export::omission_csv(&r)));
            for (metric, g) in export::omission_grids(&r) {
                files.push((format!("grid_{metric}.csv"), g));
            }
            export::omission_summary(seed, &r)
        }
        Experiment::Mot => {
            let r = runner.mot(&prepared)?;
            files.push((REPORT_FILE.into(), export::mot_csv(&r)));
            files.push(("grid_accuracy.csv".into(), export::mot_grid(&r)));
            export::mot_summary(seed, &r)
        }
    };
    std::fs::create_dir_all(dir).map_err(io(dir))?;
    for (f, text) in &files {
        let p = dir.join(f);
        export::write_text(&p, text).map_err(io(&p))?;
    }
    let p = dir.join(SUMMARY_FILE);
    export::write_json(&p, &summary).map_err(io(&p))?;
    write_manifest(
        dir,
        cli,
        cfg,
        name.name(),
        json!({
            "dataset": dataset.display().to_string(),
            "samples": ds.len(),
            "runs": prepared.settings.runs,
            "omit_runs_per_combo": prepared.settings.omit_runs_per_combo,
        }),
    )?;
    Ok(summary)
}

fn write_manifest(
    dir: &Path,
    cli: &Cli,
    cfg: &ToolkitConfig,
    command: &str,
    details: Value,
) -> Result<(), CliError> {
    let v = json!({
        "toolkit": env!("CARGO_PKG_NAME"),
        "version": env!("CARGO_PKG_VERSION"),
        "command": command,
        "config_path": cli.config.as_ref().map(|p| p.display().to_string()),
        "master_seed": cfg.master_seed,
        "config": cfg.to_toml(),
        "details": details,
    });
    let p = dir.join(MANIFEST_FILE);
    export::write_json(&p, &v).map_err(io(&p))
}
