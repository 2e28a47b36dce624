//! Line-delimited JSON dataset files.
//!
//! The first line is a header naming the format and schema version. Every
//! following line holds one sample: version, combination key, labels and the
//! three matrices as flat row-major arrays.

use std::fs::File;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use plugid_core::probe::{Grid, MATRIX_COLS, MATRIX_ROWS};
use plugid_core::{Dataset, LabelSet, LoadClass, MeasurementMatrices, Sample};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "plugid-dataset";
pub const SCHEMA_VERSION: u32 = 1;

/// Slack allowed below zero in stored real-power cells, watts.
const POWER_EPS: f64 = 1e-6;

#[derive(Debug, thiserror::Error)]
pub enum RecordError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: schema version {found}, expected {expected}")]
    SchemaVersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}:{line}: corrupt record: {reason}")]
    CorruptRecord {
        path: String,
        line: usize,
        reason: String,
    },
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    format: String,
    version: u32,
    rows: usize,
    cols: usize,
    samples: usize,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct Record {
    version: u32,
    combo_id: String,
    labels: Vec<LoadClass>,
    v_rms: Vec<f64>,
    i_rms: Vec<f64>,
    real_power: Vec<f64>,
}

impl Record {
    fn from_sample(s: &Sample) -> Self {
        let m = &s.matrices;
        Record {
            version: SCHEMA_VERSION,
            combo_id: s.combo_id.clone(),
            labels: s.labels.classes().to_vec(),
            v_rms: m.v_rms.as_slice().to_vec(),
            i_rms: m.i_rms.as_slice().to_vec(),
            real_power: m.real_power.as_slice().to_vec(),
        }
    }

    fn into_sample(self) -> Result<Sample, String> {
        let labels = LabelSet::new(&self.labels).map_err(|e| e.to_string())?;
        if labels.combo_id() != self.combo_id {
            return Err(format!(
                "combo_id {} does not match labels {}",
                self.combo_id,
                labels.combo_id()
            ));
        }
        let grid = |name: &str, v: Vec<f64>| {
            let n = v.len();
            Grid::from_vec(MATRIX_ROWS, MATRIX_COLS, v)
                .ok_or_else(|| format!("{name} has {n} values, expected {}", MATRIX_ROWS * MATRIX_COLS))
        };
        let matrices = MeasurementMatrices {
            v_rms: grid("v_rms", self.v_rms)?,
            i_rms: grid("i_rms", self.i_rms)?,
            real_power: grid("real_power", self.real_power)?,
        };
        matrices
            .validate(MATRIX_ROWS, MATRIX_COLS, POWER_EPS)
            .map_err(|e| e.to_string())?;
        Ok(Sample::new(matrices, labels))
    }
}

fn io_err(path: &Path) -> impl Fn(std::io::Error) -> RecordError + '_ {
    move |source| RecordError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn write_dataset<W: Write>(ds: &Dataset, mut out: W) -> std::io::Result<()> {
    let header = Header {
        format: FORMAT.into(),
        version: SCHEMA_VERSION,
        rows: MATRIX_ROWS,
        cols: MATRIX_COLS,
        samples: ds.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for s in &ds.samples {
        serde_json::to_writer(&mut out, &Record::from_sample(s))?;
        out.write_all(b"\n")?;
    }
    out.flush()
}

pub fn save(ds: &Dataset, path: &Path) -> Result<(), RecordError> {
    let f = File::create(path).map_err(io_err(path))?;
    write_dataset(ds, BufWriter::new(f)).map_err(io_err(path))
}

/// Reads a dataset, validating every record. `origin` names the source in
/// error messages.
pub fn read_dataset<R: BufRead>(input: R, origin: &Path) -> Result<Dataset, RecordError> {
    let path = origin.display().to_string();
    let corrupt = |line: usize, reason: String| RecordError::CorruptRecord {
        path: path.clone(),
        line,
        reason,
    };
    let mut lines = input.lines();
    let header: Header = match lines.next() {
        None => return Err(corrupt(1, "missing header".into())),
        Some(l) => {
            let l = l.map_err(io_err(origin))?;
            serde_json::from_str(&l).map_err(|e| corrupt(1, format!("bad header: {e}")))?
        }
    };
    if header.format != FORMAT {
        return Err(corrupt(1, format!("format {:?} is not {FORMAT:?}", header.format)));
    }
    if header.version != SCHEMA_VERSION {
        return Err(RecordError::SchemaVersionMismatch {
            path,
            found: header.version,
            expected: SCHEMA_VERSION,
        });
    }
    if (header.rows, header.cols) != (MATRIX_ROWS, MATRIX_COLS) {
        return Err(corrupt(1, format!("matrices are {}x{}", header.rows, header.cols)));
    }
    let mut samples = Vec::with_capacity(header.samples);
    for (i, l) in lines.enumerate() {
        let line = i + 2;
        let l = l.map_err(io_err(origin))?;
        let rec: Record = serde_json::from_str(&l).map_err(|e| corrupt(line, e.to_string()))?;
        if rec.version != SCHEMA_VERSION {
            return Err(RecordError::SchemaVersionMismatch {
                path,
                found: rec.version,
                expected: SCHEMA_VERSION,
            });
        }
        samples.push(rec.into_sample().map_err(|r| corrupt(line, r))?);
    }
    if samples.len() != header.samples {
        return Err(corrupt(
            samples.len() + 2,
            format!("header promises {} samples, found {}", header.samples, samples.len()),
        ));
    }
    Ok(Dataset { samples })
}

pub fn load(path: &Path) -> Result<Dataset, RecordError> {
    let f = File::open(path).map_err(io_err(path))?;
    read_dataset(BufReader::new(f), path)
}
