//! JSON model checkpoints: the network configuration, the flat parameter
//! array and the fitted input scaling.

use std::path::Path;

use plugid_core::net::{InputScaling, NetConfig, NetParams};
use serde::{Deserialize, Serialize};

pub const FORMAT: &str = "plugid-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, thiserror::Error)]
pub enum CheckpointError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("{path}: checkpoint version {found}, expected {expected}")]
    VersionMismatch {
        path: String,
        found: u32,
        expected: u32,
    },
    #[error("{path}: parameters do not fit the stored config: {source}")]
    Shape {
        path: String,
        source: plugid_core::net::NetError,
    },
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct File {
    format: String,
    version: u32,
    config: NetConfig,
    values: Vec<f64>,
    #[serde(default)]
    input_scaling: Option<InputScaling>,
}

pub fn to_json(p: &NetParams) -> String {
    let f = File {
        format: FORMAT.into(),
        version: VERSION,
        config: p.config.clone(),
        values: p.values.clone(),
        input_scaling: p.input_scaling.clone(),
    };
    serde_json::to_string(&f).expect("checkpoint serializes")
}

pub fn from_json(text: &str, origin: &str) -> Result<NetParams, CheckpointError> {
    let parse = |message: String| CheckpointError::Parse {
        path: origin.into(),
        message,
    };
    let f: File = serde_json::from_str(text).map_err(|e| parse(e.to_string()))?;
    if f.format != FORMAT {
        return Err(parse(format!("format {:?} is not {FORMAT:?}", f.format)));
    }
    if f.version != VERSION {
        return Err(CheckpointError::VersionMismatch {
            path: origin.into(),
            found: f.version,
            expected: VERSION,
        });
    }
    let shape = |source| CheckpointError::Shape {
        path: origin.into(),
        source,
    };
    NetParams::from_values(f.config, f.values)
        .and_then(|p| p.with_input_scaling(f.input_scaling))
        .map_err(shape)
}

pub fn save(p: &NetParams, path: &Path) -> Result<(), CheckpointError> {
    std::fs::write(path, to_json(p)).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load(path: &Path) -> Result<NetParams, CheckpointError> {
    let text = std::fs::read_to_string(path).map_err(|source| CheckpointError::Io {
        path: path.display().to_string(),
        source,
    })?;
    from_json(&text, &path.display().to_string())
}

#[cfg(test)]
mod tests {
    use super::*;
    use plugid_core::net::init;

    fn small() -> NetConfig {
        NetConfig {
            fc1_width: 6,
            fc2_width: 5,
            ..NetConfig::default()
        }
    }

    #[test]
    fn round_trip_is_exact() {
        let cfg = small();
        let len = cfg.input_len();
        let p = init(&cfg)
            .unwrap()
            .with_input_scaling(Some(InputScaling {
                offset: (0..len).map(|i| i as f64 / 3.0).collect(),
                gain: vec![0.7; len],
            }))
            .unwrap();
        assert_eq!(from_json(&to_json(&p), "mem").unwrap(), p);
    }

    #[test]
    fn shape_disagreement_is_rejected() {
        let p = init(&small()).unwrap();
        let mut v: serde_json::Value = serde_json::from_str(&to_json(&p)).unwrap();
        v["config"]["fc1_width"] = 7.into();
        assert!(matches!(
            from_json(&v.to_string(), "mem"),
            Err(CheckpointError::Shape { .. })
        ));
    }

    #[test]
    fn version_is_checked() {
        let p = init(&small()).unwrap();
        let text = to_json(&p).replacen("\"version\":1", "\"version\":9", 1);
        assert!(matches!(
            from_json(&text, "mem"),
            Err(CheckpointError::VersionMismatch { found: 9, .. })
        ));
    }
}
