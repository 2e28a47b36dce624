//! The toolkit configuration file (TOML).
//!
//! Every table is optional and falls back to the built-in defaults; unknown
//! keys anywhere are rejected. The top-level `master_seed` seeds both dataset
//! generation and the experiments.

use std::path::Path;

use plugid_core::eval::ExperimentSettings;
use plugid_core::net::NetConfig;
use plugid_core::probe::max_nominal_apparent_power;
use plugid_core::{Catalog, DatasetSpec, DimmingSchedule, FeatureScale, LoadClass, SupplyConfig};
use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("cannot read config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}: {message}")]
    Parse { path: String, message: String },
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Divisors for the two classifier input channels. Unset values default to
/// the largest nominal apparent power in the catalog.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct FeatureConfig {
    pub real_power_scale: Option<f64>,
    pub apparent_power_scale: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ToolkitConfig {
    pub master_seed: u64,
    pub supply: SupplyConfig,
    pub schedule: DimmingSchedule,
    pub catalog: Catalog,
    pub dataset: DatasetSpec,
    pub features: FeatureConfig,
    pub net: NetConfig,
    pub experiments: ExperimentSettings,
}

impl ToolkitConfig {
    /// Parses TOML text. `origin` names the source in error messages.
    pub fn from_toml(text: &str, origin: &str) -> Result<Self, ConfigError> {
        let cfg: ToolkitConfig = toml::from_str(text).map_err(|e| ConfigError::Parse {
            path: origin.to_string(),
            message: e.to_string(),
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let text = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_toml(&text, &path.display().to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes to TOML")
    }

    /// Replaces the master seed (the `--seed` flag).
    pub fn with_seed(mut self, seed: u64) -> Self {
        self.master_seed = seed;
        self
    }

    /// Dataset spec carrying the master seed.
    pub fn dataset_spec(&self) -> DatasetSpec {
        DatasetSpec {
            master_seed: self.master_seed,
            ..self.dataset.clone()
        }
    }

    /// Experiment settings carrying the master seed.
    pub fn experiment_settings(&self) -> ExperimentSettings {
        ExperimentSettings {
            seed: self.master_seed,
            ..self.experiments.clone()
        }
    }

    pub fn feature_scale(&self) -> Result<FeatureScale, ConfigError> {
        let f = self.features;
        let default = match (f.real_power_scale, f.apparent_power_scale) {
            (Some(_), Some(_)) => 0.0,
            _ => max_nominal_apparent_power(&self.catalog, &self.supply)
                .map_err(|e| ConfigError::Invalid(format!("feature scale: {e}")))?,
        };
        Ok(FeatureScale {
            real_power: f.real_power_scale.unwrap_or(default),
            apparent_power: f.apparent_power_scale.unwrap_or(default),
        })
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |section: &str, e: &dyn std::fmt::Display| {
            ConfigError::Invalid(format!("[{section}] {e}"))
        };
        self.supply.validate().map_err(|e| bad("supply", &e))?;
        self.schedule.validate().map_err(|e| bad("schedule", &e))?;
        self.catalog.validate().map_err(|e| bad("catalog", &e))?;
        self.dataset.validate().map_err(|e| bad("dataset", &e))?;
        self.net.validate().map_err(|e| bad("net", &e))?;
        for (section, seed) in [
            ("dataset", self.dataset.master_seed),
            ("experiments", self.experiments.seed),
        ] {
            if seed != 0 && seed != self.master_seed {
                return Err(ConfigError::Invalid(format!(
                    "[{section}] seeds come from the top-level master_seed; remove the nested seed"
                )));
            }
        }
        if self.net.input_channels != 2 {
            return Err(bad("net", &"input_channels must be 2 (real and apparent power)"));
        }
        if self.net.input_rows != self.schedule.ratios.len()
            || self.net.input_cols != self.schedule.periods_per_ratio
        {
            return Err(bad(
                "net",
                &format_args!(
                    "input is {}x{} but the schedule produces {}x{} matrices",
                    self.net.input_rows,
                    self.net.input_cols,
                    self.schedule.ratios.len(),
                    self.schedule.periods_per_ratio
                ),
            ));
        }
        if self.net.classes != LoadClass::COUNT {
            return Err(bad("net", &format_args!("classes must be {}", LoadClass::COUNT)));
        }
        for (name, v) in [
            ("real_power_scale", self.features.real_power_scale),
            ("apparent_power_scale", self.features.apparent_power_scale),
        ] {
            if let Some(v) = v {
                if !(v > 0.0 && v.is_finite()) {
                    return Err(bad("features", &format_args!("{name} must be > 0")));
                }
            }
        }
        if self.experiments.runs == 0 || self.experiments.omit_runs_per_combo == 0 {
            return Err(bad("experiments", &"run counts must be positive"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_gives_defaults() {
        let cfg = ToolkitConfig::from_toml("", "inline").unwrap();
        assert_eq!(cfg, ToolkitConfig::default());
    }

    #[test]
    fn defaults_round_trip_through_toml() {
        let cfg = ToolkitConfig::default();
        let back = ToolkitConfig::from_toml(&cfg.to_toml(), "inline").unwrap();
        assert_eq!(back, cfg);
    }

    #[test]
    fn unknown_keys_are_rejected_with_location() {
        let err = ToolkitConfig::from_toml("[supply]\nmains_freq = 60\n", "inline").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("mains_freq"), "{msg}");
        assert!(msg.contains("line 2"), "{msg}");
    }

    #[test]
    fn invalid_values_are_rejected() {
        for text in [
            "[supply]\nsamples_per_period = 10\n",
            "[net]\nfc1_width = 0\n",
            "[schedule]\nratios = [0.5, 0.2]\n",
            "[features]\nreal_power_scale = -1.0\n",
            "[net]\ninput_rows = 10\n",
            "master_seed = 3\n[dataset]\nmaster_seed = 4\n",
        ] {
            assert!(
                matches!(
                    ToolkitConfig::from_toml(text, "inline"),
                    Err(ConfigError::Invalid(_))
                ),
                "{text}"
            );
        }
    }

    #[test]
    fn master_seed_reaches_dataset_and_experiments() {
        let cfg = ToolkitConfig::from_toml("master_seed = 7\n", "inline").unwrap();
        assert_eq!(cfg.dataset_spec().master_seed, 7);
        assert_eq!(cfg.experiment_settings().seed, 7);
        assert_eq!(cfg.with_seed(9).dataset_spec().master_seed, 9);
    }

    #[test]
    fn feature_scale_defaults_to_largest_apparent_power() {
        let cfg = ToolkitConfig::default();
        let s = cfg.feature_scale().unwrap();
        assert_eq!(s.real_power, s.apparent_power);
        assert!(s.real_power > 1000.0);
        let fixed = ToolkitConfig::from_toml(
            "[features]\nreal_power_scale = 2.0\napparent_power_scale = 3.0\n",
            "inline",
        )
        .unwrap();
        assert_eq!(fixed.feature_scale().unwrap(), FeatureScale { real_power: 2.0, apparent_power: 3.0 });
    }
}
