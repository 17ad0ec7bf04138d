//! Flat JSON training/design configuration with desk-scale defaults.

use serde::{Deserialize, Serialize};
use std::path::Path;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config parse error: {0}")]
    Parse(#[from] serde_json::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
}

/// Every knob of the pipeline; serialized as flat JSON keys matching the
/// field names. Unknown keys are rejected to catch typos.
#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub data_seed: u64,
    pub surrogate_seed: u64,
    pub gan_seed: u64,
    pub sa_seed: u64,
    pub samples: usize,
    pub split: f64,
    pub surrogate_epochs: usize,
    pub surrogate_batch: usize,
    pub gan_steps: usize,
    pub gan_batch: usize,
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub lambda_l1: f64,
    pub gamma_penalty: f64,
    pub n_critic: usize,
    /// Design acceptance threshold on surrogate-predicted MAE.
    pub tau: f64,
    pub max_attempts: usize,
    pub sa_t0: f64,
    pub sa_alpha: f64,
    pub sa_moves_per_temp: usize,
    pub sa_t_min: f64,
    pub sa_max_moves: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            data_seed: 1,
            surrogate_seed: 2,
            gan_seed: 3,
            sa_seed: 4,
            samples: 5000,
            split: 0.9,
            surrogate_epochs: 30,
            surrogate_batch: 64,
            gan_steps: 2000,
            gan_batch: 64,
            lr: 2e-4,
            beta1: 0.5,
            beta2: 0.999,
            lambda_l1: 1.0,
            gamma_penalty: 10.0,
            n_critic: 6,
            tau: 0.1,
            max_attempts: 64,
            sa_t0: 1.0,
            sa_alpha: 0.95,
            sa_moves_per_temp: 50,
            sa_t_min: 1e-3,
            sa_max_moves: 5000,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |msg: &str| Err(ConfigError::Invalid(msg.to_string()));
        if !(self.split > 0.0 && self.split < 1.0) {
            return bad("split must lie strictly between 0 and 1");
        }
        for (name, v) in [
            ("samples", self.samples),
            ("surrogate_epochs", self.surrogate_epochs),
            ("surrogate_batch", self.surrogate_batch),
            ("gan_steps", self.gan_steps),
            ("gan_batch", self.gan_batch),
            ("n_critic", self.n_critic),
            ("max_attempts", self.max_attempts),
            ("sa_moves_per_temp", self.sa_moves_per_temp),
            ("sa_max_moves", self.sa_max_moves),
        ] {
            if v == 0 {
                return bad(&format!("{name} must be positive"));
            }
        }
        if self.lr <= 0.0 || self.sa_t0 <= 0.0 || self.sa_t_min <= 0.0 {
            return bad("lr and SA temperatures must be positive");
        }
        if !(self.sa_alpha > 0.0 && self.sa_alpha < 1.0) {
            return bad("sa_alpha must lie strictly between 0 and 1");
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self, ConfigError> {
        let wrap = |source| ConfigError::Io { path: path.display().to_string(), source };
        let text = std::fs::read_to_string(path).map_err(wrap)?;
        let cfg: TrainConfig = serde_json::from_str(&text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn save(&self, path: &Path) -> Result<(), ConfigError> {
        let wrap = |source| ConfigError::Io { path: path.display().to_string(), source };
        let text = serde_json::to_string_pretty(self).expect("config serializes");
        std::fs::write(path, text).map_err(wrap)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_validate() {
        TrainConfig::default().validate().unwrap();
    }

    #[test]
    fn partial_json_overrides_defaults() {
        let cfg: TrainConfig = serde_json::from_str(r#"{"samples": 100, "lr": 1e-3}"#).unwrap();
        assert_eq!(cfg.samples, 100);
        assert_eq!(cfg.lr, 1e-3);
        assert_eq!(cfg.split, 0.9);
    }

    #[test]
    fn unknown_keys_rejected() {
        let err = serde_json::from_str::<TrainConfig>(r#"{"sample": 100}"#);
        assert!(err.is_err());
    }

    #[test]
    fn invalid_values_rejected() {
        let mut cfg = TrainConfig::default();
        cfg.split = 1.5;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.gan_steps = 0;
        assert!(cfg.validate().is_err());
        let mut cfg = TrainConfig::default();
        cfg.sa_alpha = 1.0;
        assert!(cfg.validate().is_err());
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("cfg.json");
        let mut cfg = TrainConfig::default();
        cfg.gan_steps = 123;
        cfg.save(&path).unwrap();
        let back = TrainConfig::load(&path).unwrap();
        assert_eq!(back.gan_steps, 123);
        assert!(matches!(
            TrainConfig::load(&dir.path().join("missing.json")),
            Err(ConfigError::Io { .. })
        ));
    }
}
