//! Flat TOML run configuration. Every key is optional and falls back to the
//! published defaults, so an empty file is the canonical configuration.
//! Unknown keys are a hard error; a silently ignored typo like `lamda_str`
//! would be a reproducibility hazard, not a convenience.

use std::path::Path;

use serde::Deserialize;
use thiserror::Error;

use crate::training::{Profile, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config parse error: {0}")]
    ParseError(String),
    #[error("unknown config key `{0}`")]
    UnknownKey(String),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}

/// The loss weights live at the top level so the whole file stays flat.
#[derive(Debug, Default, Deserialize)]
#[serde(deny_unknown_fields)]
struct PartialConfig {
    epochs_const: Option<usize>,
    epochs_decay: Option<usize>,
    lr0: Option<f64>,
    beta1: Option<f64>,
    beta2: Option<f64>,
    batch_size: Option<usize>,
    lambda_fm: Option<f64>,
    lambda_rec: Option<f64>,
    lambda_str: Option<f64>,
    seed: Option<u64>,
    profile: Option<Profile>,
    checkpoint_every: Option<usize>,
}

const KNOWN_KEYS: [&str; 12] = [
    "epochs_const",
    "epochs_decay",
    "lr0",
    "beta1",
    "beta2",
    "batch_size",
    "lambda_fm",
    "lambda_rec",
    "lambda_str",
    "seed",
    "profile",
    "checkpoint_every",
];

/// Parses a flat TOML document into a full config, filling absent keys with
/// the defaults.
pub fn parse_config(text: &str) -> Result<TrainConfig, ConfigError> {
    let table: toml::Table = text
        .parse()
        .map_err(|e: toml::de::Error| ConfigError::ParseError(e.to_string()))?;
    for key in table.keys() {
        if !KNOWN_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey(key.clone()));
        }
    }
    let partial: PartialConfig = toml::Value::Table(table)
        .try_into()
        .map_err(|e: toml::de::Error| ConfigError::ParseError(e.to_string()))?;

    let mut cfg = TrainConfig::default();
    if let Some(v) = partial.epochs_const {
        cfg.epochs_const = v;
    }
    if let Some(v) = partial.epochs_decay {
        cfg.epochs_decay = v;
    }
    if let Some(v) = partial.lr0 {
        cfg.lr0 = v;
    }
    if let Some(v) = partial.beta1 {
        cfg.beta1 = v;
    }
    if let Some(v) = partial.beta2 {
        cfg.beta2 = v;
    }
    if let Some(v) = partial.batch_size {
        cfg.batch_size = v;
    }
    if let Some(v) = partial.lambda_fm {
        cfg.weights.lambda_fm = v;
    }
    if let Some(v) = partial.lambda_rec {
        cfg.weights.lambda_rec = v;
    }
    if let Some(v) = partial.lambda_str {
        cfg.weights.lambda_str = v;
    }
    if let Some(v) = partial.seed {
        cfg.seed = v;
    }
    if let Some(v) = partial.profile {
        cfg.profile = v;
    }
    if let Some(v) = partial.checkpoint_every {
        cfg.checkpoint_every = v;
    }
    Ok(cfg)
}

pub fn load_config(path: &Path) -> Result<TrainConfig, ConfigError> {
    parse_config(&std::fs::read_to_string(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::io::Write;

    #[test]
    fn empty_file_yields_the_full_default_config() {
        let cfg = parse_config("").unwrap();
        assert_eq!(cfg, TrainConfig::default());
        assert_eq!(cfg.weights.lambda_fm, 100.0);
        assert_eq!(cfg.weights.lambda_rec, 10.0);
        assert_eq!(cfg.weights.lambda_str, 0.002);
        assert_eq!(cfg.lr0, 2e-4);
        assert_eq!((cfg.epochs_const, cfg.epochs_decay), (100, 100));
        assert_eq!(cfg.batch_size, 1);
    }

    #[test]
    fn single_key_override_produces_the_no_stroke_variant() {
        let cfg = parse_config("lambda_str = 0.0\n").unwrap();
        let mut expect = TrainConfig::default();
        expect.weights.lambda_str = 0.0;
        assert_eq!(cfg, expect);
    }

    #[test]
    fn typo_keys_are_rejected_by_name() {
        match parse_config("lamda_str = 0.0\n") {
            Err(ConfigError::UnknownKey(k)) => assert_eq!(k, "lamda_str"),
            other => panic!("expected UnknownKey, got {other:?}"),
        }
    }

    #[test]
    fn syntax_and_type_errors_are_parse_errors() {
        assert!(matches!(
            parse_config("lr0 = = 3"),
            Err(ConfigError::ParseError(_))
        ));
        assert!(matches!(
            parse_config("batch_size = \"one\""),
            Err(ConfigError::ParseError(_))
        ));
        assert!(matches!(
            parse_config("seed = -4"),
            Err(ConfigError::ParseError(_))
        ));
        assert!(matches!(
            parse_config("profile = \"huge\""),
            Err(ConfigError::ParseError(_))
        ));
    }

    #[test]
    fn profiles_parse_under_their_documented_names() {
        assert_eq!(
            parse_config("profile = \"toy_64\"").unwrap().profile,
            Profile::Toy64
        );
        assert_eq!(
            parse_config("profile = \"paper_512\"").unwrap().profile,
            Profile::Paper512
        );
    }

    #[test]
    fn load_reads_files_and_reports_missing_ones() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.toml");
        let mut f = std::fs::File::create(&path).unwrap();
        writeln!(f, "seed = 9\nepochs_const = 2\nepochs_decay = 1").unwrap();
        let cfg = load_config(&path).unwrap();
        assert_eq!(cfg.seed, 9);
        assert_eq!(cfg.total_epochs(), 3);
        assert!(matches!(
            load_config(&dir.path().join("absent.toml")),
            Err(ConfigError::Io(_))
        ));
    }
}
