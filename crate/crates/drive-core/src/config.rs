//! Layered application configuration.
//!
//! Resolution order: built-in defaults, then a flat dotted-key config file
//! (`similarity.tau = 0.93`), then command-line overrides. The resolved
//! semantic config (no filesystem paths) is hashed and echoed into a
//! sidecar next to every artifact, so outputs carry their provenance and
//! identical configs reproduce identical bytes.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hashutil::fnv1a64_hex;
use crate::loss::LossConfig;
use crate::similarity::SimilarityConfig;
use crate::synth::WorldConfig;
use crate::train::{LossMode, OptimizerKind, TrainConfig};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("config {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("config {path}:{line}: {message}")]
    Parse {
        path: String,
        line: usize,
        message: String,
    },
    #[error("invalid value for {field}: {message}")]
    Validation { field: String, message: String },
}

/// Annotation endpoint settings.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnnotationConfig {
    pub url: Option<String>,
    pub timeout_ms: u64,
    pub cache_path: Option<PathBuf>,
}

impl Default for AnnotationConfig {
    fn default() -> Self {
        Self {
            url: None,
            timeout_ms: 5000,
            cache_path: None,
        }
    }
}

/// Fully resolved application configuration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AppConfig {
    pub similarity: SimilarityConfig,
    pub loss: LossConfig,
    pub train: TrainConfig,
    pub world: WorldConfig,
    pub annotation: AnnotationConfig,
    pub log_level: String,
}

impl Default for AppConfig {
    fn default() -> Self {
        Self {
            similarity: SimilarityConfig::default(),
            loss: LossConfig::default(),
            train: TrainConfig::default(),
            world: WorldConfig::default(),
            annotation: AnnotationConfig::default(),
            log_level: "info".to_string(),
        }
    }
}

impl AppConfig {
    /// Apply one dotted-key assignment.
    pub fn set(&mut self, key: &str, value: &str) -> Result<(), ConfigError> {
        let invalid = |message: String| ConfigError::Validation {
            field: key.to_string(),
            message,
        };
        let parse_f64 = |v: &str| v.parse::<f64>().map_err(|e| invalid(e.to_string()));
        let parse_usize = |v: &str| v.parse::<usize>().map_err(|e| invalid(e.to_string()));
        let parse_u64 = |v: &str| v.parse::<u64>().map_err(|e| invalid(e.to_string()));
        let parse_bool = |v: &str| v.parse::<bool>().map_err(|e| invalid(e.to_string()));

        match key {
            "similarity.tau" => self.similarity.tau = parse_f64(value)?,
            "similarity.epsilon" => self.similarity.epsilon = parse_f64(value)?,
            "loss.scale" => self.loss.scale = parse_f64(value)?,
            "loss.delta_t" => self.loss.delta_t = parse_f64(value)?,
            "loss.delta_i" => self.loss.delta_i = parse_f64(value)?,
            "train.batch_size" => self.train.batch_size = parse_usize(value)?,
            "train.learning_rate" => self.train.learning_rate = parse_f64(value)?,
            "train.epochs" => self.train.epochs = parse_usize(value)?,
            "train.loss_mode" => {
                self.train.loss_mode = value.parse::<LossMode>().map_err(invalid)?
            }
            "train.delta_t" => self.train.delta_t = parse_f64(value)?,
            "train.delta_i" => self.train.delta_i = parse_f64(value)?,
            "train.optimizer" => {
                self.train.optimizer = value.parse::<OptimizerKind>().map_err(invalid)?
            }
            "train.beta1" => self.train.beta1 = parse_f64(value)?,
            "train.beta2" => self.train.beta2 = parse_f64(value)?,
            "train.eps" => self.train.eps = parse_f64(value)?,
            "train.embed_dim" => self.train.embed_dim = parse_usize(value)?,
            "train.init_std" => self.train.init_std = parse_f64(value)?,
            "train.learn_scale" => self.train.learn_scale = parse_bool(value)?,
            "train.seed" => self.train.seed = parse_u64(value)?,
            "world.n_entities" => self.world.n_entities = parse_usize(value)?,
            "world.n_relations" => self.world.n_relations = parse_usize(value)?,
            "world.latent_dim" => self.world.latent_dim = parse_usize(value)?,
            "world.image_noise_sigma" => self.world.image_noise_sigma = parse_f64(value)?,
            "world.stative_fraction" => self.world.stative_fraction = parse_f64(value)?,
            "world.stative_attenuation" => self.world.stative_attenuation = parse_f64(value)?,
            "world.n_samples" => self.world.n_samples = parse_usize(value)?,
            "world.seed" => self.world.seed = parse_u64(value)?,
            "annotation.url" => self.annotation.url = Some(value.to_string()),
            "annotation.timeout_ms" => self.annotation.timeout_ms = parse_u64(value)?,
            "annotation.cache_path" => self.annotation.cache_path = Some(PathBuf::from(value)),
            "log_level" => self.log_level = value.to_string(),
            other => {
                return Err(ConfigError::Validation {
                    field: other.to_string(),
                    message: "unknown configuration key".to_string(),
                })
            }
        }
        Ok(())
    }

    /// Check every owning type's invariants, reporting the failing field.
    pub fn validate(&self) -> Result<(), ConfigError> {
        self.similarity
            .validate()
            .map_err(|e| ConfigError::Validation {
                field: "similarity.tau".to_string(),
                message: e.to_string(),
            })?;
        self.loss.validate().map_err(|e| ConfigError::Validation {
            field: "loss.scale".to_string(),
            message: e.to_string(),
        })?;
        self.train.validate().map_err(|e| ConfigError::Validation {
            field: "train".to_string(),
            message: e.to_string(),
        })?;
        self.world.validate().map_err(|e| ConfigError::Validation {
            field: "world".to_string(),
            message: e.to_string(),
        })?;
        Ok(())
    }

    /// Flat sorted key-value view of the semantic config (filesystem paths
    /// excluded); the canonical input for hashing and sidecars.
    pub fn canonical_entries(&self) -> BTreeMap<String, String> {
        let mut m = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), v);
        };
        put("similarity.tau", format!("{}", self.similarity.tau));
        put("similarity.epsilon", format!("{}", self.similarity.epsilon));
        put("loss.scale", format!("{}", self.loss.scale));
        put("loss.delta_t", format!("{}", self.loss.delta_t));
        put("loss.delta_i", format!("{}", self.loss.delta_i));
        put("train.batch_size", format!("{}", self.train.batch_size));
        put(
            "train.learning_rate",
            format!("{}", self.train.learning_rate),
        );
        put("train.epochs", format!("{}", self.train.epochs));
        put(
            "train.loss_mode",
            match self.train.loss_mode {
                LossMode::Clip => "clip".to_string(),
                LossMode::Hn => "hn".to_string(),
            },
        );
        put("train.delta_t", format!("{}", self.train.delta_t));
        put("train.delta_i", format!("{}", self.train.delta_i));
        put(
            "train.optimizer",
            match self.train.optimizer {
                OptimizerKind::Sgd => "sgd".to_string(),
                OptimizerKind::AdaptiveMoment => "adaptive_moment".to_string(),
            },
        );
        put("train.beta1", format!("{}", self.train.beta1));
        put("train.beta2", format!("{}", self.train.beta2));
        put("train.eps", format!("{}", self.train.eps));
        put("train.embed_dim", format!("{}", self.train.embed_dim));
        put("train.init_std", format!("{}", self.train.init_std));
        put("train.learn_scale", format!("{}", self.train.learn_scale));
        put("train.seed", format!("{}", self.train.seed));
        put("world.n_entities", format!("{}", self.world.n_entities));
        put("world.n_relations", format!("{}", self.world.n_relations));
        put("world.latent_dim", format!("{}", self.world.latent_dim));
        put(
            "world.image_noise_sigma",
            format!("{}", self.world.image_noise_sigma),
        );
        put(
            "world.stative_fraction",
            format!("{}", self.world.stative_fraction),
        );
        put(
            "world.stative_attenuation",
            format!("{}", self.world.stative_attenuation),
        );
        put("world.n_samples", format!("{}", self.world.n_samples));
        put("world.seed", format!("{}", self.world.seed));
        if let Some(url) = &self.annotation.url {
            put("annotation.url", url.clone());
        }
        put(
            "annotation.timeout_ms",
            format!("{}", self.annotation.timeout_ms),
        );
        put("log_level", self.log_level.clone());
        m
    }

    /// Provenance tag over the canonical entries.
    pub fn hash(&self) -> String {
        let mut buf = String::new();
        for (k, v) in self.canonical_entries() {
            buf.push_str(&k);
            buf.push('=');
            buf.push_str(&v);
            buf.push('\n');
        }
        fnv1a64_hex(buf.as_bytes())
    }
}

/// Load a config with layered resolution: defaults, then the optional
/// file, then override pairs.
pub fn load_config(
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<AppConfig, ConfigError> {
    load_config_from(AppConfig::default(), path, overrides)
}

/// [`load_config`] starting from a caller-supplied base (e.g. a training
/// preset) instead of the built-in defaults.
pub fn load_config_from(
    base: AppConfig,
    path: Option<&Path>,
    overrides: &[(String, String)],
) -> Result<AppConfig, ConfigError> {
    let mut cfg = base;
    if let Some(path) = path {
        let display = path.display().to_string();
        let text = fs::read_to_string(path).map_err(|e| ConfigError::Io {
            path: display.clone(),
            source: e,
        })?;
        for (lineno, raw_line) in text.lines().enumerate() {
            let line = raw_line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::Parse {
                path: display.clone(),
                line: lineno + 1,
                message: format!("expected `key = value`, got {line:?}"),
            })?;
            cfg.set(key.trim(), value.trim())?;
        }
    }
    for (key, value) in overrides {
        cfg.set(key, value)?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Sidecar written next to every artifact.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Sidecar {
    pub schema: String,
    pub version: u32,
    pub config_hash: String,
    pub config: BTreeMap<String, String>,
}

/// Write `<artifact>.meta.json` describing the resolved config. Bytes are
/// deterministic: sorted keys, no timestamps, no absolute paths.
pub fn write_sidecar(artifact: &Path, cfg: &AppConfig) -> Result<PathBuf, ConfigError> {
    let sidecar = Sidecar {
        schema: "drive.sidecar".to_string(),
        version: 1,
        config_hash: cfg.hash(),
        config: cfg.canonical_entries(),
    };
    let mut name = artifact.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    let path = artifact.with_file_name(name);
    let mut text = serde_json::to_string_pretty(&sidecar).expect("sidecar serializes");
    text.push('\n');
    fs::write(&path, text).map_err(|e| ConfigError::Io {
        path: path.display().to_string(),
        source: e,
    })?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_file_yields_pure_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("empty.conf");
        std::fs::write(&p, "").unwrap();
        let cfg = load_config(Some(&p), &[]).unwrap();
        assert_eq!(cfg.similarity.tau, 0.93);
        assert_eq!(cfg.train.batch_size, 64);
        assert_eq!(cfg.loss.delta_i, 1.223);
        assert_eq!(cfg.loss.delta_t, 0.615);
        assert_eq!(cfg.train.learning_rate, 1e-5);
    }

    #[test]
    fn file_and_overrides_layer_in_order() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("drive.conf");
        std::fs::write(
            &p,
            "# comment\nsimilarity.tau = 0.88\ntrain.epochs = 3\nworld.seed = 7\n",
        )
        .unwrap();
        let cfg = load_config(
            Some(&p),
            &[("similarity.tau".to_string(), "0.9".to_string())],
        )
        .unwrap();
        assert_eq!(cfg.similarity.tau, 0.9); // override beats file
        assert_eq!(cfg.train.epochs, 3); // file beats default
        assert_eq!(cfg.world.seed, 7);
    }

    #[test]
    fn out_of_range_tau_names_the_field() {
        let err =
            load_config(None, &[("similarity.tau".to_string(), "1.5".to_string())]).unwrap_err();
        match err {
            ConfigError::Validation { field, .. } => assert_eq!(field, "similarity.tau"),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn unknown_keys_and_bad_lines_are_rejected() {
        let err = load_config(None, &[("no.such.key".to_string(), "1".to_string())]).unwrap_err();
        assert!(matches!(err, ConfigError::Validation { .. }));

        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("bad.conf");
        std::fs::write(&p, "not a key value line\n").unwrap();
        match load_config(Some(&p), &[]) {
            Err(ConfigError::Parse { line, .. }) => assert_eq!(line, 1),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn hash_tracks_semantic_changes_only() {
        let a = AppConfig::default();
        let mut b = AppConfig::default();
        assert_eq!(a.hash(), b.hash());
        b.annotation.cache_path = Some(PathBuf::from("/tmp/cache.jsonl"));
        assert_eq!(a.hash(), b.hash(), "cache path is not semantic");
        b.train.seed = 99;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn sidecar_bytes_are_deterministic() {
        let dir = tempfile::tempdir().unwrap();
        let artifact = dir.path().join("out.jsonl");
        std::fs::write(&artifact, "").unwrap();
        let cfg = AppConfig::default();
        let p1 = write_sidecar(&artifact, &cfg).unwrap();
        let bytes1 = std::fs::read(&p1).unwrap();
        let p2 = write_sidecar(&artifact, &cfg).unwrap();
        assert_eq!(p1, p2);
        assert_eq!(bytes1, std::fs::read(&p2).unwrap());
        assert!(p1.file_name().unwrap().to_str().unwrap() == "out.jsonl.meta.json");
    }
}
