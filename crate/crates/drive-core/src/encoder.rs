//! Toy dual encoders: lookup tables plus linear projections.
//!
//! The text side embeds a triple as the projected concatenation of its
//! entity and relation table rows; the image side projects the raw image
//! features. Both outputs are L2-normalized. This is the smallest
//! architecture through which the contrastive and similarity gradients
//! reach distinct parameter groups.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{norm, Mat};

#[derive(Debug, Error)]
pub enum EncoderError {
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("zero vector cannot be normalized")]
    NormalizationUndefined,
    #[error("checkpoint {path}: {message}")]
    Checkpoint { path: String, message: String },
    #[error("checkpoint {path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
}

/// Shape description for a pair of toy encoders.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderDims {
    pub n_entities: usize,
    pub n_relations: usize,
    pub latent_dim: usize,
    pub image_dim: usize,
    pub embed_dim: usize,
}

/// Learnable parameters of the dual encoders.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderParams {
    pub entity_table: Mat,
    pub relation_table: Mat,
    /// (3 * latent_dim) x embed_dim
    pub text_projection: Mat,
    /// image_dim x embed_dim
    pub image_projection: Mat,
    pub scale_logit: f64,
}

pub const SCALE_MIN: f64 = 1.0;
pub const SCALE_MAX: f64 = 100.0;

impl EncoderParams {
    /// Seeded Gaussian initialization with the given standard deviation;
    /// the scale logit starts at ln(1/0.07).
    pub fn init(dims: &EncoderDims, std: f64, rng: &mut ChaCha8Rng) -> Self {
        let normal = Normal::new(0.0, std).expect("valid std");
        let mut fill = |rows: usize, cols: usize| {
            let mut m = Mat::zeros(rows, cols);
            for v in m.data_mut() {
                *v = normal.sample(rng);
            }
            m
        };
        Self {
            entity_table: fill(dims.n_entities, dims.latent_dim),
            relation_table: fill(dims.n_relations, dims.latent_dim),
            text_projection: fill(3 * dims.latent_dim, dims.embed_dim),
            image_projection: fill(dims.image_dim, dims.embed_dim),
            scale_logit: (1.0 / 0.07f64).ln(),
        }
    }

    pub fn dims(&self) -> EncoderDims {
        EncoderDims {
            n_entities: self.entity_table.rows(),
            n_relations: self.relation_table.rows(),
            latent_dim: self.entity_table.cols(),
            image_dim: self.image_projection.rows(),
            embed_dim: self.text_projection.cols(),
        }
    }

    /// Similarity scale: exp of the logit, clamped to [1, 100].
    pub fn scale(&self) -> f64 {
        self.scale_logit.exp().clamp(SCALE_MIN, SCALE_MAX)
    }

    /// Concatenated table rows for a triple: the text encoder input.
    pub fn text_features(
        &self,
        subject: usize,
        relation: usize,
        object: usize,
    ) -> Result<Vec<f64>, EncoderError> {
        let dims = self.dims();
        if subject >= dims.n_entities || object >= dims.n_entities {
            return Err(EncoderError::ShapeMismatch(format!(
                "entity index out of range: {subject}/{object} vs {}",
                dims.n_entities
            )));
        }
        if relation >= dims.n_relations {
            return Err(EncoderError::ShapeMismatch(format!(
                "relation index {relation} out of range {}",
                dims.n_relations
            )));
        }
        let mut x = Vec::with_capacity(3 * dims.latent_dim);
        x.extend_from_slice(self.entity_table.row(subject));
        x.extend_from_slice(self.relation_table.row(relation));
        x.extend_from_slice(self.entity_table.row(object));
        Ok(x)
    }

    /// Encode a triple; returns the unit embedding.
    pub fn encode_text(
        &self,
        subject: usize,
        relation: usize,
        object: usize,
    ) -> Result<Vec<f64>, EncoderError> {
        Ok(self.encode_text_traced(subject, relation, object)?.unit)
    }

    /// Encode a triple, keeping the pre-normalization output for backprop.
    pub fn encode_text_traced(
        &self,
        subject: usize,
        relation: usize,
        object: usize,
    ) -> Result<Encoding, EncoderError> {
        let x = self.text_features(subject, relation, object)?;
        project(&self.text_projection, &x)
    }

    /// Encode image features; returns the unit embedding.
    pub fn encode_image(&self, features: &[f64]) -> Result<Vec<f64>, EncoderError> {
        Ok(self.encode_image_traced(features)?.unit)
    }

    pub fn encode_image_traced(&self, features: &[f64]) -> Result<Encoding, EncoderError> {
        if features.len() != self.image_projection.rows() {
            return Err(EncoderError::ShapeMismatch(format!(
                "image features len {} vs projection rows {}",
                features.len(),
                self.image_projection.rows()
            )));
        }
        project(&self.image_projection, features)
    }

    fn flat_len(&self) -> usize {
        self.entity_table.data().len()
            + self.relation_table.data().len()
            + self.text_projection.data().len()
            + self.image_projection.data().len()
            + 1
    }

    /// Save as flat little-endian f64 binary next to a JSON sidecar
    /// describing shapes and the resolved config hash.
    pub fn save(&self, path: &Path, config_hash: &str) -> Result<(), EncoderError> {
        self.save_with_config(path, config_hash, BTreeMap::new())
    }

    /// [`EncoderParams::save`] with the resolved config echoed into the
    /// sidecar.
    pub fn save_with_config(
        &self,
        path: &Path,
        config_hash: &str,
        config: BTreeMap<String, String>,
    ) -> Result<(), EncoderError> {
        let mut bytes = Vec::with_capacity(self.flat_len() * 8);
        for part in [
            self.entity_table.data(),
            self.relation_table.data(),
            self.text_projection.data(),
            self.image_projection.data(),
        ] {
            for v in part {
                bytes.extend_from_slice(&v.to_le_bytes());
            }
        }
        bytes.extend_from_slice(&self.scale_logit.to_le_bytes());
        fs::write(path, &bytes).map_err(|e| EncoderError::Io {
            path: path.display().to_string(),
            source: e,
        })?;

        let meta = CheckpointMeta {
            schema: "drive.params".into(),
            version: 1,
            shapes: BTreeMap::from([
                (
                    "entity_table".to_string(),
                    vec![self.entity_table.rows(), self.entity_table.cols()],
                ),
                (
                    "relation_table".to_string(),
                    vec![self.relation_table.rows(), self.relation_table.cols()],
                ),
                (
                    "text_projection".to_string(),
                    vec![self.text_projection.rows(), self.text_projection.cols()],
                ),
                (
                    "image_projection".to_string(),
                    vec![self.image_projection.rows(), self.image_projection.cols()],
                ),
            ]),
            config_hash: config_hash.to_string(),
            config,
        };
        let sidecar = sidecar_path(path);
        let json = serde_json::to_string_pretty(&meta).expect("meta serializes");
        fs::write(&sidecar, json.as_bytes()).map_err(|e| EncoderError::Io {
            path: sidecar.display().to_string(),
            source: e,
        })
    }

    /// Load a checkpoint written by [`EncoderParams::save`].
    pub fn load(path: &Path) -> Result<(Self, CheckpointMeta), EncoderError> {
        let sidecar = sidecar_path(path);
        let meta_text = fs::read_to_string(&sidecar).map_err(|e| EncoderError::Io {
            path: sidecar.display().to_string(),
            source: e,
        })?;
        let meta: CheckpointMeta =
            serde_json::from_str(&meta_text).map_err(|e| EncoderError::Checkpoint {
                path: sidecar.display().to_string(),
                message: e.to_string(),
            })?;
        let shape = |name: &str| -> Result<(usize, usize), EncoderError> {
            let dims = meta
                .shapes
                .get(name)
                .ok_or_else(|| EncoderError::Checkpoint {
                    path: sidecar.display().to_string(),
                    message: format!("missing shape for {name}"),
                })?;
            if dims.len() != 2 {
                return Err(EncoderError::Checkpoint {
                    path: sidecar.display().to_string(),
                    message: format!("shape for {name} must have 2 dims"),
                });
            }
            Ok((dims[0], dims[1]))
        };
        let shapes = [
            shape("entity_table")?,
            shape("relation_table")?,
            shape("text_projection")?,
            shape("image_projection")?,
        ];

        let bytes = fs::read(path).map_err(|e| EncoderError::Io {
            path: path.display().to_string(),
            source: e,
        })?;
        let expected = shapes.iter().map(|(r, c)| r * c).sum::<usize>() + 1;
        if bytes.len() != expected * 8 {
            return Err(EncoderError::Checkpoint {
                path: path.display().to_string(),
                message: format!(
                    "expected {} bytes for {} values, found {}",
                    expected * 8,
                    expected,
                    bytes.len()
                ),
            });
        }
        let mut values = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")));
        let mut read_mat = |rows: usize, cols: usize| {
            let data: Vec<f64> = values.by_ref().take(rows * cols).collect();
            Mat::from_vec(rows, cols, data)
        };
        let entity_table = read_mat(shapes[0].0, shapes[0].1);
        let relation_table = read_mat(shapes[1].0, shapes[1].1);
        let text_projection = read_mat(shapes[2].0, shapes[2].1);
        let image_projection = read_mat(shapes[3].0, shapes[3].1);
        let scale_logit = values.next().expect("length checked");

        Ok((
            Self {
                entity_table,
                relation_table,
                text_projection,
                image_projection,
                scale_logit,
            },
            meta,
        ))
    }
}

/// Sidecar JSON accompanying a parameter checkpoint.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub schema: String,
    pub version: u32,
    pub shapes: BTreeMap<String, Vec<usize>>,
    pub config_hash: String,
    /// Resolved configuration at save time, echoed for provenance.
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub config: BTreeMap<String, String>,
}

pub fn sidecar_path(path: &Path) -> PathBuf {
    let mut name = path.file_name().unwrap_or_default().to_os_string();
    name.push(".meta.json");
    path.with_file_name(name)
}

/// A forward pass through a projection with its normalization trace.
#[derive(Debug, Clone)]
pub struct Encoding {
    /// Pre-normalization projected vector.
    pub raw: Vec<f64>,
    /// Unit-norm embedding.
    pub unit: Vec<f64>,
    pub raw_norm: f64,
}

fn project(projection: &Mat, x: &[f64]) -> Result<Encoding, EncoderError> {
    if x.len() != projection.rows() {
        return Err(EncoderError::ShapeMismatch(format!(
            "input len {} vs projection rows {}",
            x.len(),
            projection.rows()
        )));
    }
    let raw = projection.transpose_apply(x);
    let raw_norm = norm(&raw);
    if raw_norm == 0.0 || !raw_norm.is_finite() {
        return Err(EncoderError::NormalizationUndefined);
    }
    let unit = raw.iter().map(|v| v / raw_norm).collect();
    Ok(Encoding {
        raw,
        unit,
        raw_norm,
    })
}
