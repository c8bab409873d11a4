//! Synthetic relational worlds for controlled training experiments.
//!
//! Each sample is a (subject entity, relation, object entity) triple with
//! an image feature vector built from ground-truth latents: the relation
//! block is attenuated for stative relations, operationalizing the claim
//! that stative relations carry a weaker visual signal. Hard negatives are
//! exact: samples sharing (subject, object) with a different relation.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{normalized, Mat};
use crate::mining::{HnEntry, HnMap};
use crate::triplet::{Sample, Triplet, VerbState};

#[derive(Debug, Error)]
pub enum SynthError {
    #[error("invalid world config: {0}")]
    InvalidConfig(String),
    #[error("cannot place {requested} distinct triples over capacity {capacity}")]
    InsufficientVocabulary { requested: usize, capacity: usize },
    #[error("world dataset: {0}")]
    InvalidDataset(String),
}

/// Generator knobs for a synthetic world.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorldConfig {
    pub n_entities: usize,
    pub n_relations: usize,
    pub latent_dim: usize,
    pub image_noise_sigma: f64,
    /// Fraction of relations labeled stative.
    pub stative_fraction: f64,
    /// Multiplier on the relation block of stative images, in (0, 1].
    pub stative_attenuation: f64,
    pub n_samples: usize,
    pub seed: u64,
}

impl Default for WorldConfig {
    fn default() -> Self {
        Self {
            n_entities: 30,
            n_relations: 20,
            latent_dim: 8,
            image_noise_sigma: 0.1,
            stative_fraction: 0.5,
            // stative relations carry half the visual signal by default
            stative_attenuation: 0.5,
            n_samples: 2000,
            seed: 0,
        }
    }
}

impl WorldConfig {
    pub fn validate(&self) -> Result<(), SynthError> {
        let bad = |m: String| Err(SynthError::InvalidConfig(m));
        if self.n_entities < 2 {
            return bad(format!("n_entities must be >= 2, got {}", self.n_entities));
        }
        if self.n_relations < 2 {
            return bad(format!(
                "n_relations must be >= 2, got {}",
                self.n_relations
            ));
        }
        if self.latent_dim == 0 {
            return bad("latent_dim must be >= 1".into());
        }
        if self.image_noise_sigma.is_nan() || self.image_noise_sigma < 0.0 {
            return bad(format!(
                "image_noise_sigma must be >= 0, got {}",
                self.image_noise_sigma
            ));
        }
        if !(0.0..=1.0).contains(&self.stative_fraction) {
            return bad(format!(
                "stative_fraction must be in [0, 1], got {}",
                self.stative_fraction
            ));
        }
        if self.stative_attenuation.is_nan()
            || self.stative_attenuation <= 0.0
            || self.stative_attenuation > 1.0
        {
            return bad(format!(
                "stative_attenuation must be in (0, 1], got {}",
                self.stative_attenuation
            ));
        }
        if self.n_samples == 0 {
            return bad("n_samples must be >= 1".into());
        }
        Ok(())
    }

    pub fn image_dim(&self) -> usize {
        3 * self.latent_dim
    }
}

/// The latents the generator sampled; kept for diagnostics and tests.
#[derive(Debug, Clone)]
pub struct GroundTruth {
    pub entity_latents: Mat,
    pub relation_latents: Mat,
    pub relation_states: Vec<VerbState>,
}

/// A dataset with its exact hard-negative map and the vocabulary indices
/// the toy encoders train over.
#[derive(Debug, Clone)]
pub struct World {
    pub samples: Vec<Sample>,
    pub hnmap: HnMap,
    pub entities: Vec<String>,
    pub relations: Vec<String>,
    /// Per-sample (subject, relation, object) vocabulary indices.
    pub triple_ids: Vec<(usize, usize, usize)>,
    pub truth: Option<GroundTruth>,
}

impl World {
    pub fn image_dim(&self) -> usize {
        self.samples
            .first()
            .map(|s| s.image_features.len())
            .unwrap_or(0)
    }

    /// Rebuild a world from persisted samples and map, deriving the
    /// vocabulary in first-appearance order.
    pub fn from_dataset(samples: Vec<Sample>, hnmap: HnMap) -> Result<Self, SynthError> {
        if samples.is_empty() {
            return Err(SynthError::InvalidDataset("no samples".into()));
        }
        let image_dim = samples[0].image_features.len();
        if image_dim == 0 {
            return Err(SynthError::InvalidDataset(
                "samples carry no image features".into(),
            ));
        }
        let mut entities: Vec<String> = Vec::new();
        let mut relations: Vec<String> = Vec::new();
        let mut entity_idx: std::collections::HashMap<String, usize> =
            std::collections::HashMap::new();
        let mut relation_idx: std::collections::HashMap<String, usize> =
            std::collections::HashMap::new();
        let mut triple_ids = Vec::with_capacity(samples.len());
        for s in &samples {
            if s.image_features.len() != image_dim {
                return Err(SynthError::InvalidDataset(format!(
                    "sample {} has {} image features, expected {image_dim}",
                    s.id,
                    s.image_features.len()
                )));
            }
            let s_id = match entity_idx.get(&s.triplet.subject.text) {
                Some(&i) => i,
                None => {
                    entities.push(s.triplet.subject.text.clone());
                    entity_idx.insert(s.triplet.subject.text.clone(), entities.len() - 1);
                    entities.len() - 1
                }
            };
            let o_id = match entity_idx.get(&s.triplet.object.text) {
                Some(&i) => i,
                None => {
                    entities.push(s.triplet.object.text.clone());
                    entity_idx.insert(s.triplet.object.text.clone(), entities.len() - 1);
                    entities.len() - 1
                }
            };
            let r_id = match relation_idx.get(&s.triplet.relation.text) {
                Some(&i) => i,
                None => {
                    relations.push(s.triplet.relation.text.clone());
                    relation_idx.insert(s.triplet.relation.text.clone(), relations.len() - 1);
                    relations.len() - 1
                }
            };
            triple_ids.push((s_id, r_id, o_id));
        }
        hnmap
            .validate(&samples)
            .map_err(|e| SynthError::InvalidDataset(e.to_string()))?;
        Ok(Self {
            samples,
            hnmap,
            entities,
            relations,
            triple_ids,
            truth: None,
        })
    }
}

fn unit_gaussian_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Mat {
    let mut m = Mat::zeros(rows, dim);
    for i in 0..rows {
        let v: Vec<f64> = (0..dim).map(|_| StandardNormal.sample(rng)).collect();
        let u = normalized(&v).expect("gaussian vector is nonzero");
        m.row_mut(i).copy_from_slice(&u);
    }
    m
}

/// Generate a seeded world: unit latents per entity and relation, distinct
/// (subject, relation, object) triples, image features
/// `concat(subject, alpha * relation, object) + noise`, and the exact
/// grouped hard-negative map.
pub fn synth_world(cfg: &WorldConfig) -> Result<World, SynthError> {
    cfg.validate()?;

    let capacity = cfg.n_entities * (cfg.n_entities - 1) * cfg.n_relations;
    if cfg.n_samples > capacity {
        return Err(SynthError::InsufficientVocabulary {
            requested: cfg.n_samples,
            capacity,
        });
    }

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let entity_latents = unit_gaussian_rows(&mut rng, cfg.n_entities, cfg.latent_dim);
    let relation_latents = unit_gaussian_rows(&mut rng, cfg.n_relations, cfg.latent_dim);

    let n_stative =
        ((cfg.stative_fraction * cfg.n_relations as f64).round() as usize).min(cfg.n_relations);
    let relation_states: Vec<VerbState> = (0..cfg.n_relations)
        .map(|r| {
            if r < n_stative {
                VerbState::Stative
            } else {
                VerbState::Dynamic
            }
        })
        .collect();

    // all distinct triples, shuffled; taking a prefix samples without
    // replacement
    let mut triples: Vec<(usize, usize, usize)> = Vec::with_capacity(capacity);
    for a in 0..cfg.n_entities {
        for b in 0..cfg.n_entities {
            if a == b {
                continue;
            }
            for r in 0..cfg.n_relations {
                triples.push((a, r, b));
            }
        }
    }
    triples.shuffle(&mut rng);
    triples.truncate(cfg.n_samples);

    let entities: Vec<String> = (0..cfg.n_entities).map(|i| format!("ent{i}")).collect();
    let relations: Vec<String> = (0..cfg.n_relations).map(|i| format!("rel{i}")).collect();

    let latent = cfg.latent_dim;
    let mut samples = Vec::with_capacity(cfg.n_samples);
    for (n, &(a, r, b)) in triples.iter().enumerate() {
        let state = relation_states[r];
        let alpha = match state {
            VerbState::Stative => cfg.stative_attenuation,
            VerbState::Dynamic => 1.0,
        };
        let mut img = Vec::with_capacity(3 * latent);
        img.extend_from_slice(entity_latents.row(a));
        img.extend(relation_latents.row(r).iter().map(|v| alpha * v));
        img.extend_from_slice(entity_latents.row(b));
        for v in img.iter_mut() {
            let noise: f64 = StandardNormal.sample(&mut rng);
            *v += cfg.image_noise_sigma * noise;
        }

        let triplet = Triplet::from_texts(&entities[a], &relations[r], &entities[b]);
        let caption = crate::triplet::render_caption(&triplet);
        samples.push(Sample {
            id: format!("s{n:06}"),
            raw_caption: caption,
            triplet,
            state,
            scene_relation_count: 1,
            object_count: 1,
            image_features: img,
            bidirectional_plausible: true,
        });
    }

    // exact hard negatives: identical (subject, object), different relation;
    // triples are distinct so same group implies a different relation
    let mut groups: std::collections::HashMap<(usize, usize), Vec<usize>> =
        std::collections::HashMap::new();
    for (n, &(a, _, b)) in triples.iter().enumerate() {
        groups.entry((a, b)).or_default().push(n);
    }
    let entries: Vec<HnEntry> = triples
        .iter()
        .enumerate()
        .map(|(n, &(a, _, b))| HnEntry {
            anchor: samples[n].id.clone(),
            hn: groups[&(a, b)]
                .iter()
                .filter(|&&m| m != n)
                .map(|&m| samples[m].id.clone())
                .collect(),
        })
        .collect();

    Ok(World {
        samples,
        hnmap: HnMap::from_entries(entries),
        entities,
        relations,
        triple_ids: triples,
        truth: Some(GroundTruth {
            entity_latents,
            relation_latents,
            relation_states,
        }),
    })
}
