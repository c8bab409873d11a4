//! Library for relation-focused contrastive learning at desk scale:
//! triplet extraction from captions, hard-negative mining over a
//! word-embedding lexicon, the hard-negative loss family with analytic
//! gradients, synthetic relational worlds, toy dual-encoder training, and
//! within-candidate-set retrieval evaluation.

pub mod annotation;
pub mod config;
pub mod dataset_io;
pub mod encoder;
pub mod eval;
pub mod gradcheck;
pub mod hashutil;
pub mod lexicon;
pub mod linalg;
pub mod loss;
pub mod mining;
pub mod similarity;
pub mod synth;
pub mod train;
pub mod triplet;

pub use lexicon::EmbeddingLexicon;
pub use loss::{LossBreakdown, LossConfig, MiniBatch};
pub use mining::{DatasetMode, HnMap};
pub use similarity::SimilarityConfig;
pub use triplet::{Phrase, Sample, TaggedCaption, Triplet, VerbState};
