//! Approximate equality of phrases, relations, and triplets, plus the
//! F1 sweep used to pick the cosine threshold.
//!
//! Two phrases count as approximately equal when they share a synonym set
//! or when the cosine of their embeddings clears `tau`. Approximate
//! equality is symmetric and reflexive but deliberately NOT transitive;
//! nothing here may rely on transitivity.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::EmbeddingLexicon;
use crate::linalg;
use crate::triplet::{Phrase, PhraseToken, Triplet};

#[derive(Debug, Clone, Error, PartialEq)]
pub enum SimilarityError {
    #[error("no token of phrase {phrase:?} appears in the lexicon")]
    NoKnownTokens { phrase: String },
    #[error("threshold sweep needs both positive and negative labels")]
    DegenerateLabels,
    #[error("invalid sweep range: {0}")]
    InvalidRange(String),
    #[error("invalid similarity config: {0}")]
    InvalidConfig(String),
}

/// Thresholds governing approximate equality.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityConfig {
    /// Cosine threshold in (0, 1].
    pub tau: f64,
    /// Synonym-confidence threshold in [0, 1]; 1.0 means exact set
    /// membership.
    pub epsilon: f64,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        Self {
            tau: 0.93,
            epsilon: 1.0,
        }
    }
}

impl SimilarityConfig {
    pub fn new(tau: f64, epsilon: f64) -> Result<Self, SimilarityError> {
        let cfg = Self { tau, epsilon };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<(), SimilarityError> {
        if self.tau.is_nan() || self.tau <= 0.0 || self.tau > 1.0 {
            return Err(SimilarityError::InvalidConfig(format!(
                "tau must be in (0, 1], got {}",
                self.tau
            )));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(SimilarityError::InvalidConfig(format!(
                "epsilon must be in [0, 1], got {}",
                self.epsilon
            )));
        }
        Ok(())
    }
}

/// Mean of the word vectors of the phrase's tokens present in the lexicon,
/// L2-normalized. Lookup tries the surface form, then the lemma; tokens
/// absent from the lexicon are skipped.
pub fn phrase_embedding(p: &Phrase, lex: &EmbeddingLexicon) -> Result<Vec<f64>, SimilarityError> {
    embed_tokens(&p.tokens, &p.text, lex)
}

fn embed_tokens(
    tokens: &[PhraseToken],
    label: &str,
    lex: &EmbeddingLexicon,
) -> Result<Vec<f64>, SimilarityError> {
    let mut sum = vec![0.0; lex.dimension()];
    let mut known = 0usize;
    for t in tokens {
        let v = lex.vector(&t.surface).or_else(|| lex.vector(&t.lemma));
        if let Some(v) = v {
            for (s, x) in sum.iter_mut().zip(v) {
                *s += x;
            }
            known += 1;
        }
    }
    if known == 0 {
        return Err(SimilarityError::NoKnownTokens {
            phrase: label.to_string(),
        });
    }
    for s in sum.iter_mut() {
        *s /= known as f64;
    }
    linalg::normalized(&sum).ok_or(SimilarityError::NoKnownTokens {
        phrase: label.to_string(),
    })
}

fn phrase_cosine(a: &Phrase, b: &Phrase, lex: &EmbeddingLexicon) -> Result<f64, SimilarityError> {
    let ea = phrase_embedding(a, lex)?;
    let eb = phrase_embedding(b, lex)?;
    Ok(linalg::dot(&ea, &eb))
}

/// Phrase approximate equality: shared synonym set (at confidence >=
/// epsilon) or embedding cosine >= tau. The NoKnownTokens error surfaces
/// only when the synonym branch also fails.
pub fn approx_equal(
    a: &Phrase,
    b: &Phrase,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
) -> Result<bool, SimilarityError> {
    if lex.synonym_confidence(&a.text, &b.text) >= cfg.epsilon {
        return Ok(true);
    }
    Ok(phrase_cosine(a, b, lex)? >= cfg.tau)
}

/// Relation approximate equality; same contract as [`approx_equal`],
/// applied to verb phrases.
pub fn relation_approx_equal(
    r1: &Phrase,
    r2: &Phrase,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
) -> Result<bool, SimilarityError> {
    approx_equal(r1, r2, lex, cfg)
}

fn caption_tokens(subject: &Phrase, relation: &Phrase, object: &Phrase) -> Vec<PhraseToken> {
    let mut tokens =
        Vec::with_capacity(subject.tokens.len() + relation.tokens.len() + object.tokens.len());
    tokens.extend(subject.tokens.iter().cloned());
    tokens.extend(relation.tokens.iter().cloned());
    tokens.extend(object.tokens.iter().cloned());
    tokens
}

/// Embedding of a whole rendered caption (all triplet tokens pooled).
pub fn caption_embedding(t: &Triplet, lex: &EmbeddingLexicon) -> Result<Vec<f64>, SimilarityError> {
    let tokens = caption_tokens(&t.subject, &t.relation, &t.object);
    let label = crate::triplet::render_caption(t);
    embed_tokens(&tokens, &label, lex)
}

/// Full-triplet approximate equality: the rendered captions must be
/// cosine-similar AND the standardized captions (the second triplet with
/// the first one's subject and object substituted in) must be too.
///
/// Canonicalization is anchor-sided: `ti`'s subject and object are the
/// substitution terms, so this predicate is not symmetric in principle.
/// Callers needing symmetry evaluate both orientations.
pub fn triplet_approx_equal(
    ti: &Triplet,
    tj: &Triplet,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
) -> Result<bool, SimilarityError> {
    let full_i = caption_embedding(ti, lex)?;
    let full_j = caption_embedding(tj, lex)?;
    if linalg::dot(&full_i, &full_j) < cfg.tau {
        return Ok(false);
    }

    // Standardize: both captions share the anchor's subject and object, so
    // only the relations differ.
    let std_j_tokens = caption_tokens(&ti.subject, &tj.relation, &ti.object);
    let std_j = embed_tokens(
        &std_j_tokens,
        &format!(
            "{} {} {}",
            ti.subject.text, tj.relation.text, ti.object.text
        ),
        lex,
    )?;
    Ok(linalg::dot(&full_i, &std_j) >= cfg.tau)
}

/// One evaluated threshold of the sweep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepPoint {
    pub tau: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdSweepResult {
    pub best_tau: f64,
    pub curve: Vec<SweepPoint>,
}

/// A labeled phrase pair for threshold selection.
pub type LabeledPair = (Phrase, Phrase, bool);

/// Sweep cosine thresholds over `[lo, hi]` in `step` increments and score
/// each against the labels. Classification is positive iff cosine >= tau;
/// the synonym branch is disabled during the sweep. Ties on F1 break
/// toward the lowest tau.
pub fn sweep_threshold(
    pairs: &[LabeledPair],
    lex: &EmbeddingLexicon,
    range: (f64, f64),
    step: f64,
) -> Result<ThresholdSweepResult, SimilarityError> {
    let (lo, hi) = range;
    if lo.is_nan() || hi.is_nan() || lo >= hi || !lo.is_finite() || !hi.is_finite() {
        return Err(SimilarityError::InvalidRange(format!(
            "need lo < hi, got [{lo}, {hi}]"
        )));
    }
    if step.is_nan() || step <= 0.0 {
        return Err(SimilarityError::InvalidRange(format!(
            "need step > 0, got {step}"
        )));
    }
    let positives = pairs.iter().filter(|(_, _, l)| *l).count();
    if positives == 0 || positives == pairs.len() {
        return Err(SimilarityError::DegenerateLabels);
    }

    let scored: Vec<(f64, bool)> = pairs
        .iter()
        .map(|(a, b, label)| Ok((phrase_cosine(a, b, lex)?, *label)))
        .collect::<Result<_, SimilarityError>>()?;

    let mut curve = Vec::new();
    let mut best: Option<(f64, f64)> = None; // (f1, tau)
    let mut k = 0usize;
    loop {
        let tau = lo + k as f64 * step;
        if tau > hi + step * 1e-9 {
            break;
        }
        let (mut tp, mut fp, mut fn_) = (0usize, 0usize, 0usize);
        for &(cos, label) in &scored {
            let predicted = cos >= tau;
            match (predicted, label) {
                (true, true) => tp += 1,
                (true, false) => fp += 1,
                (false, true) => fn_ += 1,
                (false, false) => {}
            }
        }
        let precision = if tp + fp > 0 {
            tp as f64 / (tp + fp) as f64
        } else {
            0.0
        };
        let recall = if tp + fn_ > 0 {
            tp as f64 / (tp + fn_) as f64
        } else {
            0.0
        };
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        curve.push(SweepPoint {
            tau,
            precision,
            recall,
            f1,
        });
        // strictly-greater keeps the lowest tau on ties
        if best.is_none_or(|(bf, _)| f1 > bf) {
            best = Some((f1, tau));
        }
        k += 1;
    }

    let (_, best_tau) = best.expect("lo < hi guarantees at least one grid point");
    Ok(ThresholdSweepResult { best_tau, curve })
}
