//! Captions as subject-relation-object triplets.
//!
//! A caption enters the pipeline either as a [`TaggedCaption`] (a dependency
//! parse supplied by file or by the annotation service) or as a raw string
//! that the annotation client simplifies first. `extract_triplet` reduces a
//! tagged caption to its head triplet; captions without a complete triplet
//! are rejected and dropped upstream.

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// One word of a phrase: surface form plus its lemma.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PhraseToken {
    pub surface: String,
    pub lemma: String,
}

/// A normalized word span: lowercase, single-space separated.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Phrase {
    /// Joined surface text, e.g. `"flies through"`.
    pub text: String,
    /// Lemma of the head token, e.g. `"fly"`.
    pub head: String,
    pub tokens: Vec<PhraseToken>,
}

impl Phrase {
    /// Phrase from explicit tokens; `head_index` selects the head token.
    pub fn new(tokens: Vec<PhraseToken>, head_index: usize) -> Self {
        assert!(!tokens.is_empty(), "phrase must have at least one token");
        assert!(head_index < tokens.len(), "head index out of bounds");
        let text = tokens
            .iter()
            .map(|t| t.surface.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        let head = tokens[head_index].lemma.clone();
        Self { text, head, tokens }
    }

    /// Noun phrase from plain text: lemma = surface, head = last token.
    pub fn noun(text: &str) -> Self {
        Self::from_text(text, true)
    }

    /// Verb phrase from plain text: lemma = surface, head = first token.
    pub fn verb(text: &str) -> Self {
        Self::from_text(text, false)
    }

    fn from_text(text: &str, head_last: bool) -> Self {
        let tokens: Vec<PhraseToken> = normalize(text)
            .split_whitespace()
            .map(|w| PhraseToken {
                surface: w.to_string(),
                lemma: w.to_string(),
            })
            .collect();
        assert!(!tokens.is_empty(), "phrase text must be nonempty");
        let head_index = if head_last { tokens.len() - 1 } else { 0 };
        Self::new(tokens, head_index)
    }

    /// Surface tokens in order.
    pub fn surfaces(&self) -> impl Iterator<Item = &str> {
        self.tokens.iter().map(|t| t.surface.as_str())
    }
}

fn normalize(s: &str) -> String {
    s.to_lowercase()
        .split_whitespace()
        .collect::<Vec<_>>()
        .join(" ")
}

/// A caption reduced to (subject, relation, object).
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Triplet {
    pub subject: Phrase,
    pub relation: Phrase,
    pub object: Phrase,
}

impl Triplet {
    pub fn new(subject: Phrase, relation: Phrase, object: Phrase) -> Self {
        Self {
            subject,
            relation,
            object,
        }
    }

    /// Convenience constructor from plain texts.
    pub fn from_texts(subject: &str, relation: &str, object: &str) -> Self {
        Self::new(
            Phrase::noun(subject),
            Phrase::verb(relation),
            Phrase::noun(object),
        )
    }
}

/// Whether the relation's verb expresses a state or an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum VerbState {
    Stative,
    Dynamic,
}

impl std::fmt::Display for VerbState {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            VerbState::Stative => write!(f, "stative"),
            VerbState::Dynamic => write!(f, "dynamic"),
        }
    }
}

impl std::str::FromStr for VerbState {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "stative" => Ok(VerbState::Stative),
            "dynamic" => Ok(VerbState::Dynamic),
            other => Err(format!("unknown verb state: {other:?}")),
        }
    }
}

/// One token of a dependency-parsed caption.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedToken {
    pub surface: String,
    pub lemma: String,
    /// Coarse POS tag ("NOUN", "VERB", "ADP", ...).
    pub pos: String,
    /// 0-based index of the syntactic head; the root points at itself.
    pub head: usize,
    /// Dependency label; exactly one token carries "ROOT".
    pub dep: String,
}

/// A pre-tagged caption: the input format that replaces an in-process parser.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TaggedCaption {
    pub tokens: Vec<TaggedToken>,
}

impl TaggedCaption {
    pub fn new(tokens: Vec<TaggedToken>) -> Result<Self, ExtractError> {
        if tokens.is_empty() {
            return Err(ExtractError::InvalidParse("empty token list".into()));
        }
        let roots = tokens.iter().filter(|t| t.dep == "ROOT").count();
        if roots != 1 {
            return Err(ExtractError::InvalidParse(format!(
                "expected exactly one ROOT, found {roots}"
            )));
        }
        if let Some(t) = tokens.iter().find(|t| t.head >= tokens.len()) {
            return Err(ExtractError::InvalidParse(format!(
                "head index {} out of bounds for {:?}",
                t.head, t.surface
            )));
        }
        Ok(Self { tokens })
    }

    fn root_index(&self) -> usize {
        self.tokens
            .iter()
            .position(|t| t.dep == "ROOT")
            .expect("validated at construction")
    }
}

/// Captioned image sample after simplification.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub id: String,
    pub raw_caption: String,
    pub triplet: Triplet,
    pub state: VerbState,
    /// Relation count reported by the upstream scene parse.
    pub scene_relation_count: u32,
    /// Main-object count from the source annotations.
    pub object_count: u32,
    pub image_features: Vec<f64>,
    /// Whether the caption's relation is plausibly asymmetric; gates
    /// directional hard-negative mining. Defaults to true.
    pub bidirectional_plausible: bool,
}

impl Sample {
    pub fn caption(&self) -> String {
        render_caption(&self.triplet)
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum ExtractError {
    #[error("no nominal subject attached to the relation span")]
    NoSubject,
    #[error("no root verb found")]
    NoRelation,
    #[error("no direct or prepositional object attached to the relation span")]
    NoObject,
    #[error("invalid tagged caption: {0}")]
    InvalidParse(String),
}

/// Admission rule for source captions: between one and two scene relations,
/// between one and three main objects.
pub fn admit_sample(rel_count: u32, obj_count: u32) -> bool {
    (1..=2).contains(&rel_count) && (1..=3).contains(&obj_count)
}

/// Reduce a tagged caption to its head triplet.
///
/// The relation span is the root verb plus any auxiliary, particle, or
/// preposition token headed inside the span, restricted to the contiguous
/// run around the root. The subject is the nominal-subject dependent of the
/// span, the object its direct or prepositional object; each contributes its
/// head token only.
pub fn extract_triplet(tc: &TaggedCaption) -> Result<Triplet, ExtractError> {
    let root = tc.root_index();
    if tc.tokens[root].pos != "VERB" && tc.tokens[root].pos != "AUX" {
        return Err(ExtractError::NoRelation);
    }

    let span = relation_span(tc, root);

    let subject_idx = tc
        .tokens
        .iter()
        .position(|t| (t.dep == "nsubj" || t.dep == "nsubjpass") && span.contains(&t.head))
        .ok_or(ExtractError::NoSubject)?;

    // Prefer a direct object; fall back to a prepositional object whose
    // preposition sits inside the relation span.
    let object_idx = tc
        .tokens
        .iter()
        .position(|t| (t.dep == "dobj" || t.dep == "obj") && span.contains(&t.head))
        .or_else(|| {
            tc.tokens
                .iter()
                .position(|t| t.dep == "pobj" && span.contains(&t.head))
        })
        .ok_or(ExtractError::NoObject)?;

    let phrase_of = |idx: usize| {
        let t = &tc.tokens[idx];
        Phrase::new(
            vec![PhraseToken {
                surface: normalize(&t.surface),
                lemma: normalize(&t.lemma),
            }],
            0,
        )
    };

    let relation_tokens: Vec<PhraseToken> = span
        .iter()
        .map(|&i| {
            let t = &tc.tokens[i];
            PhraseToken {
                surface: normalize(&t.surface),
                lemma: normalize(&t.lemma),
            }
        })
        .collect();
    let head_in_span = span.iter().position(|&i| i == root).expect("root in span");

    Ok(Triplet::new(
        phrase_of(subject_idx),
        Phrase::new(relation_tokens, head_in_span),
        phrase_of(object_idx),
    ))
}

/// Indices of the relation span, ascending.
fn relation_span(tc: &TaggedCaption, root: usize) -> Vec<usize> {
    const SPAN_DEPS: [&str; 5] = ["aux", "auxpass", "prt", "prep", "agent"];

    // Candidates: the root plus every aux/particle/preposition headed inside
    // the candidate set, grown to a fixpoint.
    let mut candidate = vec![false; tc.tokens.len()];
    candidate[root] = true;
    loop {
        let mut changed = false;
        for (i, t) in tc.tokens.iter().enumerate() {
            if !candidate[i] && SPAN_DEPS.contains(&t.dep.as_str()) && candidate[t.head] {
                candidate[i] = true;
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }

    // Keep only the contiguous run containing the root; an adverb between
    // the verb and a trailing preposition cuts the span there.
    let mut lo = root;
    while lo > 0 && candidate[lo - 1] {
        lo -= 1;
    }
    let mut hi = root;
    while hi + 1 < tc.tokens.len() && candidate[hi + 1] {
        hi += 1;
    }
    (lo..=hi).filter(|&i| candidate[i]).collect()
}

/// Join the triplet back into its simplified caption text.
pub fn render_caption(t: &Triplet) -> String {
    format!("{} {} {}", t.subject.text, t.relation.text, t.object.text)
}
