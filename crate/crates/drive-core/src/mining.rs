//! Hard-negative mining over triplet datasets.
//!
//! CROCO negatives keep the subject and object and swap the relation;
//! directional (CROCO-D) negatives keep a synonymous relation and reverse
//! subject and object. `mine` is the memoized, worker-parallel miner;
//! `mine_reference` is the plain O(n^2) double loop kept as the oracle the
//! optimized path must match exactly.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::lexicon::EmbeddingLexicon;
use crate::similarity::{
    approx_equal, relation_approx_equal, triplet_approx_equal, SimilarityConfig, SimilarityError,
};
use crate::triplet::{Phrase, Sample, Triplet, VerbState};

/// Which negative family to mine.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DatasetMode {
    #[serde(rename = "croco")]
    Croco,
    #[serde(rename = "croco-d")]
    CrocoD,
}

impl std::str::FromStr for DatasetMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "croco" => Ok(DatasetMode::Croco),
            "croco-d" | "croco_d" | "crocod" => Ok(DatasetMode::CrocoD),
            other => Err(format!("unknown dataset mode: {other:?}")),
        }
    }
}

#[derive(Debug, Error)]
pub enum MiningError {
    #[error("duplicate sample id {0:?}")]
    DuplicateId(String),
    #[error("dataset is empty")]
    EmptyDataset,
    #[error("similarity failed for pair ({anchor:?}, {other:?}): {source}")]
    Similarity {
        anchor: String,
        other: String,
        source: SimilarityError,
    },
}

/// Map from each anchor sample to its hard negatives, in source-dataset
/// order for both anchors and lists. Persisted entry-by-entry as JSONL;
/// construct via [`HnMap::from_entries`] so the lookup index stays
/// consistent.
#[derive(Debug, Clone, Default)]
pub struct HnMap {
    entries: Vec<HnEntry>,
    index: HashMap<String, usize>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HnEntry {
    pub anchor: String,
    pub hn: Vec<String>,
}

impl PartialEq for HnMap {
    fn eq(&self, other: &Self) -> bool {
        self.entries == other.entries
    }
}

impl HnMap {
    pub fn from_entries(entries: Vec<HnEntry>) -> Self {
        let index = entries
            .iter()
            .enumerate()
            .map(|(i, e)| (e.anchor.clone(), i))
            .collect();
        Self { entries, index }
    }

    pub fn get(&self, anchor_id: &str) -> Option<&[String]> {
        self.index
            .get(anchor_id)
            .map(|&i| self.entries[i].hn.as_slice())
    }

    pub fn entries(&self) -> &[HnEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn non_empty_anchors(&self) -> usize {
        self.entries.iter().filter(|e| !e.hn.is_empty()).count()
    }

    /// Check the structural invariants against a source dataset: anchors
    /// never self-reference, all ids resolve, lists are duplicate-free.
    pub fn validate(&self, dataset: &[Sample]) -> Result<(), MiningError> {
        let known: HashMap<&str, ()> = dataset.iter().map(|s| (s.id.as_str(), ())).collect();
        for entry in &self.entries {
            if !known.contains_key(entry.anchor.as_str()) {
                return Err(MiningError::DuplicateId(format!(
                    "unresolved anchor {}",
                    entry.anchor
                )));
            }
            let mut seen = std::collections::HashSet::new();
            for id in &entry.hn {
                if id == &entry.anchor {
                    return Err(MiningError::DuplicateId(format!(
                        "anchor {} references itself",
                        entry.anchor
                    )));
                }
                if !known.contains_key(id.as_str()) {
                    return Err(MiningError::DuplicateId(format!("unresolved id {id}")));
                }
                if !seen.insert(id) {
                    return Err(MiningError::DuplicateId(format!(
                        "duplicate id {id} under anchor {}",
                        entry.anchor
                    )));
                }
            }
        }
        Ok(())
    }
}

/// CROCO hard-negative predicate: same subject, same object, different
/// relation, and the full triplets must not be approximately equal (the
/// context veto for relations like "is in" vs "flies through").
pub fn is_croco_hn(
    ti: &Triplet,
    tj: &Triplet,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
) -> Result<bool, SimilarityError> {
    if !approx_equal(&ti.subject, &tj.subject, lex, cfg)? {
        return Ok(false);
    }
    if relation_approx_equal(&ti.relation, &tj.relation, lex, cfg)? {
        return Ok(false);
    }
    if !approx_equal(&ti.object, &tj.object, lex, cfg)? {
        return Ok(false);
    }
    Ok(!triplet_approx_equal(ti, tj, lex, cfg)?)
}

/// Directional hard-negative predicate: subject and object reversed,
/// synonymous relation, excluding self-symmetric captions (subject
/// approximately equal to its own object).
pub fn is_crocod_hn(
    ti: &Triplet,
    tj: &Triplet,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
) -> Result<bool, SimilarityError> {
    if !approx_equal(&ti.subject, &tj.object, lex, cfg)? {
        return Ok(false);
    }
    if !approx_equal(&ti.object, &tj.subject, lex, cfg)? {
        return Ok(false);
    }
    if !relation_approx_equal(&ti.relation, &tj.relation, lex, cfg)? {
        return Ok(false);
    }
    Ok(!approx_equal(&ti.subject, &ti.object, lex, cfg)?)
}

fn check_unique_ids(dataset: &[Sample]) -> Result<(), MiningError> {
    let mut seen = std::collections::HashSet::new();
    for s in dataset {
        if !seen.insert(s.id.as_str()) {
            return Err(MiningError::DuplicateId(s.id.clone()));
        }
    }
    Ok(())
}

fn crocod_pair_admitted(a: &Sample, b: &Sample) -> bool {
    a.bidirectional_plausible && b.bidirectional_plausible
}

/// Straightforward O(n^2) reference miner. Kept deliberately naive; the
/// optimized [`mine`] must produce an identical map.
pub fn mine_reference(
    dataset: &[Sample],
    mode: DatasetMode,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
) -> Result<HnMap, MiningError> {
    check_unique_ids(dataset)?;
    let mut entries = Vec::with_capacity(dataset.len());
    for (i, si) in dataset.iter().enumerate() {
        let mut hn = Vec::new();
        for (j, sj) in dataset.iter().enumerate() {
            if i == j {
                continue;
            }
            let wrap = |source: SimilarityError| MiningError::Similarity {
                anchor: si.id.clone(),
                other: sj.id.clone(),
                source,
            };
            let keep = match mode {
                DatasetMode::Croco => {
                    // the triplet veto is applied in both orientations so
                    // membership stays symmetric
                    is_croco_hn(&si.triplet, &sj.triplet, lex, cfg).map_err(wrap)?
                        && !triplet_approx_equal(&sj.triplet, &si.triplet, lex, cfg)
                            .map_err(wrap)?
                }
                DatasetMode::CrocoD => {
                    crocod_pair_admitted(si, sj)
                        && is_crocod_hn(&si.triplet, &sj.triplet, lex, cfg).map_err(wrap)?
                }
            };
            if keep {
                hn.push(sj.id.clone());
            }
        }
        entries.push(HnEntry {
            anchor: si.id.clone(),
            hn,
        });
    }
    Ok(HnMap::from_entries(entries))
}

// ---------------------------------------------------------------------------
// Memoized miner
// ---------------------------------------------------------------------------

/// Interned per-sample phrase keys. Two phrases share a key only when their
/// full token sequences (surfaces and lemmas) match, which makes memoized
/// predicate results exact.
struct SampleKeys {
    subject: u32,
    relation: u32,
    object: u32,
}

struct Interner {
    map: HashMap<String, u32>,
}

impl Interner {
    fn new() -> Self {
        Self {
            map: HashMap::new(),
        }
    }

    fn key_of(phrase: &Phrase) -> String {
        let mut k = String::new();
        for t in &phrase.tokens {
            k.push_str(&t.surface);
            k.push('\u{1f}');
            k.push_str(&t.lemma);
            k.push('\u{1e}');
        }
        k
    }

    fn intern(&mut self, phrase: &Phrase) -> u32 {
        let key = Self::key_of(phrase);
        let next = self.map.len() as u32;
        *self.map.entry(key).or_insert(next)
    }
}

type MemoResult = Result<bool, SimilarityError>;
type TripletKey = (u32, u32, u32);

/// Per-worker memo over interned phrase and triplet keys.
struct PairMemo<'a> {
    lex: &'a EmbeddingLexicon,
    cfg: &'a SimilarityConfig,
    phrase_eq: HashMap<(u32, u32), MemoResult>,
    veto: HashMap<(TripletKey, TripletKey), MemoResult>,
}

impl<'a> PairMemo<'a> {
    fn new(lex: &'a EmbeddingLexicon, cfg: &'a SimilarityConfig) -> Self {
        Self {
            lex,
            cfg,
            phrase_eq: HashMap::new(),
            veto: HashMap::new(),
        }
    }

    fn phrase(
        &mut self,
        ka: u32,
        kb: u32,
        a: &Phrase,
        b: &Phrase,
    ) -> Result<bool, SimilarityError> {
        // approx_equal is exactly symmetric, so one orientation suffices
        let key = if ka <= kb { (ka, kb) } else { (kb, ka) };
        if let Some(r) = self.phrase_eq.get(&key) {
            return r.clone();
        }
        let r = approx_equal(a, b, self.lex, self.cfg);
        self.phrase_eq.insert(key, r.clone());
        r
    }

    fn triplet_veto(
        &mut self,
        ki: TripletKey,
        kj: TripletKey,
        ti: &Triplet,
        tj: &Triplet,
    ) -> Result<bool, SimilarityError> {
        // anchor-sided standardization: orientation matters
        if let Some(r) = self.veto.get(&(ki, kj)) {
            return r.clone();
        }
        let r = triplet_approx_equal(ti, tj, self.lex, self.cfg);
        self.veto.insert((ki, kj), r.clone());
        r
    }

    fn croco_pair(
        &mut self,
        si: &Sample,
        sj: &Sample,
        ki: &SampleKeys,
        kj: &SampleKeys,
    ) -> Result<bool, SimilarityError> {
        let (ti, tj) = (&si.triplet, &sj.triplet);
        if !self.phrase(ki.subject, kj.subject, &ti.subject, &tj.subject)? {
            return Ok(false);
        }
        if self.phrase(ki.relation, kj.relation, &ti.relation, &tj.relation)? {
            return Ok(false);
        }
        if !self.phrase(ki.object, kj.object, &ti.object, &tj.object)? {
            return Ok(false);
        }
        let key_i = (ki.subject, ki.relation, ki.object);
        let key_j = (kj.subject, kj.relation, kj.object);
        if self.triplet_veto(key_i, key_j, ti, tj)? {
            return Ok(false);
        }
        Ok(!self.triplet_veto(key_j, key_i, tj, ti)?)
    }

    fn crocod_pair(
        &mut self,
        si: &Sample,
        sj: &Sample,
        ki: &SampleKeys,
        kj: &SampleKeys,
    ) -> Result<bool, SimilarityError> {
        if !crocod_pair_admitted(si, sj) {
            return Ok(false);
        }
        let (ti, tj) = (&si.triplet, &sj.triplet);
        if !self.phrase(ki.subject, kj.object, &ti.subject, &tj.object)? {
            return Ok(false);
        }
        if !self.phrase(ki.object, kj.subject, &ti.object, &tj.subject)? {
            return Ok(false);
        }
        if !self.phrase(ki.relation, kj.relation, &ti.relation, &tj.relation)? {
            return Ok(false);
        }
        Ok(!self.phrase(ki.subject, ki.object, &ti.subject, &ti.object)?)
    }
}

/// Mine hard negatives with memoized pair predicates, single worker.
pub fn mine(
    dataset: &[Sample],
    mode: DatasetMode,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
) -> Result<HnMap, MiningError> {
    mine_with_workers(dataset, mode, lex, cfg, 1)
}

/// Mine hard negatives across `workers` threads. Anchors are split into
/// contiguous chunks and results merged in anchor order, so the output is
/// identical for any worker count.
pub fn mine_with_workers(
    dataset: &[Sample],
    mode: DatasetMode,
    lex: &EmbeddingLexicon,
    cfg: &SimilarityConfig,
    workers: usize,
) -> Result<HnMap, MiningError> {
    check_unique_ids(dataset)?;
    let workers = workers.max(1);
    let n = dataset.len();

    let mut interner = Interner::new();
    let keys: Vec<SampleKeys> = dataset
        .iter()
        .map(|s| SampleKeys {
            subject: interner.intern(&s.triplet.subject),
            relation: interner.intern(&s.triplet.relation),
            object: interner.intern(&s.triplet.object),
        })
        .collect();
    let keys = &keys;

    let chunk = n.div_ceil(workers).max(1);
    let ranges: Vec<std::ops::Range<usize>> = (0..workers)
        .map(|w| (w * chunk).min(n)..((w + 1) * chunk).min(n))
        .filter(|r| !r.is_empty())
        .collect();

    let mine_range = |range: std::ops::Range<usize>| -> Result<Vec<Vec<String>>, MiningError> {
        let mut memo = PairMemo::new(lex, cfg);
        let mut rows = Vec::with_capacity(range.len());
        for i in range {
            let si = &dataset[i];
            let mut hn = Vec::new();
            for (j, sj) in dataset.iter().enumerate() {
                if i == j {
                    continue;
                }
                let keep = match mode {
                    DatasetMode::Croco => memo.croco_pair(si, sj, &keys[i], &keys[j]),
                    DatasetMode::CrocoD => memo.crocod_pair(si, sj, &keys[i], &keys[j]),
                }
                .map_err(|source| MiningError::Similarity {
                    anchor: si.id.clone(),
                    other: sj.id.clone(),
                    source,
                })?;
                if keep {
                    hn.push(sj.id.clone());
                }
            }
            rows.push(hn);
        }
        Ok(rows)
    };

    let results: Vec<Result<Vec<Vec<String>>, MiningError>> = if ranges.len() == 1 {
        vec![mine_range(ranges[0].clone())]
    } else {
        std::thread::scope(|scope| {
            let handles: Vec<_> = ranges
                .iter()
                .cloned()
                .map(|r| scope.spawn(move || mine_range(r)))
                .collect();
            handles
                .into_iter()
                .map(|h| h.join().expect("mining worker panicked"))
                .collect()
        })
    };

    let mut entries = Vec::with_capacity(n);
    let mut anchor_iter = dataset.iter();
    for worker_rows in results {
        for hn in worker_rows? {
            let anchor = anchor_iter.next().expect("row per anchor").id.clone();
            entries.push(HnEntry { anchor, hn });
        }
    }
    Ok(HnMap::from_entries(entries))
}

/// Partition a dataset by verb state, preserving input order.
pub fn split_by_state(dataset: &[Sample]) -> (Vec<Sample>, Vec<Sample>) {
    let mut stative = Vec::new();
    let mut dynamic = Vec::new();
    for s in dataset {
        match s.state {
            VerbState::Stative => stative.push(s.clone()),
            VerbState::Dynamic => dynamic.push(s.clone()),
        }
    }
    (stative, dynamic)
}

/// Corpus-level statistics over relations and entities.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetStats {
    pub caption_count: usize,
    pub distinct_relations: usize,
    pub mean_relation_frequency: f64,
    pub std_relation_frequency: f64,
    pub distinct_entities: usize,
    pub mean_relations_per_entity: f64,
    pub std_relations_per_entity: f64,
}

fn population_mean_std(counts: &[usize]) -> (f64, f64) {
    let n = counts.len() as f64;
    let mean = counts.iter().map(|&c| c as f64).sum::<f64>() / n;
    let var = counts
        .iter()
        .map(|&c| {
            let d = c as f64 - mean;
            d * d
        })
        .sum::<f64>()
        / n;
    (mean, var.sqrt())
}

/// Relation-frequency and relations-per-entity statistics (population
/// standard deviations).
pub fn dataset_stats(dataset: &[Sample]) -> Result<DatasetStats, MiningError> {
    if dataset.is_empty() {
        return Err(MiningError::EmptyDataset);
    }

    // first-appearance order keeps float reductions deterministic
    let mut relation_order: Vec<String> = Vec::new();
    let mut relation_counts: HashMap<String, usize> = HashMap::new();
    let mut entity_order: Vec<String> = Vec::new();
    let mut entity_relations: HashMap<String, std::collections::HashSet<String>> = HashMap::new();

    for s in dataset {
        let rel = s.triplet.relation.text.clone();
        if !relation_counts.contains_key(&rel) {
            relation_order.push(rel.clone());
        }
        *relation_counts.entry(rel.clone()).or_insert(0) += 1;

        for entity in [&s.triplet.subject.text, &s.triplet.object.text] {
            if !entity_relations.contains_key(entity) {
                entity_order.push(entity.clone());
            }
            entity_relations
                .entry(entity.clone())
                .or_default()
                .insert(rel.clone());
        }
    }

    let freq: Vec<usize> = relation_order.iter().map(|r| relation_counts[r]).collect();
    let per_entity: Vec<usize> = entity_order
        .iter()
        .map(|e| entity_relations[e].len())
        .collect();

    let (mean_rel, std_rel) = population_mean_std(&freq);
    let (mean_ent, std_ent) = population_mean_std(&per_entity);

    Ok(DatasetStats {
        caption_count: dataset.len(),
        distinct_relations: relation_order.len(),
        mean_relation_frequency: mean_rel,
        std_relation_frequency: std_rel,
        distinct_entities: entity_order.len(),
        mean_relations_per_entity: mean_ent,
        std_relations_per_entity: std_ent,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::triplet::Triplet;

    /// Every word gets its own axis; approximate equality then reduces to
    /// exact word identity plus any synonym sets.
    pub(crate) fn one_hot_lexicon(words: &[&str]) -> EmbeddingLexicon {
        let mut lex = EmbeddingLexicon::new(words.len());
        for (i, w) in words.iter().enumerate() {
            let mut v = vec![0.0; words.len()];
            v[i] = 1.0;
            lex.insert(w, v);
        }
        lex
    }

    pub(crate) fn sample(id: &str, s: &str, r: &str, o: &str) -> Sample {
        Sample {
            id: id.to_string(),
            raw_caption: format!("{s} {r} {o}"),
            triplet: Triplet::from_texts(s, r, o),
            state: VerbState::Dynamic,
            scene_relation_count: 1,
            object_count: 1,
            image_features: vec![],
            bidirectional_plausible: true,
        }
    }

    #[test]
    fn croco_predicate_on_relation_swap() {
        let lex = one_hot_lexicon(&["man", "driving", "entering", "car"]);
        let cfg = SimilarityConfig::default();
        let a = Triplet::from_texts("man", "driving", "car");
        let b = Triplet::from_texts("man", "entering", "car");
        assert!(is_croco_hn(&a, &b, &lex, &cfg).unwrap());
        assert!(!is_croco_hn(&a, &a, &lex, &cfg).unwrap());
    }

    #[test]
    fn croco_veto_blocks_contextually_equal_triplets() {
        // relation cosine 0.92 < tau, but caption cosine (2 + 4*0.92)/6 =
        // 0.9467 >= tau: the full-form veto must fire.
        let c: f64 = 0.92;
        let s = (1.0 - c * c).sqrt();
        let mut lex = EmbeddingLexicon::new(4);
        lex.insert("plane", vec![1.0, 0.0, 0.0, 0.0]);
        lex.insert("sky", vec![0.0, 1.0, 0.0, 0.0]);
        lex.insert("is", vec![0.0, 0.0, 1.0, 0.0]);
        lex.insert("in", vec![0.0, 0.0, 1.0, 0.0]);
        lex.insert("flies", vec![0.0, 0.0, c, s]);
        lex.insert("through", vec![0.0, 0.0, c, s]);
        let cfg = SimilarityConfig::default();

        let a = Triplet::from_texts("plane", "is in", "sky");
        let b = Triplet::from_texts("plane", "flies through", "sky");
        assert!(
            !relation_approx_equal(&a.relation, &b.relation, &lex, &cfg).unwrap(),
            "relations must sit below tau"
        );
        assert!(
            triplet_approx_equal(&a, &b, &lex, &cfg).unwrap(),
            "captions must sit above tau"
        );
        assert!(!is_croco_hn(&a, &b, &lex, &cfg).unwrap());
    }

    #[test]
    fn crocod_predicate_on_direction_reversal() {
        let lex = one_hot_lexicon(&["bride", "feeds", "groom"]);
        let cfg = SimilarityConfig::default();
        let a = Triplet::from_texts("bride", "feeds", "groom");
        let b = Triplet::from_texts("groom", "feeds", "bride");
        assert!(is_crocod_hn(&a, &b, &lex, &cfg).unwrap());
        assert!(is_crocod_hn(&b, &a, &lex, &cfg).unwrap());
        // same caption twice: direction not reversed
        assert!(!is_crocod_hn(&a, &a, &lex, &cfg).unwrap());
    }

    #[test]
    fn crocod_predicate_ignores_plausibility() {
        // plausibility is a dataset property; the bare predicate accepts
        // implausible reversals like "pasta eats man"
        let lex = one_hot_lexicon(&["man", "eats", "pasta"]);
        let cfg = SimilarityConfig::default();
        let a = Triplet::from_texts("man", "eats", "pasta");
        let b = Triplet::from_texts("pasta", "eats", "man");
        assert!(is_crocod_hn(&a, &b, &lex, &cfg).unwrap());
    }

    #[test]
    fn mine_three_sample_example() {
        let lex = one_hot_lexicon(&["man", "drives", "enters", "car", "dog", "eats", "food"]);
        let cfg = SimilarityConfig::default();
        let data = vec![
            sample("1", "man", "drives", "car"),
            sample("2", "man", "enters", "car"),
            sample("3", "dog", "eats", "food"),
        ];
        let map = mine(&data, DatasetMode::Croco, &lex, &cfg).unwrap();
        assert_eq!(map.get("1").unwrap(), &["2".to_string()]);
        assert_eq!(map.get("2").unwrap(), &["1".to_string()]);
        assert_eq!(map.get("3").unwrap(), &[] as &[String]);

        // brute-force oracle agrees
        let oracle = mine_reference(&data, DatasetMode::Croco, &lex, &cfg).unwrap();
        assert_eq!(map, oracle);
    }

    #[test]
    fn mine_empty_dataset() {
        let lex = one_hot_lexicon(&[]);
        let cfg = SimilarityConfig::default();
        let map = mine(&[], DatasetMode::Croco, &lex, &cfg).unwrap();
        assert!(map.is_empty());
    }

    #[test]
    fn crocod_mine_maps_reversed_pairs_to_each_other() {
        let lex = one_hot_lexicon(&["bride", "feeds", "groom"]);
        let cfg = SimilarityConfig::default();
        let data = vec![
            sample("a", "bride", "feeds", "groom"),
            sample("b", "groom", "feeds", "bride"),
        ];
        let map = mine(&data, DatasetMode::CrocoD, &lex, &cfg).unwrap();
        assert_eq!(map.get("a").unwrap(), &["b".to_string()]);
        assert_eq!(map.get("b").unwrap(), &["a".to_string()]);
    }

    #[test]
    fn implausible_samples_are_skipped_in_crocod() {
        let lex = one_hot_lexicon(&["man", "eats", "pasta"]);
        let cfg = SimilarityConfig::default();
        let mut data = vec![
            sample("a", "man", "eats", "pasta"),
            sample("b", "pasta", "eats", "man"),
        ];
        data[1].bidirectional_plausible = false;
        let map = mine(&data, DatasetMode::CrocoD, &lex, &cfg).unwrap();
        assert!(map.get("a").unwrap().is_empty());
        assert!(map.get("b").unwrap().is_empty());
        let oracle = mine_reference(&data, DatasetMode::CrocoD, &lex, &cfg).unwrap();
        assert_eq!(map, oracle);
    }

    #[test]
    fn duplicate_ids_are_rejected() {
        let lex = one_hot_lexicon(&["man", "drives", "car"]);
        let cfg = SimilarityConfig::default();
        let data = vec![
            sample("x", "man", "drives", "car"),
            sample("x", "man", "drives", "car"),
        ];
        assert!(matches!(
            mine(&data, DatasetMode::Croco, &lex, &cfg),
            Err(MiningError::DuplicateId(_))
        ));
    }

    #[test]
    fn similarity_errors_identify_the_pair() {
        // "ghost" has no vectors -> subject comparison fails for (1, 2)
        let lex = one_hot_lexicon(&["man", "drives", "enters", "car"]);
        let cfg = SimilarityConfig::default();
        let data = vec![
            sample("1", "ghost", "drives", "car"),
            sample("2", "man", "enters", "car"),
        ];
        match mine(&data, DatasetMode::Croco, &lex, &cfg) {
            Err(MiningError::Similarity { anchor, other, .. }) => {
                assert_eq!(anchor, "1");
                assert_eq!(other, "2");
            }
            other => panic!("expected similarity error, got {other:?}"),
        }
    }

    #[test]
    fn worker_counts_do_not_change_the_map() {
        let lex = one_hot_lexicon(&["man", "dog", "drives", "enters", "rides", "car", "bike"]);
        let cfg = SimilarityConfig::default();
        let mut data = Vec::new();
        let subjects = ["man", "dog"];
        let relations = ["drives", "enters", "rides"];
        let objects = ["car", "bike"];
        let mut k = 0;
        for s in &subjects {
            for r in &relations {
                for o in &objects {
                    data.push(sample(&format!("s{k}"), s, r, o));
                    k += 1;
                }
            }
        }
        let one = mine_with_workers(&data, DatasetMode::Croco, &lex, &cfg, 1).unwrap();
        let two = mine_with_workers(&data, DatasetMode::Croco, &lex, &cfg, 2).unwrap();
        let eight = mine_with_workers(&data, DatasetMode::Croco, &lex, &cfg, 8).unwrap();
        assert_eq!(one, two);
        assert_eq!(one, eight);
        assert_eq!(
            one,
            mine_reference(&data, DatasetMode::Croco, &lex, &cfg).unwrap()
        );
    }

    #[test]
    fn split_preserves_order_and_partitions() {
        let mut data: Vec<Sample> = (0..10)
            .map(|i| sample(&format!("s{i}"), "man", "drives", "car"))
            .collect();
        for i in [1usize, 3, 4, 8] {
            data[i].state = VerbState::Stative;
        }
        let (stative, dynamic) = split_by_state(&data);
        assert_eq!(stative.len(), 4);
        assert_eq!(dynamic.len(), 6);
        assert_eq!(stative.len() + dynamic.len(), data.len());
        let ids: Vec<&str> = stative.iter().map(|s| s.id.as_str()).collect();
        assert_eq!(ids, ["s1", "s3", "s4", "s8"]);

        let all_dynamic: Vec<Sample> = (0..3)
            .map(|i| sample(&format!("d{i}"), "man", "drives", "car"))
            .collect();
        let (s, d) = split_by_state(&all_dynamic);
        assert!(s.is_empty());
        assert_eq!(d.len(), 3);
    }

    #[test]
    fn stats_on_single_sample() {
        let stats = dataset_stats(&[sample("1", "man", "drives", "car")]).unwrap();
        assert_eq!(stats.caption_count, 1);
        assert_eq!(stats.distinct_relations, 1);
        assert_eq!(stats.mean_relation_frequency, 1.0);
        assert_eq!(stats.std_relation_frequency, 0.0);
        assert_eq!(stats.distinct_entities, 2);
    }

    #[test]
    fn stats_hand_counted_fixture() {
        // relations {a, a, a, b} -> distinct 2, mean 2, population std 1
        let data = vec![
            sample("1", "man", "a", "car"),
            sample("2", "man", "a", "bike"),
            sample("3", "dog", "a", "car"),
            sample("4", "dog", "b", "car"),
        ];
        let stats = dataset_stats(&data).unwrap();
        assert_eq!(stats.distinct_relations, 2);
        assert_eq!(stats.mean_relation_frequency, 2.0);
        assert_eq!(stats.std_relation_frequency, 1.0);
        // entities: man {a}, car {a, b}, bike {a}, dog {a, b}
        assert_eq!(stats.distinct_entities, 4);
        assert_eq!(stats.mean_relations_per_entity, 1.5);

        // frequencies sum back to the caption count
        assert_eq!(
            (stats.mean_relation_frequency * stats.distinct_relations as f64).round() as usize,
            stats.caption_count
        );
    }

    #[test]
    fn stats_reject_empty_datasets() {
        assert!(matches!(dataset_stats(&[]), Err(MiningError::EmptyDataset)));
    }
}
