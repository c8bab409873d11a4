//! Retrieval evaluation within hard-negative candidate sets.
//!
//! For each anchor with a non-empty negative set, the candidates are the
//! anchor plus its negatives; a hit requires the anchor's own counterpart
//! to rank strictly first by cosine (exact ties count as a miss). Anchors
//! without negatives are skipped and counted, never silently dropped.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::encoder::{EncoderError, EncoderParams};
use crate::linalg::dot;
use crate::synth::World;
use crate::triplet::VerbState;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("no anchor has a non-empty hard-negative set")]
    NoEvaluableAnchors,
    #[error("unknown subset {0:?}")]
    UnknownSubset(String),
    #[error("unsupported report format {0:?}")]
    UnsupportedFormat(String),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
}

/// Retrieval direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Direction {
    #[serde(rename = "text_to_image")]
    TextToImage,
    #[serde(rename = "image_to_text")]
    ImageToText,
}

/// Per-subset recall rates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SubsetRates {
    pub n: usize,
    pub r1_i2t: f64,
    pub r1_t2i: f64,
}

/// Machine-readable evaluation results.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub delta_acc: BTreeMap<String, f64>,
    pub n_anchors: usize,
    pub per_subset: BTreeMap<String, SubsetRates>,
    pub r1_image_to_text: f64,
    pub r1_text_to_image: f64,
    pub skipped_empty: usize,
}

/// Encoded world: one text and one image embedding per sample.
struct Embeddings {
    texts: Vec<Vec<f64>>,
    images: Vec<Vec<f64>>,
}

fn encode_world(params: &EncoderParams, world: &World) -> Result<Embeddings, EvalError> {
    let mut texts = Vec::with_capacity(world.samples.len());
    let mut images = Vec::with_capacity(world.samples.len());
    for (sample, &(s, r, o)) in world.samples.iter().zip(&world.triple_ids) {
        texts.push(params.encode_text(s, r, o)?);
        images.push(params.encode_image(&sample.image_features)?);
    }
    Ok(Embeddings { texts, images })
}

/// Hit test for one anchor: does its own counterpart rank strictly first
/// among the candidates?
fn anchor_hit(emb: &Embeddings, anchor: usize, candidates: &[usize], direction: Direction) -> bool {
    let (query, gallery): (&[f64], &Vec<Vec<f64>>) = match direction {
        Direction::TextToImage => (&emb.texts[anchor], &emb.images),
        Direction::ImageToText => (&emb.images[anchor], &emb.texts),
    };
    let own = dot(query, &gallery[anchor]);
    candidates
        .iter()
        .all(|&c| c == anchor || own > dot(query, &gallery[c]))
}

struct EvalCounts {
    evaluated: usize,
    hits_t2i: usize,
    hits_i2t: usize,
}

fn count_hits(world: &World, emb: &Embeddings, keep: impl Fn(usize) -> bool) -> EvalCounts {
    let index: std::collections::HashMap<&str, usize> = world
        .samples
        .iter()
        .enumerate()
        .map(|(i, s)| (s.id.as_str(), i))
        .collect();
    let mut counts = EvalCounts {
        evaluated: 0,
        hits_t2i: 0,
        hits_i2t: 0,
    };
    for (i, sample) in world.samples.iter().enumerate() {
        if !keep(i) {
            continue;
        }
        let hn = world.hnmap.get(&sample.id).unwrap_or(&[]);
        if hn.is_empty() {
            continue;
        }
        let mut candidates = Vec::with_capacity(hn.len() + 1);
        candidates.push(i);
        candidates.extend(hn.iter().filter_map(|id| index.get(id.as_str()).copied()));
        counts.evaluated += 1;
        if anchor_hit(emb, i, &candidates, Direction::TextToImage) {
            counts.hits_t2i += 1;
        }
        if anchor_hit(emb, i, &candidates, Direction::ImageToText) {
            counts.hits_i2t += 1;
        }
    }
    counts
}

/// R@1 over all anchors with non-empty negative sets, in one direction.
pub fn recall_at_1(
    params: &EncoderParams,
    world: &World,
    direction: Direction,
) -> Result<f64, EvalError> {
    let emb = encode_world(params, world)?;
    let counts = count_hits(world, &emb, |_| true);
    if counts.evaluated == 0 {
        return Err(EvalError::NoEvaluableAnchors);
    }
    let hits = match direction {
        Direction::TextToImage => counts.hits_t2i,
        Direction::ImageToText => counts.hits_i2t,
    };
    Ok(hits as f64 / counts.evaluated as f64)
}

/// Signed accuracy difference attributing impact to a subset.
pub fn delta_acc(subset_acc: f64, reference_acc: f64) -> f64 {
    subset_acc - reference_acc
}

/// Full evaluation: overall rates, optional per-state subsets, and the
/// signed text-to-image accuracy deltas against a named reference subset.
pub fn evaluate(
    params: &EncoderParams,
    world: &World,
    split_by_state: bool,
    reference_subset: Option<&str>,
) -> Result<EvalReport, EvalError> {
    let emb = encode_world(params, world)?;

    let overall = count_hits(world, &emb, |_| true);
    if overall.evaluated == 0 {
        return Err(EvalError::NoEvaluableAnchors);
    }
    let n_anchors = world.samples.len();
    let skipped_empty = n_anchors - overall.evaluated;

    let mut per_subset = BTreeMap::new();
    if split_by_state {
        for (name, state) in [
            ("stative", VerbState::Stative),
            ("dynamic", VerbState::Dynamic),
        ] {
            let counts = count_hits(world, &emb, |i| world.samples[i].state == state);
            if counts.evaluated > 0 {
                per_subset.insert(
                    name.to_string(),
                    SubsetRates {
                        n: counts.evaluated,
                        r1_t2i: counts.hits_t2i as f64 / counts.evaluated as f64,
                        r1_i2t: counts.hits_i2t as f64 / counts.evaluated as f64,
                    },
                );
            }
        }
    }

    let mut deltas = BTreeMap::new();
    if let Some(reference) = reference_subset {
        let reference_rates = per_subset
            .get(reference)
            .ok_or_else(|| EvalError::UnknownSubset(reference.to_string()))?;
        for (name, rates) in &per_subset {
            if name != reference {
                deltas.insert(
                    name.clone(),
                    delta_acc(rates.r1_t2i, reference_rates.r1_t2i),
                );
            }
        }
    }

    Ok(EvalReport {
        delta_acc: deltas,
        n_anchors,
        per_subset,
        r1_image_to_text: overall.hits_i2t as f64 / overall.evaluated as f64,
        r1_text_to_image: overall.hits_t2i as f64 / overall.evaluated as f64,
        skipped_empty,
    })
}

/// Output encodings for [`emit_report`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReportFormat {
    Json,
    Csv,
    PlotData,
}

impl std::str::FromStr for ReportFormat {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "json" => Ok(ReportFormat::Json),
            "csv" => Ok(ReportFormat::Csv),
            "plot-data" | "plot_data" => Ok(ReportFormat::PlotData),
            other => Err(EvalError::UnsupportedFormat(other.to_string())),
        }
    }
}

fn fmt6(v: f64) -> String {
    format!("{v:.6}")
}

fn json_escape(s: &str) -> String {
    let mut out = String::with_capacity(s.len());
    for c in s.chars() {
        match c {
            '"' => out.push_str("\\\""),
            '\\' => out.push_str("\\\\"),
            c if (c as u32) < 0x20 => out.push_str(&format!("\\u{:04x}", c as u32)),
            c => out.push(c),
        }
    }
    out
}

/// Serialize a report. JSON output is canonical: keys sorted and floats at
/// fixed six-decimal precision, so identical reports are byte-identical.
pub fn emit_report(report: &EvalReport, format: ReportFormat) -> Result<Vec<u8>, EvalError> {
    match format {
        ReportFormat::Json => {
            let mut out = String::from("{");
            out.push_str("\"delta_acc\":{");
            let mut first = true;
            for (name, v) in &report.delta_acc {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!("\"{}\":{}", json_escape(name), fmt6(*v)));
            }
            out.push_str("},");
            out.push_str(&format!("\"n_anchors\":{},", report.n_anchors));
            out.push_str("\"per_subset\":{");
            let mut first = true;
            for (name, rates) in &report.per_subset {
                if !first {
                    out.push(',');
                }
                first = false;
                out.push_str(&format!(
                    "\"{}\":{{\"n\":{},\"r1_i2t\":{},\"r1_t2i\":{}}}",
                    json_escape(name),
                    rates.n,
                    fmt6(rates.r1_i2t),
                    fmt6(rates.r1_t2i)
                ));
            }
            out.push_str("},");
            out.push_str(&format!(
                "\"r1_image_to_text\":{},",
                fmt6(report.r1_image_to_text)
            ));
            out.push_str(&format!(
                "\"r1_text_to_image\":{},",
                fmt6(report.r1_text_to_image)
            ));
            out.push_str(&format!("\"skipped_empty\":{}", report.skipped_empty));
            out.push_str("}\n");
            Ok(out.into_bytes())
        }
        ReportFormat::Csv => {
            let mut out = String::from("subset,direction,r1,n\n");
            let evaluated = report.n_anchors - report.skipped_empty;
            out.push_str(&format!(
                "overall,t2i,{},{evaluated}\n",
                fmt6(report.r1_text_to_image)
            ));
            out.push_str(&format!(
                "overall,i2t,{},{evaluated}\n",
                fmt6(report.r1_image_to_text)
            ));
            for (name, rates) in &report.per_subset {
                out.push_str(&format!("{name},t2i,{},{}\n", fmt6(rates.r1_t2i), rates.n));
                out.push_str(&format!("{name},i2t,{},{}\n", fmt6(rates.r1_i2t), rates.n));
            }
            Ok(out.into_bytes())
        }
        ReportFormat::PlotData => {
            // one (x, y) series per direction; x indexes overall + subsets
            let mut labels = vec!["overall".to_string()];
            labels.extend(report.per_subset.keys().cloned());
            let mut out = String::new();
            for (series, pick) in [("t2i", true), ("i2t", false)] {
                out.push_str(&format!("# series: {series}\n"));
                out.push_str("# x labels: ");
                out.push_str(&labels.join(" "));
                out.push('\n');
                let overall = if pick {
                    report.r1_text_to_image
                } else {
                    report.r1_image_to_text
                };
                out.push_str(&format!("0 {}\n", fmt6(overall)));
                for (i, (_, rates)) in report.per_subset.iter().enumerate() {
                    let v = if pick { rates.r1_t2i } else { rates.r1_i2t };
                    out.push_str(&format!("{} {}\n", i + 1, fmt6(v)));
                }
                out.push('\n');
            }
            Ok(out.into_bytes())
        }
    }
}
