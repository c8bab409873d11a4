//! The contrastive loss family with analytic gradients.
//!
//! `clip_loss` is the symmetric softmax cross-entropy over an image/text
//! similarity matrix. `croco_loss` confines it to one anchor pair plus its
//! hard negatives. `hn_text_loss` / `hn_image_loss` penalize residual
//! similarity between the anchor and its negatives, and `hn_loss` composes
//! all three; `batch_loss` sums composed losses over mini-batches in fixed
//! order.
//!
//! All arithmetic is f64 with left-to-right reductions, so results are
//! bitwise reproducible. Gradients are taken with respect to the
//! pre-normalization embeddings: row normalization happens inside each loss
//! and its Jacobian is part of the chain.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::linalg::{dot, norm, Mat};

#[derive(Debug, Error, PartialEq)]
pub enum LossError {
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("batch contains no mini-batches")]
    EmptyBatch,
}

/// Loss hyperparameters: the similarity scale and the text/image
/// hard-negative weights.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossConfig {
    pub scale: f64,
    pub delta_t: f64,
    pub delta_i: f64,
}

impl Default for LossConfig {
    fn default() -> Self {
        Self {
            // exp of a logit initialized at ln(1/0.07), inside [1, 100]
            scale: 1.0 / 0.07,
            delta_t: 0.615,
            delta_i: 1.223,
        }
    }
}

impl LossConfig {
    pub fn validate(&self) -> Result<(), LossError> {
        if !(self.scale > 0.0 && self.scale.is_finite()) {
            return Err(LossError::NonFinite(format!("scale = {}", self.scale)));
        }
        if !(self.delta_t >= 0.0 && self.delta_i >= 0.0) {
            return Err(LossError::DimensionMismatch(format!(
                "deltas must be non-negative, got delta_t={} delta_i={}",
                self.delta_t, self.delta_i
            )));
        }
        Ok(())
    }
}

/// One anchor pair plus its hard negatives, as embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatch {
    pub anchor_text: Vec<f64>,
    pub anchor_image: Vec<f64>,
    pub hn_texts: Mat,
    pub hn_images: Mat,
}

impl MiniBatch {
    /// Strict constructor: uniform dimensions, matching negative counts,
    /// and every row unit-norm to within 1e-9.
    pub fn new(
        anchor_text: Vec<f64>,
        anchor_image: Vec<f64>,
        hn_texts: Mat,
        hn_images: Mat,
    ) -> Result<Self, LossError> {
        let mb = Self::from_raw(anchor_text, anchor_image, hn_texts, hn_images)?;
        for (label, row) in mb.rows() {
            let n = norm(row);
            if (n - 1.0).abs() > 1e-9 {
                return Err(LossError::DimensionMismatch(format!(
                    "{label} has norm {n}, expected 1"
                )));
            }
        }
        Ok(mb)
    }

    /// Shape-checked constructor without the unit-norm requirement; the
    /// losses normalize internally. Used by the gradient checker, which
    /// perturbs raw entries.
    pub fn from_raw(
        anchor_text: Vec<f64>,
        anchor_image: Vec<f64>,
        hn_texts: Mat,
        hn_images: Mat,
    ) -> Result<Self, LossError> {
        let d = anchor_text.len();
        if d == 0 {
            return Err(LossError::DimensionMismatch("empty anchor".into()));
        }
        if anchor_image.len() != d {
            return Err(LossError::DimensionMismatch(format!(
                "anchor image dim {} vs text dim {}",
                anchor_image.len(),
                d
            )));
        }
        if hn_texts.rows() != hn_images.rows() {
            return Err(LossError::DimensionMismatch(format!(
                "{} hard-negative texts vs {} images",
                hn_texts.rows(),
                hn_images.rows()
            )));
        }
        if hn_texts.rows() > 0 && (hn_texts.cols() != d || hn_images.cols() != d) {
            return Err(LossError::DimensionMismatch(format!(
                "hard-negative dims {}x{} vs anchor dim {}",
                hn_texts.cols(),
                hn_images.cols(),
                d
            )));
        }
        let mb = Self {
            anchor_text,
            anchor_image,
            hn_texts,
            hn_images,
        };
        for (label, row) in mb.rows() {
            if !row.iter().all(|v| v.is_finite()) {
                return Err(LossError::NonFinite(label));
            }
        }
        Ok(mb)
    }

    pub fn hn_count(&self) -> usize {
        self.hn_texts.rows()
    }

    pub fn dim(&self) -> usize {
        self.anchor_text.len()
    }

    fn rows(&self) -> Vec<(String, &[f64])> {
        let mut rows = vec![
            ("anchor_text".to_string(), self.anchor_text.as_slice()),
            ("anchor_image".to_string(), self.anchor_image.as_slice()),
        ];
        for i in 0..self.hn_texts.rows() {
            rows.push((format!("hn_texts[{i}]"), self.hn_texts.row(i)));
        }
        for i in 0..self.hn_images.rows() {
            rows.push((format!("hn_images[{i}]"), self.hn_images.row(i)));
        }
        rows
    }
}

/// The four loss values of one mini-batch.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub l_croco: f64,
    pub l_hn_text: f64,
    pub l_hn_image: f64,
    pub l_hn: f64,
}

/// Gradients of a matrix-level loss with respect to its inputs.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipGrads {
    pub d_images: Mat,
    pub d_texts: Mat,
    pub d_scale: f64,
}

/// Gradients of a mini-batch loss with respect to all embedding rows.
#[derive(Debug, Clone, PartialEq)]
pub struct MiniBatchGrads {
    pub d_anchor_text: Vec<f64>,
    pub d_anchor_image: Vec<f64>,
    pub d_hn_texts: Mat,
    pub d_hn_images: Mat,
    pub d_scale: f64,
}

impl MiniBatchGrads {
    fn zeros(dim: usize, hn: usize) -> Self {
        Self {
            d_anchor_text: vec![0.0; dim],
            d_anchor_image: vec![0.0; dim],
            d_hn_texts: Mat::zeros(hn, dim),
            d_hn_images: Mat::zeros(hn, dim),
            d_scale: 0.0,
        }
    }
}

fn normalize_rows(m: &Mat, label: &str) -> Result<(Mat, Vec<f64>), LossError> {
    let mut unit = Mat::zeros(m.rows(), m.cols());
    let mut norms = Vec::with_capacity(m.rows());
    for i in 0..m.rows() {
        let row = m.row(i);
        let n = norm(row);
        if n == 0.0 || !n.is_finite() {
            return Err(LossError::NonFinite(format!("{label} row {i} norm")));
        }
        for (j, &v) in row.iter().enumerate() {
            unit.set(i, j, v / n);
        }
        norms.push(n);
    }
    Ok((unit, norms))
}

/// Pull a gradient on the unit vector back through L2 normalization:
/// `d_raw = (g - (g . u) u) / n`.
fn backprop_normalize(g_unit: &[f64], unit: &[f64], raw_norm: f64) -> Vec<f64> {
    let radial = dot(g_unit, unit);
    g_unit
        .iter()
        .zip(unit)
        .map(|(&g, &u)| (g - radial * u) / raw_norm)
        .collect()
}

/// Symmetric contrastive loss over an N x N similarity matrix with
/// diagonal labels: the mean of softmax cross-entropies over rows and over
/// columns, halved. Returns the loss and gradients (including d/d scale).
pub fn clip_loss(images: &Mat, texts: &Mat, scale: f64) -> Result<(f64, ClipGrads), LossError> {
    let n = images.rows();
    if n == 0 {
        return Err(LossError::DimensionMismatch("empty batch".into()));
    }
    if texts.rows() != n || texts.cols() != images.cols() {
        return Err(LossError::DimensionMismatch(format!(
            "images {}x{} vs texts {}x{}",
            images.rows(),
            images.cols(),
            texts.rows(),
            texts.cols()
        )));
    }
    if !(scale > 0.0 && scale.is_finite()) {
        return Err(LossError::NonFinite(format!("scale = {scale}")));
    }
    if !images.is_finite() {
        return Err(LossError::NonFinite("images".into()));
    }
    if !texts.is_finite() {
        return Err(LossError::NonFinite("texts".into()));
    }

    let (img_unit, img_norms) = normalize_rows(images, "images")?;
    let (txt_unit, txt_norms) = normalize_rows(texts, "texts")?;

    let mut logits = Mat::zeros(n, n);
    for i in 0..n {
        for j in 0..n {
            logits.set(i, j, scale * dot(img_unit.row(i), txt_unit.row(j)));
        }
    }

    // image -> text direction: softmax over each row
    let mut row_softmax = Mat::zeros(n, n);
    let mut loss_rows = 0.0;
    for i in 0..n {
        let row = logits.row(i);
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let mut z = 0.0;
        for &v in row {
            z += (v - m).exp();
        }
        let lse = m + z.ln();
        loss_rows += lse - logits.get(i, i);
        for j in 0..n {
            row_softmax.set(i, j, (logits.get(i, j) - lse).exp());
        }
    }

    // text -> image direction: softmax over each column
    let mut col_softmax = Mat::zeros(n, n);
    let mut loss_cols = 0.0;
    for j in 0..n {
        let mut m = f64::NEG_INFINITY;
        for i in 0..n {
            m = m.max(logits.get(i, j));
        }
        let mut z = 0.0;
        for i in 0..n {
            z += (logits.get(i, j) - m).exp();
        }
        let lse = m + z.ln();
        loss_cols += lse - logits.get(j, j);
        for i in 0..n {
            col_softmax.set(i, j, (logits.get(i, j) - lse).exp());
        }
    }

    let loss = 0.5 * (loss_rows / n as f64 + loss_cols / n as f64);
    if !loss.is_finite() {
        return Err(LossError::NonFinite("loss".into()));
    }

    // dLoss/dlogits, both directions combined
    let mut g = Mat::zeros(n, n);
    let inv_2n = 1.0 / (2.0 * n as f64);
    for i in 0..n {
        for j in 0..n {
            let delta = if i == j { 1.0 } else { 0.0 };
            let v = (row_softmax.get(i, j) - delta + col_softmax.get(i, j) - delta) * inv_2n;
            g.set(i, j, v);
        }
    }

    let mut d_images = Mat::zeros(n, images.cols());
    let mut d_texts = Mat::zeros(n, images.cols());
    let mut d_scale = 0.0;
    #[allow(clippy::needless_range_loop)]
    for i in 0..n {
        let mut g_unit = vec![0.0; images.cols()];
        for j in 0..n {
            let gij = g.get(i, j);
            d_scale += gij * dot(img_unit.row(i), txt_unit.row(j));
            for (acc, &t) in g_unit.iter_mut().zip(txt_unit.row(j)) {
                *acc += scale * gij * t;
            }
        }
        let d_raw = backprop_normalize(&g_unit, img_unit.row(i), img_norms[i]);
        d_images.row_mut(i).copy_from_slice(&d_raw);
    }
    #[allow(clippy::needless_range_loop)]
    for j in 0..n {
        let mut g_unit = vec![0.0; images.cols()];
        for i in 0..n {
            let gij = g.get(i, j);
            for (acc, &x) in g_unit.iter_mut().zip(img_unit.row(i)) {
                *acc += scale * gij * x;
            }
        }
        let d_raw = backprop_normalize(&g_unit, txt_unit.row(j), txt_norms[j]);
        d_texts.row_mut(j).copy_from_slice(&d_raw);
    }

    Ok((
        loss,
        ClipGrads {
            d_images,
            d_texts,
            d_scale,
        },
    ))
}

fn stack(anchor: &[f64], rest: &Mat) -> Mat {
    let d = anchor.len();
    let mut m = Mat::zeros(rest.rows() + 1, d);
    m.row_mut(0).copy_from_slice(anchor);
    for i in 0..rest.rows() {
        m.row_mut(i + 1).copy_from_slice(rest.row(i));
    }
    m
}

/// Contrastive loss confined to one mini-batch: the anchor pair stacked
/// with its hard negatives, anchor as row 0.
pub fn croco_loss(mb: &MiniBatch, scale: f64) -> Result<(f64, MiniBatchGrads), LossError> {
    let images = stack(&mb.anchor_image, &mb.hn_images);
    let texts = stack(&mb.anchor_text, &mb.hn_texts);
    let (loss, grads) = clip_loss(&images, &texts, scale)?;

    let d = mb.dim();
    let k = mb.hn_count();
    let mut out = MiniBatchGrads::zeros(d, k);
    out.d_anchor_image.copy_from_slice(grads.d_images.row(0));
    out.d_anchor_text.copy_from_slice(grads.d_texts.row(0));
    for i in 0..k {
        out.d_hn_images
            .row_mut(i)
            .copy_from_slice(grads.d_images.row(i + 1));
        out.d_hn_texts
            .row_mut(i)
            .copy_from_slice(grads.d_texts.row(i + 1));
    }
    out.d_scale = grads.d_scale;
    Ok((loss, out))
}

/// Mean over hard negatives of the binary cross-entropy of the sigmoided
/// anchor/negative cosine against target 0, i.e. softplus(cos). Empty
/// negative sets contribute 0.
fn hn_similarity_loss(anchor: &[f64], negatives: &Mat) -> Result<(f64, Vec<f64>, Mat), LossError> {
    let d = anchor.len();
    let k = negatives.rows();
    if k == 0 {
        return Ok((0.0, vec![0.0; d], Mat::zeros(0, d)));
    }
    if negatives.cols() != d {
        return Err(LossError::DimensionMismatch(format!(
            "negatives dim {} vs anchor dim {}",
            negatives.cols(),
            d
        )));
    }
    let anchor_norm = norm(anchor);
    if anchor_norm == 0.0 || !anchor_norm.is_finite() {
        return Err(LossError::NonFinite("anchor norm".into()));
    }
    let anchor_unit: Vec<f64> = anchor.iter().map(|v| v / anchor_norm).collect();

    let mut loss = 0.0;
    let mut d_anchor_unit = vec![0.0; d];
    let mut d_negatives = Mat::zeros(k, d);
    let mean = 1.0 / k as f64;
    for i in 0..k {
        let row = negatives.row(i);
        let row_norm = norm(row);
        if row_norm == 0.0 || !row_norm.is_finite() {
            return Err(LossError::NonFinite(format!("negative row {i} norm")));
        }
        let row_unit: Vec<f64> = row.iter().map(|v| v / row_norm).collect();
        let cos = dot(&anchor_unit, &row_unit);
        // -ln(1 - sigmoid(cos)) = softplus(cos)
        loss += (1.0 + cos.exp()).ln() * mean;
        let d_cos = mean * (1.0 / (1.0 + (-cos).exp())); // sigmoid(cos)

        // d cos / d anchor_unit = row_unit - cos * anchor_unit (on the sphere),
        // then through the anchor normalization below; same for the row.
        for j in 0..d {
            d_anchor_unit[j] += d_cos * row_unit[j];
        }
        let d_row_unit: Vec<f64> = anchor_unit.iter().map(|&a| d_cos * a).collect();
        let d_row = backprop_normalize(&d_row_unit, &row_unit, row_norm);
        d_negatives.row_mut(i).copy_from_slice(&d_row);
    }
    let d_anchor = backprop_normalize(&d_anchor_unit, &anchor_unit, anchor_norm);
    if !loss.is_finite() {
        return Err(LossError::NonFinite("similarity loss".into()));
    }
    Ok((loss, d_anchor, d_negatives))
}

/// Similarity loss between the anchor caption and its hard-negative
/// captions. Returns gradients for the text side only.
pub fn hn_text_loss(mb: &MiniBatch) -> Result<(f64, MiniBatchGrads), LossError> {
    let (loss, d_anchor, d_hn) = hn_similarity_loss(&mb.anchor_text, &mb.hn_texts)?;
    let mut grads = MiniBatchGrads::zeros(mb.dim(), mb.hn_count());
    grads.d_anchor_text = d_anchor;
    grads.d_hn_texts = d_hn;
    Ok((loss, grads))
}

/// Similarity loss between the anchor image and its hard-negative images.
pub fn hn_image_loss(mb: &MiniBatch) -> Result<(f64, MiniBatchGrads), LossError> {
    let (loss, d_anchor, d_hn) = hn_similarity_loss(&mb.anchor_image, &mb.hn_images)?;
    let mut grads = MiniBatchGrads::zeros(mb.dim(), mb.hn_count());
    grads.d_anchor_image = d_anchor;
    grads.d_hn_images = d_hn;
    Ok((loss, grads))
}

/// The composed hard-negative loss:
/// `l_croco * (1 + (delta_t * l_text + delta_i * l_image) / 2) / 2`,
/// with gradients through the product rule.
pub fn hn_loss(
    mb: &MiniBatch,
    cfg: &LossConfig,
) -> Result<(LossBreakdown, MiniBatchGrads), LossError> {
    cfg.validate()?;
    let (l_croco, g_croco) = croco_loss(mb, cfg.scale)?;
    let (l_text, g_text) = hn_text_loss(mb)?;
    let (l_image, g_image) = hn_image_loss(mb)?;

    let weight = (1.0 + 0.5 * (cfg.delta_t * l_text + cfg.delta_i * l_image)) / 2.0;
    let l_hn = l_croco * weight;

    // d l_hn = d l_croco * weight + l_croco * (delta_t d l_text + delta_i d l_image) / 4
    let quarter = l_croco / 4.0;
    let combine = |croco: &[f64], text: &[f64], image: &[f64], out: &mut [f64]| {
        for i in 0..out.len() {
            out[i] = croco[i] * weight + quarter * (cfg.delta_t * text[i] + cfg.delta_i * image[i]);
        }
    };

    let d = mb.dim();
    let k = mb.hn_count();
    let mut grads = MiniBatchGrads::zeros(d, k);
    combine(
        &g_croco.d_anchor_text,
        &g_text.d_anchor_text,
        &g_image.d_anchor_text,
        &mut grads.d_anchor_text,
    );
    combine(
        &g_croco.d_anchor_image,
        &g_text.d_anchor_image,
        &g_image.d_anchor_image,
        &mut grads.d_anchor_image,
    );
    for i in 0..k {
        let mut row = vec![0.0; d];
        combine(
            g_croco.d_hn_texts.row(i),
            g_text.d_hn_texts.row(i),
            g_image.d_hn_texts.row(i),
            &mut row,
        );
        grads.d_hn_texts.row_mut(i).copy_from_slice(&row);
        combine(
            g_croco.d_hn_images.row(i),
            g_text.d_hn_images.row(i),
            g_image.d_hn_images.row(i),
            &mut row,
        );
        grads.d_hn_images.row_mut(i).copy_from_slice(&row);
    }
    grads.d_scale = g_croco.d_scale * weight;

    Ok((
        LossBreakdown {
            l_croco,
            l_hn_text: l_text,
            l_hn_image: l_image,
            l_hn,
        },
        grads,
    ))
}

/// Sum of composed losses over mini-batches, in input order; the defining
/// difference from a full-batch contrastive loss is that no similarity
/// crosses a mini-batch boundary.
pub fn batch_loss(
    minibatches: &[MiniBatch],
    cfg: &LossConfig,
) -> Result<(f64, Vec<MiniBatchGrads>), LossError> {
    if minibatches.is_empty() {
        return Err(LossError::EmptyBatch);
    }
    let mut total = 0.0;
    let mut grads = Vec::with_capacity(minibatches.len());
    for mb in minibatches {
        let (breakdown, g) = hn_loss(mb, cfg)?;
        total += breakdown.l_hn;
        grads.push(g);
    }
    Ok((total, grads))
}
