//! Contrastive objective over a true pair and its negatives.
//!
//! For a mention `m`, its entity `e` and negatives `H(e)`, with
//! `delta(m, x) = exp(s(m, x) / tau)`:
//!
//! ```text
//! L(m, e) = -log( delta(m, e) / (delta(m, e) + sum_{e' in H(e)} delta(m, e')) )
//! ```
//!
//! Evaluated as `logsumexp(z) - z_pos` with `z = s / tau`, which stays finite
//! for the small temperatures used in training.

use std::collections::HashMap;

use super::ngram::{Features, NGramEncoder};
use super::vector::{dot, l2_norm};
use super::{score, EmbedError, EmbeddingVector};

/// Loss from precomputed similarities.
pub fn loss_from_scores(positive: f64, negatives: &[f64], temperature: f64) -> Result<f64, EmbedError> {
    Ok(score_gradient(positive, negatives, temperature)?.0)
}

/// Loss together with `dL/ds` for the positive and each negative.
pub fn score_gradient(positive: f64, negatives: &[f64], temperature: f64) -> Result<(f64, f64, Vec<f64>), EmbedError> {
    if !(temperature > 0.0) || !temperature.is_finite() {
        return Err(EmbedError::NonPositiveTemperature(temperature));
    }
    if negatives.is_empty() {
        return Err(EmbedError::NoNegatives);
    }
    let z_pos = positive / temperature;
    let z_neg: Vec<f64> = negatives.iter().map(|s| s / temperature).collect();
    let max = z_neg.iter().copied().fold(z_pos, f64::max);
    let exp_pos = (z_pos - max).exp();
    let exp_neg: Vec<f64> = z_neg.iter().map(|z| (z - max).exp()).collect();
    let total = exp_pos + exp_neg.iter().sum::<f64>();
    let loss = (max + total.ln() - z_pos).max(0.0);
    let d_pos = (exp_pos / total - 1.0) / temperature;
    let d_neg = exp_neg.iter().map(|e| e / total / temperature).collect();
    Ok((loss, d_pos, d_neg))
}

/// Contrastive loss of a mention against its true entity and negatives.
pub fn contrastive_loss(
    mention: &EmbeddingVector,
    positive: &EmbeddingVector,
    negatives: &[EmbeddingVector],
    temperature: f64,
) -> Result<f64, EmbedError> {
    let pos = score(mention, positive)?;
    let neg = negatives
        .iter()
        .map(|n| score(mention, n))
        .collect::<Result<Vec<_>, _>>()?;
    loss_from_scores(pos, &neg, temperature)
}

/// One training example expressed as texts for the shared encoder.
#[derive(Debug, Clone)]
pub struct TextExample<'a> {
    pub mention: &'a str,
    pub positive: &'a str,
    pub negatives: Vec<&'a str>,
}

/// Gradient of a loss with respect to the encoder weights, keyed by
/// feature row. Rows not present are zero.
#[derive(Debug, Clone, Default)]
pub struct SparseGradient {
    pub rows: HashMap<usize, Vec<f64>>,
}

impl SparseGradient {
    /// Dense copy, row-major `feature_count x dimension`.
    pub fn to_dense(&self, feature_count: usize, dimension: usize) -> Vec<f64> {
        let mut dense = vec![0.0; feature_count * dimension];
        for (&f, row) in &self.rows {
            dense[f * dimension..(f + 1) * dimension].copy_from_slice(row);
        }
        dense
    }

    /// `weights -= step * gradient`.
    pub fn apply(&self, encoder: &mut NGramEncoder, step: f64) {
        let d = encoder.dimension();
        let weights = encoder.weights_mut();
        for (&f, row) in &self.rows {
            for (w, g) in weights[f * d..(f + 1) * d].iter_mut().zip(row) {
                *w -= step * g;
            }
        }
    }
}

struct Slot {
    features: Features,
    norm: f64,
    unit: Vec<f64>,
    grad_unit: Vec<f64>,
}

struct Slots<'t, 'e> {
    encoder: &'e NGramEncoder,
    index: HashMap<&'t str, usize>,
    slots: Vec<Slot>,
}

impl<'t, 'e> Slots<'t, 'e> {
    fn get(&mut self, text: &'t str) -> Result<usize, EmbedError> {
        if let Some(&i) = self.index.get(text) {
            return Ok(i);
        }
        let features = self.encoder.features(text);
        let h = self.encoder.project(&features);
        let norm = l2_norm(&h);
        if norm == 0.0 || !norm.is_finite() {
            return Err(EmbedError::Degenerate);
        }
        let unit = h.iter().map(|v| v / norm).collect();
        self.slots.push(Slot {
            features,
            norm,
            unit,
            grad_unit: vec![0.0; self.encoder.dimension()],
        });
        self.index.insert(text, self.slots.len() - 1);
        Ok(self.slots.len() - 1)
    }
}

/// Per-example losses and the gradient of their *sum* with respect to the
/// encoder weights.
///
/// Each distinct text is encoded once per call, so in-batch negatives that
/// are other examples' positives share a forward and backward pass.
pub fn batch_loss_and_gradient(
    encoder: &NGramEncoder,
    examples: &[TextExample<'_>],
    temperature: f64,
) -> Result<(Vec<f64>, SparseGradient), EmbedError> {
    let d = encoder.dimension();
    let mut table = Slots {
        encoder,
        index: HashMap::new(),
        slots: Vec::new(),
    };
    let mut indexed = Vec::with_capacity(examples.len());
    for ex in examples {
        let m = table.get(ex.mention)?;
        let p = table.get(ex.positive)?;
        let n = ex
            .negatives
            .iter()
            .map(|t| table.get(t))
            .collect::<Result<Vec<_>, _>>()?;
        indexed.push((m, p, n));
    }
    let mut slots = table.slots;

    let mut losses = Vec::with_capacity(examples.len());
    for (m, p, negs) in &indexed {
        let mention_unit = slots[*m].unit.clone();
        let s_pos = dot(&mention_unit, &slots[*p].unit);
        let s_neg: Vec<f64> = negs.iter().map(|&n| dot(&mention_unit, &slots[n].unit)).collect();
        let (loss, g_pos, g_neg) = score_gradient(s_pos, &s_neg, temperature)?;
        losses.push(loss);
        // dL/du_m = sum_j g_j u_j ; dL/du_j = g_j u_m
        let mut grad_m = vec![0.0; d];
        for (&j, g) in std::iter::once(p).chain(negs.iter()).zip(std::iter::once(g_pos).chain(g_neg)) {
            let other = &mut slots[j];
            for k in 0..d {
                grad_m[k] += g * other.unit[k];
                other.grad_unit[k] += g * mention_unit[k];
            }
        }
        for (acc, g) in slots[*m].grad_unit.iter_mut().zip(&grad_m) {
            *acc += g;
        }
    }

    // Through the normalization: dL/dh = (I - u u^T) dL/du / |h|.
    let mut grad = SparseGradient::default();
    for slot in &slots {
        let radial = dot(&slot.unit, &slot.grad_unit);
        let grad_h: Vec<f64> = slot
            .grad_unit
            .iter()
            .zip(&slot.unit)
            .map(|(g, u)| (g - u * radial) / slot.norm)
            .collect();
        if grad_h.iter().all(|g| *g == 0.0) {
            continue;
        }
        for &(f, x) in &slot.features {
            let row = grad.rows.entry(f).or_insert_with(|| vec![0.0; d]);
            for (acc, g) in row.iter_mut().zip(&grad_h) {
                *acc += x * g;
            }
        }
    }
    Ok((losses, grad))
}
