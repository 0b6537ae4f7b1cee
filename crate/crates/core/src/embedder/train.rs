//! Contrastive training of the n-gram encoder.
//!
//! Every batch pairs each mention with its gold entity's canonical name and
//! a negative set made of the other gold entities in the batch plus hard
//! negatives from a [`NegativeMiner`]. The gold entity itself is always
//! removed from the negatives. Weights move by plain SGD on the batch-mean
//! loss.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use super::loss::{batch_loss_and_gradient, TextExample};
use super::ngram::NGramEncoder;
use super::{EmbedError, EmbeddingVector};
use crate::ontology::Ontology;

/// Learning rates tried by [`select_learning_rate`] when no rate is fixed.
pub const LEARNING_RATE_GRID: [f64; 5] = [4e-5, 8e-5, 1e-4, 2e-4, 4e-4];

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("no training pairs")]
    EmptyTrainingSet,
    #[error("training pair references unknown entity {0}")]
    UnknownGold(String),
    #[error("invalid training config: {0}")]
    InvalidConfig(String),
    #[error("negative miner failed: {0}")]
    Miner(String),
    #[error(transparent)]
    Embed(#[from] EmbedError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ContrastiveConfig {
    pub temperature: f64,
    pub batch_size: usize,
    pub hard_negatives_per_pair: usize,
    pub epochs: usize,
    pub learning_rate: f64,
    pub seed: u64,
}

impl Default for ContrastiveConfig {
    fn default() -> Self {
        ContrastiveConfig {
            temperature: 0.01,
            batch_size: 16,
            hard_negatives_per_pair: 4,
            epochs: 20,
            learning_rate: 4e-4,
            seed: 17,
        }
    }
}

impl ContrastiveConfig {
    pub fn validate(&self) -> Result<(), TrainError> {
        if !(self.temperature > 0.0) || !self.temperature.is_finite() {
            return Err(EmbedError::NonPositiveTemperature(self.temperature).into());
        }
        if self.batch_size < 2 {
            return Err(TrainError::InvalidConfig(
                "batch_size must be at least 2 for in-batch negatives".into(),
            ));
        }
        if self.epochs == 0 {
            return Err(TrainError::InvalidConfig("epochs must be positive".into()));
        }
        if !(self.learning_rate > 0.0) || !self.learning_rate.is_finite() {
            return Err(TrainError::InvalidConfig("learning_rate must be positive".into()));
        }
        Ok(())
    }
}

/// Source of hard negatives: the highest-scoring incorrect entities.
pub trait NegativeMiner: Sync {
    /// Called at the start of every epoch with the current weights.
    fn refresh(&mut self, encoder: &NGramEncoder, ontology: &Ontology) -> Result<(), TrainError>;

    fn mine(&self, mention: &EmbeddingVector, gold_id: &str, count: usize) -> Result<Vec<String>, TrainError>;
}

/// Miner that never proposes anything; training then relies on in-batch
/// negatives alone.
#[derive(Debug, Default, Clone, Copy)]
pub struct NoMiner;

impl NegativeMiner for NoMiner {
    fn refresh(&mut self, _: &NGramEncoder, _: &Ontology) -> Result<(), TrainError> {
        Ok(())
    }

    fn mine(&self, _: &EmbeddingVector, _: &str, _: usize) -> Result<Vec<String>, TrainError> {
        Ok(Vec::new())
    }
}

/// Negative entity ids for each member of a batch: the other members' gold
/// ids first, then that member's mined ids. Never contains the member's own
/// gold id and never repeats an id.
pub fn batch_negatives(golds: &[&str], mined: &[Vec<String>]) -> Vec<Vec<String>> {
    golds
        .iter()
        .enumerate()
        .map(|(i, &gold)| {
            let mut seen: HashSet<&str> = HashSet::from([gold]);
            let in_batch = golds
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != i)
                .map(|(_, g)| *g);
            let hard = mined.get(i).into_iter().flatten().map(String::as_str);
            in_batch
                .chain(hard)
                .filter(|id| seen.insert(id))
                .map(str::to_string)
                .collect()
        })
        .collect()
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub encoder: NGramEncoder,
    /// Mean loss of each epoch, in order.
    pub loss_trace: Vec<f64>,
    /// Pair visits skipped because their batch offered no negative.
    pub skipped: usize,
}

pub fn train(
    mut encoder: NGramEncoder,
    pairs: &[(String, String)],
    ontology: &Ontology,
    cfg: &ContrastiveConfig,
    miner: &mut dyn NegativeMiner,
) -> Result<TrainOutcome, TrainError> {
    cfg.validate()?;
    if pairs.is_empty() {
        return Err(TrainError::EmptyTrainingSet);
    }
    let canonical = |id: &str| ontology.get(id).map(|e| e.canonical_name.as_str());
    for (_, gold) in pairs {
        if canonical(gold).is_none() {
            return Err(TrainError::UnknownGold(gold.clone()));
        }
    }

    let mut order: Vec<usize> = (0..pairs.len()).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut loss_trace = Vec::with_capacity(cfg.epochs);
    let mut skipped = 0;

    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng);
        let mined: Vec<Vec<String>> = if cfg.hard_negatives_per_pair > 0 {
            miner.refresh(&encoder, ontology)?;
            let miner: &dyn NegativeMiner = miner;
            let encoder = &encoder;
            pairs
                .par_iter()
                .map(|(text, gold)| {
                    let v = encoder.encode(text)?;
                    miner.mine(&v, gold, cfg.hard_negatives_per_pair)
                })
                .collect::<Result<_, _>>()?
        } else {
            vec![Vec::new(); pairs.len()]
        };

        let mut total = 0.0;
        let mut counted = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let golds: Vec<&str> = batch.iter().map(|&i| pairs[i].1.as_str()).collect();
            let batch_mined: Vec<Vec<String>> = batch.iter().map(|&i| mined[i].clone()).collect();
            let negatives = batch_negatives(&golds, &batch_mined);
            let mut examples = Vec::with_capacity(batch.len());
            for (&i, negs) in batch.iter().zip(&negatives) {
                if negs.is_empty() {
                    skipped += 1;
                    continue;
                }
                examples.push(TextExample {
                    mention: &pairs[i].0,
                    positive: canonical(&pairs[i].1).expect("validated above"),
                    negatives: negs.iter().map(|n| canonical(n).ok_or_else(|| TrainError::UnknownGold(n.clone()))).collect::<Result<_, _>>()?,
                });
            }
            if examples.is_empty() {
                continue;
            }
            let (losses, grad) = batch_loss_and_gradient(&encoder, &examples, cfg.temperature)?;
            grad.apply(&mut encoder, cfg.learning_rate / examples.len() as f64);
            total += losses.iter().sum::<f64>();
            counted += losses.len();
        }
        let mean = if counted > 0 { total / counted as f64 } else { f64::NAN };
        log::info!("epoch {}/{}: mean contrastive loss {mean:.5}", epoch + 1, cfg.epochs);
        loss_trace.push(mean);
    }

    Ok(TrainOutcome {
        encoder,
        loss_trace,
        skipped,
    })
}

/// Tries each learning rate and keeps the one with the highest score
/// (ties go to the earlier rate). Returns the winner and every
/// `(rate, score)` tried.
pub fn select_learning_rate<E>(
    grid: &[f64],
    mut score: impl FnMut(f64) -> Result<f64, E>,
) -> Result<(f64, Vec<(f64, f64)>), E> {
    let mut tried = Vec::with_capacity(grid.len());
    let mut best: Option<(f64, f64)> = None;
    for &lr in grid {
        let s = score(lr)?;
        log::info!("learning rate {lr:e}: selection score {s:.4}");
        tried.push((lr, s));
        if best.is_none_or(|(_, b)| s > b) {
            best = Some((lr, s));
        }
    }
    let (lr, _) = best.expect("non-empty learning rate grid");
    Ok((lr, tried))
}
