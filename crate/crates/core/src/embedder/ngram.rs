//! Trainable character n-gram encoder.
//!
//! A text is lower-cased, whitespace-collapsed and wrapped in `<`/`>` boundary
//! markers; every character n-gram (for each configured `n`) becomes a sparse
//! count feature. Known n-grams map to vocabulary rows, unknown ones hash
//! (FNV-1a) into a fixed bucket range after the vocabulary. The embedding is
//! the L2-normalized product of the feature bag with a dense
//! `feature_count x dimension` weight matrix.

use std::collections::{BTreeSet, HashMap};
use std::fs::File;
use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{EmbedError, EmbeddingVector};
use crate::binio;

const CHECKPOINT_MAGIC: &[u8; 8] = b"ELQAENC\0";
const CHECKPOINT_VERSION: u32 = 1;

const FNV_OFFSET_BASIS: u64 = 0xcbf2_9ce4_8422_2325;
const FNV_PRIME: u64 = 0x0100_0000_01b3;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NGramConfig {
    pub ngram_sizes: Vec<usize>,
    pub dimension: usize,
    pub hash_buckets: usize,
    pub seed: u64,
}

impl Default for NGramConfig {
    fn default() -> Self {
        NGramConfig {
            ngram_sizes: vec![2, 3, 4],
            dimension: 256,
            hash_buckets: 4096,
            seed: 17,
        }
    }
}

/// Sparse feature bag: `(feature index, count)` sorted by index.
pub type Features = Vec<(usize, f64)>;

#[derive(Debug, Clone, PartialEq)]
pub struct NGramEncoder {
    config: NGramConfig,
    vocab: HashMap<String, usize>,
    vocab_order: Vec<String>,
    weights: Vec<f64>,
}

fn prepare(text: &str) -> Vec<char> {
    let folded = text.to_lowercase();
    let mut chars = vec!['<'];
    for (i, word) in folded.split_whitespace().enumerate() {
        if i > 0 {
            chars.push(' ');
        }
        chars.extend(word.chars());
    }
    chars.push('>');
    chars
}

fn fnv1a(bytes: &[u8]) -> u64 {
    bytes.iter().fold(FNV_OFFSET_BASIS, |h, b| (h ^ u64::from(*b)).wrapping_mul(FNV_PRIME))
}

/// All character n-grams of `text` for the given sizes, in text order.
pub fn char_ngrams(text: &str, sizes: &[usize]) -> Vec<String> {
    let chars = prepare(text);
    let mut out = Vec::new();
    for &n in sizes {
        if n == 0 || n > chars.len() {
            continue;
        }
        out.extend(chars.windows(n).map(|w| w.iter().collect::<String>()));
    }
    out
}

impl NGramEncoder {
    /// Creates an encoder whose vocabulary is every n-gram of `corpus`, with
    /// weights drawn from `N(0, 1/dimension)` under the configured seed.
    pub fn new<'a>(config: NGramConfig, corpus: impl IntoIterator<Item = &'a str>) -> NGramEncoder {
        let grams: BTreeSet<String> = corpus
            .into_iter()
            .flat_map(|t| char_ngrams(t, &config.ngram_sizes))
            .collect();
        let vocab_order: Vec<String> = grams.into_iter().collect();
        let feature_count = vocab_order.len() + config.hash_buckets;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let normal = Normal::new(0.0, 1.0 / (config.dimension as f64).sqrt()).expect("valid std");
        let weights = (0..feature_count * config.dimension)
            .map(|_| normal.sample(&mut rng))
            .collect();
        NGramEncoder::from_parts(config, vocab_order, weights)
    }

    /// Assembles an encoder from explicit weights (row-major,
    /// `feature_count x dimension`).
    pub fn from_parts(config: NGramConfig, vocab_order: Vec<String>, weights: Vec<f64>) -> NGramEncoder {
        assert!(config.dimension > 0, "dimension must be positive");
        assert!(
            config.hash_buckets > 0 || !vocab_order.is_empty(),
            "encoder needs at least one feature"
        );
        assert_eq!(weights.len(), (vocab_order.len() + config.hash_buckets) * config.dimension);
        let vocab = vocab_order.iter().enumerate().map(|(i, g)| (g.clone(), i)).collect();
        NGramEncoder {
            config,
            vocab,
            vocab_order,
            weights,
        }
    }

    pub fn config(&self) -> &NGramConfig {
        &self.config
    }

    pub fn dimension(&self) -> usize {
        self.config.dimension
    }

    pub fn vocab_len(&self) -> usize {
        self.vocab_order.len()
    }

    pub fn feature_count(&self) -> usize {
        self.vocab_order.len() + self.config.hash_buckets
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    pub fn weights_mut(&mut self) -> &mut [f64] {
        &mut self.weights
    }

    pub fn row(&self, feature: usize) -> &[f64] {
        let d = self.config.dimension;
        &self.weights[feature * d..(feature + 1) * d]
    }

    fn feature_index(&self, gram: &str) -> usize {
        match self.vocab.get(gram) {
            Some(&i) => i,
            None => {
                let buckets = self.config.hash_buckets;
                if buckets == 0 {
                    // Vocabulary-only encoder: fold unknown grams onto the vocabulary.
                    (fnv1a(gram.as_bytes()) % self.vocab_order.len() as u64) as usize
                } else {
                    self.vocab_order.len() + (fnv1a(gram.as_bytes()) % buckets as u64) as usize
                }
            }
        }
    }

    /// Sparse n-gram counts of `text`.
    pub fn features(&self, text: &str) -> Features {
        let mut counts: HashMap<usize, f64> = HashMap::new();
        for gram in char_ngrams(text, &self.config.ngram_sizes) {
            *counts.entry(self.feature_index(&gram)).or_insert(0.0) += 1.0;
        }
        let mut feats: Features = counts.into_iter().collect();
        feats.sort_unstable_by_key(|&(i, _)| i);
        feats
    }

    /// Unnormalized projection of a feature bag.
    pub fn project(&self, features: &[(usize, f64)]) -> Vec<f64> {
        let mut h = vec![0.0; self.config.dimension];
        for &(f, x) in features {
            for (acc, w) in h.iter_mut().zip(self.row(f)) {
                *acc += x * w;
            }
        }
        h
    }

    pub fn encode(&self, text: &str) -> Result<EmbeddingVector, EmbedError> {
        if text.trim().is_empty() {
            return Err(EmbedError::EmptyText(0));
        }
        EmbeddingVector::normalized(self.project(&self.features(text)))
    }

    /// Content hash identifying this exact set of weights.
    pub fn fingerprint(&self) -> String {
        let mut hasher = Sha256::new();
        let mut header = Vec::new();
        self.write_header(&mut header).expect("in-memory write");
        hasher.update(&header);
        for w in &self.weights {
            hasher.update(w.to_le_bytes());
        }
        let digest = hasher.finalize();
        digest.iter().take(16).map(|b| format!("{b:02x}")).collect()
    }

    fn write_header<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        binio::write_header(w, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        binio::write_u32(w, self.config.dimension as u32)?;
        binio::write_u32(w, self.config.hash_buckets as u32)?;
        binio::write_u32(w, self.config.ngram_sizes.len() as u32)?;
        for &n in &self.config.ngram_sizes {
            binio::write_u32(w, n as u32)?;
        }
        binio::write_u64(w, self.config.seed)?;
        binio::write_u32(w, self.vocab_order.len() as u32)?;
        for gram in &self.vocab_order {
            binio::write_str(w, gram)?;
        }
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> std::io::Result<()> {
        self.write_header(w)?;
        binio::write_f64s(w, &self.weights)
    }

    pub fn read_from<R: Read>(r: &mut R) -> std::io::Result<NGramEncoder> {
        binio::expect_header(r, CHECKPOINT_MAGIC, CHECKPOINT_VERSION)?;
        let dimension = binio::read_u32(r)? as usize;
        let hash_buckets = binio::read_u32(r)? as usize;
        let n_sizes = binio::read_u32(r)? as usize;
        let ngram_sizes = (0..n_sizes)
            .map(|_| binio::read_u32(r).map(|n| n as usize))
            .collect::<std::io::Result<Vec<_>>>()?;
        let seed = binio::read_u64(r)?;
        let vocab_len = binio::read_u32(r)? as usize;
        let vocab_order = (0..vocab_len)
            .map(|_| binio::read_str(r))
            .collect::<std::io::Result<Vec<_>>>()?;
        let weights = binio::read_f64s(r, (vocab_len + hash_buckets) * dimension)?;
        if dimension == 0 || (hash_buckets == 0 && vocab_len == 0) {
            return Err(std::io::Error::new(std::io::ErrorKind::InvalidData, "empty encoder"));
        }
        let config = NGramConfig {
            ngram_sizes,
            dimension,
            hash_buckets,
            seed,
        };
        Ok(NGramEncoder::from_parts(config, vocab_order, weights))
    }

    pub fn save(&self, path: &Path) -> std::io::Result<()> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()
    }

    pub fn load(path: &Path) -> std::io::Result<NGramEncoder> {
        NGramEncoder::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> NGramEncoder {
        let cfg = NGramConfig {
            dimension: 16,
            hash_buckets: 32,
            ..NGramConfig::default()
        };
        NGramEncoder::new(cfg, ["hemoglobin", "haemoglobin c", "diabetes"])
    }

    #[test]
    fn ngrams_use_boundary_markers() {
        assert_eq!(char_ngrams("Ab", &[2]), vec!["<a", "ab", "b>"]);
        assert_eq!(char_ngrams("a  b", &[3]), vec!["<a ", "a b", " b>"]);
        assert!(char_ngrams("a", &[4]).is_empty());
    }

    #[test]
    fn encode_is_deterministic_and_unit_norm() {
        let enc = small();
        let a = enc.encode("abc").unwrap();
        let b = enc.encode("abc").unwrap();
        assert_eq!(a, b);
        assert!((a.norm() - 1.0).abs() < 1e-6);
        assert_eq!(a.dimension(), 16);
        assert_eq!(enc, small());
    }

    #[test]
    fn feature_indices_in_range() {
        let enc = small();
        for text in ["hemoglobin", "zzzz unseen text", "ü-ñ"] {
            for (f, c) in enc.features(text) {
                assert!(f < enc.feature_count());
                assert!(c >= 1.0);
            }
        }
    }

    #[test]
    fn out_of_vocabulary_grams_hash_into_buckets() {
        let enc = small();
        let feats = enc.features("qqqq");
        assert!(feats.iter().all(|&(f, _)| f >= enc.vocab_len()));
    }

    #[test]
    fn empty_text_is_rejected() {
        assert!(matches!(small().encode("  "), Err(EmbedError::EmptyText(_))));
    }

    #[test]
    fn checkpoint_round_trip() {
        let enc = small();
        let mut bytes = Vec::new();
        enc.write_to(&mut bytes).unwrap();
        let back = NGramEncoder::read_from(&mut bytes.as_slice()).unwrap();
        assert_eq!(back, enc);
        assert_eq!(back.fingerprint(), enc.fingerprint());
        bytes[0] = b'X';
        assert!(NGramEncoder::read_from(&mut bytes.as_slice()).is_err());
    }

    #[test]
    fn fingerprint_tracks_weights() {
        let mut enc = small();
        let before = enc.fingerprint();
        enc.weights_mut()[0] += 1.0;
        assert_ne!(before, enc.fingerprint());
    }
}
