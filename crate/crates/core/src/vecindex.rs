//! Exact top-N cosine search over entity names.
//!
//! The index stores one row per `(entity id, name)` pair, synonyms included,
//! sorted by id then name. A query scans every row; rows of the same entity
//! collapse to their best-scoring name before ranking, and ties between
//! entities go to the smaller id.

use std::cmp::Ordering;
use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::embedder::{EmbedError, Embedder, EmbeddingVector, NGramEncoder, NegativeMiner, TrainError};
use crate::ontology::Ontology;

const INDEX_MAGIC: &[u8; 8] = b"ELQAIDX\0";
const INDEX_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum IndexError {
    #[error("dimension mismatch: index has {expected}, query has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("requested zero candidates")]
    ZeroCount,
    #[error("duplicate index row ({0}, {1:?})")]
    DuplicateRow(String, String),
    #[error("index has no rows")]
    Empty,
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("index file: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
pub struct IndexKey {
    pub entity_id: String,
    pub name: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Candidate {
    pub entity_id: String,
    pub matched_name: String,
    pub similarity: f64,
    /// 1-based.
    pub rank: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VectorIndex {
    keys: Vec<IndexKey>,
    dimension: usize,
    matrix: Vec<f64>,
    fingerprint: String,
}

/// Orders `(similarity, id)` best first: higher similarity, then smaller id.
pub(crate) fn rank_order(a: (f64, &str), b: (f64, &str)) -> Ordering {
    b.0.total_cmp(&a.0).then_with(|| a.1.cmp(b.1))
}

/// One row per `(entity, name)`, embedded with `embedder`.
pub fn build_index(ontology: &Ontology, embedder: &dyn Embedder) -> Result<VectorIndex, IndexError> {
    let mut keys: Vec<IndexKey> = ontology
        .named_rows()
        .map(|(id, name)| IndexKey {
            entity_id: id.to_string(),
            name: name.to_string(),
        })
        .collect();
    keys.sort();
    keys.dedup();
    let names: Vec<&str> = keys.iter().map(|k| k.name.as_str()).collect();
    let vectors = embedder.embed(&names)?;
    VectorIndex::from_rows(keys.into_iter().zip(vectors).collect(), embedder.fingerprint())
}

impl VectorIndex {
    /// Builds an index from explicit rows; they are sorted by `(id, name)`.
    pub fn from_rows(mut rows: Vec<(IndexKey, EmbeddingVector)>, fingerprint: String) -> Result<VectorIndex, IndexError> {
        if rows.is_empty() {
            return Err(IndexError::Empty);
        }
        rows.sort_by(|a, b| a.0.cmp(&b.0));
        for pair in rows.windows(2) {
            if pair[0].0 == pair[1].0 {
                return Err(IndexError::DuplicateRow(pair[0].0.entity_id.clone(), pair[0].0.name.clone()));
            }
        }
        let dimension = rows[0].1.dimension();
        let mut keys = Vec::with_capacity(rows.len());
        let mut matrix = Vec::with_capacity(rows.len() * dimension);
        for (key, v) in rows {
            if v.dimension() != dimension {
                return Err(IndexError::DimensionMismatch {
                    expected: dimension,
                    found: v.dimension(),
                });
            }
            keys.push(key);
            matrix.extend_from_slice(v.as_slice());
        }
        Ok(VectorIndex {
            keys,
            dimension,
            matrix,
            fingerprint,
        })
    }

    pub fn keys(&self) -> &[IndexKey] {
        &self.keys
    }

    pub fn len(&self) -> usize {
        self.keys.len()
    }

    pub fn is_empty(&self) -> bool {
        self.keys.is_empty()
    }

    pub fn dimension(&self) -> usize {
        self.dimension
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    pub fn row(&self, i: usize) -> &[f64] {
        &self.matrix[i * self.dimension..(i + 1) * self.dimension]
    }

    fn similarities(&self, query: &EmbeddingVector) -> Result<Vec<f64>, IndexError> {
        if query.dimension() != self.dimension {
            return Err(IndexError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        let q = query.as_slice();
        Ok(self
            .matrix
            .par_chunks(self.dimension)
            .map(|row| row.iter().zip(q).map(|(a, b)| a * b).sum())
            .collect())
    }

    /// Exact top-`n` distinct entities by cosine similarity.
    pub fn top_n(&self, query: &EmbeddingVector, n: usize) -> Result<Vec<Candidate>, IndexError> {
        if n == 0 {
            return Err(IndexError::ZeroCount);
        }
        let sims = self.similarities(query)?;

        // Rows are grouped by entity id; keep each entity's best row.
        let mut best: Vec<(f64, usize)> = Vec::new();
        let mut start = 0;
        while start < self.keys.len() {
            let id = &self.keys[start].entity_id;
            let mut end = start;
            let mut top = start;
            while end < self.keys.len() && &self.keys[end].entity_id == id {
                if sims[end] > sims[top] {
                    top = end;
                }
                end += 1;
            }
            best.push((sims[top], top));
            start = end;
        }

        let cmp = |a: &(f64, usize), b: &(f64, usize)| {
            rank_order((a.0, &self.keys[a.1].entity_id), (b.0, &self.keys[b.1].entity_id))
        };
        if n < best.len() {
            best.select_nth_unstable_by(n - 1, cmp);
            best.truncate(n);
        }
        best.sort_by(cmp);
        Ok(best
            .into_iter()
            .enumerate()
            .map(|(i, (sim, row))| Candidate {
                entity_id: self.keys[row].entity_id.clone(),
                matched_name: self.keys[row].name.clone(),
                similarity: sim.clamp(-1.0, 1.0),
                rank: i + 1,
            })
            .collect())
    }

    /// The `count` best-scoring entities other than `gold_id`.
    pub fn mine_hard_negatives(&self, mention: &EmbeddingVector, gold_id: &str, count: usize) -> Result<Vec<String>, IndexError> {
        if count == 0 {
            return Ok(Vec::new());
        }
        let mut ids: Vec<String> = self
            .top_n(mention, count + 1)?
            .into_iter()
            .map(|c| c.entity_id)
            .filter(|id| id != gold_id)
            .collect();
        ids.truncate(count);
        Ok(ids)
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> io::Result<()> {
        binio::write_header(w, INDEX_MAGIC, INDEX_VERSION)?;
        binio::write_u32(w, self.dimension as u32)?;
        binio::write_u64(w, self.keys.len() as u64)?;
        binio::write_str(w, &self.fingerprint)?;
        for key in &self.keys {
            binio::write_str(w, &key.entity_id)?;
            binio::write_str(w, &key.name)?;
        }
        binio::write_f64s(w, &self.matrix)
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<VectorIndex, IndexError> {
        binio::expect_header(r, INDEX_MAGIC, INDEX_VERSION)?;
        let dimension = binio::read_u32(r)? as usize;
        let rows = binio::read_u64(r)? as usize;
        let fingerprint = binio::read_str(r)?;
        let mut keys = Vec::with_capacity(rows);
        for _ in 0..rows {
            let entity_id = binio::read_str(r)?;
            let name = binio::read_str(r)?;
            keys.push(IndexKey { entity_id, name });
        }
        let matrix = binio::read_f64s(r, rows * dimension)?;
        let rows = keys
            .into_iter()
            .zip(matrix.chunks_exact(dimension.max(1)))
            .map(|(k, v)| (k, EmbeddingVector::from_unit(v.to_vec())))
            .collect();
        VectorIndex::from_rows(rows, fingerprint)
    }

    pub fn save(&self, path: &Path) -> Result<(), IndexError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<VectorIndex, IndexError> {
        VectorIndex::read_from(&mut BufReader::new(File::open(path)?))
    }
}

/// Hard-negative miner backed by an index rebuilt from the current encoder
/// at every refresh.
#[derive(Debug, Default)]
pub struct IndexMiner {
    index: Option<VectorIndex>,
}

impl IndexMiner {
    pub fn new() -> IndexMiner {
        IndexMiner::default()
    }
}

impl NegativeMiner for IndexMiner {
    fn refresh(&mut self, encoder: &NGramEncoder, ontology: &Ontology) -> Result<(), TrainError> {
        let index = build_index(ontology, encoder).map_err(|e| TrainError::Miner(e.to_string()))?;
        self.index = Some(index);
        Ok(())
    }

    fn mine(&self, mention: &EmbeddingVector, gold_id: &str, count: usize) -> Result<Vec<String>, TrainError> {
        let index = self
            .index
            .as_ref()
            .ok_or_else(|| TrainError::Miner("miner used before refresh".into()))?;
        index
            .mine_hard_negatives(mention, gold_id, count)
            .map_err(|e| TrainError::Miner(e.to_string()))
    }
}
