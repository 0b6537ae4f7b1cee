//! Datastore of solved training instances keyed by mention embedding.
//!
//! Querying with a mention embedding returns the `K` most similar labelled
//! instances; [`assemble_enhanced_prompt`] then prefixes the input's prompt
//! with each neighbor's rendered block followed by its gold answer:
//!
//! ```text
//! T(m_1, O_1) a_1 T(m_2, O_2) a_2 ... T(x, O)
//! ```

use std::fs::File;
use std::io::{self, BufReader, BufWriter, Read, Write};
use std::path::Path;

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::binio;
use crate::embedder::{EmbedError, Embedder, EmbeddingVector};
use crate::mcp::{render_text, ChoiceSet, PromptInstance, Provenance};
use crate::ontology::Mention;

const STORE_MAGIC: &[u8; 8] = b"ELQADS\0\0";
const STORE_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("training instance {0} has no gold answer")]
    UnlabeledInstance(usize),
    #[error("ordinal {0} appears twice")]
    DuplicateOrdinal(usize),
    #[error("dimension mismatch: datastore has {expected}, query has {found}")]
    DimensionMismatch { expected: usize, found: usize },
    #[error("datastore was built with encoder {stored}, current encoder is {current}")]
    StaleEncoder { stored: String, current: String },
    #[error(transparent)]
    Embed(#[from] EmbedError),
    #[error("datastore file: {0}")]
    Io(#[from] io::Error),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatastoreEntry {
    pub key: EmbeddingVector,
    pub mention_text: String,
    pub choice_set: ChoiceSet,
    pub ordinal: usize,
}

impl DatastoreEntry {
    pub fn gold_symbol(&self) -> crate::mcp::Symbol {
        self.choice_set.gold_symbol().expect("datastore entries are labelled")
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Datastore {
    entries: Vec<DatastoreEntry>,
    dimension: usize,
    fingerprint: String,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Neighbor<'a> {
    pub entry: &'a DatastoreEntry,
    pub similarity: f64,
}

/// Up to `K` neighbors, most similar first.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NeighborSet<'a> {
    pub neighbors: Vec<Neighbor<'a>>,
}

impl<'a> NeighborSet<'a> {
    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    pub fn ordinals(&self) -> Vec<usize> {
        self.neighbors.iter().map(|n| n.entry.ordinal).collect()
    }
}

/// One entry per labelled training instance, keyed by the embedding of its
/// mention, ordered by ordinal.
pub fn build_datastore(training: &[(Mention, ChoiceSet)], embedder: &dyn Embedder) -> Result<Datastore, StoreError> {
    for (m, cs) in training {
        if cs.gold_symbol().is_none() {
            return Err(StoreError::UnlabeledInstance(m.ordinal));
        }
    }
    let keys = if training.is_empty() {
        Vec::new()
    } else {
        let texts: Vec<&str> = training.iter().map(|(m, _)| m.text.as_str()).collect();
        embedder.embed(&texts)?
    };
    let entries = training
        .iter()
        .zip(keys)
        .map(|((m, cs), key)| DatastoreEntry {
            key,
            mention_text: m.text.clone(),
            choice_set: cs.clone(),
            ordinal: m.ordinal,
        })
        .collect();
    Datastore::from_entries(entries, embedder.fingerprint())
}

fn by_similarity(a: &Neighbor<'_>, b: &Neighbor<'_>) -> std::cmp::Ordering {
    b.similarity
        .total_cmp(&a.similarity)
        .then_with(|| a.entry.ordinal.cmp(&b.entry.ordinal))
}

impl Datastore {
    pub fn from_entries(mut entries: Vec<DatastoreEntry>, fingerprint: String) -> Result<Datastore, StoreError> {
        entries.sort_by_key(|e| e.ordinal);
        for pair in entries.windows(2) {
            if pair[0].ordinal == pair[1].ordinal {
                return Err(StoreError::DuplicateOrdinal(pair[0].ordinal));
            }
        }
        let dimension = entries.first().map_or(0, |e| e.key.dimension());
        for e in &entries {
            if e.choice_set.gold_symbol().is_none() {
                return Err(StoreError::UnlabeledInstance(e.ordinal));
            }
            if e.key.dimension() != dimension {
                return Err(StoreError::DimensionMismatch {
                    expected: dimension,
                    found: e.key.dimension(),
                });
            }
        }
        Ok(Datastore {
            entries,
            dimension,
            fingerprint,
        })
    }

    pub fn entries(&self) -> &[DatastoreEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn fingerprint(&self) -> &str {
        &self.fingerprint
    }

    /// Fails if the store was keyed by a different encoder.
    pub fn check_encoder(&self, embedder: &dyn Embedder) -> Result<(), StoreError> {
        let current = embedder.fingerprint();
        if current != self.fingerprint {
            return Err(StoreError::StaleEncoder {
                stored: self.fingerprint.clone(),
                current,
            });
        }
        Ok(())
    }

    fn scored(&self, query: &EmbeddingVector, exclude_ordinal: Option<usize>) -> Result<Vec<Neighbor<'_>>, StoreError> {
        if self.entries.is_empty() {
            return Ok(Vec::new());
        }
        if query.dimension() != self.dimension {
            return Err(StoreError::DimensionMismatch {
                expected: self.dimension,
                found: query.dimension(),
            });
        }
        let q = query.as_slice();
        Ok(self
            .entries
            .iter()
            .filter(|e| Some(e.ordinal) != exclude_ordinal)
            .map(|e| Neighbor {
                entry: e,
                similarity: e.key.as_slice().iter().zip(q).map(|(a, b)| a * b).sum::<f64>().clamp(-1.0, 1.0),
            })
            .collect())
    }

    /// Exact top-`k` by cosine, skipping `exclude_ordinal`; ties go to the
    /// smaller ordinal.
    pub fn query(&self, query: &EmbeddingVector, k: usize, exclude_ordinal: Option<usize>) -> Result<NeighborSet<'_>, StoreError> {
        if k == 0 {
            return Ok(NeighborSet::default());
        }
        let mut all = self.scored(query, exclude_ordinal)?;
        if k < all.len() {
            all.select_nth_unstable_by(k - 1, by_similarity);
            all.truncate(k);
        }
        all.sort_by(by_similarity);
        Ok(NeighborSet { neighbors: all })
    }

    /// `k` entries drawn uniformly without replacement (seeded), reported
    /// most similar first.
    pub fn random_sample(
        &self,
        query: &EmbeddingVector,
        k: usize,
        seed: u64,
        exclude_ordinal: Option<usize>,
    ) -> Result<NeighborSet<'_>, StoreError> {
        let all = self.scored(query, exclude_ordinal)?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut picked: Vec<Neighbor<'_>> = sample(&mut rng, all.len(), k.min(all.len()))
            .into_iter()
            .map(|i| all[i])
            .collect();
        picked.sort_by(by_similarity);
        Ok(NeighborSet { neighbors: picked })
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<(), StoreError> {
        binio::write_header(w, STORE_MAGIC, STORE_VERSION)?;
        binio::write_str(w, &self.fingerprint)?;
        binio::write_u32(w, self.dimension as u32)?;
        binio::write_u64(w, self.entries.len() as u64)?;
        for e in &self.entries {
            binio::write_u64(w, e.ordinal as u64)?;
            binio::write_f64s(w, e.key.as_slice())?;
            binio::write_str(w, &e.mention_text)?;
            binio::write_str(w, &serde_json::to_string(&e.choice_set).expect("choice set serializes"))?;
        }
        Ok(())
    }

    pub fn read_from<R: Read>(r: &mut R) -> Result<Datastore, StoreError> {
        binio::expect_header(r, STORE_MAGIC, STORE_VERSION)?;
        let fingerprint = binio::read_str(r)?;
        let dimension = binio::read_u32(r)? as usize;
        let count = binio::read_u64(r)? as usize;
        let mut entries = Vec::with_capacity(count);
        for _ in 0..count {
            let ordinal = binio::read_u64(r)? as usize;
            let key = EmbeddingVector::from_unit(binio::read_f64s(r, dimension)?);
            let mention_text = binio::read_str(r)?;
            let choice_set: ChoiceSet = serde_json::from_str(&binio::read_str(r)?)
                .map_err(|e| io::Error::new(io::ErrorKind::InvalidData, e))?;
            entries.push(DatastoreEntry {
                key,
                mention_text,
                choice_set,
                ordinal,
            });
        }
        Datastore::from_entries(entries, fingerprint)
    }

    pub fn save(&self, path: &Path) -> Result<(), StoreError> {
        let mut w = BufWriter::new(File::create(path)?);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Datastore, StoreError> {
        Datastore::read_from(&mut BufReader::new(File::open(path)?))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum NeighborOrder {
    #[default]
    MostSimilarFirst,
    MostSimilarLast,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BlockSeparator {
    #[default]
    Space,
    Newline,
}

impl BlockSeparator {
    fn as_str(self) -> &'static str {
        match self {
            BlockSeparator::Space => " ",
            BlockSeparator::Newline => "\n",
        }
    }
}

/// What follows `answer:` in a solved neighbor block.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum AnswerStyle {
    #[default]
    Symbol,
    /// The gold option's display name (entity-name generation).
    Name,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct AssembleOptions {
    pub order: NeighborOrder,
    pub separator: BlockSeparator,
    pub answer_style: AnswerStyle,
    /// Upper bound on prompt length in characters; the least similar
    /// neighbors are dropped first to respect it.
    pub max_chars: Option<usize>,
}

fn solved_block(entry: &DatastoreEntry, style: AnswerStyle) -> String {
    let answer = match style {
        AnswerStyle::Symbol => entry.gold_symbol().to_string(),
        AnswerStyle::Name => entry
            .choice_set
            .gold_option()
            .expect("datastore entries are labelled")
            .display_name
            .clone(),
    };
    format!("{} {answer}", render_text(&entry.choice_set))
}

/// Solved neighbor blocks followed by the unsolved input block.
pub fn assemble_enhanced_prompt(neighbors: &NeighborSet<'_>, input: &ChoiceSet, opts: &AssembleOptions) -> PromptInstance {
    let sep = opts.separator.as_str();
    let tail = render_text(input);
    let mut blocks: Vec<String> = neighbors
        .neighbors
        .iter()
        .map(|n| solved_block(n.entry, opts.answer_style))
        .collect();
    if let Some(max) = opts.max_chars {
        let len = |blocks: &[String]| {
            blocks.iter().map(|b| b.chars().count() + sep.len()).sum::<usize>() + tail.chars().count()
        };
        while !blocks.is_empty() && len(&blocks) > max {
            blocks.pop();
        }
    }
    if opts.order == NeighborOrder::MostSimilarLast {
        blocks.reverse();
    }
    let mut text = String::new();
    for b in &blocks {
        text.push_str(b);
        text.push_str(sep);
    }
    text.push_str(&tail);
    PromptInstance {
        text,
        expected_symbol: input.gold_symbol(),
        provenance: Provenance::RetrievalEnhanced,
    }
}
