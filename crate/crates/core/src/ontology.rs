//! Target entity inventory and dataset ingestion.
//!
//! An [`Ontology`] holds every linkable [`Entity`] together with a case-folded
//! name index. Mention files for the train/dev/test splits are read into
//! [`Mention`] lists; mentions whose gold id is missing from the ontology are
//! kept but flagged as dangling so evaluation still sees them.
//!
//! Two on-disk layouts are accepted for both kinds of file:
//!
//! * tab-separated: `id<TAB>name<TAB>syn1|syn2` for dictionaries and
//!   `text<TAB>gold_id[<TAB>context]` for mentions;
//! * JSON lines carrying the same fields (`id`, `name`, `synonyms` /
//!   `text`, `gold_id`, `context`).

use std::collections::{BTreeMap, BTreeSet, HashMap, HashSet};
use std::fmt;
use std::fs;
use std::io::{self, Write};
use std::path::Path;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum OntologyError {
    #[error("io error reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: io::Error,
    },
    #[error("parse error at line {line}: {reason}")]
    Parse { line: usize, reason: String },
    #[error("duplicate entity id {0}")]
    DuplicateId(String),
    #[error("ontology contains no entities")]
    Empty,
    #[error("name {0:?} cannot be written as tab-separated text")]
    Unserializable(String),
    #[error("unknown format {0:?} (expected tsv or jsonl)")]
    UnknownFormat(String),
    #[error("unknown split {0:?} (expected train, dev or test)")]
    UnknownSplit(String),
}

pub type Result<T> = std::result::Result<T, OntologyError>;

/// Case folding used by every name comparison in the symbolic layer.
pub fn fold_case(name: &str) -> String {
    name.to_lowercase()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FileFormat {
    Tsv,
    Jsonl,
}

impl FromStr for FileFormat {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tsv" | "tsv-dict" => Ok(FileFormat::Tsv),
            "jsonl" | "json" => Ok(FileFormat::Jsonl),
            other => Err(OntologyError::UnknownFormat(other.to_string())),
        }
    }
}

impl FileFormat {
    /// Guess from the file extension, defaulting to tab-separated.
    pub fn from_path(path: &Path) -> FileFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("jsonl") | Some("json") => FileFormat::Jsonl,
            _ => FileFormat::Tsv,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Entity {
    pub id: String,
    #[serde(rename = "name")]
    pub canonical_name: String,
    #[serde(default)]
    pub synonyms: Vec<String>,
}

impl Entity {
    /// Builds an entity, trimming names and dropping synonyms that repeat
    /// another name of the same entity after case folding.
    pub fn new(
        id: impl Into<String>,
        canonical_name: impl Into<String>,
        synonyms: impl IntoIterator<Item = impl Into<String>>,
    ) -> Entity {
        let canonical_name = canonical_name.into().trim().to_string();
        let mut seen: HashSet<String> = HashSet::new();
        seen.insert(fold_case(&canonical_name));
        let synonyms = synonyms
            .into_iter()
            .map(|s| s.into().trim().to_string())
            .filter(|s| !s.is_empty() && seen.insert(fold_case(s)))
            .collect();
        Entity {
            id: id.into().trim().to_string(),
            canonical_name,
            synonyms,
        }
    }

    /// Canonical name followed by synonyms.
    pub fn names(&self) -> impl Iterator<Item = &str> {
        std::iter::once(self.canonical_name.as_str()).chain(self.synonyms.iter().map(String::as_str))
    }
}

/// The target entity set with a case-folded name index.
///
/// Immutable once built.
#[derive(Debug, Clone)]
pub struct Ontology {
    entities: Vec<Entity>,
    by_id: HashMap<String, usize>,
    name_index: BTreeMap<String, BTreeSet<String>>,
}

impl Ontology {
    pub fn from_entities(entities: Vec<Entity>) -> Result<Ontology> {
        if entities.is_empty() {
            return Err(OntologyError::Empty);
        }
        let mut by_id = HashMap::with_capacity(entities.len());
        let mut name_index: BTreeMap<String, BTreeSet<String>> = BTreeMap::new();
        for (pos, entity) in entities.iter().enumerate() {
            if by_id.insert(entity.id.clone(), pos).is_some() {
                return Err(OntologyError::DuplicateId(entity.id.clone()));
            }
            for name in entity.names() {
                name_index
                    .entry(fold_case(name))
                    .or_default()
                    .insert(entity.id.clone());
            }
        }
        Ok(Ontology {
            entities,
            by_id,
            name_index,
        })
    }

    pub fn len(&self) -> usize {
        self.entities.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entities.is_empty()
    }

    pub fn entities(&self) -> &[Entity] {
        &self.entities
    }

    pub fn get(&self, id: &str) -> Option<&Entity> {
        self.by_id.get(id).map(|&pos| &self.entities[pos])
    }

    pub fn contains(&self, id: &str) -> bool {
        self.by_id.contains_key(id)
    }

    pub fn name_index(&self) -> &BTreeMap<String, BTreeSet<String>> {
        &self.name_index
    }

    /// Case-folded exact match over canonical names and synonyms.
    pub fn lookup_by_name(&self, name: &str) -> BTreeSet<&str> {
        self.name_index
            .get(&fold_case(name))
            .map(|ids| ids.iter().map(String::as_str).collect())
            .unwrap_or_default()
    }

    /// Every `(entity id, name)` pair, canonical names and synonyms alike.
    pub fn named_rows(&self) -> impl Iterator<Item = (&str, &str)> {
        self.entities
            .iter()
            .flat_map(|e| e.names().map(move |n| (e.id.as_str(), n)))
    }

    /// Total number of names (canonical plus synonyms).
    pub fn name_count(&self) -> usize {
        self.entities.iter().map(|e| 1 + e.synonyms.len()).sum()
    }

    pub fn load(path: &Path, format: FileFormat) -> Result<Ontology> {
        let text = read_file(path)?;
        Ontology::parse(&text, format)
    }

    pub fn parse(text: &str, format: FileFormat) -> Result<Ontology> {
        let mut entities = Vec::new();
        for (lineno, line) in numbered_records(text) {
            let entity = match format {
                FileFormat::Tsv => parse_entity_tsv(line, lineno)?,
                FileFormat::Jsonl => {
                    let raw: Entity = serde_json::from_str(line).map_err(|e| OntologyError::Parse {
                        line: lineno,
                        reason: e.to_string(),
                    })?;
                    Entity::new(raw.id, raw.canonical_name, raw.synonyms)
                }
            };
            if entity.id.is_empty() || entity.canonical_name.is_empty() {
                return Err(OntologyError::Parse {
                    line: lineno,
                    reason: "empty id or name".into(),
                });
            }
            entities.push(entity);
        }
        Ontology::from_entities(entities)
    }

    /// Writes the dictionary in the given format; reading it back yields an
    /// equal ontology.
    pub fn write<W: Write>(&self, mut out: W, format: FileFormat) -> Result<()> {
        let io_err = |source| OntologyError::Io {
            path: "<writer>".into(),
            source,
        };
        for entity in &self.entities {
            match format {
                FileFormat::Tsv => {
                    check_tsv_field(&entity.id, false)?;
                    check_tsv_field(&entity.canonical_name, false)?;
                    for s in &entity.synonyms {
                        check_tsv_field(s, true)?;
                    }
                    writeln!(
                        out,
                        "{}\t{}\t{}",
                        entity.id,
                        entity.canonical_name,
                        entity.synonyms.join("|")
                    )
                    .map_err(io_err)?;
                }
                FileFormat::Jsonl => {
                    let line = serde_json::to_string(entity).expect("entity serializes");
                    writeln!(out, "{line}").map_err(io_err)?;
                }
            }
        }
        Ok(())
    }
}

fn check_tsv_field(field: &str, synonym: bool) -> Result<()> {
    let bad = field.contains(['\t', '\n', '\r']) || (synonym && field.contains('|'));
    if bad || field.trim() != field {
        return Err(OntologyError::Unserializable(field.to_string()));
    }
    Ok(())
}

fn read_file(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|source| OntologyError::Io {
        path: path.display().to_string(),
        source,
    })
}

/// Non-blank lines with 1-based line numbers.
fn numbered_records(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim_end_matches('\r')))
        .filter(|(_, l)| !l.trim().is_empty())
}

fn parse_entity_tsv(line: &str, lineno: usize) -> Result<Entity> {
    let mut cols = line.split('\t');
    let id = cols.next().unwrap_or_default();
    let name = cols.next().ok_or_else(|| OntologyError::Parse {
        line: lineno,
        reason: "expected id<TAB>name[<TAB>synonyms]".into(),
    })?;
    let synonyms = cols.next().unwrap_or_default();
    if cols.next().is_some() {
        return Err(OntologyError::Parse {
            line: lineno,
            reason: "too many columns".into(),
        });
    }
    Ok(Entity::new(id, name, synonyms.split('|')))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Dev,
    Test,
}

impl FromStr for Split {
    type Err = OntologyError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "dev" => Ok(Split::Dev),
            "test" => Ok(Split::Test),
            other => Err(OntologyError::UnknownSplit(other.to_string())),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Dev => "dev",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Mention {
    pub text: String,
    pub gold_id: Option<String>,
    pub split: Split,
    pub ordinal: usize,
    /// Surrounding text, carried through but unused by the pipeline.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub context: Option<String>,
    /// Set when `gold_id` is present but unknown to the ontology.
    #[serde(default)]
    pub dangling: bool,
}

impl Mention {
    pub fn new(text: impl Into<String>, gold_id: Option<&str>, split: Split, ordinal: usize) -> Mention {
        Mention {
            text: text.into(),
            gold_id: gold_id.map(str::to_string),
            split,
            ordinal,
            context: None,
            dangling: false,
        }
    }

    /// Gold id usable for training or scoring.
    pub fn usable_gold(&self) -> Option<&str> {
        if self.dangling {
            None
        } else {
            self.gold_id.as_deref()
        }
    }
}

/// Mentions of one split plus the number flagged as dangling.
#[derive(Debug, Clone)]
pub struct MentionFile {
    pub mentions: Vec<Mention>,
    pub dangling: usize,
}

#[derive(Deserialize)]
struct RawMention {
    text: String,
    #[serde(default)]
    gold_id: Option<String>,
    #[serde(default)]
    context: Option<String>,
}

pub fn ingest_mentions(path: &Path, split: Split, format: FileFormat, ontology: &Ontology) -> Result<MentionFile> {
    let text = read_file(path)?;
    parse_mentions(&text, split, format, ontology)
}

pub fn parse_mentions(text: &str, split: Split, format: FileFormat, ontology: &Ontology) -> Result<MentionFile> {
    let mut mentions = Vec::new();
    let mut dangling = 0;
    for (lineno, line) in numbered_records(text) {
        let raw = match format {
            FileFormat::Tsv => {
                let cols: Vec<&str> = line.split('\t').collect();
                if cols.len() > 3 {
                    return Err(OntologyError::Parse {
                        line: lineno,
                        reason: "expected text<TAB>gold_id[<TAB>context]".into(),
                    });
                }
                RawMention {
                    text: cols[0].to_string(),
                    gold_id: cols.get(1).map(|s| s.to_string()),
                    context: cols.get(2).map(|s| s.to_string()),
                }
            }
            FileFormat::Jsonl => serde_json::from_str(line).map_err(|e| OntologyError::Parse {
                line: lineno,
                reason: e.to_string(),
            })?,
        };
        let text = raw.text.trim();
        if text.is_empty() {
            return Err(OntologyError::Parse {
                line: lineno,
                reason: "empty mention text".into(),
            });
        }
        let gold_id = raw
            .gold_id
            .map(|g| g.trim().to_string())
            .filter(|g| !g.is_empty());
        let is_dangling = gold_id.as_deref().is_some_and(|g| !ontology.contains(g));
        if is_dangling {
            dangling += 1;
        }
        mentions.push(Mention {
            text: text.to_string(),
            gold_id,
            split,
            ordinal: mentions.len(),
            context: raw.context.filter(|c| !c.trim().is_empty()),
            dangling: is_dangling,
        });
    }
    if dangling > 0 {
        log::warn!("{dangling} {split} mentions reference ids absent from the ontology");
    }
    Ok(MentionFile { mentions, dangling })
}

/// Writes mentions as `text<TAB>gold_id`.
pub fn write_mentions<W: Write>(mut out: W, mentions: &[Mention]) -> io::Result<()> {
    for m in mentions {
        writeln!(out, "{}\t{}", m.text, m.gold_id.as_deref().unwrap_or(""))?;
    }
    Ok(())
}

/// `(text, gold id)` pairs for retriever training: every labeled,
/// non-dangling mention, then every synonym of every entity paired with its
/// owner.
pub fn training_pairs(mentions: &[Mention], ontology: &Ontology) -> Vec<(String, String)> {
    let mut pairs: Vec<(String, String)> = mentions
        .iter()
        .filter_map(|m| m.usable_gold().map(|g| (m.text.clone(), g.to_string())))
        .collect();
    for entity in ontology.entities() {
        for syn in &entity.synonyms {
            pairs.push((syn.clone(), entity.id.clone()));
        }
    }
    pairs
}
