//! Multiple-choice prompts.
//!
//! A [`ChoiceSet`] is a mention plus up to 26 candidate entities labelled
//! `A`, `B`, ... in retrieval order. [`render`] turns it into the prompt
//!
//! ```text
//! mention: <m> options: A. <o1> B. <o2> ... answer:
//! ```
//!
//! and the generator's reply is read back with [`parse_answer`].
//! [`augment_swap`] permutes the options (tracking the gold symbol) to break
//! the link between answers and positions.

use std::fmt;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Deserializer, Serialize, Serializer};
use thiserror::Error;

use crate::ontology::Ontology;
use crate::vecindex::Candidate;

pub const MAX_OPTIONS: usize = 26;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum McpError {
    #[error("no candidates")]
    NoCandidates,
    #[error("{0} options exceed the {MAX_OPTIONS}-symbol alphabet")]
    TooManyOptions(usize),
    #[error("entity {0} appears twice among the options")]
    DuplicateEntity(String),
    #[error("gold symbol {0} is not one of the assigned symbols")]
    GoldOutOfRange(Symbol),
    #[error("swap augmentation needs at least two options")]
    SingleOption,
    #[error("swap augmentation needs a labelled choice set")]
    MissingGold,
    #[error("entity {0} is not in the ontology")]
    UnknownEntity(String),
}

/// Answer symbol: one uppercase letter.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Symbol(u8);

impl Symbol {
    pub fn from_index(i: usize) -> Option<Symbol> {
        (i < MAX_OPTIONS).then(|| Symbol(i as u8))
    }

    pub fn from_char(c: char) -> Option<Symbol> {
        let c = c.to_ascii_uppercase();
        c.is_ascii_uppercase().then(|| Symbol(c as u8 - b'A'))
    }

    pub fn index(self) -> usize {
        self.0 as usize
    }

    pub fn as_char(self) -> char {
        (b'A' + self.0) as char
    }
}

impl fmt::Display for Symbol {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.as_char())
    }
}

impl Serialize for Symbol {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_str(&self.to_string())
    }
}

impl<'de> Deserialize<'de> for Symbol {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Symbol, D::Error> {
        let s = String::deserialize(d)?;
        let mut chars = s.chars();
        match (chars.next().and_then(Symbol::from_char), chars.next()) {
            (Some(sym), None) if s.chars().all(|c| c.is_ascii_uppercase()) => Ok(sym),
            _ => Err(serde::de::Error::custom(format!("invalid answer symbol {s:?}"))),
        }
    }
}

/// The first `n` symbols, `A` onwards.
pub fn symbols(n: usize) -> impl Iterator<Item = Symbol> {
    (0..n.min(MAX_OPTIONS)).map(|i| Symbol(i as u8))
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnswerOption {
    pub symbol: Symbol,
    pub entity_id: String,
    pub display_name: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChoiceSet {
    mention_text: String,
    options: Vec<AnswerOption>,
    gold_symbol: Option<Symbol>,
}

impl ChoiceSet {
    /// Assigns symbols positionally to `(entity id, display name)` options.
    pub fn new(
        mention_text: impl Into<String>,
        options: Vec<(String, String)>,
        gold_symbol: Option<Symbol>,
    ) -> Result<ChoiceSet, McpError> {
        if options.is_empty() {
            return Err(McpError::NoCandidates);
        }
        if options.len() > MAX_OPTIONS {
            return Err(McpError::TooManyOptions(options.len()));
        }
        let mut seen = std::collections::HashSet::new();
        for (id, _) in &options {
            if !seen.insert(id.as_str()) {
                return Err(McpError::DuplicateEntity(id.clone()));
            }
        }
        if let Some(g) = gold_symbol {
            if g.index() >= options.len() {
                return Err(McpError::GoldOutOfRange(g));
            }
        }
        let options = options
            .into_iter()
            .zip(symbols(MAX_OPTIONS))
            .map(|((entity_id, display_name), symbol)| AnswerOption {
                symbol,
                entity_id,
                display_name,
            })
            .collect();
        Ok(ChoiceSet {
            mention_text: mention_text.into(),
            options,
            gold_symbol,
        })
    }

    pub fn mention_text(&self) -> &str {
        &self.mention_text
    }

    pub fn options(&self) -> &[AnswerOption] {
        &self.options
    }

    pub fn len(&self) -> usize {
        self.options.len()
    }

    pub fn is_empty(&self) -> bool {
        self.options.is_empty()
    }

    pub fn gold_symbol(&self) -> Option<Symbol> {
        self.gold_symbol
    }

    pub fn allowed_symbols(&self) -> Vec<Symbol> {
        symbols(self.options.len()).collect()
    }

    pub fn option(&self, symbol: Symbol) -> Option<&AnswerOption> {
        self.options.get(symbol.index())
    }

    pub fn gold_option(&self) -> Option<&AnswerOption> {
        self.gold_symbol.and_then(|s| self.option(s))
    }

    pub fn symbol_of(&self, entity_id: &str) -> Option<Symbol> {
        self.options.iter().find(|o| o.entity_id == entity_id).map(|o| o.symbol)
    }
}

/// Whether a missing gold entity is injected into the options.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum LabelMode {
    /// Options are exactly the retrieved candidates.
    Eval,
    /// A gold entity the retriever missed replaces the last candidate.
    Train,
}

/// Which string represents an option in the prompt.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DisplayName {
    /// The name row that matched during retrieval.
    #[default]
    Matched,
    Canonical,
}

pub fn make_choice_set(
    mention_text: &str,
    candidates: &[Candidate],
    gold_id: Option<&str>,
    mode: LabelMode,
    display: DisplayName,
    ontology: &Ontology,
) -> Result<ChoiceSet, McpError> {
    if candidates.is_empty() {
        return Err(McpError::NoCandidates);
    }
    if candidates.len() > MAX_OPTIONS {
        return Err(McpError::TooManyOptions(candidates.len()));
    }
    let name_for = |c: &Candidate| -> Result<String, McpError> {
        Ok(match display {
            DisplayName::Matched => c.matched_name.clone(),
            DisplayName::Canonical => ontology
                .get(&c.entity_id)
                .ok_or_else(|| McpError::UnknownEntity(c.entity_id.clone()))?
                .canonical_name
                .clone(),
        })
    };
    let mut options = candidates
        .iter()
        .map(|c| Ok((c.entity_id.clone(), name_for(c)?)))
        .collect::<Result<Vec<_>, McpError>>()?;
    let mut gold_symbol = gold_id.and_then(|g| options.iter().position(|(id, _)| id == g));
    if let (None, Some(gold), LabelMode::Train) = (gold_symbol, gold_id, mode) {
        let entity = ontology
            .get(gold)
            .ok_or_else(|| McpError::UnknownEntity(gold.to_string()))?;
        let last = options.len() - 1;
        options[last] = (entity.id.clone(), entity.canonical_name.clone());
        gold_symbol = Some(last);
    }
    ChoiceSet::new(mention_text, options, gold_symbol.map(|i| Symbol(i as u8)))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Original,
    AugmentedSwap,
    RetrievalEnhanced,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptInstance {
    pub text: String,
    pub expected_symbol: Option<Symbol>,
    pub provenance: Provenance,
}

/// The prompt text for one choice set, ending in `answer:`.
pub fn render_text(cs: &ChoiceSet) -> String {
    let mut text = String::with_capacity(32 + cs.mention_text.len() + cs.options.len() * 16);
    text.push_str("mention: ");
    text.push_str(&cs.mention_text);
    text.push_str(" options: ");
    for opt in &cs.options {
        text.push(opt.symbol.as_char());
        text.push_str(". ");
        text.push_str(&opt.display_name);
        text.push(' ');
    }
    text.push_str("answer:");
    text
}

pub fn render(cs: &ChoiceSet) -> PromptInstance {
    PromptInstance {
        text: render_text(cs),
        expected_symbol: cs.gold_symbol,
        provenance: Provenance::Original,
    }
}

/// Reorders the options by a uniformly drawn non-identity permutation,
/// reassigning symbols positionally. Deterministic in `seed`.
pub fn augment_swap(cs: &ChoiceSet, seed: u64) -> Result<ChoiceSet, McpError> {
    if cs.options.len() < 2 {
        return Err(McpError::SingleOption);
    }
    let gold = cs.gold_symbol.ok_or(McpError::MissingGold)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut order: Vec<usize> = (0..cs.options.len()).collect();
    loop {
        order.shuffle(&mut rng);
        if order.iter().enumerate().any(|(i, &j)| i != j) {
            break;
        }
    }
    let options = order
        .iter()
        .map(|&j| (cs.options[j].entity_id.clone(), cs.options[j].display_name.clone()))
        .collect();
    let new_gold = order.iter().position(|&j| j == gold.index()).expect("permutation");
    ChoiceSet::new(cs.mention_text.clone(), options, Some(Symbol(new_gold as u8)))
}

/// `count` swapped copies of `cs`, each from its own derived seed.
pub fn augment(cs: &ChoiceSet, count: usize, seed: u64) -> Result<Vec<ChoiceSet>, McpError> {
    (0..count as u64)
        .map(|i| augment_swap(cs, seed.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i)))
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ParsedAnswer {
    Symbol(Symbol),
    /// The output named no assigned symbol; falls back to the rank-1 option.
    Fallback { entity_id: String },
}

/// Reads the first non-space character of a generator reply as a symbol.
pub fn parse_answer(output: &str, cs: &ChoiceSet) -> ParsedAnswer {
    let symbol = output
        .trim()
        .chars()
        .next()
        .and_then(Symbol::from_char)
        .filter(|s| s.index() < cs.options.len());
    match symbol {
        Some(s) => ParsedAnswer::Symbol(s),
        None => ParsedAnswer::Fallback {
            entity_id: cs.options[0].entity_id.clone(),
        },
    }
}

/// One `mention: ... answer:` block recovered from prompt text.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PromptBlock {
    pub mention: String,
    pub options: Vec<(Symbol, String)>,
    /// Text after `answer:` for solved blocks.
    pub answer: Option<String>,
}

/// Splits prompt text produced by [`render`] (possibly several blocks
/// concatenated) back into blocks. Returns `None` when the text does not
/// follow the template, e.g. because a name itself contains template
/// markers.
pub fn parse_prompt(text: &str) -> Option<Vec<PromptBlock>> {
    let mut blocks = Vec::new();
    let mut rest = text.trim_start();
    while !rest.is_empty() {
        rest = rest.strip_prefix("mention: ")?;
        let opt_at = rest.find(" options: ")?;
        let mention = rest[..opt_at].to_string();
        rest = &rest[opt_at + " options: ".len()..];
        let ans_at = rest.find("answer:")?;
        let region = rest[..ans_at].strip_suffix(' ')?;
        rest = &rest[ans_at + "answer:".len()..];

        let mut options = Vec::new();
        let mut region = region;
        for sym in symbols(MAX_OPTIONS) {
            region = region.strip_prefix(&format!("{sym}. "))?;
            let next = Symbol::from_index(sym.index() + 1).map(|n| format!(" {n}. "));
            match next.and_then(|n| region.find(&n)) {
                Some(end) => {
                    options.push((sym, region[..end].to_string()));
                    region = &region[end + 1..];
                }
                None => {
                    options.push((sym, region.to_string()));
                    break;
                }
            }
        }

        let next_block = rest.find("mention: ").unwrap_or(rest.len());
        let answer = rest[..next_block].trim();
        rest = &rest[next_block..];
        blocks.push(PromptBlock {
            mention,
            options,
            answer: (!answer.is_empty()).then(|| answer.to_string()),
        });
    }
    Some(blocks)
}

/// JSONL row for prompt export: `{"prompt", "symbol", "ordinal", "provenance"}`.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PromptRecord {
    pub prompt: String,
    pub symbol: Option<Symbol>,
    pub ordinal: usize,
    pub provenance: Provenance,
}

impl PromptRecord {
    pub fn new(prompt: &PromptInstance, ordinal: usize) -> PromptRecord {
        PromptRecord {
            prompt: prompt.text.clone(),
            symbol: prompt.expected_symbol,
            ordinal,
            provenance: prompt.provenance,
        }
    }
}
