//! Answer-selection backends.
//!
//! Every backend takes a rendered prompt plus the [`ChoiceSet`] of its final
//! block and returns an [`Answer`]: the chosen symbol and a probability for
//! each allowed symbol. Three backends exist:
//!
//! * [`GeneratorBackend::ScriptedOracle`] answers with the choice set's gold
//!   symbol. Its accuracy is the retriever's recall, which makes it a test
//!   fixture for the rest of the pipeline.
//! * [`GeneratorBackend::Lexical`] scores options by character trigram
//!   overlap with the mention, plus votes from solved neighbor blocks found
//!   in the prompt.
//! * [`GeneratorBackend::Remote`] posts to a `/generate` endpoint.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mcp::{parse_answer, parse_prompt, ChoiceSet, ParsedAnswer, PromptInstance, Symbol};
use crate::ontology::{fold_case, Ontology};
use crate::remote::{HttpJsonClient, RemoteConfig, RemoteError};

/// Tolerance on the sum of a score map.
pub const SCORE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GeneratorError {
    #[error("generator unavailable: {0}")]
    RemoteUnavailable(String),
    #[error("malformed generator response: {0}")]
    MalformedRemoteResponse(String),
}

impl From<RemoteError> for GeneratorError {
    fn from(e: RemoteError) -> Self {
        match e {
            RemoteError::Unavailable(m) => GeneratorError::RemoteUnavailable(m),
            RemoteError::Malformed(m) => GeneratorError::MalformedRemoteResponse(m),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Answer {
    /// `None` when the backend's symbol named no assigned option.
    pub symbol: Option<Symbol>,
    pub scores: BTreeMap<Symbol, f64>,
    pub raw_output: String,
}

/// Result of free-text name generation.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct NameAnswer {
    pub emitted: String,
    /// `None` is a no-match: the emitted name is not in the ontology.
    pub entity_id: Option<String>,
}

/// Highest-scoring symbol; ties go to the alphabetically first.
pub fn argmax(scores: &BTreeMap<Symbol, f64>) -> Option<Symbol> {
    let mut best: Option<(Symbol, f64)> = None;
    for (&s, &v) in scores {
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((s, v));
        }
    }
    best.map(|(s, _)| s)
}

/// Softmax over raw option scores at temperature 1, keyed by symbol.
pub fn softmax(raw: &[(Symbol, f64)]) -> BTreeMap<Symbol, f64> {
    let max = raw.iter().map(|(_, v)| *v).fold(f64::NEG_INFINITY, f64::max);
    let exp: Vec<f64> = raw.iter().map(|(_, v)| (v - max).exp()).collect();
    let total: f64 = exp.iter().sum();
    raw.iter().zip(exp).map(|((s, _), e)| (*s, e / total)).collect()
}

/// Checks a score map against the allowed symbols: same key set, finite
/// non-negative values summing to one.
pub fn validate_scores(scores: &BTreeMap<Symbol, f64>, allowed: &[Symbol]) -> Result<(), GeneratorError> {
    let keys: BTreeSet<Symbol> = scores.keys().copied().collect();
    let expected: BTreeSet<Symbol> = allowed.iter().copied().collect();
    if keys != expected {
        let show = |s: &BTreeSet<Symbol>| s.iter().map(Symbol::to_string).collect::<Vec<_>>().join(",");
        return Err(GeneratorError::MalformedRemoteResponse(format!(
            "score keys {{{}}} differ from allowed symbols {{{}}}",
            show(&keys),
            show(&expected)
        )));
    }
    if let Some((s, v)) = scores.iter().find(|(_, v)| !v.is_finite() || **v < 0.0) {
        return Err(GeneratorError::MalformedRemoteResponse(format!("score for {s} is {v}")));
    }
    let sum: f64 = scores.values().sum();
    if (sum - 1.0).abs() > SCORE_SUM_TOLERANCE {
        return Err(GeneratorError::MalformedRemoteResponse(format!("scores sum to {sum}")));
    }
    Ok(())
}

fn trigrams(text: &str) -> BTreeSet<String> {
    let norm = format!(" {} ", fold_case(text).split_whitespace().collect::<Vec<_>>().join(" "));
    let chars: Vec<char> = norm.chars().collect();
    chars.windows(3).map(|w| w.iter().collect()).collect()
}

/// Dice coefficient of the character trigram sets of two strings, after
/// lowercasing, collapsing whitespace and padding with one space each side.
pub fn trigram_dice(a: &str, b: &str) -> f64 {
    let (ta, tb) = (trigrams(a), trigrams(b));
    if ta.is_empty() && tb.is_empty() {
        return 0.0;
    }
    let shared = ta.intersection(&tb).count();
    2.0 * shared as f64 / (ta.len() + tb.len()) as f64
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LexicalConfig {
    /// Weight of one fully similar solved neighbor relative to a perfect
    /// lexical match.
    pub neighbor_weight: f64,
    /// Exponent on a neighbor's mention overlap; higher values let only
    /// near-identical neighbors vote.
    pub neighbor_sharpness: f64,
    /// In name generation, when the best option scores below this the
    /// mention itself is echoed instead of an option name.
    pub copy_threshold: f64,
}

impl Default for LexicalConfig {
    fn default() -> Self {
        LexicalConfig {
            neighbor_weight: 1.0,
            neighbor_sharpness: 32.0,
            copy_threshold: 0.5,
        }
    }
}

#[derive(Debug)]
pub enum GeneratorBackend {
    ScriptedOracle,
    Lexical(LexicalConfig),
    Remote(RemoteGenerator),
}

impl GeneratorBackend {
    pub fn kind(&self) -> &'static str {
        match self {
            GeneratorBackend::ScriptedOracle => "scripted-oracle",
            GeneratorBackend::Lexical(_) => "lexical-heuristic",
            GeneratorBackend::Remote(_) => "remote-seq2seq",
        }
    }

    pub fn answer(&self, prompt: &PromptInstance, cs: &ChoiceSet) -> Result<Answer, GeneratorError> {
        match self {
            GeneratorBackend::ScriptedOracle => Ok(oracle_answer(cs)),
            GeneratorBackend::Lexical(cfg) => Ok(lexical_answer(cfg, prompt, cs)),
            GeneratorBackend::Remote(r) => r.answer(prompt, cs),
        }
    }

    /// Free-text entity name for the prompt's final block, resolved against
    /// the ontology by exact case-folded name. Several matching entities
    /// resolve to the smallest id.
    pub fn answer_generate_names(
        &self,
        prompt: &PromptInstance,
        cs: &ChoiceSet,
        ontology: &Ontology,
    ) -> Result<NameAnswer, GeneratorError> {
        let emitted = match self {
            GeneratorBackend::ScriptedOracle => cs
                .gold_option()
                .map(|o| o.display_name.clone())
                .unwrap_or_else(|| cs.mention_text().to_string()),
            GeneratorBackend::Lexical(cfg) => lexical_name(cfg, prompt, cs),
            GeneratorBackend::Remote(r) => r.answer(prompt, cs)?.raw_output.trim().to_string(),
        };
        let entity_id = ontology.lookup_by_name(&emitted).into_iter().next().map(str::to_string);
        Ok(NameAnswer { emitted, entity_id })
    }
}

fn oracle_answer(cs: &ChoiceSet) -> Answer {
    let raw: Vec<(Symbol, f64)> = match cs.gold_symbol() {
        Some(g) => cs.allowed_symbols().into_iter().map(|s| (s, f64::from(s == g))).collect(),
        None => {
            let n = cs.len() as f64;
            cs.allowed_symbols().into_iter().map(|s| (s, 1.0 / n)).collect()
        }
    };
    let scores: BTreeMap<Symbol, f64> = raw.into_iter().collect();
    let symbol = argmax(&scores);
    Answer {
        raw_output: symbol.map(|s| s.to_string()).unwrap_or_default(),
        symbol,
        scores,
    }
}

/// Raw option scores: trigram overlap with the mention plus weighted votes
/// from solved blocks whose answer names the same string as the option.
fn lexical_raw_scores(cfg: &LexicalConfig, prompt: &PromptInstance, cs: &ChoiceSet) -> Vec<(Symbol, f64)> {
    let mention = cs.mention_text();
    let mut raw: Vec<(Symbol, f64)> = cs
        .options()
        .iter()
        .map(|o| (o.symbol, trigram_dice(mention, &o.display_name)))
        .collect();
    if cfg.neighbor_weight == 0.0 {
        return raw;
    }
    let Some(blocks) = parse_prompt(&prompt.text) else {
        return raw;
    };
    let names: Vec<String> = cs.options().iter().map(|o| fold_case(&o.display_name)).collect();
    for block in blocks.iter().filter(|b| b.answer.is_some()) {
        let answer = block.answer.as_deref().unwrap_or_default();
        // A symbol answer points into the block's own options; anything
        // else is taken as the answer name itself.
        let voted = match Symbol::from_char(answer.chars().next().unwrap_or(' ')) {
            Some(s) if answer.len() == 1 => block.options.iter().find(|(sym, _)| *sym == s).map(|(_, n)| n.as_str()),
            _ => Some(answer),
        };
        let Some(voted) = voted.map(fold_case) else { continue };
        let weight = cfg.neighbor_weight * trigram_dice(mention, &block.mention).powf(cfg.neighbor_sharpness);
        for (slot, name) in raw.iter_mut().zip(&names) {
            if *name == voted {
                slot.1 += weight;
            }
        }
    }
    raw
}

fn lexical_answer(cfg: &LexicalConfig, prompt: &PromptInstance, cs: &ChoiceSet) -> Answer {
    let scores = softmax(&lexical_raw_scores(cfg, prompt, cs));
    let symbol = argmax(&scores);
    Answer {
        raw_output: symbol.map(|s| s.to_string()).unwrap_or_default(),
        symbol,
        scores,
    }
}

fn lexical_name(cfg: &LexicalConfig, prompt: &PromptInstance, cs: &ChoiceSet) -> String {
    let raw = lexical_raw_scores(cfg, prompt, cs);
    let best = argmax(&softmax(&raw)).map(|s| (cs.option(s), raw[s.index()].1));
    match best {
        Some((Some(opt), score)) if score >= cfg.copy_threshold => opt.display_name.clone(),
        _ => cs.mention_text().to_string(),
    }
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateRequest {
    pub prompt: String,
    pub allowed_symbols: Vec<Symbol>,
    pub max_new_tokens: u32,
}

#[derive(Debug, Serialize, Deserialize, PartialEq)]
pub struct GenerateResponse {
    pub symbol: String,
    pub scores: BTreeMap<String, f64>,
    pub raw: String,
}

impl GenerateRequest {
    pub fn new(prompt: &PromptInstance, cs: &ChoiceSet) -> GenerateRequest {
        GenerateRequest {
            prompt: prompt.text.clone(),
            allowed_symbols: cs.allowed_symbols(),
            max_new_tokens: 1,
        }
    }
}

/// Validates a `/generate` response against the choice set it answers.
///
/// The score map must be well formed. The symbol goes through
/// [`parse_answer`]: one naming no option yields `symbol: None` (an invalid
/// output, not an error), while one contradicting the scores is malformed.
pub fn decode_response(resp: GenerateResponse, cs: &ChoiceSet) -> Result<Answer, GeneratorError> {
    let mut scores = BTreeMap::new();
    for (k, v) in resp.scores {
        let mut chars = k.chars();
        let sym = match (chars.next().and_then(Symbol::from_char), chars.next()) {
            (Some(s), None) if k.chars().all(|c| c.is_ascii_uppercase()) => s,
            _ => return Err(GeneratorError::MalformedRemoteResponse(format!("score key {k:?} is not a symbol"))),
        };
        scores.insert(sym, v);
    }
    validate_scores(&scores, &cs.allowed_symbols())?;
    let symbol = match parse_answer(&resp.symbol, cs) {
        ParsedAnswer::Symbol(s) => {
            if argmax(&scores) != Some(s) {
                return Err(GeneratorError::MalformedRemoteResponse(format!(
                    "symbol {s} is not the highest-scoring option"
                )));
            }
            Some(s)
        }
        ParsedAnswer::Fallback { .. } => None,
    };
    Ok(Answer {
        symbol,
        scores,
        raw_output: resp.raw,
    })
}

/// Client for a remote `/generate` endpoint.
#[derive(Debug)]
pub struct RemoteGenerator {
    client: HttpJsonClient,
    /// Upper bound on concurrent requests issued by batch callers.
    pub max_in_flight: usize,
}

impl RemoteGenerator {
    pub fn new(config: RemoteConfig) -> RemoteGenerator {
        RemoteGenerator {
            client: HttpJsonClient::new(config),
            max_in_flight: 4,
        }
    }

    pub fn answer(&self, prompt: &PromptInstance, cs: &ChoiceSet) -> Result<Answer, GeneratorError> {
        let resp: GenerateResponse = self.client.post("generate", &GenerateRequest::new(prompt, cs))?;
        decode_response(resp, cs)
    }
}
