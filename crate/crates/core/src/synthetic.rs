//! Seeded synthetic linking benchmark.
//!
//! Entities get invented biomedical-looking names. Some come in confusable
//! families (`glorin` next to `glorin c`), some share an abbreviation, and
//! some have a lay alias (`grey fever`) that never appears in the ontology
//! and is only learnable from labelled mentions. Mentions are drawn from a
//! long-tailed entity distribution and perturbed with `ae`/`e` spelling
//! swaps, appended tokens, dropped words and transposed letters.

use std::collections::HashSet;

use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::ontology::{Entity, Mention, Ontology, Split};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticConfig {
    pub entities: usize,
    pub train: usize,
    pub dev: usize,
    pub test: usize,
    /// Share of entities that spawn a qualified sibling (`x` and `x c`).
    pub family_rate: f64,
    /// Share of entities that spawn a one-letter lookalike (`glorin` and
    /// `florin`).
    pub lookalike_rate: f64,
    /// Share of entities with a lay alias.
    pub alias_rate: f64,
    /// Share of entities sharing an abbreviation with another entity.
    pub shared_synonym_rate: f64,
    /// Exponent of the power law over entity frequencies.
    pub zipf_exponent: f64,
    pub seed: u64,
}

impl Default for SyntheticConfig {
    fn default() -> Self {
        SyntheticConfig {
            entities: 500,
            train: 2000,
            dev: 200,
            test: 400,
            family_rate: 0.2,
            lookalike_rate: 0.15,
            alias_rate: 0.15,
            shared_synonym_rate: 0.06,
            zipf_exponent: 0.8,
            seed: 20_240_917,
        }
    }
}

#[derive(Debug, Clone)]
pub struct Benchmark {
    pub ontology: Ontology,
    pub train: Vec<Mention>,
    pub dev: Vec<Mention>,
    pub test: Vec<Mention>,
    /// Lay alias per entity id, for inspection.
    pub aliases: Vec<(String, String)>,
}

const ONSETS: &[&str] = &[
    "b", "c", "d", "f", "g", "h", "k", "l", "m", "n", "p", "r", "s", "t", "v", "z", "ch", "th", "ph", "tr", "gl", "pr",
    "st", "cr",
];
const VOWELS: &[&str] = &["a", "e", "i", "o", "u", "ae", "y", "ea"];
const CODAS: &[&str] = &["", "", "n", "l", "r", "s", "x", "m", "t"];
const ENDINGS: &[&str] = &["in", "ase", "itis", "osis", "emia", "oma", "ine", "ol", "ide", "ia"];
const QUALIFIERS: &[&str] = &["c", "b", "type 2", "a1c", "deficiency", "syndrome", "disease", "receptor", "toxicity"];
const MENTION_TOKENS: &[&str] = &["disease", "syndrome", "disorder", "deficiency", "levels", "toxicity"];
const LAY_WORDS: &[&str] = &[
    "grey", "fever", "sore", "back", "sugar", "blood", "tired", "dizzy", "itchy", "spots", "heart", "attack", "weak",
    "belly", "cramp", "swelling", "stiff", "joints", "rash", "cough", "night", "sweats", "burning", "chest", "foggy",
    "head", "shaky", "hands", "dry", "eyes", "pale", "skin", "short", "breath", "lump", "neck", "sleepy", "legs",
];

fn word(rng: &mut ChaCha8Rng) -> String {
    let syllables = rng.random_range(1..=3);
    let mut w = String::new();
    for _ in 0..syllables {
        w.push_str(ONSETS.choose(rng).unwrap());
        w.push_str(VOWELS.choose(rng).unwrap());
        w.push_str(CODAS.choose(rng).unwrap());
    }
    w.push_str(ENDINGS.choose(rng).unwrap());
    w
}

struct Draft {
    id: String,
    name: String,
    synonyms: Vec<String>,
    alias: Option<String>,
}

/// `ae` spelled `e` or the reverse, when the text allows it.
fn spelling_variant(text: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    if text.contains("ae") {
        Some(text.replacen("ae", "e", 1))
    } else {
        let spots: Vec<usize> = text.match_indices('e').map(|(i, _)| i).collect();
        spots.choose(rng).map(|&i| format!("{}a{}", &text[..i], &text[i..]))
    }
}

fn transpose(text: &str, rng: &mut ChaCha8Rng) -> String {
    let mut chars: Vec<char> = text.chars().collect();
    let spots: Vec<usize> = (1..chars.len().saturating_sub(2))
        .filter(|&i| chars[i].is_alphabetic() && chars[i + 1].is_alphabetic())
        .collect();
    if let Some(&i) = spots.choose(rng) {
        chars.swap(i, i + 1);
    }
    chars.into_iter().collect()
}

/// `name` with one consonant replaced by another.
fn lookalike(name: &str, rng: &mut ChaCha8Rng) -> Option<String> {
    const CONSONANTS: &[char] = &['b', 'c', 'd', 'f', 'g', 'k', 'l', 'm', 'n', 'p', 'r', 's', 't', 'v', 'z'];
    let chars: Vec<char> = name.chars().collect();
    let spots: Vec<usize> = (0..chars.len()).filter(|&i| CONSONANTS.contains(&chars[i])).collect();
    let &i = spots.choose(rng)?;
    let mut out = chars.clone();
    let others: Vec<char> = CONSONANTS.iter().copied().filter(|&c| c != chars[i]).collect();
    out[i] = *others.choose(rng)?;
    Some(out.into_iter().collect())
}

fn drafts(cfg: &SyntheticConfig, rng: &mut ChaCha8Rng) -> Vec<Draft> {
    let mut taken: HashSet<String> = HashSet::new();
    let fresh = |rng: &mut ChaCha8Rng, taken: &mut HashSet<String>, words: usize| loop {
        let name = (0..words).map(|_| word(rng)).collect::<Vec<_>>().join(" ");
        if taken.insert(name.clone()) {
            return name;
        }
    };
    let mut out: Vec<Draft> = Vec::with_capacity(cfg.entities);
    while out.len() < cfg.entities {
        let words = if rng.random_bool(0.35) { 2 } else { 1 };
        let name = fresh(rng, &mut taken, words);
        let mut synonyms = Vec::new();
        if rng.random_bool(0.4) {
            if let Some(v) = spelling_variant(&name, rng) {
                synonyms.push(v);
            }
        }
        if rng.random_bool(0.25) {
            synonyms.push(fresh(rng, &mut taken, 1));
        }
        let family = rng.random_bool(cfg.family_rate) && out.len() + 1 < cfg.entities;
        let twin = rng.random_bool(cfg.lookalike_rate) && out.len() + 1 < cfg.entities;
        out.push(Draft {
            id: String::new(),
            name: name.clone(),
            synonyms,
            alias: None,
        });
        if twin {
            if let Some(other) = lookalike(&name, rng).filter(|n| taken.insert(n.clone())) {
                out.push(Draft {
                    id: String::new(),
                    name: other,
                    synonyms: Vec::new(),
                    alias: None,
                });
            }
        }
        if family {
            let q = QUALIFIERS.choose(rng).unwrap();
            let sibling = format!("{name} {q}");
            if taken.insert(sibling.clone()) {
                out.push(Draft {
                    id: String::new(),
                    name: sibling,
                    synonyms: Vec::new(),
                    alias: None,
                });
            }
        }
    }
    out.truncate(cfg.entities);
    // Entity order is shuffled before ids are assigned so that families do
    // not sit on adjacent ids.
    out.shuffle(rng);
    for (i, d) in out.iter_mut().enumerate() {
        d.id = format!("S{:04}", i + 1);
    }

    let n = out.len();
    let shared = ((cfg.shared_synonym_rate * n as f64) / 2.0).round() as usize;
    for _ in 0..shared {
        let a = rng.random_range(0..n);
        let b = rng.random_range(0..n);
        if a == b {
            continue;
        }
        let abbrev: String = (0..3).map(|_| rng.random_range(b'a'..=b'z') as char).collect();
        if taken.insert(abbrev.clone()) {
            out[a].synonyms.push(abbrev.clone());
            out[b].synonyms.push(abbrev);
        }
    }

    let mut lay_taken: HashSet<String> = HashSet::new();
    for d in out.iter_mut() {
        if rng.random_bool(cfg.alias_rate) {
            loop {
                let pick: Vec<&str> = LAY_WORDS.choose_multiple(rng, 2).copied().collect();
                let alias = pick.join(" ");
                if !taken.contains(&alias) && lay_taken.insert(alias.clone()) {
                    d.alias = Some(alias);
                    break;
                }
            }
        }
    }
    out
}

fn surface(d: &Draft, ontology: &Ontology, rng: &mut ChaCha8Rng) -> String {
    if let Some(alias) = &d.alias {
        if rng.random_bool(0.5) {
            return alias.clone();
        }
    }
    let base = if !d.synonyms.is_empty() && rng.random_bool(0.3) {
        d.synonyms.choose(rng).unwrap().clone()
    } else {
        d.name.clone()
    };
    let mut text = base;
    if rng.random_bool(0.3) {
        if let Some(v) = spelling_variant(&text, rng) {
            text = v;
        }
    }
    let words: Vec<&str> = text.split(' ').collect();
    if words.len() >= 2 && rng.random_bool(0.15) {
        let drop = rng.random_range(0..words.len());
        text = words
            .iter()
            .enumerate()
            .filter(|&(i, _)| i != drop)
            .map(|(_, w)| *w)
            .collect::<Vec<_>>()
            .join(" ");
    }
    if rng.random_bool(0.25) {
        let token = MENTION_TOKENS.choose(rng).unwrap();
        let extended = format!("{text} {token}");
        if ontology.lookup_by_name(&extended).is_empty() {
            text = extended;
        }
    }
    if rng.random_bool(0.15) {
        text = transpose(&text, rng);
    }
    text
}

fn mentions(
    drafts: &[Draft],
    weights: &[f64],
    count: usize,
    split: Split,
    ontology: &Ontology,
    rng: &mut ChaCha8Rng,
) -> Vec<Mention> {
    let total: f64 = weights.iter().sum();
    (0..count)
        .map(|ordinal| {
            let mut r = rng.random::<f64>() * total;
            let mut pick = drafts.len() - 1;
            for (i, w) in weights.iter().enumerate() {
                if r < *w {
                    pick = i;
                    break;
                }
                r -= w;
            }
            let d = &drafts[pick];
            Mention::new(surface(d, ontology, rng), Some(&d.id), split, ordinal)
        })
        .collect()
}

pub fn generate(cfg: &SyntheticConfig) -> Benchmark {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let drafts = drafts(cfg, &mut rng);
    let entities = drafts
        .iter()
        .map(|d| Entity::new(d.id.clone(), d.name.clone(), d.synonyms.clone()))
        .collect();
    let ontology = Ontology::from_entities(entities).expect("generated ids are unique");

    // Popularity follows a power law over a random permutation of entities.
    let mut ranks: Vec<usize> = (0..drafts.len()).collect();
    ranks.shuffle(&mut rng);
    let weights: Vec<f64> = ranks
        .iter()
        .map(|&r| 1.0 / ((r + 1) as f64).powf(cfg.zipf_exponent))
        .collect();

    let train = mentions(&drafts, &weights, cfg.train, Split::Train, &ontology, &mut rng);
    let dev = mentions(&drafts, &weights, cfg.dev, Split::Dev, &ontology, &mut rng);
    let test = mentions(&drafts, &weights, cfg.test, Split::Test, &ontology, &mut rng);
    let aliases = drafts
        .iter()
        .filter_map(|d| d.alias.clone().map(|a| (d.id.clone(), a)))
        .collect();
    Benchmark {
        ontology,
        train,
        dev,
        test,
        aliases,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn shape_matches_config() {
        let b = generate(&SyntheticConfig::default());
        assert_eq!(b.ontology.len(), 500);
        assert_eq!(b.train.len(), 2000);
        assert_eq!(b.dev.len(), 200);
        assert_eq!(b.test.len(), 400);
        assert!(b.test.iter().all(|m| m.usable_gold().is_some()));
        assert!(b.train.iter().enumerate().all(|(i, m)| m.ordinal == i));
    }

    #[test]
    fn generation_is_seeded() {
        let cfg = SyntheticConfig {
            entities: 60,
            train: 50,
            dev: 5,
            test: 20,
            ..SyntheticConfig::default()
        };
        let a = generate(&cfg);
        let b = generate(&cfg);
        assert_eq!(a.ontology.entities(), b.ontology.entities());
        assert_eq!(a.test, b.test);
        let c = generate(&SyntheticConfig { seed: 1, ..cfg });
        assert_ne!(a.ontology.entities(), c.ontology.entities());
    }

    #[test]
    fn contains_families_aliases_and_shared_names() {
        let b = generate(&SyntheticConfig::default());
        let families = b
            .ontology
            .entities()
            .iter()
            .filter(|e| {
                let (head, _) = e.canonical_name.rsplit_once(' ').unwrap_or(("", ""));
                !head.is_empty() && !b.ontology.lookup_by_name(head).is_empty()
            })
            .count();
        assert!(families > 30, "{families}");
        assert!(b.aliases.len() > 40);
        let shared = b.ontology.name_index().values().filter(|ids| ids.len() > 1).count();
        assert!(shared > 5, "{shared}");
    }
}
