//! Independent oracles shared by the integration and acceptance suites.
//!
//! Nothing here calls the code under test to compute an expected value: the
//! brute-force scans recompute cosine similarity from raw vectors, and the
//! gradient check differentiates numerically.

#![allow(dead_code)]

use std::collections::BTreeMap;

use elqa::embedder::loss::{batch_loss_and_gradient, TextExample};
use elqa::embedder::{EmbeddingVector, NGramConfig, NGramEncoder};
use elqa::knnstore::{assemble_enhanced_prompt, AssembleOptions, Datastore, DatastoreEntry};
use elqa::mcp::{augment_swap, make_choice_set, render, ChoiceSet, DisplayName, LabelMode, Symbol};
use elqa::ontology::{Entity, Ontology};
use elqa::vecindex::{Candidate, IndexKey, VectorIndex};
use rand::seq::{IndexedRandom, SliceRandom};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub const GRADIENT_RELATIVE_TOLERANCE: f64 = 1e-4;
pub const SIMILARITY_TOLERANCE: f64 = 1e-9;

fn cosine(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    dot / (na * nb)
}

pub fn random_unit(rng: &mut ChaCha8Rng, d: usize) -> EmbeddingVector {
    loop {
        let v: Vec<f64> = (0..d).map(|_| rng.random_range(-1.0..1.0)).collect();
        if let Ok(u) = EmbeddingVector::normalized(v) {
            return u;
        }
    }
}

fn random_word(rng: &mut ChaCha8Rng, alphabet: &[u8], len: std::ops::RangeInclusive<usize>) -> String {
    let n = rng.random_range(len);
    (0..n).map(|_| *alphabet.choose(rng).unwrap() as char).collect()
}

// ---------------------------------------------------------------- gradients

/// Worst per-weight relative error between the analytic gradient and central
/// differences over `trials` random encoders (d <= 8, <= 20 features, tau=1).
pub fn gradient_check(trials: usize, seed: u64) -> Result<f64, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    let bigrams: Vec<String> = {
        let chars = ['<', '>', 'a', 'b', 'c'];
        chars
            .iter()
            .flat_map(|x| chars.iter().map(move |y| format!("{x}{y}")))
            .collect()
    };
    for trial in 0..trials {
        let d = rng.random_range(2..=8);
        let vocab_len = rng.random_range(1..=12);
        let hash_buckets = rng.random_range(1..=(20 - vocab_len));
        let mut vocab: Vec<String> = bigrams.choose_multiple(&mut rng, vocab_len).cloned().collect();
        vocab.sort();
        let features = vocab_len + hash_buckets;
        assert!(features <= 20 && d <= 8);
        let config = NGramConfig {
            ngram_sizes: vec![2],
            dimension: d,
            hash_buckets,
            seed: 0,
        };
        let weights: Vec<f64> = (0..features * d).map(|_| rng.random_range(-1.0..1.0)).collect();
        let mut encoder = NGramEncoder::from_parts(config, vocab, weights);

        let mut texts: Vec<String> = Vec::new();
        while texts.len() < 6 {
            let t = random_word(&mut rng, b"abc", 2..=6);
            if !texts.contains(&t) {
                texts.push(t);
            }
        }
        let batch = rng.random_range(1..=3);
        let owned: Vec<(String, String, Vec<String>)> = (0..batch)
            .map(|_| {
                let mut pool = texts.clone();
                pool.shuffle(&mut rng);
                let negs = rng.random_range(1..=4);
                (pool[0].clone(), pool[1].clone(), pool[2..2 + negs].to_vec())
            })
            .collect();
        let examples: Vec<TextExample<'_>> = owned
            .iter()
            .map(|(m, p, n)| TextExample {
                mention: m,
                positive: p,
                negatives: n.iter().map(String::as_str).collect(),
            })
            .collect();

        let total = |enc: &NGramEncoder| -> f64 {
            batch_loss_and_gradient(enc, &examples, 1.0)
                .expect("loss")
                .0
                .iter()
                .sum()
        };
        let (_, grad) = batch_loss_and_gradient(&encoder, &examples, 1.0).map_err(|e| e.to_string())?;
        let analytic = grad.to_dense(features, d);
        let h = 1e-6;
        for i in 0..features * d {
            let w = encoder.weights()[i];
            encoder.weights_mut()[i] = w + h;
            let up = total(&encoder);
            encoder.weights_mut()[i] = w - h;
            let down = total(&encoder);
            encoder.weights_mut()[i] = w;
            let numeric = (up - down) / (2.0 * h);
            let a = analytic[i];
            let scale = a.abs().max(numeric.abs());
            if scale < 1e-7 {
                // Both vanish (a feature no text uses); only the absolute gap matters.
                if (a - numeric).abs() > 1e-9 {
                    return Err(format!("trial {trial} weight {i}: analytic {a:e} numeric {numeric:e}"));
                }
                continue;
            }
            let rel = (a - numeric).abs() / scale;
            worst = worst.max(rel);
            if rel > GRADIENT_RELATIVE_TOLERANCE {
                return Err(format!("trial {trial} weight {i}: analytic {a:e} numeric {numeric:e} rel {rel:e}"));
            }
        }
    }
    Ok(worst)
}

// ---------------------------------------------------------------- retrieval

/// A random index with some entities owning several rows and some rows
/// copied verbatim across entities so that exact ties occur.
pub fn random_index(rng: &mut ChaCha8Rng, rows: usize, d: usize) -> (VectorIndex, Vec<(IndexKey, Vec<f64>)>) {
    let mut raw: Vec<(IndexKey, Vec<f64>)> = Vec::with_capacity(rows);
    let mut entity = 0usize;
    while raw.len() < rows {
        let names = rng.random_range(1..=3).min(rows - raw.len());
        for j in 0..names {
            let v = if !raw.is_empty() && rng.random_bool(0.1) {
                raw.choose(rng).unwrap().1.clone()
            } else {
                random_unit(rng, d).into_inner()
            };
            raw.push((
                IndexKey {
                    entity_id: format!("E{entity:05}"),
                    name: format!("name {entity} {j}"),
                },
                v,
            ));
        }
        entity += 1;
    }
    raw.shuffle(rng);
    let rows_for_index = raw
        .iter()
        .map(|(k, v)| (k.clone(), EmbeddingVector::normalized(v.clone()).unwrap()))
        .collect();
    (VectorIndex::from_rows(rows_for_index, "oracle".into()).unwrap(), raw)
}

/// Brute-force top-n: best row per entity, then by similarity descending
/// and entity id ascending. Within an entity, equal rows keep the
/// alphabetically first name.
pub fn brute_top_n(rows: &[(IndexKey, Vec<f64>)], query: &[f64], n: usize) -> Vec<(String, String, f64)> {
    let mut best: BTreeMap<&str, (f64, &str)> = BTreeMap::new();
    for (key, v) in rows {
        let s = cosine(v, query);
        best.entry(&key.entity_id)
            .and_modify(|cur| {
                if s > cur.0 || (s == cur.0 && key.name.as_str() < cur.1) {
                    *cur = (s, &key.name);
                }
            })
            .or_insert((s, &key.name));
    }
    let mut all: Vec<(String, String, f64)> = best
        .into_iter()
        .map(|(id, (s, name))| (id.to_string(), name.to_string(), s))
        .collect();
    all.sort_by(|a, b| b.2.total_cmp(&a.2).then_with(|| a.0.cmp(&b.0)));
    all.truncate(n);
    all
}

fn same_ranking(got: &[(String, f64)], want: &[(String, f64)]) -> Result<(), String> {
    if got.len() != want.len() {
        return Err(format!("length {} != oracle {}", got.len(), want.len()));
    }
    for (i, (g, w)) in got.iter().zip(want).enumerate() {
        if g.0 != w.0 {
            return Err(format!("rank {}: {} != oracle {}", i + 1, g.0, w.0));
        }
        if (g.1 - w.1).abs() > SIMILARITY_TOLERANCE {
            return Err(format!("rank {}: similarity {} != oracle {}", i + 1, g.1, w.1));
        }
    }
    Ok(())
}

fn instance_sizes(rng: &mut ChaCha8Rng, instances: usize) -> Vec<usize> {
    // Always include the largest allowed index.
    (0..instances)
        .map(|i| if i == 0 { 10_000 } else { rng.random_range(1..=1_500) })
        .collect()
}

/// top_n against the brute-force oracle on `instances` random indices.
pub fn check_top_n(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (inst, rows) in instance_sizes(&mut rng, instances).into_iter().enumerate() {
        let d = rng.random_range(2..=16);
        let (index, raw) = random_index(&mut rng, rows, d);
        let q = if rng.random_bool(0.3) {
            EmbeddingVector::normalized(raw.choose(&mut rng).unwrap().1.clone()).unwrap()
        } else {
            random_unit(&mut rng, d)
        };
        let n = rng.random_range(1..=30);
        let got = index.top_n(&q, n).map_err(|e| e.to_string())?;
        let want = brute_top_n(&raw, q.as_slice(), n);
        same_ranking(
            &got.iter().map(|c| (c.entity_id.clone(), c.similarity)).collect::<Vec<_>>(),
            &want.iter().map(|w| (w.0.clone(), w.2)).collect::<Vec<_>>(),
        )
        .map_err(|e| format!("top_n instance {inst} ({rows} rows, n={n}): {e}"))?;
        check_candidate_list(&got).map_err(|e| format!("top_n instance {inst}: {e}"))?;
        for (c, w) in got.iter().zip(&want) {
            if c.matched_name != w.1 {
                return Err(format!("top_n instance {inst}: name {} != oracle {}", c.matched_name, w.1));
            }
        }
    }
    Ok(())
}

fn check_candidate_list(cands: &[Candidate]) -> Result<(), String> {
    let mut seen = std::collections::HashSet::new();
    for (i, c) in cands.iter().enumerate() {
        if c.rank != i + 1 {
            return Err(format!("rank {} at position {}", c.rank, i + 1));
        }
        if !seen.insert(&c.entity_id) {
            return Err(format!("entity {} repeated", c.entity_id));
        }
        if i > 0 && c.similarity > cands[i - 1].similarity {
            return Err("similarities increase".into());
        }
    }
    Ok(())
}

/// mine_hard_negatives against a brute-force scan that drops the gold id.
pub fn check_mine_hard_negatives(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (inst, rows) in instance_sizes(&mut rng, instances).into_iter().enumerate() {
        let d = rng.random_range(2..=16);
        let (index, raw) = random_index(&mut rng, rows, d);
        let gold_row = raw.choose(&mut rng).unwrap();
        let gold = gold_row.0.entity_id.clone();
        // Half the time the gold is the global top-1.
        let q = if rng.random_bool(0.5) {
            EmbeddingVector::normalized(gold_row.1.clone()).unwrap()
        } else {
            random_unit(&mut rng, d)
        };
        let count = rng.random_range(0..=10);
        let got = index.mine_hard_negatives(&q, &gold, count).map_err(|e| e.to_string())?;
        let mut want: Vec<String> = brute_top_n(&raw, q.as_slice(), usize::MAX)
            .into_iter()
            .map(|(id, _, _)| id)
            .filter(|id| *id != gold)
            .collect();
        want.truncate(count);
        if got != want {
            return Err(format!("mine instance {inst} ({rows} rows, count {count}): {got:?} != oracle {want:?}"));
        }
    }
    Ok(())
}

fn two_option_set(mention: &str, gold: usize) -> ChoiceSet {
    ChoiceSet::new(
        mention,
        vec![("X1".into(), "first".into()), ("X2".into(), "second".into())],
        Symbol::from_index(gold),
    )
    .unwrap()
}

/// A random datastore; about a tenth of the keys duplicate an earlier key.
pub fn random_store(rng: &mut ChaCha8Rng, entries: usize, d: usize) -> (Datastore, Vec<(usize, Vec<f64>)>) {
    let mut ordinals: Vec<usize> = (0..entries * 2).collect();
    ordinals.shuffle(rng);
    ordinals.truncate(entries);
    let mut raw: Vec<(usize, Vec<f64>)> = Vec::with_capacity(entries);
    for &o in &ordinals {
        let v = if !raw.is_empty() && rng.random_bool(0.1) {
            raw.choose(rng).unwrap().1.clone()
        } else {
            random_unit(rng, d).into_inner()
        };
        raw.push((o, v));
    }
    let store = Datastore::from_entries(
        raw.iter()
            .map(|(o, v)| DatastoreEntry {
                key: EmbeddingVector::normalized(v.clone()).unwrap(),
                mention_text: format!("m{o}"),
                choice_set: two_option_set(&format!("m{o}"), o % 2),
                ordinal: *o,
            })
            .collect(),
        "oracle".into(),
    )
    .unwrap();
    (store, raw)
}

pub fn brute_query(raw: &[(usize, Vec<f64>)], q: &[f64], k: usize, exclude: Option<usize>) -> Vec<(usize, f64)> {
    let mut all: Vec<(usize, f64)> = raw
        .iter()
        .filter(|(o, _)| Some(*o) != exclude)
        .map(|(o, v)| (*o, cosine(v, q)))
        .collect();
    all.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
    all.truncate(k);
    all
}

/// Datastore query against the brute-force oracle, with and without
/// self-exclusion.
pub fn check_store_query(instances: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for (inst, size) in instance_sizes(&mut rng, instances).into_iter().enumerate() {
        let d = rng.random_range(2..=16);
        let (store, raw) = random_store(&mut rng, size, d);
        let (own, own_vec) = raw.choose(&mut rng).unwrap().clone();
        let (q, exclude) = if rng.random_bool(0.5) {
            (EmbeddingVector::normalized(own_vec).unwrap(), Some(own))
        } else {
            (random_unit(&mut rng, d), None)
        };
        let k = rng.random_range(1..=12);
        let got = store.query(&q, k, exclude).map_err(|e| e.to_string())?;
        let want = brute_query(&raw, q.as_slice(), k, exclude);
        same_ranking(
            &got.neighbors
                .iter()
                .map(|n| (n.entry.ordinal.to_string(), n.similarity))
                .collect::<Vec<_>>(),
            &want.iter().map(|(o, s)| (o.to_string(), *s)).collect::<Vec<_>>(),
        )
        .map_err(|e| format!("query instance {inst} ({size} entries, k={k}): {e}"))?;
    }
    Ok(())
}

// ---------------------------------------------------------------- prompts

/// Counts of each check performed by [`mcp_structural_suite`].
#[derive(Debug, Default)]
pub struct StructuralCounts {
    pub consistency: usize,
    pub swaps: usize,
    pub renders: usize,
    pub enhanced: usize,
    pub leakage: usize,
}

fn random_ontology(rng: &mut ChaCha8Rng, size: usize) -> Ontology {
    let mut entities = Vec::with_capacity(size);
    let mut used = std::collections::HashSet::new();
    for i in 0..size {
        let name = loop {
            let n = random_word(rng, b"abcdefghij ", 3..=10).trim().to_string();
            if !n.is_empty() && used.insert(n.clone()) {
                break n;
            }
        };
        entities.push(Entity::new(format!("C{i:03}"), name, Vec::<String>::new()));
    }
    Ontology::from_entities(entities).unwrap()
}

fn expected_render(cs: &ChoiceSet) -> String {
    let opts: String = cs
        .options()
        .iter()
        .map(|o| format!("{}. {} ", o.symbol, o.display_name))
        .collect();
    format!("mention: {} options: {opts}answer:", cs.mention_text())
}

/// Exhaustive structural checks over `cases` random choice sets: symbol and
/// content consistency (eval and train labelling), swap gold tracking,
/// byte-exact rendering, the solved/unsolved block structure of enhanced
/// prompts and self-filtering of neighbor queries.
pub fn mcp_structural_suite(cases: usize, seed: u64) -> Result<StructuralCounts, String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut counts = StructuralCounts::default();
    let onto = random_ontology(&mut rng, 60);
    let (store, raw) = random_store(&mut rng, 200, 6);
    for case in 0..cases {
        let fail = |what: &str| format!("case {case}: {what}");
        let n = rng.random_range(1..=26);
        let picked: Vec<&Entity> = onto.entities().choose_multiple(&mut rng, n).collect();
        let cands: Vec<Candidate> = picked
            .iter()
            .enumerate()
            .map(|(i, e)| Candidate {
                entity_id: e.id.clone(),
                matched_name: e.canonical_name.clone(),
                similarity: 1.0 - i as f64 * 0.01,
                rank: i + 1,
            })
            .collect();
        let gold_entity = onto.entities().choose(&mut rng).unwrap();
        let gold = Some(gold_entity.id.as_str());
        let mention = random_word(&mut rng, b"abcdefghij", 3..=12);

        for mode in [LabelMode::Eval, LabelMode::Train] {
            let cs = make_choice_set(&mention, &cands, gold, mode, DisplayName::Matched, &onto).map_err(|e| fail(&e.to_string()))?;
            let listed = cands.iter().position(|c| Some(c.entity_id.as_str()) == gold);
            for (i, o) in cs.options().iter().enumerate() {
                if o.symbol != Symbol::from_index(i).unwrap() {
                    return Err(fail("symbols not positional"));
                }
            }
            match (mode, listed, cs.gold_symbol()) {
                (_, Some(i), Some(s)) if s.index() == i => {}
                (LabelMode::Eval, None, None) => {}
                (LabelMode::Train, None, Some(s)) if s.index() == n - 1 => {}
                other => return Err(fail(&format!("gold symbol {other:?}"))),
            }
            if let Some(opt) = cs.gold_option() {
                if opt.entity_id != gold_entity.id {
                    return Err(fail("gold symbol points at another entity"));
                }
            }
            counts.consistency += 1;

            let first = render(&cs);
            if first.text != render(&cs).text || first.text != expected_render(&cs) || !first.text.ends_with("answer:") {
                return Err(fail("render not byte-exact"));
            }
            counts.renders += 1;

            if mode == LabelMode::Train && n >= 2 {
                let s = rng.random();
                let swapped = augment_swap(&cs, s).map_err(|e| fail(&e.to_string()))?;
                if swapped != augment_swap(&cs, s).unwrap() {
                    return Err(fail("swap not deterministic"));
                }
                let mut before: Vec<_> = cs.options().iter().map(|o| (&o.entity_id, &o.display_name)).collect();
                let mut after: Vec<_> = swapped.options().iter().map(|o| (&o.entity_id, &o.display_name)).collect();
                if before == after {
                    return Err(fail("swap is the identity"));
                }
                before.sort();
                after.sort();
                if before != after {
                    return Err(fail("swap changed the option multiset"));
                }
                if swapped.gold_option().map(|o| &o.entity_id) != Some(&gold_entity.id) {
                    return Err(fail("swap lost the gold entity"));
                }
                counts.swaps += 1;
            }

            let k = rng.random_range(0..=5);
            let (own, own_vec) = raw.choose(&mut rng).unwrap();
            let q = EmbeddingVector::normalized(own_vec.clone()).unwrap();
            let nbrs = store.query(&q, k, Some(*own)).map_err(|e| fail(&e.to_string()))?;
            if nbrs.neighbors.iter().any(|nb| nb.entry.ordinal == *own) {
                return Err(fail("query returned the excluded instance"));
            }
            counts.leakage += 1;
            let prompt = assemble_enhanced_prompt(&nbrs, &cs, &AssembleOptions::default());
            if prompt.text.matches("answer:").count() != nbrs.len() + 1 {
                return Err(fail("answer: count is not K+1"));
            }
            let mut rest = prompt.text.as_str();
            for nb in &nbrs.neighbors {
                let block = format!("{} {} ", expected_render(&nb.entry.choice_set), nb.entry.gold_symbol());
                rest = rest
                    .strip_prefix(&block)
                    .ok_or_else(|| fail("solved block out of order or without its symbol"))?;
            }
            if rest != expected_render(&cs) {
                return Err(fail("final block is not the unsolved input"));
            }
            counts.enhanced += 1;
        }
    }
    Ok(counts)
}

// ---------------------------------------------------------------- pipelines

/// A small synthetic benchmark with an untrained encoder: enough structure
/// for pipeline invariants, fast enough for every test run.
pub fn small_pipeline(seed: u64) -> (elqa::eval::Pipeline<NGramEncoder>, elqa::synthetic::Benchmark) {
    use elqa::synthetic::{generate, SyntheticConfig};
    let bench = generate(&SyntheticConfig {
        entities: 80,
        train: 240,
        dev: 30,
        test: 60,
        seed,
        ..SyntheticConfig::default()
    });
    let corpus: Vec<&str> = bench
        .ontology
        .named_rows()
        .map(|(_, n)| n)
        .chain(bench.train.iter().map(|m| m.text.as_str()))
        .collect();
    let config = NGramConfig {
        dimension: 64,
        hash_buckets: 512,
        ..NGramConfig::default()
    };
    let encoder = NGramEncoder::new(config, corpus);
    let pipeline = elqa::eval::Pipeline::new(bench.ontology.clone(), encoder, bench.train.clone()).unwrap();
    (pipeline, bench)
}
