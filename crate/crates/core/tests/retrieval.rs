mod common;

use elqa::embedder::{EmbeddingVector, NGramEncoder};
use elqa::ontology::{Entity, Ontology};
use elqa::vecindex::{build_index, IndexError, IndexKey, VectorIndex};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

#[test]
fn top_n_matches_brute_force() {
    common::check_top_n(100, 1).unwrap();
}

#[test]
fn mined_negatives_match_brute_force() {
    common::check_mine_hard_negatives(100, 2).unwrap();
}

#[test]
fn datastore_query_matches_brute_force() {
    common::check_store_query(100, 3).unwrap();
}

fn rows(vs: &[(&str, &str, &[f64])]) -> VectorIndex {
    VectorIndex::from_rows(
        vs.iter()
            .map(|(id, name, v)| {
                (
                    IndexKey {
                        entity_id: id.to_string(),
                        name: name.to_string(),
                    },
                    EmbeddingVector::normalized(v.to_vec()).unwrap(),
                )
            })
            .collect(),
        "t".into(),
    )
    .unwrap()
}

#[test]
fn equal_scores_rank_by_entity_id() {
    let index = rows(&[("E3", "c", &[1.0, 0.0]), ("E1", "a", &[1.0, 0.0]), ("E2", "b", &[0.0, 1.0]), ("E0", "z", &[1.0, 0.0])]);
    let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
    let ids: Vec<String> = index.top_n(&q, 10).unwrap().into_iter().map(|c| c.entity_id).collect();
    assert_eq!(ids, ["E0", "E1", "E3", "E2"]);
}

#[test]
fn synonyms_collapse_to_their_best_row() {
    let index = rows(&[("E1", "far", &[0.0, 1.0]), ("E1", "near", &[1.0, 0.1]), ("E2", "mid", &[1.0, 0.5])]);
    let q = EmbeddingVector::normalized(vec![1.0, 0.0]).unwrap();
    let top = index.top_n(&q, 5).unwrap();
    assert_eq!(top.len(), 2);
    assert_eq!((top[0].entity_id.as_str(), top[0].matched_name.as_str()), ("E1", "near"));
    assert_eq!(index.mine_hard_negatives(&q, "E1", 3).unwrap(), ["E2"]);
    assert!(index.mine_hard_negatives(&q, "E1", 0).unwrap().is_empty());
    assert!(matches!(index.top_n(&q, 0), Err(IndexError::ZeroCount)));
}

#[test]
fn gold_at_top_mines_the_next_ranks() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let (index, raw) = common::random_index(&mut rng, 300, 8);
    let q = EmbeddingVector::normalized(raw[0].1.clone()).unwrap();
    let top = index.top_n(&q, 6).unwrap();
    let mined = index.mine_hard_negatives(&q, &top[0].entity_id, 5).unwrap();
    let expected: Vec<String> = top[1..6].iter().map(|c| c.entity_id.clone()).collect();
    assert_eq!(mined, expected);
}

#[test]
fn built_index_has_a_row_per_name_in_stable_order() {
    let onto = Ontology::from_entities(vec![
        Entity::new("D002", "haemoglobin c", Vec::<String>::new()),
        Entity::new("D001", "hemoglobin", ["haemoglobin"]),
        Entity::new("D003", "diabetes", Vec::<String>::new()),
    ])
    .unwrap();
    let enc = NGramEncoder::new(Default::default(), onto.named_rows().map(|(_, n)| n));
    let a = build_index(&onto, &enc).unwrap();
    let b = build_index(&onto, &enc).unwrap();
    assert_eq!(a.len(), 4);
    assert_eq!(a.keys(), b.keys());
    let keys: Vec<(&str, &str)> = a.keys().iter().map(|k| (k.entity_id.as_str(), k.name.as_str())).collect();
    assert_eq!(keys, [("D001", "haemoglobin"), ("D001", "hemoglobin"), ("D002", "haemoglobin c"), ("D003", "diabetes")]);
    let q = enc.encode("hemoglobin").unwrap();
    let top = a.top_n(&q, 1).unwrap();
    assert_eq!(top[0].entity_id, "D001");
    assert!((top[0].similarity - 1.0).abs() < 1e-12);
}
