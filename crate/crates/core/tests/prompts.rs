mod common;

use std::collections::HashSet;

use elqa::mcp::{augment, augment_swap, parse_answer, parse_prompt, render, render_text, ChoiceSet, McpError, ParsedAnswer, Symbol};
use proptest::prelude::*;

#[test]
fn structural_suite_over_generated_cases() {
    let counts = common::mcp_structural_suite(1_000, 5).unwrap();
    assert_eq!(counts.consistency, 2_000);
    assert!(counts.swaps > 900);
    assert_eq!(counts.enhanced, 2_000);
}

fn set(n: usize, gold: Option<usize>) -> ChoiceSet {
    ChoiceSet::new(
        "m",
        (0..n).map(|i| (format!("E{i}"), format!("name {i}"))).collect(),
        gold.and_then(Symbol::from_index),
    )
    .unwrap()
}

#[test]
fn five_options_give_120_orderings() {
    let cs = set(5, Some(0));
    let mut seen: HashSet<String> = HashSet::from([render_text(&cs)]);
    for seed in 0..20_000 {
        seen.insert(render_text(&augment_swap(&cs, seed).unwrap()));
    }
    assert_eq!(seen.len(), 120);
}

#[test]
fn swap_needs_two_options_and_a_gold() {
    assert!(matches!(augment_swap(&set(1, Some(0)), 3), Err(McpError::SingleOption)));
    assert!(matches!(augment_swap(&set(3, None), 3), Err(McpError::MissingGold)));
    assert_eq!(augment(&set(4, Some(2)), 3, 8).unwrap().len(), 3);
}

#[test]
fn option_limits() {
    assert!(matches!(
        ChoiceSet::new("m", (0..27).map(|i| (format!("E{i}"), format!("n{i}"))).collect(), None),
        Err(McpError::TooManyOptions(27))
    ));
    assert!(matches!(
        ChoiceSet::new("m", vec![("E".into(), "a".into()), ("E".into(), "b".into())], None),
        Err(McpError::DuplicateEntity(_))
    ));
    assert_eq!(render_text(&set(1, None)), "mention: m options: A. name 0 answer:");
}

fn word() -> impl Strategy<Value = String> {
    "[a-z]{1,6}( [a-z]{1,6}){0,2}"
}

proptest! {
    #[test]
    fn render_is_injective(
        m1 in word(), names1 in prop::collection::vec(word(), 1..6),
        m2 in word(), names2 in prop::collection::vec(word(), 1..6),
    ) {
        let build = |m: &str, names: &[String]| {
            ChoiceSet::new(m, names.iter().enumerate().map(|(i, n)| (format!("E{i}"), n.clone())).collect(), None).unwrap()
        };
        let (a, b) = (build(&m1, &names1), build(&m2, &names2));
        prop_assert_eq!(m1 == m2 && names1 == names2, render_text(&a) == render_text(&b));
        let blocks = parse_prompt(&render_text(&a)).unwrap();
        prop_assert_eq!(&blocks[0].mention, &m1);
        prop_assert_eq!(blocks[0].options.iter().map(|(_, n)| n.clone()).collect::<Vec<_>>(), names1);
    }

    #[test]
    fn parsed_symbols_stay_in_range(output in ".{0,6}", n in 1usize..=26) {
        let cs = set(n, None);
        match parse_answer(&output, &cs) {
            ParsedAnswer::Symbol(s) => prop_assert!(s.index() < n),
            ParsedAnswer::Fallback { entity_id } => prop_assert_eq!(entity_id, "E0"),
        }
    }

    #[test]
    fn swaps_keep_contents_and_track_gold(n in 2usize..=26, gold in 0usize..26, seed in any::<u64>()) {
        let cs = set(n, Some(gold % n));
        let out = augment_swap(&cs, seed).unwrap();
        let mut a: Vec<_> = cs.options().iter().map(|o| (o.entity_id.clone(), o.display_name.clone())).collect();
        let mut b: Vec<_> = out.options().iter().map(|o| (o.entity_id.clone(), o.display_name.clone())).collect();
        prop_assert_ne!(&a, &b);
        a.sort();
        b.sort();
        prop_assert_eq!(a, b);
        prop_assert_eq!(&out.gold_option().unwrap().entity_id, &format!("E{}", gold % n));
        prop_assert_eq!(render(&out).expected_symbol, out.gold_symbol());
    }
}
