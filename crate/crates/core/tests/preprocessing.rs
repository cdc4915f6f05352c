//! Normalization fixtures, one or more per rule plus rule interactions.

use convoscan::preprocess::{normalize_and_tokenize, normalize_text, NormRuleSet};

fn norm(s: &str) -> String {
    normalize_text(s, &NormRuleSet::default())
}

include!("fixtures/normalization.rs");

#[test]
fn normalization_fixtures() {
    assert!(FIXTURES.len() >= 20);
    let mut failures = Vec::new();
    for (name, input, expected) in FIXTURES {
        let got = norm(input);
        if got != *expected {
            failures.push(format!(
                "{name}: {input:?} -> {got:?}, expected {expected:?}"
            ));
        }
    }
    assert!(failures.is_empty(), "{}", failures.join("\n"));
}

#[test]
fn normalization_is_idempotent_on_fixtures() {
    for (name, input, _) in FIXTURES {
        let once = norm(input);
        assert_eq!(norm(&once), once, "{name}");
    }
}

#[test]
fn tokenized_fixtures() {
    let rules = NormRuleSet::default();
    let cases: &[(&str, &[&str])] = &[
        ("R u 15?", &["are", "you", "00NUM", "?"]),
        ("see http://x.org/1, ok", &["see", "00URL", ",", "ok"]),
        ("im here :)", &["i", "'", "m", "here"]),
        ("", &[]),
    ];
    for (input, expected) in cases {
        assert_eq!(
            normalize_and_tokenize(input, &rules),
            *expected,
            "{input:?}"
        );
    }
}

#[test]
fn user_tables_extend_the_defaults() {
    let dir = tempfile::tempdir().unwrap();
    let abbr = dir.path().join("abbr.tsv");
    std::fs::write(&abbr, "# extra\nbrb\tbe right back\n").unwrap();
    let emo = dir.path().join("emo.txt");
    std::fs::write(&emo, "o7\n").unwrap();
    let rules = NormRuleSet::with_files(Some(&abbr), Some(&emo), 30).unwrap();
    assert_eq!(normalize_text("brb o7", &rules), "be right back");
}
