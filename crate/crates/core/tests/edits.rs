mod common;

use std::collections::BTreeSet;
use std::path::PathBuf;

use meg_core::fingerprint::FingerprintConfig;
use meg_core::{
    action_signature, apply_edit, canonical_key, check_validity, enumerate_actions, parse_smiles,
    write_smiles, EditAction, Element,
};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use common::{corpus, oracle_signatures, random_permutation, ALL_ELEMENTS};

#[test]
fn corpus_shape() {
    let c = corpus();
    assert!(c.len() >= 200, "{}", c.len());
    for (s, m) in &c {
        assert!(m.atom_count() <= 8, "{s}");
        assert!(check_validity(m).valid, "{s}");
    }
}

#[test]
fn enumeration_matches_oracle_on_whole_corpus() {
    let vocabs: [&[Element]; 3] = [&ALL_ELEMENTS, &[Element::C, Element::N, Element::O], &[]];
    for (s, m) in corpus() {
        for vocab in vocabs {
            for noop in [false, true] {
                let got = enumerate_actions(&m, vocab, noop).unwrap();
                let sigs: Vec<String> = got.iter().map(action_signature).collect();
                let set: BTreeSet<String> = sigs.iter().cloned().collect();
                assert_eq!(set.len(), sigs.len(), "duplicate signatures for {s}");
                assert_eq!(
                    set,
                    oracle_signatures(&m, vocab, noop),
                    "{s} vocab {vocab:?}"
                );
            }
        }
    }
}

#[test]
fn enumeration_ignores_repeated_vocab_entries() {
    let m = parse_smiles("CO").unwrap();
    let once = enumerate_actions(&m, &[Element::N], false).unwrap();
    let twice = enumerate_actions(&m, &[Element::N, Element::N], false).unwrap();
    assert_eq!(once, twice);
}

#[test]
fn edits_are_reversible() {
    for (s, m) in corpus().into_iter().step_by(3) {
        let key = canonical_key(&m);
        for action in enumerate_actions(&m, &ALL_ELEMENTS, false).unwrap() {
            let edited = apply_edit(&m, &action).unwrap();
            let undo = match action {
                EditAction::AddAtom { attach_to, .. } => {
                    EditAction::downgrade_bond(attach_to, edited.atom_count() - 1, 0)
                }
                EditAction::SetBond { a, b, .. } => {
                    EditAction::downgrade_bond(a, b, m.bond_order(a, b))
                }
                EditAction::RemoveOrDowngradeBond { a, b, new_order } if new_order > 0 => {
                    EditAction::set_bond(a, b, m.bond_order(a, b))
                }
                // removals that may split the molecule cannot be undone in general
                _ => continue,
            };
            let back = apply_edit(&edited, &undo).unwrap();
            assert_eq!(canonical_key(&back), key, "{s}: {action} then {undo}");
        }
    }
}

#[test]
fn removing_a_bridge_keeps_the_lower_fragment() {
    // C0-C1-O2 with the 0-1 bond removed leaves atom 0 alone
    let m = parse_smiles("CCO").unwrap();
    let out = apply_edit(&m, &EditAction::downgrade_bond(0, 1, 0)).unwrap();
    assert_eq!(write_smiles(&out), "C");
    let out = apply_edit(&m, &EditAction::downgrade_bond(1, 2, 0)).unwrap();
    assert_eq!(
        canonical_key(&out),
        canonical_key(&parse_smiles("CC").unwrap())
    );
    // breaking a ring bond keeps everything
    let ring = parse_smiles("C1CC1").unwrap();
    let opened = apply_edit(&ring, &EditAction::downgrade_bond(0, 1, 0)).unwrap();
    assert_eq!(
        canonical_key(&opened),
        canonical_key(&parse_smiles("CCC").unwrap())
    );
}

#[test]
fn illegal_edits_are_rejected() {
    let m = parse_smiles("C#N").unwrap();
    for action in [
        EditAction::AddAtom {
            element: Element::C,
            attach_to: 1,
        },
        EditAction::set_bond(0, 1, 3),
        EditAction::downgrade_bond(0, 1, 3),
        EditAction::AddAtom {
            element: Element::C,
            attach_to: 5,
        },
    ] {
        assert!(apply_edit(&m, &action).is_err(), "{action}");
    }
}

#[test]
fn smiles_round_trip_preserves_identity() {
    for (s, m) in corpus() {
        let text = write_smiles(&m);
        let again = parse_smiles(&text).unwrap_or_else(|e| panic!("{s} -> {text}: {e}"));
        assert_eq!(canonical_key(&again), canonical_key(&m), "{s} -> {text}");
        assert_eq!(write_smiles(&again), text, "{s}: writer is not stable");
    }
}

fn data_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/data")
        .join(name)
}

/// Compares against a checked-in file; `MEG_BLESS=1` rewrites it instead.
fn golden(name: &str, actual: &str) {
    let path = data_path(name);
    if std::env::var_os("MEG_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected =
        std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "golden file {name} differs");
}

#[test]
fn canonical_keys_are_stable() {
    let mut out = String::new();
    for (s, m) in corpus().into_iter().take(60) {
        out.push_str(&format!("{s}\t{}\n", canonical_key(&m)));
    }
    golden("canonical_keys.tsv", &out);
}

#[test]
fn action_signatures_are_stable() {
    let mut out = String::new();
    for s in ["C", "CC=O", "C1CC1", "N#CC(F)Cl"] {
        let m = parse_smiles(s).unwrap();
        let sigs: Vec<String> = enumerate_actions(&m, &[Element::C, Element::N, Element::O], true)
            .unwrap()
            .iter()
            .map(action_signature)
            .collect();
        out.push_str(&format!("{s}\t{}\n", sigs.join(" ")));
    }
    golden("action_signatures.tsv", &out);
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(200))]

    #[test]
    fn keys_and_fingerprints_ignore_atom_order(idx in 0usize..10_000, seed: u64) {
        let c = corpus();
        let (s, m) = &c[idx % c.len()];
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let p = m.permuted(&random_permutation(m.atom_count(), &mut rng)).unwrap();
        prop_assert_eq!(canonical_key(&p), canonical_key(m), "{}", s);
        let fp = FingerprintConfig::default();
        prop_assert_eq!(fp.fingerprint(&p).unwrap(), fp.fingerprint(m).unwrap());
    }

    #[test]
    fn random_edit_walks_stay_valid(idx in 0usize..10_000, seed: u64, steps in 1usize..6) {
        use rand::Rng;
        let c = corpus();
        let mut m = c[idx % c.len()].1.clone();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        for _ in 0..steps {
            let actions = enumerate_actions(&m, &ALL_ELEMENTS, true).unwrap();
            let a = actions[rng.gen_range(0..actions.len())];
            m = apply_edit(&m, &a).unwrap();
            prop_assert!(check_validity(&m).valid);
        }
    }
}
