#![allow(dead_code)]

use std::collections::BTreeSet;

use meg_core::{parse_smiles, Element, Molecule};

pub const ALL_ELEMENTS: [Element; 7] = [
    Element::C,
    Element::N,
    Element::O,
    Element::S,
    Element::F,
    Element::Cl,
    Element::Br,
];

pub fn corpus_text() -> &'static str {
    include_str!("../data/corpus.smi")
}

pub fn corpus() -> Vec<(String, Molecule)> {
    corpus_text()
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .map(|s| {
            (
                s.to_string(),
                parse_smiles(s).unwrap_or_else(|e| panic!("{s}: {e}")),
            )
        })
        .collect()
}

/// Valence capacities written out independently of the library's table.
pub fn capacity(e: Element) -> i64 {
    match e.to_string().as_str() {
        "C" => 4,
        "N" => 3,
        "O" | "S" => 2,
        "F" | "Cl" | "Br" => 1,
        other => panic!("unexpected element {other}"),
    }
}

fn order_sums(m: &Molecule) -> Vec<i64> {
    let n = m.atom_count();
    (0..n)
        .map(|i| {
            (0..n)
                .filter(|&j| j != i)
                .map(|j| i64::from(m.bond_order(i, j)))
                .sum()
        })
        .collect()
}

/// Generate-and-filter: every syntactically possible edit is tried on the
/// raw bond-order table, and kept when no atom exceeds its capacity.
pub fn oracle_signatures(m: &Molecule, vocab: &[Element], include_noop: bool) -> BTreeSet<String> {
    let n = m.atom_count();
    let sums = order_sums(m);
    let cap: Vec<i64> = m.elements().iter().map(|&e| capacity(e)).collect();
    let mut out = BTreeSet::new();
    for i in 0..n {
        for &e in vocab {
            if sums[i] < cap[i] && capacity(e) >= 1 {
                out.insert(format!("add:{e}@{i}"));
            }
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let cur = i64::from(m.bond_order(i, j));
            for t in 0..=3i64 {
                if t == cur {
                    continue;
                }
                let delta = t - cur;
                if sums[i] + delta <= cap[i] && sums[j] + delta <= cap[j] {
                    let kind = if t > cur { "bond" } else { "unbond" };
                    out.insert(format!("{kind}:{i}-{j}:{t}"));
                }
            }
        }
    }
    if include_noop {
        out.insert("noop".to_string());
    }
    out
}

pub fn random_permutation<R: rand::Rng>(n: usize, rng: &mut R) -> Vec<usize> {
    use rand::seq::SliceRandom;
    let mut p: Vec<usize> = (0..n).collect();
    p.shuffle(rng);
    p
}
