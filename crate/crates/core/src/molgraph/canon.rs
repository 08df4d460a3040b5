//! Canonical labelling by colour refinement with exhaustive individualisation.
//!
//! Vertex colours start from (element, degree, sorted incident bond orders)
//! and are refined by neighbourhood signatures until the partition is stable.
//! Remaining ties are broken by trying every vertex of the first non-singleton
//! cell in turn and keeping the lexicographically smallest certificate. That
//! search is exponential only in the size of the automorphism group, which is
//! tiny for the molecules this crate deals with.

use super::Molecule;

type Certificate = (Vec<usize>, Vec<(usize, usize, u8)>);

fn initial_colors(m: &Molecule) -> Vec<usize> {
    let sigs: Vec<(usize, usize, Vec<u8>)> = (0..m.atom_count())
        .map(|v| {
            let mut orders: Vec<u8> = m.neighbors(v).iter().map(|(_, o)| o.value()).collect();
            orders.sort_unstable();
            (m.elements()[v].ordinal(), m.degree(v), orders)
        })
        .collect();
    rank(&sigs)
}

/// Dense ranks of `keys` under their natural order.
fn rank<K: Ord + Clone>(keys: &[K]) -> Vec<usize> {
    let mut sorted: Vec<K> = keys.to_vec();
    sorted.sort();
    sorted.dedup();
    keys.iter()
        .map(|k| sorted.binary_search(k).expect("key present"))
        .collect()
}

fn class_count(colors: &[usize]) -> usize {
    colors.iter().max().map_or(0, |&c| c + 1)
}

fn refine(m: &Molecule, mut colors: Vec<usize>) -> Vec<usize> {
    loop {
        let before = class_count(&colors);
        let sigs: Vec<(usize, Vec<(u8, usize)>)> = (0..m.atom_count())
            .map(|v| {
                let mut nb: Vec<(u8, usize)> = m
                    .neighbors(v)
                    .iter()
                    .map(|&(u, o)| (o.value(), colors[u]))
                    .collect();
                nb.sort_unstable();
                (colors[v], nb)
            })
            .collect();
        colors = rank(&sigs);
        if class_count(&colors) == before {
            return colors;
        }
    }
}

fn certificate(m: &Molecule, position: &[usize]) -> Certificate {
    let mut elements = vec![0; m.atom_count()];
    for (v, &p) in position.iter().enumerate() {
        elements[p] = m.elements()[v].ordinal();
    }
    let mut edges: Vec<(usize, usize, u8)> = m
        .bonds()
        .iter()
        .map(|b| {
            let (i, j) = b.endpoints();
            let (pi, pj) = (position[i], position[j]);
            (pi.min(pj), pi.max(pj), b.order().value())
        })
        .collect();
    edges.sort_unstable();
    (elements, edges)
}

fn search(m: &Molecule, colors: Vec<usize>, best: &mut Option<Certificate>) {
    let n = colors.len();
    if class_count(&colors) == n {
        let cert = certificate(m, &colors);
        if best.as_ref().is_none_or(|b| cert < *b) {
            *best = Some(cert);
        }
        return;
    }
    let mut sizes = vec![0usize; class_count(&colors)];
    for &c in &colors {
        sizes[c] += 1;
    }
    let target = sizes
        .iter()
        .position(|&s| s > 1)
        .expect("a non-singleton cell");
    for v in (0..n).filter(|&v| colors[v] == target) {
        let split: Vec<(usize, bool)> = colors
            .iter()
            .enumerate()
            .map(|(w, &c)| (c, !(c == target && w == v)))
            .collect();
        search(m, refine(m, rank(&split)), best);
    }
}

/// Opaque string shared by exactly the molecules isomorphic to `m`
/// (element- and bond-order-preserving).
pub fn canonical_key(m: &Molecule) -> String {
    if m.is_empty() {
        return String::new();
    }
    let mut best = None;
    search(m, refine(m, initial_colors(m)), &mut best);
    let (elements, edges) = best.expect("search visits at least one leaf");
    let mut key = String::new();
    for (k, e) in elements.iter().enumerate() {
        if k > 0 {
            key.push('.');
        }
        key.push_str(super::Element::ALL[*e].symbol());
    }
    key.push('|');
    for (k, (i, j, o)) in edges.iter().enumerate() {
        if k > 0 {
            key.push(',');
        }
        key.push_str(&format!("{i}-{j}:{o}"));
    }
    key
}
