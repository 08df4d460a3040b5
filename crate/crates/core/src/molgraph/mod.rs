//! Molecular graph model: typed heavy atoms joined by single, double or
//! triple bonds, with implicit hydrogens filling any remaining valence.
//!
//! A [`Molecule`] always satisfies the structural invariants (bond endpoints
//! exist, no self-loops, at most one bond per pair). The chemical invariants
//! (valence capacity and single-fragment connectivity) are checked by
//! [`check_validity`], so that invalid structures can still be represented
//! and reported on.

mod canon;
mod edit;
mod element;
mod smiles;

use std::fmt;

use serde::Serialize;

pub use canon::canonical_key;
pub use edit::apply_edit;
pub use element::{Element, UnknownElement};
pub use smiles::{parse_smiles, write_smiles, SmilesError};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum MolError {
    #[error("atom index {0} out of range")]
    AtomOutOfRange(usize),
    #[error("bond {0}-{1} is a self-loop")]
    SelfLoop(usize, usize),
    #[error("duplicate bond between atoms {0} and {1}")]
    DuplicateBond(usize, usize),
    #[error("bond order {0} outside 1..=3")]
    BadBondOrder(u8),
    #[error("illegal action: {0}")]
    IllegalAction(String),
    #[error("molecule is not valid: {0}")]
    InvalidMolecule(ValidityReport),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BondOrder {
    Single = 1,
    Double = 2,
    Triple = 3,
}

impl BondOrder {
    pub const fn value(self) -> u8 {
        self as u8
    }

    pub fn from_value(v: u8) -> Result<Self, MolError> {
        match v {
            1 => Ok(BondOrder::Single),
            2 => Ok(BondOrder::Double),
            3 => Ok(BondOrder::Triple),
            other => Err(MolError::BadBondOrder(other)),
        }
    }

    /// SMILES bond symbol; single bonds are written implicitly.
    pub const fn smiles_symbol(self) -> &'static str {
        match self {
            BondOrder::Single => "",
            BondOrder::Double => "=",
            BondOrder::Triple => "#",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Atom {
    pub element: Element,
    pub index: usize,
}

/// An undirected bond. Endpoints are stored with `a < b`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Bond {
    a: usize,
    b: usize,
    order: BondOrder,
}

impl Bond {
    pub fn new(i: usize, j: usize, order: BondOrder) -> Result<Self, MolError> {
        if i == j {
            return Err(MolError::SelfLoop(i, j));
        }
        Ok(Bond {
            a: i.min(j),
            b: i.max(j),
            order,
        })
    }

    pub fn endpoints(&self) -> (usize, usize) {
        (self.a, self.b)
    }

    pub fn order(&self) -> BondOrder {
        self.order
    }
}

/// Attributed undirected molecular graph.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Molecule {
    elements: Vec<Element>,
    bonds: Vec<Bond>,
    // neighbour lists sorted by neighbour index; derived from `bonds`
    adjacency: Vec<Vec<(usize, BondOrder)>>,
}

impl Molecule {
    /// Builds a molecule, enforcing the structural invariants only.
    pub fn new<I>(elements: Vec<Element>, bonds: I) -> Result<Self, MolError>
    where
        I: IntoIterator<Item = (usize, usize, BondOrder)>,
    {
        let n = elements.len();
        let mut list = Vec::new();
        for (i, j, order) in bonds {
            if i >= n {
                return Err(MolError::AtomOutOfRange(i));
            }
            if j >= n {
                return Err(MolError::AtomOutOfRange(j));
            }
            list.push(Bond::new(i, j, order)?);
        }
        list.sort();
        for w in list.windows(2) {
            if w[0].endpoints() == w[1].endpoints() {
                return Err(MolError::DuplicateBond(w[0].a, w[0].b));
            }
        }
        Ok(Self::from_sorted_bonds(elements, list))
    }

    fn from_sorted_bonds(elements: Vec<Element>, bonds: Vec<Bond>) -> Self {
        let mut adjacency = vec![Vec::new(); elements.len()];
        for b in &bonds {
            adjacency[b.a].push((b.b, b.order));
            adjacency[b.b].push((b.a, b.order));
        }
        for list in &mut adjacency {
            list.sort();
        }
        Molecule {
            elements,
            bonds,
            adjacency,
        }
    }

    /// A single atom with no bonds.
    pub fn single(element: Element) -> Self {
        Self::from_sorted_bonds(vec![element], Vec::new())
    }

    pub fn atom_count(&self) -> usize {
        self.elements.len()
    }

    pub fn is_empty(&self) -> bool {
        self.elements.is_empty()
    }

    pub fn atoms(&self) -> impl Iterator<Item = Atom> + '_ {
        self.elements
            .iter()
            .enumerate()
            .map(|(index, &element)| Atom { element, index })
    }

    pub fn elements(&self) -> &[Element] {
        &self.elements
    }

    pub fn element(&self, atom: usize) -> Result<Element, MolError> {
        self.elements
            .get(atom)
            .copied()
            .ok_or(MolError::AtomOutOfRange(atom))
    }

    /// Bonds sorted by endpoint pair.
    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn bond_count(&self) -> usize {
        self.bonds.len()
    }

    /// Neighbours of `atom` with the connecting bond order, by ascending index.
    ///
    /// Panics if `atom` is out of range.
    pub fn neighbors(&self, atom: usize) -> &[(usize, BondOrder)] {
        &self.adjacency[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adjacency[atom].len()
    }

    /// Order of the bond between `i` and `j`, or 0 when unbonded.
    pub fn bond_order(&self, i: usize, j: usize) -> u8 {
        self.adjacency
            .get(i)
            .and_then(|list| list.iter().find(|(u, _)| *u == j))
            .map_or(0, |(_, o)| o.value())
    }

    /// Sum of incident bond orders.
    pub fn bond_order_sum(&self, atom: usize) -> u32 {
        self.adjacency[atom]
            .iter()
            .map(|(_, o)| u32::from(o.value()))
            .sum()
    }

    pub fn count_element(&self, element: Element) -> usize {
        self.elements.iter().filter(|&&e| e == element).count()
    }

    /// Returns a copy with atoms renumbered: old atom `i` becomes `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> Result<Molecule, MolError> {
        let n = self.atom_count();
        let mut seen = vec![false; n];
        if perm.len() != n {
            return Err(MolError::AtomOutOfRange(perm.len()));
        }
        for &p in perm {
            if p >= n || seen[p] {
                return Err(MolError::AtomOutOfRange(p));
            }
            seen[p] = true;
        }
        let mut elements = vec![Element::C; n];
        for (i, &e) in self.elements.iter().enumerate() {
            elements[perm[i]] = e;
        }
        Molecule::new(
            elements,
            self.bonds.iter().map(|b| (perm[b.a], perm[b.b], b.order)),
        )
    }

    /// Atoms reachable from `start`, as a membership mask.
    pub(crate) fn component_mask(&self, start: usize) -> Vec<bool> {
        let mut seen = vec![false; self.atom_count()];
        let mut stack = vec![start];
        seen[start] = true;
        while let Some(v) = stack.pop() {
            for &(u, _) in &self.adjacency[v] {
                if !seen[u] {
                    seen[u] = true;
                    stack.push(u);
                }
            }
        }
        seen
    }

    pub fn is_connected(&self) -> bool {
        self.is_empty() || self.component_mask(0).iter().all(|&s| s)
    }

    /// Keeps only the atoms flagged in `keep`, renumbering them in their
    /// original relative order.
    pub(crate) fn induced(&self, keep: &[bool]) -> Molecule {
        let mut remap = vec![usize::MAX; self.atom_count()];
        let mut elements = Vec::new();
        for (i, &k) in keep.iter().enumerate() {
            if k {
                remap[i] = elements.len();
                elements.push(self.elements[i]);
            }
        }
        let bonds = self
            .bonds
            .iter()
            .filter(|b| keep[b.a] && keep[b.b])
            .map(|b| Bond {
                a: remap[b.a],
                b: remap[b.b],
                order: b.order,
            })
            .collect();
        Molecule::from_sorted_bonds(elements, bonds)
    }
}

/// `max_valence − Σ incident bond orders`. Negative only for invalid molecules.
pub fn free_valence(m: &Molecule, atom: usize) -> Result<i32, MolError> {
    let element = m.element(atom)?;
    Ok(i32::from(element.max_valence()) - m.bond_order_sum(atom) as i32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ViolationSite {
    Atom(usize),
    Bond(usize, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ViolationKind {
    ValenceViolation,
    Disconnected,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct Violation {
    pub site: ViolationSite,
    pub kind: ViolationKind,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct ValidityReport {
    pub valid: bool,
    pub violations: Vec<Violation>,
}

impl fmt::Display for ValidityReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.valid {
            return f.write_str("valid");
        }
        for (k, v) in self.violations.iter().enumerate() {
            if k > 0 {
                f.write_str(", ")?;
            }
            match v.site {
                ViolationSite::Atom(i) => write!(f, "{:?} at atom {i}", v.kind)?,
                ViolationSite::Bond(i, j) => write!(f, "{:?} at bond {i}-{j}", v.kind)?,
            }
        }
        Ok(())
    }
}

/// Checks the chemical invariants: every atom within its valence capacity and
/// a single connected fragment. One violation per over-valent atom, plus one
/// `Disconnected` entry naming the first atom unreachable from atom 0.
pub fn check_validity(m: &Molecule) -> ValidityReport {
    let mut violations = Vec::new();
    for atom in m.atoms() {
        if m.bond_order_sum(atom.index) > u32::from(atom.element.max_valence()) {
            violations.push(Violation {
                site: ViolationSite::Atom(atom.index),
                kind: ViolationKind::ValenceViolation,
            });
        }
    }
    if !m.is_empty() {
        if let Some(first) = m.component_mask(0).iter().position(|&s| !s) {
            violations.push(Violation {
                site: ViolationSite::Atom(first),
                kind: ViolationKind::Disconnected,
            });
        }
    }
    ValidityReport {
        valid: violations.is_empty(),
        violations,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mol(elements: &[Element], bonds: &[(usize, usize, u8)]) -> Molecule {
        Molecule::new(
            elements.to_vec(),
            bonds
                .iter()
                .map(|&(i, j, o)| (i, j, BondOrder::from_value(o).unwrap())),
        )
        .unwrap()
    }

    #[test]
    fn lone_carbon_is_valid() {
        let m = Molecule::single(Element::C);
        assert!(check_validity(&m).valid);
        assert_eq!(free_valence(&m, 0).unwrap(), 4);
    }

    #[test]
    fn pentavalent_carbon_reported() {
        use Element::*;
        let m = mol(
            &[C, F, F, F, F, F],
            &[(0, 1, 1), (0, 2, 1), (0, 3, 1), (0, 4, 1), (0, 5, 1)],
        );
        let report = check_validity(&m);
        assert!(!report.valid);
        assert_eq!(
            report.violations,
            vec![Violation {
                site: ViolationSite::Atom(0),
                kind: ViolationKind::ValenceViolation
            }]
        );
        assert_eq!(free_valence(&m, 0).unwrap(), -1);
    }

    #[test]
    fn disconnected_reported_once() {
        let m = mol(&[Element::C, Element::C], &[]);
        let report = check_validity(&m);
        assert!(!report.valid);
        assert_eq!(report.violations.len(), 1);
        assert_eq!(report.violations[0].kind, ViolationKind::Disconnected);
    }

    #[test]
    fn free_valence_cases() {
        use Element::*;
        let co = mol(&[C, O], &[(0, 1, 2)]);
        assert_eq!(free_valence(&co, 1).unwrap(), 0);
        let cn = mol(&[C, N], &[(0, 1, 1)]);
        assert_eq!(free_valence(&cn, 1).unwrap(), 2);
        assert_eq!(free_valence(&cn, 2), Err(MolError::AtomOutOfRange(2)));
    }

    #[test]
    fn structural_errors() {
        use Element::*;
        let s = BondOrder::Single;
        assert_eq!(
            Molecule::new(vec![C, C], [(0, 0, s)]),
            Err(MolError::SelfLoop(0, 0))
        );
        assert_eq!(
            Molecule::new(vec![C, C], [(0, 1, s), (1, 0, s)]),
            Err(MolError::DuplicateBond(0, 1))
        );
        assert_eq!(
            Molecule::new(vec![C], [(0, 3, s)]),
            Err(MolError::AtomOutOfRange(3))
        );
    }

    #[test]
    fn permutation_relabels_bonds() {
        use Element::*;
        let m = mol(&[C, O, N], &[(0, 1, 2), (0, 2, 1)]);
        let p = m.permuted(&[2, 0, 1]).unwrap();
        assert_eq!(p.elements(), &[O, N, C]);
        assert_eq!(p.bond_order(2, 0), 2);
        assert_eq!(p.bond_order(2, 1), 1);
        assert!(m.permuted(&[0, 0, 1]).is_err());
    }
}
