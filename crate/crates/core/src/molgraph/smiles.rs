//! Kekulized SMILES subset: organic-subset heavy atoms (C N O S F Cl Br),
//! implicit hydrogens, explicit `-` `=` `#` bonds, branches and ring-closure
//! labels (`0`-`9`, or `%nn`). See `docs/smiles-subset.md` for the grammar.

use std::collections::BTreeMap;

use super::{check_validity, BondOrder, Element, Molecule, ViolationKind, ViolationSite};

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum SmilesError {
    #[error("empty SMILES string")]
    Empty,
    #[error("unknown element symbol `{symbol}` at position {position}")]
    UnknownSymbol { symbol: String, position: usize },
    #[error("aromatic (lowercase) atom `{symbol}` at position {position} is not supported")]
    AromaticUnsupported { symbol: char, position: usize },
    #[error("ring closure {label} was never closed")]
    UnclosedRing { label: u32 },
    #[error("unbalanced parenthesis at position {position}")]
    UnbalancedParenthesis { position: usize },
    #[error("atom {atom} exceeds its maximum valence")]
    ValenceViolation { atom: usize },
    #[error("unsupported syntax `{symbol}` at position {position}")]
    UnsupportedSyntax { symbol: char, position: usize },
    #[error("unexpected `{symbol}` at position {position}")]
    UnexpectedToken { symbol: char, position: usize },
    #[error("ring closure {label} at position {position} does not form a new bond")]
    InvalidRingBond { label: u32, position: usize },
}

struct Parser {
    chars: Vec<char>,
    pos: usize,
    elements: Vec<Element>,
    bonds: Vec<(usize, usize, BondOrder)>,
    prev: Option<usize>,
    pending: Option<BondOrder>,
    // (anchor atom, atom count when the branch opened, position of `(`)
    branches: Vec<(usize, usize, usize)>,
    rings: BTreeMap<u32, (usize, Option<BondOrder>)>,
}

impl Parser {
    fn new(text: &str) -> Self {
        Parser {
            chars: text.chars().collect(),
            pos: 0,
            elements: Vec::new(),
            bonds: Vec::new(),
            prev: None,
            pending: None,
            branches: Vec::new(),
            rings: BTreeMap::new(),
        }
    }

    fn unexpected(&self, position: usize) -> SmilesError {
        SmilesError::UnexpectedToken {
            symbol: self.chars[position],
            position,
        }
    }

    fn peek(&self, offset: usize) -> Option<char> {
        self.chars.get(self.pos + offset).copied()
    }

    fn add_atom(&mut self, element: Element, position: usize) -> Result<(), SmilesError> {
        let idx = self.elements.len();
        self.elements.push(element);
        match self.prev {
            Some(p) => {
                let order = self.pending.take().unwrap_or(BondOrder::Single);
                self.bonds.push((p, idx, order));
            }
            None => {
                if self.pending.is_some() {
                    return Err(self.unexpected(position));
                }
            }
        }
        self.prev = Some(idx);
        Ok(())
    }

    fn ring_label(&mut self, label: u32, position: usize) -> Result<(), SmilesError> {
        let Some(here) = self.prev else {
            return Err(self.unexpected(position));
        };
        let bond = self.pending.take();
        match self.rings.remove(&label) {
            None => {
                self.rings.insert(label, (here, bond));
            }
            Some((other, open_bond)) => {
                let order = match (open_bond, bond) {
                    (Some(a), Some(b)) if a != b => {
                        return Err(SmilesError::InvalidRingBond { label, position })
                    }
                    (a, b) => a.or(b).unwrap_or(BondOrder::Single),
                };
                let exists = self
                    .bonds
                    .iter()
                    .any(|&(i, j, _)| (i, j) == (other, here) || (j, i) == (other, here));
                if other == here || exists {
                    return Err(SmilesError::InvalidRingBond { label, position });
                }
                self.bonds.push((other, here, order));
            }
        }
        Ok(())
    }

    fn run(mut self) -> Result<Molecule, SmilesError> {
        while let Some(c) = self.peek(0) {
            let position = self.pos;
            match c {
                'C' | 'B' | 'N' | 'O' | 'S' | 'F' => {
                    let (element, width) = match (c, self.peek(1)) {
                        ('C', Some('l')) => (Element::Cl, 2),
                        ('B', Some('r')) => (Element::Br, 2),
                        ('B', _) => {
                            return Err(SmilesError::UnknownSymbol {
                                symbol: "B".into(),
                                position,
                            })
                        }
                        ('C', _) => (Element::C, 1),
                        ('N', _) => (Element::N, 1),
                        ('O', _) => (Element::O, 1),
                        ('S', _) => (Element::S, 1),
                        _ => (Element::F, 1),
                    };
                    self.add_atom(element, position)?;
                    self.pos += width;
                    continue;
                }
                'A'..='Z' => {
                    let mut symbol = c.to_string();
                    if let Some(next) = self.peek(1).filter(|n| n.is_ascii_lowercase()) {
                        symbol.push(next);
                    }
                    return Err(SmilesError::UnknownSymbol { symbol, position });
                }
                'b' | 'c' | 'n' | 'o' | 'p' | 's' => {
                    return Err(SmilesError::AromaticUnsupported {
                        symbol: c,
                        position,
                    })
                }
                'a'..='z' => {
                    return Err(SmilesError::UnknownSymbol {
                        symbol: c.to_string(),
                        position,
                    })
                }
                '-' | '=' | '#' => {
                    if self.prev.is_none() || self.pending.is_some() {
                        return Err(self.unexpected(position));
                    }
                    self.pending = Some(match c {
                        '-' => BondOrder::Single,
                        '=' => BondOrder::Double,
                        _ => BondOrder::Triple,
                    });
                }
                '(' => {
                    let Some(p) = self.prev else {
                        return Err(self.unexpected(position));
                    };
                    if self.pending.is_some() {
                        return Err(self.unexpected(position));
                    }
                    self.branches.push((p, self.elements.len(), position));
                }
                ')' => {
                    let Some((anchor, count, _)) = self.branches.pop() else {
                        return Err(SmilesError::UnbalancedParenthesis { position });
                    };
                    if self.pending.is_some() || self.elements.len() == count {
                        return Err(self.unexpected(position));
                    }
                    self.prev = Some(anchor);
                }
                '0'..='9' => {
                    let label = c.to_digit(10).unwrap_or(0);
                    self.ring_label(label, position)?;
                }
                '%' => {
                    let digits: Option<u32> = match (self.peek(1), self.peek(2)) {
                        (Some(a), Some(b)) if a.is_ascii_digit() && b.is_ascii_digit() => {
                            Some(a.to_digit(10).unwrap_or(0) * 10 + b.to_digit(10).unwrap_or(0))
                        }
                        _ => None,
                    };
                    let Some(label) = digits else {
                        return Err(self.unexpected(position));
                    };
                    self.ring_label(label, position)?;
                    self.pos += 2;
                }
                _ => {
                    return Err(SmilesError::UnsupportedSyntax {
                        symbol: c,
                        position,
                    })
                }
            }
            self.pos += 1;
        }

        if self.pending.is_some() {
            let last = self.chars.len() - 1;
            return Err(self.unexpected(last));
        }
        if let Some(&(_, _, position)) = self.branches.first() {
            return Err(SmilesError::UnbalancedParenthesis { position });
        }
        if let Some((&label, _)) = self.rings.iter().next() {
            return Err(SmilesError::UnclosedRing { label });
        }

        let molecule = Molecule::new(self.elements, self.bonds)
            .expect("parser only emits in-range, loop-free, unique bonds");
        let report = check_validity(&molecule);
        if let Some(v) = report
            .violations
            .iter()
            .find(|v| v.kind == ViolationKind::ValenceViolation)
        {
            let atom = match v.site {
                ViolationSite::Atom(i) | ViolationSite::Bond(i, _) => i,
            };
            return Err(SmilesError::ValenceViolation { atom });
        }
        debug_assert!(report.valid);
        Ok(molecule)
    }
}

/// Parses the supported SMILES subset into a valid molecule. Atoms are
/// numbered in order of appearance.
pub fn parse_smiles(text: &str) -> Result<Molecule, SmilesError> {
    if text.is_empty() {
        return Err(SmilesError::Empty);
    }
    Parser::new(text).run()
}

struct Writer<'m> {
    mol: &'m Molecule,
    visited: Vec<bool>,
    children: Vec<Vec<usize>>,
    // ring-closure partners: (partner, order, opens_here)
    closures: Vec<Vec<(usize, BondOrder, bool)>>,
    order: Vec<usize>,
}

impl<'m> Writer<'m> {
    fn dfs(&mut self, v: usize, parent: Option<usize>) {
        self.visited[v] = true;
        self.order.push(v);
        for &(u, bond) in self.mol.neighbors(v) {
            if Some(u) == parent {
                continue;
            }
            if self.visited[u] {
                // back edge to an ancestor: the ancestor opens, v closes
                if !self.closures[v].iter().any(|&(p, _, _)| p == u) {
                    self.closures[u].push((v, bond, true));
                    self.closures[v].push((u, bond, false));
                }
            } else {
                self.children[v].push(u);
                self.dfs(u, Some(v));
            }
        }
    }
}

fn ring_label_text(label: u32) -> String {
    if label < 10 {
        label.to_string()
    } else {
        format!("%{label:02}")
    }
}

/// Writes a SMILES string that parses back to a molecule isomorphic to `m`.
/// Traversal is depth-first from atom 0, visiting neighbours by index.
pub fn write_smiles(m: &Molecule) -> String {
    let n = m.atom_count();
    if n == 0 {
        return String::new();
    }
    let mut w = Writer {
        mol: m,
        visited: vec![false; n],
        children: vec![Vec::new(); n],
        closures: vec![Vec::new(); n],
        order: Vec::new(),
    };
    // A valid molecule is one fragment; any other fragments are still
    // emitted (dot-separated) so the writer never silently drops atoms.
    let mut roots = Vec::new();
    for start in 0..n {
        if !w.visited[start] {
            roots.push(start);
            w.dfs(start, None);
        }
    }

    // Ring labels are assigned in preorder, which is also emission order.
    let mut labels: BTreeMap<(usize, usize), u32> = BTreeMap::new();
    // label 0 is legal but never emitted
    let mut in_use: Vec<bool> = vec![true];
    let mut atom_labels: Vec<Vec<(u32, BondOrder, bool)>> = vec![Vec::new(); n];
    for &v in &w.order {
        for &(u, bond, opens) in &w.closures[v] {
            if !opens {
                let label = labels[&(u, v)];
                in_use[label as usize] = false;
                atom_labels[v].push((label, bond, false));
            }
        }
        for &(u, bond, opens) in &w.closures[v] {
            if opens {
                let label = match in_use.iter().position(|&b| !b) {
                    Some(free) => free,
                    None => {
                        in_use.push(false);
                        in_use.len() - 1
                    }
                };
                in_use[label] = true;
                labels.insert((v, u), label as u32);
                atom_labels[v].push((label as u32, bond, true));
            }
        }
    }

    let mut out = String::new();
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            out.push('.');
        }
        emit(m, root, &w.children, &atom_labels, &mut out);
    }
    out
}

fn emit(
    m: &Molecule,
    v: usize,
    children: &[Vec<usize>],
    atom_labels: &[Vec<(u32, BondOrder, bool)>],
    out: &mut String,
) {
    out.push_str(m.elements()[v].symbol());
    for &(label, bond, opens) in &atom_labels[v] {
        if opens {
            out.push_str(bond.smiles_symbol());
        }
        out.push_str(&ring_label_text(label));
    }
    let kids = &children[v];
    for (k, &c) in kids.iter().enumerate() {
        let bond = BondOrder::from_value(m.bond_order(v, c)).expect("tree edge is a bond");
        let branch = k + 1 < kids.len();
        if branch {
            out.push('(');
        }
        out.push_str(bond.smiles_symbol());
        emit(m, c, children, atom_labels, out);
        if branch {
            out.push(')');
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::canonical_key;

    #[test]
    fn single_carbon() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(m.atom_count(), 1);
        assert_eq!(m.bond_count(), 0);
        assert_eq!(write_smiles(&m), "C");
    }

    #[test]
    fn formaldehyde() {
        let m = parse_smiles("C=O").unwrap();
        assert_eq!(m.elements(), &[Element::C, Element::O]);
        assert_eq!(m.bond_count(), 1);
        assert_eq!(m.bond_order(0, 1), 2);
    }

    #[test]
    fn cyclohexane_ring() {
        let m = parse_smiles("C1CCCCC1").unwrap();
        assert_eq!(m.atom_count(), 6);
        assert_eq!(m.bond_count(), 6);
        assert!((0..6).all(|i| m.degree(i) == 2));
        assert_eq!(m.bond_order(0, 5), 1);
    }

    #[test]
    fn halogens_and_branches() {
        let m = parse_smiles("ClC(Br)(F)C#N").unwrap();
        use Element::*;
        assert_eq!(m.elements(), &[Cl, C, Br, F, C, N]);
        assert_eq!(m.bond_order(4, 5), 3);
        assert_eq!(m.degree(1), 4);
    }

    #[test]
    fn ring_bond_symbols() {
        let a = parse_smiles("C=1CCCC1").unwrap();
        let b = parse_smiles("C1CCCC=1").unwrap();
        assert_eq!(a.bond_order(0, 4), 2);
        assert_eq!(canonical_key(&a), canonical_key(&b));
        assert!(matches!(
            parse_smiles("C=1CCCC#1"),
            Err(SmilesError::InvalidRingBond { label: 1, .. })
        ));
        assert_eq!(parse_smiles("C%12CC%12").unwrap().bond_count(), 3);
    }

    #[test]
    fn error_cases() {
        assert_eq!(parse_smiles(""), Err(SmilesError::Empty));
        assert!(matches!(
            parse_smiles("c1ccccc1"),
            Err(SmilesError::AromaticUnsupported {
                symbol: 'c',
                position: 0
            })
        ));
        assert!(matches!(
            parse_smiles("CCn"),
            Err(SmilesError::AromaticUnsupported { .. })
        ));
        assert!(matches!(
            parse_smiles("CXC"),
            Err(SmilesError::UnknownSymbol { .. })
        ));
        assert!(matches!(
            parse_smiles("CBC"),
            Err(SmilesError::UnknownSymbol { .. })
        ));
        assert!(matches!(
            parse_smiles("CNa"),
            Err(SmilesError::UnknownSymbol { .. })
        ));
        assert_eq!(
            parse_smiles("C1CC"),
            Err(SmilesError::UnclosedRing { label: 1 })
        );
        assert!(matches!(
            parse_smiles("CC(C"),
            Err(SmilesError::UnbalancedParenthesis { .. })
        ));
        assert!(matches!(
            parse_smiles("CC)C"),
            Err(SmilesError::UnbalancedParenthesis { .. })
        ));
        assert_eq!(
            parse_smiles("C(C)(C)(C)(C)C"),
            Err(SmilesError::ValenceViolation { atom: 0 })
        );
        assert_eq!(
            parse_smiles("O=O=O"),
            Err(SmilesError::ValenceViolation { atom: 1 })
        );
        for bad in ["[NH4+]", "C.C", "C/C=C/C", "C@C", "*C"] {
            assert!(
                matches!(
                    parse_smiles(bad),
                    Err(SmilesError::UnsupportedSyntax { .. })
                ),
                "{bad}"
            );
        }
        for bad in [
            "=C", "C=", "C==C", "C()C", "(C)C", "C(=)C", "1CC1", "C11", "C1C1",
        ] {
            assert!(parse_smiles(bad).is_err(), "{bad}");
        }
    }

    #[test]
    fn writer_round_trips() {
        for s in [
            "C",
            "CCO",
            "C=O",
            "C1CCCCC1",
            "CC(C)(C)C",
            "C1CC2CCC1C2",
            "N#CC(=O)Cl",
            "C12C3C4C1C5C2C3C45",
            "OC1=CC=CC=C1",
        ] {
            let m = parse_smiles(s).unwrap();
            let written = write_smiles(&m);
            let back = parse_smiles(&written).unwrap_or_else(|e| panic!("{s} -> {written}: {e}"));
            assert_eq!(canonical_key(&m), canonical_key(&back), "{s} -> {written}");
        }
    }

    #[test]
    fn writer_prefers_implicit_single_bonds() {
        let m = parse_smiles("C-C-O").unwrap();
        assert_eq!(write_smiles(&m), "CCO");
        let m = parse_smiles("CC(=O)O").unwrap();
        assert_eq!(write_smiles(&m), "CC(=O)O");
    }
}
