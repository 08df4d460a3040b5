//! The legal edit space of a molecule: atom additions, bond additions and
//! upgrades, bond downgrades and removals, and optionally the no-op.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::molgraph::{check_validity, free_valence, Element, MolError, Molecule};

/// One graph edit. Atom pairs are stored with the lower index first.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum EditAction {
    /// Append a new atom bonded to `attach_to` by a single bond.
    AddAtom {
        element: Element,
        attach_to: usize,
    },
    /// Create a bond or raise an existing bond to `new_order` (1..=3).
    SetBond {
        a: usize,
        b: usize,
        new_order: u8,
    },
    /// Lower a bond to `new_order` (0..=2); order 0 deletes it.
    RemoveOrDowngradeBond {
        a: usize,
        b: usize,
        new_order: u8,
    },
    NoOp,
}

impl EditAction {
    pub fn set_bond(i: usize, j: usize, new_order: u8) -> Self {
        EditAction::SetBond {
            a: i.min(j),
            b: i.max(j),
            new_order,
        }
    }

    pub fn downgrade_bond(i: usize, j: usize, new_order: u8) -> Self {
        EditAction::RemoveOrDowngradeBond {
            a: i.min(j),
            b: i.max(j),
            new_order,
        }
    }

    /// Same action with any atom pair put in `(low, high)` order.
    pub fn normalized(self) -> Self {
        match self {
            EditAction::SetBond { a, b, new_order } => Self::set_bond(a, b, new_order),
            EditAction::RemoveOrDowngradeBond { a, b, new_order } => {
                Self::downgrade_bond(a, b, new_order)
            }
            other => other,
        }
    }
}

impl fmt::Display for EditAction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&action_signature(self))
    }
}

/// Stable text form of an action, unique within any molecule's legal set.
///
/// `add:<El>@<atom>`, `bond:<i>-<j>:<order>`, `unbond:<i>-<j>:<order>`, `noop`.
pub fn action_signature(action: &EditAction) -> String {
    match action.normalized() {
        EditAction::AddAtom { element, attach_to } => format!("add:{element}@{attach_to}"),
        EditAction::SetBond { a, b, new_order } => format!("bond:{a}-{b}:{new_order}"),
        EditAction::RemoveOrDowngradeBond { a, b, new_order } => {
            format!("unbond:{a}-{b}:{new_order}")
        }
        EditAction::NoOp => "noop".to_string(),
    }
}

/// Every legal edit of a valid molecule, in a fixed order: atom additions by
/// attachment point then vocabulary order, then bond edits by atom pair and
/// target order, then the no-op when requested.
///
/// Atom additions use a single bond. A bond may be raised by any increment
/// that both endpoints' free valence can absorb; any bond may be lowered or
/// removed (a removal that splits the molecule is legal and resolved by
/// [`apply_edit`](crate::molgraph::apply_edit)).
pub fn enumerate_actions(
    m: &Molecule,
    vocab: &[Element],
    include_noop: bool,
) -> Result<Vec<EditAction>, MolError> {
    let report = check_validity(m);
    if !report.valid {
        return Err(MolError::InvalidMolecule(report));
    }
    let n = m.atom_count();
    let free: Vec<i32> = (0..n)
        .map(|i| free_valence(m, i))
        .collect::<Result<_, _>>()?;

    let mut elements: Vec<Element> = Vec::with_capacity(vocab.len());
    for &e in vocab {
        if !elements.contains(&e) {
            elements.push(e);
        }
    }

    let mut actions = Vec::new();
    for (attach_to, &fv) in free.iter().enumerate() {
        if fv >= 1 {
            actions.extend(
                elements
                    .iter()
                    .map(|&element| EditAction::AddAtom { element, attach_to }),
            );
        }
    }
    for i in 0..n {
        for j in i + 1..n {
            let current = m.bond_order(i, j);
            let headroom = free[i].min(free[j]);
            for target in current + 1..=3 {
                if i32::from(target - current) <= headroom {
                    actions.push(EditAction::set_bond(i, j, target));
                }
            }
            for target in 0..current {
                actions.push(EditAction::downgrade_bond(i, j, target));
            }
        }
    }
    if include_noop {
        actions.push(EditAction::NoOp);
    }
    Ok(actions)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::{apply_edit, parse_smiles};
    use Element::*;

    #[test]
    fn lone_carbon_additions() {
        let m = parse_smiles("C").unwrap();
        let actions = enumerate_actions(&m, &[C, N, O], false).unwrap();
        assert_eq!(
            actions,
            vec![
                EditAction::AddAtom {
                    element: C,
                    attach_to: 0
                },
                EditAction::AddAtom {
                    element: N,
                    attach_to: 0
                },
                EditAction::AddAtom {
                    element: O,
                    attach_to: 0
                },
            ]
        );
    }

    #[test]
    fn ethane_has_five() {
        let m = parse_smiles("CC").unwrap();
        let actions = enumerate_actions(&m, &[C], false).unwrap();
        assert_eq!(actions.len(), 5);
        assert!(actions.contains(&EditAction::set_bond(0, 1, 2)));
        assert!(actions.contains(&EditAction::set_bond(0, 1, 3)));
        assert!(actions.contains(&EditAction::downgrade_bond(0, 1, 0)));
    }

    #[test]
    fn saturated_oxygen_gates_edits() {
        let m = parse_smiles("C=O").unwrap();
        for a in enumerate_actions(&m, &[C, N, O], false).unwrap() {
            match a {
                EditAction::AddAtom { attach_to, .. } => assert_ne!(attach_to, 1),
                EditAction::SetBond { a, b, .. } => assert!(a != 1 && b != 1),
                _ => {}
            }
        }
    }

    #[test]
    fn noop_membership() {
        let m = parse_smiles("CC").unwrap();
        assert!(!enumerate_actions(&m, &[C], false)
            .unwrap()
            .contains(&EditAction::NoOp));
        let with = enumerate_actions(&m, &[C], true).unwrap();
        assert_eq!(with.last(), Some(&EditAction::NoOp));
        assert_eq!(with.iter().filter(|a| **a == EditAction::NoOp).count(), 1);
    }

    #[test]
    fn vocabulary_duplicates_ignored() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(enumerate_actions(&m, &[C, C, N], false).unwrap().len(), 2);
    }

    #[test]
    fn invalid_molecule_rejected() {
        let m = Molecule::new(vec![C, C], []).unwrap();
        assert!(matches!(
            enumerate_actions(&m, &[C], false),
            Err(MolError::InvalidMolecule(_))
        ));
    }

    #[test]
    fn signatures() {
        assert_eq!(action_signature(&EditAction::NoOp), "noop");
        assert_eq!(
            action_signature(&EditAction::AddAtom {
                element: Cl,
                attach_to: 3
            }),
            "add:Cl@3"
        );
        assert_eq!(
            action_signature(&EditAction::SetBond {
                a: 4,
                b: 1,
                new_order: 2
            }),
            "bond:1-4:2"
        );
        assert_eq!(
            action_signature(&EditAction::downgrade_bond(0, 2, 0)),
            "unbond:0-2:0"
        );
        let m = parse_smiles("CC(=O)N").unwrap();
        let actions = enumerate_actions(&m, &Element::ALL, true).unwrap();
        let mut sigs: Vec<String> = actions.iter().map(action_signature).collect();
        sigs.sort();
        sigs.dedup();
        assert_eq!(sigs.len(), actions.len());
    }

    #[test]
    fn every_action_applies() {
        let m = parse_smiles("C1CC(=O)C1N").unwrap();
        for a in enumerate_actions(&m, &Element::ALL, true).unwrap() {
            let next = apply_edit(&m, &a).unwrap();
            assert!(check_validity(&next).valid, "{a}");
        }
    }
}
