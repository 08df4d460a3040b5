use super::{check_validity, free_valence, Bond, BondOrder, MolError, Molecule};
use crate::actions::EditAction;

fn illegal(action: &EditAction, why: &str) -> MolError {
    MolError::IllegalAction(format!("{action}: {why}"))
}

/// Applies a legal edit and returns the resulting molecule; `m` is untouched.
///
/// Legality is checked against the valence model independently of any atom
/// vocabulary. When removing a bond splits the molecule, only the fragment
/// holding the lower-indexed endpoint is kept, with atoms renumbered in their
/// original relative order.
pub fn apply_edit(m: &Molecule, action: &EditAction) -> Result<Molecule, MolError> {
    let report = check_validity(m);
    if !report.valid {
        return Err(MolError::InvalidMolecule(report));
    }
    let action = action.normalized();
    match action {
        EditAction::NoOp => Ok(m.clone()),
        EditAction::AddAtom { element, attach_to } => {
            if attach_to >= m.atom_count() {
                return Err(illegal(&action, "attachment atom out of range"));
            }
            if free_valence(m, attach_to)? < 1 {
                return Err(illegal(&action, "attachment atom is saturated"));
            }
            let mut elements = m.elements().to_vec();
            elements.push(element);
            let mut bonds = m.bonds().to_vec();
            bonds.push(Bond::new(attach_to, elements.len() - 1, BondOrder::Single)?);
            Ok(Molecule::from_sorted_bonds(elements, bonds))
        }
        EditAction::SetBond { a, b, new_order } => {
            if a == b || b >= m.atom_count() {
                return Err(illegal(&action, "bad atom pair"));
            }
            let current = m.bond_order(a, b);
            if new_order > 3 || new_order <= current {
                return Err(illegal(&action, "order must strictly increase up to 3"));
            }
            let headroom = free_valence(m, a)?.min(free_valence(m, b)?);
            if i32::from(new_order - current) > headroom {
                return Err(illegal(&action, "exceeds free valence"));
            }
            Ok(with_bond(m, a, b, new_order))
        }
        EditAction::RemoveOrDowngradeBond { a, b, new_order } => {
            if a == b || b >= m.atom_count() {
                return Err(illegal(&action, "bad atom pair"));
            }
            let current = m.bond_order(a, b);
            if current == 0 || new_order >= current {
                return Err(illegal(&action, "order must strictly decrease"));
            }
            let edited = with_bond(m, a, b, new_order);
            if new_order > 0 {
                return Ok(edited);
            }
            let keep = edited.component_mask(a);
            if keep.iter().all(|&k| k) {
                Ok(edited)
            } else {
                Ok(edited.induced(&keep))
            }
        }
    }
    .inspect(|result| debug_assert!(check_validity(result).valid))
}

fn with_bond(m: &Molecule, a: usize, b: usize, order: u8) -> Molecule {
    let mut bonds: Vec<Bond> = m
        .bonds()
        .iter()
        .copied()
        .filter(|bond| bond.endpoints() != (a, b))
        .collect();
    if order > 0 {
        let order = BondOrder::from_value(order).expect("order checked by caller");
        bonds.push(Bond { a, b, order });
        bonds.sort();
    }
    Molecule::from_sorted_bonds(m.elements().to_vec(), bonds)
}
