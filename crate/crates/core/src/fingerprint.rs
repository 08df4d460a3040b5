//! Binary Morgan (ECFP-style) fingerprints and Tanimoto similarity.
//!
//! Each atom starts from an invariant built from (element, degree, sum of
//! incident bond orders, free valence). Every round replaces an atom's
//! identifier by a hash of its previous identifier and the sorted list of
//! `(bond order, neighbour identifier)` pairs. Every identifier produced,
//! from round 0 to `radius`, sets bit `id mod width`.
//!
//! The hash is a fixed splitmix-style 64-bit mixer with a pinned seed, so a
//! fingerprint is identical across runs and platforms.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::molgraph::{free_valence, Molecule};

pub const DEFAULT_RADIUS: usize = 2;
pub const DEFAULT_WIDTH: usize = 2048;

const HASH_SEED: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
pub enum FingerprintError {
    #[error("cannot fingerprint an empty molecule")]
    EmptyMolecule,
    #[error("fingerprint width {0} is not a positive power of two")]
    BadWidth(usize),
    #[error("fingerprint widths differ ({0} vs {1})")]
    WidthMismatch(usize, usize),
    #[error("Tanimoto similarity is undefined for two empty fingerprints")]
    BothZero,
    #[error("bad hex fingerprint: {0}")]
    BadHex(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FingerprintConfig {
    pub radius: usize,
    pub width: usize,
}

impl Default for FingerprintConfig {
    fn default() -> Self {
        FingerprintConfig {
            radius: DEFAULT_RADIUS,
            width: DEFAULT_WIDTH,
        }
    }
}

/// Fixed-width bit vector.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct Fingerprint {
    width: usize,
    words: Vec<u64>,
}

impl Fingerprint {
    pub fn zeros(width: usize) -> Result<Self, FingerprintError> {
        if width == 0 || !width.is_power_of_two() {
            return Err(FingerprintError::BadWidth(width));
        }
        Ok(Fingerprint {
            width,
            words: vec![0; width.div_ceil(64)],
        })
    }

    /// Builds a fingerprint with the given bits set (indices taken mod width).
    pub fn from_bits<I: IntoIterator<Item = usize>>(
        width: usize,
        bits: I,
    ) -> Result<Self, FingerprintError> {
        let mut fp = Self::zeros(width)?;
        for b in bits {
            fp.set(b);
        }
        Ok(fp)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize) {
        let bit = bit & (self.width - 1);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn flip(&mut self, bit: usize) {
        let bit = bit & (self.width - 1);
        self.words[bit / 64] ^= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        bit < self.width && self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    /// Indices of set bits, ascending.
    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        self.words.iter().enumerate().flat_map(|(k, &w)| {
            let mut w = w;
            std::iter::from_fn(move || {
                if w == 0 {
                    return None;
                }
                let t = w.trailing_zeros() as usize;
                w &= w - 1;
                Some(k * 64 + t)
            })
        })
    }

    /// Bits as 0/1 reals.
    pub fn to_dense(&self) -> Vec<f64> {
        let mut out = vec![0.0; self.width];
        for b in self.ones() {
            out[b] = 1.0;
        }
        out
    }

    /// `width / 4` hex characters. Bit `i` is read left to right: the first
    /// character holds bits 0..4 with bit 0 as its most significant bit.
    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(self.width.div_ceil(4));
        for nibble in 0..self.width.div_ceil(4) {
            let mut v = 0u8;
            for k in 0..4 {
                v = (v << 1) | u8::from(self.get(nibble * 4 + k));
            }
            let _ = write!(s, "{v:x}");
        }
        s
    }

    pub fn from_hex(hex: &str) -> Result<Self, FingerprintError> {
        let mut fp = Self::zeros(hex.len() * 4)?;
        for (nibble, c) in hex.chars().enumerate() {
            let v = c
                .to_digit(16)
                .ok_or_else(|| FingerprintError::BadHex(hex.to_string()))?;
            for k in 0..4 {
                if v >> (3 - k) & 1 == 1 {
                    fp.set(nibble * 4 + k);
                }
            }
        }
        Ok(fp)
    }
}

fn mix64(mut z: u64) -> u64 {
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

fn fold(h: u64, x: u64) -> u64 {
    mix64(
        h ^ x
            .wrapping_add(HASH_SEED)
            .wrapping_add(h << 6)
            .wrapping_add(h >> 2),
    )
}

fn fold_all(values: &[u64]) -> u64 {
    values.iter().fold(HASH_SEED, |h, &x| fold(h, x))
}

/// Per-round atom identifiers; `result[r][v]` is atom `v` after `r` rounds.
pub fn atom_identifiers(m: &Molecule, radius: usize) -> Vec<Vec<u64>> {
    let n = m.atom_count();
    let initial: Vec<u64> = (0..n)
        .map(|v| {
            let fv = free_valence(m, v).expect("atom index in range");
            fold_all(&[
                m.elements()[v].ordinal() as u64,
                m.degree(v) as u64,
                u64::from(m.bond_order_sum(v)),
                fv as i64 as u64,
            ])
        })
        .collect();
    let mut rounds = vec![initial];
    for r in 1..=radius {
        let prev = &rounds[r - 1];
        let next = (0..n)
            .map(|v| {
                let mut env: Vec<(u64, u64)> = m
                    .neighbors(v)
                    .iter()
                    .map(|&(u, o)| (u64::from(o.value()), prev[u]))
                    .collect();
                env.sort_unstable();
                let mut h = fold(fold(HASH_SEED, r as u64), prev[v]);
                for (o, id) in env {
                    h = fold(fold(h, o), id);
                }
                h
            })
            .collect();
        rounds.push(next);
    }
    rounds
}

pub fn morgan_fingerprint(
    m: &Molecule,
    radius: usize,
    width: usize,
) -> Result<Fingerprint, FingerprintError> {
    let mut fp = Fingerprint::zeros(width)?;
    if m.is_empty() {
        return Err(FingerprintError::EmptyMolecule);
    }
    for round in atom_identifiers(m, radius) {
        for id in round {
            fp.set((id & (width as u64 - 1)) as usize);
        }
    }
    Ok(fp)
}

impl FingerprintConfig {
    pub fn fingerprint(&self, m: &Molecule) -> Result<Fingerprint, FingerprintError> {
        morgan_fingerprint(m, self.radius, self.width)
    }

    pub fn validate(&self) -> Result<(), FingerprintError> {
        Fingerprint::zeros(self.width).map(|_| ())
    }
}

/// `|a ∧ b| / (|a| + |b| − |a ∧ b|)`.
pub fn tanimoto(a: &Fingerprint, b: &Fingerprint) -> Result<f64, FingerprintError> {
    if a.width != b.width {
        return Err(FingerprintError::WidthMismatch(a.width, b.width));
    }
    let both: u32 = a
        .words
        .iter()
        .zip(&b.words)
        .map(|(x, y)| (x & y).count_ones())
        .sum();
    let (na, nb) = (a.count_ones() as u32, b.count_ones() as u32);
    let union = na + nb - both;
    if union == 0 {
        return Err(FingerprintError::BothZero);
    }
    Ok(f64::from(both) / f64::from(union))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::molgraph::parse_smiles;
    use proptest::prelude::*;

    fn fp(s: &str, radius: usize) -> Fingerprint {
        morgan_fingerprint(&parse_smiles(s).unwrap(), radius, DEFAULT_WIDTH).unwrap()
    }

    #[test]
    fn lone_carbon_radius_zero() {
        assert_eq!(fp("C", 0).count_ones(), 1);
    }

    #[test]
    fn ethanol_differs_from_propane() {
        assert_ne!(fp("CCO", 2), fp("CCC", 2));
    }

    #[test]
    fn reindexing_does_not_change_bits() {
        let m = parse_smiles("CC(=O)NC1CC1").unwrap();
        let p = m.permuted(&[6, 2, 4, 0, 1, 5, 3]).unwrap();
        assert_eq!(
            morgan_fingerprint(&m, 3, 1024).unwrap(),
            morgan_fingerprint(&p, 3, 1024).unwrap()
        );
    }

    #[test]
    fn width_checks() {
        let m = parse_smiles("C").unwrap();
        assert_eq!(
            morgan_fingerprint(&m, 2, 1000),
            Err(FingerprintError::BadWidth(1000))
        );
        assert_eq!(
            morgan_fingerprint(&m, 2, 0),
            Err(FingerprintError::BadWidth(0))
        );
        let a = Fingerprint::from_bits(8, [1]).unwrap();
        let b = Fingerprint::from_bits(16, [1]).unwrap();
        assert_eq!(
            tanimoto(&a, &b),
            Err(FingerprintError::WidthMismatch(8, 16))
        );
        let z = Fingerprint::zeros(8).unwrap();
        assert_eq!(tanimoto(&z, &z), Err(FingerprintError::BothZero));
    }

    #[test]
    fn tanimoto_cases() {
        let a = Fingerprint::from_bits(64, [1, 2, 3]).unwrap();
        let b = Fingerprint::from_bits(64, [2, 3, 4]).unwrap();
        let c = Fingerprint::from_bits(64, [10, 11]).unwrap();
        assert_eq!(tanimoto(&a, &b).unwrap(), 0.5);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        assert_eq!(tanimoto(&a, &c).unwrap(), 0.0);
    }

    #[test]
    fn hex_layout() {
        let fp = Fingerprint::from_bits(8, [0, 7]).unwrap();
        assert_eq!(fp.to_hex(), "81");
        let fp = Fingerprint::from_bits(8, [1, 4]).unwrap();
        assert_eq!(fp.to_hex(), "48");
        assert_eq!(Fingerprint::from_hex("48").unwrap(), fp);
    }

    #[test]
    fn one_bit_flip_sensitivity_exhaustive() {
        // all pairs of 6-bit fingerprints with a nonzero
        let width = 8;
        for sa in 1u32..64 {
            let a = Fingerprint::from_bits(width, (0..6).filter(|k| sa >> k & 1 == 1)).unwrap();
            let na = a.count_ones() as f64;
            for sb in 0u32..64 {
                let b = Fingerprint::from_bits(width, (0..6).filter(|k| sb >> k & 1 == 1)).unwrap();
                let base = tanimoto(&a, &b).unwrap();
                for bit in 0..width {
                    let mut b2 = b.clone();
                    b2.flip(bit);
                    let moved = tanimoto(&a, &b2).unwrap();
                    assert!((moved - base).abs() <= 1.0 / na + 1e-15);
                }
            }
        }
    }

    fn arb_fp() -> impl Strategy<Value = Fingerprint> {
        proptest::collection::vec(0usize..128, 1..40)
            .prop_map(|bits| Fingerprint::from_bits(128, bits).unwrap())
    }

    proptest! {
        #[test]
        fn tanimoto_symmetric_and_bounded(a in arb_fp(), b in arb_fp()) {
            let ab = tanimoto(&a, &b).unwrap();
            prop_assert_eq!(ab, tanimoto(&b, &a).unwrap());
            prop_assert!((0.0..=1.0).contains(&ab));
            prop_assert_eq!(ab == 1.0, a == b);
        }

        #[test]
        fn hex_round_trip(a in arb_fp()) {
            let hex = a.to_hex();
            prop_assert_eq!(hex.len(), 32);
            prop_assert_eq!(Fingerprint::from_hex(&hex).unwrap(), a);
        }
    }
}
