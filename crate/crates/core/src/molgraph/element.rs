use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

/// Heavy-atom vocabulary. Hydrogens are always implicit.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum Element {
    C,
    N,
    O,
    S,
    F,
    Cl,
    Br,
}

impl Element {
    pub const ALL: [Element; 7] = [
        Element::C,
        Element::N,
        Element::O,
        Element::S,
        Element::F,
        Element::Cl,
        Element::Br,
    ];

    /// Bond-order capacity. Single-valued per element.
    pub const fn max_valence(self) -> u8 {
        match self {
            Element::C => 4,
            Element::N => 3,
            Element::O | Element::S => 2,
            Element::F | Element::Cl | Element::Br => 1,
        }
    }

    pub const fn symbol(self) -> &'static str {
        match self {
            Element::C => "C",
            Element::N => "N",
            Element::O => "O",
            Element::S => "S",
            Element::F => "F",
            Element::Cl => "Cl",
            Element::Br => "Br",
        }
    }

    /// Position of this element in [`Element::ALL`]; used for one-hot features.
    pub const fn ordinal(self) -> usize {
        self as usize
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, thiserror::Error)]
#[error("unknown element symbol `{0}`")]
pub struct UnknownElement(pub String);

impl FromStr for Element {
    type Err = UnknownElement;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Element::ALL
            .iter()
            .copied()
            .find(|e| e.symbol() == s)
            .ok_or_else(|| UnknownElement(s.to_string()))
    }
}

impl TryFrom<String> for Element {
    type Error = UnknownElement;

    fn try_from(value: String) -> Result<Self, Self::Error> {
        value.parse()
    }
}

impl From<Element> for String {
    fn from(e: Element) -> String {
        e.symbol().to_string()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn valence_table() {
        let expected = [4, 3, 2, 2, 1, 1, 1];
        for (e, v) in Element::ALL.iter().zip(expected) {
            assert_eq!(e.max_valence(), v, "{e}");
        }
    }

    #[test]
    fn symbols_round_trip() {
        for e in Element::ALL {
            assert_eq!(e.symbol().parse::<Element>().unwrap(), e);
            assert_eq!(Element::ALL[e.ordinal()], e);
        }
        assert!("H".parse::<Element>().is_err());
        assert!("c".parse::<Element>().is_err());
    }
}
