//! The label alphabet.

use std::fmt;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

/// Digits, uppercase, lowercase, then the ID-specific specials, in class-id order.
pub const SYMBOLS: &str =
    "0123456789ABCDEFGHIJKLMNOPQRSTUVWXYZabcdefghijklmnopqrstuvwxyzßäöüÄÖÜ.-/()";

pub const NUM_CLASSES: usize = 74;

/// Index of a symbol in the [`Charset`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ClassId(pub u16);

impl ClassId {
    pub fn index(self) -> usize {
        usize::from(self.0)
    }
}

impl fmt::Display for ClassId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        self.0.fmt(f)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Charset {
    symbols: Vec<char>,
}

impl Default for Charset {
    fn default() -> Self {
        Self {
            symbols: SYMBOLS.chars().collect(),
        }
    }
}

impl Charset {
    pub fn len(&self) -> usize {
        self.symbols.len()
    }

    pub fn is_empty(&self) -> bool {
        self.symbols.is_empty()
    }

    pub fn symbols(&self) -> &[char] {
        &self.symbols
    }

    pub fn class_of(&self, symbol: char) -> Result<ClassId> {
        self.symbols
            .iter()
            .position(|&s| s == symbol)
            .map(|i| ClassId(i as u16))
            .ok_or(Error::UnknownSymbol(symbol))
    }

    pub fn symbol(&self, class: ClassId) -> Result<char> {
        self.symbols
            .get(class.index())
            .copied()
            .ok_or(Error::ClassOutOfRange(class.index()))
    }

    pub fn contains(&self, symbol: char) -> bool {
        self.symbols.contains(&symbol)
    }

    pub fn classes(&self) -> impl Iterator<Item = ClassId> + '_ {
        (0..self.symbols.len()).map(|i| ClassId(i as u16))
    }

    /// Hex SHA-256 over the UTF-8 symbol sequence. Stored in model files so a
    /// model can't silently be used with a reordered alphabet.
    pub fn hash(&self) -> String {
        let s: String = self.symbols.iter().collect();
        let digest = Sha256::digest(s.as_bytes());
        digest.iter().map(|b| format!("{b:02x}")).collect()
    }

    /// Maps every symbol of `text` except spaces and newlines to its class.
    pub fn encode(&self, text: &str) -> Result<Vec<ClassId>> {
        text.chars()
            .filter(|c| !c.is_whitespace())
            .map(|c| self.class_of(c))
            .collect()
    }
}

/// Named class subsets used by experiments.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSubset {
    /// All 74 classes.
    Full,
    /// Digits and uppercase letters (36 classes).
    Desk,
}

impl ClassSubset {
    pub fn classes(self, charset: &Charset) -> Vec<ClassId> {
        match self {
            ClassSubset::Full => charset.classes().collect(),
            ClassSubset::Desk => charset
                .classes()
                .filter(|&c| {
                    let s = charset.symbol(c).expect("in range");
                    s.is_ascii_digit() || s.is_ascii_uppercase()
                })
                .collect(),
        }
    }
}
