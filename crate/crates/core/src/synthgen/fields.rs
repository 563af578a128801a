//! Random field contents shaped like identity-document entries.
//!
//! Text is drawn symbol by symbol, never from word lists, so the corpus
//! carries no bigram statistics.

use serde::{Deserialize, Serialize};

use crate::charset::ClassSubset;
use crate::rng::SeededRng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FieldKind {
    /// `DD.MM.YYYY`
    Date,
    /// One letter followed by eight letters or digits.
    DocNumber,
    /// A single word.
    Name,
    /// Two words separated by a space.
    Place,
    /// Five to eight digits.
    Number,
}

impl FieldKind {
    pub const ALL: [FieldKind; 5] = [
        FieldKind::Date,
        FieldKind::DocNumber,
        FieldKind::Name,
        FieldKind::Place,
        FieldKind::Number,
    ];

    /// Id of the format rule in the shipped `rules.toml` that describes this kind.
    pub fn rule_id(self) -> &'static str {
        match self {
            FieldKind::Date => "date",
            FieldKind::DocNumber => "docno",
            FieldKind::Name | FieldKind::Place => "name",
            FieldKind::Number => "digits",
        }
    }
}

const DIGITS: &str = "0123456789";
const UPPER: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZ";
const LOWER_EXTRA: &str = "abcdefghijklmnopqrstuvwxyzßäöü";
const UPPER_EXTRA: &str = "ABCDEFGHIJKLMNOPQRSTUVWXYZÄÖÜ";

pub struct FieldTextSampler {
    subset: ClassSubset,
    kinds: Vec<FieldKind>,
}

impl FieldTextSampler {
    pub fn new(subset: ClassSubset, kinds: Vec<FieldKind>) -> Self {
        assert!(!kinds.is_empty(), "at least one field kind");
        Self { subset, kinds }
    }

    pub fn sample(&self, rng: &mut SeededRng) -> (FieldKind, String) {
        let kind = self.kinds[rng.index(self.kinds.len())];
        (kind, self.sample_kind(kind, rng))
    }

    pub fn sample_kind(&self, kind: FieldKind, rng: &mut SeededRng) -> String {
        match kind {
            FieldKind::Date => {
                let day = rng.int_in(1, 28);
                let month = rng.int_in(1, 12);
                let year = rng.int_in(1930, 2029);
                format!("{day:02}.{month:02}.{year}")
            }
            FieldKind::DocNumber => {
                let alnum: Vec<char> = UPPER.chars().chain(DIGITS.chars()).collect();
                let mut s = String::new();
                s.push(pick(UPPER, rng));
                for _ in 0..8 {
                    s.push(alnum[rng.index(alnum.len())]);
                }
                s
            }
            FieldKind::Name => self.word(rng, 3, 10),
            FieldKind::Place => {
                let a = self.word(rng, 3, 7);
                let b = self.word(rng, 3, 7);
                format!("{a} {b}")
            }
            FieldKind::Number => {
                let n = rng.int_in(5, 8);
                (0..n).map(|_| pick(DIGITS, rng)).collect()
            }
        }
    }

    fn word(&self, rng: &mut SeededRng, min: i64, max: i64) -> String {
        let n = rng.int_in(min, max) as usize;
        match self.subset {
            ClassSubset::Desk => (0..n).map(|_| pick(UPPER, rng)).collect(),
            ClassSubset::Full => {
                let mut s = String::new();
                s.push(pick(UPPER_EXTRA, rng));
                for _ in 1..n {
                    s.push(pick(LOWER_EXTRA, rng));
                }
                s
            }
        }
    }
}

fn pick(alphabet: &str, rng: &mut SeededRng) -> char {
    let n = alphabet.chars().count();
    alphabet.chars().nth(rng.index(n)).expect("index in range")
}
