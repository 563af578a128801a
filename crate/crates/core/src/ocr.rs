//! Field recognition: segmentation, per-character classification, assembly
//! and format-rule post-processing.
//!
//! Format rules are written as patterns over these tokens:
//!
//! | token    | slot                                  |
//! |----------|---------------------------------------|
//! | `9`      | digit                                 |
//! | `A`      | uppercase letter                      |
//! | `a`      | lowercase letter                      |
//! | `*`      | any symbol                            |
//! | `[...]`  | explicit set, ranges like `0-9` allowed |
//! | `\x`     | the literal symbol `x`                |
//!
//! A token may be followed by `{n}` to repeat it `n` times. A trailing `+`
//! on the last token lets it repeat, which makes the rule length variable.

use std::collections::HashSet;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::charset::{Charset, ClassId};
use crate::classify::{argmax_lowest, Model};
use crate::error::{Error, IoContext, Result};
use crate::imaging::{BBox, GrayImage};
use crate::segment::{segment_field, SegmentParams};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ClassSet {
    Digits,
    Uppercase,
    Lowercase,
    Alpha,
    Any,
    AnyOf(Vec<char>),
}

impl ClassSet {
    pub fn allows(&self, c: char) -> bool {
        match self {
            ClassSet::Digits => c.is_ascii_digit(),
            ClassSet::Uppercase => c.is_uppercase(),
            ClassSet::Lowercase => c.is_lowercase(),
            ClassSet::Alpha => c.is_alphabetic(),
            ClassSet::Any => true,
            ClassSet::AnyOf(set) => set.contains(&c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Slot {
    Literal(char),
    Class(ClassSet),
}

impl Slot {
    pub fn allows(&self, c: char) -> bool {
        match self {
            Slot::Literal(l) => *l == c,
            Slot::Class(set) => set.allows(c),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FormatRule {
    pub id: String,
    pub slots: Vec<Slot>,
    /// When set, the last slot repeats to cover any length of at least
    /// `slots.len()`.
    pub repeat_last: bool,
}

impl FormatRule {
    /// Parses a pattern and checks every slot against `charset`.
    pub fn parse(id: &str, pattern: &str, charset: &Charset) -> Result<FormatRule> {
        let err = |reason: String| Error::Rule {
            rule: id.to_owned(),
            reason,
        };
        let mut slots = Vec::new();
        let mut repeat_last = false;
        let mut chars = pattern.chars().peekable();
        while let Some(c) = chars.next() {
            if repeat_last {
                return Err(err("'+' may only follow the last token".into()));
            }
            let slot = match c {
                '9' => Slot::Class(ClassSet::Digits),
                'A' => Slot::Class(ClassSet::Uppercase),
                'a' => Slot::Class(ClassSet::Lowercase),
                '*' => Slot::Class(ClassSet::Any),
                '\\' => Slot::Literal(
                    chars
                        .next()
                        .ok_or_else(|| err("pattern ends with a lone backslash".into()))?,
                ),
                '[' => {
                    let mut body = Vec::new();
                    loop {
                        match chars.next() {
                            Some(']') => break,
                            Some('\\') => body.push((
                                chars.next().ok_or_else(|| err("unterminated set".into()))?,
                                true,
                            )),
                            Some(c) => body.push((c, false)),
                            None => return Err(err("unterminated set".into())),
                        }
                    }
                    Slot::Class(ClassSet::AnyOf(expand_set(&body).map_err(err)?))
                }
                '{' | '}' | '+' | ']' => {
                    return Err(err(format!("unexpected '{c}'")));
                }
                other => {
                    return Err(err(format!(
                        "bare symbol '{other}' (escape literals with a backslash)"
                    )))
                }
            };
            let mut count = 1;
            if chars.peek() == Some(&'{') {
                chars.next();
                let digits: String = chars.by_ref().take_while(|&d| d != '}').collect();
                count = digits
                    .parse()
                    .ok()
                    .filter(|&n: &usize| n > 0)
                    .ok_or_else(|| err(format!("bad repeat count '{{{digits}}}'")))?;
            }
            if chars.peek() == Some(&'+') {
                chars.next();
                repeat_last = true;
            }
            slots.extend(std::iter::repeat_n(slot, count));
        }
        if slots.is_empty() {
            return Err(err("empty pattern".into()));
        }
        let rule = FormatRule {
            id: id.to_owned(),
            slots,
            repeat_last,
        };
        rule.check(charset)?;
        Ok(rule)
    }

    /// Literals must be charset symbols and every class set must admit at
    /// least one.
    pub fn check(&self, charset: &Charset) -> Result<()> {
        for (i, slot) in self.slots.iter().enumerate() {
            let ok = match slot {
                Slot::Literal(c) => charset.contains(*c),
                Slot::Class(set) => charset.symbols().iter().any(|&c| set.allows(c)),
            };
            if !ok {
                return Err(Error::Rule {
                    rule: self.id.clone(),
                    reason: format!("slot {i} admits no charset symbol"),
                });
            }
        }
        Ok(())
    }

    /// `None` for variable-length rules.
    pub fn fixed_len(&self) -> Option<usize> {
        (!self.repeat_last).then_some(self.slots.len())
    }

    pub fn matches_len(&self, n: usize) -> bool {
        if self.repeat_last {
            n >= self.slots.len()
        } else {
            n == self.slots.len()
        }
    }

    pub fn slot(&self, position: usize) -> &Slot {
        &self.slots[position.min(self.slots.len() - 1)]
    }
}

/// Expands a set body of `(symbol, escaped)` pairs; an unescaped `-`
/// between two symbols denotes a range.
fn expand_set(body: &[(char, bool)]) -> std::result::Result<Vec<char>, String> {
    let mut out = Vec::new();
    let mut i = 0;
    while i < body.len() {
        if i + 2 < body.len() && body[i + 1] == ('-', false) {
            let (lo, hi) = (body[i].0, body[i + 2].0);
            if lo > hi {
                return Err(format!("empty range {lo}-{hi}"));
            }
            out.extend(lo..=hi);
            i += 3;
        } else {
            out.push(body[i].0);
            i += 1;
        }
    }
    if out.is_empty() {
        return Err("empty set".into());
    }
    out.sort_unstable();
    out.dedup();
    Ok(out)
}

/// Rules loaded from a `rules.toml` holding `[[rule]]` tables with `id` and
/// `pattern`.
#[derive(Debug, Clone, Default)]
pub struct RuleSet {
    rules: Vec<FormatRule>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RulesFile {
    #[serde(default)]
    rule: Vec<RuleEntry>,
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct RuleEntry {
    id: String,
    pattern: String,
}

impl RuleSet {
    pub fn parse(text: &str, charset: &Charset) -> Result<RuleSet> {
        let file: RulesFile =
            toml::from_str(text).map_err(|e| Error::Config(format!("rules: {}", e.message())))?;
        let mut seen = HashSet::new();
        let mut rules = Vec::new();
        for entry in file.rule {
            if !seen.insert(entry.id.clone()) {
                return Err(Error::Rule {
                    rule: entry.id,
                    reason: "defined twice".into(),
                });
            }
            rules.push(FormatRule::parse(&entry.id, &entry.pattern, charset)?);
        }
        Ok(RuleSet { rules })
    }

    pub fn load(path: &Path, charset: &Charset) -> Result<RuleSet> {
        Self::parse(&fs::read_to_string(path).at(path)?, charset)
    }

    pub fn get(&self, id: &str) -> Option<&FormatRule> {
        self.rules.iter().find(|r| r.id == id)
    }

    pub fn rules(&self) -> &[FormatRule] {
        &self.rules
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Correction {
    pub position: usize,
    pub from: char,
    pub to: char,
    pub rule: String,
}

/// Constrained decoding: each position takes the most probable symbol its
/// slot allows (ties to the lowest class id). Returns `None` with a warning
/// when the rule does not fit the number of characters.
pub fn apply_format_rule(
    probabilities: &[&[f32]],
    rule: &FormatRule,
    charset: &Charset,
) -> Option<(Vec<ClassId>, Vec<Correction>)> {
    if !rule.matches_len(probabilities.len()) {
        log::warn!(
            "rule '{}' expects {} characters, field has {}; not applied",
            rule.id,
            rule.fixed_len().map_or_else(
                || format!("at least {}", rule.slots.len()),
                |n| n.to_string()
            ),
            probabilities.len()
        );
        return None;
    }
    let symbols = charset.symbols();
    let mut out = Vec::with_capacity(probabilities.len());
    let mut corrections = Vec::new();
    for (position, probs) in probabilities.iter().enumerate() {
        let free = argmax_lowest(probs);
        let chosen = match rule.slot(position) {
            Slot::Literal(c) => charset.class_of(*c).expect("checked at parse time"),
            Slot::Class(set) => {
                let mut best: Option<(usize, f32)> = None;
                for (i, &p) in probs.iter().enumerate() {
                    if set.allows(symbols[i]) && best.is_none_or(|(_, bp)| p > bp) {
                        best = Some((i, p));
                    }
                }
                ClassId(best.expect("checked at parse time").0 as u16)
            }
        };
        if chosen != free {
            corrections.push(Correction {
                position,
                from: symbols[free.index()],
                to: symbols[chosen.index()],
                rule: rule.id.clone(),
            });
        }
        out.push(chosen);
    }
    Some((out, corrections))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecognizedChar {
    pub symbol: char,
    pub probability: f32,
    pub bbox: BBox,
}

/// `text` holds the recognized symbols with single spaces between strings;
/// `chars` has one entry per non-space symbol of `text`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldResult {
    pub text: String,
    pub chars: Vec<RecognizedChar>,
    pub corrections: Vec<Correction>,
    /// Id of a rule that was requested but did not fit.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rule_skipped: Option<String>,
}

/// Segments `field`, classifies every character patch and assembles the
/// string, then applies `rule` if given.
pub fn recognize_field(
    model: &Model,
    field: &GrayImage,
    rule: Option<&FormatRule>,
    params: &SegmentParams,
) -> Result<FieldResult> {
    let charset = Charset::default();
    model.check_charset(&charset.hash())?;
    let seg = segment_field(field, params)?;
    let mut probs = Vec::new();
    let mut boxes = Vec::new();
    // Number of characters after which a space follows.
    let mut breaks = Vec::new();
    for line in &seg.lines {
        for string in &line.strings {
            for ch in &string.chars {
                probs.push(model.forward(&ch.patch)?.probabilities);
                boxes.push(ch.bbox);
            }
            breaks.push(probs.len());
        }
    }
    breaks.pop();

    let free: Vec<ClassId> = probs.iter().map(|p| argmax_lowest(p)).collect();
    let (classes, corrections, rule_skipped) = match rule {
        None => (free, Vec::new(), None),
        Some(rule) => {
            let views: Vec<&[f32]> = probs.iter().map(Vec::as_slice).collect();
            match apply_format_rule(&views, rule, &charset) {
                Some((c, fixes)) => (c, fixes, None),
                None => (free, Vec::new(), Some(rule.id.clone())),
            }
        }
    };

    let symbols = charset.symbols();
    let mut text = String::new();
    let mut chars = Vec::with_capacity(classes.len());
    for (i, (&class, (p, bbox))) in classes.iter().zip(probs.iter().zip(boxes)).enumerate() {
        if breaks.contains(&i) {
            text.push(' ');
        }
        let symbol = symbols[class.index()];
        text.push(symbol);
        chars.push(RecognizedChar {
            symbol,
            probability: p[class.index()],
            bbox,
        });
    }
    Ok(FieldResult {
        text,
        chars,
        corrections,
        rule_skipped,
    })
}
