use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;

use crate::error::{Error, Result};

/// Coarse part-of-speech tag. Only nouns and adjectives are localized.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Pos {
    Noun,
    Adjective,
    Other,
}

impl fmt::Display for Pos {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Pos::Noun => "NOUN",
            Pos::Adjective => "ADJ",
            Pos::Other => "OTHER",
        })
    }
}

impl FromStr for Pos {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "NOUN" => Ok(Pos::Noun),
            "ADJ" => Ok(Pos::Adjective),
            "OTHER" => Ok(Pos::Other),
            other => Err(Error::Contract(format!("unknown POS tag `{other}`"))),
        }
    }
}

/// A tagged word of an answer option.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TaggedWord {
    pub word: usize,
    pub pos: Pos,
}

/// A question token with its POS tag and question bin (1..=4).
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Token {
    pub word: usize,
    pub pos: Pos,
    pub bin: u8,
}

#[derive(Clone, Debug, PartialEq)]
pub struct QaSample {
    pub id: usize,
    pub image: usize,
    /// Question template, used to group accuracy.
    pub template: String,
    pub tokens: Vec<Token>,
    pub options: Vec<Vec<TaggedWord>>,
    pub correct: usize,
    /// Region ids of the image, in attention order.
    pub regions: Vec<usize>,
    /// Region carrying the queried concept, when known.
    pub relevant: Option<usize>,
}

impl QaSample {
    pub fn validate(&self) -> Result<()> {
        if self.options.is_empty() || self.correct >= self.options.len() {
            return Err(Error::Contract(format!(
                "sample {}: correct index {} out of {} options",
                self.id,
                self.correct,
                self.options.len()
            )));
        }
        if self.options.iter().any(Vec::is_empty) {
            return Err(Error::Contract(format!("sample {}: empty answer option", self.id)));
        }
        if self.regions.is_empty() {
            return Err(Error::Contract(format!("sample {}: no regions", self.id)));
        }
        if let Some(t) = self.tokens.iter().find(|t| !(1..=4).contains(&t.bin)) {
            return Err(Error::Contract(format!(
                "sample {}: bin {} outside 1..=4",
                self.id, t.bin
            )));
        }
        Ok(())
    }
}

/// Mentioned nouns and adjectives, each deduplicated and sorted.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Mentions {
    pub nouns: Vec<usize>,
    pub adjectives: Vec<usize>,
}

impl Mentions {
    fn from_words(words: impl Iterator<Item = (usize, Pos)>) -> Self {
        let mut n = BTreeSet::new();
        let mut j = BTreeSet::new();
        for (w, pos) in words {
            match pos {
                Pos::Noun => {
                    n.insert(w);
                }
                Pos::Adjective => {
                    j.insert(w);
                }
                Pos::Other => {}
            }
        }
        Mentions {
            nouns: n.into_iter().collect(),
            adjectives: j.into_iter().collect(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.nouns.is_empty() && self.adjectives.is_empty()
    }
}

/// Nouns and adjectives of the question together with one answer option.
pub fn extract_mentions(qa: &QaSample, option: usize) -> Mentions {
    let q = qa.tokens.iter().map(|t| (t.word, t.pos));
    let a = qa.options[option].iter().map(|t| (t.word, t.pos));
    Mentions::from_words(q.chain(a))
}

/// Nouns and adjectives of the question alone.
pub fn question_mentions(qa: &QaSample) -> Mentions {
    Mentions::from_words(qa.tokens.iter().map(|t| (t.word, t.pos)))
}

/// Nouns and adjectives of one answer option alone.
pub fn answer_mentions(qa: &QaSample, option: usize) -> Mentions {
    Mentions::from_words(qa.options[option].iter().map(|t| (t.word, t.pos)))
}

/// Positional bin rule used when no parser is available: leading
/// non-noun/adjective tokens go to bin 1, the first noun to bin 2, later
/// nouns to bin 3 and everything else to bin 4.
pub fn fallback_bins(pos: &[Pos]) -> Vec<u8> {
    let lead = pos
        .iter()
        .take_while(|p| **p == Pos::Other)
        .count();
    let mut seen_noun = false;
    pos.iter()
        .enumerate()
        .map(|(i, p)| {
            if i < lead {
                1
            } else if *p == Pos::Noun {
                if seen_noun {
                    3
                } else {
                    seen_noun = true;
                    2
                }
            } else {
                4
            }
        })
        .collect()
}
