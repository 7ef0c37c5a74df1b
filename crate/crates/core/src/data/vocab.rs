use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const PAD: usize = 0;
pub const START: usize = 1;
pub const END: usize = 2;
pub const UNK: usize = 3;
pub const SPECIALS: [&str; 4] = ["<pad>", "<start>", "<end>", "<unk>"];

pub const DEFAULT_MIN_COUNT: usize = 5;

/// Lowercases, strips ASCII punctuation and splits on whitespace.
pub fn tokenize(caption: &str) -> Vec<String> {
    caption
        .to_lowercase()
        .chars()
        .filter(|c| !c.is_ascii_punctuation())
        .collect::<String>()
        .split_whitespace()
        .map(str::to_owned)
        .collect()
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "VocabFile", into = "VocabFile")]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, usize>,
    min_count: usize,
}

#[derive(Serialize, Deserialize)]
struct VocabFile {
    min_count: usize,
    tokens: Vec<String>,
}

impl TryFrom<VocabFile> for Vocab {
    type Error = Error;

    fn try_from(f: VocabFile) -> Result<Self> {
        if f.tokens.len() < SPECIALS.len() || f.tokens[..4] != SPECIALS {
            return Err(Error::validation("vocabulary must start with the four special tokens"));
        }
        let index: HashMap<String, usize> = f.tokens.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();
        if index.len() != f.tokens.len() {
            return Err(Error::validation("vocabulary has duplicate tokens"));
        }
        Ok(Vocab {
            tokens: f.tokens,
            index,
            min_count: f.min_count,
        })
    }
}

impl From<Vocab> for VocabFile {
    fn from(v: Vocab) -> Self {
        VocabFile {
            min_count: v.min_count,
            tokens: v.tokens,
        }
    }
}

impl Vocab {
    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn min_count(&self) -> usize {
        self.min_count
    }

    pub fn id(&self, token: &str) -> usize {
        self.index.get(token).copied().unwrap_or(UNK)
    }

    pub fn get(&self, token: &str) -> Option<usize> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: usize) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn encode(&self, tokens: &[String]) -> Vec<usize> {
        tokens.iter().map(|t| self.id(t)).collect()
    }

    /// Joins ids back into text, dropping special tokens.
    pub fn decode(&self, ids: &[usize]) -> String {
        ids.iter()
            .filter(|&&i| i >= SPECIALS.len())
            .filter_map(|&i| self.token(i))
            .collect::<Vec<_>>()
            .join(" ")
    }
}

/// Assigns ids from 4 upward by descending frequency, ties alphabetical.
pub fn build_vocab<'a, I>(captions: I, min_count: usize) -> Result<Vocab>
where
    I: IntoIterator<Item = &'a [String]>,
{
    if min_count == 0 {
        return Err(Error::validation("min_count must be at least 1"));
    }
    let mut counts: BTreeMap<&str, usize> = BTreeMap::new();
    for caption in captions {
        for t in caption {
            *counts.entry(t.as_str()).or_default() += 1;
        }
    }
    let mut kept: Vec<(&str, usize)> = counts
        .into_iter()
        .filter(|(t, c)| *c >= min_count && !SPECIALS.contains(t))
        .collect();
    kept.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(b.0)));
    let tokens: Vec<String> = SPECIALS
        .iter()
        .map(|s| s.to_string())
        .chain(kept.into_iter().map(|(t, _)| t.to_owned()))
        .collect();
    Vocab::try_from(VocabFile { min_count, tokens })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn toks(s: &str) -> Vec<String> {
        s.split(' ').map(str::to_owned).collect()
    }

    #[test]
    fn tokenize_rules() {
        assert_eq!(tokenize("A man riding a horse."), toks("a man riding a horse"));
        assert!(tokenize("").is_empty());
        assert_eq!(tokenize("Hello,   WORLD!"), toks("hello world"));
    }

    #[test]
    fn min_count_filter() {
        let caps = [toks("a a a b")];
        let v = build_vocab(caps.iter().map(Vec::as_slice), 2).unwrap();
        assert_eq!(v.get("a"), Some(4));
        assert_eq!(v.get("b"), None);
        assert_eq!(v.id("b"), UNK);
        let v = build_vocab(caps.iter().map(Vec::as_slice), 1).unwrap();
        assert_eq!(v.len(), 6);
    }

    #[test]
    fn alphabetical_ties() {
        let caps = [toks("cat bat cat bat dog")];
        let v = build_vocab(caps.iter().map(Vec::as_slice), 1).unwrap();
        assert_eq!(v.get("bat"), Some(4));
        assert_eq!(v.get("cat"), Some(5));
        assert_eq!(v.get("dog"), Some(6));
    }

    #[test]
    fn json_round_trip() {
        let caps = [toks("x y y")];
        let v = build_vocab(caps.iter().map(Vec::as_slice), 1).unwrap();
        let text = serde_json::to_string(&v).unwrap();
        let back: Vocab = serde_json::from_str(&text).unwrap();
        assert_eq!(back, v);
        assert_eq!(back.decode(&[START, 4, 5, END]), "y x");
        assert!(serde_json::from_str::<Vocab>(r#"{"min_count":1,"tokens":["a"]}"#).is_err());
    }
}
