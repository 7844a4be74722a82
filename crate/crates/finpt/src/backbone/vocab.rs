//! Corpus-built word vocabulary and whitespace tokenizer.
//!
//! Tokens are lowercased whitespace-separated words. Id 0 is the shared
//! end-of-sequence / padding token, id 1 the unknown token; corpus words
//! follow in sorted order so a vocabulary is a pure function of its corpus.

use std::collections::{BTreeSet, HashMap};

use super::TokenizedProfile;
use crate::{Error, Result};

pub const EOS_TOKEN: &str = "<eos>";
pub const UNK_TOKEN: &str = "<unk>";

/// Shared end-of-sequence and padding id.
pub const EOS_ID: u32 = 0;
/// Id assigned to words outside the vocabulary.
pub const UNK_ID: u32 = 1;

#[derive(Debug, Clone)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Builds a vocabulary from a text corpus: lowercase whitespace words,
    /// deduplicated and sorted, after the two reserved tokens.
    pub fn build<'a>(corpus: impl IntoIterator<Item = &'a str>) -> Self {
        let mut words = BTreeSet::new();
        for text in corpus {
            for w in text.to_lowercase().split_whitespace() {
                if w != EOS_TOKEN && w != UNK_TOKEN {
                    words.insert(w.to_string());
                }
            }
        }
        let mut tokens = vec![EOS_TOKEN.to_string(), UNK_TOKEN.to_string()];
        tokens.extend(words);
        Self::from_tokens_unchecked(tokens)
    }

    /// Rebuilds a vocabulary from a stored token list (checkpoint loading).
    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        if tokens.len() < 2 || tokens[0] != EOS_TOKEN || tokens[1] != UNK_TOKEN {
            return Err(Error::Tokenize(
                "vocabulary must start with the reserved <eos> and <unk> tokens".into(),
            ));
        }
        Ok(Self::from_tokens_unchecked(tokens))
    }

    fn from_tokens_unchecked(tokens: Vec<String>) -> Self {
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect();
        Self { tokens, index }
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn id_of(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Lowercases and whitespace-splits `text`, maps words through the
    /// vocabulary (unknown words to `<unk>`), truncates to `max_len`, and
    /// right-pads with the eos/pad id under mask 0.
    pub fn tokenize(&self, text: &str, max_len: usize) -> Result<TokenizedProfile> {
        if max_len == 0 {
            return Err(Error::Tokenize("max_len must be at least 1".into()));
        }
        let lowered = text.to_lowercase();
        let mut ids: Vec<u32> = lowered.split_whitespace().map(|w| self.id_of(w)).collect();
        if ids.is_empty() {
            return Err(Error::Tokenize("cannot tokenize empty text".into()));
        }
        ids.truncate(max_len);
        let real = ids.len();
        let mut mask = vec![1u8; real];
        ids.resize(max_len, EOS_ID);
        mask.resize(max_len, 0);
        TokenizedProfile::new(ids, mask)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn build_is_sorted_and_deterministic() {
        let v1 = Vocab::build(["The Age is 32.", "the gender is female."]);
        let v2 = Vocab::build(["the gender is female.", "The Age is 32."]);
        assert_eq!(v1.tokens(), v2.tokens());
        assert_eq!(v1.tokens()[0], EOS_TOKEN);
        assert_eq!(v1.tokens()[1], UNK_TOKEN);
        let mut sorted = v1.tokens()[2..].to_vec();
        sorted.sort();
        assert_eq!(&v1.tokens()[2..], sorted.as_slice());
    }

    #[test]
    fn tokenize_pads_and_masks() {
        let v = Vocab::build(["the age is 32."]);
        let tp = v.tokenize("The Age is 32.", 8).unwrap();
        assert_eq!(tp.len(), 8);
        assert_eq!(tp.real_len(), 4);
        assert_eq!(tp.mask(), &[1, 1, 1, 1, 0, 0, 0, 0]);
        assert!(tp.token_ids()[4..].iter().all(|&id| id == EOS_ID));
        assert!(tp.token_ids()[..4].iter().all(|&id| id >= 2), "all words known");
    }

    #[test]
    fn tokenize_truncates_long_text() {
        let v = Vocab::build(["w"]);
        let long = vec!["w"; 200].join(" ");
        let tp = v.tokenize(&long, 128).unwrap();
        assert_eq!(tp.len(), 128);
        assert_eq!(tp.real_len(), 128);
        assert!(tp.mask().iter().all(|&m| m == 1));
    }

    #[test]
    fn tokenize_is_deterministic_and_maps_unknowns() {
        let v = Vocab::build(["alpha beta"]);
        let a = v.tokenize("alpha beta gamma", 4).unwrap();
        let b = v.tokenize("alpha beta gamma", 4).unwrap();
        assert_eq!(a, b);
        assert_eq!(a.token_ids()[2], UNK_ID);
    }

    #[test]
    fn tokenize_rejects_empty_text() {
        let v = Vocab::build(["x"]);
        assert!(v.tokenize("", 4).is_err());
        assert!(v.tokenize("   ", 4).is_err());
    }
}
