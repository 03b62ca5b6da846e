//! Lower-casing word-level tokenizer.
//!
//! Text is split on whitespace, then each chunk into runs of alphanumeric
//! characters and single punctuation marks. The vocabulary always starts with
//! the special tokens and the two view words.

use std::collections::HashMap;

use crate::error::{Error, Result};

pub const UNK: &str = "[UNK]";
pub const CLS: &str = "[CLS]";
pub const SEP: &str = "[SEP]";
pub const VIEW_WORDS: [&str; 2] = ["explicit", "implicit"];

const RESERVED: [&str; 5] = [UNK, CLS, SEP, VIEW_WORDS[0], VIEW_WORDS[1]];

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Tokenizer {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

pub fn pre_tokenize(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    for chunk in text.split_whitespace() {
        let mut word = String::new();
        for c in chunk.chars().flat_map(char::to_lowercase) {
            if c.is_alphanumeric() {
                word.push(c);
            } else {
                if !word.is_empty() {
                    out.push(std::mem::take(&mut word));
                }
                out.push(c.to_string());
            }
        }
        if !word.is_empty() {
            out.push(word);
        }
    }
    out
}

impl Tokenizer {
    /// Builds a vocabulary from `texts`, most frequent words first (ties in
    /// lexical order), capped at `max_size` entries including the reserved ones.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>, max_size: Option<usize>) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for text in texts {
            for word in pre_tokenize(text) {
                *counts.entry(word).or_default() += 1;
            }
        }
        let mut words: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, _)| !RESERVED.contains(&w.as_str()))
            .collect();
        words.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = max_size.map_or(usize::MAX, |m| m.saturating_sub(RESERVED.len()));
        let tokens = RESERVED
            .iter()
            .map(|s| s.to_string())
            .chain(words.into_iter().take(room).map(|(w, _)| w))
            .collect();
        Self::from_tokens(tokens).expect("reserved tokens are present and unique")
    }

    pub fn from_tokens(tokens: Vec<String>) -> Result<Self> {
        let mut index = HashMap::with_capacity(tokens.len());
        for (i, t) in tokens.iter().enumerate() {
            if index.insert(t.clone(), i as u32).is_some() {
                return Err(Error::Checkpoint(format!("duplicate vocabulary entry {t:?}")));
            }
        }
        for r in RESERVED {
            if !index.contains_key(r) {
                return Err(Error::Checkpoint(format!("vocabulary lacks reserved token {r:?}")));
            }
        }
        Ok(Self { tokens, index })
    }

    pub fn tokens(&self) -> &[String] {
        &self.tokens
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    /// Id of `token`, or of `[UNK]` when it is out of vocabulary.
    pub fn id(&self, token: &str) -> u32 {
        self.index
            .get(token)
            .or_else(|| self.index.get(UNK))
            .copied()
            .expect("[UNK] is always present")
    }

    pub fn token(&self, id: u32) -> &str {
        &self.tokens[id as usize]
    }

    pub fn encode_words(&self, text: &str) -> Vec<u32> {
        pre_tokenize(text).iter().map(|w| self.id(w)).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn splits_punctuation_and_lowercases() {
        assert_eq!(
            pre_tokenize("Sophie responds, \"I am too tired.\""),
            ["sophie", "responds", ",", "\"", "i", "am", "too", "tired", ".", "\""]
        );
    }

    #[test]
    fn vocabulary_order_and_unknowns() {
        let tok = Tokenizer::build(["b a b", "c b a"], None);
        assert_eq!(&tok.tokens()[..5], &RESERVED.map(String::from));
        assert_eq!(&tok.tokens()[5..], ["b", "a", "c"]);
        assert_eq!(tok.encode_words("A z"), vec![tok.id("a"), tok.id(UNK)]);

        let capped = Tokenizer::build(["b a b", "c b a"], Some(6));
        assert_eq!(capped.len(), 6);
        assert_eq!(capped.id("a"), capped.id(UNK));
    }

    #[test]
    fn rejects_broken_vocabularies() {
        assert!(Tokenizer::from_tokens(vec!["x".into()]).is_err());
        let mut dup: Vec<String> = RESERVED.map(String::from).to_vec();
        dup.push("[CLS]".into());
        assert!(Tokenizer::from_tokens(dup).is_err());
    }
}
