//! Word-level vocabulary with reserved specials.

use crate::{Error, Result};
use std::collections::HashMap;
use std::path::Path;

pub const BOS: &str = "<s>";
pub const EOS: &str = "</s>";
pub const MASK: &str = "<mask>";
pub const PAD: &str = "<pad>";

/// Token-string to id map. Specials occupy the first four ids; multi-word
/// marker strings are stored as single entries.
#[derive(Debug, Clone, PartialEq)]
pub struct Vocab {
    tokens: Vec<String>,
    index: HashMap<String, u32>,
}

impl Vocab {
    pub const BOS_ID: u32 = 0;
    pub const EOS_ID: u32 = 1;
    pub const MASK_ID: u32 = 2;
    pub const PAD_ID: u32 = 3;

    fn with_specials() -> Self {
        let mut v = Self { tokens: Vec::new(), index: HashMap::new() };
        for s in [BOS, EOS, MASK, PAD] {
            v.push(s);
        }
        v
    }

    fn push(&mut self, token: &str) -> u32 {
        if let Some(&id) = self.index.get(token) {
            return id;
        }
        let id = self.tokens.len() as u32;
        self.tokens.push(token.to_string());
        self.index.insert(token.to_string(), id);
        id
    }

    /// Build from a word iterator; words are deduplicated and sorted so the
    /// vocabulary is independent of corpus order.
    pub fn from_words<I: IntoIterator<Item = String>>(words: I) -> Self {
        let mut v = Self::with_specials();
        let mut uniq: Vec<String> = words.into_iter().collect();
        uniq.sort();
        uniq.dedup();
        for w in uniq {
            v.push(&w);
        }
        v
    }

    /// Register an extra entry (e.g. a multi-word marker) and return its id.
    pub fn add_token(&mut self, token: &str) -> u32 {
        self.push(token)
    }

    pub fn id(&self, token: &str) -> Option<u32> {
        self.index.get(token).copied()
    }

    pub fn token(&self, id: u32) -> Option<&str> {
        self.tokens.get(id as usize).map(|s| s.as_str())
    }

    pub fn size(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_special(id: u32) -> bool {
        id < 4
    }

    /// Lowercased whitespace word split.
    pub fn words(text: &str) -> Vec<String> {
        text.split_whitespace().map(|w| w.to_lowercase()).collect()
    }

    /// Encode words, erroring on out-of-vocabulary input.
    pub fn encode(&self, words: &[String]) -> Result<Vec<u32>> {
        words
            .iter()
            .map(|w| {
                self.id(w)
                    .ok_or_else(|| Error::Data(format!("word {w:?} not in vocabulary")))
            })
            .collect()
    }

    /// One token per line, specials first.
    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.tokens.join("\n") + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut tokens: Vec<String> = text.lines().map(|l| l.to_string()).collect();
        while tokens.last().is_some_and(|t| t.is_empty()) {
            tokens.pop();
        }
        if tokens.len() < 4 || tokens[0] != BOS || tokens[1] != EOS || tokens[2] != MASK || tokens[3] != PAD
        {
            return Err(Error::Data(format!(
                "{}: vocabulary file must start with the four specials",
                path.display()
            )));
        }
        let index = tokens
            .iter()
            .enumerate()
            .map(|(i, t)| (t.clone(), i as u32))
            .collect::<HashMap<_, _>>();
        if index.len() != tokens.len() {
            return Err(Error::Data(format!("{}: duplicate vocabulary entry", path.display())));
        }
        Ok(Self { tokens, index })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn specials_have_fixed_distinct_ids() {
        let v = Vocab::from_words(["hello".to_string(), "world".to_string()]);
        assert_eq!(v.id(BOS), Some(0));
        assert_eq!(v.id(EOS), Some(1));
        assert_eq!(v.id(MASK), Some(2));
        assert_eq!(v.id(PAD), Some(3));
        assert_eq!(v.size(), 6);
    }

    #[test]
    fn multi_word_marker_is_one_entry() {
        let mut v = Vocab::from_words(["for".to_string(), "example".to_string()]);
        let id = v.add_token("for example");
        assert_ne!(Some(id), v.id("for"));
        assert_eq!(v.token(id), Some("for example"));
        // Re-adding returns the same id.
        assert_eq!(v.add_token("for example"), id);
    }

    #[test]
    fn file_round_trip() {
        let mut v = Vocab::from_words(["b".to_string(), "a".to_string()]);
        v.add_token("if then");
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("vocab.txt");
        v.save(&path).unwrap();
        assert_eq!(Vocab::load(&path).unwrap(), v);
    }

    #[test]
    fn encode_rejects_unknown_words() {
        let v = Vocab::from_words(["known".to_string()]);
        assert!(v.encode(&["unknown".to_string()]).is_err());
    }
}
