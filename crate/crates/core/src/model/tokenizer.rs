//! Word-level toy tokenizer.
//!
//! Tokens are whitespace-separated words, exactly as they appear in
//! prompts and targets (punctuation stays attached; the metric suite has
//! its own tokenizer). `<image>` markers are positional, not lexical, and
//! are skipped. Task tokens get dedicated entries so the router's signal
//! is a single vocabulary id.

use std::collections::{BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::codec::TaskToken;
use crate::error::{Error, Result};

pub const PAD_TOKEN: &str = "<pad>";
pub const UNK_TOKEN: &str = "<unk>";
pub const EOS_TOKEN: &str = "<eos>";
const IMAGE_MARKER: &str = "<image>";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Vocab {
    names: Vec<String>,
    #[serde(skip)]
    index: HashMap<String, u32>,
}

impl Vocab {
    /// Collect every word of the corpus (sorted, deduplicated) behind the
    /// specials and task tokens. Fails if the result exceeds `capacity`.
    pub fn build<'a>(corpus: impl Iterator<Item = &'a str>, capacity: usize) -> Result<Self> {
        let mut names: Vec<String> = vec![
            PAD_TOKEN.to_string(),
            UNK_TOKEN.to_string(),
            EOS_TOKEN.to_string(),
        ];
        names.extend(TaskToken::ALL.iter().map(|t| t.as_str().to_string()));
        let reserved: BTreeSet<String> = names.iter().cloned().collect();
        let mut words = BTreeSet::new();
        for text in corpus {
            for w in words_of(text) {
                if !reserved.contains(w) {
                    words.insert(w.to_string());
                }
            }
        }
        names.extend(words);
        if names.len() > capacity {
            return Err(Error::Config(format!(
                "corpus needs {} vocabulary entries but capacity is {capacity}",
                names.len()
            )));
        }
        Ok(Vocab::from_names(names))
    }

    pub fn from_names(names: Vec<String>) -> Self {
        let index = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), i as u32))
            .collect();
        Vocab { names, index }
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn unk_id(&self) -> u32 {
        self.index[UNK_TOKEN]
    }

    pub fn eos_id(&self) -> u32 {
        self.index[EOS_TOKEN]
    }

    pub fn id(&self, word: &str) -> Option<u32> {
        self.index.get(word).copied()
    }

    pub fn encode(&self, text: &str) -> Vec<u32> {
        words_of(text)
            .map(|w| self.id(w).unwrap_or_else(|| self.unk_id()))
            .collect()
    }

    pub fn decode(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&id| {
                self.names
                    .get(id as usize)
                    .map(String::as_str)
                    .unwrap_or(UNK_TOKEN)
            })
            .collect::<Vec<_>>()
            .join(" ")
    }
}

fn words_of(text: &str) -> impl Iterator<Item = &str> {
    text.split_whitespace().filter(|w| *w != IMAGE_MARKER)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn task_tokens_are_single_entries() {
        let v = Vocab::build(["hello world"].into_iter(), 64).unwrap();
        for t in TaskToken::ALL {
            let ids = v.encode(t.as_str());
            assert_eq!(ids.len(), 1);
            assert_ne!(ids[0], v.unk_id());
        }
    }

    #[test]
    fn image_markers_are_skipped() {
        let v = Vocab::build(["a b"].into_iter(), 64).unwrap();
        let ids = v.encode("<image> <image>\n[VQA] a b");
        assert_eq!(ids.len(), 3); // [VQA], a, b
    }

    #[test]
    fn round_trip_known_words() {
        let v = Vocab::build(["the gray tank sits"].into_iter(), 64).unwrap();
        let ids = v.encode("the tank sits");
        assert_eq!(v.decode(&ids), "the tank sits");
    }

    #[test]
    fn unknown_words_become_unk() {
        let v = Vocab::build(["a"].into_iter(), 64).unwrap();
        let ids = v.encode("zebra");
        assert_eq!(ids, vec![v.unk_id()]);
    }

    #[test]
    fn capacity_is_enforced() {
        assert!(Vocab::build(["a b c d e f"].into_iter(), 12).is_err());
        assert!(Vocab::build(["a b"].into_iter(), 12).is_ok());
    }

    #[test]
    fn build_is_order_insensitive() {
        let a = Vocab::build(["b a", "c"].into_iter(), 64).unwrap();
        let b = Vocab::build(["c", "a b"].into_iter(), 64).unwrap();
        assert_eq!(a.names(), b.names());
    }
}
