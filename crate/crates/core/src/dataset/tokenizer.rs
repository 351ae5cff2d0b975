use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub const UNK_ID: u32 = 0;
pub const UNK_TOKEN: &str = "<unk>";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TokenizerConfig {
    pub min_count: usize,
    pub max_vocab: usize,
    pub max_len: usize,
}

impl Default for TokenizerConfig {
    fn default() -> Self {
        TokenizerConfig {
            min_count: 2,
            max_vocab: 50_000,
            max_len: 128,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TokenSequence {
    ids: Vec<u32>,
    pub truncated: bool,
    /// The input normalised to nothing and was replaced by `[UNK]`.
    pub empty_input: bool,
}

impl TokenSequence {
    pub fn new(ids: Vec<u32>) -> Result<Self> {
        if ids.is_empty() {
            return Err(Error::Contract("token sequence must be non-empty".into()));
        }
        Ok(TokenSequence {
            ids,
            truncated: false,
            empty_input: false,
        })
    }

    pub fn ids(&self) -> &[u32] {
        &self.ids
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }
}

/// Lower-cases and splits on anything that is not alphanumeric.
pub fn normalize(text: &str) -> Vec<String> {
    text.split(|c: char| !c.is_alphanumeric())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Whitespace/punctuation word tokenizer with a frequency-cutoff vocabulary.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(from = "TokenizerRepr", into = "TokenizerRepr")]
pub struct Tokenizer {
    words: Vec<String>,
    max_len: usize,
    index: HashMap<String, u32>,
}

#[derive(Serialize, Deserialize)]
struct TokenizerRepr {
    words: Vec<String>,
    max_len: usize,
}

impl From<TokenizerRepr> for Tokenizer {
    fn from(r: TokenizerRepr) -> Self {
        Tokenizer::from_words(r.words, r.max_len)
    }
}

impl From<Tokenizer> for TokenizerRepr {
    fn from(t: Tokenizer) -> Self {
        TokenizerRepr {
            words: t.words,
            max_len: t.max_len,
        }
    }
}

impl Tokenizer {
    /// `reserved` words (prompt templates) always enter the vocabulary, right
    /// after `<unk>`; corpus words follow by descending count, ties
    /// lexicographic.
    pub fn build<'a>(
        corpus: impl IntoIterator<Item = &'a str>,
        reserved: &[&str],
        config: &TokenizerConfig,
    ) -> Self {
        let mut counts: HashMap<String, usize> = HashMap::new();
        for doc in corpus {
            for w in normalize(doc) {
                *counts.entry(w).or_default() += 1;
            }
        }
        let mut words = vec![UNK_TOKEN.to_string()];
        let mut seen: std::collections::HashSet<String> = Default::default();
        for r in reserved {
            for w in normalize(r) {
                if seen.insert(w.clone()) {
                    words.push(w);
                }
            }
        }
        let mut ranked: Vec<(String, usize)> = counts
            .into_iter()
            .filter(|(w, c)| *c >= config.min_count && !seen.contains(w))
            .collect();
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
        let room = config.max_vocab.saturating_sub(words.len());
        words.extend(ranked.into_iter().take(room).map(|(w, _)| w));
        Self::from_words(words, config.max_len)
    }

    pub fn from_words(words: Vec<String>, max_len: usize) -> Self {
        let index = words
            .iter()
            .enumerate()
            .map(|(k, w)| (w.clone(), k as u32))
            .collect();
        Tokenizer {
            words,
            max_len,
            index,
        }
    }

    pub fn vocab_size(&self) -> usize {
        self.words.len()
    }

    pub fn max_len(&self) -> usize {
        self.max_len
    }

    pub fn words(&self) -> &[String] {
        &self.words
    }

    pub fn id(&self, word: &str) -> u32 {
        self.index.get(word).copied().unwrap_or(UNK_ID)
    }

    /// Ids for `text` without the length cap or the empty-input rule.
    pub fn ids(&self, text: &str) -> Vec<u32> {
        normalize(text).iter().map(|w| self.id(w)).collect()
    }

    pub fn tokenize(&self, text: &str) -> TokenSequence {
        let mut ids = self.ids(text);
        let empty_input = ids.is_empty();
        if empty_input {
            log::warn!("empty text tokenized to [UNK]");
            ids.push(UNK_ID);
        }
        let truncated = ids.len() > self.max_len;
        ids.truncate(self.max_len);
        TokenSequence {
            ids,
            truncated,
            empty_input,
        }
    }

    pub fn detokenize(&self, ids: &[u32]) -> String {
        ids.iter()
            .map(|&i| self.words.get(i as usize).map(String::as_str).unwrap_or(UNK_TOKEN))
            .collect::<Vec<_>>()
            .join(" ")
    }

    /// Assembles a sequence from pre-tokenized pieces, truncating only the
    /// `slot` piece so that the fixed template text survives intact.
    pub fn compose(&self, prefix: &[u32], slot: &[u32], suffix: &[u32]) -> Result<TokenSequence> {
        let fixed = prefix.len() + suffix.len();
        let (slot, empty_input) = if slot.is_empty() {
            (&[UNK_ID][..], true)
        } else {
            (slot, false)
        };
        if fixed + 1 > self.max_len {
            return Err(Error::Config(format!(
                "template of {fixed} tokens does not fit max_len {}",
                self.max_len
            )));
        }
        let room = self.max_len - fixed;
        let truncated = slot.len() > room;
        let mut ids = Vec::with_capacity(fixed + slot.len().min(room));
        ids.extend_from_slice(prefix);
        ids.extend_from_slice(&slot[..slot.len().min(room)]);
        ids.extend_from_slice(suffix);
        Ok(TokenSequence {
            ids,
            truncated,
            empty_input,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small() -> Tokenizer {
        Tokenizer::build(
            ["the cat sat", "the dog sat", "a bird"],
            &[],
            &TokenizerConfig {
                max_len: 4,
                ..Default::default()
            },
        )
    }

    #[test]
    fn empty_text_is_unk() {
        let t = small();
        let s = t.tokenize("");
        assert_eq!(s.ids(), &[UNK_ID]);
        assert!(s.empty_input);
        assert_eq!(t.tokenize("  ,.; ").ids(), &[UNK_ID]);
    }

    #[test]
    fn frequency_cutoff_and_unk() {
        let t = small();
        // "cat", "dog", "a", "bird" appear once
        assert_eq!(t.vocab_size(), 3);
        assert_eq!(t.tokenize("The CAT sat!").ids(), &[t.id("the"), UNK_ID, t.id("sat")]);
    }

    #[test]
    fn truncation_is_recorded() {
        let t = small();
        let s = t.tokenize("the the the the the sat");
        assert_eq!(s.len(), 4);
        assert!(s.truncated);
        assert!(!t.tokenize("the sat").truncated);
    }

    #[test]
    fn reserved_words_survive_cutoff() {
        let t = Tokenizer::build(["x y"], &["predict users"], &TokenizerConfig::default());
        assert_ne!(t.id("predict"), UNK_ID);
        assert_ne!(t.id("users"), UNK_ID);
    }

    #[test]
    fn vocab_cap() {
        let t = Tokenizer::build(
            ["a a b b c c d d"],
            &[],
            &TokenizerConfig {
                max_vocab: 3,
                ..Default::default()
            },
        );
        assert_eq!(t.words(), &["<unk>", "a", "b"]);
    }

    #[test]
    fn compose_truncates_the_slot_only() {
        let t = small();
        let p = [1u32];
        let s = [2u32];
        let seq = t.compose(&p, &[3, 3, 3, 3], &s).unwrap();
        assert_eq!(seq.ids(), &[1, 3, 3, 2]);
        assert!(seq.truncated);
        let seq = t.compose(&p, &[], &s).unwrap();
        assert_eq!(seq.ids(), &[1, UNK_ID, 2]);
    }
}
