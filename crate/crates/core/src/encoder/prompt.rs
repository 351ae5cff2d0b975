use crate::dataset::{TokenSequence, Tokenizer};
use crate::error::Result;

/// Text placed before the item content.
pub const PROMPT_PREFIX: &str =
    "Assuming you are a recommendation expert. An item has the following content";
/// Text placed after the item content.
pub const PROMPT_SUFFIX: &str = ", please predict potential users for this item.";

/// Prompt `PROMPT_PREFIX <content> PROMPT_SUFFIX`, tokenized. Only the
/// content slot is truncated; empty content becomes a single `[UNK]`.
pub fn build_prompt(tokenizer: &Tokenizer, content: &str) -> Result<TokenSequence> {
    let prefix = tokenizer.ids(PROMPT_PREFIX);
    let suffix = tokenizer.ids(PROMPT_SUFFIX);
    let slot = tokenizer.ids(content);
    tokenizer.compose(&prefix, &slot, &suffix)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{TokenizerConfig, UNK_ID};

    fn tok() -> Tokenizer {
        Tokenizer::build(
            ["deep nets", "deep trees"],
            &[PROMPT_PREFIX, PROMPT_SUFFIX],
            &TokenizerConfig::default(),
        )
    }

    #[test]
    fn identical_content_identical_prompt() {
        let t = tok();
        assert_eq!(build_prompt(&t, "deep nets").unwrap(), build_prompt(&t, "deep nets").unwrap());
    }

    #[test]
    fn empty_content_gets_unk_slot() {
        let t = tok();
        let p = build_prompt(&t, "").unwrap();
        let prefix = t.ids(PROMPT_PREFIX);
        assert_eq!(p.ids()[prefix.len()], UNK_ID);
        assert_eq!(p.len(), prefix.len() + 1 + t.ids(PROMPT_SUFFIX).len());
        assert!(p.empty_input);
        // template words are all known
        assert!(prefix.iter().all(|&i| i != UNK_ID));
    }
}
