//! Interaction/content ingestion, warm/cold splitting and tokenization.

mod graph;
mod split;
pub mod synthetic;
mod tokenizer;

pub use graph::{
    escape_text, load_graph, unescape_text, write_graph, InteractionGraph, ItemClass, ItemContent,
};
pub use split::{make_splits, Downgrade, SplitResult, SplitSpec};
pub use tokenizer::{normalize, TokenSequence, Tokenizer, TokenizerConfig, UNK_ID, UNK_TOKEN};
