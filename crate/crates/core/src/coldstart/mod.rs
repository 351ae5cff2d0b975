//! From predicted distributions to synthetic interactions, refined cold
//! item embeddings, and scores.

mod augment;
mod refine;
mod topk;

pub use augment::{format_prob, generate_interactions, AugmentedInteractions, SyntheticPair};
pub use refine::{recommend, refine_embeddings, RefineMode, RefinedEmbeddings, Scorer};
pub use topk::{top_k_by_score, top_k_users};

#[cfg(test)]
mod tests;
