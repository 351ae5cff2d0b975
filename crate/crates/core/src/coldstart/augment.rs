use std::collections::HashSet;
use std::fmt::Write as _;

use super::topk::top_k_users;
use crate::dataset::{InteractionGraph, ItemClass, ItemContent, Tokenizer};
use crate::distribution::{predict_distribution, UserVocabulary};
use crate::encoder::{build_prompt, EncoderModel};
use crate::error::{Error, Result};

/// One sampled `(user, cold item)` pair with its rank (1-based) and
/// predicted probability.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SyntheticPair {
    pub user: usize,
    pub item: usize,
    pub rank: usize,
    pub prob: f64,
}

/// `Ĥ`: the top-K users of every processed cold item, ordered by item then
/// rank.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct AugmentedInteractions {
    pub k: usize,
    pairs: Vec<SyntheticPair>,
    /// Cold items with no content, left out of `pairs`.
    pub skipped: Vec<usize>,
}

/// Decimal rendering with 8 significant digits.
pub fn format_prob(p: f64) -> String {
    if p == 0.0 || !p.is_finite() {
        return format!("{p}");
    }
    let magnitude = p.abs().log10().floor() as i32;
    let decimals = (7 - magnitude).max(0) as usize;
    format!("{p:.decimals$}")
}

impl AugmentedInteractions {
    pub fn new(k: usize, mut pairs: Vec<SyntheticPair>, skipped: Vec<usize>) -> Result<Self> {
        pairs.sort_by_key(|p| (p.item, p.rank));
        let mut seen = HashSet::new();
        for p in &pairs {
            if !seen.insert((p.user, p.item)) {
                return Err(Error::Validation(format!(
                    "duplicate synthetic pair ({}, {})",
                    p.user, p.item
                )));
            }
        }
        Ok(AugmentedInteractions { k, pairs, skipped })
    }

    pub fn pairs(&self) -> &[SyntheticPair] {
        &self.pairs
    }

    pub fn len(&self) -> usize {
        self.pairs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.pairs.is_empty()
    }

    pub fn edges(&self) -> impl Iterator<Item = (usize, usize)> + '_ {
        self.pairs.iter().map(|p| (p.user, p.item))
    }

    /// `user_id<TAB>item_id<TAB>rank<TAB>prob` lines with original ids.
    pub fn to_tsv(&self, graph: &InteractionGraph) -> String {
        let mut out = String::new();
        for p in &self.pairs {
            writeln!(
                out,
                "{}\t{}\t{}\t{}",
                graph.user_ids()[p.user],
                graph.item_ids()[p.item],
                p.rank,
                format_prob(p.prob)
            )
            .unwrap();
        }
        out
    }

    /// Reads [`to_tsv`](Self::to_tsv) output back; lines starting with `#`
    /// are ignored.
    pub fn from_tsv(text: &str, graph: &InteractionGraph, k: usize, file: &str) -> Result<Self> {
        let mut pairs = Vec::new();
        for (n, line) in text.lines().enumerate() {
            if line.starts_with('#') || line.trim().is_empty() {
                continue;
            }
            let bad = |message: String| Error::Parse {
                file: file.to_string(),
                line: n + 1,
                message,
            };
            let cols: Vec<&str> = line.split('\t').collect();
            if cols.len() != 4 {
                return Err(bad(format!("expected 4 columns, found {}", cols.len())));
            }
            let user = graph
                .user_index(cols[0])
                .ok_or_else(|| bad(format!("unknown user {}", cols[0])))?;
            let item = graph
                .item_index(cols[1])
                .ok_or_else(|| bad(format!("unknown item {}", cols[1])))?;
            if graph.class(item) != ItemClass::Cold {
                return Err(bad(format!("item {} is not cold", cols[1])));
            }
            let rank = cols[2].parse().map_err(|e| bad(format!("rank: {e}")))?;
            let prob = cols[3].parse().map_err(|e| bad(format!("prob: {e}")))?;
            pairs.push(SyntheticPair { user, item, rank, prob });
        }
        Self::new(k, pairs, Vec::new())
    }
}

/// One forward pass per cold item; each contributes its top-`k` users
/// (all users when `|U| < k`).
pub fn generate_interactions(
    graph: &InteractionGraph,
    cold_items: &[usize],
    content: &ItemContent,
    tokenizer: &Tokenizer,
    encoder: &EncoderModel,
    vocab: &UserVocabulary,
    k: usize,
) -> Result<AugmentedInteractions> {
    if k == 0 {
        return Err(Error::Contract("K must be at least 1".into()));
    }
    let mut items = cold_items.to_vec();
    items.sort_unstable();
    items.dedup();
    let take = k.min(vocab.n_users());
    let mut pairs = Vec::with_capacity(items.len() * take);
    let mut skipped = Vec::new();
    for item in items {
        if item >= graph.n_items() || graph.class(item) != ItemClass::Cold {
            return Err(Error::Contract(format!("item {item} is not a cold item")));
        }
        let Some(text) = content.get(item) else {
            log::warn!("cold item {} has no content; skipped", graph.item_ids()[item]);
            skipped.push(item);
            continue;
        };
        let prompt = build_prompt(tokenizer, text)?;
        let h = encoder.encode(&prompt)?;
        let dist = predict_distribution(&h, vocab)?;
        for (r, user) in top_k_users(&dist, take)?.into_iter().enumerate() {
            pairs.push(SyntheticPair {
                user,
                item,
                rank: r + 1,
                prob: dist.prob(user),
            });
        }
    }
    AugmentedInteractions::new(k, pairs, skipped)
}
