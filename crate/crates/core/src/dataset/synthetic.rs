//! Synthetic topic corpora.
//!
//! Users and items are assigned round-robin to `(topic, niche)` groups.
//! Item text mixes topic words, niche words and shared filler; a user
//! interacts with an item with a probability that depends only on whether
//! they share a niche, share a topic, or neither. Text therefore carries
//! exactly the signal needed to predict who interacts with a cold item.

use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;
use serde::{Deserialize, Serialize};

use super::graph::{InteractionGraph, ItemContent};
use crate::error::Result;
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TopicCorpusSpec {
    pub users: usize,
    pub items: usize,
    pub topics: usize,
    pub niches_per_topic: usize,
    pub p_niche: f64,
    pub p_topic: f64,
    pub p_cross: f64,
    pub topic_vocab: usize,
    pub niche_vocab: usize,
    pub filler_vocab: usize,
    pub topic_words_per_item: usize,
    pub niche_words_per_item: usize,
    pub filler_words_per_item: usize,
    pub seed: u64,
}

impl Default for TopicCorpusSpec {
    /// 200 users, 125 items (100 warm + 25 cold at the default cold fraction).
    fn default() -> Self {
        TopicCorpusSpec {
            users: 200,
            items: 125,
            topics: 2,
            niches_per_topic: 1,
            p_niche: 0.3,
            p_topic: 0.3,
            p_cross: 0.01,
            topic_vocab: 24,
            niche_vocab: 12,
            filler_vocab: 150,
            topic_words_per_item: 4,
            niche_words_per_item: 3,
            filler_words_per_item: 6,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct TopicCorpus {
    pub graph: InteractionGraph,
    pub content: ItemContent,
    /// Group index `topic * niches_per_topic + niche` per dense user.
    pub user_group: Vec<usize>,
    pub item_group: Vec<usize>,
    pub spec: TopicCorpusSpec,
}

impl TopicCorpus {
    pub fn topic_of_group(&self, group: usize) -> usize {
        group / self.spec.niches_per_topic.max(1)
    }
}

const SYLLABLES: [&str; 20] = [
    "ba", "ko", "ri", "mu", "te", "lan", "sor", "vi", "pe", "dra", "nu", "gal", "fi", "zo", "hem",
    "qua", "ty", "wen", "xo", "jul",
];

/// A readable pseudo-word, unique per `(class, index)`.
fn word(class: usize, index: usize) -> String {
    debug_assert!(index < 1000);
    let mut n = class * 1000 + index;
    let mut w = String::new();
    for _ in 0..4 {
        w.push_str(SYLLABLES[n % SYLLABLES.len()]);
        n /= SYLLABLES.len();
    }
    w
}

fn pool(class: usize, len: usize) -> Vec<String> {
    (0..len).map(|k| word(class, k)).collect()
}

pub fn topic_corpus(spec: &TopicCorpusSpec) -> Result<TopicCorpus> {
    let mut rng = seed::rng(spec.seed);
    let niches = spec.niches_per_topic.max(1);
    let groups = spec.topics * niches;

    // distinct word classes: 1..=topics for topic words, then niches, 0 filler
    let filler = pool(0, spec.filler_vocab);
    let topic_pools: Vec<Vec<String>> = (0..spec.topics)
        .map(|t| pool(1 + t, spec.topic_vocab))
        .collect();
    let niche_pools: Vec<Vec<String>> = (0..groups)
        .map(|g| pool(1 + spec.topics + g, spec.niche_vocab))
        .collect();

    let user_group: Vec<usize> = (0..spec.users).map(|u| u % groups).collect();
    let item_group: Vec<usize> = (0..spec.items).map(|i| i % groups).collect();

    let mut texts = Vec::with_capacity(spec.items);
    for &g in &item_group {
        let topic = g / niches;
        let mut words: Vec<&String> = Vec::new();
        for _ in 0..spec.topic_words_per_item {
            words.push(topic_pools[topic].choose(&mut rng).unwrap());
        }
        for _ in 0..spec.niche_words_per_item {
            words.push(niche_pools[g].choose(&mut rng).unwrap());
        }
        for _ in 0..spec.filler_words_per_item {
            words.push(filler.choose(&mut rng).unwrap());
        }
        words.shuffle(&mut rng);
        let mut text = words
            .iter()
            .map(|w| w.as_str())
            .collect::<Vec<_>>()
            .join(" ");
        if let Some(first) = text.get_mut(0..1) {
            first.make_ascii_uppercase();
        }
        texts.push(text);
    }

    let mut pairs = Vec::new();
    for u in 0..spec.users {
        let ug = user_group[u];
        let mut any = false;
        for i in 0..spec.items {
            let ig = item_group[i];
            let p = if ig == ug {
                spec.p_niche
            } else if ig / niches == ug / niches {
                spec.p_topic
            } else {
                spec.p_cross
            };
            if rng.random::<f64>() < p {
                pairs.push((u, i));
                any = true;
            }
        }
        if !any {
            let own: Vec<usize> = (0..spec.items).filter(|&i| item_group[i] == ug).collect();
            if let Some(&i) = own.choose(&mut rng) {
                pairs.push((u, i));
            }
        }
    }
    // every item needs at least one interaction to be loadable as interacted
    for i in 0..spec.items {
        if !pairs.iter().any(|&(_, j)| j == i) {
            let own: Vec<usize> = (0..spec.users)
                .filter(|&u| user_group[u] == item_group[i])
                .collect();
            if let Some(&u) = own.choose(&mut rng) {
                pairs.push((u, i));
            }
        }
    }
    let graph = InteractionGraph::from_pairs(
        (0..spec.users).map(|u| format!("u{u}")).collect(),
        (0..spec.items).map(|i| format!("i{i}")).collect(),
        pairs,
    )?;
    Ok(TopicCorpus {
        graph,
        content: ItemContent::new(texts),
        user_group,
        item_group,
        spec: spec.clone(),
    })
}
