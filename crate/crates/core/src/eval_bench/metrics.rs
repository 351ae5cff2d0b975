use std::collections::HashSet;
use std::fmt::Write as _;

use crate::cf::normal_matrix;
use crate::coldstart::{top_k_by_score, Scorer};
use crate::dataset::{InteractionGraph, ItemClass};
use crate::error::{Error, Result};
use crate::numeric::dot;
use crate::seed;

/// `|top-K ∩ relevant| / |relevant|`; `None` when nothing is relevant.
pub fn recall_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let hits = ranked.iter().take(k).filter(|i| relevant.contains(i)).count();
    Some(hits as f64 / relevant.len() as f64)
}

/// Binary-gain NDCG with a `log2(rank + 1)` discount.
pub fn ndcg_at_k(ranked: &[usize], relevant: &HashSet<usize>, k: usize) -> Option<f64> {
    if relevant.is_empty() {
        return None;
    }
    let dcg: f64 = ranked
        .iter()
        .take(k)
        .enumerate()
        .filter(|(_, i)| relevant.contains(i))
        .map(|(r, _)| 1.0 / ((r + 2) as f64).log2())
        .sum();
    let idcg: f64 = (0..relevant.len().min(k)).map(|r| 1.0 / ((r + 2) as f64).log2()).sum();
    Some(dcg / idcg)
}

#[derive(Debug, Clone, PartialEq)]
pub struct SplitMetrics {
    pub split: &'static str,
    pub recall: f64,
    pub ndcg: f64,
    /// Users with at least one test item in the split.
    pub users: usize,
    /// Users without test items, left out of the averages.
    pub skipped_users: usize,
    pub items: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub k: usize,
    pub splits: Vec<SplitMetrics>,
}

impl MetricReport {
    pub fn split(&self, name: &str) -> Option<&SplitMetrics> {
        self.splits.iter().find(|s| s.split == name)
    }

    pub fn cold_recall(&self) -> f64 {
        self.split("cold").map(|s| s.recall).unwrap_or(0.0)
    }

    /// One `key=value` per line.
    pub fn to_kv(&self) -> String {
        let mut s = format!("k={}\n", self.k);
        for m in &self.splits {
            writeln!(s, "{}.recall@{}={:.8}", m.split, self.k, m.recall).unwrap();
            writeln!(s, "{}.ndcg@{}={:.8}", m.split, self.k, m.ndcg).unwrap();
            writeln!(s, "{}.users={}", m.split, m.users).unwrap();
            writeln!(s, "{}.skipped_users={}", m.split, m.skipped_users).unwrap();
            writeln!(s, "{}.items={}", m.split, m.items).unwrap();
        }
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from("split\tk\trecall\tndcg\tusers\tskipped_users\titems\n");
        for m in &self.splits {
            writeln!(
                s,
                "{}\t{}\t{:.8}\t{:.8}\t{}\t{}\t{}",
                m.split, self.k, m.recall, m.ndcg, m.users, m.skipped_users, m.items
            )
            .unwrap();
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let mut s = format!(
            "{:<8} {:>10} {:>10} {:>7} {:>7}\n",
            "split",
            format!("recall@{}", self.k),
            format!("ndcg@{}", self.k),
            "users",
            "items"
        );
        for m in &self.splits {
            writeln!(
                s,
                "{:<8} {:>10.4} {:>10.4} {:>7} {:>7}",
                m.split, m.recall, m.ndcg, m.users, m.items
            )
            .unwrap();
        }
        s
    }
}

/// The user's top-`k` items of `universe`, training interactions removed.
pub fn rank_candidates(
    scorer: &Scorer,
    train: &InteractionGraph,
    universe: &[usize],
    user: usize,
    k: usize,
) -> Vec<usize> {
    let seen = train.user_items(user);
    let candidates: Vec<usize> = universe
        .iter()
        .copied()
        .filter(|i| seen.binary_search(i).is_err())
        .collect();
    let scores: Vec<f64> = candidates
        .iter()
        .map(|&i| dot(scorer.user_row(user), scorer.item_row(i)))
        .collect();
    top_k_by_score(&scores, k).into_iter().map(|c| candidates[c]).collect()
}

fn split_metrics(
    name: &'static str,
    scorer: &Scorer,
    train: &InteractionGraph,
    universe: &[usize],
    test: &[(usize, usize)],
    k: usize,
) -> SplitMetrics {
    let in_universe: HashSet<usize> = universe.iter().copied().collect();
    let mut relevant: Vec<HashSet<usize>> = vec![HashSet::new(); train.n_users()];
    for &(u, i) in test {
        if in_universe.contains(&i) {
            relevant[u].insert(i);
        }
    }
    let (mut recall, mut ndcg, mut users) = (0.0, 0.0, 0usize);
    for (u, rel) in relevant.iter().enumerate() {
        if rel.is_empty() {
            continue;
        }
        let ranked = rank_candidates(scorer, train, universe, u, k);
        recall += recall_at_k(&ranked, rel, k).expect("nonempty");
        ndcg += ndcg_at_k(&ranked, rel, k).expect("nonempty");
        users += 1;
    }
    let n = users.max(1) as f64;
    SplitMetrics {
        split: name,
        recall: recall / n,
        ndcg: ndcg / n,
        users,
        skipped_users: train.n_users() - users,
        items: universe.len(),
    }
}

/// Recall@K and NDCG@K for the overall, warm and cold splits.
///
/// `train` supplies the item classes and the interactions masked out of
/// every ranking. Cold candidates are cold items, warm candidates warm
/// items, overall candidates all items.
pub fn evaluate(
    scorer: &Scorer,
    train: &InteractionGraph,
    warm_test: &[(usize, usize)],
    cold_test: &[(usize, usize)],
    k: usize,
) -> Result<MetricReport> {
    if k == 0 {
        return Err(Error::Contract("K must be at least 1".into()));
    }
    if scorer.n_users() != train.n_users() || scorer.n_items() != train.n_items() {
        return Err(Error::Contract("scorer does not match the training graph".into()));
    }
    for &(u, i) in warm_test.iter().chain(cold_test) {
        if u >= train.n_users() || i >= train.n_items() {
            return Err(Error::Contract(format!("test pair ({u}, {i}) out of range")));
        }
    }
    for &(_, i) in warm_test {
        if train.class(i) != ItemClass::Warm {
            return Err(Error::Contract(format!("warm test pair on cold item {i}")));
        }
    }
    for &(_, i) in cold_test {
        if train.class(i) != ItemClass::Cold {
            return Err(Error::Contract(format!("cold test pair on warm item {i}")));
        }
    }
    let all: Vec<usize> = (0..train.n_items()).collect();
    let both: Vec<(usize, usize)> = warm_test.iter().chain(cold_test).copied().collect();
    Ok(MetricReport {
        k,
        splits: vec![
            split_metrics("overall", scorer, train, &all, &both, k),
            split_metrics("warm", scorer, train, train.warm_items(), warm_test, k),
            split_metrics("cold", scorer, train, train.cold_items(), cold_test, k),
        ],
    })
}

/// `scorer` with every cold row replaced by a seeded normal draw; users and
/// warm items keep their rows.
pub fn random_control(scorer: &Scorer, std: f64, seed_value: u64) -> Scorer {
    let mut out = scorer.clone();
    let mut rng = seed::rng(seed_value);
    let rows = out.cold_rows_mut();
    let (n, d) = rows.dim();
    *rows = normal_matrix(n, d, std, &mut rng);
    out
}
