use std::cmp::Ordering;

use crate::distribution::UserDistribution;
use crate::error::{Error, Result};

fn rank_order(values: &[f64], a: usize, b: usize) -> Ordering {
    values[b].total_cmp(&values[a]).then(a.cmp(&b))
}

/// Indices of the `k` largest values, descending, ties by ascending index.
pub fn top_k_by_score(values: &[f64], k: usize) -> Vec<usize> {
    let k = k.min(values.len());
    if k == 0 {
        return Vec::new();
    }
    let mut idx: Vec<usize> = (0..values.len()).collect();
    if k < idx.len() {
        idx.select_nth_unstable_by(k - 1, |&a, &b| rank_order(values, a, b));
        idx.truncate(k);
    }
    idx.sort_unstable_by(|&a, &b| rank_order(values, a, b));
    idx
}

/// The `k` most probable users, most probable first.
pub fn top_k_users(dist: &UserDistribution, k: usize) -> Result<Vec<usize>> {
    if k == 0 || k > dist.n_users() {
        return Err(Error::Contract(format!(
            "K = {k} outside 1..={}",
            dist.n_users()
        )));
    }
    let probs = dist.probs();
    let values = probs.as_slice().expect("contiguous probabilities");
    Ok(top_k_by_score(values, k))
}
