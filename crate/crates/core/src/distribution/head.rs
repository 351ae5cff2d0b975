use ndarray::{Array1, ArrayView1};
use rand::seq::index;

use super::UserVocabulary;
use crate::cf::BehaviorEmbeddings;
use crate::dataset::InteractionGraph;
use crate::encoder::HiddenState;
use crate::error::{Error, Result};
use crate::numeric::{dot, logsumexp};
use crate::seed;

/// `p(u | c_i)` for every user.
#[derive(Debug, Clone, PartialEq)]
pub struct UserDistribution {
    probs: Array1<f64>,
}

impl UserDistribution {
    pub fn new(probs: Array1<f64>) -> Result<Self> {
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(Error::Validation("probability outside [0, 1]".into()));
        }
        let total = probs.sum();
        if (total - 1.0).abs() > 1e-6 {
            return Err(Error::Validation(format!("probabilities sum to {total}")));
        }
        Ok(UserDistribution { probs })
    }

    pub fn probs(&self) -> ArrayView1<'_, f64> {
        self.probs.view()
    }

    pub fn n_users(&self) -> usize {
        self.probs.len()
    }

    pub fn prob(&self, user: usize) -> f64 {
        self.probs[user]
    }
}

fn check_h(h: ArrayView1<'_, f64>, vocab: &UserVocabulary) -> Result<()> {
    if h.len() != vocab.dim() {
        return Err(Error::Contract(format!(
            "hidden dim {} != vocabulary dim {}",
            h.len(),
            vocab.dim()
        )));
    }
    if h.iter().any(|x| !x.is_finite()) {
        return Err(Error::Contract("hidden state is not finite".into()));
    }
    Ok(())
}

/// `h · z_uᵀ` for every user.
pub fn logits(h: ArrayView1<'_, f64>, vocab: &UserVocabulary) -> Array1<f64> {
    vocab.matrix().dot(&h)
}

pub fn predict_distribution(h: &HiddenState, vocab: &UserVocabulary) -> Result<UserDistribution> {
    check_h(h.view(), vocab)?;
    Ok(softmax(logits(h.view(), vocab)))
}

/// Max-subtracted softmax of finite logits.
pub fn softmax(mut l: Array1<f64>) -> UserDistribution {
    let m = l.fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    l.mapv_inplace(|x| (x - m).exp());
    let z = l.sum();
    l /= z;
    UserDistribution { probs: l }
}

fn check_sets(positives: &[usize], negatives: &[usize], n_users: usize) -> Result<()> {
    if positives.is_empty() {
        return Err(Error::Contract("distribution loss needs at least one positive user".into()));
    }
    let mut seen = vec![false; n_users];
    for &u in positives.iter().chain(negatives) {
        if u >= n_users {
            return Err(Error::Contract(format!("user {u} outside vocabulary of {n_users}")));
        }
        if seen[u] {
            return Err(Error::Contract(format!(
                "user {u} repeated or in both positives and negatives"
            )));
        }
        seen[u] = true;
    }
    Ok(())
}

/// Sampled log-softmax loss for one item.
///
/// The normaliser runs over `positives ∪ negatives`; the loss is the mean
/// over positives of `−log softmax`.
pub fn distribution_loss(
    h: &HiddenState,
    positives: &[usize],
    negatives: &[usize],
    vocab: &UserVocabulary,
) -> Result<f64> {
    check_h(h.view(), vocab)?;
    check_sets(positives, negatives, vocab.n_users())?;
    let score = |u: &usize| dot(h.view(), vocab.row(*u));
    let lse = logsumexp(positives.iter().chain(negatives).map(score));
    let mean_pos = positives.iter().map(score).sum::<f64>() / positives.len() as f64;
    Ok(lse - mean_pos)
}

/// Gradient of [`distribution_loss`]: the loss, `∂/∂h`, and `∂/∂z_u` for
/// each user in the sampled set, in `positives ++ negatives` order.
#[derive(Debug, Clone)]
pub struct DistributionGrad {
    pub loss: f64,
    pub dh: Array1<f64>,
    pub rows: Vec<(usize, Array1<f64>)>,
}

pub fn distribution_loss_grad(
    h: &HiddenState,
    positives: &[usize],
    negatives: &[usize],
    vocab: &UserVocabulary,
) -> Result<DistributionGrad> {
    check_h(h.view(), vocab)?;
    check_sets(positives, negatives, vocab.n_users())?;
    let users: Vec<usize> = positives.iter().chain(negatives).copied().collect();
    let scores: Vec<f64> = users.iter().map(|&u| dot(h.view(), vocab.row(u))).collect();
    let lse = logsumexp(scores.iter().copied());
    let inv_p = 1.0 / positives.len() as f64;
    let mean_pos = scores[..positives.len()].iter().sum::<f64>() * inv_p;
    let mut dh = Array1::zeros(h.dim());
    let mut rows = Vec::with_capacity(users.len());
    for (k, (&u, &s)) in users.iter().zip(&scores).enumerate() {
        let mut g = (s - lse).exp();
        if k < positives.len() {
            g -= inv_p;
        }
        dh.scaled_add(g, &vocab.row(u));
        rows.push((u, h.0.mapv(|x| g * x)));
    }
    Ok(DistributionGrad {
        loss: lse - mean_pos,
        dh,
        rows,
    })
}

/// Full-softmax form: `−(1/|U_i|) · log_softmax(h Zᵀ) · yᵀ`.
pub fn distribution_loss_vectorized(
    h: &HiddenState,
    y: ArrayView1<'_, f64>,
    vocab: &UserVocabulary,
) -> Result<f64> {
    check_h(h.view(), vocab)?;
    if y.len() != vocab.n_users() {
        return Err(Error::Contract(format!(
            "multi-hot length {} != {} users",
            y.len(),
            vocab.n_users()
        )));
    }
    let count = y.iter().filter(|&&v| v != 0.0).count();
    if count == 0 {
        return Err(Error::Contract("multi-hot vector has no positives".into()));
    }
    let l = logits(h.view(), vocab);
    let lse = logsumexp(l.iter().copied());
    let picked: f64 = l.iter().zip(y.iter()).map(|(s, yv)| yv * (s - lse)).sum();
    Ok(-picked / count as f64)
}

fn behaviour_row<'a>(
    graph: &InteractionGraph,
    item: usize,
    behavior: &'a BehaviorEmbeddings,
) -> Result<ArrayView1<'a, f64>> {
    if item >= graph.n_items() {
        return Err(Error::Contract(format!("unknown item {item}")));
    }
    let slot = graph.warm_slot(item).ok_or_else(|| {
        Error::Contract(format!(
            "item {} is cold and has no behaviour row",
            graph.item_ids()[item]
        ))
    })?;
    Ok(behavior.items.row(slot))
}

/// `‖h − e_i‖²` against the warm item's behaviour row.
pub fn guiding_loss(
    h: &HiddenState,
    graph: &InteractionGraph,
    item: usize,
    behavior: &BehaviorEmbeddings,
) -> Result<f64> {
    let e = behaviour_row(graph, item, behavior)?;
    guiding_loss_row(h.view(), e)
}

/// Loss and `∂/∂h`.
pub fn guiding_loss_grad(
    h: &HiddenState,
    graph: &InteractionGraph,
    item: usize,
    behavior: &BehaviorEmbeddings,
) -> Result<(f64, Array1<f64>)> {
    let e = behaviour_row(graph, item, behavior)?;
    let diff = &h.0 - &e;
    Ok((diff.dot(&diff), diff * 2.0))
}

pub fn guiding_loss_row(h: ArrayView1<'_, f64>, e: ArrayView1<'_, f64>) -> Result<f64> {
    if h.len() != e.len() {
        return Err(Error::Contract(format!("dim {} != {}", h.len(), e.len())));
    }
    Ok(h.iter().zip(e.iter()).map(|(a, b)| (a - b) * (a - b)).sum())
}

pub fn total_loss(distrib: f64, guiding: f64, lambda: f64) -> f64 {
    distrib + lambda * guiding
}

/// Users not in `U_i`, ascending.
pub fn complement(graph: &InteractionGraph, item: usize) -> Vec<usize> {
    let pos = graph.item_users(item);
    let mut out = Vec::with_capacity(graph.n_users() - pos.len());
    let mut p = pos.iter().peekable();
    for u in 0..graph.n_users() {
        if p.peek() == Some(&&u) {
            p.next();
        } else {
            out.push(u);
        }
    }
    out
}

/// `count` users drawn uniformly without replacement from `U \ U_i`,
/// returned ascending.
pub fn sample_negatives(graph: &InteractionGraph, item: usize, count: usize, seed_value: u64) -> Result<Vec<usize>> {
    let mut rng = seed::rng(seed_value);
    sample_negatives_with(graph, item, count, &mut rng)
}

pub fn sample_negatives_with(
    graph: &InteractionGraph,
    item: usize,
    count: usize,
    rng: &mut seed::Rng,
) -> Result<Vec<usize>> {
    if item >= graph.n_items() {
        return Err(Error::Contract(format!("unknown item {item}")));
    }
    let pool = complement(graph, item);
    if count > pool.len() {
        return Err(Error::Contract(format!(
            "asked for {count} negatives but only {} non-interactors exist",
            pool.len()
        )));
    }
    let mut picked: Vec<usize> = index::sample(rng, pool.len(), count)
        .into_iter()
        .map(|k| pool[k])
        .collect();
    picked.sort_unstable();
    Ok(picked)
}
