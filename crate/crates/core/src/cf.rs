//! Collaborative-filtering backbone: behaviour embeddings trained with the
//! item-oriented BPR objective, optional light graph propagation, and the
//! copy that seeds the user vocabulary.

use ndarray::{Array2, ArrayView1, Axis};
use rand::seq::SliceRandom;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::dataset::{InteractionGraph, ItemClass};
use crate::distribution::UserVocabulary;
use crate::error::{Error, Result};
use crate::numeric::{checksum, dot, sigmoid, softplus};
use crate::seed;

pub const MAX_PROPAGATION_LAYERS: usize = 4;

/// `E_u` (|U|×d) and `E_i` (one row per item of the owning bipartite graph).
#[derive(Debug, Clone, PartialEq)]
pub struct BehaviorEmbeddings {
    pub users: Array2<f64>,
    pub items: Array2<f64>,
}

impl BehaviorEmbeddings {
    pub fn new(users: Array2<f64>, items: Array2<f64>) -> Result<Self> {
        if users.ncols() != items.ncols() {
            return Err(Error::Validation(format!(
                "user dim {} != item dim {}",
                users.ncols(),
                items.ncols()
            )));
        }
        Ok(BehaviorEmbeddings { users, items })
    }

    pub fn random(n_users: usize, n_items: usize, dim: usize, std: f64, rng: &mut seed::Rng) -> Self {
        BehaviorEmbeddings {
            users: normal_matrix(n_users, dim, std, rng),
            items: normal_matrix(n_items, dim, std, rng),
        }
    }

    pub fn dim(&self) -> usize {
        self.users.ncols()
    }

    pub fn is_finite(&self) -> bool {
        self.users.iter().chain(self.items.iter()).all(|x| x.is_finite())
    }

    pub fn checksum(&self) -> String {
        checksum(self.users.iter().chain(self.items.iter()))
    }

    pub fn zeros_like(&self) -> Self {
        BehaviorEmbeddings {
            users: Array2::zeros(self.users.raw_dim()),
            items: Array2::zeros(self.items.raw_dim()),
        }
    }
}

pub fn normal_matrix(rows: usize, cols: usize, std: f64, rng: &mut seed::Rng) -> Array2<f64> {
    if std == 0.0 {
        return Array2::zeros((rows, cols));
    }
    let normal = Normal::new(0.0, std).expect("finite std");
    Array2::from_shape_simple_fn((rows, cols), || normal.sample(rng))
}

/// User–item bipartite adjacency with symmetric `1/sqrt(|N_u| |N_i|)` weights.
///
/// Item rows are whatever the caller chose: warm slots for behaviour
/// training, dense item ids for refinement.
#[derive(Debug, Clone)]
pub struct Bipartite {
    n_users: usize,
    n_items: usize,
    edges: Vec<(usize, usize)>,
    user_adj: Vec<Vec<(usize, f64)>>,
    item_adj: Vec<Vec<(usize, f64)>>,
}

impl Bipartite {
    pub fn new(n_users: usize, n_items: usize, edges: impl IntoIterator<Item = (usize, usize)>) -> Self {
        let mut edges: Vec<(usize, usize)> = edges.into_iter().collect();
        edges.sort_unstable();
        edges.dedup();
        let mut du = vec![0usize; n_users];
        let mut di = vec![0usize; n_items];
        for &(u, i) in &edges {
            du[u] += 1;
            di[i] += 1;
        }
        let mut user_adj = vec![Vec::new(); n_users];
        let mut item_adj = vec![Vec::new(); n_items];
        for &(u, i) in &edges {
            let w = 1.0 / ((du[u] * di[i]) as f64).sqrt();
            user_adj[u].push((i, w));
            item_adj[i].push((u, w));
        }
        Bipartite {
            n_users,
            n_items,
            edges,
            user_adj,
            item_adj,
        }
    }

    /// Training interactions of `graph`, item rows indexed by warm slot.
    pub fn warm(graph: &InteractionGraph) -> Self {
        let edges = graph
            .interactions()
            .iter()
            .filter_map(|&(u, i)| graph.warm_slot(i).map(|r| (u, r)));
        Self::new(graph.n_users(), graph.n_warm(), edges)
    }

    pub fn n_users(&self) -> usize {
        self.n_users
    }

    pub fn n_items(&self) -> usize {
        self.n_items
    }

    pub fn edges(&self) -> &[(usize, usize)] {
        &self.edges
    }

    pub fn item_users(&self, item: usize) -> impl Iterator<Item = usize> + '_ {
        self.item_adj[item].iter().map(|&(u, _)| u)
    }

    pub fn item_degree(&self, item: usize) -> usize {
        self.item_adj[item].len()
    }

    pub fn user_degree(&self, user: usize) -> usize {
        self.user_adj[user].len()
    }

    pub fn has_edge(&self, user: usize, item: usize) -> bool {
        self.user_adj[user].iter().any(|&(i, _)| i == item)
    }

    /// One propagation step: `E_u' = Â E_i`, `E_i' = Âᵀ E_u`.
    pub fn layer(&self, emb: &BehaviorEmbeddings) -> BehaviorEmbeddings {
        let d = emb.dim();
        let mut users = Array2::zeros((self.n_users, d));
        let mut items = Array2::zeros((self.n_items, d));
        for (u, adj) in self.user_adj.iter().enumerate() {
            let mut row = users.row_mut(u);
            for &(i, w) in adj {
                row.scaled_add(w, &emb.items.row(i));
            }
        }
        for (i, adj) in self.item_adj.iter().enumerate() {
            let mut row = items.row_mut(i);
            for &(u, w) in adj {
                row.scaled_add(w, &emb.users.row(u));
            }
        }
        BehaviorEmbeddings { users, items }
    }
}

/// Mean of the layer outputs `0..=layers`. Linear and self-adjoint, so the
/// same call maps a gradient on propagated rows back to the base rows.
pub fn propagate(emb: &BehaviorEmbeddings, graph: &Bipartite, layers: usize) -> BehaviorEmbeddings {
    if layers == 0 {
        return emb.clone();
    }
    let mut acc = emb.clone();
    let mut cur = emb.clone();
    for _ in 0..layers {
        cur = graph.layer(&cur);
        acc.users += &cur.users;
        acc.items += &cur.items;
    }
    let scale = 1.0 / (layers as f64 + 1.0);
    acc.users *= scale;
    acc.items *= scale;
    acc
}

/// [`propagate`] over the training interactions of `graph`.
pub fn propagate_on(emb: &BehaviorEmbeddings, graph: &InteractionGraph, layers: usize) -> BehaviorEmbeddings {
    propagate(emb, &Bipartite::warm(graph), layers)
}

/// Inner product of the propagated user row and warm item row.
pub fn cf_score(
    emb: &BehaviorEmbeddings,
    graph: &InteractionGraph,
    user: usize,
    item: usize,
    layers: usize,
) -> Result<f64> {
    if user >= graph.n_users() {
        return Err(Error::Contract(format!("unknown user {user}")));
    }
    let row = match graph.classes().get(item) {
        Some(ItemClass::Warm) => graph.warm_slot(item).expect("warm slot"),
        Some(ItemClass::Cold) => {
            return Err(Error::Contract(format!(
                "item {} is cold and has no behaviour row",
                graph.item_ids()[item]
            )))
        }
        None => return Err(Error::Contract(format!("unknown item {item}"))),
    };
    let p = propagate_on(emb, graph, layers);
    Ok(dot(p.users.row(user), p.items.row(row)))
}

/// `(item row i, positive user u ∈ U_i, negative user v ∉ U_i)`
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BprTriple {
    pub item: usize,
    pub pos: usize,
    pub neg: usize,
}

fn check_triples(graph: &Bipartite, batch: &[BprTriple]) -> Result<()> {
    for t in batch {
        if t.item >= graph.n_items || t.pos >= graph.n_users || t.neg >= graph.n_users {
            return Err(Error::Contract(format!("triple {t:?} out of range")));
        }
        if !graph.has_edge(t.pos, t.item) || graph.has_edge(t.neg, t.item) {
            return Err(Error::Contract(format!(
                "triple {t:?} violates u ∈ U_i, v ∉ U_i"
            )));
        }
    }
    Ok(())
}

fn margin(scoring: &BehaviorEmbeddings, t: &BprTriple) -> f64 {
    let item = scoring.items.row(t.item);
    dot(scoring.users.row(t.pos), item) - dot(scoring.users.row(t.neg), item)
}

/// `−Σ ln σ(ŷ_ui − ŷ_vi)` over the batch, scored on `scoring` rows.
pub fn item_bpr_loss(scoring: &BehaviorEmbeddings, graph: &Bipartite, batch: &[BprTriple]) -> Result<f64> {
    check_triples(graph, batch)?;
    Ok(batch.iter().map(|t| softplus(-margin(scoring, t))).sum())
}

/// Loss and its gradient with respect to the `scoring` rows.
pub fn item_bpr_loss_grad(
    scoring: &BehaviorEmbeddings,
    graph: &Bipartite,
    batch: &[BprTriple],
) -> Result<(f64, BehaviorEmbeddings)> {
    check_triples(graph, batch)?;
    let mut grad = scoring.zeros_like();
    let mut loss = 0.0;
    for t in batch {
        let m = margin(scoring, t);
        loss += softplus(-m);
        // d/dm softplus(-m) = -σ(-m)
        let g = -sigmoid(-m);
        let item = scoring.items.row(t.item);
        grad.users.row_mut(t.pos).scaled_add(g, &item);
        grad.users.row_mut(t.neg).scaled_add(-g, &item);
        let diff = &scoring.users.row(t.pos) - &scoring.users.row(t.neg);
        grad.items.row_mut(t.item).scaled_add(g, &diff);
    }
    Ok((loss, grad))
}

/// `(user u, positive item i ∈ I_u, negative item j ∉ I_u)`; the
/// user-oriented ablation objective.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct UserBprTriple {
    pub user: usize,
    pub pos: usize,
    pub neg: usize,
}

pub fn user_bpr_loss_grad(
    scoring: &BehaviorEmbeddings,
    graph: &Bipartite,
    batch: &[UserBprTriple],
) -> Result<(f64, BehaviorEmbeddings)> {
    let mut grad = scoring.zeros_like();
    let mut loss = 0.0;
    for t in batch {
        if !graph.has_edge(t.user, t.pos) || graph.has_edge(t.user, t.neg) {
            return Err(Error::Contract(format!(
                "triple {t:?} violates i ∈ I_u, j ∉ I_u"
            )));
        }
        let u = scoring.users.row(t.user);
        let m = dot(u, scoring.items.row(t.pos)) - dot(u, scoring.items.row(t.neg));
        loss += softplus(-m);
        let g = -sigmoid(-m);
        let diff = &scoring.items.row(t.pos) - &scoring.items.row(t.neg);
        grad.users.row_mut(t.user).scaled_add(g, &diff);
        grad.items.row_mut(t.pos).scaled_add(g, &u);
        grad.items.row_mut(t.neg).scaled_add(-g, &u);
    }
    Ok((loss, grad))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CfObjective {
    ItemOriented,
    UserOriented,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CfConfig {
    pub dim: usize,
    pub propagation_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub negatives_per_positive: usize,
    pub batch_size: usize,
    /// L2 penalty on the base rows touched by a batch.
    pub l2: f64,
    pub init_std: f64,
    pub objective: CfObjective,
    pub seed: u64,
}

impl Default for CfConfig {
    fn default() -> Self {
        CfConfig {
            dim: 200,
            propagation_layers: 2,
            learning_rate: 0.05,
            epochs: 200,
            negatives_per_positive: 1,
            batch_size: 256,
            l2: 1e-4,
            init_std: 0.1,
            objective: CfObjective::ItemOriented,
            seed: 0,
        }
    }
}

impl CfConfig {
    pub fn validate(&self) -> Result<()> {
        if self.dim == 0 {
            return Err(Error::Config("cf.dim must be positive".into()));
        }
        if self.propagation_layers > MAX_PROPAGATION_LAYERS {
            return Err(Error::Config(format!(
                "cf.propagation_layers must be ≤ {MAX_PROPAGATION_LAYERS}"
            )));
        }
        if self.negatives_per_positive == 0 {
            return Err(Error::Config("cf.negatives_per_positive must be ≥ 1".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("cf.batch_size must be ≥ 1".into()));
        }
        if !(self.learning_rate >= 0.0) || !(self.l2 >= 0.0) || !(self.init_std >= 0.0) {
            return Err(Error::Config("cf rates must be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CfReport {
    /// Mean per-triple loss on a fixed probe batch before and after training.
    pub probe_loss_start: f64,
    pub probe_loss_end: f64,
    pub epoch_losses: Vec<f64>,
}

/// Rows excluded from updates.
#[derive(Debug, Clone, Default)]
pub struct FrozenRows {
    pub users: bool,
    pub items: Vec<bool>,
}

fn sample_item_triples(graph: &Bipartite, positives: &[(usize, usize)], negs: usize, rng: &mut seed::Rng) -> Vec<BprTriple> {
    let mut out = Vec::with_capacity(positives.len() * negs);
    for &(u, i) in positives {
        if graph.item_degree(i) >= graph.n_users {
            continue;
        }
        for _ in 0..negs {
            let v = loop {
                let v = rng.random_range(0..graph.n_users);
                if !graph.has_edge(v, i) {
                    break v;
                }
            };
            out.push(BprTriple { item: i, pos: u, neg: v });
        }
    }
    out
}

fn sample_user_triples(graph: &Bipartite, positives: &[(usize, usize)], negs: usize, rng: &mut seed::Rng) -> Vec<UserBprTriple> {
    let mut out = Vec::with_capacity(positives.len() * negs);
    for &(u, i) in positives {
        if graph.user_degree(u) >= graph.n_items {
            continue;
        }
        for _ in 0..negs {
            let j = loop {
                let j = rng.random_range(0..graph.n_items);
                if !graph.has_edge(u, j) {
                    break j;
                }
            };
            out.push(UserBprTriple { user: u, pos: i, neg: j });
        }
    }
    out
}

const PROBE_TRIPLES: usize = 256;

fn probe_loss(emb: &BehaviorEmbeddings, graph: &Bipartite, layers: usize, probe: &[BprTriple]) -> f64 {
    if probe.is_empty() {
        return 0.0;
    }
    let scoring = propagate(emb, graph, layers);
    probe.iter().map(|t| softplus(-margin(&scoring, t))).sum::<f64>() / probe.len() as f64
}

/// Trains behaviour embeddings for the warm items of `graph` from a
/// seeded normal initialisation.
pub fn train_cf(graph: &InteractionGraph, config: &CfConfig) -> Result<(BehaviorEmbeddings, CfReport)> {
    config.validate()?;
    let bip = Bipartite::warm(graph);
    if bip.edges().is_empty() {
        return Err(Error::Contract("graph has no warm training interactions".into()));
    }
    let mut rng = seed::rng(seed::derive_seed(config.seed, "cf/init"));
    let init = BehaviorEmbeddings::random(bip.n_users(), bip.n_items(), config.dim, config.init_std, &mut rng);
    fit_bpr(&bip, init, config, &FrozenRows::default())
}

/// Plain SGD on the configured BPR objective starting from `init`.
pub fn fit_bpr(
    graph: &Bipartite,
    init: BehaviorEmbeddings,
    config: &CfConfig,
    frozen: &FrozenRows,
) -> Result<(BehaviorEmbeddings, CfReport)> {
    config.validate()?;
    if init.users.nrows() != graph.n_users() || init.items.nrows() != graph.n_items() {
        return Err(Error::Contract(format!(
            "embedding rows {}×{} do not match graph {}×{}",
            init.users.nrows(),
            init.items.nrows(),
            graph.n_users(),
            graph.n_items()
        )));
    }
    let layers = config.propagation_layers;
    let mut emb = init;
    let mut probe_rng = seed::rng(seed::derive_seed(config.seed, "cf/probe"));
    let mut probe_pos: Vec<(usize, usize)> = graph.edges().to_vec();
    probe_pos.shuffle(&mut probe_rng);
    probe_pos.truncate(PROBE_TRIPLES);
    let probe = sample_item_triples(graph, &probe_pos, 1, &mut probe_rng);
    let probe_loss_start = probe_loss(&emb, graph, layers, &probe);

    let mut rng = seed::rng(seed::derive_seed(config.seed, "cf/epochs"));
    let mut epoch_losses = Vec::with_capacity(config.epochs);
    let mut positives = graph.edges().to_vec();
    for epoch in 0..config.epochs {
        positives.shuffle(&mut rng);
        let mut epoch_loss = 0.0;
        let mut count = 0usize;
        match config.objective {
            CfObjective::ItemOriented => {
                let triples = sample_item_triples(graph, &positives, config.negatives_per_positive, &mut rng);
                for chunk in triples.chunks(config.batch_size) {
                    let scoring = propagate(&emb, graph, layers);
                    let (loss, grad) = item_bpr_loss_grad(&scoring, graph, chunk)?;
                    let touched_users = chunk.iter().flat_map(|t| [t.pos, t.neg]);
                    let touched_items = chunk.iter().map(|t| t.item);
                    sgd_step(&mut emb, grad, graph, config, frozen, touched_users, touched_items);
                    epoch_loss += loss;
                    count += chunk.len();
                }
            }
            CfObjective::UserOriented => {
                let triples = sample_user_triples(graph, &positives, config.negatives_per_positive, &mut rng);
                for chunk in triples.chunks(config.batch_size) {
                    let scoring = propagate(&emb, graph, layers);
                    let (loss, grad) = user_bpr_loss_grad(&scoring, graph, chunk)?;
                    let touched_users = chunk.iter().map(|t| t.user);
                    let touched_items = chunk.iter().flat_map(|t| [t.pos, t.neg]);
                    sgd_step(&mut emb, grad, graph, config, frozen, touched_users, touched_items);
                    epoch_loss += loss;
                    count += chunk.len();
                }
            }
        }
        let mean = if count > 0 { epoch_loss / count as f64 } else { 0.0 };
        if !mean.is_finite() || !emb.is_finite() {
            return Err(Error::Divergence {
                epoch,
                batch: None,
                message: format!("cf loss became {mean}"),
            });
        }
        log::debug!("cf epoch {epoch}: loss {mean:.6}");
        epoch_losses.push(mean);
    }
    let probe_loss_end = probe_loss(&emb, graph, layers, &probe);
    Ok((
        emb,
        CfReport {
            probe_loss_start,
            probe_loss_end,
            epoch_losses,
        },
    ))
}

fn sgd_step(
    emb: &mut BehaviorEmbeddings,
    grad_scoring: BehaviorEmbeddings,
    graph: &Bipartite,
    config: &CfConfig,
    frozen: &FrozenRows,
    touched_users: impl Iterator<Item = usize>,
    touched_items: impl Iterator<Item = usize>,
) {
    let mut grad = propagate(&grad_scoring, graph, config.propagation_layers);
    if config.l2 > 0.0 {
        for u in touched_users {
            grad.users.row_mut(u).scaled_add(config.l2, &emb.users.row(u));
        }
        for i in touched_items {
            grad.items.row_mut(i).scaled_add(config.l2, &emb.items.row(i));
        }
    }
    let lr = config.learning_rate;
    if !frozen.users {
        emb.users.scaled_add(-lr, &grad.users);
    }
    if frozen.items.is_empty() {
        emb.items.scaled_add(-lr, &grad.items);
    } else {
        for (i, mut row) in emb.items.axis_iter_mut(Axis(0)).enumerate() {
            if !frozen.items[i] {
                row.scaled_add(-lr, &grad.items.row(i));
            }
        }
    }
}

/// `z_u ← e_u` for every user; the vocabulary owns a copy.
pub fn init_user_vocab(emb: &BehaviorEmbeddings, encoder_dim: usize) -> Result<UserVocabulary> {
    if emb.dim() != encoder_dim {
        return Err(Error::Contract(format!(
            "behaviour dim {} != encoder dim {encoder_dim}",
            emb.dim()
        )));
    }
    UserVocabulary::new(emb.users.clone())
}

/// The ablation that skips collaborative initialisation.
pub fn random_user_vocab(n_users: usize, dim: usize, std: f64, seed: u64) -> UserVocabulary {
    let mut rng = seed::rng(seed);
    UserVocabulary::new(normal_matrix(n_users, dim, std, &mut rng)).expect("finite")
}

pub fn row_cosine(a: ArrayView1<'_, f64>, b: ArrayView1<'_, f64>) -> f64 {
    let na = dot(a, a).sqrt();
    let nb = dot(b, b).sqrt();
    if na == 0.0 || nb == 0.0 {
        0.0
    } else {
        dot(a, b) / (na * nb)
    }
}
