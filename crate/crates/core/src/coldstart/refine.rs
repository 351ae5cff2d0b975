use ndarray::{Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::augment::AugmentedInteractions;
use crate::cf::{fit_bpr, normal_matrix, propagate, BehaviorEmbeddings, Bipartite, CfConfig, CfReport, FrozenRows};
use crate::dataset::{InteractionGraph, ItemClass};
use crate::error::{Error, Result};
use crate::numeric::dot;
use crate::seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum RefineMode {
    /// Every user and item row is trainable.
    #[default]
    FullUpdate,
    /// Only cold item rows move.
    ColdOnly,
}

impl RefineMode {
    pub fn name(self) -> &'static str {
        match self {
            RefineMode::FullUpdate => "full-update",
            RefineMode::ColdOnly => "cold-only",
        }
    }
}

/// Backbone retrained on `H ∪ Ĥ`. Item rows are indexed by dense item id.
#[derive(Debug, Clone)]
pub struct RefinedEmbeddings {
    pub mode: RefineMode,
    /// Trained parameters.
    pub raw: BehaviorEmbeddings,
    /// Propagated rows over `H ∪ Ĥ`; what scoring uses.
    pub scoring: BehaviorEmbeddings,
    pub report: CfReport,
}

impl RefinedEmbeddings {
    /// `E_i^{(c)}`: scoring rows of the cold items, in cold-slot order.
    pub fn cold_rows(&self, graph: &InteractionGraph) -> Array2<f64> {
        self.scoring.items.select(ndarray::Axis(0), graph.cold_items())
    }
}

/// Warm-starts the backbone from `behavior` (raw rows, warm-slot indexed),
/// gives cold items a fresh normal initialisation, and refits on the
/// training interactions plus the synthetic ones.
pub fn refine_embeddings(
    graph: &InteractionGraph,
    augmented: &AugmentedInteractions,
    behavior: &BehaviorEmbeddings,
    backbone: &CfConfig,
    mode: RefineMode,
) -> Result<RefinedEmbeddings> {
    backbone.validate()?;
    if behavior.users.nrows() != graph.n_users() || behavior.items.nrows() != graph.n_warm() {
        return Err(Error::Contract(format!(
            "behaviour rows {}×{} do not match {} users, {} warm items",
            behavior.users.nrows(),
            behavior.items.nrows(),
            graph.n_users(),
            graph.n_warm()
        )));
    }
    for (u, i) in augmented.edges() {
        if u >= graph.n_users() || i >= graph.n_items() || graph.class(i) != ItemClass::Cold {
            return Err(Error::Contract(format!("synthetic pair ({u}, {i}) is not (user, cold item)")));
        }
    }
    if augmented.is_empty() && graph.n_cold() > 0 {
        log::warn!("no synthetic interactions; cold rows keep their initialisation");
    }
    let d = behavior.dim();
    let mut rng = seed::labeled_rng(backbone.seed, "refine/cold-init");
    let cold_init = normal_matrix(graph.n_cold(), d, backbone.init_std, &mut rng);
    let mut items = Array2::zeros((graph.n_items(), d));
    for (i, mut row) in items.rows_mut().into_iter().enumerate() {
        match (graph.warm_slot(i), graph.cold_slot(i)) {
            (Some(w), _) => row.assign(&behavior.items.row(w)),
            (_, Some(c)) => row.assign(&cold_init.row(c)),
            _ => unreachable!("every item is warm or cold"),
        }
    }
    let init = BehaviorEmbeddings::new(behavior.users.clone(), items)?;
    let bip = Bipartite::new(
        graph.n_users(),
        graph.n_items(),
        graph.interactions().iter().copied().chain(augmented.edges()),
    );
    let frozen = match mode {
        RefineMode::FullUpdate => FrozenRows::default(),
        RefineMode::ColdOnly => FrozenRows {
            users: true,
            items: graph.classes().iter().map(|c| *c == ItemClass::Warm).collect(),
        },
    };
    let (raw, report) = if bip.edges().is_empty() {
        (init, CfReport { probe_loss_start: 0.0, probe_loss_end: 0.0, epoch_losses: Vec::new() })
    } else {
        fit_bpr(&bip, init, backbone, &frozen)?
    };
    let scoring = propagate(&raw, &bip, backbone.propagation_layers);
    Ok(RefinedEmbeddings {
        mode,
        raw,
        scoring,
        report,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Slot {
    Warm(usize),
    Cold(usize),
}

/// User rows plus per-class item rows; the dispatch behind [`recommend`].
#[derive(Debug, Clone)]
pub struct Scorer {
    users: Array2<f64>,
    warm: Array2<f64>,
    cold: Array2<f64>,
    slots: Vec<Slot>,
}

impl Scorer {
    /// `warm` rows in warm-slot order, `cold` rows in cold-slot order.
    pub fn new(graph: &InteractionGraph, users: Array2<f64>, warm: Array2<f64>, cold: Array2<f64>) -> Result<Self> {
        let d = users.ncols();
        if users.nrows() != graph.n_users()
            || warm.nrows() != graph.n_warm()
            || cold.nrows() != graph.n_cold()
            || warm.ncols() != d
            || cold.ncols() != d
        {
            return Err(Error::Contract(format!(
                "scorer shapes {:?}/{:?}/{:?} do not match graph ({} users, {} warm, {} cold)",
                users.dim(),
                warm.dim(),
                cold.dim(),
                graph.n_users(),
                graph.n_warm(),
                graph.n_cold()
            )));
        }
        let slots = (0..graph.n_items())
            .map(|i| match (graph.warm_slot(i), graph.cold_slot(i)) {
                (Some(w), _) => Slot::Warm(w),
                (_, Some(c)) => Slot::Cold(c),
                _ => unreachable!("every item is warm or cold"),
            })
            .collect();
        Ok(Scorer { users, warm, cold, slots })
    }

    pub fn from_refined(graph: &InteractionGraph, refined: &RefinedEmbeddings) -> Result<Self> {
        let s = &refined.scoring;
        Self::new(
            graph,
            s.users.clone(),
            s.items.select(ndarray::Axis(0), graph.warm_items()),
            s.items.select(ndarray::Axis(0), graph.cold_items()),
        )
    }

    pub fn n_users(&self) -> usize {
        self.users.nrows()
    }

    pub fn n_items(&self) -> usize {
        self.slots.len()
    }

    pub fn user_row(&self, user: usize) -> ArrayView1<'_, f64> {
        self.users.row(user)
    }

    pub fn item_row(&self, item: usize) -> ArrayView1<'_, f64> {
        match self.slots[item] {
            Slot::Warm(w) => self.warm.row(w),
            Slot::Cold(c) => self.cold.row(c),
        }
    }

    pub fn cold_rows_mut(&mut self) -> &mut Array2<f64> {
        &mut self.cold
    }
}

/// Inner product of the user row with the warm or cold row of the item.
pub fn recommend(scorer: &Scorer, user: usize, item: usize) -> Result<f64> {
    if user >= scorer.n_users() {
        return Err(Error::Contract(format!("unknown user {user}")));
    }
    if item >= scorer.n_items() {
        return Err(Error::Contract(format!("unknown item {item}")));
    }
    Ok(dot(scorer.user_row(user), scorer.item_row(item)))
}
