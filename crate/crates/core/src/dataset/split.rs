use std::fmt::Write as _;

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::graph::{InteractionGraph, ItemClass};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SplitSpec {
    pub cold_fraction: f64,
    /// train, validation, test
    pub warm_ratios: [f64; 3],
    /// validation, test
    pub cold_ratios: [f64; 2],
    pub seed: u64,
}

impl Default for SplitSpec {
    fn default() -> Self {
        SplitSpec {
            cold_fraction: 0.2,
            warm_ratios: [0.8, 0.1, 0.1],
            cold_ratios: [0.5, 0.5],
            seed: 0,
        }
    }
}

impl SplitSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.cold_fraction > 0.0 && self.cold_fraction < 1.0) {
            return Err(Error::Config(format!(
                "cold_fraction must lie in (0, 1), got {}",
                self.cold_fraction
            )));
        }
        let check = |name: &str, r: &[f64]| {
            if r.iter().any(|x| !x.is_finite() || *x < 0.0) {
                return Err(Error::Config(format!("{name} must be non-negative")));
            }
            let s: f64 = r.iter().sum();
            if (s - 1.0).abs() > 1e-9 {
                return Err(Error::Config(format!("{name} sum to {s}, expected 1")));
            }
            Ok(())
        };
        check("warm_ratios", &self.warm_ratios)?;
        check("cold_ratios", &self.cold_ratios)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Downgrade {
    pub item: usize,
    pub interactions: usize,
    pub reason: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitResult {
    pub classes: Vec<ItemClass>,
    pub train: Vec<(usize, usize)>,
    pub warm_val: Vec<(usize, usize)>,
    pub warm_test: Vec<(usize, usize)>,
    pub cold_val: Vec<(usize, usize)>,
    pub cold_test: Vec<(usize, usize)>,
    pub downgraded: Vec<Downgrade>,
    pub seed: u64,
}

impl SplitResult {
    /// The graph the CF backbone and the encoder train on: warm/cold
    /// assignment applied and only training interactions present.
    pub fn training_graph(&self, full: &InteractionGraph) -> Result<InteractionGraph> {
        let g = full.restrict(self.classes.clone(), self.train.iter().copied())?;
        g.validate()?;
        Ok(g)
    }

    pub fn warm_items(&self) -> Vec<usize> {
        self.items_of(ItemClass::Warm)
    }

    pub fn cold_items(&self) -> Vec<usize> {
        self.items_of(ItemClass::Cold)
    }

    fn items_of(&self, class: ItemClass) -> Vec<usize> {
        self.classes
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == class)
            .map(|(i, _)| i)
            .collect()
    }

    pub fn report(&self, graph: &InteractionGraph) -> String {
        let mut s = String::new();
        let warm = self.classes.iter().filter(|c| **c == ItemClass::Warm).count();
        let _ = writeln!(s, "kind=split_report");
        let _ = writeln!(s, "seed={}", self.seed);
        let _ = writeln!(s, "users={}", graph.n_users());
        let _ = writeln!(s, "items={}", graph.n_items());
        let _ = writeln!(s, "warm_items={warm}");
        let _ = writeln!(s, "cold_items={}", self.classes.len() - warm);
        let _ = writeln!(s, "interactions={}", graph.interactions().len());
        let _ = writeln!(s, "train={}", self.train.len());
        let _ = writeln!(s, "warm_val={}", self.warm_val.len());
        let _ = writeln!(s, "warm_test={}", self.warm_test.len());
        let _ = writeln!(s, "cold_val={}", self.cold_val.len());
        let _ = writeln!(s, "cold_test={}", self.cold_test.len());
        let _ = writeln!(s, "downgraded={}", self.downgraded.len());
        for d in &self.downgraded {
            let _ = writeln!(
                s,
                "downgraded_item={}\t{}\t{}",
                graph.item_ids()[d.item],
                d.interactions,
                d.reason
            );
        }
        s
    }
}

fn round_count(n: usize, ratio: f64) -> usize {
    ((n as f64) * ratio).round() as usize
}

/// Assigns cold items uniformly at random and splits each item's
/// interactions: warm items by `warm_ratios`, cold items by `cold_ratios`.
///
/// Splits are per item. Warm items always keep at least one training
/// interaction; items too small to fill every split are recorded in
/// `downgraded`.
pub fn make_splits(graph: &InteractionGraph, spec: &SplitSpec) -> Result<SplitResult> {
    spec.validate()?;
    let mut rng = seed::rng(spec.seed);
    let n = graph.n_items();
    let n_cold = round_count(n, spec.cold_fraction).min(n);

    let mut order: Vec<usize> = (0..n).collect();
    order.shuffle(&mut rng);
    let mut classes = vec![ItemClass::Warm; n];
    for &i in &order[..n_cold] {
        classes[i] = ItemClass::Cold;
    }

    let mut out = SplitResult {
        classes,
        train: Vec::new(),
        warm_val: Vec::new(),
        warm_test: Vec::new(),
        cold_val: Vec::new(),
        cold_test: Vec::new(),
        downgraded: Vec::new(),
        seed: spec.seed,
    };

    for item in 0..n {
        let mut users = graph.item_users(item).to_vec();
        users.shuffle(&mut rng);
        let total = users.len();
        match out.classes[item] {
            ItemClass::Warm => {
                if total == 0 {
                    out.downgraded.push(Downgrade {
                        item,
                        interactions: 0,
                        reason: "warm item without interactions".into(),
                    });
                    continue;
                }
                let mut n_val = round_count(total, spec.warm_ratios[1]);
                let mut n_test = round_count(total, spec.warm_ratios[2]);
                while n_val + n_test >= total {
                    if n_test >= n_val && n_test > 0 {
                        n_test -= 1;
                    } else {
                        n_val -= 1;
                    }
                }
                let short = (spec.warm_ratios[1] > 0.0 && n_val == 0)
                    || (spec.warm_ratios[2] > 0.0 && n_test == 0);
                if short {
                    out.downgraded.push(Downgrade {
                        item,
                        interactions: total,
                        reason: "too few interactions for warm val/test".into(),
                    });
                }
                let n_train = total - n_val - n_test;
                out.train.extend(users[..n_train].iter().map(|&u| (u, item)));
                out.warm_val
                    .extend(users[n_train..n_train + n_val].iter().map(|&u| (u, item)));
                out.warm_test
                    .extend(users[n_train + n_val..].iter().map(|&u| (u, item)));
            }
            ItemClass::Cold => {
                let n_val = round_count(total, spec.cold_ratios[0]).min(total);
                let n_test = total - n_val;
                if total > 0
                    && ((spec.cold_ratios[0] > 0.0 && n_val == 0)
                        || (spec.cold_ratios[1] > 0.0 && n_test == 0))
                {
                    out.downgraded.push(Downgrade {
                        item,
                        interactions: total,
                        reason: "too few interactions for cold val/test".into(),
                    });
                }
                out.cold_val.extend(users[..n_val].iter().map(|&u| (u, item)));
                out.cold_test.extend(users[n_val..].iter().map(|&u| (u, item)));
            }
        }
    }
    for set in [
        &mut out.train,
        &mut out.warm_val,
        &mut out.warm_test,
        &mut out.cold_val,
        &mut out.cold_test,
    ] {
        set.sort_unstable();
    }
    for d in &out.downgraded {
        log::warn!(
            "item {} ({} interactions): {}",
            graph.item_ids()[d.item],
            d.interactions,
            d.reason
        );
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    fn toy_graph(n_users: usize, n_items: usize, seed: u64) -> InteractionGraph {
        use rand::Rng;
        let mut rng = crate::seed::rng(seed);
        let mut pairs = Vec::new();
        for u in 0..n_users {
            for i in 0..n_items {
                if rng.random::<f64>() < 0.3 {
                    pairs.push((u, i));
                }
            }
        }
        InteractionGraph::from_pairs(
            (0..n_users).map(|u| format!("u{u}")).collect(),
            (0..n_items).map(|i| format!("i{i}")).collect(),
            pairs,
        )
        .unwrap()
    }

    #[test]
    fn ten_items_two_cold() {
        let g = toy_graph(20, 10, 1);
        let s = make_splits(&g, &SplitSpec::default()).unwrap();
        assert_eq!(s.cold_items().len(), 2);
    }

    #[test]
    fn deterministic_given_seed() {
        let g = toy_graph(30, 40, 2);
        let spec = SplitSpec {
            seed: 99,
            ..Default::default()
        };
        let a = make_splits(&g, &spec).unwrap();
        let b = make_splits(&g, &spec).unwrap();
        assert_eq!(a, b);
        assert_eq!(
            serde_json::to_string(&a).unwrap(),
            serde_json::to_string(&b).unwrap()
        );
    }

    #[test]
    fn cold_interactions_never_in_train() {
        let g = toy_graph(50, 100, 3);
        let s = make_splits(&g, &SplitSpec::default()).unwrap();
        let cold: HashSet<usize> = s.cold_items().into_iter().collect();
        assert_eq!(cold.len(), 20);
        // exhaustive scan over every split
        for &(_, i) in s.train.iter().chain(&s.warm_val).chain(&s.warm_test) {
            assert!(!cold.contains(&i));
        }
        for &(_, i) in s.cold_val.iter().chain(&s.cold_test) {
            assert!(cold.contains(&i));
        }
        let tg = s.training_graph(&g).unwrap();
        for &i in &cold {
            assert!(tg.item_users(i).is_empty());
        }
    }

    #[test]
    fn splits_partition_each_class() {
        let g = toy_graph(40, 60, 4);
        let s = make_splits(&g, &SplitSpec::default()).unwrap();
        let mut all: Vec<(usize, usize)> = s
            .train
            .iter()
            .chain(&s.warm_val)
            .chain(&s.warm_test)
            .chain(&s.cold_val)
            .chain(&s.cold_test)
            .copied()
            .collect();
        let total = all.len();
        all.sort_unstable();
        all.dedup();
        assert_eq!(all.len(), total, "splits overlap");
        assert_eq!(all, g.interactions());
    }

    #[test]
    fn single_interaction_warm_item_is_downgraded() {
        let g = InteractionGraph::from_pairs(
            vec!["a".into(), "b".into()],
            (0..5).map(|i| format!("i{i}")).collect(),
            vec![(0, 0), (0, 1), (1, 1), (0, 2), (0, 3), (1, 4)],
        )
        .unwrap();
        let s = make_splits(&g, &SplitSpec::default()).unwrap();
        let warm = s.warm_items();
        for &i in &warm {
            assert!(s.train.iter().any(|&(_, j)| j == i));
        }
        assert!(!s.downgraded.is_empty());
        assert!(s.report(&g).contains("downgraded="));
    }

    #[test]
    fn bad_ratios_rejected() {
        let spec = SplitSpec {
            warm_ratios: [0.7, 0.1, 0.1],
            ..Default::default()
        };
        assert!(spec.validate().is_err());
        let spec = SplitSpec {
            cold_fraction: 1.0,
            ..Default::default()
        };
        assert!(spec.validate().is_err());
    }
}
