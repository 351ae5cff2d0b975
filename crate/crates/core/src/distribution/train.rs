use std::collections::BTreeMap;
use std::fmt;
use std::time::Instant;

use ndarray::Array1;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::head::{distribution_loss_grad, guiding_loss_grad, sample_negatives_with};
use super::optim::{AdamW, AdamWConfig};
use super::UserVocabulary;
use crate::cf::BehaviorEmbeddings;
use crate::dataset::{InteractionGraph, TokenSequence};
use crate::encoder::{EncoderGrads, EncoderModel, ParamHandle};
use crate::error::{Error, Result};
use crate::seed;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainConfig {
    pub lambda: f64,
    /// Size of the sampled negative set per item; 0 means every non-interactor.
    pub negatives_per_item: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub optimizer: AdamWConfig,
    /// Whether the user vocabulary is updated alongside the adapters.
    pub train_vocab: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lambda: 5.0,
            negatives_per_item: 256,
            learning_rate: 1e-4,
            batch_size: 8,
            max_epochs: 20,
            optimizer: AdamWConfig::default(),
            train_vocab: true,
            seed: 0,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0 && self.lambda.is_finite()) {
            return Err(Error::Config(format!("lambda must be >= 0, got {}", self.lambda)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be >= 1".into()));
        }
        if !(self.learning_rate >= 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning_rate {} is invalid", self.learning_rate)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpochLog {
    pub epoch: usize,
    pub l_distrib: f64,
    pub l_guid: f64,
    pub total: f64,
    pub seconds: f64,
}

impl fmt::Display for EpochLog {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "epoch={} l_distrib={:.8} l_guid={:.8} total={:.8}",
            self.epoch, self.l_distrib, self.l_guid, self.total
        )
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Weights from the epoch with the lowest mean training loss.
    pub encoder: EncoderModel,
    pub vocab: UserVocabulary,
    pub epochs: Vec<EpochLog>,
    pub best_epoch: Option<usize>,
    pub forward_passes: u64,
}

impl TrainOutcome {
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for e in &self.epochs {
            s.push_str(&e.to_string());
            s.push('\n');
        }
        if let Some(b) = self.best_epoch {
            s.push_str(&format!("best_epoch={b}\n"));
        }
        s
    }

    pub fn final_epoch(&self) -> Option<&EpochLog> {
        self.epochs.last()
    }
}

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord)]
enum Slot {
    Encoder(ParamHandle),
    Vocab,
}

/// Per-item training losses at the current weights, without updating.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ItemLoss {
    pub l_distrib: f64,
    pub l_guid: f64,
}

fn check_inputs(
    graph: &InteractionGraph,
    prompts: &[TokenSequence],
    behavior: &BehaviorEmbeddings,
    vocab: &UserVocabulary,
    encoder: &EncoderModel,
) -> Result<()> {
    if prompts.len() != graph.n_items() {
        return Err(Error::Contract(format!(
            "{} prompts for {} items",
            prompts.len(),
            graph.n_items()
        )));
    }
    if vocab.n_users() != graph.n_users() {
        return Err(Error::Contract(format!(
            "vocabulary has {} rows, graph has {} users",
            vocab.n_users(),
            graph.n_users()
        )));
    }
    if vocab.dim() != encoder.dim() || behavior.dim() != encoder.dim() {
        return Err(Error::Contract(format!(
            "dims differ: encoder {}, vocabulary {}, behaviour {}",
            encoder.dim(),
            vocab.dim(),
            behavior.dim()
        )));
    }
    if behavior.items.nrows() != graph.n_warm() {
        return Err(Error::Contract(format!(
            "behaviour has {} item rows, graph has {} warm items",
            behavior.items.nrows(),
            graph.n_warm()
        )));
    }
    for &i in graph.warm_items() {
        if graph.item_users(i).is_empty() {
            return Err(Error::Contract(format!(
                "warm item {} has no training interactions",
                graph.item_ids()[i]
            )));
        }
    }
    Ok(())
}

fn negatives_for(
    graph: &InteractionGraph,
    item: usize,
    config: &TrainConfig,
    rng: &mut seed::Rng,
) -> Result<Vec<usize>> {
    let available = graph.n_users() - graph.item_users(item).len();
    let count = if config.negatives_per_item == 0 {
        available
    } else {
        config.negatives_per_item.min(available)
    };
    sample_negatives_with(graph, item, count, rng)
}

/// Trains the encoder's trainable parameters and (optionally) the user
/// vocabulary on every warm item of `graph`, one forward pass per item per
/// epoch. `behavior` rows are indexed by warm slot and are never modified.
pub fn train(
    graph: &InteractionGraph,
    prompts: &[TokenSequence],
    behavior: &BehaviorEmbeddings,
    vocab: &UserVocabulary,
    encoder: &EncoderModel,
    config: &TrainConfig,
) -> Result<TrainOutcome> {
    config.validate()?;
    check_inputs(graph, prompts, behavior, vocab, encoder)?;
    let mut enc = encoder.clone();
    enc.reset_forward_count();
    let mut z = vocab.clone();
    let handles = enc.trainable_parameters();
    let mut opt: AdamW<Slot> = AdamW::new(config.learning_rate, config.optimizer);
    let mut rng = seed::labeled_rng(config.seed, "train/order");
    let mut neg_rng = seed::labeled_rng(config.seed, "train/negatives");
    let mut order: Vec<usize> = graph.warm_items().to_vec();
    let mut epochs = Vec::with_capacity(config.max_epochs);
    let mut best: Option<(f64, usize, EncoderModel, UserVocabulary)> = None;

    for epoch in 0..config.max_epochs {
        let started = Instant::now();
        order.shuffle(&mut rng);
        let (mut sum_d, mut sum_g) = (0.0, 0.0);
        for (b, batch) in order.chunks(config.batch_size).enumerate() {
            let mut grads = EncoderGrads::default();
            let mut rows: BTreeMap<usize, Array1<f64>> = BTreeMap::new();
            let scale = 1.0 / batch.len() as f64;
            let (mut batch_d, mut batch_g) = (0.0, 0.0);
            for &item in batch {
                let (h, cache) = enc.forward_train(prompts[item].ids())?;
                if !h.is_finite() {
                    return Err(Error::Divergence {
                        epoch,
                        batch: Some(b),
                        message: format!("hidden state of item {} is not finite", graph.item_ids()[item]),
                    });
                }
                let negatives = negatives_for(graph, item, config, &mut neg_rng)?;
                let dg = distribution_loss_grad(&h, graph.item_users(item), &negatives, &z)?;
                let (lg, dh_g) = guiding_loss_grad(&h, graph, item, behavior)?;
                batch_d += dg.loss;
                batch_g += lg;
                let mut dh = dg.dh;
                dh.scaled_add(config.lambda, &dh_g);
                dh *= scale;
                grads.accumulate(&enc.backward(&cache, dh.view()));
                if config.train_vocab {
                    for (u, g) in dg.rows {
                        rows.entry(u)
                            .and_modify(|acc| acc.scaled_add(scale, &g))
                            .or_insert_with(|| g * scale);
                    }
                }
            }
            let batch_total = batch_d + config.lambda * batch_g;
            if !batch_total.is_finite() {
                return Err(Error::Divergence {
                    epoch,
                    batch: Some(b),
                    message: format!("loss became {batch_total}"),
                });
            }
            sum_d += batch_d;
            sum_g += batch_g;
            opt.begin_step();
            for h in &handles {
                if let Some(g) = grads.tensors.get(h) {
                    let p = enc.param_mut(*h).expect("trainable handle");
                    opt.step_dense(&Slot::Encoder(*h), p, g);
                }
            }
            if config.train_vocab && !rows.is_empty() {
                opt.step_rows(&Slot::Vocab, z.matrix_mut(), &rows);
            }
        }
        let n = order.len().max(1) as f64;
        let log = EpochLog {
            epoch,
            l_distrib: sum_d / n,
            l_guid: sum_g / n,
            total: (sum_d + config.lambda * sum_g) / n,
            seconds: started.elapsed().as_secs_f64(),
        };
        log::info!("{log} seconds={:.3}", log.seconds);
        if best.as_ref().is_none_or(|(l, ..)| log.total < *l) {
            best = Some((log.total, epoch, enc.clone(), z.clone()));
        }
        epochs.push(log);
    }
    let forward_passes = enc.forward_count();
    let (best_epoch, encoder, vocab) = match best {
        Some((_, e, m, v)) => (Some(e), m, v),
        None => (None, enc, z),
    };
    Ok(TrainOutcome {
        encoder,
        vocab,
        epochs,
        best_epoch,
        forward_passes,
    })
}

/// Mean per-item losses at the current weights over the warm items, with
/// full negatives.
pub fn evaluate_losses(
    graph: &InteractionGraph,
    prompts: &[TokenSequence],
    behavior: &BehaviorEmbeddings,
    vocab: &UserVocabulary,
    encoder: &EncoderModel,
) -> Result<ItemLoss> {
    check_inputs(graph, prompts, behavior, vocab, encoder)?;
    let (mut d, mut g) = (0.0, 0.0);
    for &item in graph.warm_items() {
        let h = encoder.encode(&prompts[item])?;
        let negatives = super::head::complement(graph, item);
        d += super::head::distribution_loss(&h, graph.item_users(item), &negatives, vocab)?;
        g += super::head::guiding_loss(&h, graph, item, behavior)?;
    }
    let n = graph.n_warm().max(1) as f64;
    Ok(ItemLoss {
        l_distrib: d / n,
        l_guid: g / n,
    })
}
