//! The pipeline stages as plain functions over in-memory values.

use crate::cf::{init_user_vocab, propagate_on, random_user_vocab, train_cf, BehaviorEmbeddings, CfReport};
use crate::coldstart::{generate_interactions, refine_embeddings, AugmentedInteractions, RefinedEmbeddings, Scorer};
use crate::dataset::{make_splits, InteractionGraph, ItemContent, SplitResult, TokenSequence, Tokenizer};
use crate::distribution::{train, TrainConfig, TrainOutcome, UserVocabulary};
use crate::encoder::{build_prompt, BaseMode, EncoderConfig, EncoderModel, PROMPT_PREFIX, PROMPT_SUFFIX};
use crate::error::{Error, Result};
use crate::eval_bench::{
    bench, build_judgement_prompt, evaluate, random_control, select_candidates, user_context, BenchInput,
    BenchResult, CandidateRule, JudgeModel, MetricReport, JUDGE_MIDDLE, JUDGE_PREFIX, JUDGE_SUFFIX,
};

use super::config::{RunConfig, VocabInit};

/// The ingested corpus: the training graph with its warm/cold assignment,
/// the held-out test pairs, item text and the tokenizer.
#[derive(Debug, Clone)]
pub struct Dataset {
    pub graph: InteractionGraph,
    pub content: ItemContent,
    pub split: SplitResult,
    pub tokenizer: Tokenizer,
}

impl Dataset {
    pub fn prompts(&self) -> Result<Vec<TokenSequence>> {
        self.content
            .texts()
            .iter()
            .map(|t| build_prompt(&self.tokenizer, t))
            .collect()
    }
}

/// Splits `full` and builds the tokenizer over every item's text.
pub fn prepare(config: &RunConfig, full: &InteractionGraph, content: ItemContent) -> Result<Dataset> {
    let cfg = config.resolved();
    if content.len() != full.n_items() {
        return Err(Error::Validation(format!(
            "{} content entries for {} items",
            content.len(),
            full.n_items()
        )));
    }
    let split = make_splits(full, &cfg.split)?;
    for d in &split.downgraded {
        log::warn!("item {} downgraded: {}", full.item_ids()[d.item], d.reason);
    }
    let graph = split.training_graph(full)?;
    let tokenizer = Tokenizer::build(
        content.texts().iter().map(String::as_str),
        &[PROMPT_PREFIX, PROMPT_SUFFIX, JUDGE_PREFIX, JUDGE_MIDDLE, JUDGE_SUFFIX],
        &cfg.tokenizer,
    );
    Ok(Dataset {
        graph,
        content,
        split,
        tokenizer,
    })
}

/// Raw (unpropagated) behaviour rows, warm-slot indexed.
pub fn run_cf(config: &RunConfig, ds: &Dataset) -> Result<(BehaviorEmbeddings, CfReport)> {
    let cfg = config.resolved();
    train_cf(&ds.graph, &cfg.cf)
}

#[derive(Debug, Clone)]
pub struct Trained {
    pub encoder: EncoderModel,
    pub vocab: UserVocabulary,
    pub pretrain: Option<TrainOutcome>,
    pub adapters: Option<TrainOutcome>,
}

impl Trained {
    pub fn log_text(&self) -> String {
        let mut s = String::new();
        for (phase, out) in [("pretrain", &self.pretrain), ("adapters", &self.adapters)] {
            if let Some(out) = out {
                for e in &out.epochs {
                    s.push_str(&format!("phase={phase} {e}\n"));
                }
                if let Some(b) = out.best_epoch {
                    s.push_str(&format!("phase={phase} best_epoch={b}\n"));
                }
            }
        }
        s
    }

    /// The last logged epoch of the last phase that ran.
    pub fn final_epoch(&self) -> Option<crate::distribution::EpochLog> {
        self.adapters
            .as_ref()
            .and_then(|o| o.final_epoch())
            .or_else(|| self.pretrain.as_ref().and_then(|o| o.final_epoch()))
            .copied()
    }
}

pub fn encoder_config(config: &RunConfig, tokenizer: &Tokenizer) -> EncoderConfig {
    EncoderConfig {
        vocab_size: tokenizer.vocab_size(),
        ..config.resolved().encoder
    }
}

pub fn initial_vocab(config: &RunConfig, ds: &Dataset, behavior: &BehaviorEmbeddings) -> Result<UserVocabulary> {
    match config.vocab_init {
        VocabInit::Collaborative => init_user_vocab(behavior, config.encoder.dim),
        VocabInit::Random => {
            let n = behavior.users.len() as f64;
            let mean = behavior.users.sum() / n;
            let std = (behavior.users.mapv(|x| (x - mean) * (x - mean)).sum() / n).sqrt();
            Ok(random_user_vocab(
                ds.graph.n_users(),
                config.encoder.dim,
                std,
                config.stage_seed("vocab/random"),
            ))
        }
    }
}

/// Builds the encoder and trains it, optionally with a whole-model phase
/// before the adapter phase.
pub fn run_train(config: &RunConfig, ds: &Dataset, raw: &BehaviorEmbeddings) -> Result<Trained> {
    let cfg = config.resolved();
    let behavior = propagate_on(raw, &ds.graph, cfg.cf.propagation_layers);
    let vocab = initial_vocab(&cfg, ds, &behavior)?;
    let encoder = EncoderModel::new(encoder_config(&cfg, &ds.tokenizer))?;
    let prompts = ds.prompts()?;

    let (encoder, vocab, pretrain) = if cfg.pretrain.epochs > 0 {
        let mut enc = encoder;
        enc.set_base_mode(BaseMode::Trainable);
        let tc = TrainConfig {
            max_epochs: cfg.pretrain.epochs,
            learning_rate: cfg.pretrain.learning_rate,
            seed: cfg.stage_seed("pretrain"),
            ..cfg.train.clone()
        };
        let out = train(&ds.graph, &prompts, &behavior, &vocab, &enc, &tc)?;
        let mut enc = out.encoder.clone();
        enc.set_base_mode(cfg.encoder.base);
        (enc, out.vocab.clone(), Some(out))
    } else {
        (encoder, vocab, None)
    };
    let (encoder, vocab, adapters) = if cfg.train.max_epochs > 0 {
        let out = train(&ds.graph, &prompts, &behavior, &vocab, &encoder, &cfg.train)?;
        (out.encoder.clone(), out.vocab.clone(), Some(out))
    } else {
        (encoder, vocab, None)
    };
    Ok(Trained {
        encoder,
        vocab,
        pretrain,
        adapters,
    })
}

pub fn run_infer(
    config: &RunConfig,
    ds: &Dataset,
    encoder: &EncoderModel,
    vocab: &UserVocabulary,
) -> Result<AugmentedInteractions> {
    generate_interactions(
        &ds.graph,
        ds.graph.cold_items(),
        &ds.content,
        &ds.tokenizer,
        encoder,
        vocab,
        config.k,
    )
}

pub fn run_refine(
    config: &RunConfig,
    ds: &Dataset,
    raw: &BehaviorEmbeddings,
    augmented: &AugmentedInteractions,
) -> Result<RefinedEmbeddings> {
    let cfg = config.resolved();
    let mut backbone = cfg.cf.clone();
    backbone.seed = cfg.stage_seed("refine");
    if let Some(e) = cfg.refine.epochs {
        backbone.epochs = e;
    }
    refine_embeddings(&ds.graph, augmented, raw, &backbone, cfg.refine.mode)
}

/// The metric report and its random-embedding control.
pub fn run_eval(config: &RunConfig, ds: &Dataset, scorer: &Scorer) -> Result<(MetricReport, MetricReport)> {
    let k = config.eval.k;
    let main = evaluate(scorer, &ds.graph, &ds.split.warm_test, &ds.split.cold_test, k)?;
    let control = random_control(scorer, config.eval.control_std, config.stage_seed("eval/control"));
    let control = evaluate(&control, &ds.graph, &ds.split.warm_test, &ds.split.cold_test, k)?;
    Ok((main, control))
}

/// Times both paradigms on the first `bench.items` cold items, with
/// judgement candidates chosen by behaviour score.
pub fn run_bench(
    config: &RunConfig,
    ds: &Dataset,
    encoder: &EncoderModel,
    vocab: &UserVocabulary,
    scorer: &Scorer,
) -> Result<BenchResult> {
    let cfg = config.resolved();
    let judge = JudgeModel::new(encoder, cfg.judge.max_len, cfg.stage_seed("bench/judge"))?;
    let items: Vec<usize> = if ds.graph.n_cold() > 0 {
        ds.graph.cold_items().iter().copied().take(cfg.bench.items).collect()
    } else {
        ds.graph.warm_items().iter().copied().take(cfg.bench.items).collect()
    };
    let max_k = cfg.bench.k_cand.iter().copied().max().unwrap_or(1);
    let mut dist_prompts = Vec::with_capacity(items.len());
    let mut judge_prompts = Vec::with_capacity(items.len());
    for &item in &items {
        let text = ds.content.get(item).unwrap_or("");
        dist_prompts.push(build_prompt(&ds.tokenizer, text)?);
        let users = select_candidates(CandidateRule::CfTopK, scorer, item, max_k, 0)?;
        let prompts = users
            .iter()
            .map(|&u| {
                let ctx = user_context(&ds.graph, &ds.content, u);
                build_judgement_prompt(&ds.tokenizer, &ctx, text, cfg.judge.max_len)
            })
            .collect::<Result<Vec<_>>>()?;
        judge_prompts.push(prompts);
    }
    let input = BenchInput {
        encoder,
        vocab,
        judge: &judge,
        dist_prompts: &dist_prompts,
        judge_prompts: &judge_prompts,
    };
    bench(&input, &cfg.bench)
}

/// Everything a full in-memory run produces.
#[derive(Debug, Clone)]
pub struct Experiment {
    pub dataset: Dataset,
    pub cf: BehaviorEmbeddings,
    pub trained: Trained,
    pub augmented: AugmentedInteractions,
    pub refined: RefinedEmbeddings,
    pub metrics: MetricReport,
    pub control: MetricReport,
}

/// ingest → cf → train → infer → refine → eval, without touching disk.
pub fn run_experiment(config: &RunConfig, full: &InteractionGraph, content: ItemContent) -> Result<Experiment> {
    config.validate()?;
    let dataset = prepare(config, full, content)?;
    let (cf, _) = run_cf(config, &dataset)?;
    let trained = run_train(config, &dataset, &cf)?;
    let augmented = run_infer(config, &dataset, &trained.encoder, &trained.vocab)?;
    let refined = run_refine(config, &dataset, &cf, &augmented)?;
    let scorer = Scorer::from_refined(&dataset.graph, &refined)?;
    let (metrics, control) = run_eval(config, &dataset, &scorer)?;
    Ok(Experiment {
        dataset,
        cf,
        trained,
        augmented,
        refined,
        metrics,
        control,
    })
}
