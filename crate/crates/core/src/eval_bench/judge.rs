use ndarray::{Array1, Array2};
use rand::seq::index;

use crate::cf::normal_matrix;
use crate::coldstart::{recommend, top_k_by_score, Scorer};
use crate::dataset::{InteractionGraph, ItemContent, TokenSequence, Tokenizer, UNK_ID};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};
use crate::seed;

pub const JUDGE_PREFIX: &str =
    "Assuming you are a recommendation expert. A user has interacted with the following items";
pub const JUDGE_MIDDLE: &str = ". A new item has the following content";
pub const JUDGE_SUFFIX: &str = ", will the user interact with this item? Answer yes or no.";

/// Contents of the user's training items, most recent (highest item
/// index) first.
pub fn user_context(graph: &InteractionGraph, content: &ItemContent, user: usize) -> String {
    graph
        .user_items(user)
        .iter()
        .rev()
        .filter_map(|&i| content.get(i))
        .collect::<Vec<_>>()
        .join(" . ")
}

/// `JUDGE_PREFIX <context> JUDGE_MIDDLE <item> JUDGE_SUFFIX`, at most
/// `max_len` tokens. The item keeps as much as fits; the context fills
/// what is left and is cut from its tail. An empty context becomes `[UNK]`.
pub fn build_judgement_prompt(
    tokenizer: &Tokenizer,
    context: &str,
    item_text: &str,
    max_len: usize,
) -> Result<TokenSequence> {
    let prefix = tokenizer.ids(JUDGE_PREFIX);
    let middle = tokenizer.ids(JUDGE_MIDDLE);
    let suffix = tokenizer.ids(JUDGE_SUFFIX);
    let fixed = prefix.len() + middle.len() + suffix.len();
    if fixed + 2 > max_len {
        return Err(Error::Config(format!(
            "judgement template needs {} tokens, max_len is {max_len}",
            fixed + 2
        )));
    }
    let mut item = tokenizer.ids(item_text);
    if item.is_empty() {
        item.push(UNK_ID);
    }
    item.truncate(max_len - fixed - 1);
    let mut ctx = tokenizer.ids(context);
    if ctx.is_empty() {
        ctx.push(UNK_ID);
    }
    ctx.truncate(max_len - fixed - item.len());
    let mut ids = prefix;
    ids.extend(ctx);
    ids.extend(middle);
    ids.extend(item);
    ids.extend(suffix);
    TokenSequence::new(ids)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub yes: bool,
    pub p_yes: f64,
}

/// The encoder with a 2-way output head: one full forward pass per
/// `(user, item)` pair.
#[derive(Debug, Clone)]
pub struct JudgeModel {
    pub encoder: EncoderModel,
    /// `d × 2`, columns `(no, yes)`.
    pub head: Array2<f64>,
    pub bias: Array1<f64>,
    pub threshold: f64,
}

impl JudgeModel {
    /// Shares `encoder`'s weights, with positions extended to `max_len`
    /// and a seeded head.
    pub fn new(encoder: &EncoderModel, max_len: usize, seed_value: u64) -> Result<Self> {
        let encoder = encoder.with_max_len(max_len)?;
        let d = encoder.dim();
        let mut rng = seed::rng(seed_value);
        Ok(JudgeModel {
            head: normal_matrix(d, 2, 1.0 / (d as f64).sqrt(), &mut rng),
            bias: Array1::zeros(2),
            threshold: 0.5,
            encoder,
        })
    }

    pub fn max_len(&self) -> usize {
        self.encoder.config().max_len
    }
}

pub fn judge_tokens(model: &JudgeModel, prompt: &TokenSequence) -> Result<Verdict> {
    let h = model.encoder.encode(prompt)?;
    let logits = h.0.dot(&model.head) + &model.bias;
    let m = logits[0].max(logits[1]);
    let (no, yes) = ((logits[0] - m).exp(), (logits[1] - m).exp());
    let p_yes = yes / (no + yes);
    Ok(Verdict {
        yes: p_yes >= model.threshold,
        p_yes,
    })
}

/// Builds the pair's prompt and runs one forward pass.
pub fn judge_pair(model: &JudgeModel, tokenizer: &Tokenizer, context: &str, item_text: &str) -> Result<Verdict> {
    let prompt = build_judgement_prompt(tokenizer, context, item_text, model.max_len())?;
    judge_tokens(model, &prompt)
}

/// How the candidate users `T_i` of an item are chosen.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CandidateRule {
    /// Highest behaviour scores for the item.
    CfTopK,
    Random,
}

pub fn select_candidates(
    rule: CandidateRule,
    scorer: &Scorer,
    item: usize,
    k_cand: usize,
    seed_value: u64,
) -> Result<Vec<usize>> {
    let n = scorer.n_users();
    if k_cand == 0 || k_cand > n {
        return Err(Error::Contract(format!("K_cand = {k_cand} outside 1..={n}")));
    }
    match rule {
        CandidateRule::CfTopK => {
            let scores = (0..n)
                .map(|u| recommend(scorer, u, item))
                .collect::<Result<Vec<f64>>>()?;
            Ok(top_k_by_score(&scores, k_cand))
        }
        CandidateRule::Random => {
            let mut rng = seed::rng(seed_value);
            let mut users = index::sample(&mut rng, n, k_cand).into_vec();
            users.sort_unstable();
            Ok(users)
        }
    }
}
