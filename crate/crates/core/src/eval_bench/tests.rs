use std::collections::HashSet;

use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::Rng;

use super::*;
use crate::coldstart::Scorer;
use crate::dataset::{InteractionGraph, ItemClass, ItemContent, Tokenizer, TokenizerConfig, UNK_ID};
use crate::encoder::{build_prompt, EncoderConfig, EncoderModel, PROMPT_PREFIX, PROMPT_SUFFIX};
use crate::seed;

fn set(xs: &[usize]) -> HashSet<usize> {
    xs.iter().copied().collect()
}

#[test]
fn recall_cases() {
    let ranked: Vec<usize> = (0..10).collect();
    assert_eq!(recall_at_k(&ranked, &set(&[0, 1]), 5), Some(1.0));
    assert_eq!(recall_at_k(&ranked, &set(&[7, 8]), 5), Some(0.0));
    assert_eq!(recall_at_k(&ranked, &set(&[]), 5), None);
    // relevant at ranks 1, 4, 12 of a 12-long list
    let ranked: Vec<usize> = (0..12).collect();
    let r = recall_at_k(&ranked, &set(&[0, 3, 11]), 5).unwrap();
    assert!((r - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn ndcg_cases() {
    let ranked: Vec<usize> = (0..6).collect();
    assert_eq!(ndcg_at_k(&ranked, &set(&[0, 1, 2]), 5), Some(1.0));
    let v = ndcg_at_k(&ranked, &set(&[1]), 2).unwrap();
    assert!((v - 1.0 / 3f64.log2()).abs() < 1e-15);
    assert!((v - 0.6309).abs() < 1e-4);
    assert!(ndcg_at_k(&ranked, &set(&[1, 0]), 6).unwrap() == 1.0);
    assert!(ndcg_at_k(&ranked, &set(&[5, 0]), 6).unwrap() < 1.0);
}

#[test]
fn ndcg_matches_independent_recomputation() {
    let mut rng = seed::rng(1);
    for _ in 0..200 {
        let mut ranked: Vec<usize> = (0..20).collect();
        ranked.shuffle(&mut rng);
        let n_rel = rng.random_range(1..=20);
        let rel: HashSet<usize> = (0..n_rel).collect();
        let k = rng.random_range(1..=20);
        let gains: Vec<f64> = ranked.iter().map(|i| if rel.contains(i) { 1.0 } else { 0.0 }).collect();
        let dcg: f64 = gains.iter().take(k).enumerate().map(|(r, g)| (2f64.powf(*g) - 1.0) / (r as f64 + 2.0).log2()).sum();
        let mut ideal = gains.clone();
        ideal.sort_by(|a, b| b.partial_cmp(a).unwrap());
        let idcg: f64 = ideal.iter().take(k).enumerate().map(|(r, g)| (2f64.powf(*g) - 1.0) / (r as f64 + 2.0).log2()).sum();
        assert!((ndcg_at_k(&ranked, &rel, k).unwrap() - dcg / idcg).abs() < 1e-12);
    }
}

/// Warm items 0..30, cold items 30..50, 100 users.
fn eval_fixture(seed_value: u64) -> (InteractionGraph, Vec<(usize, usize)>, Vec<(usize, usize)>) {
    let mut rng = seed::rng(seed_value);
    let mut classes = vec![ItemClass::Warm; 30];
    classes.extend(std::iter::repeat_n(ItemClass::Cold, 20));
    let mut train = Vec::new();
    let mut warm_test = Vec::new();
    let mut cold_test = Vec::new();
    for u in 0..100 {
        let mut warm: Vec<usize> = (0..30).collect();
        warm.shuffle(&mut rng);
        train.extend(warm[..5].iter().map(|&i| (u, i)));
        if u % 7 != 0 {
            warm_test.extend(warm[5..7].iter().map(|&i| (u, i)));
        }
        let mut cold: Vec<usize> = (30..50).collect();
        cold.shuffle(&mut rng);
        cold_test.extend(cold[..3].iter().map(|&i| (u, i)));
    }
    let g = InteractionGraph::with_classes(
        (0..100).map(|u| format!("u{u}")).collect(),
        (0..50).map(|i| format!("i{i}")).collect(),
        classes,
        train,
    )
    .unwrap();
    (g, warm_test, cold_test)
}

fn random_scorer(g: &InteractionGraph, d: usize, rng: &mut seed::Rng) -> Scorer {
    let mut m = |r: usize| Array2::from_shape_simple_fn((r, d), || rng.random_range(-1.0..1.0));
    let users = m(g.n_users());
    let warm = m(g.n_warm());
    let cold = m(g.n_cold());
    Scorer::new(g, users, warm, cold).unwrap()
}

#[test]
fn oracle_embeddings_score_one() {
    let (g, warm_test, cold_test) = eval_fixture(2);
    let d = g.n_items();
    let mut users = Array2::zeros((g.n_users(), d));
    for &(u, i) in warm_test.iter().chain(&cold_test) {
        users[[u, i]] = 1.0;
    }
    let eye = Array2::<f64>::eye(d);
    let warm = eye.select(ndarray::Axis(0), g.warm_items());
    let cold = eye.select(ndarray::Axis(0), g.cold_items());
    let s = Scorer::new(&g, users, warm, cold).unwrap();
    let r = evaluate(&s, &g, &warm_test, &cold_test, 20).unwrap();
    for m in &r.splits {
        assert_eq!(m.recall, 1.0, "{}", m.split);
        assert_eq!(m.ndcg, 1.0, "{}", m.split);
    }
    let warm = r.split("warm").unwrap();
    assert_eq!(warm.users + warm.skipped_users, 100);
    assert_eq!(warm.skipped_users, 15);
}

#[test]
fn random_embeddings_hit_the_analytic_baseline() {
    let (g, warm_test, cold_test) = eval_fixture(3);
    // warm split: 25 unmasked candidates per user, K = 20
    let analytic = 20.0 / 25.0;
    let mut rng = seed::rng(4);
    let trials: Vec<f64> = (0..1000)
        .map(|_| {
            let s = random_scorer(&g, 8, &mut rng);
            evaluate(&s, &g, &warm_test, &cold_test, 20).unwrap().split("warm").unwrap().recall
        })
        .collect();
    let n = trials.len() as f64;
    let mean = trials.iter().sum::<f64>() / n;
    let sd = (trials.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    assert!((mean - analytic).abs() <= 3.0 * sd / n.sqrt(), "mean {mean} sd {sd}");
    for &t in &trials[..20] {
        assert!((t - analytic).abs() <= 3.0 * sd + 1e-12);
    }
}

#[test]
fn relabeling_items_leaves_report_unchanged() {
    let (g, warm_test, cold_test) = eval_fixture(5);
    let mut rng = seed::rng(6);
    let s = random_scorer(&g, 6, &mut rng);
    let base = evaluate(&s, &g, &warm_test, &cold_test, 20).unwrap();

    let mut perm: Vec<usize> = (0..50).collect();
    perm.shuffle(&mut rng);
    // new id of old item i is perm[i]
    let mut classes = vec![ItemClass::Warm; 50];
    for i in 0..50 {
        classes[perm[i]] = g.class(i);
    }
    let relabel = |pairs: &[(usize, usize)]| pairs.iter().map(|&(u, i)| (u, perm[i])).collect::<Vec<_>>();
    let g2 = InteractionGraph::with_classes(
        (0..100).map(|u| format!("u{u}")).collect(),
        (0..50).map(|i| format!("i{i}")).collect(),
        classes,
        relabel(g.interactions()),
    )
    .unwrap();
    let mut inv = vec![0; 50];
    for i in 0..50 {
        inv[perm[i]] = i;
    }
    let warm: Vec<usize> = g2.warm_items().to_vec();
    let cold: Vec<usize> = g2.cold_items().to_vec();
    let rows = |items: &[usize]| {
        Array2::from_shape_fn((items.len(), 6), |(r, k)| s.item_row(inv[items[r]])[k])
    };
    let users = Array2::from_shape_fn((100, 6), |(u, k)| s.user_row(u)[k]);
    let s2 = Scorer::new(&g2, users, rows(&warm), rows(&cold)).unwrap();
    let other = evaluate(&s2, &g2, &relabel(&warm_test), &relabel(&cold_test), 20).unwrap();
    assert_eq!(base, other);
}

#[test]
fn training_items_never_ranked() {
    let (g, _, _) = eval_fixture(7);
    let mut rng = seed::rng(8);
    let s = random_scorer(&g, 4, &mut rng);
    let all: Vec<usize> = (0..50).collect();
    for u in 0..100 {
        let ranked = rank_candidates(&s, &g, &all, u, 50);
        assert_eq!(ranked.len(), 50 - g.user_items(u).len());
        assert!(ranked.iter().all(|i| !g.user_items(u).contains(i)));
    }
}

#[test]
fn random_control_replaces_only_cold_rows() {
    let (g, _, _) = eval_fixture(9);
    let mut rng = seed::rng(10);
    let s = random_scorer(&g, 4, &mut rng);
    let c = random_control(&s, 0.1, 3);
    for u in 0..100 {
        assert_eq!(s.user_row(u), c.user_row(u));
    }
    for &i in g.warm_items() {
        assert_eq!(s.item_row(i), c.item_row(i));
    }
    assert_ne!(s.item_row(40), c.item_row(40));
}

#[test]
fn complexity_ratio_properties() {
    assert!((complexity_ratio(70.0, 70.0, 64.0, 1.0) - 1.0).abs() < 1e-15);
    let a = complexity_ratio(72.87, 273.69, 4096.0, 100.0);
    let b = complexity_ratio(72.87, 273.69, 4096.0, 200.0);
    assert!((b - 2.0 * a).abs() < 1e-9);
    let direct = (273.69f64.powi(2) + 273.69 * 4096.0) / (72.87f64.powi(2) + 72.87 * 4096.0) * 100.0;
    assert_eq!(a, direct);
}

struct JudgeFixture {
    graph: InteractionGraph,
    content: ItemContent,
    tokenizer: Tokenizer,
    encoder: EncoderModel,
}

fn judge_fixture() -> JudgeFixture {
    let texts: Vec<String> = (0..12)
        .map(|i| format!("graph neural item{i} learning with many words for item{i} and more filler text here"))
        .collect();
    let pairs: Vec<(usize, usize)> = (0..8).flat_map(|u| (0..12).filter(move |i| (i + u) % 3 == 0).map(move |i| (u, i))).collect();
    let graph = InteractionGraph::from_pairs(
        (0..8).map(|u| format!("u{u}")).collect(),
        (0..12).map(|i| format!("i{i}")).collect(),
        pairs,
    )
    .unwrap();
    let tokenizer = Tokenizer::build(
        texts.iter().map(String::as_str),
        &[PROMPT_PREFIX, PROMPT_SUFFIX, JUDGE_PREFIX, JUDGE_MIDDLE, JUDGE_SUFFIX],
        &TokenizerConfig { min_count: 1, ..Default::default() },
    );
    let encoder = EncoderModel::new(EncoderConfig {
        vocab_size: tokenizer.vocab_size(),
        dim: 16,
        layers: 1,
        adapter_rank: 2,
        ..Default::default()
    })
    .unwrap();
    JudgeFixture {
        graph,
        content: ItemContent::new(texts),
        tokenizer,
        encoder,
    }
}

#[test]
fn judgement_prompts_and_verdicts() {
    let f = judge_fixture();
    let judge = JudgeModel::new(&f.encoder, 96, 1).unwrap();
    let ctx = user_context(&f.graph, &f.content, 2);
    assert!(ctx.starts_with(f.content.get(*f.graph.user_items(2).last().unwrap()).unwrap()));
    let item = f.content.get(5).unwrap();
    let a = judge_pair(&judge, &f.tokenizer, &ctx, item).unwrap();
    let b = judge_pair(&judge, &f.tokenizer, &ctx, item).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.yes, a.p_yes >= 0.5);

    let p = build_judgement_prompt(&f.tokenizer, &ctx, item, 96).unwrap();
    assert_eq!(p.len(), 96);
    let dist = build_prompt(&f.tokenizer, item).unwrap();
    assert!(p.len() > dist.len());

    let empty = build_judgement_prompt(&f.tokenizer, "", item, 96).unwrap();
    let prefix = f.tokenizer.ids(JUDGE_PREFIX).len();
    assert_eq!(empty.ids()[prefix], UNK_ID);
    assert!(build_judgement_prompt(&f.tokenizer, "", item, 10).is_err());
}

#[test]
fn judging_an_item_costs_one_pass_per_candidate() {
    let f = judge_fixture();
    let judge = JudgeModel::new(&f.encoder, 96, 1).unwrap();
    let mut rng = seed::rng(2);
    let users = Array2::from_shape_simple_fn((8, 16), || rng.random_range(-1.0..1.0));
    let items = Array2::from_shape_simple_fn((12, 16), || rng.random_range(-1.0..1.0));
    let s = Scorer::new(&f.graph, users, items, Array2::zeros((0, 16))).unwrap();
    let top = select_candidates(CandidateRule::CfTopK, &s, 3, 5, 0).unwrap();
    assert_eq!(top.len(), 5);
    let rand_pick = select_candidates(CandidateRule::Random, &s, 3, 5, 9).unwrap();
    assert_eq!(rand_pick, select_candidates(CandidateRule::Random, &s, 3, 5, 9).unwrap());
    assert!(select_candidates(CandidateRule::Random, &s, 3, 9, 9).is_err());

    judge.encoder.reset_forward_count();
    let item = f.content.get(3).unwrap();
    for _ in 0..100 {
        judge_pair(&judge, &f.tokenizer, "graph", item).unwrap();
    }
    assert_eq!(judge.encoder.forward_count(), 100);
}

#[test]
fn bench_parity_with_equal_work() {
    let f = judge_fixture();
    let judge = JudgeModel::new(&f.encoder, 128, 1).unwrap();
    let vocab = crate::cf::random_user_vocab(8, 16, 1.0, 1);
    let prompts: Vec<_> = (0..2).map(|i| build_prompt(&f.tokenizer, f.content.get(i).unwrap()).unwrap()).collect();
    let judge_prompts: Vec<Vec<_>> = prompts.iter().map(|p| vec![p.clone()]).collect();
    let input = BenchInput {
        encoder: &f.encoder,
        vocab: &vocab,
        judge: &judge,
        dist_prompts: &prompts,
        judge_prompts: &judge_prompts,
    };
    let cfg = BenchConfig {
        k_cand: vec![1],
        items: 2,
        top_k: 5,
        ..Default::default()
    };
    let r = bench(&input, &cfg).unwrap();
    let row = r.row(1).unwrap();
    assert!((0.5..=2.0).contains(&row.speedup), "{}", row.speedup);
    assert_eq!(row.dist_passes_per_item, 1);
    assert_eq!(row.judge_passes_per_item, 1);
    assert!(row.dist_mean > 0.0 && row.judge_mean > 0.0);
    assert_eq!(r.l1, r.l2);
    assert!(r.to_kv().contains("k_cand.1.speedup="));
    assert!(BenchConfig { reps: 10, ..Default::default() }.validate().is_err());
}
