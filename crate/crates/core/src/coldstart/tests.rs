use ndarray::{array, Array1, Array2};
use proptest::prelude::*;
use rand::seq::{IndexedRandom, SliceRandom};
use rand::Rng;

use super::*;
use crate::cf::{self, BehaviorEmbeddings, Bipartite, CfConfig, FrozenRows};
use crate::dataset::{InteractionGraph, ItemClass, ItemContent, Tokenizer, TokenizerConfig};
use crate::distribution::{softmax, UserVocabulary};
use crate::encoder::{EncoderConfig, EncoderModel, PROMPT_PREFIX, PROMPT_SUFFIX};
use crate::seed;

fn full_sort(values: &[f64], k: usize) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&a, &b| values[b].partial_cmp(&values[a]).unwrap().then(a.cmp(&b)));
    idx.truncate(k);
    idx
}

#[test]
fn top_k_edge_cases() {
    let d = softmax(array![0.1, 2.0, -1.0, 0.5]);
    assert_eq!(top_k_users(&d, 4).unwrap(), vec![1, 3, 0, 2]);
    let uniform = softmax(Array1::zeros(7));
    assert_eq!(top_k_users(&uniform, 3).unwrap(), vec![0, 1, 2]);
    assert!(top_k_users(&uniform, 0).is_err());
    assert!(top_k_users(&uniform, 8).is_err());
}

#[test]
fn top_k_matches_full_sort_on_large_distributions() {
    let mut rng = seed::rng(1);
    for _ in 0..50 {
        let l = Array1::from_shape_simple_fn(1000, || rng.random_range(-3.0..3.0));
        let d = softmax(l);
        let probs = d.probs().to_vec();
        assert_eq!(top_k_users(&d, 20).unwrap(), full_sort(&probs, 20));
    }
}

proptest! {
    #[test]
    fn top_k_prefix_monotone(l in prop::collection::vec(-2i32..2, 1..30)) {
        // integer logits force plenty of ties
        let d = softmax(Array1::from_iter(l.iter().map(|&x| x as f64)));
        for k in 1..d.n_users() {
            let a = top_k_users(&d, k).unwrap();
            let b = top_k_users(&d, k + 1).unwrap();
            prop_assert_eq!(&a[..], &b[..k]);
        }
        let probs = d.probs().to_vec();
        prop_assert_eq!(top_k_users(&d, d.n_users()).unwrap(), full_sort(&probs, d.n_users()));
    }
}

#[test]
fn prob_formatting() {
    assert_eq!(format_prob(0.5), "0.50000000");
    assert_eq!(format_prob(0.0123456789), "0.012345679");
    assert_eq!(format_prob(1.0), "1.0000000");
    assert_eq!(format_prob(3.2e-5), "0.000032000000");
}

struct Fixture {
    graph: InteractionGraph,
    content: ItemContent,
    tokenizer: Tokenizer,
    encoder: EncoderModel,
    vocab: UserVocabulary,
}

fn fixture(n_users: usize, n_cold: usize) -> Fixture {
    let n_items = 4 + n_cold;
    let mut classes = vec![ItemClass::Warm; 4];
    classes.extend(std::iter::repeat_n(ItemClass::Cold, n_cold));
    let pairs: Vec<(usize, usize)> = (0..n_users).map(|u| (u, u % 4)).collect();
    let graph = InteractionGraph::with_classes(
        (0..n_users).map(|u| format!("user{u}")).collect(),
        (0..n_items).map(|i| format!("item{i}")).collect(),
        classes,
        pairs,
    )
    .unwrap();
    let texts: Vec<String> = (0..n_items).map(|i| format!("alpha beta word{}", i % 3)).collect();
    let tokenizer = Tokenizer::build(
        texts.iter().map(String::as_str),
        &[PROMPT_PREFIX, PROMPT_SUFFIX],
        &TokenizerConfig { min_count: 1, ..Default::default() },
    );
    let encoder = EncoderModel::new(EncoderConfig {
        vocab_size: tokenizer.vocab_size(),
        dim: 8,
        layers: 1,
        adapter_rank: 2,
        ..Default::default()
    })
    .unwrap();
    let vocab = cf::random_user_vocab(n_users, 8, 1.0, 3);
    Fixture {
        graph,
        content: ItemContent::new(texts),
        tokenizer,
        encoder,
        vocab,
    }
}

fn generate(f: &Fixture, cold: &[usize], k: usize) -> AugmentedInteractions {
    generate_interactions(&f.graph, cold, &f.content, &f.tokenizer, &f.encoder, &f.vocab, k).unwrap()
}

#[test]
fn generation_counts_and_forward_passes() {
    let f = fixture(30, 5);
    assert!(generate(&f, &[], 20).is_empty());
    f.encoder.reset_forward_count();
    let aug = generate(&f, f.graph.cold_items(), 20);
    assert_eq!(aug.len(), 100);
    assert_eq!(f.encoder.forward_count(), 5);
    for &c in f.graph.cold_items() {
        let users: Vec<_> = aug.pairs().iter().filter(|p| p.item == c).map(|p| p.user).collect();
        assert_eq!(users.len(), 20);
    }

    let small = fixture(6, 2);
    assert_eq!(generate(&small, small.graph.cold_items(), 20).len(), 12);
    assert!(generate_interactions(&f.graph, &[0], &f.content, &f.tokenizer, &f.encoder, &f.vocab, 3).is_err());
}

#[test]
fn generation_ignores_input_order_and_is_greedy() {
    let f = fixture(25, 6);
    let mut order = f.graph.cold_items().to_vec();
    let a = generate(&f, &order, 7);
    order.reverse();
    order.shuffle(&mut seed::rng(4));
    let b = generate(&f, &order, 7);
    assert_eq!(a, b);

    for &c in f.graph.cold_items() {
        let h = f.encoder.encode(&crate::encoder::build_prompt(&f.tokenizer, f.content.get(c).unwrap()).unwrap()).unwrap();
        let dist = crate::distribution::predict_distribution(&h, &f.vocab).unwrap();
        let chosen: Vec<_> = a.pairs().iter().filter(|p| p.item == c).collect();
        let min_chosen = chosen.iter().map(|p| p.prob).fold(f64::INFINITY, f64::min);
        for u in 0..25 {
            if !chosen.iter().any(|p| p.user == u) {
                assert!(dist.prob(u) <= min_chosen);
            }
        }
        for (r, p) in chosen.iter().enumerate() {
            assert_eq!(p.rank, r + 1);
            assert_eq!(p.prob, dist.prob(p.user));
        }
    }
}

#[test]
fn missing_content_is_skipped() {
    let mut f = fixture(10, 3);
    let texts: Vec<String> = f.content.texts()[..5].to_vec();
    f.content = ItemContent::new(texts);
    let aug = generate(&f, f.graph.cold_items(), 4);
    assert_eq!(aug.skipped, vec![5, 6]);
    assert_eq!(aug.len(), 4);
}

#[test]
fn tsv_round_trip() {
    let f = fixture(12, 3);
    let aug = generate(&f, f.graph.cold_items(), 4);
    let text = aug.to_tsv(&f.graph);
    let first = text.lines().next().unwrap();
    let cols: Vec<&str> = first.split('\t').collect();
    assert_eq!(cols.len(), 4);
    assert!(cols[0].starts_with("user") && cols[1] == "item4" && cols[2] == "1");
    let back = AugmentedInteractions::from_tsv(&format!("# header\n{text}"), &f.graph, 4, "aug.tsv").unwrap();
    assert_eq!(back.len(), aug.len());
    for (a, b) in aug.pairs().iter().zip(back.pairs()) {
        assert_eq!((a.user, a.item, a.rank), (b.user, b.item, b.rank));
        assert!((a.prob - b.prob).abs() <= 1e-7 * a.prob);
    }
    assert!(AugmentedInteractions::from_tsv("user0\titem0\t1\t0.5\n", &f.graph, 4, "x").is_err());
}

/// Warm items 0..4 with overlapping audiences, cold items 4..6.
fn refine_graph() -> InteractionGraph {
    let mut pairs = Vec::new();
    for u in 0..40 {
        pairs.push((u, u % 4));
        pairs.push((u, (u / 10) % 4));
    }
    let mut classes = vec![ItemClass::Warm; 4];
    classes.extend([ItemClass::Cold, ItemClass::Cold]);
    InteractionGraph::with_classes(
        (0..40).map(|u| format!("u{u}")).collect(),
        (0..6).map(|i| format!("i{i}")).collect(),
        classes,
        pairs,
    )
    .unwrap()
}

fn backbone(seed_value: u64) -> CfConfig {
    CfConfig {
        dim: 8,
        epochs: 40,
        propagation_layers: 1,
        learning_rate: 0.05,
        seed: seed_value,
        ..Default::default()
    }
}

fn pairs_for(item: usize, users: impl IntoIterator<Item = usize>) -> AugmentedInteractions {
    let pairs = users
        .into_iter()
        .enumerate()
        .map(|(r, user)| SyntheticPair { user, item, rank: r + 1, prob: 0.1 })
        .collect();
    AugmentedInteractions::new(10, pairs, Vec::new()).unwrap()
}

#[test]
fn cold_only_keeps_warm_rows() {
    let g = refine_graph();
    let cfg = backbone(1);
    let (emb, _) = cf::train_cf(&g, &cfg).unwrap();
    let aug = pairs_for(4, 0..10);
    let out = refine_embeddings(&g, &aug, &emb, &cfg, RefineMode::ColdOnly).unwrap();
    let warm_after = out.raw.items.select(ndarray::Axis(0), g.warm_items());
    assert_eq!(cf::BehaviorEmbeddings::new(out.raw.users.clone(), warm_after).unwrap().checksum(), emb.checksum());
    let full = refine_embeddings(&g, &aug, &emb, &cfg, RefineMode::FullUpdate).unwrap();
    assert_ne!(full.raw.users, emb.users);
}

#[test]
fn synthetic_audience_pulls_cold_row_toward_its_warm_twin() {
    let g = refine_graph();
    let mut wins = 0;
    for s in 0..10 {
        let cfg = backbone(s);
        let (emb, _) = cf::train_cf(&g, &cfg).unwrap();
        let w = 1;
        let aug = pairs_for(4, g.item_users(w).to_vec());
        let out = refine_embeddings(&g, &aug, &emb, &cfg, RefineMode::FullUpdate).unwrap();
        let cold = out.scoring.items.row(4);
        let twin = cf::row_cosine(cold, out.scoring.items.row(w));
        let mut rng = seed::rng(100 + s);
        let other = *[0usize, 2, 3].choose(&mut rng).unwrap();
        let rand_sim = cf::row_cosine(cold, out.scoring.items.row(other));
        if twin > rand_sim {
            wins += 1;
        }
    }
    assert!(wins >= 9, "{wins}/10");
}

#[test]
fn empty_augmentation_reduces_to_retraining() {
    let g = refine_graph();
    let cfg = backbone(2);
    let (emb, _) = cf::train_cf(&g, &cfg).unwrap();
    let out = refine_embeddings(&g, &AugmentedInteractions::default(), &emb, &cfg, RefineMode::FullUpdate).unwrap();

    let mut rng = seed::labeled_rng(cfg.seed, "refine/cold-init");
    let cold = cf::normal_matrix(2, 8, cfg.init_std, &mut rng);
    let mut items = Array2::zeros((6, 8));
    for i in 0..4 {
        items.row_mut(i).assign(&emb.items.row(i));
    }
    for c in 0..2 {
        items.row_mut(4 + c).assign(&cold.row(c));
    }
    let init = BehaviorEmbeddings::new(emb.users.clone(), items).unwrap();
    let bip = Bipartite::new(40, 6, g.interactions().iter().copied());
    let (plain, _) = cf::fit_bpr(&bip, init, &cfg, &FrozenRows::default()).unwrap();
    assert_eq!(out.raw, plain);
    assert_eq!(out.raw.items.row(5), cold.row(1));
}

#[test]
fn recommend_dispatches_by_class() {
    let g = refine_graph();
    let users = Array2::from_shape_fn((40, 4), |(u, k)| (u + k) as f64 * 0.1);
    let warm = Array2::from_elem((4, 4), 1.0);
    let cold = Array2::from_elem((2, 4), -2.0);
    let s = Scorer::new(&g, users.clone(), warm, cold).unwrap();
    let sum: f64 = users.row(3).sum();
    assert!((recommend(&s, 3, 0).unwrap() - sum).abs() < 1e-12);
    assert!((recommend(&s, 3, 5).unwrap() + 2.0 * sum).abs() < 1e-12);
    assert!(recommend(&s, 40, 0).is_err());
    assert!(recommend(&s, 0, 6).is_err());

    let zero_user = Scorer::new(&g, Array2::zeros((40, 4)), Array2::from_elem((4, 4), 3.0), Array2::from_elem((2, 4), 5.0)).unwrap();
    for i in 0..6 {
        assert_eq!(recommend(&zero_user, 7, i).unwrap(), 0.0);
    }

    let mut rng = seed::rng(5);
    let u = Array2::from_shape_simple_fn((40, 4), || rng.random_range(-1.0..1.0));
    let w = Array2::from_shape_simple_fn((4, 4), || rng.random_range(-1.0..1.0));
    let c = Array2::from_shape_simple_fn((2, 4), || rng.random_range(-1.0..1.0));
    let s = Scorer::new(&g, u.clone(), w, c.clone()).unwrap();
    let want: f64 = (0..4).map(|k| u[[9, k]] * c[[1, k]]).sum();
    assert!((recommend(&s, 9, 5).unwrap() - want).abs() < 1e-12);
}
