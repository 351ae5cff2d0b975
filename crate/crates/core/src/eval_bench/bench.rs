use std::fmt::Write as _;
use std::hint::black_box;
use std::time::{Duration, Instant};

use serde::{Deserialize, Serialize};

use super::judge::{judge_tokens, JudgeModel};
use crate::coldstart::top_k_users;
use crate::dataset::TokenSequence;
use crate::distribution::{predict_distribution, UserVocabulary};
use crate::encoder::EncoderModel;
use crate::error::{Error, Result};

/// Predicted judgement / distribution cost per item:
/// `(L2² + L2·d) / (L1² + L1·d) · K_cand`.
pub fn complexity_ratio(l1: f64, l2: f64, d: f64, k_cand: f64) -> f64 {
    (l2 * l2 + l2 * d) / (l1 * l1 + l1 * d) * k_cand
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BenchConfig {
    pub reps: usize,
    pub warmup: usize,
    pub k_cand: Vec<usize>,
    /// Items sampled for timing; repetitions cycle through them.
    pub items: usize,
    /// Users kept from each predicted distribution.
    pub top_k: usize,
}

impl Default for BenchConfig {
    fn default() -> Self {
        BenchConfig {
            reps: 30,
            warmup: 3,
            k_cand: vec![10, 50, 100],
            items: 4,
            top_k: 20,
        }
    }
}

impl BenchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.reps < 30 {
            return Err(Error::Config(format!("bench.reps must be ≥ 30, got {}", self.reps)));
        }
        if self.k_cand.is_empty() || self.k_cand.contains(&0) {
            return Err(Error::Config("bench.k_cand needs positive values".into()));
        }
        if self.items == 0 || self.top_k == 0 {
            return Err(Error::Config("bench.items and bench.top_k must be positive".into()));
        }
        Ok(())
    }
}

/// Pre-tokenized inputs; tokenization is outside the timed region.
pub struct BenchInput<'a> {
    pub encoder: &'a EncoderModel,
    pub vocab: &'a UserVocabulary,
    pub judge: &'a JudgeModel,
    /// One distribution prompt per sampled item.
    pub dist_prompts: &'a [TokenSequence],
    /// Per sampled item, one judgement prompt per candidate user (at least
    /// the largest `K_cand`).
    pub judge_prompts: &'a [Vec<TokenSequence>],
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchRow {
    pub k_cand: usize,
    /// Seconds per item.
    pub dist_mean: f64,
    pub dist_std: f64,
    pub judge_mean: f64,
    pub judge_std: f64,
    pub speedup: f64,
    pub predicted: f64,
    pub reps: usize,
    pub dist_inner: usize,
    pub judge_inner: usize,
    pub dist_passes_per_item: u64,
    pub judge_passes_per_item: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchResult {
    pub l1: f64,
    pub l2: f64,
    pub dim: usize,
    pub threads: usize,
    pub timer_resolution: f64,
    pub rows: Vec<BenchRow>,
}

impl BenchResult {
    pub fn row(&self, k_cand: usize) -> Option<&BenchRow> {
        self.rows.iter().find(|r| r.k_cand == k_cand)
    }

    pub fn to_kv(&self) -> String {
        let mut s = String::new();
        writeln!(s, "l1={:.2}", self.l1).unwrap();
        writeln!(s, "l2={:.2}", self.l2).unwrap();
        writeln!(s, "d={}", self.dim).unwrap();
        writeln!(s, "threads={}", self.threads).unwrap();
        writeln!(s, "timer_resolution_s={:.3e}", self.timer_resolution).unwrap();
        for r in &self.rows {
            let p = format!("k_cand.{}", r.k_cand);
            writeln!(s, "{p}.distribution_mean_s={:.6e}", r.dist_mean).unwrap();
            writeln!(s, "{p}.distribution_std_s={:.6e}", r.dist_std).unwrap();
            writeln!(s, "{p}.judgement_mean_s={:.6e}", r.judge_mean).unwrap();
            writeln!(s, "{p}.judgement_std_s={:.6e}", r.judge_std).unwrap();
            writeln!(s, "{p}.speedup={:.3}", r.speedup).unwrap();
            writeln!(s, "{p}.predicted_ratio={:.3}", r.predicted).unwrap();
            writeln!(s, "{p}.reps={}", r.reps).unwrap();
            writeln!(s, "{p}.distribution_passes_per_item={}", r.dist_passes_per_item).unwrap();
            writeln!(s, "{p}.judgement_passes_per_item={}", r.judge_passes_per_item).unwrap();
        }
        s
    }

    pub fn to_tsv(&self) -> String {
        let mut s = String::from(
            "k_cand\tl1\tl2\td\tdistribution_mean_s\tdistribution_std_s\tjudgement_mean_s\tjudgement_std_s\tspeedup\tpredicted_ratio\treps\n",
        );
        for r in &self.rows {
            writeln!(
                s,
                "{}\t{:.2}\t{:.2}\t{}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.6e}\t{:.3}\t{:.3}\t{}",
                r.k_cand, self.l1, self.l2, self.dim, r.dist_mean, r.dist_std, r.judge_mean, r.judge_std, r.speedup, r.predicted, r.reps
            )
            .unwrap();
        }
        s
    }

    pub fn summary_table(&self) -> String {
        let mut s = format!("L1={:.1} L2={:.1} d={} threads={}\n", self.l1, self.l2, self.dim, self.threads);
        writeln!(s, "{:>7} {:>12} {:>12} {:>9} {:>10}", "K_cand", "distrib ms", "judge ms", "speedup", "predicted").unwrap();
        for r in &self.rows {
            writeln!(
                s,
                "{:>7} {:>12.3} {:>12.3} {:>9.2} {:>10.2}",
                r.k_cand,
                r.dist_mean * 1e3,
                r.judge_mean * 1e3,
                r.speedup,
                r.predicted
            )
            .unwrap();
        }
        s
    }
}

/// Smallest nonzero step the monotonic clock reports, in seconds.
pub fn timer_resolution() -> f64 {
    let mut best = Duration::MAX;
    for _ in 0..200 {
        let a = Instant::now();
        let mut b = Instant::now();
        while b == a {
            b = Instant::now();
        }
        best = best.min(b - a);
    }
    best.as_secs_f64()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - mean) * (x - mean)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (mean, var.sqrt())
}

fn distribution_item(input: &BenchInput<'_>, item: usize, top_k: usize) -> Result<()> {
    let h = input.encoder.encode(&input.dist_prompts[item])?;
    let dist = predict_distribution(&h, input.vocab)?;
    black_box(top_k_users(&dist, top_k.min(dist.n_users()))?);
    Ok(())
}

fn judgement_item(input: &BenchInput<'_>, item: usize, k_cand: usize) -> Result<()> {
    for prompt in &input.judge_prompts[item][..k_cand] {
        black_box(judge_tokens(input.judge, prompt)?);
    }
    Ok(())
}

/// Per-item seconds over `reps` samples of `inner` calls each; `inner`
/// grows until the clock resolution is under 1% of a sample.
fn time_samples(
    reps: usize,
    warmup: usize,
    items: usize,
    resolution: f64,
    mut run: impl FnMut(usize) -> Result<()>,
) -> Result<(Vec<f64>, usize)> {
    for w in 0..warmup {
        run(w % items)?;
    }
    let mut inner = 1usize;
    loop {
        let t = Instant::now();
        for k in 0..inner {
            run(k % items)?;
        }
        let elapsed = t.elapsed().as_secs_f64();
        if resolution <= 0.01 * elapsed || inner >= 1 << 20 {
            break;
        }
        inner *= 2;
    }
    let mut samples = Vec::with_capacity(reps);
    for rep in 0..reps {
        let t = Instant::now();
        for k in 0..inner {
            run((rep + k) % items)?;
        }
        samples.push(t.elapsed().as_secs_f64() / inner as f64);
    }
    Ok((samples, inner))
}

/// Times distribution inference (one pass + softmax + top-K) against
/// judgement inference (`K_cand` passes + threshold) per item on the
/// current thread.
pub fn bench(input: &BenchInput<'_>, config: &BenchConfig) -> Result<BenchResult> {
    config.validate()?;
    let items = input.dist_prompts.len().min(config.items);
    if items == 0 || input.judge_prompts.len() < items {
        return Err(Error::Contract("bench needs prompts for at least one item".into()));
    }
    let max_k = *config.k_cand.iter().max().expect("nonempty");
    if input.judge_prompts[..items].iter().any(|p| p.len() < max_k) {
        return Err(Error::Contract(format!("every item needs {max_k} judgement prompts")));
    }
    let l1 = input.dist_prompts[..items].iter().map(|p| p.len() as f64).sum::<f64>() / items as f64;
    let used: Vec<&TokenSequence> = input.judge_prompts[..items]
        .iter()
        .flat_map(|p| p[..max_k].iter())
        .collect();
    let l2 = used.iter().map(|p| p.len() as f64).sum::<f64>() / used.len() as f64;
    let d = input.encoder.dim();
    let resolution = timer_resolution();

    let mut rows = Vec::with_capacity(config.k_cand.len());
    for &k_cand in &config.k_cand {
        input.encoder.reset_forward_count();
        distribution_item(input, 0, config.top_k)?;
        let dist_passes = input.encoder.forward_count();
        input.judge.encoder.reset_forward_count();
        judgement_item(input, 0, k_cand)?;
        let judge_passes = input.judge.encoder.forward_count();

        let (dist, dist_inner) = time_samples(config.reps, config.warmup, items, resolution, |i| {
            distribution_item(input, i, config.top_k)
        })?;
        let (judge, judge_inner) = time_samples(config.reps, config.warmup, items, resolution, |i| {
            judgement_item(input, i, k_cand)
        })?;
        let (dist_mean, dist_std) = mean_std(&dist);
        let (judge_mean, judge_std) = mean_std(&judge);
        let row = BenchRow {
            k_cand,
            dist_mean,
            dist_std,
            judge_mean,
            judge_std,
            speedup: judge_mean / dist_mean,
            predicted: complexity_ratio(l1, l2, d as f64, k_cand as f64),
            reps: config.reps,
            dist_inner,
            judge_inner,
            dist_passes_per_item: dist_passes,
            judge_passes_per_item: judge_passes,
        };
        log::info!(
            "bench k_cand={k_cand}: distribution {:.3} ms, judgement {:.3} ms, speedup {:.2}, predicted {:.2}",
            dist_mean * 1e3,
            judge_mean * 1e3,
            row.speedup,
            row.predicted
        );
        rows.push(row);
    }
    Ok(BenchResult {
        l1,
        l2,
        dim: d,
        threads: 1,
        timer_resolution: resolution,
        rows,
    })
}
