//! Full-ranking evaluation, the one-pair-per-pass judgement baseline, and
//! the inference timing harness.

mod bench;
mod judge;
mod metrics;

pub use bench::{bench, complexity_ratio, timer_resolution, BenchConfig, BenchInput, BenchResult, BenchRow};
pub use judge::{
    build_judgement_prompt, judge_pair, judge_tokens, select_candidates, user_context, CandidateRule,
    JudgeModel, Verdict, JUDGE_MIDDLE, JUDGE_PREFIX, JUDGE_SUFFIX,
};
pub use metrics::{evaluate, ndcg_at_k, random_control, rank_candidates, recall_at_k, MetricReport, SplitMetrics};

#[cfg(test)]
mod tests;
