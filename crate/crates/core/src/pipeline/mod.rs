//! Configuration, stage functions and the on-disk runner.

mod config;
mod run;
mod stages;

pub use config::{EvalConfig, JudgeConfig, Paths, PretrainConfig, RefineConfig, RunConfig, VocabInit};
pub use run::{describe, write_atomic, DirLock, Pipeline, Stage, StageStatus};
pub use stages::{
    encoder_config, initial_vocab, prepare, run_bench, run_cf, run_eval, run_experiment, run_infer, run_refine,
    run_train, Dataset, Experiment, Trained,
};
