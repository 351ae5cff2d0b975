use std::fs;
use std::path::Path;

use userdist::dataset::synthetic::{topic_corpus, TopicCorpusSpec};
use userdist::dataset::write_graph;
use userdist::pipeline::{describe, DirLock, Pipeline, RunConfig, Stage, StageStatus};
use userdist::Error;

fn small_config(dir: &Path) -> RunConfig {
    let corpus = topic_corpus(&TopicCorpusSpec {
        users: 60,
        items: 40,
        ..Default::default()
    })
    .unwrap();
    let interactions = dir.join("interactions.tsv");
    let content = dir.join("content.tsv");
    write_graph(&corpus.graph, &corpus.content, &interactions, &content).unwrap();
    let mut c = RunConfig::default();
    c.paths.interactions = interactions;
    c.paths.content = content;
    c.paths.out = dir.join("out");
    c.cf.dim = 8;
    c.cf.epochs = 5;
    c.encoder.dim = 8;
    c.encoder.layers = 1;
    c.encoder.adapter_rank = 2;
    c.encoder.adapter_alpha = 4.0;
    c.encoder.max_len = 32;
    c.tokenizer.max_len = 32;
    c.tokenizer.min_count = 1;
    c.train.max_epochs = 1;
    c.train.negatives_per_item = 8;
    c.bench.reps = 30;
    c.bench.warmup = 0;
    c.bench.k_cand = vec![1, 2];
    c.bench.items = 1;
    c.judge.max_len = 64;
    c
}

#[test]
fn rerun_is_a_no_op_and_force_reruns() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path())).unwrap();
    let first = p.run(&Stage::DEFAULT, false).unwrap();
    assert!(first.iter().all(|(_, s)| *s == StageStatus::Ran));
    let metrics = fs::read(p.artifact("metrics.txt")).unwrap();

    let second = p.run(&Stage::DEFAULT, false).unwrap();
    assert!(second.iter().all(|(_, s)| *s == StageStatus::UpToDate));

    let forced = p.run(&[Stage::Eval], true).unwrap();
    assert_eq!(forced, vec![(Stage::Eval, StageStatus::Ran)]);
    assert_eq!(fs::read(p.artifact("metrics.txt")).unwrap(), metrics);
}

#[test]
fn every_artifact_carries_hash_and_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path())).unwrap();
    p.run(&Stage::ALL, false).unwrap();
    for stage in Stage::ALL {
        for f in stage.outputs() {
            let text = describe(&p.artifact(f)).unwrap();
            assert!(text.contains(&format!("config_hash={}", p.config_hash())), "{f}: {text}");
            assert!(text.contains(&format!("stage={stage}")), "{f}: {text}");
        }
    }
}

#[test]
fn missing_upstream_names_the_stage() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path())).unwrap();
    p.run(&[Stage::Ingest], false).unwrap();
    match p.run(&[Stage::Train], false) {
        Err(Error::MissingArtifact { stage, .. }) => assert_eq!(stage, "cf"),
        other => panic!("expected a missing artifact, got {other:?}"),
    }
    let msg = p.run(&[Stage::Eval], false).unwrap_err().to_string();
    assert!(msg.contains("refine"), "{msg}");
}

#[test]
fn changed_config_is_refused_without_force() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    Pipeline::new(cfg.clone()).unwrap().run(&[Stage::Ingest], false).unwrap();

    let mut changed = cfg;
    changed.seed = 3;
    let p = Pipeline::new(changed).unwrap();
    assert!(matches!(p.run(&[Stage::Ingest], false), Err(Error::HashMismatch { .. })));
    assert_eq!(p.run(&[Stage::Ingest], true).unwrap(), vec![(Stage::Ingest, StageStatus::Ran)]);
}

#[test]
fn ingest_reports_the_graph() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path())).unwrap();
    p.run(&[Stage::Ingest], false).unwrap();
    let text = describe(&p.artifact("dataset.json")).unwrap();
    assert!(text.starts_with("dataset 60 users, 40 items (32 warm, 8 cold)"), "{text}");
}

#[test]
fn describe_reports_written_dims_and_rejects_truncation() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = small_config(dir.path());
    let p = Pipeline::new(cfg).unwrap();
    p.run(&[Stage::Ingest, Stage::Cf], false).unwrap();
    let ckpt = p.artifact("cf.ckpt");
    let text = describe(&ckpt).unwrap();
    assert!(text.starts_with("behavior embeddings 60×8 users, 32×8 warm items"), "{text}");

    let bytes = fs::read(&ckpt).unwrap();
    let cut = dir.path().join("cut.ckpt");
    fs::write(&cut, &bytes[..bytes.len() / 2]).unwrap();
    assert!(matches!(describe(&cut), Err(Error::Integrity(_))));

    let junk = dir.path().join("junk.bin");
    fs::write(&junk, [0xffu8, 0, 1, 2]).unwrap();
    assert!(matches!(describe(&junk), Err(Error::Integrity(_))));
}

#[test]
fn a_held_lock_blocks_a_second_run() {
    let dir = tempfile::tempdir().unwrap();
    let p = Pipeline::new(small_config(dir.path())).unwrap();
    fs::create_dir_all(p.out_dir()).unwrap();
    let held = DirLock::acquire(p.out_dir()).unwrap();
    assert!(matches!(p.run(&[Stage::Ingest], false), Err(Error::Locked(_))));
    drop(held);
    p.run(&[Stage::Ingest], false).unwrap();
}
