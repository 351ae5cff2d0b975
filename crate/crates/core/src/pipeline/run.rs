//! On-disk pipeline: every stage reads its inputs from the artifact
//! directory and writes its outputs there atomically.

use std::fmt;
use std::fs;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::config::RunConfig;
use super::stages::{self, Dataset};
use crate::cf::BehaviorEmbeddings;
use crate::checkpoint::{Checkpoint, MAGIC};
use crate::coldstart::{AugmentedInteractions, Scorer};
use crate::dataset::{load_graph, InteractionGraph, ItemClass, ItemContent, SplitResult, Tokenizer};
use crate::distribution::UserVocabulary;
use crate::encoder::{EncoderConfig, EncoderModel};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Stage {
    Ingest,
    Cf,
    Train,
    Infer,
    Refine,
    Eval,
    Bench,
}

pub const DATASET: &str = "dataset.json";
pub const SPLIT_REPORT: &str = "split_report.txt";
pub const CF_CKPT: &str = "cf.ckpt";
pub const ENCODER_CKPT: &str = "encoder.ckpt";
pub const VOCAB_CKPT: &str = "vocab.ckpt";
pub const TRAIN_LOG: &str = "train_log.txt";
pub const AUGMENTED: &str = "augmented.tsv";
pub const REFINED_CKPT: &str = "refined.ckpt";
pub const METRICS: &str = "metrics.txt";
pub const METRICS_TSV: &str = "metrics.tsv";
pub const METRICS_CONTROL: &str = "metrics_control.txt";
pub const BENCH: &str = "bench.txt";
pub const BENCH_TSV: &str = "bench.tsv";

impl Stage {
    pub const ALL: [Stage; 7] = [
        Stage::Ingest,
        Stage::Cf,
        Stage::Train,
        Stage::Infer,
        Stage::Refine,
        Stage::Eval,
        Stage::Bench,
    ];

    /// Stages that `run-all` executes when none are named.
    pub const DEFAULT: [Stage; 6] = [
        Stage::Ingest,
        Stage::Cf,
        Stage::Train,
        Stage::Infer,
        Stage::Refine,
        Stage::Eval,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Stage::Ingest => "ingest",
            Stage::Cf => "cf",
            Stage::Train => "train",
            Stage::Infer => "infer",
            Stage::Refine => "refine",
            Stage::Eval => "eval",
            Stage::Bench => "bench",
        }
    }

    pub fn outputs(self) -> &'static [&'static str] {
        match self {
            Stage::Ingest => &[DATASET, SPLIT_REPORT],
            Stage::Cf => &[CF_CKPT],
            Stage::Train => &[ENCODER_CKPT, VOCAB_CKPT, TRAIN_LOG],
            Stage::Infer => &[AUGMENTED],
            Stage::Refine => &[REFINED_CKPT],
            Stage::Eval => &[METRICS, METRICS_TSV, METRICS_CONTROL],
            Stage::Bench => &[BENCH, BENCH_TSV],
        }
    }

    /// Artifacts read, with the stage producing each.
    fn inputs(self) -> &'static [(Stage, &'static str)] {
        match self {
            Stage::Ingest => &[],
            Stage::Cf => &[(Stage::Ingest, DATASET)],
            Stage::Train => &[(Stage::Ingest, DATASET), (Stage::Cf, CF_CKPT)],
            Stage::Infer => &[(Stage::Ingest, DATASET), (Stage::Train, ENCODER_CKPT), (Stage::Train, VOCAB_CKPT)],
            Stage::Refine => &[(Stage::Ingest, DATASET), (Stage::Cf, CF_CKPT), (Stage::Infer, AUGMENTED)],
            Stage::Eval => &[(Stage::Ingest, DATASET), (Stage::Refine, REFINED_CKPT)],
            Stage::Bench => &[
                (Stage::Ingest, DATASET),
                (Stage::Train, ENCODER_CKPT),
                (Stage::Train, VOCAB_CKPT),
                (Stage::Refine, REFINED_CKPT),
            ],
        }
    }
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Stage {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Stage::ALL
            .into_iter()
            .find(|st| st.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown stage `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StageStatus {
    Ran,
    /// Same config and inputs as the stamped run.
    UpToDate,
}

/// Writes through a sibling temp file and a rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".tmp");
    let tmp = PathBuf::from(tmp);
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

/// Advisory lock on an artifact directory, released on drop.
pub struct DirLock {
    path: PathBuf,
}

impl DirLock {
    pub fn acquire(dir: &Path) -> Result<Self> {
        let path = dir.join(".lock");
        match fs::OpenOptions::new().write(true).create_new(true).open(&path) {
            Ok(mut f) => {
                let _ = writeln!(f, "pid={}", std::process::id());
                Ok(DirLock { path })
            }
            Err(e) if e.kind() == std::io::ErrorKind::AlreadyExists => Err(Error::Locked(dir.to_path_buf())),
            Err(e) => Err(Error::io(&path, e)),
        }
    }
}

impl Drop for DirLock {
    fn drop(&mut self) {
        let _ = fs::remove_file(&self.path);
    }
}

fn text_header(kind: &str, stage: Stage, hash: &str, seed: u64) -> String {
    format!("kind={kind}\nstage={stage}\nconfig_hash={hash}\nseed={seed}\n")
}

fn tsv_header(kind: &str, stage: Stage, hash: &str, seed: u64) -> String {
    format!("# kind={kind} stage={stage} config_hash={hash} seed={seed}\n")
}

#[derive(Serialize, Deserialize)]
struct DatasetFile {
    kind: String,
    stage: String,
    config_hash: String,
    seed: u64,
    user_ids: Vec<String>,
    item_ids: Vec<String>,
    texts: Vec<String>,
    tokenizer_words: Vec<String>,
    tokenizer_max_len: usize,
    split: SplitResult,
}

/// A pipeline bound to one config and artifact directory.
pub struct Pipeline {
    config: RunConfig,
    hash: String,
    out: PathBuf,
}

impl Pipeline {
    pub fn new(config: RunConfig) -> Result<Self> {
        config.validate()?;
        if config.paths.out.as_os_str().is_empty() {
            return Err(Error::Config("paths.out is not set".into()));
        }
        Ok(Pipeline {
            hash: config.hash(),
            out: config.paths.out.clone(),
            config,
        })
    }

    pub fn config_hash(&self) -> &str {
        &self.hash
    }

    pub fn out_dir(&self) -> &Path {
        &self.out
    }

    pub fn artifact(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }

    fn stamp_path(&self, stage: Stage) -> PathBuf {
        self.out.join(".stamps").join(stage.name())
    }

    fn input_files(&self, stage: Stage) -> Vec<PathBuf> {
        if stage == Stage::Ingest {
            vec![self.config.paths.interactions.clone(), self.config.paths.content.clone()]
        } else {
            stage.inputs().iter().map(|(_, f)| self.artifact(f)).collect()
        }
    }

    fn stamp(&self, stage: Stage) -> Result<String> {
        let mut h = Sha256::new();
        for f in self.input_files(stage) {
            let bytes = fs::read(&f).map_err(|e| Error::io(&f, e))?;
            h.update((bytes.len() as u64).to_le_bytes());
            h.update(&bytes);
        }
        Ok(format!("config_hash={}\ninputs={}\n", self.hash, hex::encode(h.finalize())))
    }

    fn check_inputs(&self, stage: Stage) -> Result<()> {
        if stage == Stage::Ingest {
            for p in self.input_files(stage) {
                if p.as_os_str().is_empty() || !p.exists() {
                    return Err(Error::Config(format!("input file {} does not exist", p.display())));
                }
            }
        }
        for (producer, name) in stage.inputs() {
            let p = self.artifact(name);
            if !p.exists() {
                return Err(Error::MissingArtifact {
                    stage: producer.name().into(),
                    path: p,
                });
            }
        }
        Ok(())
    }

    /// Runs `stages` in pipeline order under the directory lock.
    pub fn run(&self, stages: &[Stage], force: bool) -> Result<Vec<(Stage, StageStatus)>> {
        fs::create_dir_all(self.out.join(".stamps")).map_err(|e| Error::io(&self.out, e))?;
        let _lock = DirLock::acquire(&self.out)?;
        let mut order = stages.to_vec();
        order.sort();
        order.dedup();
        let mut done = Vec::with_capacity(order.len());
        for stage in order {
            done.push((stage, self.run_stage(stage, force)?));
        }
        Ok(done)
    }

    fn run_stage(&self, stage: Stage, force: bool) -> Result<StageStatus> {
        self.check_inputs(stage)?;
        let stamp = self.stamp(stage)?;
        let stamp_path = self.stamp_path(stage);
        if let Ok(old) = fs::read_to_string(&stamp_path) {
            let found = old
                .lines()
                .find_map(|l| l.strip_prefix("config_hash="))
                .unwrap_or("")
                .to_string();
            if found != self.hash && !force {
                return Err(Error::HashMismatch {
                    stage: stage.name().into(),
                    found,
                    expected: self.hash.clone(),
                });
            }
            let complete = stage.outputs().iter().all(|f| self.artifact(f).exists());
            if old == stamp && complete && !force {
                log::info!("stage {stage}: up to date");
                return Ok(StageStatus::UpToDate);
            }
        }
        log::info!("stage {stage}: running");
        match stage {
            Stage::Ingest => self.ingest()?,
            Stage::Cf => self.cf()?,
            Stage::Train => self.train()?,
            Stage::Infer => self.infer()?,
            Stage::Refine => self.refine()?,
            Stage::Eval => self.eval()?,
            Stage::Bench => self.bench()?,
        }
        write_atomic(&stamp_path, stamp.as_bytes())?;
        Ok(StageStatus::Ran)
    }

    fn write(&self, name: &str, bytes: &[u8]) -> Result<()> {
        write_atomic(&self.artifact(name), bytes)
    }

    fn read_checkpoint(&self, name: &str, kind: &str) -> Result<Checkpoint> {
        let p = self.artifact(name);
        let bytes = fs::read(&p).map_err(|e| Error::io(&p, e))?;
        let c = Checkpoint::from_bytes(&bytes).map_err(|e| Error::Integrity(format!("{}: {e}", p.display())))?;
        c.expect_kind(kind)?;
        Ok(c)
    }

    fn ingest(&self) -> Result<()> {
        let (full, content) = load_graph(&self.config.paths.interactions, &self.config.paths.content)?;
        let ds = stages::prepare(&self.config, &full, content)?;
        let file = DatasetFile {
            kind: "dataset".into(),
            stage: Stage::Ingest.name().into(),
            config_hash: self.hash.clone(),
            seed: self.config.seed,
            user_ids: full.user_ids().to_vec(),
            item_ids: full.item_ids().to_vec(),
            texts: ds.content.texts().to_vec(),
            tokenizer_words: ds.tokenizer.words().to_vec(),
            tokenizer_max_len: ds.tokenizer.max_len(),
            split: ds.split.clone(),
        };
        let json = serde_json::to_string(&file).map_err(|e| Error::Validation(e.to_string()))?;
        self.write(DATASET, json.as_bytes())?;
        let mut report = format!("stage={}\nconfig_hash={}\n", Stage::Ingest, self.hash);
        report.push_str(&ds.split.report(&full));
        self.write(SPLIT_REPORT, report.as_bytes())
    }

    pub fn load_dataset(&self) -> Result<Dataset> {
        let p = self.artifact(DATASET);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        let f: DatasetFile =
            serde_json::from_str(&text).map_err(|e| Error::Integrity(format!("{}: {e}", p.display())))?;
        let graph = InteractionGraph::with_classes(f.user_ids, f.item_ids, f.split.classes.clone(), f.split.train.iter().copied())?;
        Ok(Dataset {
            graph,
            content: ItemContent::new(f.texts),
            split: f.split,
            tokenizer: Tokenizer::from_words(f.tokenizer_words, f.tokenizer_max_len),
        })
    }

    fn cf(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let (emb, report) = stages::run_cf(&self.config, &ds)?;
        let mut c = Checkpoint::new("behavior", Stage::Cf.name(), &self.hash, self.config.seed).dims(
            emb.users.nrows(),
            emb.items.nrows(),
            emb.dim(),
        );
        c.push_matrix("users", emb.users);
        c.push_matrix("items", emb.items);
        c.push_text(
            "report",
            format!(
                "probe_loss_start={:.8}\nprobe_loss_end={:.8}\nepochs={}\n",
                report.probe_loss_start,
                report.probe_loss_end,
                report.epoch_losses.len()
            ),
        );
        self.write(CF_CKPT, &c.to_bytes())
    }

    pub fn load_cf(&self) -> Result<BehaviorEmbeddings> {
        let c = self.read_checkpoint(CF_CKPT, "behavior")?;
        BehaviorEmbeddings::new(c.matrix("users")?.clone(), c.matrix("items")?.clone())
    }

    fn train(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let raw = self.load_cf()?;
        let trained = stages::run_train(&self.config, &ds, &raw)?;
        let enc = &trained.encoder;
        let mut c = Checkpoint::new("encoder", Stage::Train.name(), &self.hash, self.config.seed).dims(0, 0, enc.dim());
        c.push_text(
            "config",
            serde_json::to_string(enc.config()).map_err(|e| Error::Validation(e.to_string()))?,
        );
        c.push_text("tokenizer", ds.tokenizer.words().join("\n"));
        for h in enc.all_parameters() {
            c.push_matrix(h.name(), enc.param(h).expect("listed handle").clone());
        }
        self.write(ENCODER_CKPT, &c.to_bytes())?;

        let z = trained.vocab.matrix();
        let mut v = Checkpoint::new("vocab", Stage::Train.name(), &self.hash, self.config.seed).dims(z.nrows(), 0, z.ncols());
        v.push_matrix("z", z.clone());
        self.write(VOCAB_CKPT, &v.to_bytes())?;

        let mut log = text_header("train_log", Stage::Train, &self.hash, self.config.seed);
        log.push_str(&trained.log_text());
        self.write(TRAIN_LOG, log.as_bytes())
    }

    pub fn load_encoder(&self) -> Result<EncoderModel> {
        let c = self.read_checkpoint(ENCODER_CKPT, "encoder")?;
        let config: EncoderConfig =
            serde_json::from_str(c.text("config")?).map_err(|e| Error::Integrity(format!("encoder config: {e}")))?;
        let mut enc = EncoderModel::new(config)?;
        for h in enc.all_parameters() {
            enc.set_param(h, c.matrix(&h.name())?.clone())?;
        }
        Ok(enc)
    }

    pub fn load_vocab(&self) -> Result<UserVocabulary> {
        let c = self.read_checkpoint(VOCAB_CKPT, "vocab")?;
        UserVocabulary::new(c.matrix("z")?.clone())
    }

    fn infer(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let enc = self.load_encoder()?;
        let vocab = self.load_vocab()?;
        let aug = stages::run_infer(&self.config, &ds, &enc, &vocab)?;
        let mut out = tsv_header("augmented", Stage::Infer, &self.hash, self.config.seed);
        out.push_str(&format!("# k={} pairs={} skipped={}\n", aug.k, aug.len(), aug.skipped.len()));
        out.push_str(&aug.to_tsv(&ds.graph));
        self.write(AUGMENTED, out.as_bytes())
    }

    pub fn load_augmented(&self, ds: &Dataset) -> Result<AugmentedInteractions> {
        let p = self.artifact(AUGMENTED);
        let text = fs::read_to_string(&p).map_err(|e| Error::io(&p, e))?;
        AugmentedInteractions::from_tsv(&text, &ds.graph, self.config.k, &p.display().to_string())
    }

    fn refine(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let raw = self.load_cf()?;
        let aug = self.load_augmented(&ds)?;
        let refined = stages::run_refine(&self.config, &ds, &raw, &aug)?;
        let s = &refined.scoring;
        let mut c = Checkpoint::new("refined", Stage::Refine.name(), &self.hash, self.config.seed).dims(
            s.users.nrows(),
            s.items.nrows(),
            s.dim(),
        );
        c.push_text("mode", refined.mode.name());
        c.push_matrix("users", s.users.clone());
        c.push_matrix("items", s.items.clone());
        c.push_matrix("raw_users", refined.raw.users.clone());
        c.push_matrix("raw_items", refined.raw.items.clone());
        self.write(REFINED_CKPT, &c.to_bytes())
    }

    pub fn load_scorer(&self, ds: &Dataset) -> Result<Scorer> {
        let c = self.read_checkpoint(REFINED_CKPT, "refined")?;
        let items = c.matrix("items")?;
        Scorer::new(
            &ds.graph,
            c.matrix("users")?.clone(),
            items.select(ndarray::Axis(0), ds.graph.warm_items()),
            items.select(ndarray::Axis(0), ds.graph.cold_items()),
        )
    }

    fn eval(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let scorer = self.load_scorer(&ds)?;
        let (metrics, control) = stages::run_eval(&self.config, &ds, &scorer)?;
        let seed = self.config.seed;
        let mut kv = text_header("metrics", Stage::Eval, &self.hash, seed);
        kv.push_str(&metrics.to_kv());
        self.write(METRICS, kv.as_bytes())?;
        let mut tsv = tsv_header("metrics", Stage::Eval, &self.hash, seed);
        tsv.push_str(&metrics.to_tsv());
        self.write(METRICS_TSV, tsv.as_bytes())?;
        let mut ctl = text_header("metrics_control", Stage::Eval, &self.hash, seed);
        ctl.push_str(&control.to_kv());
        self.write(METRICS_CONTROL, ctl.as_bytes())
    }

    fn bench(&self) -> Result<()> {
        let ds = self.load_dataset()?;
        let enc = self.load_encoder()?;
        let vocab = self.load_vocab()?;
        let scorer = self.load_scorer(&ds)?;
        let result = stages::run_bench(&self.config, &ds, &enc, &vocab, &scorer)?;
        let seed = self.config.seed;
        let mut kv = text_header("bench", Stage::Bench, &self.hash, seed);
        kv.push_str(&result.to_kv());
        self.write(BENCH, kv.as_bytes())?;
        let mut tsv = tsv_header("bench", Stage::Bench, &self.hash, seed);
        tsv.push_str(&result.to_tsv());
        self.write(BENCH_TSV, tsv.as_bytes())
    }
}

fn header_fields(text: &str) -> Vec<(String, String)> {
    let mut out = Vec::new();
    for line in text.lines().take(12) {
        let line = line.strip_prefix("# ").unwrap_or(line);
        for field in line.split(' ') {
            if let Some((k, v)) = field.split_once('=') {
                if !k.is_empty() && !k.contains('\t') {
                    out.push((k.to_string(), v.to_string()));
                }
            }
        }
    }
    out
}

/// Human-readable summary of any artifact the pipeline writes.
pub fn describe(path: &Path) -> Result<String> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.starts_with(MAGIC) || (bytes.len() < MAGIC.len() && MAGIC.starts_with(&bytes)) {
        return Ok(Checkpoint::from_bytes(&bytes)?.describe());
    }
    let text = std::str::from_utf8(&bytes).map_err(|_| Error::Integrity("unrecognized magic".into()))?;
    if text.starts_with('{') {
        let f: DatasetFile =
            serde_json::from_str(text).map_err(|e| Error::Integrity(format!("dataset file is damaged: {e}")))?;
        let cold = f.split.classes.iter().filter(|c| **c == ItemClass::Cold).count();
        return Ok(format!(
            "dataset {} users, {} items ({} warm, {} cold), {} training interactions\nkind={}\nstage={}\nseed={}\nconfig_hash={}\n",
            f.user_ids.len(),
            f.item_ids.len(),
            f.item_ids.len() - cold,
            cold,
            f.split.train.len(),
            f.kind,
            f.stage,
            f.seed,
            f.config_hash
        ));
    }
    let fields = header_fields(text);
    let get = |k: &str| fields.iter().find(|(key, _)| key == k).map(|(_, v)| v.as_str());
    match (get("kind"), get("config_hash")) {
        (Some(kind), Some(hash)) => Ok(format!(
            "{kind} report, {} lines\nkind={kind}\nstage={}\nseed={}\nconfig_hash={hash}\n",
            text.lines().count(),
            get("stage").unwrap_or("?"),
            get("seed").unwrap_or("?"),
        )),
        _ => Err(Error::Integrity(format!("{}: unrecognized magic", path.display()))),
    }
}
