use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::cf::CfConfig;
use crate::coldstart::RefineMode;
use crate::dataset::{SplitSpec, TokenizerConfig};
use crate::distribution::TrainConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};
use crate::eval_bench::BenchConfig;
use crate::seed::derive_seed;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum VocabInit {
    /// `z_u ← e_u` from the CF backbone.
    #[default]
    Collaborative,
    /// Seeded normal rows with the entry scale of the collaborative rows.
    Random,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(deny_unknown_fields, default)]
pub struct Paths {
    /// `user_id<TAB>item_id` per line.
    pub interactions: PathBuf,
    /// `item_id<TAB>text` per line.
    pub content: PathBuf,
    /// Artifact directory.
    pub out: PathBuf,
}

/// Optional first phase that trains the whole encoder before the base is
/// frozen for adapter training.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PretrainConfig {
    pub epochs: usize,
    pub learning_rate: f64,
}

impl Default for PretrainConfig {
    fn default() -> Self {
        PretrainConfig {
            epochs: 0,
            learning_rate: 1e-3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RefineConfig {
    pub mode: RefineMode,
    /// Overrides `cf.epochs` for the refit.
    pub epochs: Option<usize>,
}

impl Default for RefineConfig {
    fn default() -> Self {
        RefineConfig {
            mode: RefineMode::FullUpdate,
            epochs: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalConfig {
    pub k: usize,
    /// Scale of the random cold rows in the control run.
    pub control_std: f64,
}

impl Default for EvalConfig {
    fn default() -> Self {
        EvalConfig {
            k: 20,
            control_std: 0.1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct JudgeConfig {
    pub max_len: usize,
}

impl Default for JudgeConfig {
    fn default() -> Self {
        JudgeConfig { max_len: 272 }
    }
}

/// Everything one pipeline run needs. Module `seed` fields are overwritten
/// from the global seed by [`RunConfig::resolved`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub seed: u64,
    /// Synthetic users kept per cold item.
    pub k: usize,
    pub vocab_init: VocabInit,
    pub paths: Paths,
    pub split: SplitSpec,
    pub tokenizer: TokenizerConfig,
    pub cf: CfConfig,
    pub encoder: EncoderConfig,
    pub pretrain: PretrainConfig,
    pub train: TrainConfig,
    pub refine: RefineConfig,
    pub eval: EvalConfig,
    pub judge: JudgeConfig,
    pub bench: BenchConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            seed: 0,
            k: 20,
            vocab_init: VocabInit::Collaborative,
            paths: Paths::default(),
            split: SplitSpec::default(),
            tokenizer: TokenizerConfig::default(),
            cf: CfConfig::default(),
            encoder: EncoderConfig::default(),
            pretrain: PretrainConfig::default(),
            train: TrainConfig::default(),
            refine: RefineConfig::default(),
            eval: EvalConfig::default(),
            judge: JudgeConfig::default(),
            bench: BenchConfig::default(),
        }
    }
}

impl RunConfig {
    /// Parses TOML; relative paths are taken relative to `base`.
    pub fn from_toml(text: &str, base: Option<&Path>) -> Result<Self> {
        let mut cfg: RunConfig = toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        if let Some(base) = base {
            for p in [&mut cfg.paths.interactions, &mut cfg.paths.content, &mut cfg.paths.out] {
                if !p.as_os_str().is_empty() && p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text, path.parent())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Per-stage seeds derived from the global seed.
    pub fn resolved(&self) -> RunConfig {
        let mut c = self.clone();
        let s = self.seed;
        c.split.seed = derive_seed(s, "split");
        c.cf.seed = derive_seed(s, "cf");
        c.encoder.seed = derive_seed(s, "encoder");
        c.train.seed = derive_seed(s, "train");
        c
    }

    pub fn stage_seed(&self, label: &str) -> u64 {
        derive_seed(self.seed, label)
    }

    pub fn validate(&self) -> Result<()> {
        self.split.validate()?;
        self.cf.validate()?;
        self.train.validate()?;
        self.bench.validate()?;
        if self.encoder.dim != self.cf.dim {
            return Err(Error::Config(format!(
                "encoder.dim {} must equal cf.dim {}",
                self.encoder.dim, self.cf.dim
            )));
        }
        if self.encoder.max_len < self.tokenizer.max_len {
            return Err(Error::Config(format!(
                "encoder.max_len {} is shorter than tokenizer.max_len {}",
                self.encoder.max_len, self.tokenizer.max_len
            )));
        }
        if self.k == 0 || self.eval.k == 0 {
            return Err(Error::Config("k and eval.k must be positive".into()));
        }
        if !(self.pretrain.learning_rate >= 0.0) || !(self.eval.control_std >= 0.0) {
            return Err(Error::Config("pretrain.learning_rate and eval.control_std must be ≥ 0".into()));
        }
        Ok(())
    }

    /// First 16 hex digits of sha256 over the resolved config, paths
    /// excluded.
    pub fn hash(&self) -> String {
        let mut c = self.resolved();
        c.paths = Paths::default();
        let json = serde_json::to_string(&c).expect("config serializes");
        hex::encode(&Sha256::digest(json.as_bytes())[..8])
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_round_trip_through_toml() {
        let c = RunConfig::default();
        let back = RunConfig::from_toml(&c.to_toml(), None).unwrap();
        assert_eq!(back, c);
    }

    #[test]
    fn unknown_keys_rejected() {
        assert!(RunConfig::from_toml("sed = 3\n", None).is_err());
        assert!(RunConfig::from_toml("[cf]\ndims = 3\n", None).is_err());
    }

    #[test]
    fn hash_ignores_paths_and_module_seeds() {
        let a = RunConfig::default();
        let mut b = a.clone();
        b.paths.out = "elsewhere".into();
        b.cf.seed = 99;
        assert_eq!(a.hash(), b.hash());
        b.seed = 1;
        assert_ne!(a.hash(), b.hash());
    }

    #[test]
    fn relative_paths_follow_the_config_file() {
        let c = RunConfig::from_toml("[paths]\nout = \"run\"\n", Some(Path::new("/tmp/x"))).unwrap();
        assert_eq!(c.paths.out, PathBuf::from("/tmp/x/run"));
    }

    #[test]
    fn dim_mismatch_is_a_config_error() {
        let mut c = RunConfig::default();
        c.encoder.dim = 16;
        assert!(matches!(c.validate(), Err(Error::Config(_))));
    }
}
