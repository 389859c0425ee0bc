//! Pipeline configuration: built-in defaults, then a TOML file, then
//! `BUGLISTENER_`-prefixed environment variables (`__` separates levels,
//! e.g. `BUGLISTENER_BRI__LEARNING_RATE=0.001`).

use std::path::{Path, PathBuf};

use figment::providers::{Env, Format, Serialized, Toml};
use figment::Figment;
use serde::{Deserialize, Serialize};

use crate::augmentor::AugmentConfig;
use crate::bri_model::BriConfig;
use crate::brs_model::{BrsConfig, ReportFormat};
use crate::corpus::FilterConfig;
use crate::disentangler::DisentangleConfig;
use crate::encoder::EncoderConfig;
use crate::error::{Error, Result};

pub const ENV_PREFIX: &str = "BUGLISTENER_";

/// Where commands read their inputs from. Relative paths resolve against the
/// working directory; unset inputs default to files under the output
/// directory written by the previous command.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct Paths {
    pub output: PathBuf,
    /// Checkpoint root; `<output>/checkpoints` when unset.
    pub checkpoints: Option<PathBuf>,
    /// Labeled external bug-report sentences for the first fine-tuning stage.
    pub external_corpus: Option<PathBuf>,
    /// Labeled chat sentences for the second fine-tuning stage.
    pub brs_sentences: Option<PathBuf>,
    /// Dialog labels, JSON lines `{"dialog_id": .., "label": "BR"|"NBR"}`.
    pub dialog_labels: Option<PathBuf>,
    /// Directory of `<project>.jsonl` gold reply-link files.
    pub gold_links: Option<PathBuf>,
    /// Word vectors in text format for the link model; hashed vectors otherwise.
    pub word_vectors: Option<PathBuf>,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            output: PathBuf::from("out"),
            checkpoints: None,
            external_corpus: None,
            brs_sentences: None,
            dialog_labels: None,
            gold_links: None,
            word_vectors: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalConfig {
    /// Folds of the sentence-classifier evaluation.
    pub brs_folds: usize,
    /// Run the leave-one-project-out evaluation in `train-bri`.
    pub cross_project: bool,
}

impl Default for EvalConfig {
    fn default() -> Self {
        Self {
            brs_folds: 10,
            cross_project: true,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ReportConfig {
    pub format: ReportFormat,
    /// Greeting phrase list; the bundled one otherwise.
    pub greetings: Option<PathBuf>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub seed: u64,
    pub paths: Paths,
    pub filter: FilterConfig,
    pub disentangle: DisentangleConfig,
    pub encoder: EncoderConfig,
    pub augment: AugmentConfig,
    pub bri: BriConfig,
    pub brs: BrsConfig,
    pub eval: EvalConfig,
    pub report: ReportConfig,
}

impl PipelineConfig {
    /// Defaults, overlaid by `file` (if given) and the environment.
    pub fn load(file: Option<&Path>) -> Result<Self> {
        let mut fig = Figment::from(Serialized::defaults(Self::default()));
        if let Some(path) = file {
            if !path.exists() {
                return Err(Error::Config(format!("config file {} does not exist", path.display())));
            }
            fig = fig.merge(Toml::file(path));
        }
        let mut cfg: Self = fig
            .merge(Env::prefixed(ENV_PREFIX).split("__"))
            .extract()
            .map_err(|e| Error::Config(e.to_string()))?;
        cfg.augment.seed = cfg.seed;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.encoder.bert.validate()?;
        self.augment.validate()?;
        self.bri.validate()?;
        self.brs.validate(self.encoder.bert.layers)?;
        if self.eval.brs_folds < 2 {
            return Err(Error::Config("sentence evaluation needs at least 2 folds".into()));
        }
        if self.disentangle.window == 0 {
            return Err(Error::Config("disentanglement window must be positive".into()));
        }
        Ok(())
    }

    /// Applies command-line overrides. The seed reaches every module.
    pub fn with_overrides(mut self, seed: Option<u64>, output: Option<PathBuf>) -> Self {
        if let Some(s) = seed {
            self.seed = s;
        }
        if let Some(o) = output {
            self.paths.output = o;
        }
        self.augment.seed = self.seed;
        self
    }

    pub fn checkpoint_root(&self) -> PathBuf {
        self.paths
            .checkpoints
            .clone()
            .unwrap_or_else(|| self.paths.output.join("checkpoints"))
    }

    /// The configuration as a TOML document; unset paths are omitted.
    pub fn to_toml(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::Config(e.to_string()))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn defaults_carry_the_published_hyperparameters() {
        let c = PipelineConfig::default();
        assert_eq!((c.bri.learning_rate, c.bri.batch_size, c.bri.dropout), (1e-4, 32, 0.5));
        assert_eq!((c.bri.focal_gamma, c.bri.l2_lambda), (2.0, 1e-5));
        assert_eq!((c.brs.stage1.epochs, c.brs.stage1.batch_size, c.brs.stage1.learning_rate), (13, 64, 1e-4));
        assert_eq!((c.brs.stage2.epochs, c.brs.stage2.batch_size, c.brs.stage2.learning_rate), (70, 8, 1e-6));
        assert_eq!((c.augment.theta, c.disentangle.window, c.brs.frozen_layers), (5, 50, 9));
        assert_eq!(c.eval.brs_folds, 10);
    }

    #[test]
    #[allow(clippy::result_large_err)]
    fn file_then_environment_override_defaults() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.toml");
        std::fs::write(&path, "seed = 7\n[bri]\nlearning_rate = 0.01\nbatch_size = 4\n").unwrap();
        figment::Jail::expect_with(|jail| {
            jail.set_env("BUGLISTENER_BRI__BATCH_SIZE", "8");
            let c = PipelineConfig::load(Some(&path)).unwrap();
            assert_eq!((c.seed, c.bri.learning_rate, c.bri.batch_size), (7, 0.01, 8));
            assert_eq!(c.bri.dropout, 0.5);
            Ok(())
        });
    }

    #[test]
    fn malformed_and_missing_files_are_config_errors() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.toml");
        std::fs::write(&path, "[bri\nlearning_rate = ").unwrap();
        assert!(matches!(PipelineConfig::load(Some(&path)), Err(Error::Config(_))));
        assert!(matches!(PipelineConfig::load(Some(&dir.path().join("none.toml"))), Err(Error::Config(_))));
        std::fs::write(&path, "[bri]\nbatch_size = 0\n").unwrap();
        assert!(matches!(PipelineConfig::load(Some(&path)), Err(Error::Config(_))));
    }

    #[test]
    fn rendered_defaults_load_back() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("d.toml");
        std::fs::write(&path, PipelineConfig::default().to_toml().unwrap()).unwrap();
        assert_eq!(PipelineConfig::load(Some(&path)).unwrap(), PipelineConfig::default());
    }

    #[test]
    fn seed_override_reaches_augmentation() {
        let c = PipelineConfig::default().with_overrides(Some(42), Some("x".into()));
        assert_eq!((c.seed, c.augment.seed), (42, 42));
        assert_eq!(c.checkpoint_root(), PathBuf::from("x/checkpoints"));
    }
}
