//! Experiment configuration document.
//!
//! Every field has a default; an empty document `{}` is the reference
//! baseline. Unknown keys are rejected and every error names the offending
//! key path.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::device::RpuConfig;
use crate::error::{Error, Result};
use crate::lstm::LstmShape;
use crate::train::TrainConfig;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelConfig {
    pub depth: usize,
    pub hidden: usize,
    /// Free-form label; defaults to `LSTM{depth}-{hidden}`.
    pub name: Option<String>,
    /// Vocabulary size for commands that run without a corpus. Training
    /// takes it from the corpus and rejects a conflicting value.
    pub vocab: Option<usize>,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            depth: 2,
            hidden: 512,
            name: None,
            vocab: None,
        }
    }
}

impl ModelConfig {
    pub fn shape(&self, vocab: usize) -> Result<LstmShape> {
        if let Some(v) = self.vocab {
            if v != vocab {
                return Err(Error::config("model.vocab", format!("{v} conflicts with corpus vocabulary {vocab}")));
            }
        }
        Ok(LstmShape::char_model(vocab, self.hidden, self.depth))
    }

    pub fn label(&self) -> String {
        self.name
            .clone()
            .unwrap_or_else(|| format!("LSTM{}-{}", self.depth, self.hidden))
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataConfig {
    pub path: Option<PathBuf>,
    /// Trailing characters held out for testing; defaults to a tenth of the
    /// file.
    pub test_chars: Option<usize>,
}

impl DataConfig {
    pub fn test_chars_for(&self, len: usize) -> usize {
        self.test_chars.unwrap_or(len / 10)
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct OutputConfig {
    pub dir: PathBuf,
}

impl Default for OutputConfig {
    fn default() -> Self {
        OutputConfig { dir: PathBuf::from("runs/latest") }
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub model: ModelConfig,
    pub training: TrainConfig,
    pub rpu: RpuConfig,
    pub data: DataConfig,
    pub output: OutputConfig,
}

impl ExperimentConfig {
    pub fn from_json_str(text: &str) -> Result<Self> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let cfg: ExperimentConfig = serde_path_to_error::deserialize(de).map_err(|e| {
            let key = e.path().to_string();
            Error::config(if key == "." { "<document>".to_string() } else { key }, e.into_inner().to_string())
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::config("--config", format!("{}: {e}", path.display())))?;
        Self::from_json_str(&text)
    }

    pub fn validate(&self) -> Result<()> {
        if self.model.depth == 0 {
            return Err(Error::config("model.depth", "must be positive"));
        }
        if self.model.hidden == 0 {
            return Err(Error::config("model.hidden", "must be positive"));
        }
        if self.model.vocab == Some(0) {
            return Err(Error::config("model.vocab", "must be positive"));
        }
        self.training.validate()?;
        self.rpu.validate()?;
        Ok(())
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }
}
