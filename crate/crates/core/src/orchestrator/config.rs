use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::embed::EmbedderSpec;
use crate::error::{Error, Result};
use crate::eval::{JudgeSpec, Mode, DEFAULT_OMEGA};
use crate::gen::GeneratorSpec;
use crate::ingest::ChunkPolicy;
use crate::kb::IndexConfig;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IngestSection {
    pub corpus: Option<PathBuf>,
    pub chunk_size: usize,
    pub overlap: usize,
}

impl Default for IngestSection {
    fn default() -> Self {
        let p = ChunkPolicy::default();
        Self {
            corpus: None,
            chunk_size: p.chunk_size,
            overlap: p.overlap,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct IndexSection {
    /// Where the index file lives; `None` keeps the index in memory only.
    pub path: Option<PathBuf>,
    #[serde(flatten)]
    pub config: IndexConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvalSection {
    pub testset: Option<PathBuf>,
    pub dataset_name: Option<String>,
    pub omega: f64,
    #[serde(flatten)]
    pub judge: JudgeSpec,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            testset: None,
            dataset_name: None,
            omega: DEFAULT_OMEGA,
            judge: JudgeSpec::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ServeSection {
    pub bind: String,
    /// Directory of static chat client assets served under `/ui`.
    pub ui_dir: Option<PathBuf>,
}

impl Default for ServeSection {
    fn default() -> Self {
        Self {
            bind: "127.0.0.1:8080".into(),
            ui_dir: None,
        }
    }
}

/// Whole-pipeline configuration, loadable from a TOML file with one section per
/// stage. Credentials never live here; providers read them from the environment.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    pub mode: Mode,
    pub ingest: IngestSection,
    pub embed: EmbedderSpec,
    pub index: IndexSection,
    pub gen: GeneratorSpec,
    pub eval: EvalSection,
    pub serve: ServeSection,
}

impl PipelineConfig {
    pub fn from_toml_str(s: &str) -> Result<Self> {
        toml::from_str(s).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml_str(&text)
    }

    pub fn to_toml_string(&self) -> Result<String> {
        toml::to_string_pretty(self).map_err(|e| Error::InvalidConfig(e.to_string()))
    }

    pub fn chunk_policy(&self) -> Result<ChunkPolicy> {
        ChunkPolicy::new(self.ingest.chunk_size, self.ingest.overlap)
    }

    pub fn validate(&self) -> Result<()> {
        let policy = self.chunk_policy()?;
        self.embed.validate(policy.chunk_size)?;
        self.index.config.validate()?;
        if self.embed.dim != self.index.config.dim {
            return Err(Error::InvalidConfig(format!(
                "embedder dim {} differs from index dim {}",
                self.embed.dim, self.index.config.dim
            )));
        }
        self.gen.validate()?;
        if !(self.eval.judge.tau > 0.0 && self.eval.judge.tau < 1.0) {
            return Err(Error::InvalidConfig("eval tau must be in (0, 1)".into()));
        }
        if !(0.0..=1.0).contains(&self.eval.omega) {
            return Err(Error::InvalidConfig("eval omega must be in [0, 1]".into()));
        }
        Ok(())
    }
}
