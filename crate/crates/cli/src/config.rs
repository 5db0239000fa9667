use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use toflow::data::{BoxNoiseParams, DegradationSpec, FlowClipParams, TextureClipParams, TriangleParams};
use toflow::pipeline::TaskConfig;

#[derive(Debug, Error)]
pub enum CliError {
    /// Invalid or incomplete configuration; exit code 2.
    #[error("config error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] toflow::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Core(toflow::Error::Config(_)) => 2,
            _ => 1,
        }
    }

    pub fn io(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
        move |source| CliError::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T, E = CliError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ToyKind {
    /// Triangle triplets or sequences with flows and occlusion masks.
    Triangle,
    /// Triangle septuplets corrupted by random boxes.
    Boxnoise,
    /// Translating textures, optionally downsampled.
    Texture,
    /// Flow-supervised pretraining clips.
    Flow,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ToyConfig {
    /// Generator; chosen from the task when unset.
    pub kind: Option<ToyKind>,
    pub count: usize,
    pub triangle: TriangleParams,
    pub boxnoise: BoxNoiseParams,
    pub texture: TextureClipParams,
    pub flow: FlowClipParams,
}

impl Default for ToyConfig {
    fn default() -> Self {
        ToyConfig {
            kind: None,
            count: 100,
            triangle: TriangleParams::default(),
            boxnoise: BoxNoiseParams::default(),
            texture: TextureClipParams::default(),
            flow: FlowClipParams::default(),
        }
    }
}

/// Everything a run needs. Command-line flags override file values.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub model: TaskConfig,
    /// Corpus root read by every command except `gen-toy`.
    pub corpus: Option<PathBuf>,
    pub split: String,
    /// Split of the same corpus evaluated after every training epoch.
    pub validation_split: Option<String>,
    pub checkpoint: Option<PathBuf>,
    pub out: Option<PathBuf>,
    pub toy: ToyConfig,
    pub degradation: Option<DegradationSpec>,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            model: TaskConfig::default(),
            corpus: None,
            split: "train".into(),
            validation_split: None,
            checkpoint: None,
            out: None,
            toy: ToyConfig::default(),
            degradation: None,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(CliError::io(path))?;
        serde_json::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))
    }

    pub fn validate(&self) -> Result<()> {
        self.model.validate().map_err(|e| match e {
            toflow::Error::Config(m) => CliError::Config(format!("model.{m}")),
            other => other.into(),
        })?;
        if self.split.is_empty() || self.split.contains(['/', '\\']) {
            return Err(CliError::Config(format!("split: invalid name {:?}", self.split)));
        }
        if let Some(d) = &self.degradation {
            d.validate().map_err(|e| CliError::Config(format!("degradation: {e}")))?;
        }
        if self.toy.count == 0 {
            return Err(CliError::Config("toy.count: must be positive".into()));
        }
        Ok(())
    }

    pub fn out(&self) -> Result<&Path> {
        require(&self.out, "out")
    }

    pub fn corpus(&self) -> Result<&Path> {
        require(&self.corpus, "corpus")
    }

    pub fn checkpoint(&self) -> Result<&Path> {
        require(&self.checkpoint, "checkpoint")
    }
}

fn require<'a>(v: &'a Option<PathBuf>, field: &str) -> Result<&'a Path> {
    v.as_deref()
        .ok_or_else(|| CliError::Config(format!("{field}: required by this command but missing from config and flags")))
}
