use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::overseg::{DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use crate::pipeline::GroupingConfig;
use crate::scene::RoomSpec;
use crate::train::TrainConfig;

/// Files a command read or wrote, recorded so it can be re-run.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PathsConfig {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub scene: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub segments: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub labels: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub pred: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub snapshots: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub checkpoint: Option<String>,
    #[serde(skip_serializing_if = "Vec::is_empty")]
    pub scene_dirs: Vec<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub loss_csv: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub json_out: Option<String>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub data_dir: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OversegConfig {
    pub k: usize,
    pub kappa: f64,
    pub min_size: usize,
}

impl Default for OversegConfig {
    fn default() -> Self {
        OversegConfig {
            k: DEFAULT_K,
            kappa: DEFAULT_KAPPA,
            min_size: DEFAULT_MIN_SIZE,
        }
    }
}

/// Everything needed to reproduce a pipeline artifact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct PipelineConfig {
    /// Subcommand that wrote the artifact; its paths only apply to reruns
    /// of that same command.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub command: Option<String>,
    pub paths: PathsConfig,
    pub overseg: OversegConfig,
    pub grouping: GroupingConfig,
    pub train: TrainConfig,
    pub top_n: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub room: Option<RoomSpec>,
    /// Stage dumped by `inspect`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub inspect_stage: Option<usize>,
    pub seed: u64,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        PipelineConfig {
            command: None,
            paths: PathsConfig::default(),
            overseg: OversegConfig::default(),
            grouping: GroupingConfig::default(),
            train: TrainConfig::default(),
            top_n: 1,
            room: None,
            inspect_stage: None,
            seed: 0,
        }
    }
}

impl PipelineConfig {
    /// Reads the configuration embedded in any artifact: a `config` key in
    /// JSON, a `comment config=` PLY header line, or a leading `# config=`
    /// CSV line. A JSON file without a `config` key is read as a bare
    /// configuration.
    pub fn from_artifact(path: &Path) -> Result<PipelineConfig> {
        let bytes = crate::scene::io::read_bytes(path)?;
        let embedded = if bytes.starts_with(b"ply") {
            header_lines(&bytes)
                .find_map(|l| l.strip_prefix("comment config=").map(str::to_owned))
                .ok_or_else(|| Error::validation(path.display().to_string(), "PLY header carries no config"))?
        } else if bytes.starts_with(b"# config=") {
            let line = bytes.split(|&b| b == b'\n').next().unwrap_or_default();
            String::from_utf8_lossy(&line[b"# config=".len()..]).into_owned()
        } else {
            let value = crate::artifact::read_json(path)?;
            return match crate::artifact::embedded_config(&value) {
                Some(c) => c,
                None => parse_config(&value),
            };
        };
        let value: serde_json::Value =
            serde_json::from_str(&embedded).map_err(|e| Error::json(path.display().to_string(), e))?;
        parse_config(&value)
    }
}

fn parse_config(value: &serde_json::Value) -> Result<PipelineConfig> {
    serde_path_to_error::deserialize(value)
        .map_err(|e| Error::validation(format!("config.{}", e.path()), e.inner().to_string()))
}

fn header_lines(bytes: &[u8]) -> impl Iterator<Item = &str> {
    bytes
        .split(|&b| b == b'\n')
        .map_while(|l| std::str::from_utf8(l).ok())
        .take_while(|l| l.trim_end() != "end_header")
}
