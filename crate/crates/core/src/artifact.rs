//! JSON artifacts written by the pipeline stages. Each carries the
//! configuration that produced it under a top-level `config` key.

use std::path::Path;

use serde_json::Value;

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::scene::io::{read_bytes, write_bytes};

pub fn read_json(path: &Path) -> Result<Value> {
    let bytes = read_bytes(path)?;
    serde_json::from_slice(&bytes).map_err(|e| Error::Parse {
        location: format!("{} line {} column {}", path.display(), e.line(), e.column()),
        message: e.to_string(),
    })
}

/// Writes `value` (an object) with `config` embedded, compact and with keys
/// in a fixed order so reruns are byte-identical.
pub fn write_json(path: &Path, mut value: Value, config: Option<&PipelineConfig>) -> Result<()> {
    if let (Some(cfg), Value::Object(map)) = (config, &mut value) {
        map.insert(
            "config".to_string(),
            serde_json::to_value(cfg).map_err(|e| Error::json("config", e))?,
        );
    }
    let mut bytes =
        serde_json::to_vec(&value).map_err(|e| Error::json(path.display().to_string(), e))?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

/// The configuration embedded in an artifact, if any.
pub fn embedded_config(value: &Value) -> Option<Result<PipelineConfig>> {
    value.get("config").map(|c| {
        serde_path_to_error::deserialize(c.clone())
            .map_err(|e| Error::validation(format!("config.{}", e.path()), e.inner().to_string()))
    })
}
