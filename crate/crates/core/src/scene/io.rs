use std::path::Path;

use serde::{Deserialize, Serialize};

use super::ply::{parse_ply, write_ply_with_comments, PlyEncoding};
use super::{GroundTruth, Point3, Scene, DEFAULT_COLOR};
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SceneFormat {
    PlyAscii,
    PlyBinary,
    Json,
}

impl SceneFormat {
    /// Guesses from the file extension; `.ply` maps to binary on write.
    pub fn from_path(path: &Path) -> Result<SceneFormat> {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ply") => Ok(SceneFormat::PlyBinary),
            Some("json") => Ok(SceneFormat::Json),
            _ => Err(Error::InvalidArgument(format!(
                "cannot infer scene format from {}",
                path.display()
            ))),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct SceneJson {
    points: Vec<Point3>,
    #[serde(default)]
    colors: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    normals: Option<Vec<Point3>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    faces: Option<Vec<[usize; 3]>>,
}

pub(crate) fn read_bytes(path: &Path) -> Result<Vec<u8>> {
    std::fs::read(path).map_err(|e| Error::io(path, e))
}

pub(crate) fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent() {
        if !dir.as_os_str().is_empty() {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
    }
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

pub(crate) fn parse_json_scene(bytes: &[u8], context: &str) -> Result<Scene> {
    let raw: SceneJson = serde_json::from_slice(bytes).map_err(|e| Error::Parse {
        location: format!("{context} line {} column {}", e.line(), e.column()),
        message: e.to_string(),
    })?;
    let n = raw.points.len();
    Scene::new(
        raw.points,
        raw.colors.unwrap_or_else(|| vec![DEFAULT_COLOR; n]),
        raw.normals,
        raw.faces,
    )
}

pub(crate) fn scene_to_json(scene: &Scene) -> serde_json::Value {
    serde_json::to_value(SceneJson {
        points: scene.points().to_vec(),
        colors: Some(scene.colors().to_vec()),
        normals: scene.normals().map(<[Point3]>::to_vec),
        faces: scene.faces().map(<[[usize; 3]]>::to_vec),
    })
    .expect("scene serializes")
}

/// Loads a scene; PLY encoding is detected from its header.
pub fn load_scene(path: &Path, format: SceneFormat) -> Result<Scene> {
    let bytes = read_bytes(path)?;
    match format {
        SceneFormat::PlyAscii | SceneFormat::PlyBinary => parse_ply(&bytes),
        SceneFormat::Json => parse_json_scene(&bytes, &path.display().to_string()),
    }
}

pub fn save_scene(scene: &Scene, path: &Path, format: SceneFormat) -> Result<()> {
    save_scene_with_config(scene, path, format, None)
}

/// Saves a scene carrying `config`: as a `comment config=...` header line in
/// PLY, as a top-level `config` key in JSON.
pub fn save_scene_with_config(
    scene: &Scene,
    path: &Path,
    format: SceneFormat,
    config: Option<&crate::config::PipelineConfig>,
) -> Result<()> {
    let comments: Vec<String> = match config {
        Some(c) => vec![format!(
            "config={}",
            serde_json::to_string(c).map_err(|e| Error::json("config", e))?
        )],
        None => Vec::new(),
    };
    match format {
        SceneFormat::PlyAscii => write_bytes(path, &write_ply_with_comments(scene, PlyEncoding::Ascii, &comments)),
        SceneFormat::PlyBinary => write_bytes(
            path,
            &write_ply_with_comments(scene, PlyEncoding::BinaryLittleEndian, &comments),
        ),
        SceneFormat::Json => crate::artifact::write_json(path, scene_to_json(scene), config),
    }
}

pub fn load_ground_truth(path: &Path) -> Result<GroundTruth> {
    let bytes = read_bytes(path)?;
    let gt: GroundTruth =
        serde_json::from_slice(&bytes).map_err(|e| Error::json(path.display().to_string(), e))?;
    gt.validate()?;
    Ok(gt)
}

pub fn save_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    save_ground_truth_with_config(gt, path, None)
}

pub fn save_ground_truth_with_config(
    gt: &GroundTruth,
    path: &Path,
    config: Option<&crate::config::PipelineConfig>,
) -> Result<()> {
    let value = serde_json::to_value(gt).map_err(|e| Error::json(path.display().to_string(), e))?;
    crate::artifact::write_json(path, value, config)
}
