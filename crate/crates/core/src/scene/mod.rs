//! Scene geometry, per-point partitions and ground truth.
//!
//! Everything here is immutable once built; constructors validate the
//! invariants so later stages can index freely.

pub(crate) mod io;
mod normals;
pub mod ply;
mod sampling;
mod synth;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use io::{
    load_ground_truth, load_scene, save_ground_truth, save_ground_truth_with_config, save_scene, save_scene_with_config,
    SceneFormat,
};
pub use normals::{estimate_normals, NormalEstimate};
pub use sampling::farthest_point_sample;
pub use synth::{generate_synthetic, FurnitureShape, InstanceSpec, RoomSpec, FURNITURE_CLASSES};

pub type Point3 = [f64; 3];

pub(crate) const UNIT_TOLERANCE: f64 = 1e-6;

/// Colors used when a file stores none.
pub const DEFAULT_COLOR: Point3 = [0.5, 0.5, 0.5];

#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    points: Vec<Point3>,
    colors: Vec<Point3>,
    normals: Option<Vec<Point3>>,
    faces: Option<Vec<[usize; 3]>>,
}

impl Scene {
    pub fn new(
        points: Vec<Point3>,
        colors: Vec<Point3>,
        normals: Option<Vec<Point3>>,
        faces: Option<Vec<[usize; 3]>>,
    ) -> Result<Self> {
        let n = points.len();
        if n == 0 {
            return Err(Error::validation("points", "scene has no points"));
        }
        if colors.len() != n {
            return Err(Error::validation(
                "colors",
                format!("expected {n} colors, got {}", colors.len()),
            ));
        }
        for (i, p) in points.iter().enumerate() {
            if p.iter().any(|v| !v.is_finite()) {
                return Err(Error::validation(format!("points[{i}]"), "non-finite"));
            }
        }
        for (i, c) in colors.iter().enumerate() {
            if c.iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(Error::validation(
                    format!("colors[{i}]"),
                    "channel outside [0, 1]",
                ));
            }
        }
        if let Some(ns) = &normals {
            if ns.len() != n {
                return Err(Error::validation(
                    "normals",
                    format!("expected {n} normals, got {}", ns.len()),
                ));
            }
            for (i, v) in ns.iter().enumerate() {
                let len = norm(*v);
                if (len - 1.0).abs() > UNIT_TOLERANCE {
                    return Err(Error::validation(
                        format!("normals[{i}]"),
                        format!("length {len} is not unit"),
                    ));
                }
            }
        }
        if let Some(fs) = &faces {
            for (i, f) in fs.iter().enumerate() {
                if f.iter().any(|&v| v >= n) {
                    return Err(Error::validation(
                        format!("faces[{i}]"),
                        format!("vertex index out of range for {n} points"),
                    ));
                }
            }
        }
        Ok(Scene {
            points,
            colors,
            normals,
            faces,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[Point3] {
        &self.points
    }

    pub fn colors(&self) -> &[Point3] {
        &self.colors
    }

    pub fn normals(&self) -> Option<&[Point3]> {
        self.normals.as_deref()
    }

    pub fn faces(&self) -> Option<&[[usize; 3]]> {
        self.faces.as_deref()
    }

    /// Returns a copy carrying the given normals.
    pub fn with_normals(&self, normals: Vec<Point3>) -> Result<Scene> {
        Scene::new(
            self.points.clone(),
            self.colors.clone(),
            Some(normals),
            self.faces.clone(),
        )
    }
}

/// Per-point segment ids forming a partition with no empty parts.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Segmentation {
    seg_ids: Vec<usize>,
    num_segments: usize,
}

impl Segmentation {
    pub fn new(seg_ids: Vec<usize>) -> Result<Self> {
        if seg_ids.is_empty() {
            return Err(Error::validation("segIndices", "empty segmentation"));
        }
        let num_segments = seg_ids.iter().max().map_or(0, |&m| m + 1);
        let mut seen = vec![false; num_segments];
        for &s in &seg_ids {
            seen[s] = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::validation(
                "segIndices",
                format!("segment id {missing} has no points"),
            ));
        }
        Ok(Segmentation {
            seg_ids,
            num_segments,
        })
    }

    /// Accepts arbitrary (sparse) ids, as in ScanNet files, and relabels them
    /// densely in order of first occurrence by point index.
    pub fn from_sparse_ids(ids: &[u64]) -> Result<Self> {
        let mut map = BTreeMap::new();
        let mut dense = Vec::with_capacity(ids.len());
        for &id in ids {
            let next = map.len();
            dense.push(*map.entry(id).or_insert(next));
        }
        Segmentation::new(dense)
    }

    pub fn seg_ids(&self) -> &[usize] {
        &self.seg_ids
    }

    pub fn num_segments(&self) -> usize {
        self.num_segments
    }

    pub fn num_points(&self) -> usize {
        self.seg_ids.len()
    }

    pub fn segment_of(&self, point: usize) -> Option<usize> {
        self.seg_ids.get(point).copied()
    }

    /// Point indices of every segment, ascending.
    pub fn members(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.num_segments];
        for (p, &s) in self.seg_ids.iter().enumerate() {
            out[s].push(p);
        }
        out
    }

    pub fn sizes(&self) -> Vec<usize> {
        let mut out = vec![0; self.num_segments];
        for &s in &self.seg_ids {
            out[s] += 1;
        }
        out
    }
}

/// Dense reference labels; `-1` marks unlabeled points.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroundTruth {
    pub semantic: Vec<i64>,
    pub instance: Vec<i64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub classes: BTreeMap<u32, String>,
}

impl GroundTruth {
    pub fn new(semantic: Vec<i64>, instance: Vec<i64>) -> Result<Self> {
        let gt = GroundTruth {
            semantic,
            instance,
            classes: BTreeMap::new(),
        };
        gt.validate()?;
        Ok(gt)
    }

    pub fn validate(&self) -> Result<()> {
        if self.semantic.len() != self.instance.len() {
            return Err(Error::validation(
                "instance",
                format!(
                    "length {} differs from semantic length {}",
                    self.instance.len(),
                    self.semantic.len()
                ),
            ));
        }
        for (i, (&s, &inst)) in self.semantic.iter().zip(&self.instance).enumerate() {
            if s < -1 || inst < -1 {
                return Err(Error::validation(format!("[{i}]"), "ids must be >= -1"));
            }
            if inst >= 0 && s < 0 {
                return Err(Error::validation(
                    format!("semantic[{i}]"),
                    "instance point without a semantic class",
                ));
            }
        }
        Ok(())
    }

    pub fn len(&self) -> usize {
        self.semantic.len()
    }

    pub fn is_empty(&self) -> bool {
        self.semantic.is_empty()
    }

    /// Distinct instance ids (excluding -1) with their semantic class.
    pub fn instances(&self) -> BTreeMap<i64, i64> {
        let mut out = BTreeMap::new();
        for (&s, &i) in self.semantic.iter().zip(&self.instance) {
            if i >= 0 {
                out.entry(i).or_insert(s);
            }
        }
        out
    }

    pub fn num_classes(&self) -> usize {
        let from_points = self.semantic.iter().copied().max().unwrap_or(-1) + 1;
        let from_names = self.classes.keys().next_back().map_or(0, |&c| c as i64 + 1);
        from_points.max(from_names).max(0) as usize
    }
}

pub(crate) fn norm(v: Point3) -> f64 {
    (v[0] * v[0] + v[1] * v[1] + v[2] * v[2]).sqrt()
}

pub(crate) fn sub(a: Point3, b: Point3) -> Point3 {
    [a[0] - b[0], a[1] - b[1], a[2] - b[2]]
}

pub(crate) fn dot(a: Point3, b: Point3) -> f64 {
    a[0] * b[0] + a[1] * b[1] + a[2] * b[2]
}

pub(crate) fn dist2(a: Point3, b: Point3) -> f64 {
    let d = sub(a, b);
    dot(d, d)
}

pub(crate) fn centroid(points: &[Point3], indices: &[usize]) -> Point3 {
    let mut c = [0.0; 3];
    for &i in indices {
        for d in 0..3 {
            c[d] += points[i][d];
        }
    }
    let n = indices.len().max(1) as f64;
    [c[0] / n, c[1] / n, c[2] / n]
}
