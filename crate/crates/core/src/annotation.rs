//! Seg-level labels: one click per instance, extended to the clicked segment.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::{Error, Result};
use crate::scene::{GroundTruth, Segmentation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegLevelLabel {
    #[serde(rename = "instance")]
    pub instance_id: u32,
    #[serde(rename = "class")]
    pub semantic_class: u32,
    #[serde(rename = "segment")]
    pub segment_id: usize,
    #[serde(rename = "click")]
    pub click_point: usize,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SegLevelLabelSet {
    #[serde(default)]
    pub classes: BTreeMap<u32, String>,
    pub labels: Vec<SegLevelLabel>,
}

/// Looks up the clicked point's segment.
pub fn extend_click_to_segment(
    segmentation: &Segmentation,
    click_point: usize,
    semantic_class: u32,
    instance_id: u32,
) -> Result<SegLevelLabel> {
    let segment_id = segmentation.segment_of(click_point).ok_or_else(|| {
        Error::validation(
            "click",
            format!(
                "point {click_point} out of range for {} points",
                segmentation.num_points()
            ),
        )
    })?;
    Ok(SegLevelLabel {
        instance_id,
        semantic_class,
        segment_id,
        click_point,
    })
}

impl SegLevelLabelSet {
    pub fn new(classes: BTreeMap<u32, String>) -> Self {
        SegLevelLabelSet {
            classes,
            labels: Vec::new(),
        }
    }

    pub fn label_on_segment(&self, segment: usize) -> Option<&SegLevelLabel> {
        self.labels.iter().find(|l| l.segment_id == segment)
    }

    /// Applies a click. Re-clicking a segment with its own instance is a
    /// no-op; a different instance on a labeled segment is a conflict. A
    /// known instance clicked on a new segment adds another part of it.
    pub fn apply_click(
        &mut self,
        segmentation: &Segmentation,
        click_point: usize,
        semantic_class: u32,
        instance_id: u32,
    ) -> Result<SegLevelLabel> {
        let label = extend_click_to_segment(segmentation, click_point, semantic_class, instance_id)?;
        if let Some(existing) = self.label_on_segment(label.segment_id) {
            if existing.instance_id != instance_id {
                return Err(Error::LabelConflict {
                    segment: label.segment_id,
                    existing: existing.instance_id,
                    requested: instance_id,
                });
            }
            if existing.semantic_class != semantic_class {
                return Err(Error::validation(
                    "class",
                    format!(
                        "instance {instance_id} already has class {}",
                        existing.semantic_class
                    ),
                ));
            }
            return Ok(*existing);
        }
        if let Some(other) = self.labels.iter().find(|l| l.instance_id == instance_id) {
            if other.semantic_class != semantic_class {
                return Err(Error::validation(
                    "class",
                    format!(
                        "instance {instance_id} already has class {}",
                        other.semantic_class
                    ),
                ));
            }
        }
        self.labels.push(label);
        Ok(label)
    }

    /// Checks internal consistency, and consistency with `segmentation` when given.
    pub fn validate(&self, segmentation: Option<&Segmentation>) -> Result<()> {
        let mut by_segment: BTreeMap<usize, usize> = BTreeMap::new();
        let mut instance_class: BTreeMap<u32, u32> = BTreeMap::new();
        for (i, l) in self.labels.iter().enumerate() {
            if let Some(prev) = by_segment.insert(l.segment_id, i) {
                return Err(Error::validation(
                    format!("labels[{i}].segment"),
                    format!(
                        "segment {} already labeled by labels[{prev}]",
                        l.segment_id
                    ),
                ));
            }
            if let Some(&c) = instance_class.get(&l.instance_id) {
                if c != l.semantic_class {
                    return Err(Error::validation(
                        format!("labels[{i}].class"),
                        format!("instance {} has classes {c} and {}", l.instance_id, l.semantic_class),
                    ));
                }
            }
            instance_class.insert(l.instance_id, l.semantic_class);
            if let Some(seg) = segmentation {
                if l.segment_id >= seg.num_segments() {
                    return Err(Error::validation(
                        format!("labels[{i}].segment"),
                        format!(
                            "segment {} out of range for {} segments",
                            l.segment_id,
                            seg.num_segments()
                        ),
                    ));
                }
                match seg.segment_of(l.click_point) {
                    Some(s) if s == l.segment_id => {}
                    Some(s) => {
                        return Err(Error::validation(
                            format!("labels[{i}].click"),
                            format!("point {} lies in segment {s}, not {}", l.click_point, l.segment_id),
                        ))
                    }
                    None => {
                        return Err(Error::validation(
                            format!("labels[{i}].click"),
                            format!("point {} out of range", l.click_point),
                        ))
                    }
                }
            }
        }
        Ok(())
    }

    /// Distinct instance ids with their class.
    pub fn instances(&self) -> BTreeMap<u32, u32> {
        self.labels
            .iter()
            .map(|l| (l.instance_id, l.semantic_class))
            .collect()
    }

    pub fn to_json(&self) -> Value {
        serde_json::to_value(self).expect("labels serialize")
    }

    pub fn from_json(value: &Value, segmentation: Option<&Segmentation>) -> Result<Self> {
        let set: SegLevelLabelSet = serde_path_to_error::deserialize(value.clone())
            .map_err(|e| Error::validation(e.path().to_string(), e.inner().to_string()))?;
        set.validate(segmentation)?;
        Ok(set)
    }
}

pub fn save_labels(
    set: &SegLevelLabelSet,
    path: &std::path::Path,
    config: Option<&crate::config::PipelineConfig>,
) -> Result<()> {
    crate::artifact::write_json(path, set.to_json(), config)
}

pub fn load_labels(
    path: &std::path::Path,
    segmentation: Option<&Segmentation>,
) -> Result<SegLevelLabelSet> {
    let v = crate::artifact::read_json(path)?;
    SegLevelLabelSet::from_json(&v, segmentation)
}

/// Synthesizes one click per ground-truth instance: rank the segments by how
/// many of the instance's points they hold, then click a uniformly chosen
/// instance point inside the `top_n` best-ranked segments.
pub fn mechanical_annotate(
    gt: &GroundTruth,
    segmentation: &Segmentation,
    top_n: usize,
    seed: u64,
) -> Result<SegLevelLabelSet> {
    if !(1..=3).contains(&top_n) {
        return Err(Error::InvalidArgument("top-n must be 1, 2, or 3".into()));
    }
    if gt.len() != segmentation.num_points() {
        return Err(Error::Shape(format!(
            "ground truth has {} points, segmentation {}",
            gt.len(),
            segmentation.num_points()
        )));
    }
    let instances = gt.instances();
    if instances.is_empty() {
        return Err(Error::validation("instance", "ground truth has no instances"));
    }
    let mut points_of: BTreeMap<i64, Vec<usize>> = BTreeMap::new();
    for (p, &i) in gt.instance.iter().enumerate() {
        if i >= 0 {
            points_of.entry(i).or_default().push(p);
        }
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut set = SegLevelLabelSet::new(gt.classes.clone());
    for (&inst, &class) in &instances {
        let pts = &points_of[&inst];
        let mut counts: BTreeMap<usize, usize> = BTreeMap::new();
        for &p in pts {
            *counts.entry(segmentation.seg_ids()[p]).or_insert(0) += 1;
        }
        let mut ranked: Vec<(usize, usize)> = counts
            .into_iter()
            // a segment already claimed by an earlier instance cannot carry a
            // second label; fall through to this instance's next segments
            .filter(|(s, _)| set.label_on_segment(*s).is_none())
            .collect();
        if ranked.is_empty() {
            log::warn!("instance {inst} has no unclaimed segment; left unlabeled");
            continue;
        }
        ranked.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
        let chosen: Vec<usize> = ranked.iter().take(top_n).map(|x| x.0).collect();
        let candidates: Vec<usize> = pts
            .iter()
            .copied()
            .filter(|&p| chosen.contains(&segmentation.seg_ids()[p]))
            .collect();
        let click = candidates[rng.random_range(0..candidates.len())];
        let label = extend_click_to_segment(segmentation, click, class as u32, inst as u32)?;
        set.labels.push(label);
    }
    Ok(set)
}
