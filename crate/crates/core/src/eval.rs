//! IoU scoring of (pseudo) labels against ground truth.
//!
//! Ground-truth points with class `-1` are ignored entirely. Predicted `-1`
//! points count toward the union of their true class only. Mean IoU averages
//! the classes that occur in ground truth or prediction.

use std::collections::BTreeMap;

use serde::Serialize;
use serde_json::{json, Value};

use crate::config::PipelineConfig;
use crate::error::{Error, Result};
use crate::graph::SegmentGraph;
use crate::pipeline::{snapshot_labels, PseudoLabels};
use crate::scene::{GroundTruth, Segmentation};

pub const MEAN_POLICY: &str = "mean over classes present in ground truth or prediction";

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IoUReport {
    pub per_class: BTreeMap<u32, f64>,
    pub mean: f64,
    pub coverage: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InstanceReport {
    pub per_instance: BTreeMap<i64, f64>,
    /// Mean over ground-truth instances.
    pub mean: f64,
    /// Predicted ids that do not occur in ground truth (scored 0).
    pub unmatched: Vec<i64>,
}

fn check_len(pred: usize, gt: usize) -> Result<()> {
    if pred != gt {
        return Err(Error::Shape(format!("prediction has {pred} points, ground truth {gt}")));
    }
    Ok(())
}

pub fn coverage(pred: &[i64]) -> f64 {
    if pred.is_empty() {
        return 0.0;
    }
    pred.iter().filter(|&&p| p >= 0).count() as f64 / pred.len() as f64
}

/// Class-wise IoU of per-point predicted classes.
pub fn semantic_iou(pred: &[i64], gt: &GroundTruth) -> Result<IoUReport> {
    check_len(pred.len(), gt.len())?;
    let mut inter: BTreeMap<u32, usize> = BTreeMap::new();
    let mut union: BTreeMap<u32, usize> = BTreeMap::new();
    for (&p, &g) in pred.iter().zip(&gt.semantic) {
        if g < 0 {
            continue;
        }
        *union.entry(g as u32).or_default() += 1;
        if p == g {
            *inter.entry(g as u32).or_default() += 1;
        } else if p >= 0 {
            *union.entry(p as u32).or_default() += 1;
        }
    }
    let per_class: BTreeMap<u32, f64> = union
        .iter()
        .map(|(&c, &u)| (c, inter.get(&c).copied().unwrap_or(0) as f64 / u as f64))
        .collect();
    let mean = if per_class.is_empty() {
        0.0
    } else {
        per_class.values().sum::<f64>() / per_class.len() as f64
    };
    Ok(IoUReport {
        per_class,
        mean,
        coverage: coverage(pred),
    })
}

/// Per-instance IoU, matching predicted and true instances by id.
pub fn instance_iou(pred: &PseudoLabels, gt: &GroundTruth) -> Result<InstanceReport> {
    check_len(pred.instance.len(), gt.len())?;
    let mut inter: BTreeMap<i64, usize> = BTreeMap::new();
    let mut union: BTreeMap<i64, usize> = BTreeMap::new();
    for ((&p, &g), &s) in pred.instance.iter().zip(&gt.instance).zip(&gt.semantic) {
        if s < 0 {
            continue;
        }
        if g >= 0 {
            *union.entry(g).or_default() += 1;
        }
        if p == g && g >= 0 {
            *inter.entry(g).or_default() += 1;
        } else if p >= 0 {
            *union.entry(p).or_default() += 1;
        }
    }
    let gt_ids = gt.instances();
    let mut per_instance = BTreeMap::new();
    let mut unmatched = Vec::new();
    for (&id, &u) in &union {
        if gt_ids.contains_key(&id) {
            per_instance.insert(id, inter.get(&id).copied().unwrap_or(0) as f64 / u as f64);
        } else {
            per_instance.insert(id, 0.0);
            unmatched.push(id);
        }
    }
    if !unmatched.is_empty() {
        log::warn!("predicted instance ids {unmatched:?} do not occur in ground truth");
    }
    let mean = if gt_ids.is_empty() {
        0.0
    } else {
        gt_ids.keys().map(|id| per_instance.get(id).copied().unwrap_or(0.0)).sum::<f64>() / gt_ids.len() as f64
    };
    Ok(InstanceReport {
        per_instance,
        mean,
        unmatched,
    })
}

/// One report per snapshot, treating points of unlabeled nodes as unlabeled.
pub fn stage_report(snapshots: &[SegmentGraph], segmentation: &Segmentation, gt: &GroundTruth) -> Result<Vec<IoUReport>> {
    snapshots
        .iter()
        .map(|g| semantic_iou(&snapshot_labels(g, segmentation)?.semantic, gt))
        .collect()
}

/// CSV with columns `stage`, one IoU per class id (blank when absent),
/// `mean`, `coverage`.
pub fn report_csv(
    rows: &[(String, IoUReport)],
    num_classes: usize,
    class_names: &BTreeMap<u32, String>,
    config: Option<&PipelineConfig>,
) -> Result<String> {
    let mut out = String::new();
    if let Some(cfg) = config {
        out.push_str("# config=");
        out.push_str(&serde_json::to_string(cfg).map_err(|e| Error::json("config", e))?);
        out.push('\n');
    }
    out.push_str(&format!("# {MEAN_POLICY}\n"));
    out.push_str("stage");
    for c in 0..num_classes as u32 {
        match class_names.get(&c) {
            Some(name) => out.push_str(&format!(",{name}")),
            None => out.push_str(&format!(",class_{c}")),
        }
    }
    out.push_str(",mean,coverage\n");
    for (stage, r) in rows {
        out.push_str(stage);
        for c in 0..num_classes as u32 {
            out.push(',');
            if let Some(v) = r.per_class.get(&c) {
                out.push_str(&format!("{v:.6}"));
            }
        }
        out.push_str(&format!(",{:.6},{:.6}\n", r.mean, r.coverage));
    }
    Ok(out)
}

pub fn report_json(rows: &[(String, IoUReport)], instance: Option<&InstanceReport>) -> Value {
    let stages: Vec<Value> = rows
        .iter()
        .map(|(s, r)| {
            json!({
                "stage": s,
                "per_class": r.per_class.iter().map(|(c, v)| (c.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
                "mean": r.mean,
                "coverage": r.coverage,
            })
        })
        .collect();
    let mut v = json!({ "stages": stages, "mean_policy": MEAN_POLICY });
    if let Some(i) = instance {
        v["instance"] = json!({
            "per_instance": i.per_instance.iter().map(|(c, v)| (c.to_string(), json!(v))).collect::<serde_json::Map<_, _>>(),
            "mean": i.mean,
            "unmatched": i.unmatched,
        });
    }
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gt(semantic: Vec<i64>) -> GroundTruth {
        let instance = semantic.clone();
        GroundTruth::new(semantic, instance).unwrap()
    }

    #[test]
    fn perfect_prediction() {
        let g = gt(vec![0, 0, 1, 2, -1]);
        let r = semantic_iou(&g.semantic, &g).unwrap();
        assert!(r.per_class.values().all(|&v| v == 1.0));
        assert_eq!(r.mean, 1.0);
        assert_eq!(r.per_class.len(), 3);
    }

    #[test]
    fn disjoint_prediction() {
        let g = gt(vec![0, 0, 1, 1]);
        let r = semantic_iou(&[1, 1, 0, 0], &g).unwrap();
        assert!(r.per_class.values().all(|&v| v == 0.0));
    }

    #[test]
    fn half_covered_class() {
        let g = gt(vec![0; 100]);
        let pred: Vec<i64> = (0..100).map(|i| if i < 50 { 0 } else { -1 }).collect();
        let r = semantic_iou(&pred, &g).unwrap();
        assert_eq!(r.per_class[&0], 0.5);
        assert_eq!(r.coverage, 0.5);
    }

    #[test]
    fn ignored_ground_truth_points() {
        let g = gt(vec![-1, -1, 0]);
        let r = semantic_iou(&[3, 3, 0], &g).unwrap();
        assert_eq!(r.per_class.len(), 1);
        assert_eq!(r.mean, 1.0);
    }

    #[test]
    fn swallowed_instance() {
        let g = GroundTruth::new(vec![0, 0, 1, 1], vec![0, 0, 1, 1]).unwrap();
        let pred = PseudoLabels {
            semantic: vec![0; 4],
            instance: vec![0; 4],
        };
        let r = instance_iou(&pred, &g).unwrap();
        assert_eq!(r.per_instance[&1], 0.0);
        assert!(r.per_instance[&0] < 1.0);
        assert_eq!(r.mean, 0.25);
    }

    #[test]
    fn unknown_predicted_instance_scores_zero() {
        let g = GroundTruth::new(vec![0, 0], vec![0, 0]).unwrap();
        let pred = PseudoLabels {
            semantic: vec![0, 0],
            instance: vec![0, 9],
        };
        let r = instance_iou(&pred, &g).unwrap();
        assert_eq!(r.unmatched, vec![9]);
        assert_eq!(r.per_instance[&9], 0.0);
    }

    #[test]
    fn length_mismatch() {
        assert!(semantic_iou(&[0], &gt(vec![0, 1])).is_err());
    }

    #[test]
    fn csv_schema() {
        let g = gt(vec![0, 2]);
        let r = semantic_iou(&[0, -1], &g).unwrap();
        let csv = report_csv(&[("layer0".into(), r)], 3, &BTreeMap::new(), None).unwrap();
        let lines: Vec<&str> = csv.lines().filter(|l| !l.starts_with('#')).collect();
        assert_eq!(lines[0], "stage,class_0,class_1,class_2,mean,coverage");
        assert_eq!(lines[1], "layer0,1.000000,,0.000000,0.500000,0.500000");
        assert_eq!(lines[1].split(',').count(), 1 + 3 + 2);
    }
}
