#![allow(dead_code)]

pub mod reference;

use std::collections::BTreeSet;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use seggroup::annotation::mechanical_annotate;
use seggroup::graph::{NodeLabel, SegmentGraph};
use seggroup::overseg::{oversegment, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE};
use seggroup::pipeline::{snapshot_labels, GroupingConfig, SceneInput, FINAL_STAGE};
use seggroup::scene::{generate_synthetic, GroundTruth, RoomSpec, Scene};
use seggroup::tensor::Mat;

use reference::RefGraph;

/// Two perpendicular planes meeting in a concave crease along the y axis:
/// a floor (z = 0, x > 0) and a wall (x = 0, z > 0), with their analytic
/// normals. Returns the scene and each point's plane (0 floor, 1 wall).
pub fn crease_scene(per_side: usize) -> (Scene, Vec<usize>) {
    let step = 1.0 / per_side as f64;
    let mut points = Vec::new();
    let mut normals = Vec::new();
    let mut plane = Vec::new();
    for i in 0..per_side {
        for j in 0..per_side {
            let u = (i as f64 + 0.5) * step;
            let v = (j as f64 + 0.5) * step;
            points.push([u, v, 0.0]);
            normals.push([0.0, 0.0, 1.0]);
            plane.push(0);
            points.push([0.0, v, u]);
            normals.push([1.0, 0.0, 0.0]);
            plane.push(1);
        }
    }
    let colors = vec![[0.5, 0.5, 0.5]; points.len()];
    (Scene::new(points, colors, Some(normals), None).unwrap(), plane)
}

pub struct PreparedRoom {
    pub input: SceneInput,
    pub gt: GroundTruth,
}

/// Generates, over-segments and mechanically labels one room.
pub fn prepare_room(room_seed: u64, furniture: usize, top_n: usize, label_seed: u64) -> PreparedRoom {
    let (scene, gt) = generate_synthetic(&RoomSpec::random(room_seed, furniture)).unwrap();
    let seg = oversegment(&scene, DEFAULT_K, DEFAULT_KAPPA, DEFAULT_MIN_SIZE).unwrap().segmentation;
    let labels = mechanical_annotate(&gt, &seg, top_n, label_seed).unwrap();
    let input = SceneInput::new(format!("room{room_seed}"), scene, seg, labels, &GroupingConfig::default()).unwrap();
    PreparedRoom { input, gt }
}

/// Random graph with at most `max_nodes` nodes, integer-valued features (so
/// distance ties occur) and at least one label on every component.
pub fn random_graph(rng: &mut ChaCha8Rng, max_nodes: usize) -> (SegmentGraph, Mat, RefGraph) {
    let n = rng.random_range(1..=max_nodes);
    let dim = rng.random_range(1..=3);
    let p = rng.random_range(0.15..0.6);
    let mut edges = Vec::new();
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                edges.push((a, b));
            }
        }
    }
    let features: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|_| rng.random_range(0..5) as f64).collect())
        .collect();
    let mut labels: Vec<Option<NodeLabel>> = vec![None; n];
    let mut next_instance = 0u32;
    let mut label = |rng: &mut ChaCha8Rng| {
        // occasionally reuse an instance so multi-part labels occur
        let instance = if next_instance > 0 && rng.random_bool(0.15) {
            rng.random_range(0..next_instance)
        } else {
            next_instance += 1;
            next_instance - 1
        };
        Some(NodeLabel { class: instance % 4, instance })
    };
    for l in labels.iter_mut() {
        if rng.random_bool(0.3) {
            *l = label(rng);
        }
    }
    let probe = SegmentGraph::from_parts((0..n).map(|i| vec![i]).collect(), labels.clone(), edges.clone(), 0).unwrap();
    for comp in probe.components() {
        if comp.iter().all(|&i| labels[i].is_none()) {
            let pick = comp[rng.random_range(0..comp.len())];
            labels[pick] = label(rng);
        }
    }
    // the class of an instance must be consistent
    for l in labels.iter_mut().flatten() {
        l.class = l.instance % 4;
    }
    let graph = SegmentGraph::from_parts((0..n).map(|i| vec![i]).collect(), labels.clone(), edges.clone(), 0).unwrap();
    let mat = Mat::from_rows(&features);
    (graph, mat, RefGraph { labels, edges, features })
}

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

/// Grouping invariants over all snapshots: every stage partitions the
/// segments, no node holds two clicked instances, node count never grows,
/// coverage never falls, and the final stage has one fully labeled node per
/// clicked instance.
pub fn check_safety(input: &SceneInput, snapshots: &[SegmentGraph]) -> Result<(), String> {
    let m = input.segmentation.num_segments();
    let instances: BTreeSet<u32> = input.labels.labels.iter().map(|l| l.instance_id).collect();
    let mut prev_nodes = usize::MAX;
    let mut prev_coverage = 0.0;
    for (stage, g) in snapshots.iter().enumerate() {
        let mut seen = vec![false; m];
        for (node, segs) in g.nodes().iter().enumerate() {
            let mut clicked = BTreeSet::new();
            for &s in segs {
                if s >= m || seen[s] {
                    return Err(format!("stage {stage}: segment {s} missing or duplicated"));
                }
                seen[s] = true;
                if let Some(l) = input.labels.label_on_segment(s) {
                    clicked.insert(l.instance_id);
                }
            }
            if clicked.len() > 1 {
                return Err(format!("stage {stage}: node {node} holds instances {clicked:?}"));
            }
        }
        if seen.contains(&false) {
            return Err(format!("stage {stage}: segments lost"));
        }
        if g.len() > prev_nodes {
            return Err(format!("stage {stage}: node count grew to {}", g.len()));
        }
        prev_nodes = g.len();
        let coverage = snapshot_labels(g, &input.segmentation).map_err(|e| e.to_string())?.coverage();
        if coverage < prev_coverage {
            return Err(format!("stage {stage}: coverage fell to {coverage}"));
        }
        prev_coverage = coverage;
    }
    let last = &snapshots[FINAL_STAGE];
    if last.len() != instances.len() {
        return Err(format!("final stage has {} nodes for {} instances", last.len(), instances.len()));
    }
    if prev_coverage != 1.0 {
        return Err(format!("final coverage {prev_coverage}"));
    }
    Ok(())
}
