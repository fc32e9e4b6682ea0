//! The grouping forward pass: three grouping layers followed by final
//! clustering, turning seg-level labels into dense pseudo labels.

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotation::SegLevelLabelSet;
use crate::autodiff::{LayerVars, Tape, Var};
use crate::cluster::{cluster_final, cluster_layer};
use crate::error::{Error, Result};
use crate::graph::{build_segment_graph, SegmentGraph};
use crate::network::{
    classifier_on_tape, edge_conv_pooled, gcn_on_tape, sample_neighbors, BoundParams, NetworkParams, Pooling,
    SEMANTIC_CHANNELS, STRUCTURAL_CHANNELS,
};
use crate::overseg::build_point_adjacency;
use crate::scene::{centroid, estimate_normals, farthest_point_sample, GroundTruth, Point3, Scene, Segmentation};
use crate::tensor::Mat;

pub const NUM_STAGES: usize = 5;
pub const FINAL_STAGE: usize = 4;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GroupingConfig {
    /// Merge thresholds of the three grouping layers.
    pub taus: [f64; 3],
    pub lambda: f64,
    /// Neighbors per sampled point in the EdgeConv extractors.
    pub k_points: usize,
    /// Points sampled per node.
    pub sample_points: usize,
    /// Neighbors per point when deriving segment adjacency.
    pub adjacency_k: usize,
}

impl Default for GroupingConfig {
    fn default() -> Self {
        GroupingConfig {
            taus: [6.0, 2.0, 2.0],
            lambda: 0.125,
            k_points: 8,
            sample_points: 64,
            adjacency_k: crate::overseg::DEFAULT_K,
        }
    }
}

impl GroupingConfig {
    pub fn validate(&self) -> Result<()> {
        if self.lambda <= 0.0 || !self.lambda.is_finite() {
            return Err(Error::validation("grouping.lambda", "must be positive"));
        }
        if self.k_points == 0 || self.sample_points == 0 {
            return Err(Error::validation("grouping", "k_points and sample_points must be positive"));
        }
        if self.taus.iter().any(|t| t.is_nan()) {
            return Err(Error::validation("grouping.taus", "NaN threshold"));
        }
        Ok(())
    }
}

/// Clustering decisions of one forward pass: for each of the three layers
/// and the final stage, the partition of that stage's input nodes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupingPlan {
    pub stages: Vec<Vec<Vec<usize>>>,
}

/// A scene prepared for grouping: geometry, segments and the initial graph.
#[derive(Debug, Clone)]
pub struct SceneInput {
    pub name: String,
    pub scene: Scene,
    pub segmentation: Segmentation,
    pub labels: SegLevelLabelSet,
    pub graph: SegmentGraph,
    members: Vec<Vec<usize>>,
}

impl SceneInput {
    pub fn new(
        name: impl Into<String>,
        scene: Scene,
        segmentation: Segmentation,
        labels: SegLevelLabelSet,
        config: &GroupingConfig,
    ) -> Result<Self> {
        let with_normals = match scene.normals() {
            Some(_) => scene,
            None => estimate_normals(&scene, config.adjacency_k.max(3))?.scene,
        };
        let adjacency = build_point_adjacency(&with_normals, config.adjacency_k)?;
        let graph = build_segment_graph(&with_normals, &segmentation, &labels, &adjacency)?;
        let members = segmentation.members();
        Ok(SceneInput {
            name: name.into(),
            scene: with_normals,
            segmentation,
            labels,
            graph,
            members,
        })
    }

    fn node_points(&self, graph: &SegmentGraph) -> Vec<Vec<usize>> {
        graph
            .nodes()
            .iter()
            .map(|segs| {
                let mut pts: Vec<usize> = segs.iter().flat_map(|&s| self.members[s].iter().copied()).collect();
                pts.sort_unstable();
                pts
            })
            .collect()
    }
}

/// Result of one forward pass. The tape holds every intermediate so a
/// caller can differentiate `loss` when the parameters were bound trainable.
pub struct ForwardPass {
    pub tape: Tape,
    pub params: BoundParams,
    /// Graphs after stage 0 (input) through stage 4 (final).
    pub snapshots: Vec<SegmentGraph>,
    pub plan: GroupingPlan,
    pub instance_features: Var,
    pub logits: Var,
    pub targets: Vec<usize>,
    pub loss: Var,
}

impl ForwardPass {
    pub fn final_graph(&self) -> &SegmentGraph {
        &self.snapshots[FINAL_STAGE]
    }

    pub fn loss_value(&self) -> f64 {
        self.tape.value(self.loss).data[0]
    }
}

fn node_seed(base: u64, stage: usize, first_point: usize) -> u64 {
    base ^ (stage as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ (first_point as u64).wrapping_mul(0xBF58_476D_1CE4_E5B9)
}

/// Stacked point channels, neighbor table, per-node row blocks and the
/// neighbor count.
type StageInputs = (Mat, Vec<usize>, Vec<Vec<usize>>, usize);

/// Sampled per-point channels for every node, stacked, with the neighbor
/// table and per-node row blocks.
fn stage_inputs(
    input: &SceneInput,
    graph: &SegmentGraph,
    config: &GroupingConfig,
    seed: u64,
    stage: usize,
    structural: bool,
) -> Result<StageInputs> {
    let pts = input.scene.points();
    let colors = input.scene.colors();
    let node_points = input.node_points(graph);
    let m = config.sample_points;
    let k = config.k_points.min(m);
    let channels = if structural { STRUCTURAL_CHANNELS } else { SEMANTIC_CHANNELS };
    use rayon::prelude::*;
    let per_node: Vec<Result<(Vec<f64>, Vec<usize>)>> = node_points
        .par_iter()
        .map(|members| {
            let local: Vec<Point3> = members.iter().map(|&p| pts[p]).collect();
            let picks = farthest_point_sample(&local, m, node_seed(seed, stage, members[0]))?;
            let sampled: Vec<usize> = picks.iter().map(|&i| members[i]).collect();
            let xyz: Vec<Point3> = sampled.iter().map(|&p| pts[p]).collect();
            let center = centroid(pts, members);
            let mut rows = Vec::with_capacity(m * channels);
            if structural {
                let radius = xyz
                    .iter()
                    .map(|p| crate::scene::norm(crate::scene::sub(*p, center)))
                    .fold(0.0, f64::max);
                let scale = if radius > 0.0 { 1.0 / radius } else { 1.0 };
                for (&p, q) in sampled.iter().zip(&xyz) {
                    let c = crate::scene::sub(*q, center);
                    rows.extend([c[0] * scale, c[1] * scale, c[2] * scale]);
                    rows.extend(colors[p]);
                }
            } else {
                for (&p, q) in sampled.iter().zip(&xyz) {
                    rows.extend(q);
                    rows.extend(colors[p]);
                    rows.extend(crate::scene::sub(*q, center));
                }
            }
            Ok((rows, sample_neighbors(&xyz, k)))
        })
        .collect();
    let mut data = Vec::with_capacity(node_points.len() * m * channels);
    let mut neighbors = Vec::with_capacity(node_points.len() * m * k);
    let mut blocks = Vec::with_capacity(node_points.len());
    for (i, r) in per_node.into_iter().enumerate() {
        let (rows, nb) = r?;
        let offset = i * m;
        data.extend(rows);
        neighbors.extend(nb.into_iter().map(|j| j + offset));
        blocks.push((offset..offset + m).collect());
    }
    Ok((Mat::from_vec(node_points.len() * m, channels, data), neighbors, blocks, k))
}

#[allow(clippy::too_many_arguments)]
fn extract(
    tape: &mut Tape,
    input: &SceneInput,
    graph: &SegmentGraph,
    config: &GroupingConfig,
    seed: u64,
    stage: usize,
    layers: &[LayerVars],
    structural: bool,
) -> Result<Var> {
    let (x, neighbors, blocks, k) = stage_inputs(input, graph, config, seed, stage, structural)?;
    let x = tape.constant(x);
    let pooling = if structural { Pooling::MaxAndAvg } else { Pooling::Max };
    Ok(edge_conv_pooled(tape, x, neighbors, k, layers, &blocks, pooling))
}

fn check_partition(groups: &[Vec<usize>], n: usize, stage: usize) -> Result<()> {
    let mut seen = vec![false; n];
    for g in groups {
        if g.is_empty() {
            return Err(Error::validation(format!("plan.stages[{stage}]"), "empty group"));
        }
        for &i in g {
            if i >= n || seen[i] {
                return Err(Error::validation(
                    format!("plan.stages[{stage}]"),
                    format!("node {i} out of range or repeated"),
                ));
            }
            seen[i] = true;
        }
    }
    if seen.iter().any(|s| !s) {
        return Err(Error::validation(format!("plan.stages[{stage}]"), "groups miss a node"));
    }
    Ok(())
}

/// Runs the full grouping network on one scene.
///
/// With `plan` the clustering decisions are replayed instead of recomputed,
/// which keeps the function smooth in the parameters (used for gradient
/// checks). With `trainable` the parameters are differentiable leaves.
pub fn seggroup_forward(
    input: &SceneInput,
    params: &NetworkParams,
    config: &GroupingConfig,
    seed: u64,
    plan: Option<&GroupingPlan>,
    trainable: bool,
) -> Result<ForwardPass> {
    config.validate()?;
    if input.graph.labeled_count() == 0 {
        return Err(Error::validation("labels", "scene has no seg-level labels"));
    }
    if let Some(p) = plan {
        if p.stages.len() != 4 {
            return Err(Error::validation("plan.stages", "expected four stages"));
        }
    }
    let mut tape = Tape::new();
    let bound = params.bind(&mut tape, trainable);
    let mut snapshots = vec![input.graph.clone()];
    let mut decided = Vec::with_capacity(4);

    let mut decide = |stage: usize, graph: &SegmentGraph, computed: &dyn Fn() -> Result<Vec<Vec<usize>>>| {
        let groups = match plan {
            Some(p) => {
                let g = p.stages[stage].clone();
                check_partition(&g, graph.len(), stage)?;
                g
            }
            None => computed()?,
        };
        decided.push(groups.clone());
        Ok::<_, Error>(groups)
    };

    // stage 1: structural features, no graph convolution
    let g0 = &input.graph;
    let f1 = extract(&mut tape, input, g0, config, seed, 1, &bound.structural, true)?;
    let v1 = tape.value(f1).clone();
    let groups1 = decide(0, g0, &|| cluster_layer(g0, &v1, config.taus[0]))?;
    let p1 = tape.segment_max(f1, &groups1);
    let g1 = g0.quotient(&groups1, Some(tape.value(p1).clone()))?.with_layer(1);

    // stage 2: first semantic layer
    let s2 = extract(&mut tape, input, &g1, config, seed, 2, &bound.semantic1, false)?;
    let c2 = tape.concat(p1, s2);
    let h2 = gcn_on_tape(&mut tape, c2, bound.gcn1, &g1.adjacency(), params.gcn1.lambda);
    let v2 = tape.value(h2).clone();
    let groups2 = decide(1, &g1, &|| cluster_layer(&g1, &v2, config.taus[1]))?;
    let p2 = tape.segment_max(h2, &groups2);
    let g2 = g1.quotient(&groups2, Some(tape.value(p2).clone()))?.with_layer(2);

    // stage 3: second semantic layer
    let s3 = extract(&mut tape, input, &g2, config, seed, 3, &bound.semantic2, false)?;
    let c3 = tape.concat(p2, s3);
    let h3 = gcn_on_tape(&mut tape, c3, bound.gcn2, &g2.adjacency(), params.gcn2.lambda);
    let v3 = tape.value(h3).clone();
    let groups3 = decide(2, &g2, &|| cluster_layer(&g2, &v3, config.taus[2]))?;
    let p3 = tape.segment_max(h3, &groups3);
    let g3 = g2.quotient(&groups3, Some(tape.value(p3).clone()))?.with_layer(3);

    // stage 4: absorb every unlabeled node
    let v4 = tape.value(p3).clone();
    let groups4 = decide(3, &g3, &|| cluster_final(&g3, &v4))?;
    let instance_features = tape.segment_max(p3, &groups4);
    let g4 = g3
        .quotient(&groups4, Some(tape.value(instance_features).clone()))?
        .with_layer(FINAL_STAGE);
    if let Some(node) = g4.labels().iter().position(Option::is_none) {
        return Err(Error::UnreachableLabel { node });
    }

    let num_classes = params.num_classes();
    let targets: Vec<usize> = g4
        .labels()
        .iter()
        .map(|l| {
            let c = l.expect("final nodes are labeled").class as usize;
            if c >= num_classes {
                Err(Error::validation(
                    "labels",
                    format!("class {c} outside the classifier's {num_classes} classes"),
                ))
            } else {
                Ok(c)
            }
        })
        .collect::<Result<_>>()?;
    let logits = classifier_on_tape(&mut tape, instance_features, bound.hidden, bound.output);
    let loss = tape.cross_entropy_mean(logits, &targets);

    snapshots.extend([g1, g2, g3, g4]);
    Ok(ForwardPass {
        tape,
        params: bound,
        snapshots,
        plan: GroupingPlan { stages: decided },
        instance_features,
        logits,
        targets,
        loss,
    })
}

/// Dense per-point labels; `-1` where a point's node is unlabeled.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PseudoLabels {
    pub semantic: Vec<i64>,
    pub instance: Vec<i64>,
}

impl PseudoLabels {
    pub fn as_ground_truth(&self) -> GroundTruth {
        GroundTruth {
            semantic: self.semantic.clone(),
            instance: self.instance.clone(),
            classes: Default::default(),
        }
    }

    pub fn coverage(&self) -> f64 {
        if self.semantic.is_empty() {
            return 0.0;
        }
        self.semantic.iter().filter(|&&s| s >= 0).count() as f64 / self.semantic.len() as f64
    }
}

/// Per-point labels of any snapshot; unlabeled nodes give `-1`.
pub fn snapshot_labels(graph: &SegmentGraph, segmentation: &Segmentation) -> Result<PseudoLabels> {
    let n = segmentation.num_points();
    let mut owner = vec![usize::MAX; segmentation.num_segments()];
    for (i, segs) in graph.nodes().iter().enumerate() {
        for &s in segs {
            if s >= owner.len() {
                return Err(Error::validation("snapshot", format!("segment {s} not in segmentation")));
            }
            owner[s] = i;
        }
    }
    if owner.contains(&usize::MAX) {
        return Err(Error::validation("snapshot", "graph does not cover every segment"));
    }
    let mut semantic = vec![-1; n];
    let mut instance = vec![-1; n];
    for (p, &s) in segmentation.seg_ids().iter().enumerate() {
        if let Some(l) = graph.labels()[owner[s]] {
            semantic[p] = l.class as i64;
            instance[p] = l.instance as i64;
        }
    }
    Ok(PseudoLabels { semantic, instance })
}

/// Dense labels from the final graph; every node must be labeled.
pub fn derive_pseudo_labels(graph: &SegmentGraph, segmentation: &Segmentation) -> Result<PseudoLabels> {
    if let Some(node) = graph.labels().iter().position(Option::is_none) {
        return Err(Error::UnreachableLabel { node });
    }
    snapshot_labels(graph, segmentation)
}

/// Serializable per-stage snapshot dump.
pub fn snapshots_to_json(snapshots: &[SegmentGraph]) -> Value {
    let stages: Vec<Value> = snapshots
        .iter()
        .enumerate()
        .map(|(i, g)| {
            let mut v = g.to_dump_json();
            v["stage"] = json!(i);
            v
        })
        .collect();
    json!({ "stages": stages })
}

pub fn snapshots_from_json(value: &Value) -> Result<Vec<SegmentGraph>> {
    #[derive(Deserialize)]
    struct NodeDump {
        segments: Vec<usize>,
        label: Option<crate::graph::NodeLabel>,
    }
    #[derive(Deserialize)]
    struct StageDump {
        layer: usize,
        nodes: Vec<NodeDump>,
        edges: Vec<[usize; 2]>,
    }
    #[derive(Deserialize)]
    struct Dump {
        stages: Vec<StageDump>,
    }
    let dump: Dump = serde_path_to_error::deserialize(value)
        .map_err(|e| Error::validation(e.path().to_string(), e.inner().to_string()))?;
    dump.stages
        .into_iter()
        .map(|s| {
            let (nodes, labels): (Vec<_>, Vec<_>) = s.nodes.into_iter().map(|n| (n.segments, n.label)).unzip();
            SegmentGraph::from_parts(nodes, labels, s.edges.into_iter().map(|[a, b]| (a, b)), s.layer)
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::annotation::mechanical_annotate;
    use crate::overseg::oversegment;
    use crate::scene::{generate_synthetic, RoomSpec};

    fn small_room(seed: u64) -> (SceneInput, GroundTruth) {
        let spec = RoomSpec::new([4.0, 4.0, 2.5], &[("floor", 1), ("table", 1), ("cabinet", 1)], seed);
        let (scene, gt) = generate_synthetic(&spec).unwrap();
        let seg = oversegment(&scene, 10, 0.06, 20).unwrap().segmentation;
        let labels = mechanical_annotate(&gt, &seg, 1, seed).unwrap();
        let input = SceneInput::new("room", scene, seg, labels, &GroupingConfig::default()).unwrap();
        (input, gt)
    }

    #[test]
    fn forward_yields_one_node_per_instance() {
        let (input, gt) = small_room(11);
        let params = NetworkParams::init(gt.num_classes(), 8, 0.125, 1).unwrap();
        let pass = seggroup_forward(&input, &params, &GroupingConfig::default(), 5, None, false).unwrap();
        assert_eq!(pass.final_graph().len(), input.labels.instances().len());
        assert_eq!(pass.tape.value(pass.instance_features).cols, 256);
        assert_eq!(pass.snapshots.len(), NUM_STAGES);
        let pl = derive_pseudo_labels(pass.final_graph(), &input.segmentation).unwrap();
        assert!(pl.semantic.iter().all(|&s| s >= 0));
    }

    #[test]
    fn replaying_the_plan_reproduces_the_pass() {
        let (input, gt) = small_room(12);
        let params = NetworkParams::init(gt.num_classes(), 8, 0.125, 2).unwrap();
        let cfg = GroupingConfig::default();
        let a = seggroup_forward(&input, &params, &cfg, 5, None, false).unwrap();
        let b = seggroup_forward(&input, &params, &cfg, 5, Some(&a.plan), false).unwrap();
        assert_eq!(a.snapshots, b.snapshots);
        assert_eq!(a.loss_value(), b.loss_value());
    }

    #[test]
    fn snapshot_dump_round_trips() {
        let (input, gt) = small_room(13);
        let params = NetworkParams::init(gt.num_classes(), 8, 0.125, 3).unwrap();
        let pass = seggroup_forward(&input, &params, &GroupingConfig::default(), 5, None, false).unwrap();
        let back = snapshots_from_json(&snapshots_to_json(&pass.snapshots)).unwrap();
        for (a, b) in back.iter().zip(&pass.snapshots) {
            assert_eq!(a.nodes(), b.nodes());
            assert_eq!(a.labels(), b.labels());
            assert_eq!(a.edges(), b.edges());
        }
    }
}
