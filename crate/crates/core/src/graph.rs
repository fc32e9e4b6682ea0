//! Segment graph: one node per segment group, edges between spatially
//! adjacent groups, optional instance labels and features per node.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::annotation::SegLevelLabelSet;
use crate::error::{Error, Result};
use crate::overseg::AdjacencyEdge;
use crate::scene::{centroid, dist2, Point3, Scene, Segmentation};
use crate::tensor::Mat;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct NodeLabel {
    pub class: u32,
    pub instance: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SegmentGraph {
    nodes: Vec<Vec<usize>>,
    labels: Vec<Option<NodeLabel>>,
    features: Option<Mat>,
    edges: BTreeSet<(usize, usize)>,
    layer: usize,
}

fn ordered(a: usize, b: usize) -> (usize, usize) {
    (a.min(b), a.max(b))
}

impl SegmentGraph {
    /// Direct constructor, mainly for tests and replay. Validates structure.
    pub fn from_parts(
        nodes: Vec<Vec<usize>>,
        labels: Vec<Option<NodeLabel>>,
        edges: impl IntoIterator<Item = (usize, usize)>,
        layer: usize,
    ) -> Result<Self> {
        if nodes.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} nodes but {} labels",
                nodes.len(),
                labels.len()
            )));
        }
        let mut set = BTreeSet::new();
        for (a, b) in edges {
            if a == b || a >= nodes.len() || b >= nodes.len() {
                return Err(Error::validation(
                    "edges",
                    format!("invalid edge ({a}, {b}) for {} nodes", nodes.len()),
                ));
            }
            set.insert(ordered(a, b));
        }
        let mut nodes = nodes;
        for n in &mut nodes {
            n.sort_unstable();
        }
        Ok(SegmentGraph {
            nodes,
            labels,
            features: None,
            edges: set,
            layer,
        })
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// Original segment ids owned by each node.
    pub fn nodes(&self) -> &[Vec<usize>] {
        &self.nodes
    }

    pub fn labels(&self) -> &[Option<NodeLabel>] {
        &self.labels
    }

    pub fn features(&self) -> Option<&Mat> {
        self.features.as_ref()
    }

    pub fn edges(&self) -> &BTreeSet<(usize, usize)> {
        &self.edges
    }

    pub fn layer(&self) -> usize {
        self.layer
    }

    pub fn set_features(&mut self, features: Mat) -> Result<()> {
        if features.rows != self.nodes.len() {
            return Err(Error::Shape(format!(
                "{} feature rows for {} nodes",
                features.rows,
                self.nodes.len()
            )));
        }
        self.features = Some(features);
        Ok(())
    }

    pub fn with_layer(mut self, layer: usize) -> Self {
        self.layer = layer;
        self
    }

    /// Sorted neighbor lists.
    pub fn adjacency(&self) -> Vec<Vec<usize>> {
        let mut adj = vec![Vec::new(); self.nodes.len()];
        for &(a, b) in &self.edges {
            adj[a].push(b);
            adj[b].push(a);
        }
        for a in &mut adj {
            a.sort_unstable();
        }
        adj
    }

    pub fn labeled_count(&self) -> usize {
        self.labels.iter().filter(|l| l.is_some()).count()
    }

    /// Connected components as sorted node lists, ordered by smallest node.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let adj = self.adjacency();
        let mut seen = vec![false; self.nodes.len()];
        let mut out = Vec::new();
        for start in 0..self.nodes.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut i = 0;
            while i < comp.len() {
                for &n in &adj[comp[i]] {
                    if !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                    }
                }
                i += 1;
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Point indices of every node.
    pub fn node_points(&self, segmentation: &Segmentation) -> Vec<Vec<usize>> {
        let members = segmentation.members();
        self.nodes
            .iter()
            .map(|segs| {
                let mut pts: Vec<usize> = segs.iter().flat_map(|&s| members[s].iter().copied()).collect();
                pts.sort_unstable();
                pts
            })
            .collect()
    }

    /// Collapses each group of nodes into one new node. Groups must partition
    /// the nodes and carry at most one distinct label each. Edges become the
    /// quotient edge set without self loops; features, if given, replace the
    /// current ones.
    pub fn quotient(&self, groups: &[Vec<usize>], features: Option<Mat>) -> Result<SegmentGraph> {
        let mut owner = vec![usize::MAX; self.nodes.len()];
        for (g, members) in groups.iter().enumerate() {
            for &m in members {
                if m >= self.nodes.len() || owner[m] != usize::MAX {
                    return Err(Error::validation(
                        "groups",
                        format!("node {m} missing or assigned twice"),
                    ));
                }
                owner[m] = g;
            }
        }
        if owner.contains(&usize::MAX) {
            return Err(Error::validation("groups", "groups do not cover every node"));
        }
        let mut nodes = Vec::with_capacity(groups.len());
        let mut labels = Vec::with_capacity(groups.len());
        for members in groups {
            let mut segs: Vec<usize> = members.iter().flat_map(|&m| self.nodes[m].iter().copied()).collect();
            segs.sort_unstable();
            nodes.push(segs);
            let mut label = None;
            for &m in members {
                if let Some(l) = self.labels[m] {
                    match label {
                        None => label = Some(l),
                        Some(prev) if prev == l => {}
                        Some(prev) => {
                            return Err(Error::validation(
                                "groups",
                                format!("group mixes labels {prev:?} and {l:?}"),
                            ))
                        }
                    }
                }
            }
            labels.push(label);
        }
        let edges: BTreeSet<(usize, usize)> = self
            .edges
            .iter()
            .filter_map(|&(a, b)| {
                let (p, q) = (owner[a], owner[b]);
                (p != q).then(|| ordered(p, q))
            })
            .collect();
        let mut g = SegmentGraph {
            nodes,
            labels,
            features: None,
            edges,
            layer: self.layer,
        };
        if let Some(f) = features {
            g.set_features(f)?;
        }
        Ok(g)
    }

    pub fn to_dump_json(&self) -> Value {
        let nodes: Vec<Value> = self
            .nodes
            .iter()
            .zip(&self.labels)
            .enumerate()
            .map(|(i, (segs, l))| {
                json!({
                    "id": i,
                    "segments": segs,
                    "label": l.map(|l| json!({"class": l.class, "instance": l.instance})),
                })
            })
            .collect();
        let edges: Vec<[usize; 2]> = self.edges.iter().map(|&(a, b)| [a, b]).collect();
        json!({ "layer": self.layer, "nodes": nodes, "edges": edges })
    }
}

/// Builds the initial segment graph: one node per segment, edges wherever a
/// point adjacency edge crosses two segments, labels on clicked segments.
/// Components without any label are bridged to the rest of the scene so that
/// every node can eventually reach a label.
pub fn build_segment_graph(
    scene: &Scene,
    segmentation: &Segmentation,
    labels: &SegLevelLabelSet,
    point_adjacency: &[AdjacencyEdge],
) -> Result<SegmentGraph> {
    if scene.len() != segmentation.num_points() {
        return Err(Error::Shape(format!(
            "scene has {} points, segmentation {}",
            scene.len(),
            segmentation.num_points()
        )));
    }
    labels.validate(Some(segmentation))?;
    let m = segmentation.num_segments();
    let ids = segmentation.seg_ids();
    let mut edges = BTreeSet::new();
    for e in point_adjacency {
        if e.a >= ids.len() || e.b >= ids.len() {
            return Err(Error::validation("adjacency", "edge endpoint out of range"));
        }
        let (sa, sb) = (ids[e.a], ids[e.b]);
        if sa != sb {
            edges.insert(ordered(sa, sb));
        }
    }
    let mut node_labels = vec![None; m];
    for l in &labels.labels {
        node_labels[l.segment_id] = Some(NodeLabel {
            class: l.semantic_class,
            instance: l.instance_id,
        });
    }
    let mut graph = SegmentGraph {
        nodes: (0..m).map(|s| vec![s]).collect(),
        labels: node_labels,
        features: None,
        edges,
        layer: 0,
    };
    if graph.labeled_count() > 0 {
        let members = segmentation.members();
        let centroids: Vec<Point3> = members.iter().map(|p| centroid(scene.points(), p)).collect();
        add_bridges(&mut graph, &centroids);
    }
    Ok(graph)
}

fn nearest_to(target: Point3, candidates: impl Iterator<Item = usize>, centroids: &[Point3]) -> usize {
    candidates
        .min_by(|&a, &b| {
            dist2(centroids[a], target)
                .total_cmp(&dist2(centroids[b], target))
                .then(a.cmp(&b))
        })
        .expect("non-empty candidate set")
}

fn add_bridges(graph: &mut SegmentGraph, centroids: &[Point3]) {
    loop {
        let comps = graph.components();
        if comps.len() < 2 {
            return;
        }
        let Some(lonely) = comps
            .iter()
            .find(|c| c.iter().all(|&n| graph.labels[n].is_none()))
        else {
            return;
        };
        let in_comp: BTreeSet<usize> = lonely.iter().copied().collect();
        let mut c = [0.0; 3];
        for &n in lonely {
            for d in 0..3 {
                c[d] += centroids[n][d];
            }
        }
        for v in &mut c {
            *v /= lonely.len() as f64;
        }
        let from = nearest_to(c, lonely.iter().copied(), centroids);
        let to = nearest_to(
            centroids[from],
            (0..graph.len()).filter(|n| !in_comp.contains(n)),
            centroids,
        );
        log::debug!("bridging unlabeled component via segments {from} - {to}");
        graph.edges.insert(ordered(from, to));
    }
}

/// Nodes grouped by label, for merging multi-part instances.
pub(crate) fn nodes_by_label(graph: &SegmentGraph) -> BTreeMap<NodeLabel, Vec<usize>> {
    let mut out: BTreeMap<NodeLabel, Vec<usize>> = BTreeMap::new();
    for (i, l) in graph.labels.iter().enumerate() {
        if let Some(l) = l {
            out.entry(*l).or_default().push(i);
        }
    }
    out
}
