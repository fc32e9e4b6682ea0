//! Normal-based graph-cut over-segmentation.
//!
//! Points are linked by mesh edges (or symmetric k-NN when the scene has no
//! faces), weighted by normal dissimilarity, and merged with the
//! Felzenszwalb–Huttenlocher criterion. The resulting segments are atomic for
//! every later stage.

use std::collections::BTreeSet;

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::knn::KdTree;
use crate::scene::{dot, sub, Scene, Segmentation};

pub const DEFAULT_KAPPA: f64 = 0.06;
pub const DEFAULT_MIN_SIZE: usize = 20;
pub const DEFAULT_K: usize = 10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdjacencyEdge {
    pub a: usize,
    pub b: usize,
    pub weight: f64,
}

/// Normal dissimilarity `1 - n_a.n_b`, halved across convex creases.
pub fn edge_weight(pa: [f64; 3], na: [f64; 3], pb: [f64; 3], nb: [f64; 3]) -> f64 {
    let w = (1.0 - dot(na, nb)).clamp(0.0, 2.0);
    let convexity = dot(na, sub(pb, pa)) + dot(nb, sub(pa, pb));
    if convexity < 0.0 {
        w * 0.5
    } else {
        w
    }
}

/// Unique, weighted point adjacency edges with `a < b`, sorted by `(a, b)`.
pub fn build_point_adjacency(scene: &Scene, k: usize) -> Result<Vec<AdjacencyEdge>> {
    let normals = scene.normals().ok_or(Error::MissingNormals)?;
    let points = scene.points();
    let mut pairs = BTreeSet::new();
    if let Some(faces) = scene.faces() {
        for f in faces {
            for (u, v) in [(f[0], f[1]), (f[1], f[2]), (f[2], f[0])] {
                if u != v {
                    pairs.insert((u.min(v), u.max(v)));
                }
            }
        }
    } else {
        if k == 0 {
            return Err(Error::InvalidArgument(
                "k-NN adjacency needs k >= 1".into(),
            ));
        }
        let tree = KdTree::new(points);
        for (i, p) in points.iter().enumerate() {
            for (j, _) in tree.nearest(*p, k + 1) {
                if j != i {
                    pairs.insert((i.min(j), i.max(j)));
                }
            }
        }
    }
    Ok(pairs
        .into_iter()
        .map(|(a, b)| AdjacencyEdge {
            a,
            b,
            weight: edge_weight(points[a], normals[a], points[b], normals[b]),
        })
        .collect())
}

struct DisjointSet {
    parent: Vec<usize>,
    size: Vec<usize>,
    internal: Vec<f64>,
}

impl DisjointSet {
    fn new(n: usize) -> Self {
        DisjointSet {
            parent: (0..n).collect(),
            size: vec![1; n],
            internal: vec![0.0; n],
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    fn union(&mut self, a: usize, b: usize, weight: f64) -> usize {
        let (big, small) = if self.size[a] >= self.size[b] {
            (a, b)
        } else {
            (b, a)
        };
        self.parent[small] = big;
        self.size[big] += self.size[small];
        self.internal[big] = self.internal[big].max(self.internal[small]).max(weight);
        big
    }
}

#[derive(Debug, Clone)]
pub struct OversegResult {
    pub segmentation: Segmentation,
    /// Points with no adjacency at all; each stays a singleton segment.
    pub isolated: Vec<usize>,
}

/// Edges in ascending `(weight, a, b)` order.
pub fn sorted_edges(edges: &[AdjacencyEdge]) -> Vec<AdjacencyEdge> {
    let mut sorted = edges.to_vec();
    sorted.sort_by(|x, y| {
        x.weight
            .total_cmp(&y.weight)
            .then(x.a.cmp(&y.a))
            .then(x.b.cmp(&y.b))
    });
    sorted
}

/// Graph-based segmentation with region threshold `kappa / |C|`, followed by
/// merging of components smaller than `min_size` along their cheapest edge.
pub fn felzenszwalb_segment(
    num_points: usize,
    edges: &[AdjacencyEdge],
    kappa: f64,
    min_size: usize,
) -> Result<OversegResult> {
    if kappa.is_nan() || kappa <= 0.0 {
        return Err(Error::InvalidArgument(format!("kappa must be positive, got {kappa}")));
    }
    if min_size == 0 {
        return Err(Error::InvalidArgument("min_size must be at least 1".into()));
    }
    if num_points == 0 {
        return Err(Error::InvalidArgument("no points to segment".into()));
    }
    let mut touched = vec![false; num_points];
    for e in edges {
        if e.a >= num_points || e.b >= num_points {
            return Err(Error::validation(
                "edges",
                format!("edge ({}, {}) out of range for {num_points} points", e.a, e.b),
            ));
        }
        if e.weight.is_nan() || e.weight < 0.0 {
            return Err(Error::validation("edges", "negative or NaN weight"));
        }
        touched[e.a] = true;
        touched[e.b] = true;
    }
    let sorted = sorted_edges(edges);
    let mut ds = DisjointSet::new(num_points);
    for e in &sorted {
        let ra = ds.find(e.a);
        let rb = ds.find(e.b);
        if ra == rb {
            continue;
        }
        let ta = ds.internal[ra] + kappa / ds.size[ra] as f64;
        let tb = ds.internal[rb] + kappa / ds.size[rb] as f64;
        if e.weight <= ta.min(tb) {
            ds.union(ra, rb, e.weight);
        }
    }
    for e in &sorted {
        let ra = ds.find(e.a);
        let rb = ds.find(e.b);
        if ra != rb && (ds.size[ra] < min_size || ds.size[rb] < min_size) {
            ds.union(ra, rb, e.weight);
        }
    }
    let isolated: Vec<usize> = (0..num_points).filter(|&i| !touched[i]).collect();
    if !isolated.is_empty() {
        log::warn!("{} isolated points kept as singleton segments", isolated.len());
    }
    let roots: Vec<usize> = (0..num_points).map(|i| ds.find(i)).collect();
    Ok(OversegResult {
        segmentation: relabel_by_first_member(&roots)?,
        isolated,
    })
}

/// Dense ids numbered in order of each component's smallest point index.
pub fn relabel_by_first_member(labels: &[usize]) -> Result<Segmentation> {
    let mut map = std::collections::HashMap::new();
    let ids = labels
        .iter()
        .map(|l| {
            let next = map.len();
            *map.entry(*l).or_insert(next)
        })
        .collect();
    Segmentation::new(ids)
}

/// Estimates normals when missing, builds adjacency and segments.
pub fn oversegment(scene: &Scene, k: usize, kappa: f64, min_size: usize) -> Result<OversegResult> {
    let with_normals;
    let scene = if scene.normals().is_some() {
        scene
    } else {
        with_normals = crate::scene::estimate_normals(scene, k.max(3))?.scene;
        &with_normals
    };
    let edges = build_point_adjacency(scene, k)?;
    felzenszwalb_segment(scene.len(), &edges, kappa, min_size)
}

pub fn segmentation_to_json(seg: &Segmentation) -> Value {
    json!({ "segIndices": seg.seg_ids() })
}

pub fn segmentation_from_json(value: &Value) -> Result<Segmentation> {
    let ids = value
        .get("segIndices")
        .and_then(Value::as_array)
        .ok_or_else(|| Error::validation("segIndices", "missing or not an array"))?;
    let raw: Vec<u64> = ids
        .iter()
        .enumerate()
        .map(|(i, v)| {
            v.as_u64()
                .ok_or_else(|| Error::validation(format!("segIndices[{i}]"), "not a non-negative integer"))
        })
        .collect::<Result<_>>()?;
    Segmentation::from_sparse_ids(&raw)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scene::DEFAULT_COLOR;

    #[test]
    fn weight_examples() {
        let up = [0.0, 0.0, 1.0];
        assert_eq!(edge_weight([0.0; 3], up, [1.0, 0.0, 0.0], up), 0.0);
        // floor meeting a wall rising at x = 1, normals facing into the room
        let concave = edge_weight([0.9, 0.0, 0.0], up, [1.0, 0.0, 0.1], [-1.0, 0.0, 0.0]);
        assert!((concave - 1.0).abs() < 1e-15);
        // box top meeting its +x side
        let convex = edge_weight([0.9, 0.0, 1.0], up, [1.0, 0.0, 0.9], [1.0, 0.0, 0.0]);
        assert!((convex - 0.5).abs() < 1e-15);
    }

    #[test]
    fn missing_normals_error() {
        let s = Scene::new(vec![[0.0; 3]; 3], vec![DEFAULT_COLOR; 3], None, None).unwrap();
        assert!(matches!(build_point_adjacency(&s, 2), Err(Error::MissingNormals)));
    }

    #[test]
    fn mesh_edges_are_unique() {
        let s = Scene::new(
            vec![[0.0, 0.0, 0.0], [1.0, 0.0, 0.0], [1.0, 1.0, 0.0], [0.0, 1.0, 0.0]],
            vec![DEFAULT_COLOR; 4],
            Some(vec![[0.0, 0.0, 1.0]; 4]),
            Some(vec![[0, 1, 2], [0, 2, 3]]),
        )
        .unwrap();
        let edges = build_point_adjacency(&s, 0).unwrap();
        let pairs: Vec<_> = edges.iter().map(|e| (e.a, e.b)).collect();
        assert_eq!(pairs, vec![(0, 1), (0, 2), (0, 3), (1, 2), (2, 3)]);
    }

    #[test]
    fn flat_plane_is_one_segment() {
        let edges: Vec<_> = (0..99)
            .map(|i| AdjacencyEdge { a: i, b: i + 1, weight: 0.0 })
            .collect();
        let r = felzenszwalb_segment(100, &edges, 0.06, 20).unwrap();
        assert_eq!(r.segmentation.num_segments(), 1);
    }

    #[test]
    fn isolated_vertex_stays_singleton() {
        let edges = vec![AdjacencyEdge { a: 0, b: 1, weight: 0.0 }];
        let r = felzenszwalb_segment(3, &edges, 0.06, 20).unwrap();
        assert_eq!(r.segmentation.seg_ids(), &[0, 0, 1]);
        assert_eq!(r.isolated, vec![2]);
    }

    #[test]
    fn small_components_merge_along_cheapest_edge() {
        // 0-1-2 strongly tied, 3 hangs off 2 at 0.9 and off 4 at 0.8; 4-5-6 tied
        let e = |a, b, weight| AdjacencyEdge { a, b, weight };
        let edges = vec![
            e(0, 1, 0.0),
            e(1, 2, 0.0),
            e(2, 3, 0.9),
            e(3, 4, 0.8),
            e(4, 5, 0.0),
            e(5, 6, 0.0),
        ];
        let r = felzenszwalb_segment(7, &edges, 0.01, 2).unwrap();
        assert_eq!(r.segmentation.seg_ids(), &[0, 0, 0, 1, 1, 1, 1]);
    }

    #[test]
    fn bad_arguments() {
        assert!(felzenszwalb_segment(2, &[], 0.0, 1).is_err());
        assert!(felzenszwalb_segment(2, &[], 1.0, 0).is_err());
        let e = AdjacencyEdge { a: 0, b: 5, weight: 0.0 };
        assert!(felzenszwalb_segment(2, &[e], 1.0, 1).is_err());
    }

    #[test]
    fn json_accepts_sparse_ids() {
        let v = json!({"segIndices": [5, 5, 9]});
        let s = segmentation_from_json(&v).unwrap();
        assert_eq!(s.seg_ids(), &[0, 0, 1]);
        assert!(segmentation_from_json(&json!({"segIndices": [-1]})).is_err());
    }
}
