//! Feature-driven merging of segment-graph nodes.
//!
//! Both passes only decide *which* nodes merge; they return the partition
//! as groups of current node indices, ordered by each group's smallest
//! member. Pooling the features of a group is a separate step so the same
//! decisions can be replayed on a differentiable tape.

use std::collections::BTreeSet;

use crate::error::{Error, Result};
use crate::graph::{nodes_by_label, NodeLabel, SegmentGraph};
use crate::tensor::{euclidean, Mat};

struct UnionFind {
    parent: Vec<usize>,
}

impl UnionFind {
    fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
        }
    }

    fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Keeps the smaller root so roots are always the smallest member.
    fn union(&mut self, a: usize, b: usize) -> usize {
        let (ra, rb) = (self.find(a), self.find(b));
        let (keep, drop) = (ra.min(rb), ra.max(rb));
        self.parent[drop] = keep;
        keep
    }
}

fn check_features(graph: &SegmentGraph, features: &Mat) -> Result<()> {
    if features.rows != graph.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            features.rows,
            graph.len()
        )));
    }
    Ok(())
}

fn groups_from_roots(roots: &[usize]) -> Vec<Vec<usize>> {
    let mut slot = vec![usize::MAX; roots.len()];
    let mut groups: Vec<Vec<usize>> = Vec::new();
    // roots are the smallest member, so the first time a root shows up is at
    // that member and groups come out ordered by smallest member
    for (i, &r) in roots.iter().enumerate() {
        if slot[r] == usize::MAX {
            slot[r] = groups.len();
            groups.push(Vec::new());
        }
        groups[slot[r]].push(i);
    }
    groups
}

/// Threshold merging for one intermediate layer.
///
/// Edges are visited by ascending feature distance (ties by endpoint ids).
/// An edge merges its two clusters when the distance is below `tau`, unless
/// they are already one cluster or both already carry a label. Distances
/// are computed once from the incoming features.
pub fn cluster_layer(graph: &SegmentGraph, features: &Mat, tau: f64) -> Result<Vec<Vec<usize>>> {
    check_features(graph, features)?;
    let mut order: Vec<(f64, usize, usize)> = graph
        .edges()
        .iter()
        .map(|&(a, b)| (euclidean(features.row(a), features.row(b)), a, b))
        .collect();
    order.sort_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)).then(x.2.cmp(&y.2)));

    let mut uf = UnionFind::new(graph.len());
    let mut labeled: Vec<bool> = graph.labels().iter().map(Option::is_some).collect();
    for (d, a, b) in order {
        if d >= tau {
            break;
        }
        let (ra, rb) = (uf.find(a), uf.find(b));
        if ra == rb || (labeled[ra] && labeled[rb]) {
            continue;
        }
        let merged_label = labeled[ra] || labeled[rb];
        let root = uf.union(ra, rb);
        labeled[root] = merged_label;
    }
    let roots: Vec<usize> = (0..graph.len()).map(|i| uf.find(i)).collect();
    Ok(groups_from_roots(&roots))
}

/// Final pass: every unlabeled node joins its feature-nearest neighbor until
/// only labeled nodes remain; nodes sharing one label are then combined so
/// each instance is exactly one node.
///
/// Unlabeled nodes are visited in ascending id order. A merge takes the
/// element-wise max of both features and moves the absorbed node's edges to
/// the survivor, so later choices see the updated graph.
pub fn cluster_final(graph: &SegmentGraph, features: &Mat) -> Result<Vec<Vec<usize>>> {
    check_features(graph, features)?;
    let n = graph.len();
    let mut alive = vec![true; n];
    let mut members: Vec<Vec<usize>> = (0..n).map(|i| vec![i]).collect();
    let mut feats: Vec<Vec<f64>> = (0..n).map(|i| features.row(i).to_vec()).collect();
    let mut adj: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for &(a, b) in graph.edges() {
        adj[a].insert(b);
        adj[b].insert(a);
    }
    let labels: Vec<Option<NodeLabel>> = graph.labels().to_vec();

    loop {
        let pending: Vec<usize> = (0..n).filter(|&i| alive[i] && labels[i].is_none()).collect();
        if pending.is_empty() {
            break;
        }
        for u in pending {
            if !alive[u] {
                continue;
            }
            let target = adj[u]
                .iter()
                .map(|&v| (euclidean(&feats[u], &feats[v]), v))
                .min_by(|x, y| x.0.total_cmp(&y.0).then(x.1.cmp(&y.1)))
                .map(|(_, v)| v)
                .ok_or(Error::UnreachableLabel { node: u })?;
            let moved = std::mem::take(&mut members[u]);
            members[target].extend(moved);
            let fu = std::mem::take(&mut feats[u]);
            for (t, s) in feats[target].iter_mut().zip(fu) {
                if s > *t {
                    *t = s;
                }
            }
            let nbrs = std::mem::take(&mut adj[u]);
            for w in nbrs {
                adj[w].remove(&u);
                if w != target {
                    adj[w].insert(target);
                    adj[target].insert(w);
                }
            }
            alive[u] = false;
        }
    }

    let mut survivors: Vec<usize> = (0..n).filter(|&i| alive[i]).collect();
    for &s in &survivors {
        members[s].sort_unstable();
    }
    survivors.sort_by_key(|&s| members[s][0]);
    let intermediate: Vec<Vec<usize>> = survivors.iter().map(|&s| members[s].clone()).collect();
    Ok(coalesce_by_label(graph, intermediate))
}

/// Merges groups whose nodes carry the same label.
fn coalesce_by_label(graph: &SegmentGraph, groups: Vec<Vec<usize>>) -> Vec<Vec<usize>> {
    let by_label = nodes_by_label(graph);
    let mut owner = vec![0usize; graph.len()];
    for (g, ms) in groups.iter().enumerate() {
        for &m in ms {
            owner[m] = g;
        }
    }
    let mut uf = UnionFind::new(groups.len());
    for nodes in by_label.values() {
        for w in nodes.windows(2) {
            uf.union(owner[w[0]], owner[w[1]]);
        }
    }
    let roots: Vec<usize> = (0..groups.len()).map(|g| uf.find(g)).collect();
    groups_from_roots(&roots)
        .into_iter()
        .map(|gs| {
            let mut ms: Vec<usize> = gs.into_iter().flat_map(|g| groups[g].iter().copied()).collect();
            ms.sort_unstable();
            ms
        })
        .collect()
}

/// Element-wise max of the feature rows in each group.
pub fn pool_features(features: &Mat, groups: &[Vec<usize>]) -> Mat {
    let rows: Vec<Vec<f64>> = groups.iter().map(|g| features.max_pool_rows(g)).collect();
    if rows.is_empty() {
        return Mat::zeros(0, features.cols);
    }
    Mat::from_rows(&rows)
}
