//! Straight-line reference implementations used as test oracles. They favor
//! obviousness over speed: every merge relabels all members explicitly.

use std::collections::{BTreeMap, BTreeSet};

use seggroup::graph::NodeLabel;
use seggroup::overseg::AdjacencyEdge;

pub struct RefGraph {
    pub labels: Vec<Option<NodeLabel>>,
    pub edges: Vec<(usize, usize)>,
    pub features: Vec<Vec<f64>>,
}

#[derive(Debug, PartialEq)]
pub struct RefResult {
    /// Groups of input nodes, each sorted, ordered by smallest member.
    pub groups: Vec<Vec<usize>>,
    pub labels: Vec<Option<NodeLabel>>,
    pub features: Vec<Vec<f64>>,
}

fn dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

fn elementwise_max(rows: &[&Vec<f64>]) -> Vec<f64> {
    let mut out = rows[0].clone();
    for r in &rows[1..] {
        for (o, v) in out.iter_mut().zip(r.iter()) {
            *o = o.max(*v);
        }
    }
    out
}

fn finish(g: &RefGraph, cluster_of: &[usize]) -> RefResult {
    let mut by_cluster: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for (node, &c) in cluster_of.iter().enumerate() {
        by_cluster.entry(c).or_default().push(node);
    }
    let mut groups: Vec<Vec<usize>> = by_cluster.into_values().collect();
    groups.sort_by_key(|m| m[0]);
    let labels = groups
        .iter()
        .map(|m| {
            let distinct: BTreeSet<NodeLabel> = m.iter().filter_map(|&n| g.labels[n]).collect();
            assert!(distinct.len() <= 1, "reference produced a mixed group {m:?}");
            distinct.into_iter().next()
        })
        .collect();
    let features = groups
        .iter()
        .map(|m| elementwise_max(&m.iter().map(|&n| &g.features[n]).collect::<Vec<_>>()))
        .collect();
    RefResult { groups, labels, features }
}

/// One grouping layer: visit every edge in order of feature distance (ties
/// by smaller then larger endpoint) and merge the two clusters when they
/// differ, are not both labeled, and are closer than `tau`.
pub fn layer(g: &RefGraph, tau: f64) -> RefResult {
    let n = g.labels.len();
    let mut cluster_of: Vec<usize> = (0..n).collect();
    let mut cluster_labeled: Vec<bool> = g.labels.iter().map(Option::is_some).collect();
    let mut edges: Vec<(f64, usize, usize)> = g
        .edges
        .iter()
        .map(|&(a, b)| (dist(&g.features[a], &g.features[b]), a.min(b), a.max(b)))
        .collect();
    edges.sort_by(|x, y| x.partial_cmp(y).unwrap());
    for (d, a, b) in edges {
        let (ca, cb) = (cluster_of[a], cluster_of[b]);
        if ca == cb || (cluster_labeled[ca] && cluster_labeled[cb]) {
            continue;
        }
        if d < tau {
            let (keep, gone) = (ca.min(cb), ca.max(cb));
            for c in cluster_of.iter_mut() {
                if *c == gone {
                    *c = keep;
                }
            }
            cluster_labeled[keep] = cluster_labeled[keep] || cluster_labeled[gone];
        }
    }
    finish(g, &cluster_of)
}

/// Final stage: sweep the unlabeled nodes in ascending id order, merging
/// each into its nearest current neighbor (ties to the lowest id) with
/// max-pooled features and rewired edges; repeat until nothing is
/// unlabeled, then join nodes that carry the same label.
pub fn final_stage(g: &RefGraph) -> Option<RefResult> {
    let n = g.labels.len();
    let mut cluster_of: Vec<usize> = (0..n).collect();
    let mut feature: BTreeMap<usize, Vec<f64>> = (0..n).map(|i| (i, g.features[i].clone())).collect();
    let mut label: BTreeMap<usize, Option<NodeLabel>> = (0..n).map(|i| (i, g.labels[i])).collect();
    let mut edges: BTreeSet<(usize, usize)> = g.edges.iter().map(|&(a, b)| (a.min(b), a.max(b))).collect();
    loop {
        let sweep: Vec<usize> = label.iter().filter(|(_, l)| l.is_none()).map(|(&id, _)| id).collect();
        if sweep.is_empty() {
            break;
        }
        for u in sweep {
            if !feature.contains_key(&u) {
                continue;
            }
            let mut best: Option<(f64, usize)> = None;
            for &(a, b) in &edges {
                let v = if a == u {
                    b
                } else if b == u {
                    a
                } else {
                    continue;
                };
                let d = dist(&feature[&u], &feature[&v]);
                if best.is_none_or(|(bd, bv)| d < bd || (d == bd && v < bv)) {
                    best = Some((d, v));
                }
            }
            let (_, t) = best?;
            let pooled = elementwise_max(&[&feature[&t], &feature[&u]]);
            feature.insert(t, pooled);
            feature.remove(&u);
            label.remove(&u);
            for c in cluster_of.iter_mut() {
                if *c == u {
                    *c = t;
                }
            }
            edges = edges
                .into_iter()
                .map(|(a, b)| (if a == u { t } else { a }, if b == u { t } else { b }))
                .filter(|(a, b)| a != b)
                .map(|(a, b)| (a.min(b), a.max(b)))
                .collect();
        }
    }
    let mut rep: BTreeMap<NodeLabel, usize> = BTreeMap::new();
    for (&id, l) in &label {
        rep.entry(l.expect("all labeled")).or_insert(id);
    }
    for c in cluster_of.iter_mut() {
        *c = rep[&label[c].unwrap()];
    }
    // max-pooling is associative, so the pooled feature of each final group
    // is the max over its members
    Some(finish(g, &cluster_of))
}

/// Graph-based segmentation by repeated relabeling: edges by ascending
/// (weight, a, b); merge when the weight is within both components'
/// `internal + kappa / size`; then absorb components below `min_size`.
/// Returns dense ids numbered by each component's first point.
pub fn felzenszwalb(n: usize, edges: &[AdjacencyEdge], kappa: f64, min_size: usize) -> Vec<usize> {
    let mut comp: Vec<usize> = (0..n).collect();
    let mut internal = vec![0.0f64; n];
    let mut sorted = edges.to_vec();
    sorted.sort_by(|x, y| x.weight.partial_cmp(&y.weight).unwrap().then(x.a.cmp(&y.a)).then(x.b.cmp(&y.b)));
    let size = |comp: &[usize], c: usize| comp.iter().filter(|&&x| x == c).count();
    let merge = |comp: &mut Vec<usize>, internal: &mut Vec<f64>, ca: usize, cb: usize, w: f64| {
        for x in comp.iter_mut() {
            if *x == cb {
                *x = ca;
            }
        }
        internal[ca] = internal[ca].max(internal[cb]).max(w);
    };
    for e in &sorted {
        let (ca, cb) = (comp[e.a], comp[e.b]);
        if ca == cb {
            continue;
        }
        let ta = internal[ca] + kappa / size(&comp, ca) as f64;
        let tb = internal[cb] + kappa / size(&comp, cb) as f64;
        if e.weight <= ta.min(tb) {
            merge(&mut comp, &mut internal, ca, cb, e.weight);
        }
    }
    for e in &sorted {
        let (ca, cb) = (comp[e.a], comp[e.b]);
        if ca != cb && (size(&comp, ca) < min_size || size(&comp, cb) < min_size) {
            merge(&mut comp, &mut internal, ca, cb, e.weight);
        }
    }
    let mut dense: BTreeMap<usize, usize> = BTreeMap::new();
    comp.iter()
        .map(|c| {
            let next = dense.len();
            *dense.entry(*c).or_insert(next)
        })
        .collect()
}
