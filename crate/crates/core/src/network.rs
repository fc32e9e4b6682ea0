//! Learnable parameters of the grouping network and its classifier head,
//! plus the per-segment feature operators built on them.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::autodiff::{LayerVars, Tape, Var};
use crate::error::{Error, Result};
use crate::graph::SegmentGraph;
use crate::tensor::{euclidean, Mat};

pub const EDGE_WIDTH: usize = 64;
pub const STRUCTURAL_CHANNELS: usize = 6;
pub const SEMANTIC_CHANNELS: usize = 9;
pub const STRUCTURAL_DIM: usize = 2 * EDGE_WIDTH;
pub const SEMANTIC1_DIM: usize = STRUCTURAL_DIM + EDGE_WIDTH;
pub const INSTANCE_DIM: usize = SEMANTIC1_DIM + EDGE_WIDTH;
pub const CLASSIFIER_HIDDEN: usize = 128;

/// Affine layer: `weight` is `(out x in)`, `bias` is `(1 x out)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    pub weight: Mat,
    pub bias: Mat,
}

impl DenseLayer {
    pub fn zeros(input: usize, output: usize) -> Self {
        DenseLayer {
            weight: Mat::zeros(output, input),
            bias: Mat::zeros(1, output),
        }
    }

    /// Uniform in `[-s, s]` with `s = fan_in^-1/2`, biases included.
    pub fn uniform(input: usize, output: usize, rng: &mut ChaCha8Rng) -> Self {
        let s = 1.0 / (input as f64).sqrt();
        let mut draw = |n: usize| (0..n).map(|_| rng.random_range(-s..=s)).collect::<Vec<_>>();
        let weight = Mat::from_vec(output, input, draw(output * input));
        let bias = Mat::from_vec(1, output, draw(output));
        DenseLayer { weight, bias }
    }

    pub fn input_dim(&self) -> usize {
        self.weight.cols
    }

    pub fn output_dim(&self) -> usize {
        self.weight.rows
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeConvParams {
    pub layers: Vec<DenseLayer>,
    pub k_points: usize,
}

impl EdgeConvParams {
    /// Width of the per-point channels this extractor expects.
    pub fn channels(&self) -> usize {
        self.layers[0].input_dim() / 2
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, DenseLayer::output_dim)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    Max,
    MaxAndAvg,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GcnParams {
    pub weight: Mat,
    pub lambda: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ClassifierParams {
    pub hidden: DenseLayer,
    pub output: DenseLayer,
}

impl ClassifierParams {
    pub fn num_classes(&self) -> usize {
        self.output.output_dim()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NetworkParams {
    pub structural: EdgeConvParams,
    pub semantic1: EdgeConvParams,
    pub semantic2: EdgeConvParams,
    pub gcn1: GcnParams,
    pub gcn2: GcnParams,
    pub classifier: ClassifierParams,
}

impl NetworkParams {
    pub fn init(num_classes: usize, k_points: usize, lambda: f64, seed: u64) -> Result<Self> {
        if num_classes == 0 {
            return Err(Error::InvalidArgument("classifier needs at least one class".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let edge = |layers: Vec<DenseLayer>| EdgeConvParams { layers, k_points };
        let structural = edge(vec![DenseLayer::uniform(2 * STRUCTURAL_CHANNELS, EDGE_WIDTH, &mut rng)]);
        let semantic1 = edge(vec![DenseLayer::uniform(2 * SEMANTIC_CHANNELS, EDGE_WIDTH, &mut rng)]);
        let semantic2 = edge(vec![
            DenseLayer::uniform(2 * SEMANTIC_CHANNELS, EDGE_WIDTH, &mut rng),
            DenseLayer::uniform(EDGE_WIDTH, EDGE_WIDTH, &mut rng),
        ]);
        let mut square = |d: usize| GcnParams {
            weight: DenseLayer::uniform(d, d, &mut rng).weight,
            lambda,
        };
        let gcn1 = square(SEMANTIC1_DIM);
        let gcn2 = square(INSTANCE_DIM);
        let classifier = ClassifierParams {
            hidden: DenseLayer::uniform(INSTANCE_DIM, CLASSIFIER_HIDDEN, &mut rng),
            output: DenseLayer::uniform(CLASSIFIER_HIDDEN, num_classes, &mut rng),
        };
        Ok(NetworkParams {
            structural,
            semantic1,
            semantic2,
            gcn1,
            gcn2,
            classifier,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.classifier.num_classes()
    }

    /// Every tensor with a stable name, in a fixed order.
    pub fn tensors(&self) -> Vec<(String, &Mat)> {
        let mut out = Vec::new();
        for (name, e) in [
            ("structural", &self.structural),
            ("semantic1", &self.semantic1),
            ("semantic2", &self.semantic2),
        ] {
            for (i, l) in e.layers.iter().enumerate() {
                out.push((format!("{name}.{i}.weight"), &l.weight));
                out.push((format!("{name}.{i}.bias"), &l.bias));
            }
        }
        out.push(("gcn1.weight".into(), &self.gcn1.weight));
        out.push(("gcn2.weight".into(), &self.gcn2.weight));
        out.push(("classifier.hidden.weight".into(), &self.classifier.hidden.weight));
        out.push(("classifier.hidden.bias".into(), &self.classifier.hidden.bias));
        out.push(("classifier.output.weight".into(), &self.classifier.output.weight));
        out.push(("classifier.output.bias".into(), &self.classifier.output.bias));
        out
    }

    /// Mutable tensors in the same order as [`NetworkParams::tensors`].
    pub fn tensors_mut(&mut self) -> Vec<&mut Mat> {
        let mut out = Vec::new();
        for e in [&mut self.structural, &mut self.semantic1, &mut self.semantic2] {
            for l in &mut e.layers {
                out.push(&mut l.weight);
                out.push(&mut l.bias);
            }
        }
        out.push(&mut self.gcn1.weight);
        out.push(&mut self.gcn2.weight);
        let c = &mut self.classifier;
        out.push(&mut c.hidden.weight);
        out.push(&mut c.hidden.bias);
        out.push(&mut c.output.weight);
        out.push(&mut c.output.bias);
        out
    }

    pub fn num_parameters(&self) -> usize {
        self.tensors().iter().map(|(_, m)| m.data.len()).sum()
    }

    /// Puts every tensor on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundParams {
        let vars: Vec<Var> = self
            .tensors()
            .into_iter()
            .map(|(_, m)| {
                if trainable {
                    tape.param(m.clone())
                } else {
                    tape.constant(m.clone())
                }
            })
            .collect();
        let mut it = vars.iter().copied();
        let mut take_layers = |n: usize| -> Vec<LayerVars> {
            (0..n)
                .map(|_| LayerVars {
                    weight: it.next().unwrap(),
                    bias: it.next().unwrap(),
                })
                .collect()
        };
        let structural = take_layers(self.structural.layers.len());
        let semantic1 = take_layers(self.semantic1.layers.len());
        let semantic2 = take_layers(self.semantic2.layers.len());
        let gcn1 = it.next().unwrap();
        let gcn2 = it.next().unwrap();
        let hidden = LayerVars {
            weight: it.next().unwrap(),
            bias: it.next().unwrap(),
        };
        let output = LayerVars {
            weight: it.next().unwrap(),
            bias: it.next().unwrap(),
        };
        BoundParams {
            structural,
            semantic1,
            semantic2,
            gcn1,
            gcn2,
            hidden,
            output,
            all: vars,
        }
    }
}

/// Tape handles for [`NetworkParams`].
#[derive(Debug, Clone)]
pub struct BoundParams {
    pub structural: Vec<LayerVars>,
    pub semantic1: Vec<LayerVars>,
    pub semantic2: Vec<LayerVars>,
    pub gcn1: Var,
    pub gcn2: Var,
    pub hidden: LayerVars,
    pub output: LayerVars,
    /// Same order as [`NetworkParams::tensors`].
    pub all: Vec<Var>,
}

/// `k` nearest sampled points (self included) by XYZ for each row of a
/// `points x channels` block whose first three channels are positions.
/// Ties go to the lower index.
pub fn sample_neighbors(xyz: &[[f64; 3]], k: usize) -> Vec<usize> {
    let n = xyz.len();
    let k = k.min(n);
    let mut out = Vec::with_capacity(n * k);
    let mut order: Vec<(f64, usize)> = Vec::with_capacity(n);
    for p in xyz {
        order.clear();
        order.extend(xyz.iter().enumerate().map(|(j, q)| (crate::scene::dist2(*p, *q), j)));
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        out.extend(order[..k].iter().map(|&(_, j)| j));
    }
    out
}

/// Records an EdgeConv segment extractor over stacked per-node point blocks.
/// `blocks[i]` lists the rows of `x` that belong to node `i`; `neighbors`
/// indexes rows of `x` with `k` entries per row.
pub(crate) fn edge_conv_pooled(
    tape: &mut Tape,
    x: Var,
    neighbors: Vec<usize>,
    k: usize,
    layers: &[LayerVars],
    blocks: &[Vec<usize>],
    pooling: Pooling,
) -> Var {
    let y = tape.edge_conv(x, neighbors, k, layers);
    let mx = tape.segment_max(y, blocks);
    match pooling {
        Pooling::Max => mx,
        Pooling::MaxAndAvg => {
            let avg = tape.segment_mean(y, blocks);
            tape.concat(mx, avg)
        }
    }
}

/// Feature of one segment from its sampled points (`points x channels`).
pub fn edgeconv_segment_feature(points: &Mat, params: &EdgeConvParams, pooling: Pooling) -> Result<Vec<f64>> {
    if params.layers.is_empty() {
        return Err(Error::Shape("EdgeConv needs at least one layer".into()));
    }
    if points.cols != params.channels() {
        return Err(Error::Shape(format!(
            "points carry {} channels, extractor expects {}",
            points.cols,
            params.channels()
        )));
    }
    if points.rows == 0 || points.cols < 3 {
        return Err(Error::Shape("need at least one point with XYZ channels".into()));
    }
    let xyz: Vec<[f64; 3]> = (0..points.rows)
        .map(|r| [points.get(r, 0), points.get(r, 1), points.get(r, 2)])
        .collect();
    let k = params.k_points.min(points.rows);
    let neighbors = sample_neighbors(&xyz, k);
    let mut tape = Tape::new();
    let layers: Vec<LayerVars> = params
        .layers
        .iter()
        .map(|l| LayerVars {
            weight: tape.constant(l.weight.clone()),
            bias: tape.constant(l.bias.clone()),
        })
        .collect();
    let x = tape.constant(points.clone());
    let out = edge_conv_pooled(&mut tape, x, neighbors, k, &layers, &[(0..points.rows).collect()], pooling);
    Ok(tape.value(out).data.clone())
}

/// Similarity of two node features, `exp(-lambda |h_i - h_j|)`.
pub fn similarity(h_i: &[f64], h_j: &[f64], lambda: f64) -> f64 {
    (-lambda * euclidean(h_i, h_j)).exp()
}

/// Normalized aggregation coefficients per node: `(a_ii, [(k, a_ik)])` with
/// neighbors ascending.
pub fn gcn_coefficients(graph: &SegmentGraph, features: &Mat, lambda: f64) -> Vec<(f64, Vec<(usize, f64)>)> {
    graph
        .adjacency()
        .iter()
        .enumerate()
        .map(|(i, nbrs)| {
            let e: Vec<f64> = nbrs
                .iter()
                .map(|&k| similarity(features.row(i), features.row(k), lambda))
                .collect();
            let s = 1.0 + e.iter().sum::<f64>();
            (1.0 / s, nbrs.iter().zip(e).map(|(&k, e)| (k, e / s)).collect())
        })
        .collect()
}

/// One graph-convolution step over the segment graph:
/// `h_i' = relu(a_ii W h_i + sum_k a_ik W h_k)`.
pub fn gcn_forward(graph: &SegmentGraph, features: &Mat, params: &GcnParams) -> Result<Mat> {
    if features.rows != graph.len() {
        return Err(Error::Shape(format!(
            "{} feature rows for {} nodes",
            features.rows,
            graph.len()
        )));
    }
    if params.weight.rows != params.weight.cols || params.weight.cols != features.cols {
        return Err(Error::Shape(format!(
            "GCN weight {:?} does not fit features of width {}",
            params.weight.shape(),
            features.cols
        )));
    }
    let mut tape = Tape::new();
    let h = tape.constant(features.clone());
    let w = tape.constant(params.weight.clone());
    let out = gcn_on_tape(&mut tape, h, w, &graph.adjacency(), params.lambda);
    Ok(tape.value(out).clone())
}

pub(crate) fn gcn_on_tape(tape: &mut Tape, h: Var, w: Var, adjacency: &[Vec<usize>], lambda: f64) -> Var {
    let hw = tape.linear(h, w, None);
    let agg = tape.graph_aggregate(h, hw, adjacency, lambda);
    tape.relu(agg)
}

/// Class scores for each instance feature row.
pub fn classifier_forward(features: &Mat, params: &ClassifierParams) -> Result<Mat> {
    if features.cols != params.hidden.input_dim() {
        return Err(Error::Shape(format!(
            "instance features have width {}, classifier expects {}",
            features.cols,
            params.hidden.input_dim()
        )));
    }
    let mut tape = Tape::new();
    let x = tape.constant(features.clone());
    let hidden = LayerVars {
        weight: tape.constant(params.hidden.weight.clone()),
        bias: tape.constant(params.hidden.bias.clone()),
    };
    let output = LayerVars {
        weight: tape.constant(params.output.weight.clone()),
        bias: tape.constant(params.output.bias.clone()),
    };
    let logits = classifier_on_tape(&mut tape, x, hidden, output);
    Ok(tape.value(logits).clone())
}

pub(crate) fn classifier_on_tape(tape: &mut Tape, x: Var, hidden: LayerVars, output: LayerVars) -> Var {
    let h = tape.linear(x, hidden.weight, Some(hidden.bias));
    let h = tape.relu(h);
    tape.linear(h, output.weight, Some(output.bias))
}

/// `-log softmax(logits)[target]`.
pub fn cross_entropy(logits: &[f64], target: usize) -> Result<f64> {
    if target >= logits.len() {
        return Err(Error::InvalidArgument(format!(
            "target class {target} out of range for {} scores",
            logits.len()
        )));
    }
    Ok(crate::autodiff::softmax_ce(logits, target).0)
}
