//! Reverse-mode differentiation over dense matrices.
//!
//! A [`Tape`] records every operation of one forward pass; [`Tape::backward`]
//! then accumulates gradients for the leaves marked trainable. Only the ops
//! the grouping network needs are provided. Max reductions send the whole
//! gradient to the first maximal element.

use rayon::prelude::*;

use crate::tensor::Mat;

const EDGECONV_CHUNK: usize = 256;

/// Per-layer (weight, bias) gradients and the input gradient of one chunk.
type ChunkGrads = (Vec<(Mat, Mat)>, Option<Mat>);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Var(usize);

/// One EdgeConv MLP layer: weights `(out x in)` and bias `(1 x out)`.
#[derive(Debug, Clone, Copy)]
pub struct LayerVars {
    pub weight: Var,
    pub bias: Var,
}

enum Op {
    Leaf,
    Linear {
        x: Var,
        w: Var,
        b: Option<Var>,
    },
    Relu(Var),
    Concat(Var, Var),
    SegmentMax {
        x: Var,
        /// Source row for every output element.
        argmax: Vec<usize>,
    },
    SegmentMean {
        x: Var,
        groups: Vec<Vec<usize>>,
    },
    EdgeConv {
        x: Var,
        neighbors: Vec<usize>,
        k: usize,
        layers: Vec<LayerVars>,
        /// Winning neighbor slot for every output element.
        argmax: Vec<u32>,
    },
    GraphAggregate {
        h: Var,
        hw: Var,
        neighbors: Vec<Vec<usize>>,
        lambda: f64,
        /// exp(-lambda d) per neighbor entry, aligned with `neighbors`.
        coeffs: Vec<Vec<f64>>,
        dists: Vec<Vec<f64>>,
        norms: Vec<f64>,
    },
    CrossEntropyMean {
        logits: Var,
        targets: Vec<usize>,
        probs: Mat,
    },
}

struct Node {
    value: Mat,
    op: Op,
    requires_grad: bool,
}

#[derive(Default)]
pub struct Tape {
    nodes: Vec<Node>,
}

pub struct Gradients {
    grads: Vec<Option<Mat>>,
}

impl Gradients {
    pub fn get(&self, v: Var) -> Option<&Mat> {
        self.grads[v.0].as_ref()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape::default()
    }

    fn push(&mut self, value: Mat, op: Op, requires_grad: bool) -> Var {
        self.nodes.push(Node {
            value,
            op,
            requires_grad,
        });
        Var(self.nodes.len() - 1)
    }

    fn rg(&self, v: Var) -> bool {
        self.nodes[v.0].requires_grad
    }

    pub fn value(&self, v: Var) -> &Mat {
        &self.nodes[v.0].value
    }

    /// A trainable leaf.
    pub fn param(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, true)
    }

    /// A constant leaf.
    pub fn constant(&mut self, value: Mat) -> Var {
        self.push(value, Op::Leaf, false)
    }

    /// `x * w^T (+ b)` with `w` shaped `(out x in)`.
    pub fn linear(&mut self, x: Var, w: Var, b: Option<Var>) -> Var {
        let xv = self.value(x);
        let wv = self.value(w);
        assert_eq!(xv.cols, wv.cols, "linear: input width");
        let mut out = Mat::zeros(xv.rows, wv.rows);
        let bias = b.map(|b| self.value(b).data.clone());
        for r in 0..xv.rows {
            let xr = xv.row(r);
            let orow = out.row_mut(r);
            for (o, oval) in orow.iter_mut().enumerate() {
                let mut acc = bias.as_ref().map_or(0.0, |bv| bv[o]);
                for (a, bb) in xr.iter().zip(wv.row(o)) {
                    acc += a * bb;
                }
                *oval = acc;
            }
        }
        let rg = self.rg(x) || self.rg(w) || b.is_some_and(|b| self.rg(b));
        self.push(out, Op::Linear { x, w, b }, rg)
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let mut out = self.value(x).clone();
        for v in &mut out.data {
            if *v < 0.0 {
                *v = 0.0;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::Relu(x), rg)
    }

    /// Column-wise concatenation.
    pub fn concat(&mut self, a: Var, b: Var) -> Var {
        let (av, bv) = (self.value(a), self.value(b));
        assert_eq!(av.rows, bv.rows, "concat: row count");
        let cols = av.cols + bv.cols;
        let mut out = Mat::zeros(av.rows, cols);
        for r in 0..av.rows {
            let row = out.row_mut(r);
            row[..av.cols].copy_from_slice(av.row(r));
            row[av.cols..].copy_from_slice(bv.row(r));
        }
        let rg = self.rg(a) || self.rg(b);
        self.push(out, Op::Concat(a, b), rg)
    }

    /// Element-wise max over each group of rows.
    pub fn segment_max(&mut self, x: Var, groups: &[Vec<usize>]) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(groups.len(), xv.cols);
        let mut argmax = vec![0usize; groups.len() * xv.cols];
        for (g, rows) in groups.iter().enumerate() {
            assert!(!rows.is_empty(), "segment_max: empty group");
            for c in 0..xv.cols {
                let mut best = rows[0];
                let mut val = xv.get(best, c);
                for &r in &rows[1..] {
                    let v = xv.get(r, c);
                    if v > val {
                        val = v;
                        best = r;
                    }
                }
                out.data[g * xv.cols + c] = val;
                argmax[g * xv.cols + c] = best;
            }
        }
        let rg = self.rg(x);
        self.push(out, Op::SegmentMax { x, argmax }, rg)
    }

    pub fn segment_mean(&mut self, x: Var, groups: &[Vec<usize>]) -> Var {
        let xv = self.value(x);
        let mut out = Mat::zeros(groups.len(), xv.cols);
        for (g, rows) in groups.iter().enumerate() {
            assert!(!rows.is_empty(), "segment_mean: empty group");
            let orow = out.row_mut(g);
            for &r in rows {
                for (o, v) in orow.iter_mut().zip(xv.row(r)) {
                    *o += v;
                }
            }
            let n = rows.len() as f64;
            for o in orow {
                *o /= n;
            }
        }
        let rg = self.rg(x);
        self.push(
            out,
            Op::SegmentMean {
                x,
                groups: groups.to_vec(),
            },
            rg,
        )
    }

    /// EdgeConv: for every point `i`, `max_j MLP([x_i, x_j - x_i])` over its
    /// `k` listed neighbors, with ReLU after each layer. `neighbors` holds `k`
    /// indices per row of `x`.
    pub fn edge_conv(&mut self, x: Var, neighbors: Vec<usize>, k: usize, layers: &[LayerVars]) -> Var {
        let xv = self.value(x);
        let n = xv.rows;
        assert_eq!(neighbors.len(), n * k, "edge_conv: neighbor table size");
        let weights: Vec<(&Mat, &Mat)> = layers
            .iter()
            .map(|l| (self.value(l.weight), self.value(l.bias)))
            .collect();
        assert_eq!(weights[0].0.cols, 2 * xv.cols, "edge_conv: first layer width");
        let out_dim = weights.last().unwrap().0.rows;
        let chunks: Vec<(Vec<f64>, Vec<u32>)> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(EDGECONV_CHUNK)
            .map(|chunk| {
                let mut vals = Vec::with_capacity(chunk.len() * out_dim);
                let mut arg = Vec::with_capacity(chunk.len() * out_dim);
                let mut acts = Vec::new();
                for &i in chunk {
                    let mut best = vec![f64::NEG_INFINITY; out_dim];
                    let mut best_slot = vec![0u32; out_dim];
                    for s in 0..k {
                        let j = neighbors[i * k + s];
                        edge_forward(xv, i, j, &weights, &mut acts);
                        let last = acts.last().unwrap();
                        for c in 0..out_dim {
                            let v = last.1[c];
                            if v > best[c] {
                                best[c] = v;
                                best_slot[c] = s as u32;
                            }
                        }
                    }
                    vals.extend_from_slice(&best);
                    arg.extend_from_slice(&best_slot);
                }
                (vals, arg)
            })
            .collect();
        let mut data = Vec::with_capacity(n * out_dim);
        let mut argmax = Vec::with_capacity(n * out_dim);
        for (v, a) in chunks {
            data.extend(v);
            argmax.extend(a);
        }
        let rg = self.rg(x) || layers.iter().any(|l| self.rg(l.weight) || self.rg(l.bias));
        self.push(
            Mat::from_vec(n, out_dim, data),
            Op::EdgeConv {
                x,
                neighbors,
                k,
                layers: layers.to_vec(),
                argmax,
            },
            rg,
        )
    }

    /// Similarity-weighted neighborhood aggregation:
    /// `out_i = (hw_i + sum_k e_ik hw_k) / (1 + sum_k e_ik)` with
    /// `e_ik = exp(-lambda |h_i - h_k|)`. Neighbor lists must be ascending.
    pub fn graph_aggregate(&mut self, h: Var, hw: Var, neighbors: &[Vec<usize>], lambda: f64) -> Var {
        let hv = self.value(h);
        let hwv = self.value(hw);
        assert_eq!(hv.rows, neighbors.len(), "graph_aggregate: node count");
        assert_eq!(hwv.rows, hv.rows, "graph_aggregate: hw rows");
        let mut out = Mat::zeros(hwv.rows, hwv.cols);
        let mut coeffs = Vec::with_capacity(hv.rows);
        let mut dists = Vec::with_capacity(hv.rows);
        let mut norms = Vec::with_capacity(hv.rows);
        for (i, nbrs) in neighbors.iter().enumerate() {
            let d: Vec<f64> = nbrs
                .iter()
                .map(|&k| crate::tensor::euclidean(hv.row(i), hv.row(k)))
                .collect();
            let e: Vec<f64> = d.iter().map(|&d| (-lambda * d).exp()).collect();
            let s = 1.0 + e.iter().sum::<f64>();
            let orow = out.row_mut(i);
            orow.copy_from_slice(hwv.row(i));
            for (&k, &ek) in nbrs.iter().zip(&e) {
                for (o, v) in orow.iter_mut().zip(hwv.row(k)) {
                    *o += ek * v;
                }
            }
            for o in orow.iter_mut() {
                *o /= s;
            }
            coeffs.push(e);
            dists.push(d);
            norms.push(s);
        }
        let rg = self.rg(h) || self.rg(hw);
        self.push(
            out,
            Op::GraphAggregate {
                h,
                hw,
                neighbors: neighbors.to_vec(),
                lambda,
                coeffs,
                dists,
                norms,
            },
            rg,
        )
    }

    /// Mean softmax cross-entropy over rows.
    pub fn cross_entropy_mean(&mut self, logits: Var, targets: &[usize]) -> Var {
        let lv = self.value(logits);
        assert_eq!(lv.rows, targets.len(), "cross_entropy: target count");
        let mut probs = Mat::zeros(lv.rows, lv.cols);
        let mut total = 0.0;
        for (r, &t) in targets.iter().enumerate() {
            let row = lv.row(r);
            let (loss, p) = softmax_ce(row, t);
            total += loss;
            probs.row_mut(r).copy_from_slice(&p);
        }
        let n = targets.len().max(1) as f64;
        let rg = self.rg(logits);
        self.push(
            Mat::from_vec(1, 1, vec![total / n]),
            Op::CrossEntropyMean {
                logits,
                targets: targets.to_vec(),
                probs,
            },
            rg,
        )
    }

    /// Gradients of the scalar `loss` with respect to every trainable node.
    pub fn backward(&self, loss: Var) -> Gradients {
        assert_eq!(self.value(loss).shape(), (1, 1), "backward needs a scalar");
        let mut grads: Vec<Option<Mat>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Mat::from_vec(1, 1, vec![1.0]));
        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            self.backprop_node(node, &g, &mut grads);
            grads[idx] = Some(g);
        }
        Gradients { grads }
    }

    fn accumulate(&self, grads: &mut [Option<Mat>], v: Var, delta: Mat) {
        if !self.rg(v) {
            return;
        }
        match &mut grads[v.0] {
            Some(g) => g.add_assign(&delta),
            slot => *slot = Some(delta),
        }
    }

    fn backprop_node(&self, node: &Node, g: &Mat, grads: &mut [Option<Mat>]) {
        match &node.op {
            Op::Leaf => {}
            Op::Linear { x, w, b } => {
                let xv = self.value(*x);
                let wv = self.value(*w);
                if self.rg(*x) {
                    let mut gx = Mat::zeros(xv.rows, xv.cols);
                    for r in 0..xv.rows {
                        let gr = g.row(r);
                        let gxr = gx.row_mut(r);
                        for (o, &go) in gr.iter().enumerate() {
                            if go != 0.0 {
                                for (a, wv) in gxr.iter_mut().zip(wv.row(o)) {
                                    *a += go * wv;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *x, gx);
                }
                if self.rg(*w) {
                    let mut gw = Mat::zeros(wv.rows, wv.cols);
                    for r in 0..xv.rows {
                        let xr = xv.row(r);
                        for (o, &go) in g.row(r).iter().enumerate() {
                            if go != 0.0 {
                                for (a, xval) in gw.row_mut(o).iter_mut().zip(xr) {
                                    *a += go * xval;
                                }
                            }
                        }
                    }
                    self.accumulate(grads, *w, gw);
                }
                if let Some(b) = b {
                    if self.rg(*b) {
                        let mut gb = Mat::zeros(1, g.cols);
                        for r in 0..g.rows {
                            for (a, v) in gb.data.iter_mut().zip(g.row(r)) {
                                *a += v;
                            }
                        }
                        self.accumulate(grads, *b, gb);
                    }
                }
            }
            Op::Relu(x) => {
                let mut gx = g.clone();
                for (gv, &y) in gx.data.iter_mut().zip(&node.value.data) {
                    if y <= 0.0 {
                        *gv = 0.0;
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::Concat(a, b) => {
                let ac = self.value(*a).cols;
                let bc = self.value(*b).cols;
                let mut ga = Mat::zeros(g.rows, ac);
                let mut gb = Mat::zeros(g.rows, bc);
                for r in 0..g.rows {
                    ga.row_mut(r).copy_from_slice(&g.row(r)[..ac]);
                    gb.row_mut(r).copy_from_slice(&g.row(r)[ac..]);
                }
                self.accumulate(grads, *a, ga);
                self.accumulate(grads, *b, gb);
            }
            Op::SegmentMax { x, argmax } => {
                let xv = self.value(*x);
                let mut gx = Mat::zeros(xv.rows, xv.cols);
                for (idx, &src) in argmax.iter().enumerate() {
                    let c = idx % xv.cols;
                    gx.data[src * xv.cols + c] += g.data[idx];
                }
                self.accumulate(grads, *x, gx);
            }
            Op::SegmentMean { x, groups } => {
                let xv = self.value(*x);
                let mut gx = Mat::zeros(xv.rows, xv.cols);
                for (gi, rows) in groups.iter().enumerate() {
                    let n = rows.len() as f64;
                    for &r in rows {
                        for (a, v) in gx.row_mut(r).iter_mut().zip(g.row(gi)) {
                            *a += v / n;
                        }
                    }
                }
                self.accumulate(grads, *x, gx);
            }
            Op::EdgeConv {
                x,
                neighbors,
                k,
                layers,
                argmax,
            } => self.backprop_edge_conv(*x, neighbors, *k, layers, argmax, g, grads),
            Op::GraphAggregate {
                h,
                hw,
                neighbors,
                lambda,
                coeffs,
                dists,
                norms,
            } => {
                let hv = self.value(*h);
                let hwv = self.value(*hw);
                let out = &node.value;
                let mut ghw = Mat::zeros(hwv.rows, hwv.cols);
                let mut gh = Mat::zeros(hv.rows, hv.cols);
                for (i, nbrs) in neighbors.iter().enumerate() {
                    let gi = g.row(i);
                    let s = norms[i];
                    for (a, v) in ghw.row_mut(i).iter_mut().zip(gi) {
                        *a += v / s;
                    }
                    for (slot, &k) in nbrs.iter().enumerate() {
                        let e = coeffs[i][slot];
                        for (a, v) in ghw.row_mut(k).iter_mut().zip(gi) {
                            *a += v * e / s;
                        }
                        let d = dists[i][slot];
                        if d > 0.0 {
                            let de: f64 = gi
                                .iter()
                                .zip(hwv.row(k))
                                .zip(out.row(i))
                                .map(|((gv, hk), oi)| gv * (hk - oi))
                                .sum::<f64>()
                                / s;
                            let coef = de * (-lambda * e / d);
                            for c in 0..hv.cols {
                                let diff = hv.get(i, c) - hv.get(k, c);
                                gh.data[i * hv.cols + c] += coef * diff;
                                gh.data[k * hv.cols + c] -= coef * diff;
                            }
                        }
                    }
                }
                self.accumulate(grads, *hw, ghw);
                self.accumulate(grads, *h, gh);
            }
            Op::CrossEntropyMean {
                logits,
                targets,
                probs,
            } => {
                let scale = g.data[0] / targets.len().max(1) as f64;
                let mut gl = probs.clone();
                for (r, &t) in targets.iter().enumerate() {
                    gl.data[r * gl.cols + t] -= 1.0;
                }
                for v in &mut gl.data {
                    *v *= scale;
                }
                self.accumulate(grads, *logits, gl);
            }
        }
    }

    #[allow(clippy::too_many_arguments)]
    fn backprop_edge_conv(
        &self,
        x: Var,
        neighbors: &[usize],
        k: usize,
        layers: &[LayerVars],
        argmax: &[u32],
        g: &Mat,
        grads: &mut [Option<Mat>],
    ) {
        let xv = self.value(x);
        let n = xv.rows;
        let weights: Vec<(&Mat, &Mat)> = layers
            .iter()
            .map(|l| (self.value(l.weight), self.value(l.bias)))
            .collect();
        let out_dim = weights.last().unwrap().0.rows;
        let want_x = self.rg(x);
        let empty_layer_grads = || -> Vec<(Mat, Mat)> {
            weights
                .iter()
                .map(|(w, b)| (Mat::zeros(w.rows, w.cols), Mat::zeros(b.rows, b.cols)))
                .collect()
        };
        let partials: Vec<ChunkGrads> = (0..n)
            .collect::<Vec<_>>()
            .par_chunks(EDGECONV_CHUNK)
            .map(|chunk| {
                let mut lg = empty_layer_grads();
                let mut gx = want_x.then(|| Mat::zeros(n, xv.cols));
                let mut acts = Vec::new();
                let mut delta = Vec::new();
                for &i in chunk {
                    let gi = g.row(i);
                    let arg = &argmax[i * out_dim..(i + 1) * out_dim];
                    for s in 0..k {
                        if !(0..out_dim).any(|c| arg[c] == s as u32 && gi[c] != 0.0) {
                            continue;
                        }
                        let j = neighbors[i * k + s];
                        edge_forward(xv, i, j, &weights, &mut acts);
                        // gradient at the last activation, restricted to the
                        // channels this neighbor won
                        delta.clear();
                        delta.extend((0..out_dim).map(|c| if arg[c] == s as u32 { gi[c] } else { 0.0 }));
                        for l in (0..weights.len()).rev() {
                            let (w, _) = weights[l];
                            let post = &acts[l + 1].1;
                            for (d, &y) in delta.iter_mut().zip(post) {
                                if y <= 0.0 {
                                    *d = 0.0;
                                }
                            }
                            let input = &acts[l].1;
                            let (gw, gb) = &mut lg[l];
                            for (o, &d) in delta.iter().enumerate() {
                                if d == 0.0 {
                                    continue;
                                }
                                gb.data[o] += d;
                                for (a, iv) in gw.row_mut(o).iter_mut().zip(input) {
                                    *a += d * iv;
                                }
                            }
                            let mut next = vec![0.0; w.cols];
                            for (o, &d) in delta.iter().enumerate() {
                                if d == 0.0 {
                                    continue;
                                }
                                for (a, wv) in next.iter_mut().zip(w.row(o)) {
                                    *a += d * wv;
                                }
                            }
                            delta = next;
                        }
                        if let Some(gx) = gx.as_mut() {
                            let c = xv.cols;
                            for d in 0..c {
                                let di = delta[d];
                                let dj = delta[c + d];
                                gx.data[i * c + d] += di - dj;
                                gx.data[j * c + d] += dj;
                            }
                        }
                    }
                }
                (lg, gx)
            })
            .collect();
        let mut total = empty_layer_grads();
        let mut gx_total = want_x.then(|| Mat::zeros(n, xv.cols));
        for (lg, gx) in partials {
            for ((tw, tb), (w, b)) in total.iter_mut().zip(lg) {
                tw.add_assign(&w);
                tb.add_assign(&b);
            }
            if let (Some(t), Some(gx)) = (gx_total.as_mut(), gx) {
                t.add_assign(&gx);
            }
        }
        for (l, (gw, gb)) in layers.iter().zip(total) {
            self.accumulate(grads, l.weight, gw);
            self.accumulate(grads, l.bias, gb);
        }
        if let Some(gx) = gx_total {
            self.accumulate(grads, x, gx);
        }
    }
}

/// Runs the per-edge MLP, filling `acts` with `(pre, post)` activations;
/// `acts[0].1` is the edge input `[x_i, x_j - x_i]`.
fn edge_forward(x: &Mat, i: usize, j: usize, weights: &[(&Mat, &Mat)], acts: &mut Vec<(Vec<f64>, Vec<f64>)>) {
    acts.resize_with(weights.len() + 1, Default::default);
    let c = x.cols;
    let input = &mut acts[0].1;
    input.clear();
    input.extend_from_slice(x.row(i));
    input.extend(x.row(j).iter().zip(x.row(i)).map(|(a, b)| a - b));
    for (l, (w, b)) in weights.iter().enumerate() {
        let (done, rest) = acts.split_at_mut(l + 1);
        let inp = &done[l].1;
        let (pre, post) = &mut rest[0];
        pre.clear();
        post.clear();
        for o in 0..w.rows {
            let mut acc = b.data[o];
            for (a, wv) in inp.iter().zip(w.row(o)) {
                acc += a * wv;
            }
            pre.push(acc);
            post.push(acc.max(0.0));
        }
    }
    debug_assert_eq!(acts[0].1.len(), 2 * c);
}

/// Cross-entropy of one logit row and its softmax probabilities, with the
/// maximum subtracted before exponentiation.
pub fn softmax_ce(logits: &[f64], target: usize) -> (f64, Vec<f64>) {
    let m = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = logits.iter().map(|z| (z - m).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let loss = sum.ln() - (logits[target] - m);
    (loss, exps.iter().map(|e| e / sum).collect())
}
