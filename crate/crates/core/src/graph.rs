//! Sequential computation graph with exact reverse-mode differentiation.
//!
//! A [`Graph`] is a chain of primitive nodes (conv2d, maxpool2d, dense,
//! relu) ending in a loss head. Samples are laid out `(H, W, C)` for
//! spatial nodes; dense nodes flatten whatever they receive. Batches carry
//! a leading axis that no node ever changes.
//!
//! The forward pass keeps every node output so that [`backward_grads`] can
//! replay the chain in reverse and so that activation traces can be read
//! off afterwards. All reductions accumulate in `f64` and are narrowed to
//! the graph's scalar type when stored.

use std::collections::hash_map::DefaultHasher;
use std::collections::HashSet;
use std::hash::{Hash, Hasher};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Padding {
    Valid,
    Same,
}

/// Loss applied to the output of the last node.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Head {
    /// Mean softmax cross-entropy against integer labels.
    SoftmaxCrossEntropy,
    /// Mean over the batch of the sum of the outputs; labels are ignored.
    Sum,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ConvGeometry {
    pub in_h: usize,
    pub in_w: usize,
    pub in_c: usize,
    pub out_h: usize,
    pub out_w: usize,
    pub out_c: usize,
    pub kernel: usize,
    pub stride: usize,
    pub pad_top: usize,
    pub pad_left: usize,
}

impl ConvGeometry {
    pub fn new(
        input: &[usize],
        kernel: usize,
        stride: usize,
        padding: Padding,
        out_c: usize,
    ) -> Option<Self> {
        let &[in_h, in_w, in_c] = input else {
            return None;
        };
        if kernel == 0 || !(stride == 1 || stride == 2) || out_c == 0 {
            return None;
        }
        let (out_h, pad_top) = same_or_valid(in_h, kernel, stride, padding)?;
        let (out_w, pad_left) = same_or_valid(in_w, kernel, stride, padding)?;
        Some(Self {
            in_h,
            in_w,
            in_c,
            out_h,
            out_w,
            out_c,
            kernel,
            stride,
            pad_top,
            pad_left,
        })
    }
}

/// Output extent and leading pad for one spatial axis.
fn same_or_valid(n: usize, k: usize, s: usize, padding: Padding) -> Option<(usize, usize)> {
    match padding {
        Padding::Valid => {
            if n < k {
                None
            } else {
                Some(((n - k) / s + 1, 0))
            }
        }
        Padding::Same => {
            let out = n.div_ceil(s);
            let total = ((out - 1) * s + k).saturating_sub(n);
            Some((out, total / 2))
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Op {
    Conv2d {
        weight: usize,
        bias: usize,
        geometry: ConvGeometry,
    },
    MaxPool2d {
        size: usize,
    },
    Dense {
        weight: usize,
        bias: Option<usize>,
    },
    Relu,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Node {
    pub name: String,
    pub op: Op,
    pub in_shape: Vec<usize>,
    pub out_shape: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Param<T> {
    pub name: String,
    pub value: Tensor<T>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Graph<T> {
    input_shape: Vec<usize>,
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    head: Head,
}

#[derive(Debug)]
pub struct GraphBuilder<T> {
    input_shape: Vec<usize>,
    current: Vec<usize>,
    nodes: Vec<Node>,
    params: Vec<Param<T>>,
    names: HashSet<String>,
}

impl<T: Scalar> GraphBuilder<T> {
    /// Per-sample shape produced by the last node added so far.
    pub fn current_shape(&self) -> &[usize] {
        &self.current
    }

    fn push(&mut self, name: &str, op: Op, out_shape: Vec<usize>) -> Result<()> {
        if !self.names.insert(name.to_string()) {
            return Err(Error::InvalidArchitecture(format!(
                "duplicate node name `{name}`"
            )));
        }
        self.nodes.push(Node {
            name: name.to_string(),
            op,
            in_shape: self.current.clone(),
            out_shape: out_shape.clone(),
        });
        self.current = out_shape;
        Ok(())
    }

    fn add_param(&mut self, name: String, value: Tensor<T>) -> usize {
        self.params.push(Param { name, value });
        self.params.len() - 1
    }

    fn expect_shape(node: &str, expected: Vec<usize>, found: &[usize]) -> Result<()> {
        if expected != found {
            return Err(Error::ShapeMismatch {
                node: node.to_string(),
                expected,
                found: found.to_vec(),
            });
        }
        Ok(())
    }

    /// Convolution with an `(k, k, in_c, out_c)` kernel and `(out_c)` bias.
    pub fn conv2d(
        mut self,
        name: &str,
        weight: Tensor<T>,
        bias: Tensor<T>,
        stride: usize,
        padding: Padding,
    ) -> Result<Self> {
        let ws = weight.shape().to_vec();
        if ws.len() != 4 || ws[0] != ws[1] {
            return Err(Error::ShapeMismatch {
                node: name.to_string(),
                expected: vec![ws.first().copied().unwrap_or(0); 2],
                found: ws,
            });
        }
        let (k, out_c) = (ws[0], ws[3]);
        let geometry = ConvGeometry::new(&self.current, k, stride, padding, out_c).ok_or_else(
            || Error::ShapeMismatch {
                node: name.to_string(),
                expected: vec![k, k, ws[2]],
                found: self.current.clone(),
            },
        )?;
        Self::expect_shape(name, vec![k, k, geometry.in_c, out_c], weight.shape())?;
        Self::expect_shape(name, vec![out_c], bias.shape())?;
        let weight = self.add_param(format!("{name}.weight"), weight);
        let bias = self.add_param(format!("{name}.bias"), bias);
        let out = vec![geometry.out_h, geometry.out_w, out_c];
        self.push(
            name,
            Op::Conv2d {
                weight,
                bias,
                geometry,
            },
            out,
        )?;
        Ok(self)
    }

    /// Non-overlapping `size × size` max pooling.
    pub fn maxpool2d(mut self, name: &str, size: usize) -> Result<Self> {
        let &[h, w, c] = self.current.as_slice() else {
            return Err(Error::ShapeMismatch {
                node: name.to_string(),
                expected: vec![size, size, 1],
                found: self.current.clone(),
            });
        };
        if size == 0 || h < size || w < size {
            return Err(Error::ShapeMismatch {
                node: name.to_string(),
                expected: vec![size, size, c],
                found: self.current.clone(),
            });
        }
        self.push(name, Op::MaxPool2d { size }, vec![h / size, w / size, c])?;
        Ok(self)
    }

    /// Fully connected layer with an `(inputs, units)` weight.
    pub fn dense(mut self, name: &str, weight: Tensor<T>, bias: Option<Tensor<T>>) -> Result<Self> {
        let inputs = numel(&self.current);
        let units = weight.shape().last().copied().unwrap_or(0);
        Self::expect_shape(name, vec![inputs, units], weight.shape())?;
        if let Some(b) = &bias {
            Self::expect_shape(name, vec![units], b.shape())?;
        }
        let weight = self.add_param(format!("{name}.weight"), weight);
        let bias = bias.map(|b| self.add_param(format!("{name}.bias"), b));
        self.push(name, Op::Dense { weight, bias }, vec![units])?;
        Ok(self)
    }

    pub fn relu(mut self, name: &str) -> Result<Self> {
        let shape = self.current.clone();
        self.push(name, Op::Relu, shape)?;
        Ok(self)
    }

    pub fn build(self, head: Head) -> Result<Graph<T>> {
        if self.nodes.is_empty() {
            return Err(Error::InvalidArchitecture("graph has no nodes".into()));
        }
        if head == Head::SoftmaxCrossEntropy && numel(&self.current) < 2 {
            return Err(Error::InvalidArchitecture(
                "softmax head needs at least 2 outputs".into(),
            ));
        }
        Ok(Graph {
            input_shape: self.input_shape,
            nodes: self.nodes,
            params: self.params,
            head,
        })
    }
}

/// Values retained by a forward pass.
#[derive(Debug, Clone)]
pub struct ForwardState<T> {
    signature: u64,
    input: Tensor<T>,
    /// Per node, the batch-concatenated outputs.
    acts: Vec<Vec<T>>,
    /// Per pooling node, the flat within-sample input index of each output.
    argmax: Vec<Vec<u32>>,
    /// Softmax probabilities, `batch × outputs`, for the cross-entropy head.
    probs: Vec<f64>,
    labels: Option<Vec<usize>>,
    loss: Option<f64>,
}

impl<T: Scalar> ForwardState<T> {
    pub fn batch(&self) -> usize {
        self.input.batch()
    }

    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }

    /// Mean loss over the batch; `None` for inference-only passes.
    pub fn loss(&self) -> Option<f64> {
        self.loss
    }

    /// Raw output of node `index` for sample `n`.
    pub fn node_output(&self, index: usize, n: usize) -> &[T] {
        let acts = &self.acts[index];
        let width = acts.len() / self.batch();
        &acts[n * width..(n + 1) * width]
    }

    /// Output of the final node, shaped `(batch, outputs)`.
    pub fn logits(&self) -> Tensor<T> {
        let last = self.acts.last().expect("graph has nodes");
        let width = last.len() / self.batch();
        Tensor::new(vec![self.batch(), width], last.clone()).expect("consistent logits")
    }

    /// Softmax probabilities of sample `n` (cross-entropy head only).
    pub fn probabilities(&self, n: usize) -> &[f64] {
        let width = self.probs.len() / self.batch();
        &self.probs[n * width..(n + 1) * width]
    }

    /// Pool routing (within-sample input index of each output) of node `index`.
    pub fn pool_routing(&self, index: usize) -> &[u32] {
        &self.argmax[index]
    }
}

/// Gradients of the loss with respect to every parameter and the input.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientBundle<T> {
    names: Vec<String>,
    params: Vec<Tensor<T>>,
    input: Tensor<T>,
}

impl<T: Scalar> GradientBundle<T> {
    pub fn zeros_like(graph: &Graph<T>, batch: usize) -> Self {
        let mut shape = vec![batch];
        shape.extend_from_slice(&graph.input_shape);
        Self {
            names: graph.params.iter().map(|p| p.name.clone()).collect(),
            params: graph
                .params
                .iter()
                .map(|p| Tensor::zeros(p.value.shape().to_vec()))
                .collect(),
            input: Tensor::zeros(shape),
        }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.names
            .iter()
            .position(|n| n == name)
            .map(|i| &self.params[i])
    }

    pub fn params(&self) -> &[Tensor<T>] {
        &self.params
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Gradient with respect to the batched input.
    pub fn input(&self) -> &Tensor<T> {
        &self.input
    }
}

impl<T: Scalar> Graph<T> {
    pub fn builder(input_shape: Vec<usize>) -> GraphBuilder<T> {
        GraphBuilder {
            current: input_shape.clone(),
            input_shape,
            nodes: Vec::new(),
            params: Vec::new(),
            names: HashSet::new(),
        }
    }

    pub fn input_shape(&self) -> &[usize] {
        &self.input_shape
    }

    pub fn output_shape(&self) -> &[usize] {
        &self.nodes.last().expect("graph has nodes").out_shape
    }

    pub fn nodes(&self) -> &[Node] {
        &self.nodes
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn params(&self) -> &[Param<T>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param<T>] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn node_index(&self, name: &str) -> Option<usize> {
        self.nodes.iter().position(|n| n.name == name)
    }

    /// Structural fingerprint tying a forward state to the graph that produced it.
    pub fn signature(&self) -> u64 {
        let mut h = DefaultHasher::new();
        self.input_shape.hash(&mut h);
        self.head.hash(&mut h);
        for node in &self.nodes {
            node.name.hash(&mut h);
            node.out_shape.hash(&mut h);
        }
        for p in &self.params {
            p.name.hash(&mut h);
            p.value.shape().hash(&mut h);
        }
        h.finish()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        let shape = input.shape();
        if shape.len() != self.input_shape.len() + 1 || shape[1..] != self.input_shape[..] {
            let mut expected = vec![shape.first().copied().unwrap_or(1)];
            expected.extend_from_slice(&self.input_shape);
            return Err(Error::ShapeMismatch {
                node: "input".into(),
                expected,
                found: shape.to_vec(),
            });
        }
        if !input.is_finite() {
            return Err(Error::NonFinite("input".into()));
        }
        for p in &self.params {
            if !p.value.is_finite() {
                return Err(Error::NonFiniteParameter(p.name.clone()));
            }
        }
        Ok(shape[0])
    }

    fn wide_params(&self) -> Vec<Vec<f64>> {
        self.params.iter().map(|p| p.value.to_wide()).collect()
    }

    /// Forward pass without a loss.
    pub fn infer(&self, input: &Tensor<T>) -> Result<ForwardState<T>> {
        self.run(input, None)
    }

    /// Forward pass retaining everything needed by [`backward_grads`].
    pub fn forward(&self, input: &Tensor<T>, labels: &[usize]) -> Result<ForwardState<T>> {
        self.run(input, Some(labels))
    }

    fn run(&self, input: &Tensor<T>, labels: Option<&[usize]>) -> Result<ForwardState<T>> {
        let batch = self.check_input(input)?;
        let classes = numel(self.output_shape());
        if let Some(labels) = labels {
            if labels.len() != batch {
                return Err(Error::InvalidArgument(format!(
                    "{} labels supplied for a batch of {batch}",
                    labels.len()
                )));
            }
            if self.head == Head::SoftmaxCrossEntropy {
                if let Some(&label) = labels.iter().find(|&&l| l >= classes) {
                    return Err(Error::LabelOutOfRange { label, classes });
                }
            }
        }
        let wide = self.wide_params();
        let mut acts: Vec<Vec<T>> = self
            .nodes
            .iter()
            .map(|n| vec![T::zero(); numel(&n.out_shape) * batch])
            .collect();
        let mut argmax: Vec<Vec<u32>> = self
            .nodes
            .iter()
            .map(|n| match n.op {
                Op::MaxPool2d { .. } => vec![0; numel(&n.out_shape) * batch],
                _ => Vec::new(),
            })
            .collect();
        let mut scratch = Vec::new();
        for (i, node) in self.nodes.iter().enumerate() {
            let in_w = numel(&node.in_shape);
            let out_w = numel(&node.out_shape);
            let (before, rest) = acts.split_at_mut(i);
            let src: &[T] = if i == 0 { input.data() } else { &before[i - 1] };
            let dst = &mut rest[0];
            for n in 0..batch {
                let x = &src[n * in_w..(n + 1) * in_w];
                let y = &mut dst[n * out_w..(n + 1) * out_w];
                match &node.op {
                    Op::Conv2d {
                        weight,
                        bias,
                        geometry,
                    } => conv_forward(geometry, &wide[*weight], &wide[*bias], x, y, &mut scratch),
                    Op::MaxPool2d { size } => {
                        let routes = &mut argmax[i][n * out_w..(n + 1) * out_w];
                        pool_forward(&node.in_shape, *size, x, y, routes)
                    }
                    Op::Dense { weight, bias } => dense_forward(
                        &wide[*weight],
                        bias.map(|b| wide[b].as_slice()),
                        x,
                        y,
                        &mut scratch,
                    ),
                    Op::Relu => {
                        for (o, &v) in y.iter_mut().zip(x) {
                            *o = if v > T::zero() { v } else { T::zero() };
                        }
                    }
                }
            }
        }

        let last = acts.last().expect("graph has nodes");
        let mut probs = Vec::new();
        let mut loss = None;
        match self.head {
            Head::SoftmaxCrossEntropy => {
                probs.reserve(last.len());
                let mut total = 0.0;
                for n in 0..batch {
                    let z: Vec<f64> = last[n * classes..(n + 1) * classes]
                        .iter()
                        .map(|v| v.to_wide())
                        .collect();
                    let (p, lse) = softmax(&z);
                    if let Some(labels) = labels {
                        total += lse - z[labels[n]];
                    }
                    probs.extend(p);
                }
                if labels.is_some() {
                    loss = Some(total / batch as f64);
                }
            }
            Head::Sum => {
                if labels.is_some() {
                    let total: f64 = last.iter().map(|v| v.to_wide()).sum();
                    loss = Some(total / batch as f64);
                }
            }
        }
        if let Some(l) = loss {
            if !l.is_finite() {
                return Err(Error::NonFinite("loss".into()));
            }
        }

        Ok(ForwardState {
            signature: self.signature(),
            input: input.clone(),
            acts,
            argmax,
            probs,
            labels: labels.map(<[usize]>::to_vec),
            loss,
        })
    }
}

/// Numerically stable softmax; returns probabilities and log-sum-exp.
pub fn softmax(z: &[f64]) -> (Vec<f64>, f64) {
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|&v| (v - max).exp()).collect();
    let sum: f64 = exps.iter().sum();
    let lse = max + sum.ln();
    (exps.into_iter().map(|e| e / sum).collect(), lse)
}

fn conv_forward<T: Scalar>(
    g: &ConvGeometry,
    w: &[f64],
    b: &[f64],
    x: &[T],
    y: &mut [T],
    acc: &mut Vec<f64>,
) {
    let (k, cin, cout) = (g.kernel, g.in_c, g.out_c);
    acc.resize(cout, 0.0);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            acc.copy_from_slice(b);
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let base = (iy as usize * g.in_w + ix as usize) * cin;
                    let xin = &x[base..base + cin];
                    let wbase = (ky * k + kx) * cin * cout;
                    for (ci, xv) in xin.iter().enumerate() {
                        let xv = xv.to_wide();
                        if xv == 0.0 {
                            continue;
                        }
                        let wrow = &w[wbase + ci * cout..wbase + (ci + 1) * cout];
                        for (a, &wv) in acc.iter_mut().zip(wrow) {
                            *a += xv * wv;
                        }
                    }
                }
            }
            let out = &mut y[(oy * g.out_w + ox) * cout..(oy * g.out_w + ox + 1) * cout];
            for (o, &a) in out.iter_mut().zip(acc.iter()) {
                *o = T::from_wide(a);
            }
        }
    }
}

fn pool_forward<T: Scalar>(in_shape: &[usize], size: usize, x: &[T], y: &mut [T], routes: &mut [u32]) {
    let (w, c) = (in_shape[1], in_shape[2]);
    let (oh, ow) = (in_shape[0] / size, in_shape[1] / size);
    for oy in 0..oh {
        for ox in 0..ow {
            for ch in 0..c {
                let mut best = usize::MAX;
                for dy in 0..size {
                    for dx in 0..size {
                        let idx = ((oy * size + dy) * w + ox * size + dx) * c + ch;
                        if best == usize::MAX || x[idx] > x[best] {
                            best = idx;
                        }
                    }
                }
                let o = (oy * ow + ox) * c + ch;
                y[o] = x[best];
                routes[o] = best as u32;
            }
        }
    }
}

fn dense_forward<T: Scalar>(w: &[f64], b: Option<&[f64]>, x: &[T], y: &mut [T], acc: &mut Vec<f64>) {
    let units = y.len();
    acc.clear();
    match b {
        Some(b) => acc.extend_from_slice(b),
        None => acc.resize(units, 0.0),
    }
    for (i, xv) in x.iter().enumerate() {
        let xv = xv.to_wide();
        if xv == 0.0 {
            continue;
        }
        let row = &w[i * units..(i + 1) * units];
        for (a, &wv) in acc.iter_mut().zip(row) {
            *a += xv * wv;
        }
    }
    for (o, &a) in y.iter_mut().zip(acc.iter()) {
        *o = T::from_wide(a);
    }
}

/// Forward pass; see [`Graph::forward`].
pub fn forward_eval<T: Scalar>(
    graph: &Graph<T>,
    input: &Tensor<T>,
    labels: &[usize],
) -> Result<ForwardState<T>> {
    graph.forward(input, labels)
}

/// Exact reverse-mode gradients of the mean loss recorded in `state`.
pub fn backward_grads<T: Scalar>(graph: &Graph<T>, state: &ForwardState<T>) -> Result<GradientBundle<T>> {
    if state.signature != graph.signature() || state.loss.is_none() {
        return Err(Error::NoForwardPass);
    }
    let batch = state.batch();
    let wide = graph.wide_params();
    let mut pgrads: Vec<Vec<f64>> = wide.iter().map(|p| vec![0.0; p.len()]).collect();
    let in_width = numel(&graph.input_shape);
    let mut input_grad = vec![0.0f64; in_width * batch];
    let classes = numel(graph.output_shape());
    let scale = 1.0 / batch as f64;
    let labels = state.labels.as_deref().unwrap_or(&[]);

    let mut upstream: Vec<f64> = Vec::new();
    let mut downstream: Vec<f64> = Vec::new();
    for n in 0..batch {
        upstream.clear();
        match graph.head {
            Head::SoftmaxCrossEntropy => {
                let p = state.probabilities(n);
                upstream.extend(p.iter().map(|&v| v * scale));
                upstream[labels[n]] -= scale;
            }
            Head::Sum => upstream.resize(classes, scale),
        }
        for (i, node) in graph.nodes.iter().enumerate().rev() {
            let in_w = numel(&node.in_shape);
            let x: &[T] = if i == 0 {
                state.input.row(n)
            } else {
                state.node_output(i - 1, n)
            };
            downstream.clear();
            downstream.resize(in_w, 0.0);
            match &node.op {
                Op::Conv2d {
                    weight,
                    bias,
                    geometry,
                } => {
                    let (wg, bg) = two_mut(&mut pgrads, *weight, *bias);
                    conv_backward(geometry, &wide[*weight], x, &upstream, &mut downstream, wg, bg);
                }
                Op::MaxPool2d { .. } => {
                    let out_w = upstream.len();
                    let routes = &state.argmax[i][n * out_w..(n + 1) * out_w];
                    for (&r, &g) in routes.iter().zip(&upstream) {
                        downstream[r as usize] += g;
                    }
                }
                Op::Dense { weight, bias } => {
                    let units = upstream.len();
                    if let Some(b) = bias {
                        for (a, &g) in pgrads[*b].iter_mut().zip(&upstream) {
                            *a += g;
                        }
                    }
                    let w = &wide[*weight];
                    let wg = &mut pgrads[*weight];
                    for (j, xv) in x.iter().enumerate() {
                        let xv = xv.to_wide();
                        let row = &w[j * units..(j + 1) * units];
                        let grow = &mut wg[j * units..(j + 1) * units];
                        let mut s = 0.0;
                        for u in 0..units {
                            grow[u] += xv * upstream[u];
                            s += row[u] * upstream[u];
                        }
                        downstream[j] = s;
                    }
                }
                Op::Relu => {
                    for ((d, &g), xv) in downstream.iter_mut().zip(&upstream).zip(x) {
                        *d = if *xv > T::zero() { g } else { 0.0 };
                    }
                }
            }
            std::mem::swap(&mut upstream, &mut downstream);
        }
        input_grad[n * in_width..(n + 1) * in_width].copy_from_slice(&upstream);
    }

    let mut bundle = GradientBundle::zeros_like(graph, batch);
    for (dst, src) in bundle.params.iter_mut().zip(&pgrads) {
        for (d, &s) in dst.data_mut().iter_mut().zip(src) {
            *d = T::from_wide(s);
        }
    }
    for (d, &s) in bundle.input.data_mut().iter_mut().zip(&input_grad) {
        *d = T::from_wide(s);
    }
    Ok(bundle)
}

fn two_mut(v: &mut [Vec<f64>], a: usize, b: usize) -> (&mut [f64], &mut [f64]) {
    assert!(a < b);
    let (lo, hi) = v.split_at_mut(b);
    (&mut lo[a], &mut hi[0])
}

fn conv_backward<T: Scalar>(
    g: &ConvGeometry,
    w: &[f64],
    x: &[T],
    gout: &[f64],
    gin: &mut [f64],
    wgrad: &mut [f64],
    bgrad: &mut [f64],
) {
    let (k, cin, cout) = (g.kernel, g.in_c, g.out_c);
    for oy in 0..g.out_h {
        for ox in 0..g.out_w {
            let go = &gout[(oy * g.out_w + ox) * cout..(oy * g.out_w + ox + 1) * cout];
            for (b, &v) in bgrad.iter_mut().zip(go) {
                *b += v;
            }
            for ky in 0..k {
                let iy = (oy * g.stride + ky) as isize - g.pad_top as isize;
                if iy < 0 || iy >= g.in_h as isize {
                    continue;
                }
                for kx in 0..k {
                    let ix = (ox * g.stride + kx) as isize - g.pad_left as isize;
                    if ix < 0 || ix >= g.in_w as isize {
                        continue;
                    }
                    let base = (iy as usize * g.in_w + ix as usize) * cin;
                    let wbase = (ky * k + kx) * cin * cout;
                    for ci in 0..cin {
                        let xv = x[base + ci].to_wide();
                        let off = wbase + ci * cout;
                        let wrow = &w[off..off + cout];
                        let grow = &mut wgrad[off..off + cout];
                        let mut s = 0.0;
                        for co in 0..cout {
                            grow[co] += xv * go[co];
                            s += wrow[co] * go[co];
                        }
                        gin[base + ci] += s;
                    }
                }
            }
        }
    }
}

/// Holds at most one forward pass so that backward can only follow forward.
pub struct Session<'g, T> {
    graph: &'g Graph<T>,
    state: Option<ForwardState<T>>,
}

impl<'g, T: Scalar> Session<'g, T> {
    pub fn new(graph: &'g Graph<T>) -> Self {
        Self { graph, state: None }
    }

    pub fn forward(&mut self, input: &Tensor<T>, labels: &[usize]) -> Result<&ForwardState<T>> {
        let state = self.graph.forward(input, labels)?;
        Ok(self.state.insert(state))
    }

    pub fn backward(&self) -> Result<GradientBundle<T>> {
        let state = self.state.as_ref().ok_or(Error::NoForwardPass)?;
        backward_grads(self.graph, state)
    }
}
