//! CNN classifiers: architecture descriptors, initialization, training,
//! prediction and activation-trace extraction.

use std::collections::HashSet;

use rand::seq::SliceRandom;
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::{backward_grads, ForwardState, Graph, Head, Padding};
use crate::optim::{sgd_step, Velocity};
use crate::scalar::Scalar;
use crate::tensor::{numel, Tensor};

/// Batch size used for inference-only passes.
const INFER_CHUNK: usize = 128;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum LayerKind {
    Conv {
        filters: usize,
        kernel: usize,
        stride: usize,
        padding: Padding,
    },
    Maxpool {
        size: usize,
    },
    Dense {
        units: usize,
    },
    Relu,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub id: String,
    #[serde(flatten)]
    pub kind: LayerKind,
}

impl LayerSpec {
    pub fn new(id: &str, kind: LayerKind) -> Self {
        Self {
            id: id.to_string(),
            kind,
        }
    }
}

/// Layer list of a classifier. The last layer is the `dense(classes)`
/// output head, followed implicitly by softmax.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArchitectureDescriptor {
    /// `(H, W, C)`.
    pub input: [usize; 3],
    pub layers: Vec<LayerSpec>,
}

impl ArchitectureDescriptor {
    /// conv(8)–relu–pool–conv(16)–relu–pool–dense(32)–relu–dense(classes).
    pub fn desk(input: [usize; 3], classes: usize) -> Self {
        let conv = |filters| LayerKind::Conv {
            filters,
            kernel: 3,
            stride: 1,
            padding: Padding::Same,
        };
        Self {
            input,
            layers: vec![
                LayerSpec::new("conv1", conv(8)),
                LayerSpec::new("relu1", LayerKind::Relu),
                LayerSpec::new("pool1", LayerKind::Maxpool { size: 2 }),
                LayerSpec::new("conv2", conv(16)),
                LayerSpec::new("relu2", LayerKind::Relu),
                LayerSpec::new("pool2", LayerKind::Maxpool { size: 2 }),
                LayerSpec::new("dense1", LayerKind::Dense { units: 32 }),
                LayerSpec::new("relu3", LayerKind::Relu),
                LayerSpec::new("logits", LayerKind::Dense { units: classes }),
            ],
        }
    }

    pub fn classes(&self) -> usize {
        match self.layers.last().map(|l| &l.kind) {
            Some(LayerKind::Dense { units }) => *units,
            _ => 0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input.contains(&0) {
            return Err(Error::InvalidArchitecture(format!(
                "input shape {:?} has a zero dimension",
                self.input
            )));
        }
        let mut seen = HashSet::new();
        for l in &self.layers {
            if !seen.insert(l.id.as_str()) {
                return Err(Error::InvalidArchitecture(format!(
                    "duplicate layer id `{}`",
                    l.id
                )));
            }
        }
        let Some(LayerKind::Dense { units }) = self.layers.last().map(|l| &l.kind) else {
            return Err(Error::InvalidArchitecture(
                "the last layer must be the dense(classes) head".into(),
            ));
        };
        if *units < 2 {
            return Err(Error::InvalidArchitecture(format!(
                "class count {units} < 2"
            )));
        }
        Ok(())
    }

    /// Parameter tensor shapes, in descriptor order (weight then bias).
    pub fn param_shapes(&self) -> Result<Vec<(String, Vec<usize>)>> {
        Ok(self
            .build_graph::<f64>(|_, shape| Tensor::zeros(shape.to_vec()))?
            .params()
            .iter()
            .map(|p| (p.name.clone(), p.value.shape().to_vec()))
            .collect())
    }

    pub fn param_count(&self) -> Result<usize> {
        Ok(self.param_shapes()?.iter().map(|(_, s)| numel(s)).sum())
    }

    /// Builds the graph, asking `init` for each parameter tensor in order.
    /// `init` receives the fan-in for weights and `0` for biases.
    fn build_graph<T: Scalar>(
        &self,
        mut init: impl FnMut(usize, &[usize]) -> Tensor<T>,
    ) -> Result<Graph<T>> {
        self.validate()?;
        let mut b = Graph::builder(self.input.to_vec());
        let mut shape = self.input.to_vec();
        for layer in &self.layers {
            b = match &layer.kind {
                LayerKind::Conv {
                    filters,
                    kernel,
                    stride,
                    padding,
                } => {
                    let cin = *shape.last().unwrap_or(&0);
                    let w = init(kernel * kernel * cin, &[*kernel, *kernel, cin, *filters]);
                    let bias = init(0, &[*filters]);
                    b.conv2d(&layer.id, w, bias, *stride, *padding)?
                }
                LayerKind::Maxpool { size } => b.maxpool2d(&layer.id, *size)?,
                LayerKind::Dense { units } => {
                    let inputs = numel(&shape);
                    let w = init(inputs, &[inputs, *units]);
                    let bias = init(0, &[*units]);
                    b.dense(&layer.id, w, Some(bias))?
                }
                LayerKind::Relu => b.relu(&layer.id)?,
            };
            shape = b.current_shape().to_vec();
        }
        b.build(Head::SoftmaxCrossEntropy)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub loss: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TrainParams {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub momentum: f64,
    pub shuffle_seed: u64,
}

impl Default for TrainParams {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            lr: 0.01,
            momentum: 0.9,
            shuffle_seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Prediction<T> {
    pub labels: Vec<usize>,
    /// `(N, classes)` softmax probabilities.
    pub probabilities: Tensor<T>,
}

/// Activation vector of one input at a set of selected layers.
#[derive(Debug, Clone, PartialEq)]
pub struct ActivationTrace {
    pub input_id: usize,
    pub values: Vec<f64>,
    /// Segment boundaries, one segment per selected layer.
    pub offsets: Vec<usize>,
}

impl ActivationTrace {
    pub fn segments(&self) -> impl Iterator<Item = &[f64]> {
        self.offsets.windows(2).map(|w| &self.values[w[0]..w[1]])
    }
}

/// Where a selected layer's post-activation values are read from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum TraceSource {
    Node(usize),
    Softmax,
}

/// Architecture, weights, seed lineage and training history.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelState<T> {
    arch: ArchitectureDescriptor,
    graph: Graph<T>,
    init_seed: u64,
    history: Vec<EpochLoss>,
}

impl<T: Scalar> ModelState<T> {
    /// He-uniform weights drawn from `PCG32(seed)`; zero biases.
    pub fn build(arch: &ArchitectureDescriptor, seed: u64) -> Result<Self> {
        let mut rng = Pcg32::seed_from_u64(seed);
        let graph = arch.build_graph(|fan_in, shape| {
            if fan_in == 0 {
                return Tensor::zeros(shape.to_vec());
            }
            let limit = (6.0 / fan_in as f64).sqrt();
            Tensor::from_fn(shape.to_vec(), |_| {
                T::from_wide(rng.random_range(-limit..limit))
            })
        })?;
        Ok(Self {
            arch: arch.clone(),
            graph,
            init_seed: seed,
            history: Vec::new(),
        })
    }

    /// Reassembles a model from stored parameters (descriptor order).
    pub fn from_parts(
        arch: ArchitectureDescriptor,
        params: Vec<Tensor<T>>,
        init_seed: u64,
        history: Vec<EpochLoss>,
    ) -> Result<Self> {
        let mut supplied = params.into_iter();
        let mut mismatch = None;
        let graph = arch.build_graph(|_, shape| match supplied.next() {
            Some(t) if t.shape() == shape => t,
            other => {
                mismatch.get_or_insert((shape.to_vec(), other.map(|t| t.shape().to_vec())));
                Tensor::zeros(shape.to_vec())
            }
        })?;
        if let Some((expected, found)) = mismatch {
            return Err(Error::ShapeMismatch {
                node: "parameters".into(),
                expected,
                found: found.unwrap_or_default(),
            });
        }
        if supplied.next().is_some() {
            return Err(Error::InvalidArgument("more parameter tensors than the architecture declares".into()));
        }
        Ok(Self {
            arch,
            graph,
            init_seed,
            history,
        })
    }

    pub fn architecture(&self) -> &ArchitectureDescriptor {
        &self.arch
    }

    pub fn graph(&self) -> &Graph<T> {
        &self.graph
    }

    pub fn init_seed(&self) -> u64 {
        self.init_seed
    }

    pub fn history(&self) -> &[EpochLoss] {
        &self.history
    }

    pub fn classes(&self) -> usize {
        self.arch.classes()
    }

    pub fn param_count(&self) -> usize {
        self.graph.param_count()
    }

    pub fn params(&self) -> impl Iterator<Item = &Tensor<T>> {
        self.graph.params().iter().map(|p| &p.value)
    }

    /// True when every parameter is bit-identical to `other`'s.
    pub fn same_weights(&self, other: &Self) -> bool {
        let a = self.params().flat_map(|t| t.data());
        let b = other.params().flat_map(|t| t.data());
        self.param_count() == other.param_count()
            && a.zip(b).all(|(x, y)| x.to_wide().to_bits() == y.to_wide().to_bits())
    }

    /// FNV-1a digest over the raw parameter bits.
    pub fn weight_digest(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        for v in self.params().flat_map(|t| t.data()) {
            for byte in v.to_wide().to_bits().to_le_bytes() {
                h ^= byte as u64;
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        }
        h
    }

    fn check_data(&self, data: &Dataset<T>) -> Result<()> {
        if data.classes() != self.classes() {
            return Err(Error::InvalidArgument(format!(
                "dataset has {} classes, model head has {}",
                data.classes(),
                self.classes()
            )));
        }
        if data.image_shape() != self.arch.input {
            return Err(Error::ShapeMismatch {
                node: "input".into(),
                expected: self.arch.input.to_vec(),
                found: data.image_shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Mini-batch SGD with momentum; returns a new model.
    pub fn train(&self, data: &Dataset<T>, hp: &TrainParams) -> Result<Self> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        if hp.batch_size == 0 {
            return Err(Error::InvalidArgument("batch size must be positive".into()));
        }
        self.check_data(data)?;
        let mut next = self.clone();
        if hp.epochs == 0 {
            return Ok(next);
        }
        let mut rng = Pcg32::seed_from_u64(hp.shuffle_seed);
        let mut velocity = Velocity::new();
        let start_epoch = self.history.last().map_or(0, |e| e.epoch);
        for epoch in 0..hp.epochs {
            let mut order: Vec<usize> = (0..data.len()).collect();
            order.shuffle(&mut rng);
            let mut total = 0.0;
            for chunk in order.chunks(hp.batch_size) {
                let (images, labels) = data.batch(chunk);
                let state = next.graph.forward(&images, &labels)?;
                total += state.loss().unwrap_or(0.0) * chunk.len() as f64;
                let grads = backward_grads(&next.graph, &state)?;
                sgd_step(next.graph.params_mut(), &grads, hp.lr, hp.momentum, &mut velocity)?;
            }
            let loss = total / data.len() as f64;
            if !loss.is_finite() {
                return Err(Error::NonFinite(format!("training loss at epoch {}", epoch + 1)));
            }
            next.history.push(EpochLoss {
                epoch: start_epoch + epoch + 1,
                loss,
            });
        }
        Ok(next)
    }

    fn check_images(&self, images: &Tensor<T>) -> Result<()> {
        if images.shape().len() != 4 || images.shape()[1..] != self.arch.input {
            return Err(Error::ShapeMismatch {
                node: "input".into(),
                expected: self.arch.input.to_vec(),
                found: images.shape().to_vec(),
            });
        }
        Ok(())
    }

    /// Runs inference in chunks, handing each state to `f`.
    fn infer_chunks<R: Send>(
        &self,
        images: &Tensor<T>,
        f: impl Fn(&ForwardState<T>) -> R + Sync,
    ) -> Result<Vec<R>> {
        self.check_images(images)?;
        let n = images.batch();
        let starts: Vec<usize> = (0..n).step_by(INFER_CHUNK).collect();
        starts
            .par_iter()
            .map(|&s| {
                let e = (s + INFER_CHUNK).min(n);
                let rows: Vec<&[T]> = (s..e).map(|i| images.row(i)).collect();
                let batch = Tensor::stack(&self.arch.input, &rows)?;
                let state = self.graph.infer(&batch)?;
                Ok(f(&state))
            })
            .collect()
    }

    /// Argmax class (lowest index on ties) and softmax probabilities.
    pub fn predict(&self, images: &Tensor<T>) -> Result<Prediction<T>> {
        let classes = self.classes();
        let chunks = self.infer_chunks(images, |state| {
            (0..state.batch())
                .map(|n| state.probabilities(n).to_vec())
                .collect::<Vec<_>>()
        })?;
        let mut labels = Vec::with_capacity(images.batch());
        let mut probs = Vec::with_capacity(images.batch() * classes);
        for p in chunks.into_iter().flatten() {
            labels.push(argmax(&p));
            probs.extend(p.into_iter().map(T::from_wide));
        }
        Ok(Prediction {
            labels,
            probabilities: Tensor::new(vec![images.batch(), classes], probs)?,
        })
    }

    /// Fraction of inputs whose predicted label equals the true label.
    pub fn accuracy(&self, data: &Dataset<T>) -> Result<f64> {
        Ok(self.correct(data)? as f64 / data.len() as f64)
    }

    pub fn correct(&self, data: &Dataset<T>) -> Result<usize> {
        if data.is_empty() {
            return Err(Error::EmptyDataset);
        }
        self.check_data(data)?;
        let pred = self.predict(data.images())?;
        Ok(pred
            .labels
            .iter()
            .zip(data.labels())
            .filter(|(p, t)| p == t)
            .count())
    }

    /// Ids of every conv and dense layer, i.e. the neuron-bearing layers.
    pub fn neuron_layers(&self) -> Vec<&str> {
        self.arch
            .layers
            .iter()
            .filter(|l| matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Dense { .. }))
            .map(|l| l.id.as_str())
            .collect()
    }

    /// Total number of neurons across [`Self::neuron_layers`].
    pub fn neuron_count(&self) -> usize {
        self.arch
            .layers
            .iter()
            .zip(self.graph.nodes())
            .filter(|(l, _)| matches!(l.kind, LayerKind::Conv { .. } | LayerKind::Dense { .. }))
            .map(|(_, n)| numel(&n.out_shape))
            .sum()
    }

    /// Resolves layer ids to trace sources in architecture order.
    fn trace_sources(&self, layers: &[&str]) -> Result<Vec<TraceSource>> {
        let mut indices = Vec::with_capacity(layers.len());
        for id in layers {
            let idx = self
                .arch
                .layers
                .iter()
                .position(|l| l.id == *id)
                .ok_or_else(|| Error::UnknownLayer(id.to_string()))?;
            indices.push(idx);
        }
        indices.sort_unstable();
        indices.dedup();
        let last = self.arch.layers.len() - 1;
        Ok(indices
            .into_iter()
            .map(|i| match self.arch.layers[i].kind {
                LayerKind::Conv { .. } | LayerKind::Dense { .. } if i == last => TraceSource::Softmax,
                LayerKind::Conv { .. } | LayerKind::Dense { .. }
                    if matches!(self.arch.layers.get(i + 1).map(|l| &l.kind), Some(LayerKind::Relu)) =>
                {
                    TraceSource::Node(i + 1)
                }
                _ => TraceSource::Node(i),
            })
            .collect())
    }

    fn read_trace(state: &ForwardState<T>, sources: &[TraceSource], n: usize) -> (Vec<f64>, Vec<usize>) {
        let mut values = Vec::new();
        let mut offsets = vec![0];
        for src in sources {
            match *src {
                TraceSource::Node(i) => values.extend(state.node_output(i, n).iter().map(|v| v.to_wide())),
                TraceSource::Softmax => values.extend_from_slice(state.probabilities(n)),
            }
            offsets.push(values.len());
        }
        (values, offsets)
    }

    /// Post-activation values of the selected layers for one image `(H, W, C)`.
    pub fn activation_trace(&self, input_id: usize, image: &[T], layers: &[&str]) -> Result<ActivationTrace> {
        let sources = self.trace_sources(layers)?;
        let batch = Tensor::stack(&self.arch.input, &[image]).map_err(|_| Error::ShapeMismatch {
            node: "input".into(),
            expected: self.arch.input.to_vec(),
            found: vec![image.len()],
        })?;
        let state = self.graph.infer(&batch)?;
        let (values, offsets) = Self::read_trace(&state, &sources, 0);
        Ok(ActivationTrace {
            input_id,
            values,
            offsets,
        })
    }

    /// Traces and predicted classes for every image in a batch tensor.
    /// Input ids are the row indices.
    pub fn observe(&self, images: &Tensor<T>, layers: &[&str]) -> Result<(Vec<ActivationTrace>, Vec<usize>)> {
        let sources = self.trace_sources(layers)?;
        let chunks = self.infer_chunks(images, |state| {
            (0..state.batch())
                .map(|n| {
                    let (values, offsets) = Self::read_trace(state, &sources, n);
                    (values, offsets, argmax(state.probabilities(n)))
                })
                .collect::<Vec<_>>()
        })?;
        let mut traces = Vec::with_capacity(images.batch());
        let mut preds = Vec::with_capacity(images.batch());
        for (id, (values, offsets, p)) in chunks.into_iter().flatten().enumerate() {
            traces.push(ActivationTrace {
                input_id: id,
                values,
                offsets,
            });
            preds.push(p);
        }
        Ok((traces, preds))
    }
}

/// Index of the largest value; the lowest index wins ties.
pub fn argmax(values: &[f64]) -> usize {
    let mut best = 0;
    for (i, &v) in values.iter().enumerate() {
        if v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use super::*;

    fn desk() -> ArchitectureDescriptor {
        ArchitectureDescriptor::desk([16, 16, 1], 4)
    }

    #[test]
    fn build_is_deterministic() {
        let a = ModelState::<f32>::build(&desk(), 7).unwrap();
        let b = ModelState::<f32>::build(&desk(), 7).unwrap();
        let c = ModelState::<f32>::build(&desk(), 8).unwrap();
        assert!(a.same_weights(&b));
        assert!(!a.same_weights(&c));
    }

    #[test]
    fn dense_parameter_shapes() {
        let arch = ArchitectureDescriptor {
            input: [2, 2, 2],
            layers: vec![
                LayerSpec::new("hidden", LayerKind::Dense { units: 4 }),
                LayerSpec::new("out", LayerKind::Dense { units: 2 }),
            ],
        };
        let shapes = arch.param_shapes().unwrap();
        assert_eq!(shapes[0], ("hidden.weight".to_string(), vec![8, 4]));
        assert_eq!(shapes[1], ("hidden.bias".to_string(), vec![4]));
    }

    #[test]
    fn desk_parameter_count_matches_layer_sum() {
        // conv1 3·3·1·8+8, conv2 3·3·8·16+16, dense1 (4·4·16)·32+32, logits 32·4+4
        let expected = (9 * 8 + 8) + (9 * 8 * 16 + 16) + (256 * 32 + 32) + (32 * 4 + 4);
        assert_eq!(expected, 9604);
        assert_eq!(desk().param_count().unwrap(), expected);
        assert_eq!(ModelState::<f32>::build(&desk(), 0).unwrap().param_count(), expected);
    }

    #[test]
    fn biases_start_at_zero_and_weights_within_he_limit() {
        let m = ModelState::<f64>::build(&desk(), 3).unwrap();
        for p in m.graph().params() {
            if p.name.ends_with(".bias") {
                assert!(p.value.data().iter().all(|&v| v == 0.0));
            } else {
                let fan_in: usize = p.value.shape()[..p.value.shape().len() - 1].iter().product();
                let limit = (6.0 / fan_in as f64).sqrt();
                assert!(p.value.data().iter().all(|v| v.abs() <= limit));
            }
        }
    }

    #[test]
    fn invalid_architectures() {
        let mut arch = desk();
        arch.layers[1].id = "conv1".into();
        assert!(matches!(ModelState::<f32>::build(&arch, 0), Err(Error::InvalidArchitecture(_))));
        let mut arch = desk();
        arch.layers.push(LayerSpec::new("tail", LayerKind::Relu));
        assert!(ModelState::<f32>::build(&arch, 0).is_err());
        let arch = ArchitectureDescriptor::desk([16, 16, 1], 1);
        assert!(ModelState::<f32>::build(&arch, 0).is_err());
        let arch = ArchitectureDescriptor::desk([2, 2, 1], 3);
        assert!(ModelState::<f32>::build(&arch, 0).is_err());
    }

    #[test]
    fn argmax_ties_pick_lowest() {
        assert_eq!(argmax(&[2.0, 2.0]), 0);
        assert_eq!(argmax(&[0.1, 0.5, 0.5]), 1);
    }

    #[test]
    fn trace_lengths() {
        let m = ModelState::<f32>::build(&desk(), 1).unwrap();
        let img = vec![0.5f32; 256];
        let t = m.activation_trace(0, &img, &["dense1"]).unwrap();
        assert_eq!(t.values.len(), 32);
        assert!(t.values.iter().all(|&v| v >= 0.0), "dense1 is read after its relu");
        let all = m.activation_trace(0, &img, &m.neuron_layers()).unwrap();
        assert_eq!(all.values.len(), m.neuron_count());
        assert_eq!(m.neuron_count(), 16 * 16 * 8 + 8 * 8 * 16 + 32 + 4);
        assert_eq!(all.offsets, vec![0, 2048, 3072, 3104, 3108]);
        assert!(matches!(m.activation_trace(0, &img, &["nope"]), Err(Error::UnknownLayer(_))));
    }

    #[test]
    fn trace_order_follows_architecture() {
        let m = ModelState::<f32>::build(&desk(), 1).unwrap();
        let img = vec![0.25f32; 256];
        let a = m.activation_trace(0, &img, &["logits", "dense1"]).unwrap();
        let b = m.activation_trace(0, &img, &["dense1", "logits"]).unwrap();
        assert_eq!(a, b);
        let sum: f64 = a.values[32..].iter().sum();
        assert!((sum - 1.0).abs() < 1e-12);
    }
}
