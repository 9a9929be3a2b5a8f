//! Central-difference check of reverse-mode gradients on random small graphs.

use gr_core::graph::{Graph, GraphBuilder, Head, Op, Padding};
use gr_core::{backward_grads, Scalar, Tensor};
use rand::{RngExt, SeedableRng};
use rand_pcg::Pcg32;

/// Layer list with f64 weights, buildable at any precision.
#[derive(Debug, Clone)]
pub enum Layer {
    Conv {
        weight: Tensor<f64>,
        bias: Tensor<f64>,
        stride: usize,
        padding: Padding,
    },
    Pool(usize),
    Dense {
        weight: Tensor<f64>,
        bias: Option<Tensor<f64>>,
    },
    Relu,
}

#[derive(Debug, Clone)]
pub struct Recipe {
    pub input: Tensor<f64>,
    pub labels: Vec<usize>,
    pub layers: Vec<Layer>,
    pub head: Head,
}

impl Recipe {
    pub fn build<T: Scalar>(&self) -> Graph<T> {
        let mut b: GraphBuilder<T> = Graph::builder(self.input.shape()[1..].to_vec());
        for (i, l) in self.layers.iter().enumerate() {
            let name = format!("n{i}");
            b = match l {
                Layer::Conv {
                    weight,
                    bias,
                    stride,
                    padding,
                } => b.conv2d(&name, weight.cast(), bias.cast(), *stride, *padding),
                Layer::Pool(s) => b.maxpool2d(&name, *s),
                Layer::Dense { weight, bias } => b.dense(&name, weight.cast(), bias.as_ref().map(|t| t.cast())),
                Layer::Relu => b.relu(&name),
            }
            .expect("valid recipe");
        }
        b.build(self.head).expect("valid recipe")
    }
}

fn uniform(rng: &mut Pcg32, shape: Vec<usize>, lo: f64, hi: f64) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.random_range(lo..hi))
}

/// A random conv/pool/dense stack ending in a dense layer.
pub fn random_recipe(seed: u64) -> Recipe {
    let mut rng = Pcg32::seed_from_u64(seed);
    let batch = rng.random_range(1..=3);
    let (h, w, c) = (rng.random_range(4..=7), rng.random_range(4..=7), rng.random_range(1..=2));
    let mut shape = vec![h, w, c];
    let mut layers = Vec::new();
    for _ in 0..rng.random_range(1..=2) {
        let k = rng.random_range(1..=3).min(shape[0]).min(shape[1]);
        let filters = rng.random_range(1..=3);
        let stride = rng.random_range(1..=2);
        let padding = if rng.random_bool(0.5) { Padding::Same } else { Padding::Valid };
        let scale = (1.0 / (k * k * shape[2]) as f64).sqrt() * 1.5;
        layers.push(Layer::Conv {
            weight: uniform(&mut rng, vec![k, k, shape[2], filters], -scale, scale),
            bias: uniform(&mut rng, vec![filters], -0.2, 0.2),
            stride,
            padding,
        });
        let (oh, ow) = match padding {
            Padding::Same => (shape[0].div_ceil(stride), shape[1].div_ceil(stride)),
            Padding::Valid => ((shape[0] - k) / stride + 1, (shape[1] - k) / stride + 1),
        };
        shape = vec![oh, ow, filters];
        if rng.random_bool(0.7) {
            layers.push(Layer::Relu);
        }
        if shape[0] >= 2 && shape[1] >= 2 && rng.random_bool(0.5) {
            layers.push(Layer::Pool(2));
            shape = vec![shape[0] / 2, shape[1] / 2, filters];
        }
    }
    let mut width: usize = shape.iter().product();
    if rng.random_bool(0.5) {
        let units = rng.random_range(2..=5);
        let scale = (1.0 / width as f64).sqrt() * 1.5;
        layers.push(Layer::Dense {
            weight: uniform(&mut rng, vec![width, units], -scale, scale),
            bias: Some(uniform(&mut rng, vec![units], -0.2, 0.2)),
        });
        layers.push(Layer::Relu);
        width = units;
    }
    let classes = rng.random_range(2..=4);
    let scale = (1.0 / width as f64).sqrt() * 1.5;
    let bias = rng.random_bool(0.8).then(|| uniform(&mut rng, vec![classes], -0.2, 0.2));
    layers.push(Layer::Dense {
        weight: uniform(&mut rng, vec![width, classes], -scale, scale),
        bias,
    });
    let head = if rng.random_bool(0.8) { Head::SoftmaxCrossEntropy } else { Head::Sum };
    Recipe {
        input: uniform(&mut rng, vec![batch, h, w, c], 0.0, 1.0),
        labels: (0..batch).map(|_| rng.random_range(0..classes)).collect(),
        layers,
        head,
    }
}

/// Relu sign patterns and pool routes: the piecewise-linear region.
fn region(graph: &Graph<f64>, input: &Tensor<f64>, labels: &[usize]) -> (f64, Vec<Vec<bool>>, Vec<Vec<u32>>) {
    let state = graph.forward(input, labels).expect("forward");
    let mut signs = Vec::new();
    let mut routes = Vec::new();
    for (i, node) in graph.nodes().iter().enumerate() {
        match node.op {
            Op::Relu => signs.push(
                (0..state.batch())
                    .flat_map(|n| state.node_output(i - 1, n).iter().map(|&v| v > 0.0).collect::<Vec<_>>())
                    .collect(),
            ),
            Op::MaxPool2d { .. } => routes.push(state.pool_routing(i).to_vec()),
            _ => {}
        }
    }
    (state.loss().expect("loss"), signs, routes)
}

#[derive(Debug, Clone, Copy, Default)]
pub struct CheckStats {
    pub checked: usize,
    /// Partials whose ±h probes left the piecewise-linear region.
    pub skipped: usize,
    pub max_rel_err_f64: f64,
    pub max_rel_err_f32: f64,
}

pub const FD_STEP: f64 = 1e-5;
/// Denominator floor of the relative error.
pub const REL_FLOOR: f64 = 1e-4;

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

/// Compares f64 and f32 autodiff against central differences of the f64
/// graph, for every parameter and input element.
pub fn check_recipe(recipe: &Recipe) -> CheckStats {
    let g64: Graph<f64> = recipe.build();
    let g32: Graph<f32> = recipe.build();
    let labels = &recipe.labels;
    let base = region(&g64, &recipe.input, labels);
    let grads64 = backward_grads(&g64, &g64.forward(&recipe.input, labels).unwrap()).unwrap();
    let input32: Tensor<f32> = recipe.input.cast();
    let grads32 = backward_grads(&g32, &g32.forward(&input32, labels).unwrap()).unwrap();

    let mut stats = CheckStats::default();
    let mut compare = |fd: Option<f64>, a64: f64, a32: f64| match fd {
        None => stats.skipped += 1,
        Some(fd) => {
            stats.checked += 1;
            stats.max_rel_err_f64 = stats.max_rel_err_f64.max(rel_err(a64, fd));
            stats.max_rel_err_f32 = stats.max_rel_err_f32.max(rel_err(a32, fd));
        }
    };
    let probe = |g: &Graph<f64>, x: &Tensor<f64>| region(g, x, labels);
    let central = |plus: (f64, Vec<Vec<bool>>, Vec<Vec<u32>>), minus: (f64, Vec<Vec<bool>>, Vec<Vec<u32>>)| {
        let same = |p: &(f64, Vec<Vec<bool>>, Vec<Vec<u32>>)| p.1 == base.1 && p.2 == base.2;
        (same(&plus) && same(&minus)).then(|| (plus.0 - minus.0) / (2.0 * FD_STEP))
    };

    for k in 0..g64.params().len() {
        for j in 0..g64.params()[k].value.len() {
            let mut g = g64.clone();
            g.params_mut()[k].value.data_mut()[j] += FD_STEP;
            let plus = probe(&g, &recipe.input);
            g.params_mut()[k].value.data_mut()[j] -= 2.0 * FD_STEP;
            let minus = probe(&g, &recipe.input);
            compare(
                central(plus, minus),
                grads64.params()[k].data()[j],
                grads32.params()[k].data()[j] as f64,
            );
        }
    }
    for j in 0..recipe.input.len() {
        let mut x = recipe.input.clone();
        x.data_mut()[j] += FD_STEP;
        let plus = probe(&g64, &x);
        x.data_mut()[j] -= 2.0 * FD_STEP;
        let minus = probe(&g64, &x);
        compare(central(plus, minus), grads64.input().data()[j], grads32.input().data()[j] as f64);
    }
    stats
}
