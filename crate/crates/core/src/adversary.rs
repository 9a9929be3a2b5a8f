//! Fast-gradient-sign adversarial inputs and the augmented train/test sets.

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_pcg::Pcg32;
use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::graph::backward_grads;
use crate::model::ModelState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

const ATTACK_CHUNK: usize = 64;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AttackConfig {
    /// Perturbation magnitude in pixel units of the `[0, 1]` range.
    pub epsilon: f64,
}

impl AttackConfig {
    pub fn new(epsilon: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&epsilon) {
            return Err(Error::InvalidArgument(format!(
                "epsilon must lie in [0, 1], got {epsilon}"
            )));
        }
        Ok(Self { epsilon })
    }
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self { epsilon: 0.1 }
    }
}

/// `clip(x + ε·sign(g), 0, 1)` for one pixel, never further than `ε` from `x`.
fn perturb<T: Scalar>(x: T, grad: T, epsilon: f64) -> T {
    let sign = if grad > T::zero() {
        1.0
    } else if grad < T::zero() {
        -1.0
    } else {
        return x;
    };
    let xw = x.to_wide();
    let mut y = T::from_wide((xw + sign * epsilon).clamp(0.0, 1.0));
    // narrowing can overshoot by half an ulp
    while (y.to_wide() - xw).abs() > epsilon {
        y = y.step_toward(x);
    }
    y
}

/// Attacks a batch `(N, H, W, C)` using the true labels in the loss.
pub fn fgsm_batch<T: Scalar>(
    model: &ModelState<T>,
    images: &Tensor<T>,
    labels: &[usize],
    cfg: &AttackConfig,
) -> Result<Tensor<T>> {
    let graph = model.graph();
    let state = graph.forward(images, labels)?;
    let grads = backward_grads(graph, &state)?;
    let g = grads.input();
    if !g.is_finite() {
        return Err(Error::NonFinite("input gradient".into()));
    }
    let data = images
        .data()
        .iter()
        .zip(g.data())
        .map(|(&x, &gv)| perturb(x, gv, cfg.epsilon))
        .collect();
    Tensor::new(images.shape().to_vec(), data)
}

/// Adversarial counterpart of one image `(H, W, C)` with its true label.
pub fn fgsm<T: Scalar>(
    model: &ModelState<T>,
    image: &Tensor<T>,
    label: usize,
    cfg: &AttackConfig,
) -> Result<Tensor<T>> {
    let mut shape = vec![1];
    shape.extend_from_slice(image.shape());
    let batch = image.clone().reshape(shape)?;
    fgsm_batch(model, &batch, &[label], cfg)?.reshape(image.shape().to_vec())
}

/// Attacks every input of `data`, labels copied from the sources.
pub fn attack_dataset<T: Scalar>(
    model: &ModelState<T>,
    data: &Dataset<T>,
    cfg: &AttackConfig,
) -> Result<Dataset<T>> {
    let all: Vec<usize> = (0..data.len()).collect();
    let parts: Vec<Tensor<T>> = all
        .par_chunks(ATTACK_CHUNK)
        .map(|chunk| {
            let (images, labels) = data.batch(chunk);
            fgsm_batch(model, &images, &labels, cfg)
        })
        .collect::<Result<_>>()?;
    let mut values = Vec::with_capacity(data.images().len());
    for p in parts {
        values.extend_from_slice(p.data());
    }
    let images = Tensor::new(data.images().shape().to_vec(), values)?;
    Dataset::new(images, data.labels().to_vec(), data.classes())
}

/// Adversarial inputs generated from a selected subset of the training set.
#[derive(Debug, Clone, PartialEq)]
pub struct AdversarialSet<T> {
    pub data: Dataset<T>,
    /// Index in the source set of each adversarial input.
    pub sources: Vec<usize>,
}

/// `round(fraction·n)` distinct indices drawn uniformly from `PCG32(seed)`, ascending.
pub fn select_sources(n: usize, fraction: f64, seed: u64) -> Result<Vec<usize>> {
    if !(fraction > 0.0 && fraction <= 1.0) {
        return Err(Error::InvalidArgument(format!(
            "fraction must lie in (0, 1], got {fraction}"
        )));
    }
    let k = (fraction * n as f64).round() as usize;
    if k == 0 {
        return Err(Error::InvalidArgument(format!(
            "fraction {fraction} of {n} inputs selects nothing"
        )));
    }
    let mut rng = Pcg32::seed_from_u64(seed);
    let mut picked = rand::seq::index::sample(&mut rng, n, k).into_vec();
    picked.sort_unstable();
    Ok(picked)
}

pub fn build_adv_train<T: Scalar>(
    model: &ModelState<T>,
    train: &Dataset<T>,
    fraction: f64,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AdversarialSet<T>> {
    let sources = select_sources(train.len(), fraction, seed)?;
    let picked = train.subset(&sources)?;
    Ok(AdversarialSet {
        data: attack_dataset(model, &picked, cfg)?,
        sources,
    })
}

/// Whether an entry of an augmented set is an original input or an
/// adversarial one (carrying the index of its source).
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Origin {
    Original(usize),
    Adversarial { source: usize },
}

impl Origin {
    pub fn is_adversarial(&self) -> bool {
        matches!(self, Origin::Adversarial { .. })
    }
}

/// Train, Adv-Train, Train*, Test, Adv-Test and Test* with provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct AugmentedSets<T> {
    pub train: Dataset<T>,
    pub adv_train: Dataset<T>,
    pub train_star: Dataset<T>,
    pub train_star_origin: Vec<Origin>,
    pub test: Dataset<T>,
    pub adv_test: Dataset<T>,
    pub test_star: Dataset<T>,
    pub test_star_origin: Vec<Origin>,
}

impl<T: Scalar> AugmentedSets<T> {
    /// Adversarial Train* id → source id in Train.
    pub fn provenance(&self) -> BTreeMap<usize, usize> {
        provenance_of(&self.train_star_origin)
    }

    /// Adversarial Test* id → source id in Test.
    pub fn test_provenance(&self) -> BTreeMap<usize, usize> {
        provenance_of(&self.test_star_origin)
    }

    /// Train* ids of the adversarial inputs, i.e. Adv-Train in Train* numbering.
    pub fn adversarial_ids(&self) -> Vec<usize> {
        self.train_star_origin
            .iter()
            .enumerate()
            .filter(|(_, o)| o.is_adversarial())
            .map(|(i, _)| i)
            .collect()
    }
}

fn provenance_of(origin: &[Origin]) -> BTreeMap<usize, usize> {
    origin
        .iter()
        .enumerate()
        .filter_map(|(i, o)| match o {
            Origin::Adversarial { source } => Some((i, *source)),
            Origin::Original(_) => None,
        })
        .collect()
}

fn origins(n: usize, sources: &[usize]) -> Vec<Origin> {
    (0..n)
        .map(Origin::Original)
        .chain(sources.iter().map(|&source| Origin::Adversarial { source }))
        .collect()
}

pub fn build_augmented_sets<T: Scalar>(
    model: &ModelState<T>,
    train: &Dataset<T>,
    test: &Dataset<T>,
    fraction: f64,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<AugmentedSets<T>> {
    if train.classes() != test.classes() {
        return Err(Error::InvalidArgument(format!(
            "train has {} classes, test has {}",
            train.classes(),
            test.classes()
        )));
    }
    let adv = build_adv_train(model, train, fraction, cfg, seed)?;
    let adv_test = attack_dataset(model, test, cfg)?;
    let all_test: Vec<usize> = (0..test.len()).collect();
    Ok(AugmentedSets {
        train_star: train.concat(&adv.data)?,
        train_star_origin: origins(train.len(), &adv.sources),
        test_star: test.concat(&adv_test)?,
        test_star_origin: origins(test.len(), &all_test),
        train: train.clone(),
        adv_train: adv.data,
        test: test.clone(),
        adv_test,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ArchitectureDescriptor, LayerKind, LayerSpec};

    #[test]
    fn perturb_rules() {
        assert_eq!(perturb(0.5f64, -2.0, 0.1), 0.4);
        assert_eq!(perturb(0.95f32, 1.0, 0.1), 1.0);
        assert_eq!(perturb(0.02f32, -1.0, 0.1), 0.0);
        assert_eq!(perturb(0.3f32, 0.0, 0.1), 0.3);
        assert_eq!(perturb(0.3f32, 5.0, 0.0).to_bits(), 0.3f32.to_bits());
        for i in 0..=1000 {
            let x = i as f32 / 1000.0;
            for eps in [0.05, 0.1, 0.3] {
                for g in [-1.0f32, 1.0] {
                    let y = perturb(x, g, eps);
                    assert!((y as f64 - x as f64).abs() <= eps, "x={x} eps={eps}");
                    assert!((0.0..=1.0).contains(&y));
                }
            }
        }
    }

    #[test]
    fn selection_counts_and_determinism() {
        let a = select_sources(100, 1.0, 3).unwrap();
        assert_eq!(a, (0..100).collect::<Vec<_>>());
        let b = select_sources(31366, 5000.0 / 31366.0, 9).unwrap();
        assert_eq!(b.len(), 5000);
        assert_eq!(b, select_sources(31366, 5000.0 / 31366.0, 9).unwrap());
        assert_ne!(b, select_sources(31366, 5000.0 / 31366.0, 10).unwrap());
        assert!(b.windows(2).all(|w| w[0] < w[1]));
        assert!(select_sources(10, 0.01, 0).is_err());
        assert!(select_sources(10, 0.0, 0).is_err());
        assert!(AttackConfig::new(1.5).is_err());
    }

    #[test]
    fn origin_layout() {
        let o = origins(3, &[2, 0]);
        assert_eq!(o[1], Origin::Original(1));
        assert_eq!(o[3], Origin::Adversarial { source: 2 });
        assert_eq!(provenance_of(&o), BTreeMap::from([(3, 2), (4, 0)]));
    }

    #[test]
    fn single_pixel_follows_gradient_sign() {
        // one pixel, logits (w0·x, w1·x); with label 0 and w0 < w1 the loss
        // falls as x falls, so the attack raises x
        let arch = ArchitectureDescriptor {
            input: [1, 1, 1],
            layers: vec![LayerSpec::new("out", LayerKind::Dense { units: 2 })],
        };
        let params = vec![
            Tensor::new(vec![1, 2], vec![-1.0f64, 1.0]).unwrap(),
            Tensor::zeros(vec![2]),
        ];
        let m = ModelState::from_parts(arch, params, 0, vec![]).unwrap();
        let x = Tensor::new(vec![1, 1, 1], vec![0.5]).unwrap();
        let adv = fgsm(&m, &x, 0, &AttackConfig { epsilon: 0.1 }).unwrap();
        assert!((adv.data()[0] - 0.6).abs() < 1e-15);
        let adv = fgsm(&m, &x, 1, &AttackConfig { epsilon: 0.1 }).unwrap();
        assert!((adv.data()[0] - 0.4).abs() < 1e-15);
    }
}
