//! Distance-based surprise over activation traces.

use std::collections::HashMap;

use rayon::prelude::*;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Reported when the distance from the nearest same-class trace to any
/// other-class trace is zero.
pub const DSA_SENTINEL: f64 = 1e12;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DsaValue {
    pub value: f64,
    /// The denominator was zero and `value` is the sentinel.
    pub degenerate: bool,
}

/// Reference traces grouped by class.
#[derive(Debug, Clone, PartialEq)]
pub struct DsaIndex {
    layers: Vec<String>,
    dim: usize,
    traces: Vec<f64>,
    labels: Vec<usize>,
    classes: usize,
}

/// Squared Euclidean distance, accumulated in four lanes.
pub fn squared_distance(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let mut ca = a.chunks_exact(4);
    let mut cb = b.chunks_exact(4);
    for (x, y) in (&mut ca).zip(&mut cb) {
        for k in 0..4 {
            let d = x[k] - y[k];
            acc[k] += d * d;
        }
    }
    let tail: f64 = ca
        .remainder()
        .iter()
        .zip(cb.remainder())
        .map(|(x, y)| (x - y) * (x - y))
        .sum();
    (acc[0] + acc[1]) + (acc[2] + acc[3]) + tail
}

impl DsaIndex {
    pub fn from_traces(layers: Vec<String>, traces: &[Vec<f64>], labels: &[usize], classes: usize) -> Result<Self> {
        if traces.len() != labels.len() {
            return Err(Error::InvalidArgument(format!(
                "{} traces but {} labels",
                traces.len(),
                labels.len()
            )));
        }
        let dim = traces.first().map_or(0, Vec::len);
        if dim == 0 || traces.iter().any(|t| t.len() != dim) {
            return Err(Error::InvalidArgument("traces must share a non-zero width".into()));
        }
        let mut seen = vec![false; classes];
        for &l in labels {
            *seen.get_mut(l).ok_or(Error::LabelOutOfRange { label: l, classes })? = true;
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(Error::MissingClass(missing));
        }
        Ok(Self {
            layers,
            dim,
            traces: traces.concat(),
            labels: labels.to_vec(),
            classes,
        })
    }

    pub fn layers(&self) -> Vec<&str> {
        self.layers.iter().map(String::as_str).collect()
    }

    pub fn len(&self) -> usize {
        self.labels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.labels.is_empty()
    }

    fn trace(&self, i: usize) -> &[f64] {
        &self.traces[i * self.dim..(i + 1) * self.dim]
    }

    /// Nearest reference (index, squared distance) to `x` among those whose
    /// class satisfies `keep`; the lowest index wins ties.
    fn nearest(&self, x: &[f64], keep: impl Fn(usize) -> bool) -> Option<(usize, f64)> {
        let mut best: Option<(usize, f64)> = None;
        for (i, &l) in self.labels.iter().enumerate() {
            if !keep(l) {
                continue;
            }
            let d = squared_distance(x, self.trace(i));
            if best.map_or(true, |(_, bd)| d < bd) {
                best = Some((i, d));
            }
        }
        best
    }

    fn check(&self, trace: &[f64], class: usize) -> Result<()> {
        if trace.len() != self.dim {
            return Err(Error::InvalidArgument(format!(
                "trace width {} differs from index width {}",
                trace.len(),
                self.dim
            )));
        }
        if class >= self.classes {
            return Err(Error::MissingClass(class));
        }
        Ok(())
    }

    fn nearest_same(&self, trace: &[f64], class: usize) -> (usize, f64) {
        self.nearest(trace, |l| l == class).expect("every class is present")
    }

    /// Distance from reference `a` to the nearest reference of another class.
    fn other_distance(&self, a: usize) -> f64 {
        let class = self.labels[a];
        self.nearest(self.trace(a), |l| l != class)
            .expect("at least two classes")
            .1
            .sqrt()
    }

    /// DSA of a trace whose predicted class is `class`.
    pub fn surprise(&self, trace: &[f64], class: usize) -> Result<DsaValue> {
        self.check(trace, class)?;
        let (a, da) = self.nearest_same(trace, class);
        Ok(ratio(da.sqrt(), self.other_distance(a)))
    }

    /// DSA of many traces; the second search is shared by queries with the
    /// same nearest same-class reference.
    pub fn surprise_batch(&self, traces: &[Vec<f64>], classes: &[usize]) -> Result<Vec<DsaValue>> {
        for (t, &c) in traces.iter().zip(classes) {
            self.check(t, c)?;
        }
        let nearest: Vec<(usize, f64)> = traces
            .par_iter()
            .zip(classes)
            .map(|(t, &c)| self.nearest_same(t, c))
            .collect();
        let mut anchors: Vec<usize> = nearest.iter().map(|&(a, _)| a).collect();
        anchors.sort_unstable();
        anchors.dedup();
        let other: HashMap<usize, f64> = anchors
            .par_iter()
            .map(|&a| (a, self.other_distance(a)))
            .collect();
        Ok(nearest
            .iter()
            .map(|&(a, da)| ratio(da.sqrt(), other[&a]))
            .collect())
    }
}

fn ratio(num: f64, den: f64) -> DsaValue {
    if den == 0.0 {
        DsaValue {
            value: DSA_SENTINEL,
            degenerate: true,
        }
    } else {
        DsaValue {
            value: num / den,
            degenerate: false,
        }
    }
}

/// Indexes the traces of `train_star` grouped by true label.
pub fn fit_dsa<T: Scalar>(model: &ModelState<T>, train_star: &Dataset<T>, layers: &[&str]) -> Result<DsaIndex> {
    let (traces, _) = model.observe(train_star.images(), layers)?;
    let values: Vec<Vec<f64>> = traces.into_iter().map(|t| t.values).collect();
    DsaIndex::from_traces(
        layers.iter().map(|s| s.to_string()).collect(),
        &values,
        train_star.labels(),
        train_star.classes(),
    )
}

pub fn dsa_score<T: Scalar>(index: &DsaIndex, model: &ModelState<T>, image: &[T]) -> Result<DsaValue> {
    let batch = Tensor::stack(&model.architecture().input, &[image])?;
    Ok(dsa_scores(index, model, &batch)?[0])
}

pub fn dsa_scores<T: Scalar>(index: &DsaIndex, model: &ModelState<T>, images: &Tensor<T>) -> Result<Vec<DsaValue>> {
    let (traces, preds) = model.observe(images, &index.layers())?;
    let values: Vec<Vec<f64>> = traces.into_iter().map(|t| t.values).collect();
    index.surprise_batch(&values, &preds)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn index() -> DsaIndex {
        let traces = vec![vec![0.0, 0.0], vec![1.0, 0.0], vec![4.0, 0.0], vec![6.0, 0.0]];
        DsaIndex::from_traces(vec!["l".into()], &traces, &[0, 0, 1, 1], 2).unwrap()
    }

    #[test]
    fn hand_computed() {
        let idx = index();
        // nearest class-0 trace to 1.5 is 1.0 (0.5 away); nearest class-1 trace to it is 4.0
        let v = idx.surprise(&[1.5, 0.0], 0).unwrap();
        assert_eq!(v.value, 0.5 / 3.0);
        let v = idx.surprise(&[1.5, 0.0], 1).unwrap();
        assert_eq!(v.value, 2.5 / 3.0);
        let batch = idx
            .surprise_batch(&[vec![1.5, 0.0], vec![1.5, 0.0]], &[0, 1])
            .unwrap();
        assert_eq!(batch[0].value, 0.5 / 3.0);
        assert_eq!(batch[1].value, 2.5 / 3.0);
    }

    #[test]
    fn coincident_traces_give_sentinel() {
        let traces = vec![vec![1.0], vec![1.0]];
        let idx = DsaIndex::from_traces(vec!["l".into()], &traces, &[0, 1], 2).unwrap();
        let v = idx.surprise(&[2.0], 0).unwrap();
        assert!(v.degenerate);
        assert_eq!(v.value, DSA_SENTINEL);
    }

    #[test]
    fn rejects_missing_class() {
        let traces = vec![vec![1.0], vec![2.0]];
        assert!(matches!(
            DsaIndex::from_traces(vec![], &traces, &[0, 0], 2),
            Err(Error::MissingClass(1))
        ));
        assert!(index().surprise(&[0.0], 0).is_err());
    }

    #[test]
    fn distance_matches_naive() {
        let a: Vec<f64> = (0..11).map(|i| i as f64 * 0.3).collect();
        let b: Vec<f64> = (0..11).map(|i| (i * i) as f64 * 0.1).collect();
        let naive: f64 = a.iter().zip(&b).map(|(x, y)| (x - y) * (x - y)).sum();
        assert!((squared_distance(&a, &b) - naive).abs() < 1e-12 * naive);
    }
}
