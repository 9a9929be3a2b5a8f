//! Likelihood-based surprise: negative log of a per-class Gaussian KDE
//! over activation traces, conditioned on the predicted class.

use std::f64::consts::PI;

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::{LayerKind, ModelState};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_VARIANCE_THRESHOLD: f64 = 1e-5;

/// Product-Gaussian KDE with a diagonal bandwidth matrix.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianKde {
    samples: Vec<Vec<f64>>,
    bandwidths: Vec<f64>,
    /// `−Σ ln h_j − (d/2) ln 2π`
    log_norm: f64,
}

impl GaussianKde {
    pub fn with_bandwidths(samples: Vec<Vec<f64>>, bandwidths: Vec<f64>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::InvalidArgument("KDE needs at least one sample".into()));
        }
        if bandwidths.iter().any(|&h| !(h > 0.0 && h.is_finite())) {
            return Err(Error::InvalidArgument("bandwidths must be positive".into()));
        }
        if samples.iter().any(|s| s.len() != bandwidths.len()) {
            return Err(Error::InvalidArgument("sample and bandwidth dimensions differ".into()));
        }
        let d = bandwidths.len() as f64;
        let log_norm = -bandwidths.iter().map(|h| h.ln()).sum::<f64>() - 0.5 * d * (2.0 * PI).ln();
        Ok(Self {
            samples,
            bandwidths,
            log_norm,
        })
    }

    /// Scott's rule per dimension: `σ_j · n^(−1/(d+4))`, with `σ_j` the sample
    /// standard deviation. Dimensions with zero spread fall back to `fallback_std[j]`.
    pub fn fit_scott(samples: Vec<Vec<f64>>, fallback_std: &[f64]) -> Result<Self> {
        let n = samples.len();
        if n < 2 {
            return Err(Error::InvalidArgument("Scott bandwidths need at least 2 samples".into()));
        }
        let d = fallback_std.len();
        let factor = (n as f64).powf(-1.0 / (d as f64 + 4.0));
        let bandwidths = (0..d)
            .map(|j| {
                let std = sample_std(samples.iter().map(|s| s[j]));
                let sigma = if std > 0.0 { std } else { fallback_std[j] };
                sigma * factor
            })
            .collect();
        Self::with_bandwidths(samples, bandwidths)
    }

    pub fn bandwidths(&self) -> &[f64] {
        &self.bandwidths
    }

    pub fn samples(&self) -> &[Vec<f64>] {
        &self.samples
    }

    /// Log of the mean kernel value at `x`, evaluated with log-sum-exp.
    pub fn log_density(&self, x: &[f64]) -> f64 {
        let logs: Vec<f64> = self
            .samples
            .iter()
            .map(|s| {
                let q: f64 = s
                    .iter()
                    .zip(x)
                    .zip(&self.bandwidths)
                    .map(|((si, xi), h)| {
                        let u = (xi - si) / h;
                        u * u
                    })
                    .sum();
                self.log_norm - 0.5 * q
            })
            .collect();
        let max = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let sum: f64 = logs.iter().map(|l| (l - max).exp()).sum();
        max + sum.ln() - (self.samples.len() as f64).ln()
    }

    /// `−ln density(x)`.
    pub fn surprise(&self, x: &[f64]) -> f64 {
        -self.log_density(x)
    }
}

fn sample_std(values: impl Iterator<Item = f64> + Clone) -> f64 {
    let (n, sum) = values.clone().fold((0usize, 0.0), |(n, s), v| (n + 1, s + v));
    if n < 2 {
        return 0.0;
    }
    let mean = sum / n as f64;
    let ss: f64 = values.map(|v| (v - mean) * (v - mean)).sum();
    (ss / (n - 1) as f64).sqrt()
}

/// Per-class KDEs over the variance-filtered neurons of one layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LsaEstimator {
    layer: String,
    retained: Vec<usize>,
    classes: Vec<GaussianKde>,
}

/// The last dense layer before the output head.
pub fn default_lsa_layer<T: Scalar>(model: &ModelState<T>) -> Option<String> {
    let layers = &model.architecture().layers;
    layers[..layers.len().saturating_sub(1)]
        .iter()
        .rev()
        .find(|l| matches!(l.kind, LayerKind::Dense { .. }))
        .map(|l| l.id.clone())
}

impl LsaEstimator {
    /// Builds the estimator from traces grouped by true class.
    pub fn from_traces(
        layer: &str,
        traces: &[Vec<f64>],
        labels: &[usize],
        classes: usize,
        variance_threshold: f64,
    ) -> Result<Self> {
        let mut counts = vec![0usize; classes];
        for &l in labels {
            counts[l] += 1;
        }
        if let Some((class, &count)) = counts.iter().enumerate().find(|(_, &c)| c < 2) {
            return Err(Error::ClassTooSmall { class, count });
        }
        let width = traces.first().map_or(0, Vec::len);
        let global_std: Vec<f64> = (0..width)
            .map(|j| sample_std(traces.iter().map(|t| t[j])))
            .collect();
        let retained: Vec<usize> = (0..width)
            .filter(|&j| global_std[j] * global_std[j] >= variance_threshold && global_std[j] > 0.0)
            .collect();
        if retained.is_empty() {
            return Err(Error::AllNeuronsFiltered(width));
        }
        let fallback: Vec<f64> = retained.iter().map(|&j| global_std[j]).collect();
        let kdes = (0..classes)
            .map(|c| {
                let samples: Vec<Vec<f64>> = traces
                    .iter()
                    .zip(labels)
                    .filter(|(_, &l)| l == c)
                    .map(|(t, _)| retained.iter().map(|&j| t[j]).collect())
                    .collect();
                GaussianKde::fit_scott(samples, &fallback)
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            layer: layer.to_string(),
            retained,
            classes: kdes,
        })
    }

    pub fn layer(&self) -> &str {
        &self.layer
    }

    pub fn retained(&self) -> &[usize] {
        &self.retained
    }

    pub fn class_kde(&self, class: usize) -> Option<&GaussianKde> {
        self.classes.get(class)
    }

    /// Surprise of a full-layer trace under the KDE of `class`.
    pub fn surprise(&self, trace: &[f64], class: usize) -> Result<f64> {
        let kde = self.classes.get(class).ok_or(Error::MissingClass(class))?;
        let x: Vec<f64> = self.retained.iter().map(|&j| trace[j]).collect();
        Ok(kde.surprise(&x))
    }
}

pub fn fit_lsa<T: Scalar>(
    model: &ModelState<T>,
    train_star: &Dataset<T>,
    layer: &str,
    variance_threshold: f64,
) -> Result<LsaEstimator> {
    let (traces, _) = model.observe(train_star.images(), &[layer])?;
    let values: Vec<Vec<f64>> = traces.into_iter().map(|t| t.values).collect();
    LsaEstimator::from_traces(
        layer,
        &values,
        train_star.labels(),
        train_star.classes(),
        variance_threshold,
    )
}

/// Surprise of one image under the KDE of its predicted class.
pub fn lsa_score<T: Scalar>(est: &LsaEstimator, model: &ModelState<T>, image: &[T]) -> Result<f64> {
    let batch = Tensor::stack(&model.architecture().input, &[image])?;
    Ok(lsa_scores(est, model, &batch)?[0])
}

pub fn lsa_scores<T: Scalar>(est: &LsaEstimator, model: &ModelState<T>, images: &Tensor<T>) -> Result<Vec<f64>> {
    let (traces, preds) = model.observe(images, &[est.layer()])?;
    traces
        .iter()
        .zip(preds)
        .map(|(t, c)| est.surprise(&t.values, c))
        .collect()
}
