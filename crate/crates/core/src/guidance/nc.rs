use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NcConfig {
    /// A neuron counts as activated when its layer-scaled value exceeds this.
    pub threshold: f64,
}

impl NcConfig {
    pub fn new(threshold: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&threshold) {
            return Err(Error::InvalidArgument(format!(
                "coverage threshold must lie in [0, 1], got {threshold}"
            )));
        }
        Ok(Self { threshold })
    }
}

impl Default for NcConfig {
    fn default() -> Self {
        Self { threshold: 0.5 }
    }
}

/// Number of neurons of one layer whose min–max scaled value exceeds
/// `threshold`. A constant layer has no activated neurons.
pub fn activated_in_layer(layer: &[f64], threshold: f64) -> usize {
    let (min, max) = layer
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| (lo.min(v), hi.max(v)));
    if !(max > min) {
        return 0;
    }
    let range = max - min;
    layer.iter().filter(|&&v| (v - min) / range > threshold).count()
}

/// Activated fraction over all given layers.
pub fn coverage<'a>(layers: impl IntoIterator<Item = &'a [f64]>, threshold: f64) -> f64 {
    let (active, total) = layers.into_iter().fold((0usize, 0usize), |(a, t), layer| {
        (a + activated_in_layer(layer, threshold), t + layer.len())
    });
    if total == 0 {
        0.0
    } else {
        active as f64 / total as f64
    }
}

/// Neuron coverage of one image over every conv and dense layer.
pub fn nc_score<T: Scalar>(model: &ModelState<T>, image: &[T], cfg: &NcConfig) -> Result<f64> {
    let trace = model.activation_trace(0, image, &model.neuron_layers())?;
    Ok(coverage(trace.segments(), cfg.threshold))
}

pub fn nc_scores<T: Scalar>(model: &ModelState<T>, images: &Tensor<T>, cfg: &NcConfig) -> Result<Vec<f64>> {
    let (traces, _) = model.observe(images, &model.neuron_layers())?;
    Ok(traces
        .iter()
        .map(|t| coverage(t.segments(), cfg.threshold))
        .collect())
}
