//! Procedural four-class texture dataset.

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_distr::{Distribution, Normal};
use rand_pcg::Pcg32;

use gr_core::{Dataset, Tensor};

use crate::error::{BenchError, Result};

pub const PATTERNS: usize = 4;

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub per_class: usize,
    pub image_size: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            classes: PATTERNS,
            per_class: 500,
            image_size: 16,
            noise: 1.0,
            seed: 1,
        }
    }
}

/// Noise-free pixel `(r, c)` of class `class`.
pub fn pattern(class: usize, size: usize, r: usize, c: usize) -> f32 {
    let on = match class {
        0 => r % 2 == 0,
        1 => c % 2 == 0,
        2 => (r + c) % 2 == 0,
        _ => {
            let centre = (size as f64 - 1.0) / 2.0;
            let (dr, dc) = (r as f64 - centre, c as f64 - centre);
            (dr * dr + dc * dc).sqrt() <= size as f64 / 4.0
        }
    };
    if on {
        1.0
    } else {
        0.0
    }
}

/// `per_class` noisy copies of every pattern, shuffled, noise from `PCG32(seed)`.
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Dataset<f32>> {
    if !(spec.noise >= 0.0 && spec.noise.is_finite()) {
        return Err(BenchError::InvalidConfig(format!("noise must be non-negative, got {}", spec.noise)));
    }
    if spec.per_class == 0 || spec.image_size == 0 {
        return Err(BenchError::InvalidConfig("per-class count and image size must be positive".into()));
    }
    if !(2..=PATTERNS).contains(&spec.classes) {
        return Err(BenchError::InvalidConfig(format!(
            "synthetic data has 2 to {PATTERNS} classes, got {}",
            spec.classes
        )));
    }
    let mut rng = Pcg32::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise).map_err(|e| BenchError::InvalidConfig(e.to_string()))?;
    let mut labels: Vec<usize> = (0..spec.classes)
        .flat_map(|c| std::iter::repeat_n(c, spec.per_class))
        .collect();
    labels.shuffle(&mut rng);
    let s = spec.image_size;
    let mut pixels = Vec::with_capacity(labels.len() * s * s);
    for &class in &labels {
        for r in 0..s {
            for c in 0..s {
                let v = pattern(class, s, r, c) as f64 + noise.sample(&mut rng);
                pixels.push(v.clamp(0.0, 1.0) as f32);
            }
        }
    }
    let images = Tensor::new(vec![labels.len(), s, s, 1], pixels)?;
    Ok(Dataset::new(images, labels, spec.classes)?)
}
