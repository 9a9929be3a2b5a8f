//! Flat `key = value` experiment configuration.
//!
//! Blank lines and lines starting with `#` are ignored. Recognised keys:
//!
//! | key | default |
//! |---|---|
//! | `name` | `synthetic` or `idx` |
//! | `dataset` | `synthetic` (or `idx`) |
//! | `synthetic.classes` | 4 |
//! | `synthetic.train_per_class` | 500 |
//! | `synthetic.test_per_class` | 125 |
//! | `synthetic.image_size` | 16 |
//! | `synthetic.noise` | 1.0 |
//! | `synthetic.seed` | 1 |
//! | `synthetic.test_seed` | `synthetic.seed + 1` |
//! | `idx.train_images`, `idx.train_labels`, `idx.test_images`, `idx.test_labels` | required for `idx` |
//! | `idx.classes` | largest label + 1 |
//! | `architecture` | `desk` |
//! | `train.epochs`, `train.batch_size`, `train.learning_rate`, `train.momentum` | 20, 32, 0.01, 0.9 |
//! | `retrain.epochs`, `retrain.batch_size`, `retrain.learning_rate`, `retrain.momentum` | 5, 32, 0.01, 0.9 |
//! | `attack.epsilon` | 0.1 |
//! | `attack.fraction` | 0.5 |
//! | `metrics` | `NC, LSA, DSA, RANDOM` |
//! | `configs` | `C1, C2, C3` |
//! | `nc.threshold` | 0.5 |
//! | `lsa.layer` | last hidden dense layer |
//! | `lsa.variance_threshold` | 1e-5 |
//! | `dsa.layers` | every conv and dense layer |
//! | `seed.init`, `seed.shuffle`, `seed.attack`, `seed.random` | required |
//! | `output` | none; `--out` overrides |
//!
//! Unknown or repeated keys are errors.

use std::collections::BTreeMap;
use std::fmt::Display;
use std::fs;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use gr_core::guidance::{GuidanceConfig, Metric, NcConfig};
use gr_core::{AttackConfig, RetrainKind, TrainParams};

use crate::error::{BenchError, Result};
use crate::synthetic::SyntheticSpec;

const KEYS: &[&str] = &[
    "name",
    "dataset",
    "synthetic.classes",
    "synthetic.train_per_class",
    "synthetic.test_per_class",
    "synthetic.image_size",
    "synthetic.noise",
    "synthetic.seed",
    "synthetic.test_seed",
    "idx.train_images",
    "idx.train_labels",
    "idx.test_images",
    "idx.test_labels",
    "idx.classes",
    "architecture",
    "train.epochs",
    "train.batch_size",
    "train.learning_rate",
    "train.momentum",
    "retrain.epochs",
    "retrain.batch_size",
    "retrain.learning_rate",
    "retrain.momentum",
    "attack.epsilon",
    "attack.fraction",
    "metrics",
    "configs",
    "nc.threshold",
    "lsa.layer",
    "lsa.variance_threshold",
    "dsa.layers",
    "seed.init",
    "seed.shuffle",
    "seed.attack",
    "seed.random",
    "output",
];

#[derive(Debug, Clone, PartialEq)]
pub enum DataSource {
    Synthetic {
        train: SyntheticSpec,
        test: SyntheticSpec,
    },
    Idx {
        train_images: PathBuf,
        train_labels: PathBuf,
        test_images: PathBuf,
        test_labels: PathBuf,
        classes: Option<usize>,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Seeds {
    pub init: u64,
    pub shuffle: u64,
    pub attack: u64,
    pub random: u64,
}

/// Command-line replacements for the four seeds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SeedOverrides {
    pub init: Option<u64>,
    pub shuffle: Option<u64>,
    pub attack: Option<u64>,
    pub random: Option<u64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub source: DataSource,
    pub train: TrainParams,
    pub retrain: TrainParams,
    pub attack: AttackConfig,
    pub attack_fraction: f64,
    pub metrics: Vec<Metric>,
    pub configs: Vec<RetrainKind>,
    pub guidance: GuidanceConfig,
    pub seeds: Seeds,
    pub output: Option<PathBuf>,
}

/// Parsed lines with the line number of each key.
struct Entries {
    values: BTreeMap<String, (usize, String)>,
}

impl Entries {
    fn parse(text: &str) -> Result<Self> {
        let mut values = BTreeMap::new();
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| BenchError::Config {
                line: line_no,
                message: format!("expected `key = value`, found `{line}`"),
            })?;
            let key = key.trim();
            if !KEYS.contains(&key) {
                return Err(BenchError::Config {
                    line: line_no,
                    message: format!("unknown key `{key}`"),
                });
            }
            if values
                .insert(key.to_string(), (line_no, value.trim().to_string()))
                .is_some()
            {
                return Err(BenchError::Config {
                    line: line_no,
                    message: format!("`{key}` given twice"),
                });
            }
        }
        Ok(Self { values })
    }

    fn raw(&self, key: &str) -> Option<&str> {
        self.values.get(key).map(|(_, v)| v.as_str())
    }

    fn get<V: FromStr>(&self, key: &str) -> Result<Option<V>>
    where
        V::Err: Display,
    {
        self.values
            .get(key)
            .map(|(line, v)| {
                v.parse().map_err(|e: V::Err| BenchError::Config {
                    line: *line,
                    message: format!("`{key}`: {e}"),
                })
            })
            .transpose()
    }

    fn or<V: FromStr>(&self, key: &str, default: V) -> Result<V>
    where
        V::Err: Display,
    {
        Ok(self.get(key)?.unwrap_or(default))
    }

    fn list<V: FromStr>(&self, key: &str) -> Result<Option<Vec<V>>>
    where
        V::Err: Display,
    {
        let Some((line, v)) = self.values.get(key) else {
            return Ok(None);
        };
        v.split(',')
            .map(str::trim)
            .filter(|s| !s.is_empty())
            .map(|s| {
                s.parse().map_err(|e: V::Err| BenchError::Config {
                    line: *line,
                    message: format!("`{key}`: {e}"),
                })
            })
            .collect::<Result<Vec<_>>>()
            .map(Some)
    }

    fn seed(&self, key: &str, over: Option<u64>) -> Result<u64> {
        match over {
            Some(s) => Ok(s),
            None => self
                .get(key)?
                .ok_or_else(|| BenchError::InvalidConfig(format!("`{key}` must be set"))),
        }
    }

    fn path(&self, key: &str) -> Result<PathBuf> {
        self.raw(key)
            .map(PathBuf::from)
            .ok_or_else(|| BenchError::InvalidConfig(format!("`{key}` is required for idx data")))
    }
}

fn train_params(e: &Entries, prefix: &str, epochs: usize, shuffle_seed: u64) -> Result<TrainParams> {
    Ok(TrainParams {
        epochs: e.or(&format!("{prefix}.epochs"), epochs)?,
        batch_size: e.or(&format!("{prefix}.batch_size"), 32)?,
        lr: e.or(&format!("{prefix}.learning_rate"), 0.01)?,
        momentum: e.or(&format!("{prefix}.momentum"), 0.9)?,
        shuffle_seed,
    })
}

impl ExperimentConfig {
    pub fn parse(text: &str, seeds: &SeedOverrides) -> Result<Self> {
        let e = Entries::parse(text)?;
        let seeds = Seeds {
            init: e.seed("seed.init", seeds.init)?,
            shuffle: e.seed("seed.shuffle", seeds.shuffle)?,
            attack: e.seed("seed.attack", seeds.attack)?,
            random: e.seed("seed.random", seeds.random)?,
        };
        let dataset = e.raw("dataset").unwrap_or("synthetic");
        let source = match dataset {
            "synthetic" => {
                let base = SyntheticSpec::default();
                let seed: u64 = e.or("synthetic.seed", base.seed)?;
                let train = SyntheticSpec {
                    classes: e.or("synthetic.classes", base.classes)?,
                    per_class: e.or("synthetic.train_per_class", base.per_class)?,
                    image_size: e.or("synthetic.image_size", base.image_size)?,
                    noise: e.or("synthetic.noise", base.noise)?,
                    seed,
                };
                let test = SyntheticSpec {
                    per_class: e.or("synthetic.test_per_class", 125)?,
                    seed: e.or("synthetic.test_seed", seed.wrapping_add(1))?,
                    ..train.clone()
                };
                DataSource::Synthetic { train, test }
            }
            "idx" => DataSource::Idx {
                train_images: e.path("idx.train_images")?,
                train_labels: e.path("idx.train_labels")?,
                test_images: e.path("idx.test_images")?,
                test_labels: e.path("idx.test_labels")?,
                classes: e.get("idx.classes")?,
            },
            other => {
                return Err(BenchError::InvalidConfig(format!(
                    "dataset must be `synthetic` or `idx`, got `{other}`"
                )))
            }
        };
        if let Some(arch) = e.raw("architecture") {
            if arch != "desk" {
                return Err(BenchError::InvalidConfig(format!("unknown architecture `{arch}`")));
            }
        }
        let metrics = e.list("metrics")?.unwrap_or_else(|| Metric::ALL.to_vec());
        let configs = e.list("configs")?.unwrap_or_else(|| RetrainKind::ALL.to_vec());
        if metrics.is_empty() || configs.is_empty() {
            return Err(BenchError::InvalidConfig(
                "at least one metric and one configuration are required".into(),
            ));
        }
        let guidance = GuidanceConfig {
            nc: NcConfig::new(e.or("nc.threshold", 0.5)?)?,
            lsa_layer: e.get("lsa.layer")?,
            lsa_variance_threshold: e.or("lsa.variance_threshold", 1e-5)?,
            dsa_layers: e.list("dsa.layers")?,
            random_seed: seeds.random,
        };
        let attack_fraction = e.or("attack.fraction", 0.5)?;
        if !(attack_fraction > 0.0 && attack_fraction <= 1.0) {
            return Err(BenchError::InvalidConfig(format!(
                "attack.fraction must lie in (0, 1], got {attack_fraction}"
            )));
        }
        Ok(Self {
            name: e.raw("name").unwrap_or(dataset).to_string(),
            source,
            train: train_params(&e, "train", 20, seeds.shuffle)?,
            retrain: train_params(&e, "retrain", 5, seeds.shuffle)?,
            attack: AttackConfig::new(e.or("attack.epsilon", 0.1)?)?,
            attack_fraction,
            metrics,
            configs,
            guidance,
            seeds,
            output: e.raw("output").map(PathBuf::from),
        })
    }

    pub fn from_file(path: impl AsRef<Path>, seeds: &SeedOverrides) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?, seeds)
    }

    /// Every setting in `key = value` form, defaults filled in, sorted by key.
    pub fn render(&self) -> String {
        let mut kv: BTreeMap<String, String> = BTreeMap::new();
        let mut put = |k: &str, v: String| {
            kv.insert(k.to_string(), v);
        };
        put("name", self.name.clone());
        match &self.source {
            DataSource::Synthetic { train, test } => {
                put("dataset", "synthetic".into());
                put("synthetic.classes", train.classes.to_string());
                put("synthetic.train_per_class", train.per_class.to_string());
                put("synthetic.test_per_class", test.per_class.to_string());
                put("synthetic.image_size", train.image_size.to_string());
                put("synthetic.noise", train.noise.to_string());
                put("synthetic.seed", train.seed.to_string());
                put("synthetic.test_seed", test.seed.to_string());
            }
            DataSource::Idx {
                train_images,
                train_labels,
                test_images,
                test_labels,
                classes,
            } => {
                put("dataset", "idx".into());
                put("idx.train_images", train_images.display().to_string());
                put("idx.train_labels", train_labels.display().to_string());
                put("idx.test_images", test_images.display().to_string());
                put("idx.test_labels", test_labels.display().to_string());
                if let Some(c) = classes {
                    put("idx.classes", c.to_string());
                }
            }
        }
        put("architecture", "desk".into());
        for (prefix, hp) in [("train", &self.train), ("retrain", &self.retrain)] {
            put(&format!("{prefix}.epochs"), hp.epochs.to_string());
            put(&format!("{prefix}.batch_size"), hp.batch_size.to_string());
            put(&format!("{prefix}.learning_rate"), hp.lr.to_string());
            put(&format!("{prefix}.momentum"), hp.momentum.to_string());
        }
        put("attack.epsilon", self.attack.epsilon.to_string());
        put("attack.fraction", self.attack_fraction.to_string());
        put("metrics", join(&self.metrics));
        put("configs", join(&self.configs));
        put("nc.threshold", self.guidance.nc.threshold.to_string());
        if let Some(l) = &self.guidance.lsa_layer {
            put("lsa.layer", l.clone());
        }
        put("lsa.variance_threshold", self.guidance.lsa_variance_threshold.to_string());
        if let Some(ls) = &self.guidance.dsa_layers {
            put("dsa.layers", ls.join(", "));
        }
        put("seed.init", self.seeds.init.to_string());
        put("seed.shuffle", self.seeds.shuffle.to_string());
        put("seed.attack", self.seeds.attack.to_string());
        put("seed.random", self.seeds.random.to_string());
        kv.iter().map(|(k, v)| format!("{k} = {v}\n")).collect()
    }
}

fn join<V: ToString>(items: &[V]) -> String {
    items.iter().map(ToString::to_string).collect::<Vec<_>>().join(", ")
}

#[cfg(test)]
mod tests {
    use super::*;

    const SEEDS: &str = "seed.init = 1\nseed.shuffle = 2\nseed.attack = 3\nseed.random = 4\n";

    #[test]
    fn defaults_and_overrides() {
        let cfg = ExperimentConfig::parse(
            &format!("# comment\n{SEEDS}metrics = dsa, random\nretrain.epochs = 7\n"),
            &SeedOverrides {
                attack: Some(30),
                ..Default::default()
            },
        )
        .unwrap();
        assert_eq!(cfg.metrics, vec![Metric::Dsa, Metric::Random]);
        assert_eq!(cfg.configs, RetrainKind::ALL.to_vec());
        assert_eq!(cfg.retrain.epochs, 7);
        assert_eq!(cfg.train.epochs, 20);
        assert_eq!(cfg.seeds.attack, 30);
        assert_eq!(cfg.guidance.random_seed, 4);
        assert_eq!(cfg.train.shuffle_seed, 2);
        assert_eq!(cfg.name, "synthetic");
    }

    #[test]
    fn render_round_trips() {
        let cfg = ExperimentConfig::parse(&format!("{SEEDS}synthetic.noise = 0.25\n"), &SeedOverrides::default()).unwrap();
        let again = ExperimentConfig::parse(&cfg.render(), &SeedOverrides::default()).unwrap();
        assert_eq!(cfg, again);
    }

    #[test]
    fn fails_fast() {
        let none = SeedOverrides::default();
        let err = ExperimentConfig::parse(&format!("{SEEDS}epochs = 3\n"), &none).unwrap_err();
        assert!(matches!(err, BenchError::Config { line: 5, .. }), "{err}");
        assert!(ExperimentConfig::parse("seed.init = 1\n", &none).is_err());
        assert!(ExperimentConfig::parse(&format!("{SEEDS}seed.init = 5\n"), &none).is_err());
        assert!(ExperimentConfig::parse(&format!("{SEEDS}metrics = kmnc\n"), &none).is_err());
        assert!(ExperimentConfig::parse(&format!("{SEEDS}metrics =\n"), &none).is_err());
        assert!(ExperimentConfig::parse(&format!("{SEEDS}attack.fraction = 0\n"), &none).is_err());
        assert!(ExperimentConfig::parse(&format!("{SEEDS}just words\n"), &none).is_err());
    }
}
