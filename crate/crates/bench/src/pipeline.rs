//! The end-to-end experiment: train, attack, score, retrain, report.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{Duration, SystemTime, UNIX_EPOCH};

use serde_json::json;

use gr_core::guidance::{timed_scoring, write_scores_csv, Metric, TimedScores};
use gr_core::retrainer::{run_experiment, ExperimentRecord, RetrainParams};
use gr_core::{build_augmented_sets, save_model, ArchitectureDescriptor, AugmentedSets, Dataset, Model};

use crate::config::{DataSource, ExperimentConfig};
use crate::error::{BenchError, Result};
use crate::idx::load_idx_dataset;
use crate::report::{self, RunResults};
use crate::synthetic::generate_synthetic;

pub const MODEL_FILE: &str = "model.grcnn";

pub fn load_data(cfg: &ExperimentConfig) -> Result<(Dataset<f32>, Dataset<f32>)> {
    match &cfg.source {
        DataSource::Synthetic { train, test } => Ok((generate_synthetic(train)?, generate_synthetic(test)?)),
        DataSource::Idx {
            train_images,
            train_labels,
            test_images,
            test_labels,
            classes,
        } => {
            let train = load_idx_dataset(train_images, train_labels, *classes)?;
            let test = load_idx_dataset(test_images, test_labels, Some(train.classes()))?;
            Ok((train, test))
        }
    }
}

/// Trains the original model from `seed.init`.
pub fn train_original(cfg: &ExperimentConfig, train: &Dataset<f32>) -> Result<Model> {
    let shape = train.image_shape();
    let arch = ArchitectureDescriptor::desk([shape[0], shape[1], shape[2]], train.classes());
    let m = Model::build(&arch, cfg.seeds.init)?;
    Ok(m.train(train, &cfg.train)?)
}

pub fn augment(cfg: &ExperimentConfig, model: &Model, train: &Dataset<f32>, test: &Dataset<f32>) -> Result<AugmentedSets<f32>> {
    Ok(build_augmented_sets(
        model,
        train,
        test,
        cfg.attack_fraction,
        &cfg.attack,
        cfg.seeds.attack,
    )?)
}

pub fn retrain_params(cfg: &ExperimentConfig) -> RetrainParams {
    RetrainParams {
        train: cfg.retrain.clone(),
        init_seed: cfg.seeds.init,
    }
}

pub fn scores_file_name(metric: Metric) -> String {
    format!("scores_{metric}.csv")
}

pub fn best_model_file_name(record: &ExperimentRecord<f32>) -> String {
    format!("best_{}_{}.grcnn", record.summary.kind, record.summary.metric)
}

/// Files written so far, for the manifest.
#[derive(Debug, Default)]
struct Written {
    files: Vec<String>,
}

impl Written {
    fn put(&mut self, dir: &Path, name: &str, bytes: &[u8]) -> Result<()> {
        fs::write(dir.join(name), bytes)?;
        self.files.push(name.to_string());
        Ok(())
    }

    fn model(&mut self, dir: &Path, name: &str, model: &Model) -> Result<()> {
        save_model(model, dir.join(name))?;
        self.files.push(name.to_string());
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportBundle {
    pub dir: PathBuf,
    pub results: RunResults,
    pub metric_times: Vec<(Metric, Duration)>,
    /// File name → SHA-256 of its contents.
    pub artifacts: BTreeMap<String, String>,
}

fn stages(cfg: &ExperimentConfig, dir: &Path, out: &mut Written) -> Result<(RunResults, Vec<(Metric, Duration)>)> {
    let (train, test) = load_data(cfg)?;
    let model = train_original(cfg, &train)?;
    out.model(dir, MODEL_FILE, &model)?;
    let sets = augment(cfg, &model, &train, &test)?;
    let original_accuracy = model.accuracy(&sets.test_star)?;

    let mut scored: Vec<(Metric, TimedScores)> = Vec::new();
    for &metric in &cfg.metrics {
        let ts = timed_scoring(metric, &model, &sets.train_star, &cfg.guidance)?;
        let mut buf = Vec::new();
        write_scores_csv(&ts.scores, &mut buf)?;
        out.put(dir, &scores_file_name(metric), &buf)?;
        scored.push((metric, ts));
    }
    let times: Vec<(Metric, Duration)> = scored.iter().map(|(m, ts)| (*m, ts.elapsed)).collect();
    out.put(dir, report::TIMING_FILE, report::timing_csv(&cfg.name, &times)?.as_bytes())?;

    let hp = retrain_params(cfg);
    let mut sweeps = Vec::new();
    for &kind in &cfg.configs {
        for (_, ts) in &scored {
            let record = run_experiment(kind, &model, &sets, &ts.scores, ts.elapsed, &hp)?;
            out.model(dir, &best_model_file_name(&record), &record.best_model)?;
            sweeps.push(record.summary);
        }
    }
    let results = RunResults {
        dataset: cfg.name.clone(),
        original_accuracy,
        sweeps,
    };
    for (name, body) in report::derived_tables(&results)? {
        out.put(dir, &name, body.as_bytes())?;
    }
    report::consistency_check(dir)?;
    Ok((results, times))
}

fn manifest(cfg: &ExperimentConfig, dir: &Path, written: &Written, error: Option<&BenchError>) -> Result<BTreeMap<String, String>> {
    let mut artifacts = BTreeMap::new();
    for name in &written.files {
        artifacts.insert(name.clone(), report::sha256_hex(&fs::read(dir.join(name))?));
    }
    let created = SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map_or(0, |d| d.as_secs());
    let doc = json!({
        "status": if error.is_some() { "failed" } else { "ok" },
        "error": error.map(|e| e.to_string()),
        "created_unix": created,
        "config": cfg.render(),
        "artifacts": artifacts,
    });
    fs::write(dir.join(report::MANIFEST_FILE), serde_json::to_string_pretty(&doc)? + "\n")?;
    Ok(artifacts)
}

/// Runs every stage, writing into `dir`. On failure the files written so
/// far stay in place and the manifest is marked `failed`.
pub fn run_pipeline(cfg: &ExperimentConfig, dir: &Path) -> Result<ReportBundle> {
    fs::create_dir_all(dir)?;
    let mut written = Written::default();
    match stages(cfg, dir, &mut written) {
        Ok((results, metric_times)) => {
            let artifacts = manifest(cfg, dir, &written, None)?;
            Ok(ReportBundle {
                dir: dir.to_path_buf(),
                results,
                metric_times,
                artifacts,
            })
        }
        Err(e) => {
            manifest(cfg, dir, &written, Some(&e))?;
            Err(e)
        }
    }
}
