//! Retraining sweeps over metric-ordered prefixes of the augmented training set.

use std::fmt;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adversary::AugmentedSets;
use crate::error::{Error, Result};
use crate::guidance::{order_inputs, GuidanceScore, Metric};
use crate::model::{ModelState, TrainParams};
use crate::scalar::Scalar;

/// Points per sweep.
pub const SWEEP_POINTS: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum RetrainKind {
    /// Fresh weights, pool Train*.
    C1,
    /// The original weights, pool Train*.
    C2,
    /// The original weights, pool Adv-Train only.
    C3,
}

impl RetrainKind {
    pub const ALL: [RetrainKind; 3] = [RetrainKind::C1, RetrainKind::C2, RetrainKind::C3];
}

impl fmt::Display for RetrainKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            RetrainKind::C1 => "C1",
            RetrainKind::C2 => "C2",
            RetrainKind::C3 => "C3",
        })
    }
}

impl FromStr for RetrainKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        RetrainKind::ALL
            .into_iter()
            .find(|k| k.to_string().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown configuration `{s}`")))
    }
}

/// `round(i·total/20)` for `i = 1..=20`.
pub fn sweep_sizes(total: usize) -> Result<Vec<usize>> {
    if total < SWEEP_POINTS {
        return Err(Error::InvalidArgument(format!(
            "a pool of {total} inputs is too small for {SWEEP_POINTS} distinct sizes"
        )));
    }
    let n = SWEEP_POINTS;
    Ok((1..=n).map(|i| (2 * i * total + n) / (2 * n)).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainParams {
    pub train: TrainParams,
    /// Seed of the fresh initialisation used by C1.
    pub init_seed: u64,
}

/// Weights every data point of `kind` starts from.
pub fn initial_model<T: Scalar>(kind: RetrainKind, original: &ModelState<T>, init_seed: u64) -> Result<ModelState<T>> {
    match kind {
        RetrainKind::C1 => ModelState::build(original.architecture(), init_seed),
        RetrainKind::C2 | RetrainKind::C3 => Ok(original.clone()),
    }
}

/// Train* ids forming the retraining pool of `kind`, in guidance order.
/// C3 keeps only the adversarial entries of the Train* order.
pub fn pool_order<T: Scalar>(kind: RetrainKind, sets: &AugmentedSets<T>, train_star_order: &[usize]) -> Vec<usize> {
    match kind {
        RetrainKind::C1 | RetrainKind::C2 => train_star_order.to_vec(),
        RetrainKind::C3 => train_star_order
            .iter()
            .copied()
            .filter(|&i| sets.train_star_origin[i].is_adversarial())
            .collect(),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct RetrainRun<T> {
    pub size: usize,
    pub model: ModelState<T>,
    /// Digest of the weights training started from.
    pub initial_digest: u64,
    pub acc_test_star: f64,
    pub acc_test: f64,
    pub acc_adv_test: f64,
    pub wall_time: Duration,
}

/// Trains the initial model of `kind` on the first `size` entries of `pool`.
pub fn retrain_point<T: Scalar>(
    kind: RetrainKind,
    original: &ModelState<T>,
    sets: &AugmentedSets<T>,
    pool: &[usize],
    size: usize,
    hp: &RetrainParams,
) -> Result<RetrainRun<T>> {
    if size == 0 || size > pool.len() {
        return Err(Error::InvalidArgument(format!(
            "size {size} outside a pool of {}",
            pool.len()
        )));
    }
    let start = Instant::now();
    let init = initial_model(kind, original, hp.init_seed)?;
    let initial_digest = init.weight_digest();
    let data = sets.train_star.subset(&pool[..size])?;
    let model = init.train(&data, &hp.train)?;
    let acc_test_star = model.accuracy(&sets.test_star)?;
    let acc_test = model.accuracy(&sets.test)?;
    let acc_adv_test = model.accuracy(&sets.adv_test)?;
    Ok(RetrainRun {
        size,
        model,
        initial_digest,
        acc_test_star,
        acc_test,
        acc_adv_test,
        wall_time: start.elapsed(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PointSummary {
    /// 1-based position in the sweep.
    pub point: usize,
    pub size: usize,
    pub acc_test_star: f64,
    pub acc_test: f64,
    pub acc_adv_test: f64,
    pub initial_digest: u64,
    #[serde(skip)]
    pub wall_time: Duration,
}

/// The 20 points of one (configuration, metric) sweep and its best point.
#[derive(Debug, Clone, PartialEq)]
pub struct SweepSummary {
    pub kind: RetrainKind,
    pub metric: Metric,
    /// Pool size `T_n`.
    pub total: usize,
    pub points: Vec<PointSummary>,
    pub best_accuracy: f64,
    /// Smallest size reaching `best_accuracy`.
    pub best_size: usize,
}

impl SweepSummary {
    /// Picks the best point: highest Test* accuracy, smaller size on ties.
    pub fn from_points(kind: RetrainKind, metric: Metric, total: usize, mut points: Vec<PointSummary>) -> Result<Self> {
        points.sort_by_key(|p| p.size);
        let best = points
            .iter()
            .fold(None::<&PointSummary>, |best, p| match best {
                Some(b) if b.acc_test_star >= p.acc_test_star => Some(b),
                _ => Some(p),
            })
            .ok_or_else(|| Error::InvalidArgument("sweep without points".into()))?;
        Ok(Self {
            kind,
            metric,
            total,
            best_accuracy: best.acc_test_star,
            best_size: best.size,
            points,
        })
    }

    pub fn utilization(&self) -> f64 {
        utilization(self.best_size, self.total)
    }

    /// `"u/T"`.
    pub fn utilization_fraction(&self) -> String {
        format!("{}/{}", self.best_size, self.total)
    }
}

/// Resource utilization `u / T`.
pub fn utilization(used: usize, total: usize) -> f64 {
    used as f64 / total as f64
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentRecord<T> {
    pub summary: SweepSummary,
    pub metric_time: Duration,
    pub best_model: ModelState<T>,
}

/// Runs the 20-point sweep of `kind` with inputs ordered by `scores`.
pub fn run_experiment<T: Scalar>(
    kind: RetrainKind,
    original: &ModelState<T>,
    sets: &AugmentedSets<T>,
    scores: &[GuidanceScore],
    metric_time: Duration,
    hp: &RetrainParams,
) -> Result<ExperimentRecord<T>> {
    let metric = scores
        .first()
        .map(|s| s.metric)
        .ok_or_else(|| Error::InvalidArgument("no guidance scores".into()))?;
    if scores.iter().any(|s| s.metric != metric) {
        return Err(Error::InvalidArgument("scores mix several metrics".into()));
    }
    if scores.len() != sets.train_star.len() {
        return Err(Error::InvalidArgument(format!(
            "{} scores for {} Train* inputs",
            scores.len(),
            sets.train_star.len()
        )));
    }
    let order = order_inputs(scores)?;
    let pool = pool_order(kind, sets, &order);
    let sizes = sweep_sizes(pool.len())?;
    let runs: Vec<RetrainRun<T>> = sizes
        .par_iter()
        .map(|&size| retrain_point(kind, original, sets, &pool, size, hp))
        .collect::<Result<_>>()?;

    let points = runs
        .iter()
        .enumerate()
        .map(|(i, r)| PointSummary {
            point: i + 1,
            size: r.size,
            acc_test_star: r.acc_test_star,
            acc_test: r.acc_test,
            acc_adv_test: r.acc_adv_test,
            initial_digest: r.initial_digest,
            wall_time: r.wall_time,
        })
        .collect();
    let summary = SweepSummary::from_points(kind, metric, pool.len(), points)?;
    let best_model = runs
        .into_iter()
        .find(|r| r.size == summary.best_size)
        .expect("best point is one of the runs")
        .model;
    Ok(ExperimentRecord {
        summary,
        metric_time,
        best_model,
    })
}

/// C2 at the C3 budget against C3's best, for one metric.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BudgetComparison {
    pub metric: Metric,
    /// C3 pool size.
    pub budget: usize,
    /// C2 point used; equals `budget` unless `substituted`.
    pub c2_size: usize,
    pub c2_accuracy: f64,
    pub c3_best_size: usize,
    pub c3_best_accuracy: f64,
    /// No C2 point has size `budget`; the nearest smaller one (or the
    /// smallest, when none is smaller) was used.
    pub substituted: bool,
}

pub fn compare_records(records: &[SweepSummary]) -> Vec<BudgetComparison> {
    let mut rows = Vec::new();
    for metric in Metric::ALL {
        let find = |k| records.iter().find(|r| r.kind == k && r.metric == metric);
        let (Some(c2), Some(c3)) = (find(RetrainKind::C2), find(RetrainKind::C3)) else {
            continue;
        };
        let budget = c3.total;
        let point = c2
            .points
            .iter()
            .rev()
            .find(|p| p.size <= budget)
            .unwrap_or(&c2.points[0]);
        rows.push(BudgetComparison {
            metric,
            budget,
            c2_size: point.size,
            c2_accuracy: point.acc_test_star,
            c3_best_size: c3.best_size,
            c3_best_accuracy: c3.best_accuracy,
            substituted: point.size != budget,
        });
    }
    rows
}
