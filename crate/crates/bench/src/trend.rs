//! Cross-seed comparison of how quickly each metric's curve levels off.

use std::collections::BTreeMap;

use gr_core::guidance::Metric;
use gr_core::retrainer::{PointSummary, RetrainKind, SweepSummary};

use crate::error::{BenchError, Result};
use crate::report::RunResults;

/// Fraction of the final accuracy a curve has to reach.
pub const LEVEL: f64 = 0.95;

/// Smallest size whose Test* accuracy reaches `level` times the accuracy at
/// the largest size.
pub fn size_to_reach(points: &[PointSummary], level: f64) -> Option<usize> {
    let last = points.iter().max_by_key(|p| p.size)?;
    let target = level * last.acc_test_star;
    points
        .iter()
        .filter(|p| p.acc_test_star >= target)
        .map(|p| p.size)
        .min()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendRow {
    pub run: String,
    pub metric: Metric,
    pub final_accuracy: f64,
    pub size: usize,
    pub total: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReport {
    pub kind: RetrainKind,
    pub rows: Vec<TrendRow>,
    /// Mean size per metric over runs.
    pub means: BTreeMap<Metric, f64>,
    /// LSA or DSA, whichever has the smaller mean.
    pub best_sa: Metric,
    /// Whether the best surprise metric's mean is at most Random's.
    pub holds: bool,
}

/// Compares the `kind` sweeps of several runs, labelled by the first tuple field.
pub fn trend(runs: &[(String, RunResults)], kind: RetrainKind) -> Result<TrendReport> {
    let mut rows = Vec::new();
    for (label, run) in runs {
        for s in run.sweeps.iter().filter(|s| s.kind == kind) {
            rows.push(row(label, s)?);
        }
    }
    let mut sums: BTreeMap<Metric, (f64, usize)> = BTreeMap::new();
    for r in &rows {
        let e = sums.entry(r.metric).or_default();
        e.0 += r.size as f64;
        e.1 += 1;
    }
    let means: BTreeMap<Metric, f64> = sums.into_iter().map(|(m, (s, n))| (m, s / n as f64)).collect();
    let random = *means
        .get(&Metric::Random)
        .ok_or_else(|| BenchError::Report(format!("no RANDOM sweeps under {kind}")))?;
    let (best_sa, best) = [Metric::Lsa, Metric::Dsa]
        .into_iter()
        .filter_map(|m| means.get(&m).map(|&v| (m, v)))
        .min_by(|a, b| a.1.total_cmp(&b.1))
        .ok_or_else(|| BenchError::Report(format!("no LSA or DSA sweeps under {kind}")))?;
    Ok(TrendReport {
        kind,
        rows,
        holds: best <= random,
        means,
        best_sa,
    })
}

fn row(label: &str, s: &SweepSummary) -> Result<TrendRow> {
    let last = s
        .points
        .iter()
        .max_by_key(|p| p.size)
        .ok_or_else(|| BenchError::Report("empty sweep".into()))?;
    Ok(TrendRow {
        run: label.to_string(),
        metric: s.metric,
        final_accuracy: last.acc_test_star,
        size: size_to_reach(&s.points, LEVEL).expect("the last point qualifies"),
        total: s.total,
    })
}

/// Per-run rows followed by one `mean` row per metric and a verdict line.
pub fn trend_csv(report: &TrendReport) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["run", "config", "metric", "final_accuracy", "size_at_95", "total"])?;
    for r in &report.rows {
        w.write_record([
            r.run.clone(),
            report.kind.to_string(),
            r.metric.to_string(),
            format!("{:.6}", r.final_accuracy),
            r.size.to_string(),
            r.total.to_string(),
        ])?;
    }
    for (m, mean) in &report.means {
        w.write_record([
            "mean".to_string(),
            report.kind.to_string(),
            m.to_string(),
            String::new(),
            format!("{mean:.1}"),
            String::new(),
        ])?;
    }
    w.write_record([
        "verdict".to_string(),
        report.kind.to_string(),
        report.best_sa.to_string(),
        String::new(),
        if report.holds { "sa<=random" } else { "sa>random" }.to_string(),
        String::new(),
    ])?;
    let bytes = w.into_inner().map_err(|e| BenchError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Report(e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::time::Duration;

    fn sweep(metric: Metric, accs: &[f64]) -> SweepSummary {
        let pts = accs
            .iter()
            .enumerate()
            .map(|(i, &a)| PointSummary {
                point: i + 1,
                size: (i + 1) * 10,
                acc_test_star: a,
                acc_test: a,
                acc_adv_test: a,
                initial_digest: 0,
                wall_time: Duration::ZERO,
            })
            .collect();
        SweepSummary::from_points(RetrainKind::C2, metric, accs.len() * 10, pts).unwrap()
    }

    #[test]
    fn reach_size() {
        let s = sweep(Metric::Dsa, &[0.5, 0.95, 0.7, 1.0]);
        assert_eq!(size_to_reach(&s.points, 0.95), Some(20));
        assert_eq!(size_to_reach(&s.points, 1.0), Some(40));
    }

    #[test]
    fn verdict() {
        let run = RunResults {
            dataset: "toy".into(),
            original_accuracy: 0.5,
            sweeps: vec![
                sweep(Metric::Dsa, &[0.9, 1.0, 1.0]),
                sweep(Metric::Lsa, &[0.1, 0.2, 1.0]),
                sweep(Metric::Random, &[0.5, 0.97, 1.0]),
            ],
        };
        let t = trend(&[("a".into(), run)], RetrainKind::C2).unwrap();
        assert_eq!(t.best_sa, Metric::Dsa);
        assert_eq!(t.means[&Metric::Random], 20.0);
        assert!(t.holds);
        let csv = trend_csv(&t).unwrap();
        assert!(csv.ends_with("verdict,C2,DSA,,sa<=random,\n"), "{csv}");
    }
}
