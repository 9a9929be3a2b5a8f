//! CSV report tables and plot data.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;
use std::time::Duration;

use sha2::{Digest, Sha256};

use gr_core::guidance::{format_hms, Metric};
use gr_core::retrainer::{compare_records, BudgetComparison, PointSummary, RetrainKind, SweepSummary};

use crate::error::{BenchError, Result};

pub const POINTS_FILE: &str = "points.csv";
pub const SUMMARY_FILE: &str = "summary.csv";
pub const COMPARISON_FILE: &str = "comparison.csv";
pub const TIMING_FILE: &str = "timing.csv";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Every sweep of one run plus what the tables need besides the points.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResults {
    pub dataset: String,
    /// Accuracy of the original model on Test*.
    pub original_accuracy: f64,
    pub sweeps: Vec<SweepSummary>,
}

fn acc(v: f64) -> String {
    format!("{v:.6}")
}

fn render(header: &[&str], rows: impl IntoIterator<Item = Vec<String>>) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(header)?;
    for r in rows {
        w.write_record(&r)?;
    }
    let bytes = w.into_inner().map_err(|e| BenchError::Report(e.to_string()))?;
    String::from_utf8(bytes).map_err(|e| BenchError::Report(e.to_string()))
}

const POINTS_HEADER: &[&str] = &[
    "dataset",
    "config",
    "metric",
    "point",
    "input_size",
    "total",
    "accuracy_test_star",
    "accuracy_test",
    "accuracy_adv_test",
    "original_accuracy",
    "initial_digest",
];

pub fn points_csv(run: &RunResults) -> Result<String> {
    let rows = run.sweeps.iter().flat_map(|s| {
        s.points.iter().map(move |p| {
            vec![
                run.dataset.clone(),
                s.kind.to_string(),
                s.metric.to_string(),
                p.point.to_string(),
                p.size.to_string(),
                s.total.to_string(),
                acc(p.acc_test_star),
                acc(p.acc_test),
                acc(p.acc_adv_test),
                acc(run.original_accuracy),
                format!("{:016x}", p.initial_digest),
            ]
        })
    });
    render(POINTS_HEADER, rows)
}

fn field<T: std::str::FromStr>(rec: &csv::StringRecord, i: usize, row: usize) -> Result<T> {
    rec.get(i)
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| BenchError::Report(format!("row {row}: bad `{}`", POINTS_HEADER[i])))
}

/// Rebuilds the sweeps from a per-point CSV.
pub fn parse_points(text: &str) -> Result<RunResults> {
    let mut r = csv::Reader::from_reader(text.as_bytes());
    if r.headers()?.iter().ne(POINTS_HEADER.iter().copied()) {
        return Err(BenchError::Report("unexpected per-point header".into()));
    }
    let mut dataset = None;
    let mut original = None;
    let mut groups: BTreeMap<(RetrainKind, Metric), (usize, Vec<PointSummary>)> = BTreeMap::new();
    for (i, rec) in r.records().enumerate() {
        let rec = rec?;
        let row = i + 2;
        dataset.get_or_insert_with(|| rec[0].to_string());
        original.get_or_insert(field::<f64>(&rec, 9, row)?);
        let kind: RetrainKind = field(&rec, 1, row)?;
        let metric: Metric = field(&rec, 2, row)?;
        let total: usize = field(&rec, 5, row)?;
        let digest = u64::from_str_radix(&rec[10], 16)
            .map_err(|_| BenchError::Report(format!("row {row}: bad digest")))?;
        let entry = groups.entry((kind, metric)).or_insert((total, Vec::new()));
        entry.1.push(PointSummary {
            point: field(&rec, 3, row)?,
            size: field(&rec, 4, row)?,
            acc_test_star: field(&rec, 6, row)?,
            acc_test: field(&rec, 7, row)?,
            acc_adv_test: field(&rec, 8, row)?,
            initial_digest: digest,
            wall_time: Duration::ZERO,
        });
    }
    let sweeps = groups
        .into_iter()
        .map(|((kind, metric), (total, points))| Ok(SweepSummary::from_points(kind, metric, total, points)?))
        .collect::<Result<Vec<_>>>()?;
    Ok(RunResults {
        dataset: dataset.ok_or_else(|| BenchError::Report("no points".into()))?,
        original_accuracy: original.unwrap_or(0.0),
        sweeps,
    })
}

/// Best accuracy, input size used and utilization per (config, metric).
pub fn summary_csv(run: &RunResults) -> Result<String> {
    let rows = run.sweeps.iter().map(|s| {
        vec![
            run.dataset.clone(),
            s.kind.to_string(),
            s.metric.to_string(),
            format!("{:.4}", run.original_accuracy),
            format!("{:.4}", s.best_accuracy),
            s.utilization_fraction(),
            format!("{:.4}", s.utilization()),
            s.best_size.to_string(),
            s.total.to_string(),
        ]
    });
    render(
        &[
            "dataset",
            "config",
            "metric",
            "original_accuracy",
            "best_accuracy",
            "inputs_used",
            "utilization",
            "best_size",
            "total",
        ],
        rows,
    )
}

/// C2 at the C3 budget against C3's best.
pub fn comparison_csv(dataset: &str, rows: &[BudgetComparison]) -> Result<String> {
    let rows = rows.iter().map(|c| {
        vec![
            dataset.to_string(),
            c.metric.to_string(),
            c.budget.to_string(),
            c.c2_size.to_string(),
            format!("{:.4}", c.c2_accuracy),
            c.c3_best_size.to_string(),
            format!("{:.4}", c.c3_best_accuracy),
            format!("{:.4}", c.c3_best_accuracy - c.c2_accuracy),
            c.substituted.to_string(),
        ]
    });
    render(
        &[
            "dataset",
            "metric",
            "budget",
            "c2_size",
            "c2_accuracy",
            "c3_best_size",
            "c3_best_accuracy",
            "difference",
            "substituted",
        ],
        rows,
    )
}

/// Metric computation time as `hh:mm:ss` and in seconds.
pub fn timing_csv(dataset: &str, times: &[(Metric, Duration)]) -> Result<String> {
    let rows = times.iter().map(|(m, d)| {
        vec![
            dataset.to_string(),
            m.to_string(),
            format_hms(*d),
            format!("{:.6}", d.as_secs_f64()),
        ]
    });
    render(&["dataset", "metric", "time_hms", "seconds"], rows)
}

pub fn plot_file_name(kind: RetrainKind, dataset: &str) -> String {
    format!("plot_{kind}_{dataset}.csv")
}

/// One accuracy curve file per configuration, rows sorted by (metric, size).
pub fn plot_csvs(run: &RunResults) -> Result<Vec<(String, String)>> {
    let mut by_kind: BTreeMap<RetrainKind, Vec<(String, usize, f64)>> = BTreeMap::new();
    for s in &run.sweeps {
        let rows = by_kind.entry(s.kind).or_default();
        rows.extend(s.points.iter().map(|p| (s.metric.to_string(), p.size, p.acc_test_star)));
    }
    by_kind
        .into_iter()
        .map(|(kind, mut rows)| {
            rows.sort_by(|a, b| a.0.cmp(&b.0).then(a.1.cmp(&b.1)));
            let body = render(
                &["metric", "input_size", "accuracy_test_star"],
                rows.into_iter().map(|(m, s, a)| vec![m, s.to_string(), acc(a)]),
            )?;
            Ok((plot_file_name(kind, &run.dataset), body))
        })
        .collect()
}

/// Every table derived from the per-point results, keyed by file name.
pub fn derived_tables(run: &RunResults) -> Result<Vec<(String, String)>> {
    let mut files = vec![
        (POINTS_FILE.to_string(), points_csv(run)?),
        (SUMMARY_FILE.to_string(), summary_csv(run)?),
        (
            COMPARISON_FILE.to_string(),
            comparison_csv(&run.dataset, &compare_records(&run.sweeps))?,
        ),
    ];
    files.extend(plot_csvs(run)?);
    Ok(files)
}

/// Re-derives the tables from the per-point CSV in `dir` and checks that
/// the files on disk agree.
pub fn consistency_check(dir: &Path) -> Result<RunResults> {
    let run = parse_points(&fs::read_to_string(dir.join(POINTS_FILE))?)?;
    for (name, expected) in derived_tables(&run)? {
        let found = fs::read_to_string(dir.join(&name))?;
        if found != expected {
            return Err(BenchError::Report(format!(
                "{name} disagrees with {POINTS_FILE}"
            )));
        }
    }
    Ok(run)
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    fn point(point: usize, size: usize, a: f64) -> PointSummary {
        PointSummary {
            point,
            size,
            acc_test_star: a,
            acc_test: a,
            acc_adv_test: a / 2.0,
            initial_digest: 0xabc,
            wall_time: Duration::ZERO,
        }
    }

    fn run() -> RunResults {
        let sweep = |kind, total: usize| {
            let pts = (1..=20).map(|i| point(i, i * total / 20, 0.5 + (i % 7) as f64 / 100.0)).collect();
            SweepSummary::from_points(kind, Metric::Dsa, total, pts).unwrap()
        };
        RunResults {
            dataset: "toy".into(),
            original_accuracy: 0.75,
            sweeps: vec![sweep(RetrainKind::C2, 400), sweep(RetrainKind::C3, 100)],
        }
    }

    #[test]
    fn points_round_trip() {
        let r = run();
        let back = parse_points(&points_csv(&r).unwrap()).unwrap();
        assert_eq!(back, r);
    }

    #[test]
    fn summary_renders_fraction_and_ratio() {
        let mut r = run();
        r.sweeps[0].best_size = 14400;
        r.sweeps[0].total = 36366;
        let csv = summary_csv(&r).unwrap();
        assert!(csv.contains(",14400/36366,0.3960,"), "{csv}");
    }

    #[test]
    fn plot_rows_sorted() {
        let plots = plot_csvs(&run()).unwrap();
        assert_eq!(plots[0].0, "plot_C2_toy.csv");
        assert_eq!(plots[0].1.lines().count(), 21);
    }

    #[test]
    fn hms_column() {
        let csv = timing_csv("toy", &[(Metric::Lsa, Duration::from_secs(95))]).unwrap();
        assert_eq!(csv.lines().nth(1).unwrap(), "toy,LSA,00:01:35,95.000000");
    }
}
