//! Guidance metrics that rank candidate retraining inputs.

mod dsa;
mod lsa;
mod nc;

use std::collections::HashSet;
use std::fmt;
use std::io::Write;
use std::str::FromStr;
use std::time::{Duration, Instant};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_pcg::Pcg32;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::model::ModelState;
use crate::scalar::Scalar;

pub use dsa::{dsa_score, dsa_scores, fit_dsa, squared_distance, DsaIndex, DsaValue, DSA_SENTINEL};
pub use lsa::{default_lsa_layer, fit_lsa, lsa_score, lsa_scores, GaussianKde, LsaEstimator, DEFAULT_VARIANCE_THRESHOLD};
pub use nc::{activated_in_layer, coverage, nc_score, nc_scores, NcConfig};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Metric {
    Nc,
    Lsa,
    Dsa,
    Random,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Nc, Metric::Lsa, Metric::Dsa, Metric::Random];

    pub fn as_str(&self) -> &'static str {
        match self {
            Metric::Nc => "NC",
            Metric::Lsa => "LSA",
            Metric::Dsa => "DSA",
            Metric::Random => "RANDOM",
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for Metric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Metric::ALL
            .into_iter()
            .find(|m| m.as_str().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidArgument(format!("unknown metric `{s}`")))
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GuidanceScore {
    pub input_id: usize,
    pub metric: Metric,
    pub value: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GuidanceConfig {
    pub nc: NcConfig,
    /// Defaults to the last hidden dense layer.
    pub lsa_layer: Option<String>,
    pub lsa_variance_threshold: f64,
    /// Defaults to every conv and dense layer.
    pub dsa_layers: Option<Vec<String>>,
    pub random_seed: u64,
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        Self {
            nc: NcConfig::default(),
            lsa_layer: None,
            lsa_variance_threshold: DEFAULT_VARIANCE_THRESHOLD,
            dsa_layers: None,
            random_seed: 0,
        }
    }
}

/// Random scores: a `PCG32(seed)` permutation of `0..n`, so every input gets
/// a distinct rank.
pub fn random_scores(n: usize, seed: u64) -> Vec<GuidanceScore> {
    let mut ranks: Vec<usize> = (0..n).collect();
    ranks.shuffle(&mut Pcg32::seed_from_u64(seed));
    ranks
        .into_iter()
        .enumerate()
        .map(|(input_id, r)| GuidanceScore {
            input_id,
            metric: Metric::Random,
            value: r as f64,
        })
        .collect()
}

/// Input ids by descending score, ties broken by ascending id.
pub fn order_inputs(scores: &[GuidanceScore]) -> Result<Vec<usize>> {
    let mut seen = HashSet::with_capacity(scores.len());
    for s in scores {
        if !seen.insert(s.input_id) {
            return Err(Error::DuplicateScore(s.input_id));
        }
        if s.value.is_nan() {
            return Err(Error::NonFinite(format!("score of input {}", s.input_id)));
        }
    }
    let mut sorted: Vec<&GuidanceScore> = scores.iter().collect();
    sorted.sort_by(|a, b| b.value.total_cmp(&a.value).then(a.input_id.cmp(&b.input_id)));
    Ok(sorted.into_iter().map(|s| s.input_id).collect())
}

fn tag(metric: Metric, values: Vec<f64>) -> Vec<GuidanceScore> {
    values
        .into_iter()
        .enumerate()
        .map(|(input_id, value)| GuidanceScore {
            input_id,
            metric,
            value,
        })
        .collect()
}

/// Scores every input of `data` under `metric`. LSA and DSA are fitted on
/// `data` itself.
pub fn score_inputs<T: Scalar>(
    metric: Metric,
    model: &ModelState<T>,
    data: &Dataset<T>,
    cfg: &GuidanceConfig,
) -> Result<Vec<GuidanceScore>> {
    let values = match metric {
        Metric::Random => return Ok(random_scores(data.len(), cfg.random_seed)),
        Metric::Nc => nc_scores(model, data.images(), &cfg.nc)?,
        Metric::Lsa => {
            let layer = match &cfg.lsa_layer {
                Some(l) => l.clone(),
                None => default_lsa_layer(model)
                    .ok_or_else(|| Error::InvalidArchitecture("no hidden dense layer for LSA".into()))?,
            };
            let est = fit_lsa(model, data, &layer, cfg.lsa_variance_threshold)?;
            lsa_scores(&est, model, data.images())?
        }
        Metric::Dsa => {
            let layers: Vec<&str> = match &cfg.dsa_layers {
                Some(ls) => ls.iter().map(String::as_str).collect(),
                None => model.neuron_layers(),
            };
            let index = fit_dsa(model, data, &layers)?;
            dsa_scores(&index, model, data.images())?
                .into_iter()
                .map(|v| v.value)
                .collect()
        }
    };
    Ok(tag(metric, values))
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimedScores {
    pub scores: Vec<GuidanceScore>,
    /// Fitting plus scoring.
    pub elapsed: Duration,
}

pub fn timed_scoring<T: Scalar>(
    metric: Metric,
    model: &ModelState<T>,
    data: &Dataset<T>,
    cfg: &GuidanceConfig,
) -> Result<TimedScores> {
    let start = Instant::now();
    let scores = score_inputs(metric, model, data, cfg)?;
    Ok(TimedScores {
        scores,
        elapsed: start.elapsed(),
    })
}

/// `hh:mm:ss`, whole seconds truncated; hours widen past 99.
pub fn format_hms(d: Duration) -> String {
    let s = d.as_secs();
    format!("{:02}:{:02}:{:02}", s / 3600, (s / 60) % 60, s % 60)
}

/// Shortest rendering with `digits` significant digits, in the style of `%g`.
pub fn format_significant(v: f64, digits: usize) -> String {
    if v == 0.0 || !v.is_finite() {
        return format!("{v}");
    }
    let sci = format!("{:.*e}", digits - 1, v);
    let (mantissa, exp) = sci.split_once('e').expect("exponent");
    let exp: i32 = exp.parse().expect("integer exponent");
    if exp < -5 || exp >= digits as i32 {
        format!("{}e{exp}", trim_zeros(mantissa))
    } else {
        let decimals = (digits as i32 - 1 - exp).max(0) as usize;
        trim_zeros(&format!("{v:.decimals$}")).to_string()
    }
}

fn trim_zeros(s: &str) -> &str {
    if s.contains('.') {
        s.trim_end_matches('0').trim_end_matches('.')
    } else {
        s
    }
}

/// `input_id,metric,value` rows with 9 significant digits.
pub fn write_scores_csv(scores: &[GuidanceScore], mut out: impl Write) -> Result<()> {
    writeln!(out, "input_id,metric,value")?;
    for s in scores {
        writeln!(out, "{},{},{}", s.input_id, s.metric, format_significant(s.value, 9))?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn score(id: usize, value: f64) -> GuidanceScore {
        GuidanceScore {
            input_id: id,
            metric: Metric::Nc,
            value,
        }
    }

    #[test]
    fn ordering() {
        let s = [score(3, 0.5), score(1, 0.9), score(0, 0.5), score(2, -1.0)];
        assert_eq!(order_inputs(&s).unwrap(), vec![1, 0, 3, 2]);
        let dup = [score(1, 0.5), score(1, 0.2)];
        assert!(matches!(order_inputs(&dup), Err(Error::DuplicateScore(1))));
    }

    #[test]
    fn random_is_a_permutation() {
        let s = random_scores(50, 7);
        let mut values: Vec<usize> = s.iter().map(|g| g.value as usize).collect();
        values.sort_unstable();
        assert_eq!(values, (0..50).collect::<Vec<_>>());
        assert_eq!(s, random_scores(50, 7));
        assert_ne!(s, random_scores(50, 8));
    }

    #[test]
    fn hms() {
        assert_eq!(format_hms(Duration::from_millis(3_725_900)), "01:02:05");
        assert_eq!(format_hms(Duration::from_secs(0)), "00:00:00");
        assert_eq!(format_hms(Duration::from_secs(100 * 3600)), "100:00:00");
    }

    #[test]
    fn significant_digits() {
        assert_eq!(format_significant(0.123456789123, 9), "0.123456789");
        assert_eq!(format_significant(1234.5, 9), "1234.5");
        assert_eq!(format_significant(1e12, 9), "1e12");
        assert_eq!(format_significant(2.5e-7, 9), "2.5e-7");
        assert_eq!(format_significant(-3.0, 9), "-3");
        assert_eq!(format_significant(0.0, 9), "0");
    }

    #[test]
    fn metric_names() {
        assert_eq!("dsa".parse::<Metric>().unwrap(), Metric::Dsa);
        assert_eq!(Metric::Random.to_string(), "RANDOM");
        assert!("kmnc".parse::<Metric>().is_err());
    }
}
