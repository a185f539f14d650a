//! Evaluation metrics, length alignment, label-space collapse and filtered
//! per-scope aggregation.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{Answer, TaskType};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MetricError {
    #[error("length mismatch: {pred} predictions vs {truth} targets")]
    LengthMismatch { pred: usize, truth: usize },
    #[error("metrics need at least one point")]
    Empty,
    #[error("MAPE is undefined when a target value is zero")]
    UndefinedMape,
    #[error("label {0:?} is not part of a known 5-way label space")]
    UnknownLabel(String),
    #[error("prediction and target have different answer shapes")]
    ShapeMismatch,
}

/// Loss used to rank candidates for a task family.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SupervisionMetric {
    Mae,
    Mse,
    Accuracy,
}

impl SupervisionMetric {
    /// First metric listed for the family in the scoring mapping: finance
    /// forecasting is MAE/MAPE, weather forecasting MSE/MAE, indicator and
    /// MACD tasks MSE.
    pub fn for_task(domain: &str, task: TaskType) -> Self {
        match task {
            TaskType::Forecast if domain == "weather" => SupervisionMetric::Mse,
            TaskType::Forecast => SupervisionMetric::Mae,
            TaskType::Indicator => SupervisionMetric::Mse,
            _ => SupervisionMetric::Accuracy,
        }
    }

    pub fn key(self) -> &'static str {
        match self {
            SupervisionMetric::Mae => "mae",
            SupervisionMetric::Mse => "mse",
            SupervisionMetric::Accuracy => "accuracy",
        }
    }
}

fn check(pred: &[f64], truth: &[f64]) -> Result<(), MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch { pred: pred.len(), truth: truth.len() });
    }
    if pred.is_empty() {
        return Err(MetricError::Empty);
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn mse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    mse(pred, truth).map(f64::sqrt)
}

/// Mean absolute percentage error, in percent.
pub fn mape(pred: &[f64], truth: &[f64]) -> Result<f64, MetricError> {
    check(pred, truth)?;
    if truth.contains(&0.0) {
        return Err(MetricError::UndefinedMape);
    }
    let sum: f64 = pred.iter().zip(truth).map(|(p, t)| ((p - t) / t).abs()).sum();
    Ok(100.0 * sum / pred.len() as f64)
}

/// Piecewise-linear resample of `pred` onto `target_len` points of the
/// normalized grid `[0, 1]`. Endpoints are preserved; equal lengths are an
/// identity.
pub fn align_length(pred: &[f64], target_len: usize) -> Result<Vec<f64>, MetricError> {
    if pred.is_empty() || target_len == 0 {
        return Err(MetricError::Empty);
    }
    if pred.len() == target_len {
        return Ok(pred.to_vec());
    }
    if pred.len() == 1 {
        return Ok(vec![pred[0]; target_len]);
    }
    if target_len == 1 {
        return Ok(vec![pred[0]]);
    }
    let last = pred.len() - 1;
    let out = (0..target_len)
        .map(|j| {
            if j == target_len - 1 {
                return pred[last];
            }
            let pos = j as f64 * last as f64 / (target_len - 1) as f64;
            let lo = pos.floor() as usize;
            let frac = pos - lo as f64;
            if frac == 0.0 || lo >= last {
                pred[lo.min(last)]
            } else {
                pred[lo] + (pred[lo + 1] - pred[lo]) * frac
            }
        })
        .collect();
    Ok(out)
}

/// Coarse three-way direction.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThreeWay {
    Down,
    Neutral,
    Up,
}

impl ThreeWay {
    pub fn as_str(self) -> &'static str {
        match self {
            ThreeWay::Down => "down",
            ThreeWay::Neutral => "neutral",
            ThreeWay::Up => "up",
        }
    }
}

/// Known five-way label spaces, each ordered from the most negative bucket
/// to the most positive one.
pub const FIVE_WAY_SPACES: [[&str; 5]; 3] = [
    ["< -4%", "-4% ~ -2%", "-2% ~ +2%", "+2% ~ +4%", "> +4%"],
    ["strongly down", "mildly down", "neutral", "mildly up", "strongly up"],
    [
        "strongly negative",
        "moderately negative",
        "neutral",
        "moderately positive",
        "strongly positive",
    ],
];

fn normalize_label(label: &str) -> String {
    label.split_whitespace().collect::<Vec<_>>().join(" ").to_lowercase()
}

fn five_way_position(label: &str) -> Option<usize> {
    let norm = normalize_label(label);
    FIVE_WAY_SPACES
        .iter()
        .find_map(|space| space.iter().position(|l| normalize_label(l) == norm))
}

/// Symmetric collapse: the two lower buckets are down, the center bucket is
/// neutral, the two upper buckets are up.
pub fn map_5way_to_3way(label: &str) -> Result<ThreeWay, MetricError> {
    match five_way_position(label) {
        Some(0 | 1) => Ok(ThreeWay::Down),
        Some(2) => Ok(ThreeWay::Neutral),
        Some(3 | 4) => Ok(ThreeWay::Up),
        _ => Err(MetricError::UnknownLabel(label.to_string())),
    }
}

/// True when every label of the space belongs to one known 5-way space.
pub fn is_five_way(space: &[String]) -> bool {
    space.len() == 5
        && FIVE_WAY_SPACES.iter().any(|known| {
            space.iter().all(|l| known.iter().any(|k| normalize_label(k) == normalize_label(l)))
        })
}

/// Per-row metric values. Numeric fields are present for numeric tasks,
/// `correct` for label tasks.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct MetricReport {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mape: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub rmse: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mse: Option<f64>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub mape_undefined: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correct_3way: Option<bool>,
    pub n_points: usize,
}

impl MetricReport {
    pub fn numeric(pred: &[f64], truth: &[f64]) -> Result<Self, MetricError> {
        let mape = match mape(pred, truth) {
            Ok(v) => Some(v),
            Err(MetricError::UndefinedMape) => None,
            Err(e) => return Err(e),
        };
        let mse = mse(pred, truth)?;
        Ok(Self {
            mae: Some(mae(pred, truth)?),
            mape,
            rmse: Some(mse.sqrt()),
            mse: Some(mse),
            mape_undefined: mape.is_none(),
            correct: None,
            correct_3way: None,
            n_points: pred.len(),
        })
    }

    pub fn label(pred: &str, truth: &str) -> Self {
        let correct_3way = match (map_5way_to_3way(pred), map_5way_to_3way(truth)) {
            (Ok(a), Ok(b)) => Some(a == b),
            (Err(_), Ok(_)) => Some(false),
            _ => None,
        };
        Self {
            correct: Some(pred.trim() == truth.trim()),
            correct_3way,
            n_points: 1,
            ..Self::default()
        }
    }

    /// Score an answer against a target, aligning forecast lengths first.
    pub fn evaluate(pred: &Answer, truth: &Answer) -> Result<Self, MetricError> {
        match (pred, truth) {
            (Answer::Numeric(p), Answer::Numeric(t)) => {
                let aligned = align_length(p, t.len())?;
                Self::numeric(&aligned, t)
            }
            (Answer::Label(p), Answer::Label(t)) => Ok(Self::label(p, t)),
            (Answer::Fields(p), Answer::Fields(t)) => {
                let mut pv = Vec::with_capacity(t.len());
                let mut tv = Vec::with_capacity(t.len());
                for (k, tval) in t {
                    pv.push(*p.get(k).ok_or(MetricError::ShapeMismatch)?);
                    tv.push(*tval);
                }
                Self::numeric(&pv, &tv)
            }
            _ => Err(MetricError::ShapeMismatch),
        }
    }

    pub fn value(&self, metric: SupervisionMetric) -> Option<f64> {
        match metric {
            SupervisionMetric::Mae => self.mae,
            SupervisionMetric::Mse => self.mse,
            SupervisionMetric::Accuracy => self.correct.map(|c| if c { 1.0 } else { 0.0 }),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "status")]
pub enum ScoredRow {
    Scored { id: String, report: MetricReport },
    Unscorable { id: String, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum UnscorableHandling {
    #[default]
    Exclude,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SummaryPolicy {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threshold: Option<f64>,
    pub metric: SupervisionMetric,
    #[serde(default)]
    pub unscorable: UnscorableHandling,
}

impl SummaryPolicy {
    pub fn new(metric: SupervisionMetric) -> Self {
        Self { threshold: None, metric, unscorable: UnscorableHandling::Exclude }
    }

    pub fn with_threshold(mut self, threshold: f64) -> Self {
        self.threshold = Some(threshold);
        self
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExcludedRow {
    pub id: String,
    pub reason: String,
}

/// Per-scope aggregate, the scorer's output record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScopeSummary {
    pub scope: String,
    pub metrics: BTreeMap<String, f64>,
    pub effective_n: usize,
    pub raw_n: usize,
    pub excluded: Vec<ExcludedRow>,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub empty: bool,
}

/// Filtered means over one scope's rows. Unscorable rows and rows whose
/// supervision metric exceeds the threshold stay in `raw_n` but not in
/// the means.
pub fn summarize(scope: &str, rows: &[ScoredRow], policy: &SummaryPolicy) -> ScopeSummary {
    let mut excluded = Vec::new();
    let mut kept: Vec<&MetricReport> = Vec::new();
    for row in rows {
        match row {
            ScoredRow::Unscorable { id, reason } => {
                excluded.push(ExcludedRow { id: id.clone(), reason: format!("unscorable: {reason}") })
            }
            ScoredRow::Scored { id, report } => {
                let over = match (policy.threshold, report.value(policy.metric)) {
                    (Some(limit), Some(v)) if policy.metric != SupervisionMetric::Accuracy => v > limit,
                    _ => false,
                };
                if over {
                    excluded.push(ExcludedRow {
                        id: id.clone(),
                        reason: format!("{} above threshold", policy.metric.key()),
                    });
                } else {
                    kept.push(report);
                }
            }
        }
    }

    let mut sums: BTreeMap<String, (f64, usize)> = BTreeMap::new();
    let mut add = |key: &str, v: f64| {
        let e = sums.entry(key.to_string()).or_insert((0.0, 0));
        e.0 += v;
        e.1 += 1;
    };
    for r in &kept {
        for (key, v) in [("mae", r.mae), ("mse", r.mse), ("rmse", r.rmse), ("mape", r.mape)] {
            if let Some(v) = v {
                add(key, v);
            }
        }
        if let Some(c) = r.correct {
            let v = if c { 1.0 } else { 0.0 };
            if r.correct_3way.is_some() {
                add("acc_5", v);
            } else {
                add("accuracy", v);
            }
        }
        if let Some(c) = r.correct_3way {
            add("acc_3", if c { 1.0 } else { 0.0 });
        }
    }
    let metrics = sums.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect();
    ScopeSummary {
        scope: scope.to_string(),
        metrics,
        effective_n: kept.len(),
        raw_n: rows.len(),
        excluded,
        empty: kept.is_empty(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scored(id: &str, mae: f64) -> ScoredRow {
        ScoredRow::Scored {
            id: id.into(),
            report: MetricReport { mae: Some(mae), n_points: 1, ..Default::default() },
        }
    }

    #[test]
    fn pointwise_examples() {
        assert_eq!(mae(&[1.0, 2.0], &[1.0, 2.0]).unwrap(), 0.0);
        assert_eq!(mae(&[0.0, 2.0], &[1.0, 1.0]).unwrap(), 1.0);
        let m = mape(&[62.544], &[61.94]).unwrap();
        assert!((m - 0.604 / 61.94 * 100.0).abs() < 1e-12);
        assert!((m - 0.9752).abs() < 1e-4);
    }

    #[test]
    fn pointwise_errors() {
        assert_eq!(mae(&[1.0], &[1.0, 2.0]), Err(MetricError::LengthMismatch { pred: 1, truth: 2 }));
        assert_eq!(mse(&[], &[]), Err(MetricError::Empty));
        assert_eq!(mape(&[1.0], &[0.0]), Err(MetricError::UndefinedMape));
        let r = MetricReport::numeric(&[1.0], &[0.0]).unwrap();
        assert!(r.mape_undefined && r.mape.is_none());
    }

    #[test]
    fn alignment_examples() {
        assert_eq!(align_length(&[5.0, 7.0, 9.0], 3).unwrap(), vec![5.0, 7.0, 9.0]);
        assert_eq!(align_length(&[0.0, 2.0], 3).unwrap(), vec![0.0, 1.0, 2.0]);
        assert_eq!(align_length(&[1.0, 2.0, 3.0, 4.0], 2).unwrap(), vec![1.0, 4.0]);
        assert_eq!(align_length(&[], 2), Err(MetricError::Empty));
    }

    #[test]
    fn five_way_collapse() {
        assert_eq!(map_5way_to_3way("+2% ~ +4%").unwrap(), ThreeWay::Up);
        assert_eq!(map_5way_to_3way("-2% ~ +2%").unwrap(), ThreeWay::Neutral);
        assert_eq!(map_5way_to_3way("strongly down").unwrap(), ThreeWay::Down);
        assert_eq!(map_5way_to_3way("moderately negative").unwrap(), ThreeWay::Down);
        assert!(map_5way_to_3way("sideways").is_err());
        let space: Vec<String> = FIVE_WAY_SPACES[0].iter().map(|s| s.to_string()).collect();
        assert!(is_five_way(&space));
    }

    #[test]
    fn summary_examples() {
        let policy = SummaryPolicy::new(SupervisionMetric::Mae).with_threshold(100.0);
        let rows = vec![scored("a", 1.0), scored("b", 2.0), scored("c", 1e6)];
        let s = summarize("s", &rows, &policy);
        assert_eq!(s.metrics["mae"], 1.5);
        assert_eq!((s.effective_n, s.raw_n), (2, 3));

        let s = summarize("s", &[scored("a", 1.0)], &SummaryPolicy::new(SupervisionMetric::Mae));
        assert_eq!(s.metrics["mae"], 1.0);

        let s = summarize(
            "s",
            &[ScoredRow::Unscorable { id: "x".into(), reason: "missing".into() }],
            &SummaryPolicy::new(SupervisionMetric::Mae),
        );
        assert!(s.empty);
        assert_eq!(s.effective_n, 0);
        assert!(s.metrics.is_empty());
    }

    #[test]
    fn five_way_scope_reports_both_accuracies() {
        let rows = vec![
            ScoredRow::Scored { id: "a".into(), report: MetricReport::label("+2% ~ +4%", "> +4%") },
            ScoredRow::Scored { id: "b".into(), report: MetricReport::label("> +4%", "> +4%") },
        ];
        let s = summarize("finance_trend_short", &rows, &SummaryPolicy::new(SupervisionMetric::Accuracy));
        assert_eq!(s.metrics["acc_5"], 0.5);
        assert_eq!(s.metrics["acc_3"], 1.0);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn align_preserves_endpoints_and_monotonicity(
                mut v in prop::collection::vec(-1e3f64..1e3, 1..60),
                n in 1usize..120,
            ) {
                prop_assert_eq!(align_length(&v, v.len()).unwrap(), v.clone());
                let out = align_length(&v, n).unwrap();
                prop_assert_eq!(out.len(), n);
                prop_assert_eq!(out[0], v[0]);
                if n > 1 {
                    prop_assert_eq!(out[n - 1], *v.last().unwrap());
                }
                v.sort_by(f64::total_cmp);
                let out = align_length(&v, n).unwrap();
                prop_assert!(out.windows(2).all(|w| w[0] <= w[1]));
            }

            #[test]
            fn threshold_never_increases_effective_n(
                maes in prop::collection::vec(0.0f64..1e4, 1..40),
                limit in 0.0f64..1e4,
            ) {
                let rows: Vec<ScoredRow> = maes.iter().enumerate().map(|(i, m)| scored(&i.to_string(), *m)).collect();
                let plain = summarize("s", &rows, &SummaryPolicy::new(SupervisionMetric::Mae));
                let mean = maes.iter().sum::<f64>() / maes.len() as f64;
                prop_assert!((plain.metrics["mae"] - mean).abs() <= 1e-9 * mean.max(1.0));
                let filtered = summarize("s", &rows, &SummaryPolicy::new(SupervisionMetric::Mae).with_threshold(limit));
                prop_assert!(filtered.effective_n <= plain.effective_n);
            }

            #[test]
            fn equal_five_way_labels_stay_equal(i in 0usize..5, s in 0usize..3) {
                let a = FIVE_WAY_SPACES[s][i];
                prop_assert_eq!(map_5way_to_3way(a).unwrap(), map_5way_to_3way(&a.to_uppercase()).unwrap());
            }
        }
    }
}
