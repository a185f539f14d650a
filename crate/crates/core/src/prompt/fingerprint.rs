//! Compact numeric summary of a sample and applicability predicates over it.

use serde::{Deserialize, Serialize};

use crate::model::TaskInstance;
use crate::toolkit::{analysis, text};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SampleFingerprint {
    pub length: usize,
    pub first: f64,
    pub last: f64,
    pub min: f64,
    pub max: f64,
    pub mean: f64,
    pub std: f64,
    pub dominant_period: Option<usize>,
    pub period_strength: Option<f64>,
    pub period_significant: bool,
    pub trend_class: String,
    pub trend_score: f64,
    pub boundary_event: bool,
    pub has_text: bool,
    pub task_subtype: String,
}

impl SampleFingerprint {
    pub fn seasonal(&self) -> bool {
        self.period_significant
    }

    pub fn length_band(&self) -> &'static str {
        length_band(self.length)
    }
}

pub fn length_band(length: usize) -> &'static str {
    match length {
        0..=63 => "short",
        64..=255 => "medium",
        _ => "long",
    }
}

pub fn fingerprint(instance: &TaskInstance) -> SampleFingerprint {
    let s = &instance.series;
    let stats = analysis::basic_stats(s).expect("validated instances have a non-empty series");
    let period = analysis::dominant_period(s);
    let trend = analysis::detect_trend(s).ok();
    let boundary_event = match &instance.timestamps {
        Some(ts) if !instance.text.is_empty() => text::temporal_align(&instance.text, ts, 0, s.len())
            .iter()
            .any(|e| e.flags.get("boundary_aligned").copied().unwrap_or(false)),
        _ => false,
    };
    SampleFingerprint {
        length: s.len(),
        first: stats.first,
        last: stats.last,
        min: stats.min,
        max: stats.max,
        mean: stats.mean,
        std: stats.std,
        dominant_period: period.map(|p| p.period),
        period_strength: period.map(|p| p.strength),
        period_significant: period.is_some_and(|p| p.significant),
        trend_class: trend.as_ref().map(|t| t.label).unwrap_or("stable").to_string(),
        trend_score: trend.map(|t| t.score).unwrap_or(0.0),
        boundary_event,
        has_text: !instance.text.is_empty(),
        task_subtype: instance.task_type.as_str().to_string(),
    }
}

/// Conjunction of fingerprint field predicates; absent fields match
/// anything.
#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash, Default, Serialize, Deserialize)]
pub struct Applicability {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub task_subtype: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub seasonal: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub trend_class: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub boundary_event: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub length_band: Option<String>,
}

impl Applicability {
    /// The predicate distilled rules are keyed on: task subtype and
    /// seasonality, plus the boundary-event flag when text is present.
    pub fn derive(fp: &SampleFingerprint) -> Self {
        Self {
            task_subtype: Some(fp.task_subtype.clone()),
            seasonal: Some(fp.seasonal()),
            boundary_event: fp.has_text.then_some(fp.boundary_event),
            ..Self::default()
        }
    }

    pub fn is_empty(&self) -> bool {
        self == &Self::default()
    }

    /// `key=value` pairs in field order, for prompts and note text.
    pub fn describe(&self) -> String {
        let mut parts = Vec::new();
        if let Some(v) = &self.task_subtype {
            parts.push(format!("task_subtype={v}"));
        }
        if let Some(v) = self.seasonal {
            parts.push(format!("seasonal={v}"));
        }
        if let Some(v) = &self.trend_class {
            parts.push(format!("trend_class={v}"));
        }
        if let Some(v) = self.boundary_event {
            parts.push(format!("boundary_event={v}"));
        }
        if let Some(v) = &self.length_band {
            parts.push(format!("length_band={v}"));
        }
        if parts.is_empty() {
            "any".into()
        } else {
            parts.join(", ")
        }
    }
}

pub fn matches(chi: &Applicability, fp: &SampleFingerprint) -> bool {
    chi.task_subtype.as_ref().is_none_or(|v| v == &fp.task_subtype)
        && chi.seasonal.is_none_or(|v| v == fp.seasonal())
        && chi.trend_class.as_ref().is_none_or(|v| v == &fp.trend_class)
        && chi.boundary_event.is_none_or(|v| v == fp.boundary_event)
        && chi.length_band.as_deref().is_none_or(|v| v == fp.length_band())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{TaskType, TextBlock};

    fn inst(series: Vec<f64>) -> TaskInstance {
        TaskInstance::new("x", series, TaskType::Forecast, 4, "weather_forecast_long")
    }

    #[test]
    fn constant_series() {
        let fp = fingerprint(&inst(vec![5.0; 10]));
        assert_eq!(fp.std, 0.0);
        assert_eq!(fp.trend_class, "stable");
        assert_eq!(fp.dominant_period, None);
        assert!(!fp.seasonal());
    }

    #[test]
    fn alternating_series_has_period_two() {
        let fp = fingerprint(&inst((0..20).map(|i| if i % 2 == 0 { 1.0 } else { 2.0 }).collect()));
        assert_eq!(fp.dominant_period, Some(2));
    }

    #[test]
    fn daily_cycle_detected() {
        let s: Vec<f64> = (0..336)
            .map(|t| 15.0 + 4.0 * (2.0 * std::f64::consts::PI * t as f64 / 24.0).sin() + 0.3 * ((t * 7919 % 13) as f64 - 6.0) / 6.0)
            .collect();
        let fp = fingerprint(&inst(s));
        assert_eq!(fp.dominant_period, Some(24));
        assert!(fp.seasonal());
    }

    #[test]
    fn boundary_flag_follows_text_dates() {
        let ts: Vec<String> = (1..=9).map(|d| format!("2024-05-0{d}")).collect();
        let i = inst(vec![1.0, 2.0, 1.0, 3.0, 2.0, 4.0, 3.0, 5.0, 4.0])
            .with_timestamps(ts)
            .with_text(vec![TextBlock { body: "storm".into(), date: Some("2024-05-09".into()) }]);
        let fp = fingerprint(&i);
        assert!(fp.boundary_event && fp.has_text);
        assert_eq!(Applicability::derive(&fp).boundary_event, Some(true));
    }

    #[test]
    fn match_examples() {
        let fp = fingerprint(&inst((0..48).map(|t| (t as f64 * std::f64::consts::PI / 6.0).sin()).collect()));
        assert!(fp.seasonal());
        assert!(matches(&Applicability { seasonal: Some(true), ..Default::default() }, &fp));
        assert!(!matches(&Applicability { task_subtype: Some("trend".into()), ..Default::default() }, &fp));
        assert!(matches(&Applicability::default(), &fp));
        assert!(matches(&Applicability::derive(&fp), &fp));
    }
}
