//! Series profiling and detection routines.

use std::collections::BTreeMap;

use serde_json::Value;

use super::ToolFailure;

/// Trend score below which a series counts as stable.
pub const TREND_STABLE_BAND: f64 = 0.5;

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

/// Population standard deviation.
pub fn std_dev(xs: &[f64]) -> f64 {
    let m = mean(xs);
    (xs.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / xs.len() as f64).sqrt()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BasicStats {
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub first: f64,
    pub last: f64,
}

impl BasicStats {
    pub fn fields(&self) -> BTreeMap<String, f64> {
        BTreeMap::from([
            ("n".into(), self.n as f64),
            ("mean".into(), self.mean),
            ("std".into(), self.std),
            ("min".into(), self.min),
            ("max".into(), self.max),
            ("first".into(), self.first),
            ("last".into(), self.last),
        ])
    }
}

pub fn basic_stats(xs: &[f64]) -> Result<BasicStats, ToolFailure> {
    if xs.is_empty() {
        return Err(ToolFailure::new("empty_series", "series is empty"));
    }
    Ok(BasicStats {
        n: xs.len(),
        mean: mean(xs),
        std: std_dev(xs),
        min: xs.iter().copied().fold(f64::INFINITY, f64::min),
        max: xs.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        first: xs[0],
        last: xs[xs.len() - 1],
    })
}

/// Least-squares slope per step against the index.
pub fn ols_slope(xs: &[f64]) -> f64 {
    let n = xs.len() as f64;
    if xs.len() < 2 {
        return 0.0;
    }
    let t_mean = (n - 1.0) / 2.0;
    let y_mean = mean(xs);
    let (num, den) = xs.iter().enumerate().fold((0.0, 0.0), |(num, den), (i, y)| {
        let dt = i as f64 - t_mean;
        (num + dt * (y - y_mean), den + dt * dt)
    });
    num / den
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrendReading {
    pub label: &'static str,
    pub slope: f64,
    /// Slope normalized by the series std, times the length.
    pub score: f64,
}

pub fn detect_trend(xs: &[f64]) -> Result<TrendReading, ToolFailure> {
    if xs.len() < 2 {
        return Err(ToolFailure::new("insufficient_history", "need at least 2 observations"));
    }
    let slope = ols_slope(xs);
    let sd = std_dev(xs);
    let score = if sd > 0.0 { slope / sd * xs.len() as f64 } else { 0.0 };
    let label = if score.abs() < TREND_STABLE_BAND {
        "stable"
    } else if score > 0.0 {
        "increasing"
    } else {
        "decreasing"
    };
    Ok(TrendReading { label, slope, score })
}

/// Indices whose z-score exceeds `threshold` in magnitude.
pub fn detect_anomalies(xs: &[f64], threshold: f64) -> Vec<(usize, f64)> {
    let m = mean(xs);
    let sd = std_dev(xs);
    if sd == 0.0 {
        return Vec::new();
    }
    xs.iter()
        .enumerate()
        .filter_map(|(i, x)| {
            let z = (x - m) / sd;
            (z.abs() > threshold).then_some((i, z))
        })
        .collect()
}

/// Pearson correlation between the series and its `lag`-shifted copy.
pub fn lagged_correlation(xs: &[f64], lag: usize) -> Result<f64, ToolFailure> {
    if lag == 0 || lag + 2 > xs.len() {
        return Err(ToolFailure::new("bad_lag", format!("lag {lag} needs at least {} observations", lag + 2)));
    }
    let a = &xs[..xs.len() - lag];
    let b = &xs[lag..];
    let (ma, mb) = (mean(a), mean(b));
    let mut num = 0.0;
    let mut va = 0.0;
    let mut vb = 0.0;
    for (x, y) in a.iter().zip(b) {
        num += (x - ma) * (y - mb);
        va += (x - ma) * (x - ma);
        vb += (y - mb) * (y - mb);
    }
    if va == 0.0 || vb == 0.0 {
        return Err(ToolFailure::new("zero_variance", "correlation undefined for a constant window"));
    }
    Ok(num / (va * vb).sqrt())
}

/// Standard sample autocorrelation (full-series denominator).
pub fn acf(xs: &[f64], lag: usize) -> Option<f64> {
    if lag >= xs.len() {
        return None;
    }
    let m = mean(xs);
    let den: f64 = xs.iter().map(|x| (x - m) * (x - m)).sum();
    if den == 0.0 {
        return None;
    }
    let num: f64 = xs.iter().zip(&xs[lag..]).map(|(a, b)| (a - m) * (b - m)).sum();
    Some(num / den)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PeriodEstimate {
    pub period: usize,
    pub strength: f64,
    pub significant: bool,
}

/// Highest local peak of the autocorrelation over lags `2..=len/2`; a lag
/// only counts when it beats the lag before it and is not beaten by the
/// lag after it. Significant when the peak clears both 0.3 and the
/// white-noise band `2/sqrt(n)`.
pub fn dominant_period(xs: &[f64]) -> Option<PeriodEstimate> {
    let max_lag = xs.len() / 2;
    let r: Vec<Option<f64>> = (0..=max_lag + 1).map(|k| acf(xs, k)).collect();
    let mut best: Option<(usize, f64)> = None;
    for lag in 2..=max_lag {
        let Some(here) = r[lag] else { continue };
        let rises = r[lag - 1].is_some_and(|prev| here > prev);
        let holds = lag == max_lag || r[lag + 1].is_none_or(|next| here >= next);
        if rises && holds && best.is_none_or(|(_, b)| here > b + 1e-12) {
            best = Some((lag, here));
        }
    }
    let (period, strength) = best?;
    let band = 2.0 / (xs.len() as f64).sqrt();
    Some(PeriodEstimate { period, strength, significant: strength > 0.3 && strength > band })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Stationarity {
    pub stationary: bool,
    pub acf1: f64,
    pub mean_shift: f64,
}

/// Lag-1 persistence and half-to-half mean shift heuristic.
pub fn stationarity_check(xs: &[f64]) -> Result<Stationarity, ToolFailure> {
    if xs.len() < 4 {
        return Err(ToolFailure::new("insufficient_history", "need at least 4 observations"));
    }
    let acf1 = acf(xs, 1).unwrap_or(0.0);
    let half = xs.len() / 2;
    let sd = std_dev(xs);
    let mean_shift = if sd > 0.0 { (mean(&xs[half..]) - mean(&xs[..half])).abs() / sd } else { 0.0 };
    Ok(Stationarity { stationary: acf1 < 0.95 && mean_shift < 1.0, acf1, mean_shift })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub start: usize,
    pub end: usize,
    pub mean: f64,
    pub partial: bool,
}

pub fn segment(xs: &[f64], window: usize) -> Result<Vec<Segment>, ToolFailure> {
    if window == 0 || window > xs.len() {
        return Err(ToolFailure::new(
            "bad_window",
            format!("window {window} out of range for {} observations", xs.len()),
        ));
    }
    Ok(xs
        .chunks(window)
        .enumerate()
        .map(|(i, chunk)| Segment {
            start: i * window,
            end: i * window + chunk.len(),
            mean: mean(chunk),
            partial: chunk.len() < window,
        })
        .collect())
}

/// Half-open index range resolved against a series length.
pub fn resolve_range(spec: &Value, len: usize) -> Result<(usize, usize), ToolFailure> {
    let bad = || ToolFailure::new("bad_range", format!("range {spec} is out of bounds for {len} observations"));
    let get = |k: &str| spec.get(k).and_then(Value::as_u64).map(|v| v as usize);
    let (start, end) = if spec.is_null() || spec.as_str() == Some("all") {
        (0, len)
    } else if let Some(n) = get("last") {
        (len.checked_sub(n).ok_or_else(bad)?, len)
    } else if let Some(n) = get("first") {
        (0, n)
    } else if let (Some(s), Some(e)) = (get("start"), get("end")) {
        (s, e)
    } else {
        return Err(ToolFailure::new("bad_range", format!("unrecognized range {spec}")));
    };
    if start >= end || end > len {
        return Err(bad());
    }
    Ok((start, end))
}

/// Index selected by `first`, `last` or an explicit integer.
pub fn resolve_position(spec: &Value, len: usize) -> Result<usize, ToolFailure> {
    let idx = match spec {
        Value::String(s) if s == "first" => Some(0),
        Value::String(s) if s == "last" => len.checked_sub(1),
        Value::Number(n) => n.as_u64().map(|v| v as usize),
        Value::Object(o) => return resolve_position(o.get("which").unwrap_or(&Value::Null), len),
        _ => None,
    };
    match idx {
        Some(i) if i < len => Ok(i),
        _ => Err(ToolFailure::new("bad_position", format!("position {spec} out of range for {len} observations"))),
    }
}
