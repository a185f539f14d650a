//! Classical closed-form forecasters.

use super::ToolFailure;

fn need(series: &[f64], n: usize) -> Result<(), ToolFailure> {
    if series.len() < n {
        return Err(ToolFailure::new(
            "insufficient_history",
            format!("need at least {n} observations, got {}", series.len()),
        ));
    }
    Ok(())
}

fn need_horizon(h: usize) -> Result<(), ToolFailure> {
    if h == 0 {
        return Err(ToolFailure::new("bad_horizon", "horizon must be at least 1"));
    }
    Ok(())
}

pub fn naive(series: &[f64], h: usize) -> Result<Vec<f64>, ToolFailure> {
    need(series, 2)?;
    need_horizon(h)?;
    Ok(vec![*series.last().expect("non-empty"); h])
}

pub fn drift(series: &[f64], h: usize) -> Result<Vec<f64>, ToolFailure> {
    need(series, 2)?;
    need_horizon(h)?;
    let n = series.len();
    let last = series[n - 1];
    let slope = (last - series[0]) / (n - 1) as f64;
    Ok((1..=h).map(|k| last + slope * k as f64).collect())
}

/// Repeats the last full period of length `m`.
pub fn seasonal_naive(series: &[f64], m: usize, h: usize) -> Result<Vec<f64>, ToolFailure> {
    if m == 0 {
        return Err(ToolFailure::new("bad_period", "period must be at least 1"));
    }
    need(series, m.max(2))?;
    need_horizon(h)?;
    let start = series.len() - m;
    Ok((0..h).map(|k| series[start + k % m]).collect())
}

fn check_smoothing(name: &str, v: f64) -> Result<(), ToolFailure> {
    if !(0.0..=1.0).contains(&v) || !v.is_finite() {
        return Err(ToolFailure::new("bad_parameter", format!("{name} must lie in [0, 1]")));
    }
    Ok(())
}

pub fn ses(series: &[f64], alpha: f64, h: usize) -> Result<Vec<f64>, ToolFailure> {
    need(series, 2)?;
    need_horizon(h)?;
    check_smoothing("alpha", alpha)?;
    let level = series[1..].iter().fold(series[0], |l, y| alpha * y + (1.0 - alpha) * l);
    Ok(vec![level; h])
}

pub fn holt(series: &[f64], alpha: f64, beta: f64, h: usize) -> Result<Vec<f64>, ToolFailure> {
    need(series, 2)?;
    need_horizon(h)?;
    check_smoothing("alpha", alpha)?;
    check_smoothing("beta", beta)?;
    let mut level = series[0];
    let mut trend = series[1] - series[0];
    for y in &series[1..] {
        let prev = level;
        level = alpha * y + (1.0 - alpha) * (level + trend);
        trend = beta * (level - prev) + (1.0 - beta) * trend;
    }
    Ok((1..=h).map(|k| level + trend * k as f64).collect())
}

pub fn moving_average(series: &[f64], window: usize, h: usize) -> Result<Vec<f64>, ToolFailure> {
    if window == 0 {
        return Err(ToolFailure::new("bad_window", "window must be at least 1"));
    }
    need(series, window.max(2))?;
    need_horizon(h)?;
    let tail = &series[series.len() - window..];
    Ok(vec![tail.iter().sum::<f64>() / window as f64; h])
}
