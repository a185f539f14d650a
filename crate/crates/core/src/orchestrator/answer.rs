//! Parsing of free-form agent replies into answers and summaries.

use std::sync::OnceLock;

use regex::Regex;
use serde_json::Value;

use crate::model::{Answer, LearningSummary, TaskType};

fn json_object(text: &str) -> Option<Value> {
    let t = text.trim();
    if let Ok(v) = serde_json::from_str::<Value>(t) {
        return Some(v);
    }
    let (a, b) = (t.find('{')?, t.rfind('}')?);
    (a < b).then(|| serde_json::from_str(&t[a..=b]).ok()).flatten()
}

fn to_answer(v: &Value, task: TaskType) -> Option<Answer> {
    match (v, task.is_classification()) {
        (Value::Number(n), true) => Some(Answer::Label(n.to_string())),
        (Value::Bool(b), true) => Some(Answer::Label(b.to_string())),
        _ => Answer::from_value(v),
    }
}

/// Accepts `{"answer": ...}`, a bare JSON value, or an `answer: ...` line.
pub fn parse_answer(text: &str, task: TaskType) -> Option<Answer> {
    if let Some(v) = json_object(text) {
        return match &v {
            Value::Object(m) if m.contains_key("answer") => to_answer(&m["answer"], task),
            Value::Object(_) if task != TaskType::Indicator => None,
            other => to_answer(other, task),
        };
    }
    static LINE: OnceLock<Regex> = OnceLock::new();
    let re = LINE.get_or_init(|| Regex::new(r"(?im)^\s*(?:final\s+)?answer\s*[:=]\s*(.+?)\s*$").unwrap());
    let raw = re.captures(text)?.get(1)?.as_str().trim_end_matches('.');
    if let Ok(v) = serde_json::from_str::<Value>(raw) {
        return to_answer(&v, task);
    }
    let label = raw.trim_matches(|c| c == '"' || c == '\'' || c == '`').trim();
    if label.is_empty() {
        return None;
    }
    if task.is_classification() {
        Some(Answer::Label(label.to_string()))
    } else {
        let nums: Option<Vec<f64>> = label
            .trim_matches(|c| c == '[' || c == ']')
            .split(',')
            .map(|x| x.trim().parse().ok())
            .collect();
        nums.filter(|v| !v.is_empty()).map(Answer::Numeric)
    }
}

/// The `answer_type` declared by a final message, when it is JSON.
pub fn final_type(text: &str) -> Option<String> {
    json_object(text)?.get("answer_type")?.as_str().map(str::to_string)
}

/// A gateway-provided learning summary, when the final message is one.
pub fn parse_summary(text: &str) -> Option<LearningSummary> {
    let v = json_object(text)?;
    if v.get("answer_type")?.as_str()? != "learning_summary" {
        return None;
    }
    let field = |k: &str| v.get(k).and_then(Value::as_str).unwrap_or("").to_string();
    Some(LearningSummary {
        answer_type: "learning_summary".into(),
        insight: field("insight"),
        recommendation: field("recommendation"),
        source: "gateway".into(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn answer_forms() {
        assert_eq!(parse_answer("answer: increasing", TaskType::Trend), Some(Answer::Label("increasing".into())));
        assert_eq!(parse_answer(r#"{"answer": [1, 2.5]}"#, TaskType::Forecast), Some(Answer::Numeric(vec![1.0, 2.5])));
        assert_eq!(parse_answer("Here: {\"answer\": \"stable\"} done", TaskType::Trend), Some(Answer::Label("stable".into())));
        assert_eq!(parse_answer("[3, 4]", TaskType::Forecast), Some(Answer::Numeric(vec![3.0, 4.0])));
        assert_eq!(parse_answer("Answer = 1.5, 2", TaskType::Forecast), Some(Answer::Numeric(vec![1.5, 2.0])));
        assert_eq!(parse_answer("I could not settle on an answer.", TaskType::Forecast), None);
        assert!(matches!(parse_answer(r#"{"diff": 1, "max": 2, "min": 0}"#, TaskType::Indicator), Some(Answer::Fields(_))));
    }

    #[test]
    fn summary_forms() {
        let s = parse_summary(r#"{"answer_type":"learning_summary","insight":"a","recommendation":"b"}"#).unwrap();
        assert_eq!((s.insight.as_str(), s.source.as_str()), ("a", "gateway"));
        assert!(parse_summary(r#"{"answer_type":"forecast"}"#).is_none());
        assert_eq!(final_type(r#"{"answer_type":"forecast"}"#).as_deref(), Some("forecast"));
    }
}
