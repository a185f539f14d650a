//! Shared domain vocabulary: task instances, answers, artifacts, candidate
//! executions and episode outcomes.
//!
//! Ground truth lives behind a field-level gate. Only holders of an
//! [`EvaluatorCapability`] (the exploration-time evaluator and the offline
//! scorer) can read it; prompt assembly and the inference runtime get a
//! [`GateError`].

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::metrics::{self, MetricError, SupervisionMetric};

/// Reserved artifact id for the untouched input series.
pub const ORIGINAL_INPUT: &str = "original_input";

/// Tolerance used when comparing numeric answers for distinctness.
pub const ANSWER_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskType {
    Forecast,
    Indicator,
    Trend,
    TrendPast,
    Correlation,
    Mcqa,
}

impl TaskType {
    pub fn is_classification(self) -> bool {
        matches!(
            self,
            TaskType::Trend | TaskType::TrendPast | TaskType::Correlation | TaskType::Mcqa
        )
    }

    pub fn is_numeric(self) -> bool {
        !self.is_classification()
    }

    pub fn as_str(self) -> &'static str {
        match self {
            TaskType::Forecast => "forecast",
            TaskType::Indicator => "indicator",
            TaskType::Trend => "trend",
            TaskType::TrendPast => "trend_past",
            TaskType::Correlation => "correlation",
            TaskType::Mcqa => "mcqa",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        Some(match s {
            "forecast" => TaskType::Forecast,
            "indicator" => TaskType::Indicator,
            "trend" => TaskType::Trend,
            "trend_past" => TaskType::TrendPast,
            "correlation" => TaskType::Correlation,
            "mcqa" => TaskType::Mcqa,
            _ => return None,
        })
    }
}

impl fmt::Display for TaskType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// A task-typed value: a forecast array, a label, or named indicator scalars.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum Answer {
    Numeric(Vec<f64>),
    Label(String),
    Fields(BTreeMap<String, f64>),
}

impl Answer {
    pub fn as_numeric(&self) -> Option<&[f64]> {
        match self {
            Answer::Numeric(v) => Some(v),
            _ => None,
        }
    }

    pub fn as_label(&self) -> Option<&str> {
        match self {
            Answer::Label(s) => Some(s),
            _ => None,
        }
    }

    /// True when the two answers differ beyond [`ANSWER_TOLERANCE`].
    pub fn differs_from(&self, other: &Answer) -> bool {
        match (self, other) {
            (Answer::Numeric(a), Answer::Numeric(b)) => {
                a.len() != b.len()
                    || a.iter().zip(b).any(|(x, y)| (x - y).abs() > ANSWER_TOLERANCE)
            }
            (Answer::Label(a), Answer::Label(b)) => a.trim() != b.trim(),
            (Answer::Fields(a), Answer::Fields(b)) => {
                a.len() != b.len()
                    || a.iter().any(|(k, x)| match b.get(k) {
                        Some(y) => (x - y).abs() > ANSWER_TOLERANCE,
                        None => true,
                    })
            }
            _ => true,
        }
    }

    /// Parse a loosely typed JSON value into an answer.
    pub fn from_value(value: &Value) -> Option<Answer> {
        match value {
            Value::String(s) => Some(Answer::Label(s.trim().to_string())),
            Value::Array(items) => items
                .iter()
                .map(Value::as_f64)
                .collect::<Option<Vec<_>>>()
                .map(Answer::Numeric),
            Value::Object(map) => map
                .iter()
                .map(|(k, v)| v.as_f64().map(|x| (k.clone(), x)))
                .collect::<Option<BTreeMap<_, _>>>()
                .map(Answer::Fields),
            Value::Number(n) => n.as_f64().map(|x| Answer::Numeric(vec![x])),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextBlock {
    pub body: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub date: Option<String>,
}

/// Who is asking for the ground truth.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AccessRole {
    PromptAssembly,
    InferenceRuntime,
    ExplorationEvaluator,
    OfflineScorer,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum GateError {
    #[error("ground truth is sealed against {0:?}")]
    Sealed(AccessRole),
    #[error("instance {0} carries no ground truth")]
    Absent(String),
}

/// Token permitting ground-truth reads.
#[derive(Debug, Clone, Copy)]
pub struct EvaluatorCapability {
    role: AccessRole,
}

impl EvaluatorCapability {
    pub fn exploration() -> Self {
        Self { role: AccessRole::ExplorationEvaluator }
    }

    pub fn offline_scorer() -> Self {
        Self { role: AccessRole::OfflineScorer }
    }

    pub fn role(&self) -> AccessRole {
        self.role
    }
}

#[derive(Clone, Default, PartialEq)]
struct SealedTruth(Option<Answer>);

impl fmt::Debug for SealedTruth {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.0 {
            Some(_) => f.write_str("Sealed(<redacted>)"),
            None => f.write_str("Sealed(None)"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("series is empty")]
    EmptySeries,
    #[error("series contains a non-finite value at index {0}")]
    NonFinite(usize),
    #[error("timestamps must match the series length ({series} values, {timestamps} timestamps)")]
    TimestampLength { series: usize, timestamps: usize },
    #[error("timestamp {0:?} is not ISO-8601")]
    BadTimestamp(String),
    #[error("timestamps must be strictly increasing (index {0})")]
    NonIncreasing(usize),
    #[error("horizon must be at least 1 for numeric tasks")]
    ZeroHorizon,
    #[error("label_space must be non-empty exactly for classification tasks ({0})")]
    LabelSpace(TaskType),
    #[error("unknown task_type {0:?}")]
    UnknownTaskType(String),
    #[error("ground truth is not a valid {0} target")]
    BadGroundTruth(TaskType),
}

/// Wire form of one corpus line.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InstanceRecord {
    pub id: String,
    pub series: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub timestamps: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<Vec<TextBlock>>,
    pub task_type: String,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    pub scope: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label_space: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub indicator_fields: Option<Vec<String>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub source: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub ground_truth: Option<Value>,
}

fn default_horizon() -> usize {
    1
}

/// Default named scalars expected from indicator answers.
pub const DEFAULT_INDICATOR_FIELDS: [&str; 3] = ["diff", "max", "min"];

/// One benchmark sample: series, text context, task type and scope.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInstance {
    pub id: String,
    pub series: Vec<f64>,
    pub timestamps: Option<Vec<String>>,
    pub text: Vec<TextBlock>,
    pub task_type: TaskType,
    pub horizon: usize,
    pub scope: String,
    pub label_space: Option<Vec<String>>,
    pub indicator_fields: Vec<String>,
    pub source: Option<String>,
    ground_truth: SealedTruth,
}

impl TaskInstance {
    pub fn new(
        id: impl Into<String>,
        series: Vec<f64>,
        task_type: TaskType,
        horizon: usize,
        scope: impl Into<String>,
    ) -> Self {
        Self {
            id: id.into(),
            series,
            timestamps: None,
            text: Vec::new(),
            task_type,
            horizon,
            scope: scope.into(),
            label_space: None,
            indicator_fields: DEFAULT_INDICATOR_FIELDS.iter().map(|s| s.to_string()).collect(),
            source: None,
            ground_truth: SealedTruth(None),
        }
    }

    pub fn with_labels(mut self, labels: &[&str]) -> Self {
        self.label_space = Some(labels.iter().map(|s| s.to_string()).collect());
        self
    }

    pub fn with_text(mut self, text: Vec<TextBlock>) -> Self {
        self.text = text;
        self
    }

    pub fn with_timestamps(mut self, ts: Vec<String>) -> Self {
        self.timestamps = Some(ts);
        self
    }

    pub fn with_ground_truth(mut self, truth: Answer) -> Self {
        self.ground_truth = SealedTruth(Some(truth));
        self
    }

    /// Copy of this instance with the ground truth removed.
    pub fn without_ground_truth(&self) -> Self {
        Self { ground_truth: SealedTruth(None), ..self.clone() }
    }

    pub fn has_ground_truth(&self) -> bool {
        self.ground_truth.0.is_some()
    }

    pub fn ground_truth(&self, cap: &EvaluatorCapability) -> Result<&Answer, GateError> {
        self.ground_truth_for(cap.role())
    }

    pub fn ground_truth_for(&self, role: AccessRole) -> Result<&Answer, GateError> {
        match role {
            AccessRole::ExplorationEvaluator | AccessRole::OfflineScorer => self
                .ground_truth
                .0
                .as_ref()
                .ok_or_else(|| GateError::Absent(self.id.clone())),
            other => Err(GateError::Sealed(other)),
        }
    }

    /// Domain prefix of the scope key (`<domain>_<task_type>_<horizon_class>`).
    pub fn domain(&self) -> &str {
        self.scope.split(['_', ':']).next().unwrap_or(&self.scope)
    }

    pub fn supervision_metric(&self) -> SupervisionMetric {
        SupervisionMetric::for_task(self.domain(), self.task_type)
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        if self.series.is_empty() {
            return Err(ModelError::EmptySeries);
        }
        if let Some(i) = self.series.iter().position(|v| !v.is_finite()) {
            return Err(ModelError::NonFinite(i));
        }
        if let Some(ts) = &self.timestamps {
            if ts.len() != self.series.len() {
                return Err(ModelError::TimestampLength {
                    series: self.series.len(),
                    timestamps: ts.len(),
                });
            }
            let mut prev = None;
            for (i, raw) in ts.iter().enumerate() {
                let t = parse_timestamp(raw).ok_or_else(|| ModelError::BadTimestamp(raw.clone()))?;
                if prev.is_some_and(|p| t <= p) {
                    return Err(ModelError::NonIncreasing(i));
                }
                prev = Some(t);
            }
        }
        if self.task_type.is_numeric() && self.horizon == 0 {
            return Err(ModelError::ZeroHorizon);
        }
        let has_labels = self.label_space.as_ref().is_some_and(|l| !l.is_empty());
        if has_labels != self.task_type.is_classification() {
            return Err(ModelError::LabelSpace(self.task_type));
        }
        if let Some(truth) = &self.ground_truth.0 {
            let ok = match (self.task_type.is_classification(), truth) {
                (true, Answer::Label(_)) => true,
                (false, Answer::Numeric(v)) => !v.is_empty() && v.iter().all(|x| x.is_finite()),
                (false, Answer::Fields(_)) => self.task_type == TaskType::Indicator,
                _ => false,
            };
            if !ok {
                return Err(ModelError::BadGroundTruth(self.task_type));
            }
        }
        Ok(())
    }

    pub fn from_record(record: InstanceRecord) -> Result<Self, ModelError> {
        let task_type = TaskType::parse(&record.task_type)
            .ok_or_else(|| ModelError::UnknownTaskType(record.task_type.clone()))?;
        let truth = match &record.ground_truth {
            None | Some(Value::Null) => None,
            Some(v) => Some(Answer::from_value(v).ok_or(ModelError::BadGroundTruth(task_type))?),
        };
        let inst = Self {
            id: record.id,
            series: record.series,
            timestamps: record.timestamps,
            text: record.text.unwrap_or_default(),
            task_type,
            horizon: record.horizon,
            scope: record.scope,
            label_space: record.label_space,
            indicator_fields: record.indicator_fields.unwrap_or_else(|| {
                DEFAULT_INDICATOR_FIELDS.iter().map(|s| s.to_string()).collect()
            }),
            source: record.source,
            ground_truth: SealedTruth(truth),
        };
        inst.validate()?;
        Ok(inst)
    }

    /// Wire form. The ground truth is only emitted when a capability is given.
    pub fn to_record(&self, truth: Option<&EvaluatorCapability>) -> InstanceRecord {
        let default_fields: Vec<String> =
            DEFAULT_INDICATOR_FIELDS.iter().map(|s| s.to_string()).collect();
        InstanceRecord {
            id: self.id.clone(),
            series: self.series.clone(),
            timestamps: self.timestamps.clone(),
            text: (!self.text.is_empty()).then(|| self.text.clone()),
            task_type: self.task_type.as_str().to_string(),
            horizon: self.horizon,
            scope: self.scope.clone(),
            label_space: self.label_space.clone(),
            indicator_fields: (self.task_type == TaskType::Indicator
                && self.indicator_fields != default_fields)
                .then(|| self.indicator_fields.clone()),
            source: self.source.clone(),
            ground_truth: truth
                .and_then(|cap| self.ground_truth(cap).ok())
                .map(|a| serde_json::to_value(a).expect("answers serialize")),
        }
    }
}

pub(crate) fn parse_timestamp(raw: &str) -> Option<chrono::NaiveDateTime> {
    use chrono::{DateTime, NaiveDate, NaiveDateTime};
    let raw = raw.trim();
    if let Ok(t) = DateTime::parse_from_rfc3339(raw) {
        return Some(t.naive_utc());
    }
    for fmt in ["%Y-%m-%dT%H:%M:%S", "%Y-%m-%d %H:%M:%S", "%Y-%m-%dT%H:%M"] {
        if let Ok(t) = NaiveDateTime::parse_from_str(raw, fmt) {
            return Some(t);
        }
    }
    NaiveDate::parse_from_str(raw, "%Y-%m-%d").ok().and_then(|d| d.and_hms_opt(0, 0, 0))
}

/// Why an answer failed the task's output contract.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "code", content = "detail")]
pub enum InvalidReason {
    MissingAnswer,
    WrongType,
    EmptyForecast,
    NonFinite,
    LabelNotInSpace,
    MissingField(String),
}

impl InvalidReason {
    pub fn code(&self) -> &'static str {
        match self {
            InvalidReason::MissingAnswer => "missing_answer",
            InvalidReason::WrongType => "wrong_type",
            InvalidReason::EmptyForecast => "empty_forecast",
            InvalidReason::NonFinite => "non_finite",
            InvalidReason::LabelNotInSpace => "label_not_in_space",
            InvalidReason::MissingField(_) => "missing_field",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Validity {
    Valid,
    Invalid(InvalidReason),
}

impl Validity {
    pub fn is_valid(&self) -> bool {
        matches!(self, Validity::Valid)
    }
}

/// Check an answer against the output contract of the instance's task type.
///
/// Forecast length mismatches are accepted here; alignment repairs them at
/// scoring time.
pub fn validate_answer(answer: &Answer, instance: &TaskInstance) -> Validity {
    use InvalidReason::*;
    match instance.task_type {
        TaskType::Forecast => match answer {
            Answer::Numeric(v) if v.is_empty() => Validity::Invalid(EmptyForecast),
            Answer::Numeric(v) if v.iter().any(|x| !x.is_finite()) => Validity::Invalid(NonFinite),
            Answer::Numeric(_) => Validity::Valid,
            _ => Validity::Invalid(WrongType),
        },
        TaskType::Indicator => match answer {
            Answer::Fields(fields) => {
                for name in &instance.indicator_fields {
                    match fields.get(name) {
                        None => return Validity::Invalid(MissingField(name.clone())),
                        Some(x) if !x.is_finite() => return Validity::Invalid(NonFinite),
                        Some(_) => {}
                    }
                }
                Validity::Valid
            }
            _ => Validity::Invalid(WrongType),
        },
        _ => match answer {
            Answer::Label(label) => {
                let legal = instance
                    .label_space
                    .as_ref()
                    .is_some_and(|space| space.iter().any(|l| l == label.trim()));
                if legal {
                    Validity::Valid
                } else {
                    Validity::Invalid(LabelNotInSpace)
                }
            }
            _ => Validity::Invalid(WrongType),
        },
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum QualityError {
    #[error(transparent)]
    Gate(#[from] GateError),
    #[error("candidate {0} is not task-valid")]
    InvalidCandidate(String),
    #[error("ground truth shape does not match the answer")]
    ShapeMismatch,
    #[error(transparent)]
    Metric(#[from] MetricError),
}

/// Negative task loss of an answer against the ground truth.
pub fn answer_quality(
    answer: &Answer,
    instance: &TaskInstance,
    cap: &EvaluatorCapability,
) -> Result<f64, QualityError> {
    let truth = instance.ground_truth(cap)?;
    match (answer, truth) {
        (Answer::Numeric(pred), Answer::Numeric(target)) => {
            let aligned = metrics::align_length(pred, target.len())?;
            let loss = match instance.supervision_metric() {
                SupervisionMetric::Mae => metrics::mae(&aligned, target)?,
                SupervisionMetric::Mse => metrics::mse(&aligned, target)?,
                SupervisionMetric::Accuracy => return Err(QualityError::ShapeMismatch),
            };
            Ok(-loss)
        }
        (Answer::Fields(pred), Answer::Fields(target)) => {
            let (p, t): (Vec<f64>, Vec<f64>) = target
                .iter()
                .map(|(k, t)| pred.get(k).map(|p| (*p, *t)).ok_or(QualityError::ShapeMismatch))
                .collect::<Result<Vec<_>, _>>()?
                .into_iter()
                .unzip();
            Ok(-metrics::mse(&p, &t)?)
        }
        (Answer::Label(pred), Answer::Label(target)) => {
            Ok(if pred.trim() == target.trim() { 0.0 } else { -1.0 })
        }
        _ => Err(QualityError::ShapeMismatch),
    }
}

/// Execution quality q of a task-valid candidate.
pub fn execution_quality(
    candidate: &CandidateExecution,
    instance: &TaskInstance,
    cap: &EvaluatorCapability,
) -> Result<f64, QualityError> {
    match (&candidate.final_answer, candidate.valid) {
        (Some(answer), true) => answer_quality(answer, instance, cap),
        _ => Err(QualityError::InvalidCandidate(candidate.branch_id.clone())),
    }
}

/// Maps artifact coordinates onto the coordinates of the parent series.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum IndexTransform {
    Identity,
    /// Coordinate `i` is `start + i` in the parent. Indices past `len`
    /// continue the parent's time axis (forecasts made from a window).
    Window { start: i64, len: usize },
    /// Coordinate `i` is `origin + i` on the parent's extended time axis.
    Forecast { origin: i64, horizon: usize },
    /// Artifact has no series coordinates.
    NotApplicable,
}

impl IndexTransform {
    pub fn map(&self, i: i64) -> Option<i64> {
        match *self {
            IndexTransform::Identity => Some(i),
            IndexTransform::Window { start, .. } => (i >= 0).then_some(start + i),
            IndexTransform::Forecast { origin, horizon } => {
                (i >= 0 && (i as usize) < horizon).then_some(origin + i)
            }
            IndexTransform::NotApplicable => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Provenance {
    pub tool_id: String,
    pub args_digest: String,
    pub parents: Vec<String>,
    pub transform: IndexTransform,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ArtifactKind {
    Series,
    Scalar,
    Label,
    Text,
    EventList,
    MetricReport,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolErrorInfo {
    pub code: String,
    pub message: String,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct Event {
    pub label: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub text: Option<String>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub fields: BTreeMap<String, f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub flags: BTreeMap<String, bool>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateReport {
    pub candidate: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub report: Option<metrics::MetricReport>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

/// Kind-dependent artifact payload. Serializes as `{kind, payload}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
pub enum Payload {
    Series {
        values: Vec<f64>,
    },
    Scalar {
        value: f64,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        fields: BTreeMap<String, f64>,
    },
    Label {
        label: String,
        #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
        fields: BTreeMap<String, f64>,
    },
    Text {
        text: String,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        error: Option<ToolErrorInfo>,
    },
    EventList {
        events: Vec<Event>,
    },
    MetricReport {
        reports: Vec<CandidateReport>,
    },
}

impl Payload {
    pub fn kind(&self) -> ArtifactKind {
        match self {
            Payload::Series { .. } => ArtifactKind::Series,
            Payload::Scalar { .. } => ArtifactKind::Scalar,
            Payload::Label { .. } => ArtifactKind::Label,
            Payload::Text { .. } => ArtifactKind::Text,
            Payload::EventList { .. } => ArtifactKind::EventList,
            Payload::MetricReport { .. } => ArtifactKind::MetricReport,
        }
    }

    pub fn error(code: &str, message: impl Into<String>) -> Self {
        let message = message.into();
        Payload::Text {
            text: format!("error[{code}]: {message}"),
            error: Some(ToolErrorInfo { code: code.to_string(), message }),
        }
    }

    pub fn is_error(&self) -> bool {
        matches!(self, Payload::Text { error: Some(_), .. })
    }

    /// Checks payload-level invariants that serde cannot express.
    pub fn check(&self) -> Result<(), String> {
        let finite = |v: f64| v.is_finite();
        match self {
            Payload::Series { values } if values.iter().any(|v| !finite(*v)) => {
                Err("series payload contains non-finite values".into())
            }
            Payload::Scalar { value, fields } if !finite(*value) || fields.values().any(|v| !finite(*v)) => {
                Err("scalar payload contains non-finite values".into())
            }
            _ => Ok(()),
        }
    }
}

/// A typed tool output with coordinate provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolArtifact {
    pub artifact_id: String,
    #[serde(flatten)]
    pub payload: Payload,
    pub provenance: Provenance,
}

impl ToolArtifact {
    pub fn kind(&self) -> ArtifactKind {
        self.payload.kind()
    }

    pub fn series(&self) -> Option<&[f64]> {
        match &self.payload {
            Payload::Series { values } => Some(values),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ToolCallRecord {
    pub tool_id: String,
    pub args: Value,
    pub artifact_id: String,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BranchRole {
    PriorGuided,
    Alternative,
    Free,
}

/// One branch trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateExecution {
    pub branch_id: String,
    pub slot: usize,
    pub role: BranchRole,
    pub tool_calls: Vec<ToolCallRecord>,
    pub final_answer: Option<Answer>,
    pub valid: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub invalid_reason: Option<InvalidReason>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub quality: Option<f64>,
    pub reasoning_text: String,
    #[serde(default)]
    pub failed: bool,
}

impl CandidateExecution {
    pub fn tool_chain(&self) -> Vec<String> {
        self.tool_calls.iter().map(|c| c.tool_id.clone()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvidenceClass {
    Comparative,
    SingleExecution,
    Failure,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct LearningSummary {
    pub answer_type: String,
    pub insight: String,
    pub recommendation: String,
    /// Where the text came from: `gateway` or `template`.
    pub source: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeOutcome {
    pub instance_id: String,
    pub candidates: Vec<CandidateExecution>,
    pub winner: Option<String>,
    pub evidence_class: EvidenceClass,
    pub learning_summary: LearningSummary,
    pub trace_path: Option<String>,
}

impl EpisodeOutcome {
    pub fn winner_candidate(&self) -> Option<&CandidateExecution> {
        let id = self.winner.as_ref()?;
        self.candidates.iter().find(|c| &c.branch_id == id)
    }
}

/// Evidence class implied by the scored candidates.
pub fn classify_evidence(candidates: &[CandidateExecution]) -> EvidenceClass {
    match candidates.iter().filter(|c| c.valid && c.quality.is_some()).count() {
        0 => EvidenceClass::Failure,
        1 => EvidenceClass::SingleExecution,
        _ => EvidenceClass::Comparative,
    }
}

/// Argmax of quality over valid scored candidates; ties go to the shorter
/// tool chain, then the lower slot.
pub fn select_winner(candidates: &[CandidateExecution]) -> Option<&CandidateExecution> {
    candidates
        .iter()
        .filter(|c| c.valid)
        .filter_map(|c| c.quality.map(|q| (q, c)))
        .min_by(|(qa, a), (qb, b)| {
            qb.total_cmp(qa)
                .then(a.tool_calls.len().cmp(&b.tool_calls.len()))
                .then(a.slot.cmp(&b.slot))
        })
        .map(|(_, c)| c)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trend() -> TaskInstance {
        TaskInstance::new("t", vec![1.0, 2.0, 3.0], TaskType::Trend, 1, "weather_trend_short")
            .with_labels(&["increasing", "decreasing", "stable"])
    }

    fn forecast(truth: Vec<f64>) -> TaskInstance {
        TaskInstance::new("f", vec![1.0, 2.0, 3.0], TaskType::Forecast, truth.len(), "finance_forecast_short")
            .with_ground_truth(Answer::Numeric(truth))
    }

    fn candidate(id: &str, slot: usize, answer: Answer, calls: usize) -> CandidateExecution {
        CandidateExecution {
            branch_id: id.into(),
            slot,
            role: BranchRole::Free,
            tool_calls: (0..calls)
                .map(|i| ToolCallRecord { tool_id: format!("t{i}"), args: Value::Null, artifact_id: format!("a{i}") })
                .collect(),
            final_answer: Some(answer),
            valid: true,
            invalid_reason: None,
            quality: None,
            reasoning_text: String::new(),
            failed: false,
        }
    }

    #[test]
    fn forecast_contract() {
        let inst = forecast(vec![1.0, 2.0, 3.0]);
        assert!(validate_answer(&Answer::Numeric(vec![1.0, 2.0, 3.0]), &inst).is_valid());
        assert!(validate_answer(&Answer::Numeric(vec![1.0]), &inst).is_valid());
        assert_eq!(
            validate_answer(&Answer::Numeric(vec![]), &inst),
            Validity::Invalid(InvalidReason::EmptyForecast)
        );
        assert_eq!(
            validate_answer(&Answer::Label("3".into()), &inst),
            Validity::Invalid(InvalidReason::WrongType)
        );
    }

    #[test]
    fn label_contract() {
        let inst = trend();
        assert_eq!(
            validate_answer(&Answer::Label("sideways".into()), &inst),
            Validity::Invalid(InvalidReason::LabelNotInSpace)
        );
        assert!(validate_answer(&Answer::Label("increasing".into()), &inst).is_valid());
    }

    #[test]
    fn indicator_requires_every_field() {
        let inst = TaskInstance::new("i", vec![1.0, 2.0], TaskType::Indicator, 1, "weather_indicator_short");
        let mut fields = BTreeMap::from([("max".to_string(), 3.0), ("min".to_string(), 1.0)]);
        assert_eq!(
            validate_answer(&Answer::Fields(fields.clone()), &inst),
            Validity::Invalid(InvalidReason::MissingField("diff".into()))
        );
        fields.insert("diff".into(), 2.0);
        assert!(validate_answer(&Answer::Fields(fields), &inst).is_valid());
    }

    #[test]
    fn quality_examples() {
        let cap = EvaluatorCapability::exploration();
        let inst = forecast(vec![1.0, 2.0, 3.0]);
        let c = candidate("b0", 0, Answer::Numeric(vec![1.0, 2.0, 3.0]), 1);
        assert_eq!(execution_quality(&c, &inst, &cap).unwrap(), 0.0);

        let inst = forecast(vec![1.0, 1.0]);
        let c = candidate("b0", 0, Answer::Numeric(vec![0.0, 2.0]), 1);
        assert_eq!(execution_quality(&c, &inst, &cap).unwrap(), -1.0);

        let inst = trend().with_ground_truth(Answer::Label("stable".into()));
        let good = candidate("b0", 0, Answer::Label("stable".into()), 1);
        let bad = candidate("b1", 1, Answer::Label("increasing".into()), 1);
        assert_eq!(execution_quality(&good, &inst, &cap).unwrap(), 0.0);
        assert_eq!(execution_quality(&bad, &inst, &cap).unwrap(), -1.0);
    }

    #[test]
    fn quality_errors() {
        let cap = EvaluatorCapability::exploration();
        let inst = forecast(vec![1.0]).without_ground_truth();
        let c = candidate("b0", 0, Answer::Numeric(vec![1.0]), 1);
        assert!(matches!(execution_quality(&c, &inst, &cap), Err(QualityError::Gate(GateError::Absent(_)))));
        let mut c = c;
        c.valid = false;
        let inst = forecast(vec![1.0]);
        assert!(matches!(execution_quality(&c, &inst, &cap), Err(QualityError::InvalidCandidate(_))));
    }

    #[test]
    fn ground_truth_gate() {
        let inst = forecast(vec![9.0]);
        assert_eq!(
            inst.ground_truth_for(AccessRole::PromptAssembly),
            Err(GateError::Sealed(AccessRole::PromptAssembly))
        );
        assert!(inst.ground_truth_for(AccessRole::InferenceRuntime).is_err());
        assert!(inst.ground_truth(&EvaluatorCapability::offline_scorer()).is_ok());
        assert!(!format!("{inst:?}").contains("9.0]"));
        assert!(inst.to_record(None).ground_truth.is_none());
    }

    #[test]
    fn winner_tie_breaks() {
        let mut a = candidate("b0", 0, Answer::Numeric(vec![1.0]), 3);
        let mut b = candidate("b1", 1, Answer::Numeric(vec![2.0]), 1);
        let mut c = candidate("b2", 2, Answer::Numeric(vec![3.0]), 1);
        a.quality = Some(-1.0);
        b.quality = Some(-1.0);
        c.quality = Some(-1.0);
        let all = vec![a.clone(), b.clone(), c.clone()];
        assert_eq!(select_winner(&all).unwrap().branch_id, "b1");
        a.quality = Some(-0.5);
        assert_eq!(select_winner(&[a, b, c]).unwrap().branch_id, "b0");
    }

    #[test]
    fn record_validation() {
        let rec: InstanceRecord = serde_json::from_str(
            r#"{"id":"x","series":[1,2],"task_type":"trend","horizon":1,"scope":"s"}"#,
        )
        .unwrap();
        assert_eq!(TaskInstance::from_record(rec), Err(ModelError::LabelSpace(TaskType::Trend)));
        let rec: InstanceRecord = serde_json::from_str(
            r#"{"id":"x","series":[1,2],"timestamps":["2020-01-02","2020-01-01"],"task_type":"forecast","horizon":1,"scope":"s"}"#,
        )
        .unwrap();
        assert_eq!(TaskInstance::from_record(rec), Err(ModelError::NonIncreasing(1)));
    }

    #[test]
    fn transforms_compose() {
        let w = IndexTransform::Window { start: 10, len: 5 };
        assert_eq!(w.map(4), Some(14));
        assert_eq!(w.map(-1), None);
        let f = IndexTransform::Forecast { origin: 5, horizon: 3 };
        assert_eq!(f.map(0).and_then(|i| w.map(i)), Some(15));
        assert_eq!(f.map(3), None);
        assert_eq!(f.map(2), Some(7));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn quality_order_reverses_mae_order(
                truth in prop::collection::vec(-100.0f64..100.0, 1..30),
                da in prop::collection::vec(-5.0f64..5.0, 30),
                db in prop::collection::vec(-5.0f64..5.0, 30),
            ) {
                let cap = EvaluatorCapability::exploration();
                let inst = TaskInstance::new("p", vec![0.0], TaskType::Forecast, truth.len(), "finance_forecast")
                    .with_ground_truth(Answer::Numeric(truth.clone()));
                let a: Vec<f64> = truth.iter().zip(&da).map(|(t, d)| t + d).collect();
                let b: Vec<f64> = truth.iter().zip(&db).map(|(t, d)| t + d).collect();
                let qa = answer_quality(&Answer::Numeric(a.clone()), &inst, &cap).unwrap();
                let qb = answer_quality(&Answer::Numeric(b.clone()), &inst, &cap).unwrap();
                let mae_a = metrics::mae(&a, &truth).unwrap();
                let mae_b = metrics::mae(&b, &truth).unwrap();
                prop_assert_eq!((qa - qb).partial_cmp(&0.0), (mae_b - mae_a).partial_cmp(&0.0));
            }

            #[test]
            fn validate_is_pure(v in prop::collection::vec(-1.0e3f64..1.0e3, 0..10)) {
                let inst = TaskInstance::new("p", vec![0.0], TaskType::Forecast, 3, "s");
                let ans = Answer::Numeric(v);
                prop_assert_eq!(validate_answer(&ans, &inst), validate_answer(&ans, &inst));
            }
        }
    }
}
