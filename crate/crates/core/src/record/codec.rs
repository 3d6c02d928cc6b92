//! Structured-text (JSON) form of a record.

use serde::de::DeserializeOwned;
use serde_json::{Map, Value};

use super::schema::{fields, FieldKind, SchemaConfig, SchemaError};
use super::validate::{validate_record, ValidationReport, Violation};
use super::{AnalysisRecord, ExtensionValue, SpeechActProfile};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum RecordError {
    #[error("parse failure at line {line}, column {column}: {message}")]
    ParseFailure {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("schema violation: {0}")]
    SchemaViolation(ValidationReport),
    #[error("row {row}: {message}")]
    RowFailure { row: usize, message: String },
    #[error("row {row}: schema violation: {report}")]
    RowViolation { row: usize, report: ValidationReport },
    #[error(transparent)]
    Config(#[from] SchemaError),
}

impl RecordError {
    pub fn report(&self) -> Option<&ValidationReport> {
        match self {
            RecordError::SchemaViolation(r) | RecordError::RowViolation { report: r, .. } => Some(r),
            _ => None,
        }
    }
}

/// Serializes a record into a flat object keyed by schema field names.
pub fn record_to_object(record: &AnalysisRecord) -> Map<String, Value> {
    use fields::*;
    let mut map = Map::new();
    let mut put = |k: &str, v: Value| {
        map.insert(k.to_string(), v);
    };
    put(SCORE, number(record.overall_score));
    put(HIDDEN_NATURE_NOTES, Value::String(record.hidden_nature_notes.clone()));
    put(RATIONALES, serde_json::to_value(&record.rationales).expect("rationales serialize"));
    put(INFERENCES, serde_json::to_value(&record.inferences).expect("inferences serialize"));
    put(BIAS_LEVEL, number(record.bias_level));
    put(
        BIAS_BREAKDOWN,
        serde_json::to_value(&record.bias_breakdown).expect("breakdown serializes"),
    );
    put(CREDIBILITY, number(record.credibility_score));
    put(CLARITY, number(record.clarity_score));
    put(INFERENTIAL_DEPTH, number(record.inferential_depth_score));
    put(NUMBER, Value::from(record.item_number));
    put(HUMOR, number(record.level_of_humor));
    put(SARCASM, number(record.level_of_sarcasm));
    put(PERSUASIVE, number(record.speech_acts.persuasive));
    put(DECLARATIVE, number(record.speech_acts.declarative));
    put(INQUISITIVE, number(record.speech_acts.inquisitive));
    put(CONTEXT, Value::String(record.context.clone()));
    put(UNDERTONES_SCORE, number(record.undertones_score));
    put(EXCLAMATORY, number(record.speech_acts.exclamatory));
    put(
        UNDERTONES_DESCRIPTION,
        Value::String(record.undertones_description.clone()),
    );
    for (k, v) in &record.extensions {
        let value = match v {
            ExtensionValue::Flag(b) => Value::Bool(*b),
            ExtensionValue::Number(n) => number(*n),
            ExtensionValue::Text(t) => Value::String(t.clone()),
        };
        put(k, value);
    }
    map
}

fn number(v: f64) -> Value {
    serde_json::Number::from_f64(v)
        .map(Value::Number)
        .unwrap_or(Value::Null)
}

struct Extractor<'a> {
    map: &'a Map<String, Value>,
    report: ValidationReport,
}

impl Extractor<'_> {
    fn missing(&mut self, name: &str) {
        self.report.push(Violation::new(
            name,
            "absent",
            format!("missing required field {name}"),
        ));
    }

    fn mistyped(&mut self, name: &str, value: &Value, expected: &str) {
        self.report.push(Violation::new(
            name,
            value,
            format!("{name} expected {expected}"),
        ));
    }

    fn number(&mut self, name: &str) -> f64 {
        match self.map.get(name) {
            Some(Value::Number(n)) => n.as_f64().unwrap_or(f64::NAN),
            Some(other) => {
                self.mistyped(name, other, "number");
                0.0
            }
            None => {
                self.missing(name);
                0.0
            }
        }
    }

    fn integer(&mut self, name: &str) -> u64 {
        match self.map.get(name) {
            Some(Value::Number(n)) => match n.as_u64() {
                Some(v) => v,
                None => {
                    self.report.push(Violation::new(
                        name,
                        n,
                        format!("{name} expected non-negative integer"),
                    ));
                    0
                }
            },
            Some(other) => {
                self.mistyped(name, other, "non-negative integer");
                0
            }
            None => {
                self.missing(name);
                0
            }
        }
    }

    fn text(&mut self, name: &str) -> String {
        match self.map.get(name) {
            Some(Value::String(s)) => s.clone(),
            Some(other) => {
                self.mistyped(name, other, "text");
                String::new()
            }
            None => {
                self.missing(name);
                String::new()
            }
        }
    }

    fn structured<T: DeserializeOwned>(&mut self, name: &str) -> Vec<T> {
        match self.map.get(name) {
            Some(value @ Value::Array(_)) => match serde_json::from_value(value.clone()) {
                Ok(v) => v,
                Err(e) => {
                    self.report.push(Violation::new(
                        name,
                        value,
                        format!("{name} malformed: {e}"),
                    ));
                    Vec::new()
                }
            },
            Some(other) => {
                self.mistyped(name, other, "list");
                Vec::new()
            }
            None => {
                self.missing(name);
                Vec::new()
            }
        }
    }

    fn core(&mut self) -> AnalysisRecord {
        use fields::*;
        AnalysisRecord {
            overall_score: self.number(SCORE),
            hidden_nature_notes: self.text(HIDDEN_NATURE_NOTES),
            rationales: self.structured(RATIONALES),
            inferences: self.structured(INFERENCES),
            bias_level: self.number(BIAS_LEVEL),
            bias_breakdown: self.structured(BIAS_BREAKDOWN),
            credibility_score: self.number(CREDIBILITY),
            clarity_score: self.number(CLARITY),
            inferential_depth_score: self.number(INFERENTIAL_DEPTH),
            item_number: self.integer(NUMBER),
            level_of_humor: self.number(HUMOR),
            level_of_sarcasm: self.number(SARCASM),
            speech_acts: SpeechActProfile {
                persuasive: self.number(PERSUASIVE),
                declarative: self.number(DECLARATIVE),
                inquisitive: self.number(INQUISITIVE),
                exclamatory: self.number(EXCLAMATORY),
            },
            context: self.text(CONTEXT),
            undertones_score: self.number(UNDERTONES_SCORE),
            undertones_description: self.text(UNDERTONES_DESCRIPTION),
            extensions: Default::default(),
        }
    }
}

/// Builds a record from a flat object, typing extensions by `schema`.
///
/// Reports structural defects (missing, mistyped or undeclared fields); the
/// semantic invariants are left to [`validate_record`].
pub fn record_from_object(
    map: &Map<String, Value>,
    schema: &SchemaConfig,
) -> Result<AnalysisRecord, ValidationReport> {
    let mut ex = Extractor {
        map,
        report: ValidationReport::default(),
    };
    let mut record = ex.core();
    for (key, value) in map {
        if SchemaConfig::is_core_field(key) || value.is_null() {
            continue;
        }
        let Some(spec) = schema.field(key) else {
            ex.report
                .push(Violation::new(key, key, format!("undeclared field {key}")));
            continue;
        };
        let typed = match (spec.kind, value) {
            (FieldKind::Numeric | FieldKind::Integer, Value::Number(n)) => {
                n.as_f64().map(ExtensionValue::Number)
            }
            (FieldKind::Text, Value::String(s)) => Some(ExtensionValue::Text(s.clone())),
            (FieldKind::Structured, Value::String(s)) => Some(ExtensionValue::Text(s.clone())),
            (FieldKind::Structured, v @ (Value::Array(_) | Value::Object(_))) => {
                Some(ExtensionValue::Text(v.to_string()))
            }
            (FieldKind::Flag, Value::Bool(b)) => Some(ExtensionValue::Flag(*b)),
            _ => None,
        };
        match typed {
            Some(v) => {
                record.extensions.insert(key.clone(), v);
            }
            None => ex.mistyped(key, value, &format!("{:?}", spec.kind)),
        }
    }
    if ex.report.is_valid() {
        Ok(record)
    } else {
        Err(ex.report)
    }
}

/// Schema-free decoding used for stored and transported records.
pub(crate) fn record_from_object_untyped(map: Map<String, Value>) -> Result<AnalysisRecord, String> {
    let mut ex = Extractor {
        map: &map,
        report: ValidationReport::default(),
    };
    let mut record = ex.core();
    if !ex.report.is_valid() {
        return Err(ex.report.to_string());
    }
    for (key, value) in &map {
        if SchemaConfig::is_core_field(key) {
            continue;
        }
        let v = match value {
            Value::Null => continue,
            Value::Bool(b) => ExtensionValue::Flag(*b),
            Value::Number(n) => ExtensionValue::Number(n.as_f64().unwrap_or(f64::NAN)),
            Value::String(s) => ExtensionValue::Text(s.clone()),
            other => ExtensionValue::Text(other.to_string()),
        };
        record.extensions.insert(key.clone(), v);
    }
    Ok(record)
}

fn strip_code_fence(text: &str) -> &str {
    let trimmed = text.trim();
    let Some(rest) = trimmed.strip_prefix("```") else {
        return trimmed;
    };
    let Some(body) = rest.strip_suffix("```") else {
        return trimmed;
    };
    // drop an info string such as `json`
    match body.find('\n') {
        Some(nl) if !body[..nl].contains('{') => body[nl + 1..].trim(),
        _ => body.trim(),
    }
}

/// Parses an analyzer payload into a validated record.
pub fn parse_record(text: &str, schema: &SchemaConfig) -> Result<AnalysisRecord, RecordError> {
    schema.check()?;
    let body = strip_code_fence(text.trim_start_matches('\u{feff}'));
    if body.is_empty() {
        return Err(RecordError::ParseFailure {
            line: 1,
            column: 1,
            message: "empty payload".into(),
        });
    }
    let value: Value = serde_json::from_str(body).map_err(|e| RecordError::ParseFailure {
        line: e.line(),
        column: e.column(),
        message: e.to_string(),
    })?;
    let Value::Object(map) = value else {
        return Err(RecordError::ParseFailure {
            line: 1,
            column: 1,
            message: "expected a JSON object".into(),
        });
    };
    let record = record_from_object(&map, schema).map_err(RecordError::SchemaViolation)?;
    let report = validate_record(&record, schema)?;
    if report.is_valid() {
        Ok(record)
    } else {
        Err(RecordError::SchemaViolation(report))
    }
}
