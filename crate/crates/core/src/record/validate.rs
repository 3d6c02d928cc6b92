use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};

use super::schema::{fields, FieldKind, FieldSpec, SchemaConfig, SchemaError};
use super::{AnalysisRecord, ExtensionValue, SPEECH_ACT_SUM_TOLERANCE};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Violation {
    pub field: String,
    pub observed: String,
    pub message: String,
}

impl Violation {
    pub fn new(field: &str, observed: impl fmt::Display, message: impl Into<String>) -> Self {
        Self {
            field: field.to_string(),
            observed: observed.to_string(),
            message: message.into(),
        }
    }
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {} (observed {})", self.field, self.message, self.observed)
    }
}

/// All invariant violations found in one record. Empty means valid.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_valid(&self) -> bool {
        self.violations.is_empty()
    }

    pub fn push(&mut self, violation: Violation) {
        self.violations.push(violation);
    }

    pub fn mentions(&self, needle: &str) -> bool {
        self.violations
            .iter()
            .any(|v| v.message.contains(needle) || v.field == needle)
    }
}

impl fmt::Display for ValidationReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.violations.is_empty() {
            return f.write_str("valid");
        }
        for (i, v) in self.violations.iter().enumerate() {
            if i > 0 {
                f.write_str("; ")?;
            }
            write!(f, "{v}")?;
        }
        Ok(())
    }
}

/// Rounds for display in messages so float noise does not leak into reports.
fn display_number(v: f64) -> f64 {
    (v * 1000.0).round() / 1000.0
}

fn check_range(report: &mut ValidationReport, spec: &FieldSpec, value: f64) {
    if !value.is_finite() {
        report.push(Violation::new(&spec.name, value, format!("{} is not finite", spec.name)));
        return;
    }
    let below = spec.min.is_some_and(|lo| value < lo);
    let above = spec.max.is_some_and(|hi| value > hi);
    if below || above {
        report.push(Violation::new(
            &spec.name,
            value,
            format!("{} out of range", spec.name),
        ));
    }
}

fn check_nonempty(report: &mut ValidationReport, field: &str, value: &str) {
    if value.trim().is_empty() {
        report.push(Violation::new(field, "\"\"", format!("{field} is empty")));
    }
}

/// Checks a record against every invariant of `schema`.
pub fn validate_record(
    record: &AnalysisRecord,
    schema: &SchemaConfig,
) -> Result<ValidationReport, SchemaError> {
    schema.check()?;
    let mut report = ValidationReport::default();

    for spec in &schema.field_specs {
        if SchemaConfig::is_core_field(&spec.name) {
            match spec.kind {
                FieldKind::Numeric | FieldKind::Integer => {
                    if let Some(v) = record.numeric(&spec.name) {
                        check_range(&mut report, spec, v);
                    }
                }
                FieldKind::Text => {
                    if let Some(t) = record.text(&spec.name) {
                        check_nonempty(&mut report, &spec.name, t);
                    }
                }
                FieldKind::Structured | FieldKind::Flag => {}
            }
        } else {
            check_extension(&mut report, spec, record.extensions.get(&spec.name));
        }
    }

    for key in record.extensions.keys() {
        if schema.field(key).is_none() || SchemaConfig::is_core_field(key) {
            report.push(Violation::new(key, key, format!("undeclared field {key}")));
        }
    }

    let sum = record.speech_acts.sum();
    if !sum.is_finite() || (sum - 100.0).abs() > SPEECH_ACT_SUM_TOLERANCE {
        report.push(Violation::new(
            fields::SPEECH_ACTS,
            display_number(sum),
            format!("speechActs sum {}", display_number(sum)),
        ));
    }

    if record.bias_level > 0.0 && record.bias_breakdown.is_empty() {
        report.push(Violation::new(
            fields::BIAS_BREAKDOWN,
            "[]",
            "biasBreakdown empty while biasLevel > 0",
        ));
    }
    let mut writers = HashSet::new();
    for entry in &record.bias_breakdown {
        if !writers.insert(entry.writer_id) {
            report.push(Violation::new(
                fields::BIAS_BREAKDOWN,
                entry.writer_id,
                format!("duplicate writerId {}", entry.writer_id),
            ));
        }
        if !entry.bias_level.is_finite() || !(0.0..=10.0).contains(&entry.bias_level) {
            report.push(Violation::new(
                fields::BIAS_BREAKDOWN,
                entry.bias_level,
                "biasBreakdown biasLevel out of range",
            ));
        }
    }

    let mut rationale_ids = HashSet::new();
    for r in &record.rationales {
        if !rationale_ids.insert(r.rationale_id) {
            report.push(Violation::new(
                fields::RATIONALES,
                r.rationale_id,
                format!("duplicate rationaleId {}", r.rationale_id),
            ));
        }
        check_nonempty(&mut report, fields::RATIONALES, &r.content);
    }
    for inference in &record.inferences {
        check_nonempty(&mut report, fields::INFERENCES, &inference.inference);
    }

    Ok(report)
}

fn check_extension(report: &mut ValidationReport, spec: &FieldSpec, value: Option<&ExtensionValue>) {
    let Some(value) = value else {
        if spec.required {
            report.push(Violation::new(
                &spec.name,
                "absent",
                format!("missing required field {}", spec.name),
            ));
        }
        return;
    };
    match (spec.kind, value) {
        (FieldKind::Numeric, ExtensionValue::Number(n)) => check_range(report, spec, *n),
        (FieldKind::Integer, ExtensionValue::Number(n)) => {
            if n.fract() != 0.0 {
                report.push(Violation::new(&spec.name, n, format!("{} is not an integer", spec.name)));
            } else {
                check_range(report, spec, *n);
            }
        }
        (FieldKind::Text | FieldKind::Structured, ExtensionValue::Text(t)) => {
            check_nonempty(report, &spec.name, t)
        }
        (FieldKind::Flag, ExtensionValue::Flag(_)) => {}
        (kind, other) => report.push(Violation::new(
            &spec.name,
            format!("{other:?}"),
            format!("{} expected {kind:?}", spec.name),
        )),
    }
}
