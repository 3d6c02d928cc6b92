use std::collections::HashSet;

use serde::{Deserialize, Serialize};

/// Field names as they appear in analyzer payloads and CSV headers.
pub mod fields {
    pub const SCORE: &str = "Score";
    pub const HIDDEN_NATURE_NOTES: &str = "hiddenNatureNotes";
    pub const RATIONALES: &str = "rationaleForWriting";
    pub const INFERENCES: &str = "AIDerivedInferences";
    pub const BIAS_LEVEL: &str = "biasLevel";
    pub const BIAS_BREAKDOWN: &str = "biasBreakdown";
    pub const CREDIBILITY: &str = "credibilityScore";
    pub const CLARITY: &str = "clarityScore";
    pub const INFERENTIAL_DEPTH: &str = "inferentialDepthScore";
    pub const NUMBER: &str = "number";
    pub const HUMOR: &str = "levelOfHumor";
    pub const SARCASM: &str = "levelOfSarcasm";
    pub const PERSUASIVE: &str = "typeLevelsPersuasive";
    pub const DECLARATIVE: &str = "typeLevelsDeclarative";
    pub const INQUISITIVE: &str = "typeLevelsInquisitive";
    pub const CONTEXT: &str = "context";
    pub const UNDERTONES_SCORE: &str = "undertonesScore";
    pub const EXCLAMATORY: &str = "typeLevelsExclamatory";
    pub const UNDERTONES_DESCRIPTION: &str = "undertonesDescriptions";

    /// Set by the analyzer when only an excerpt of the judgment was sent.
    pub const TRUNCATED: &str = "truncated";

    /// Pseudo-field used in reports for the speech-act sum.
    pub const SPEECH_ACTS: &str = "speechActs";

    pub const SPEECH_ACT_FIELDS: [&str; 4] = [PERSUASIVE, DECLARATIVE, INQUISITIVE, EXCLAMATORY];
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FieldKind {
    Numeric,
    Integer,
    Text,
    Structured,
    Flag,
}

impl FieldKind {
    pub fn is_numeric(self) -> bool {
        matches!(self, FieldKind::Numeric | FieldKind::Integer)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldSpec {
    pub name: String,
    pub kind: FieldKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub max: Option<f64>,
    pub required: bool,
}

impl FieldSpec {
    pub fn numeric(name: &str, min: f64, max: f64) -> Self {
        Self {
            name: name.to_string(),
            kind: FieldKind::Numeric,
            min: Some(min),
            max: Some(max),
            required: true,
        }
    }

    pub fn of_kind(name: &str, kind: FieldKind) -> Self {
        Self {
            name: name.to_string(),
            kind,
            min: None,
            max: None,
            required: true,
        }
    }

    pub fn optional(mut self) -> Self {
        self.required = false;
        self
    }
}

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum SchemaError {
    #[error("schema {version}: duplicate field {name}")]
    DuplicateField { version: String, name: String },
    #[error("schema {version}: core field {name} missing or mistyped")]
    CoreField { version: String, name: String },
    #[error("schema {version}: core field {name} must be required")]
    CoreOptional { version: String, name: String },
    #[error("schema {version}: column order does not cover declared fields exactly once")]
    ColumnOrder { version: String },
    #[error("schema {version}: field {name} has min > max")]
    Range { version: String, name: String },
    #[error("unknown schema version {0}")]
    UnknownVersion(String),
}

/// Declares the fields of a record format and their CSV column order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct SchemaConfig {
    pub version: String,
    pub field_specs: Vec<FieldSpec>,
    pub csv_column_order: Vec<String>,
}

fn core_fields() -> Vec<FieldSpec> {
    use fields::*;
    vec![
        FieldSpec::numeric(SCORE, 0.0, 10.0),
        FieldSpec::of_kind(HIDDEN_NATURE_NOTES, FieldKind::Text),
        FieldSpec::of_kind(RATIONALES, FieldKind::Structured),
        FieldSpec::of_kind(INFERENCES, FieldKind::Structured),
        FieldSpec::numeric(BIAS_LEVEL, 0.0, 10.0),
        FieldSpec::of_kind(BIAS_BREAKDOWN, FieldKind::Structured),
        FieldSpec::numeric(CREDIBILITY, 0.0, 10.0),
        FieldSpec::numeric(CLARITY, 0.0, 10.0),
        FieldSpec::numeric(INFERENTIAL_DEPTH, 0.0, 10.0),
        FieldSpec {
            min: Some(0.0),
            ..FieldSpec::of_kind(NUMBER, FieldKind::Integer)
        },
        FieldSpec::numeric(HUMOR, 0.0, 10.0),
        FieldSpec::numeric(SARCASM, 0.0, 10.0),
        FieldSpec::numeric(PERSUASIVE, 0.0, 100.0),
        FieldSpec::numeric(DECLARATIVE, 0.0, 100.0),
        FieldSpec::numeric(INQUISITIVE, 0.0, 100.0),
        FieldSpec::of_kind(CONTEXT, FieldKind::Text),
        FieldSpec::numeric(UNDERTONES_SCORE, 0.0, 10.0),
        FieldSpec::numeric(EXCLAMATORY, 0.0, 100.0),
        FieldSpec::of_kind(UNDERTONES_DESCRIPTION, FieldKind::Text),
    ]
}

/// Number of fields in the wide configuration.
pub const WIDE_FIELD_COUNT: usize = 63;

impl SchemaConfig {
    pub const DEFAULT_VERSION: &'static str = "core-v1";
    pub const WIDE_VERSION: &'static str = "wide63-v1";

    /// Builds a schema whose column order is the declaration order.
    pub fn from_specs(version: &str, field_specs: Vec<FieldSpec>) -> Self {
        let csv_column_order = field_specs.iter().map(|f| f.name.clone()).collect();
        Self {
            version: version.to_string(),
            field_specs,
            csv_column_order,
        }
    }

    /// The nineteen hard-typed fields plus the optional `truncated` flag.
    pub fn core() -> Self {
        let mut specs = core_fields();
        specs.push(FieldSpec::of_kind(fields::TRUNCATED, FieldKind::Flag).optional());
        Self::from_specs(Self::DEFAULT_VERSION, specs)
    }

    /// A 63-column layout: the core schema padded with optional reserved
    /// text columns (`reserved21` .. `reserved63`).
    pub fn wide() -> Self {
        let mut specs = Self::core().field_specs;
        let start = specs.len() + 1;
        for i in start..=WIDE_FIELD_COUNT {
            specs.push(FieldSpec::of_kind(&format!("reserved{i}"), FieldKind::Text).optional());
        }
        Self::from_specs(Self::WIDE_VERSION, specs)
    }

    pub fn by_version(version: &str) -> Result<Self, SchemaError> {
        match version {
            Self::DEFAULT_VERSION => Ok(Self::core()),
            Self::WIDE_VERSION => Ok(Self::wide()),
            other => Err(SchemaError::UnknownVersion(other.to_string())),
        }
    }

    pub fn field(&self, name: &str) -> Option<&FieldSpec> {
        self.field_specs.iter().find(|f| f.name == name)
    }

    pub fn with_field(mut self, spec: FieldSpec) -> Self {
        self.csv_column_order.push(spec.name.clone());
        self.field_specs.push(spec);
        self
    }

    pub fn is_core_field(name: &str) -> bool {
        core_fields().iter().any(|f| f.name == name)
    }

    /// Numeric fields in column order.
    pub fn numeric_fields(&self) -> Vec<&str> {
        self.csv_column_order
            .iter()
            .filter(|name| self.field(name).is_some_and(|f| f.kind.is_numeric()))
            .map(String::as_str)
            .collect()
    }

    /// Checks that the schema is well-formed.
    pub fn check(&self) -> Result<(), SchemaError> {
        let version = || self.version.clone();
        let mut seen = HashSet::new();
        for spec in &self.field_specs {
            if !seen.insert(spec.name.as_str()) {
                return Err(SchemaError::DuplicateField {
                    version: version(),
                    name: spec.name.clone(),
                });
            }
            if let (Some(lo), Some(hi)) = (spec.min, spec.max) {
                if lo > hi {
                    return Err(SchemaError::Range {
                        version: version(),
                        name: spec.name.clone(),
                    });
                }
            }
        }
        for core in core_fields() {
            match self.field(&core.name) {
                Some(spec) if spec.kind == core.kind => {
                    if !spec.required {
                        return Err(SchemaError::CoreOptional {
                            version: version(),
                            name: core.name,
                        });
                    }
                }
                _ => {
                    return Err(SchemaError::CoreField {
                        version: version(),
                        name: core.name,
                    })
                }
            }
        }
        let mut columns = HashSet::new();
        let covers = self.csv_column_order.len() == self.field_specs.len()
            && self
                .csv_column_order
                .iter()
                .all(|c| seen.contains(c.as_str()) && columns.insert(c.as_str()));
        if !covers {
            return Err(SchemaError::ColumnOrder { version: version() });
        }
        Ok(())
    }
}

impl Default for SchemaConfig {
    fn default() -> Self {
        Self::core()
    }
}
