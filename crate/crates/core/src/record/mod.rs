//! The judgment-analysis record: one analyzer pass over one judgment.
//!
//! Nineteen fields are hard-typed. Anything else a schema declares lives in
//! [`AnalysisRecord::extensions`], keyed by field name.

mod codec;
mod csv;
mod schema;
mod validate;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

pub use self::codec::{parse_record, record_from_object, record_to_object, RecordError};
pub use self::csv::{export_csv, import_csv};
pub use self::schema::{fields, FieldKind, FieldSpec, SchemaConfig, SchemaError};
pub use self::validate::{validate_record, ValidationReport, Violation};

/// Tolerance on the speech-act percentage sum.
pub const SPEECH_ACT_SUM_TOLERANCE: f64 = 0.5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Rationale {
    #[serde(rename = "rationaleId")]
    pub rationale_id: u64,
    #[serde(rename = "rationaleContent")]
    pub content: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Inference {
    pub inference: String,
}

/// Bias attributed to one writer (author) of the judgment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasBreakdownEntry {
    #[serde(rename = "writerId")]
    pub writer_id: u64,
    #[serde(rename = "biasLevel")]
    pub bias_level: f64,
    #[serde(default)]
    pub note: String,
}

/// Percentage decomposition of a judgment's rhetoric.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct SpeechActProfile {
    pub persuasive: f64,
    pub declarative: f64,
    pub inquisitive: f64,
    pub exclamatory: f64,
}

impl SpeechActProfile {
    pub fn new(persuasive: f64, declarative: f64, inquisitive: f64, exclamatory: f64) -> Self {
        Self {
            persuasive,
            declarative,
            inquisitive,
            exclamatory,
        }
    }

    pub fn sum(&self) -> f64 {
        self.persuasive + self.declarative + self.inquisitive + self.exclamatory
    }
}

/// Value of a schema-declared field outside the hard-typed set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ExtensionValue {
    Flag(bool),
    Number(f64),
    Text(String),
}

impl ExtensionValue {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            ExtensionValue::Number(n) => Some(*n),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisRecord {
    pub overall_score: f64,
    pub hidden_nature_notes: String,
    pub rationales: Vec<Rationale>,
    pub inferences: Vec<Inference>,
    pub bias_level: f64,
    pub bias_breakdown: Vec<BiasBreakdownEntry>,
    pub credibility_score: f64,
    pub clarity_score: f64,
    pub inferential_depth_score: f64,
    pub item_number: u64,
    pub level_of_humor: f64,
    pub level_of_sarcasm: f64,
    pub speech_acts: SpeechActProfile,
    pub context: String,
    pub undertones_score: f64,
    pub undertones_description: String,
    pub extensions: BTreeMap<String, ExtensionValue>,
}

impl AnalysisRecord {
    /// Reads a numeric field by its schema name, including numeric extensions.
    pub fn numeric(&self, name: &str) -> Option<f64> {
        use fields::*;
        let v = match name {
            SCORE => self.overall_score,
            BIAS_LEVEL => self.bias_level,
            CREDIBILITY => self.credibility_score,
            CLARITY => self.clarity_score,
            INFERENTIAL_DEPTH => self.inferential_depth_score,
            NUMBER => self.item_number as f64,
            HUMOR => self.level_of_humor,
            SARCASM => self.level_of_sarcasm,
            PERSUASIVE => self.speech_acts.persuasive,
            DECLARATIVE => self.speech_acts.declarative,
            INQUISITIVE => self.speech_acts.inquisitive,
            EXCLAMATORY => self.speech_acts.exclamatory,
            UNDERTONES_SCORE => self.undertones_score,
            other => return self.extensions.get(other).and_then(ExtensionValue::as_f64),
        };
        Some(v)
    }

    /// Reads a text field by its schema name, including text extensions.
    pub fn text(&self, name: &str) -> Option<&str> {
        use fields::*;
        match name {
            HIDDEN_NATURE_NOTES => Some(&self.hidden_nature_notes),
            CONTEXT => Some(&self.context),
            UNDERTONES_DESCRIPTION => Some(&self.undertones_description),
            other => match self.extensions.get(other) {
                Some(ExtensionValue::Text(t)) => Some(t),
                _ => None,
            },
        }
    }

    pub fn is_truncated(&self) -> bool {
        matches!(
            self.extensions.get(fields::TRUNCATED),
            Some(ExtensionValue::Flag(true))
        )
    }
}

impl Serialize for AnalysisRecord {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        record_to_object(self).serialize(serializer)
    }
}

impl<'de> Deserialize<'de> for AnalysisRecord {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let object = serde_json::Map::deserialize(deserializer)?;
        codec::record_from_object_untyped(object).map_err(serde::de::Error::custom)
    }
}
