#![allow(dead_code)]

use std::sync::{Arc, OnceLock};

use regex::Regex;
use saap_core::fixtures;
use saap_core::gateway::{CompletionRequest, GatewaySettings, Provider, StubProvider, StubScript};
use saap_core::record::AnalysisRecord;
use saap_core::{GatewayError, NewDocument, Pipeline, PipelineConfig, Store};
use serde_json::Value;

pub const SAM_NARRATIVE: &str = "The bias score of this record stands far from the rest of the run.";

/// Offline provider for whole-pipeline tests.
///
/// SHIRLEY analysis prompts carry a `fixture-row-N` marker and get the
/// sample record for row N, or `overrides` when it has an entry for N. SAM
/// gets a fixed narrative. Everything else goes to the dialogue script.
pub struct FixtureProvider {
    dialogue: StubProvider,
    overrides: Vec<(usize, AnalysisRecord)>,
}

impl FixtureProvider {
    pub fn new(dialogue: StubScript) -> Self {
        Self {
            dialogue: StubProvider::from_script(dialogue),
            overrides: Vec::new(),
        }
    }

    pub fn with_override(mut self, row: usize, record: AnalysisRecord) -> Self {
        self.overrides.push((row, record));
        self
    }

    fn row(prompt: &str) -> Option<usize> {
        static MARK: OnceLock<Regex> = OnceLock::new();
        let re = MARK.get_or_init(|| Regex::new(r"fixture-row-(\d+)").unwrap());
        re.captures(prompt).and_then(|c| c[1].parse().ok())
    }
}

impl Provider for FixtureProvider {
    fn name(&self) -> &str {
        "fixture"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        if request.agent == "SAM" {
            return Ok(SAM_NARRATIVE.to_string());
        }
        if request.agent == "SHIRLEY" {
            if let Some(row) = request.last_user().and_then(Self::row) {
                if let Some((_, rec)) = self.overrides.iter().find(|(r, _)| *r == row) {
                    return Ok(fixtures::payload_for(rec));
                }
                return Ok(fixtures::sample_payload(row % fixtures::SCORE_ROWS.len()));
            }
        }
        self.dialogue.complete(request)
    }
}

pub fn doc(row: usize, jurisdiction: &str) -> NewDocument {
    NewDocument {
        jurisdiction: jurisdiction.into(),
        language: "en".into(),
        court: "Supreme Court".into(),
        decision_date: None,
        source_ref: format!("judgment {row}"),
        body: format!("fixture-row-{row}\nThe appeal concerns a commercial lease."),
    }
}

pub fn config() -> PipelineConfig {
    PipelineConfig {
        gateway: GatewaySettings::immediate(),
        ..PipelineConfig::default()
    }
}

pub fn pipeline_with(provider: Arc<dyn Provider>) -> Arc<Pipeline> {
    Arc::new(Pipeline::new(Arc::new(Store::in_memory()), provider, config()).unwrap())
}

pub fn fixture_pipeline() -> Arc<Pipeline> {
    pipeline_with(Arc::new(FixtureProvider::new(fixtures::arbitration_script())))
}

/// Drops wall-clock fields so two runs of the same operations compare equal.
pub fn normalize(value: &Value) -> Value {
    match value {
        Value::Object(map) => Value::Object(
            map.iter()
                .filter(|(k, _)| !(k.ends_with("At") || k.as_str() == "timestamp"))
                .map(|(k, v)| (k.clone(), normalize(v)))
                .collect(),
        ),
        Value::Array(items) => Value::Array(items.iter().map(normalize).collect()),
        other => other.clone(),
    }
}
