//! SHIRLEY: scores judgments into analysis records, and owns the
//! calibration and repeatability harnesses.

use std::collections::BTreeMap;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};

use crate::gateway::{AgentProfile, Gateway, GatewayError, Message, RepairLoopPolicy};
use crate::ids::{DocId, RunId};
use crate::record::{fields, ExtensionValue, FieldKind, SchemaConfig, SchemaError};
use crate::store::{
    AnalysisRun, DocumentFailure, DocumentFilter, JudgmentDocument, NewRun, RunKind, RunStatus,
    StoreError, StoredRecord,
};
use crate::tokens;

#[derive(Debug, thiserror::Error)]
pub enum AnalyzerError {
    #[error("no documents match the corpus filter")]
    EmptyCorpus,
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("document {doc_id}: {source}")]
    Document {
        doc_id: DocId,
        #[source]
        source: GatewayError,
    },
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalyzerSettings {
    /// Documents longer than this many tokens are excerpted.
    pub context_budget: usize,
    /// Share of the budget given to the head of an excerpted document.
    pub head_share: f64,
    pub schema_version: String,
}

impl Default for AnalyzerSettings {
    fn default() -> Self {
        Self {
            context_budget: 12_000,
            head_share: 0.7,
            schema_version: SchemaConfig::DEFAULT_VERSION.to_string(),
        }
    }
}

/// Text actually shown to the model for a document.
#[derive(Debug, Clone, PartialEq)]
pub struct Excerpt {
    pub text: String,
    pub truncated: bool,
}

/// Head+tail excerpt when `body` exceeds `budget` tokens.
pub fn excerpt(body: &str, budget: usize, head_share: f64) -> Excerpt {
    if tokens::count_tokens(body) <= budget {
        return Excerpt {
            text: body.to_string(),
            truncated: false,
        };
    }
    let head_n = ((budget as f64) * head_share.clamp(0.0, 1.0)).round() as usize;
    let tail_n = budget.saturating_sub(head_n);
    Excerpt {
        text: format!(
            "{}\n\n[... middle of the judgment omitted ...]\n\n{}",
            tokens::head(body, head_n),
            tokens::tail(body, tail_n)
        ),
        truncated: true,
    }
}

pub struct Analyzer {
    gateway: Arc<Gateway>,
    pub settings: AnalyzerSettings,
    pub policy: RepairLoopPolicy,
}

impl Analyzer {
    pub fn new(gateway: Arc<Gateway>) -> Self {
        Self {
            gateway,
            settings: AnalyzerSettings::default(),
            policy: RepairLoopPolicy::default(),
        }
    }

    pub fn with_settings(mut self, settings: AnalyzerSettings) -> Self {
        self.settings = settings;
        self
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    fn schema(&self) -> Result<SchemaConfig, AnalyzerError> {
        Ok(SchemaConfig::by_version(&self.settings.schema_version)?)
    }

    fn prompt(doc: &JudgmentDocument, text: &str, schema: &SchemaConfig) -> String {
        format!(
            "Analyze the judgment below. Reply with a single JSON object using exactly these \
             fields: {}.\n\nJurisdiction: {}\nLanguage: {}\nCourt: {}\nSource: {}\n\n{}",
            schema.csv_column_order.join(", "),
            doc.jurisdiction,
            doc.language,
            doc.court,
            doc.source_ref,
            text
        )
    }

    /// Analyzes one document and stores the record under `run_id`.
    pub fn analyze_document(
        &self,
        run_id: RunId,
        doc_id: &DocId,
        profile: &AgentProfile,
    ) -> Result<StoredRecord, AnalyzerError> {
        let store = self.gateway.store();
        let run = store.run(run_id)?;
        let doc = store.document(doc_id)?;
        let schema = SchemaConfig::by_version(&run.schema_version)?;
        let profile = profile.clone().with_temperature(run.temperature);
        let ex = excerpt(&doc.body, self.settings.context_budget, self.settings.head_share);
        if ex.truncated && schema.field(fields::TRUNCATED).is_none_or(|f| f.kind != FieldKind::Flag) {
            return Err(AnalyzerError::Precondition(format!(
                "document {doc_id} exceeds the context budget and schema {} has no truncated flag",
                schema.version
            )));
        }
        let prompt = Self::prompt(&doc, &ex.text, &schema);
        let structured = self
            .gateway
            .complete_structured(&profile, &[Message::user(prompt)], &schema, &self.policy)
            .map_err(|source| AnalyzerError::Document {
                doc_id: doc_id.clone(),
                source,
            })?;
        let mut record = structured.value;
        if ex.truncated {
            record
                .extensions
                .insert(fields::TRUNCATED.to_string(), ExtensionValue::Flag(true));
        }
        let record_id = store.put_record(run_id, doc_id, record, structured.attempt_count)?;
        tracing::debug!(run = %run_id, doc = %doc_id, record = %record_id, "document analyzed");
        Ok(store.record(record_id)?)
    }

    fn start_run(&self, profile: &AgentProfile, kind: RunKind) -> Result<AnalysisRun, AnalyzerError> {
        profile
            .check()
            .map_err(|e| AnalyzerError::Precondition(e.to_string()))?;
        Ok(self
            .gateway
            .store()
            .create_run(NewRun::for_profile(profile, &self.settings.schema_version, kind))?)
    }

    /// Analyzes every matching document with `workers` threads. Failures are
    /// recorded per document; the run completes once every document has been
    /// attempted.
    pub fn run_batch(
        &self,
        filter: &DocumentFilter,
        profile: &AgentProfile,
        workers: usize,
    ) -> Result<AnalysisRun, AnalyzerError> {
        if workers == 0 {
            return Err(AnalyzerError::Precondition("workers must be at least 1".into()));
        }
        let docs = self.gateway.store().documents(filter);
        if docs.is_empty() {
            return Err(AnalyzerError::EmptyCorpus);
        }
        let run = self.start_run(profile, RunKind::Analysis)?;
        tracing::info!(run = %run.run_id, documents = docs.len(), workers, "batch started");
        let next = AtomicUsize::new(0);
        let failures = Mutex::new(Vec::new());
        std::thread::scope(|s| {
            for _ in 0..workers.min(docs.len()) {
                s.spawn(|| loop {
                    let i = next.fetch_add(1, Ordering::Relaxed);
                    let Some(doc) = docs.get(i) else { break };
                    if let Err(e) = self.analyze_document(run.run_id, &doc.doc_id, profile) {
                        tracing::warn!(doc = %doc.doc_id, "analysis failed: {e}");
                        failures.lock().push(DocumentFailure {
                            doc_id: doc.doc_id.clone(),
                            error: e.to_string(),
                        });
                    }
                });
            }
        });
        let mut failures = failures.into_inner();
        failures.sort_by(|a, b| a.doc_id.cmp(&b.doc_id));
        let status = if failures.len() == docs.len() {
            RunStatus::Failed
        } else {
            RunStatus::Complete
        };
        tracing::info!(run = %run.run_id, failed = failures.len(), "batch finished");
        Ok(self.gateway.store().finish_run(run.run_id, status, failures)?)
    }

    /// Analyzes each baseline document in a calibration run and checks the
    /// observed values against inclusive expected ranges.
    pub fn run_calibration(
        &self,
        spec: &CalibrationSpec,
        profile: &AgentProfile,
    ) -> Result<CalibrationReport, AnalyzerError> {
        let schema = self.schema()?;
        spec.check(&schema)?;
        let store = self.gateway.store();
        for entry in &spec.entries {
            store.document(&entry.doc_id)?;
        }
        let run = self.start_run(profile, RunKind::Calibration)?;
        let mut per_entry = Vec::new();
        let mut failures = Vec::new();
        for entry in &spec.entries {
            let observed = match self.analyze_document(run.run_id, &entry.doc_id, profile) {
                Ok(stored) => Some(stored.record),
                Err(e) => {
                    failures.push(DocumentFailure {
                        doc_id: entry.doc_id.clone(),
                        error: e.to_string(),
                    });
                    None
                }
            };
            for (field, &[lo, hi]) in &entry.expected_ranges {
                let value = observed.as_ref().and_then(|r| r.numeric(field));
                per_entry.push(CalibrationResult {
                    doc_id: entry.doc_id.clone(),
                    field: field.clone(),
                    observed: value,
                    expected: [lo, hi],
                    pass: value.is_some_and(|v| lo <= v && v <= hi),
                });
            }
        }
        let status = if failures.is_empty() {
            RunStatus::Complete
        } else {
            RunStatus::Failed
        };
        store.finish_run(run.run_id, status, failures)?;
        Ok(CalibrationReport::new(run.run_id, per_entry))
    }

    /// Runs `n` identical analyses of one document and reports the spread of
    /// every numeric field. Each repetition gets its own repeatability run.
    pub fn run_repeatability(
        &self,
        doc_id: &DocId,
        profile: &AgentProfile,
        n: usize,
    ) -> Result<RepeatabilityReport, AnalyzerError> {
        if n < 2 {
            return Err(AnalyzerError::Precondition(format!("n must be at least 2, got {n}")));
        }
        let store = self.gateway.store();
        store.document(doc_id)?;
        let schema = self.schema()?;
        let mut records = Vec::with_capacity(n);
        let mut run_ids = Vec::with_capacity(n);
        for _ in 0..n {
            let run = self.start_run(profile, RunKind::Repeatability)?;
            let outcome = self.analyze_document(run.run_id, doc_id, profile);
            let failures = match &outcome {
                Ok(_) => Vec::new(),
                Err(e) => vec![DocumentFailure {
                    doc_id: doc_id.clone(),
                    error: e.to_string(),
                }],
            };
            let status = if failures.is_empty() {
                RunStatus::Complete
            } else {
                RunStatus::Failed
            };
            store.finish_run(run.run_id, status, failures)?;
            records.push(outcome?.record);
            run_ids.push(run.run_id);
        }
        let mut per_field = BTreeMap::new();
        for field in schema.numeric_fields() {
            let values: Vec<f64> = records.iter().filter_map(|r| r.numeric(field)).collect();
            if values.len() != records.len() {
                continue;
            }
            let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let spread = hi - lo;
            per_field.insert(
                field.to_string(),
                FieldSpread {
                    max_abs_spread: spread,
                    identical: spread == 0.0,
                },
            );
        }
        let mut text_fields = BTreeMap::new();
        for spec in schema.field_specs.iter().filter(|f| f.kind == FieldKind::Text) {
            let values: Vec<Option<&str>> = records.iter().map(|r| r.text(&spec.name)).collect();
            if values.iter().all(Option::is_none) {
                continue;
            }
            text_fields.insert(spec.name.clone(), values.windows(2).all(|w| w[0] == w[1]));
        }
        Ok(RepeatabilityReport {
            doc_id: doc_id.clone(),
            temperature: profile.temperature,
            n,
            run_ids,
            per_field,
            text_fields,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationEntry {
    pub doc_id: DocId,
    /// Field name to inclusive `[lo, hi]`.
    pub expected_ranges: BTreeMap<String, [f64; 2]>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationSpec {
    pub entries: Vec<CalibrationEntry>,
}

impl CalibrationSpec {
    pub fn check(&self, schema: &SchemaConfig) -> Result<(), AnalyzerError> {
        let bad = |m: String| Err(AnalyzerError::Precondition(m));
        if self.entries.is_empty() {
            return bad("calibration spec has no entries".into());
        }
        for entry in &self.entries {
            if entry.expected_ranges.is_empty() {
                return bad(format!("entry {} has no expected ranges", entry.doc_id));
            }
            for (field, &[lo, hi]) in &entry.expected_ranges {
                let Some(spec) = schema.field(field).filter(|f| f.kind.is_numeric()) else {
                    return bad(format!("{field} is not a numeric field of {}", schema.version));
                };
                let within = |v: f64| spec.min.is_none_or(|m| v >= m) && spec.max.is_none_or(|m| v <= m);
                if lo > hi || !within(lo) || !within(hi) {
                    return bad(format!("range [{lo}, {hi}] for {field} is outside the field's bounds"));
                }
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationResult {
    pub doc_id: DocId,
    pub field: String,
    pub observed: Option<f64>,
    pub expected: [f64; 2],
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationReport {
    pub run_id: RunId,
    pub per_entry: Vec<CalibrationResult>,
    pub overall_pass: bool,
}

impl CalibrationReport {
    /// `overallPass` is the conjunction of every entry.
    pub fn new(run_id: RunId, per_entry: Vec<CalibrationResult>) -> Self {
        let overall_pass = per_entry.iter().all(|e| e.pass);
        Self {
            run_id,
            per_entry,
            overall_pass,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldSpread {
    pub max_abs_spread: f64,
    pub identical: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepeatabilityReport {
    pub doc_id: DocId,
    pub temperature: f64,
    pub n: usize,
    pub run_ids: Vec<RunId>,
    pub per_field: BTreeMap<String, FieldSpread>,
    /// Text fields: whether every repetition produced the same text.
    pub text_fields: BTreeMap<String, bool>,
}
