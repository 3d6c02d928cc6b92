//! Corpus store: documents, runs, records, and the pipeline's other
//! persistent entities (profiles, prompt revisions, findings, cases).
//!
//! Backed by a single append-only JSON-lines file. Every mutation appends one
//! event; opening the file replays the log into in-memory indexes. Without a
//! path the store is purely in-memory.

use std::collections::{BTreeMap, BTreeSet, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use chrono::{DateTime, NaiveDate, Utc};
use parking_lot::{Mutex, RwLock};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::aggregator::Finding;
use crate::arbitration::ArbitrationCase;
use crate::gateway::{AgentProfile, PromptTemplate};
use crate::ids::{CaseId, DocId, FindingId, ProfileId, PromptRevisionId, RecordId, RunId};
use crate::record::{
    export_csv, validate_record, AnalysisRecord, RecordError, SchemaConfig, SchemaError,
    ValidationReport,
};

pub const DEFAULT_BATCH_SIZE: usize = 100;

#[derive(Debug, thiserror::Error)]
pub enum StoreError {
    #[error("{kind} {id} not found")]
    NotFound { kind: &'static str, id: String },
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("conflict: {0}")]
    Conflict(String),
    #[error("invalid record: {0}")]
    InvalidRecord(ValidationReport),
    #[error(transparent)]
    Schema(#[from] SchemaError),
    #[error(transparent)]
    Csv(#[from] RecordError),
    #[error("store log line {line}: {message}")]
    Corrupt { line: usize, message: String },
    #[error("store i/o: {0}")]
    Io(#[from] std::io::Error),
}

impl StoreError {
    pub fn not_found(kind: &'static str, id: impl ToString) -> Self {
        StoreError::NotFound {
            kind,
            id: id.to_string(),
        }
    }
}

pub type Result<T, E = StoreError> = std::result::Result<T, E>;

/// Jurisdiction tags accepted at ingest.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JurisdictionRegistry {
    tags: BTreeSet<String>,
}

impl JurisdictionRegistry {
    pub fn new<I, S>(tags: I) -> Self
    where
        I: IntoIterator<Item = S>,
        S: Into<String>,
    {
        Self {
            tags: tags.into_iter().map(Into::into).collect(),
        }
    }

    pub fn contains(&self, tag: &str) -> bool {
        self.tags.contains(tag)
    }

    pub fn tags(&self) -> impl Iterator<Item = &str> {
        self.tags.iter().map(String::as_str)
    }
}

impl Default for JurisdictionRegistry {
    fn default() -> Self {
        Self::new(["US", "UK", "Rwanda", "Sweden", "HongKong", "other"])
    }
}

/// A judgment as submitted for ingest.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct NewDocument {
    pub jurisdiction: String,
    pub language: String,
    #[serde(default)]
    pub court: String,
    #[serde(default)]
    pub decision_date: Option<NaiveDate>,
    #[serde(default)]
    pub source_ref: String,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct JudgmentDocument {
    pub doc_id: DocId,
    pub jurisdiction: String,
    pub language: String,
    pub court: String,
    pub decision_date: Option<NaiveDate>,
    pub source_ref: String,
    pub body: String,
}

/// Content-derived id: identical (sourceRef, body) pairs share an id.
pub fn document_id(source_ref: &str, body: &str) -> DocId {
    let mut hasher = Sha256::new();
    hasher.update(source_ref.as_bytes());
    hasher.update([0u8]);
    hasher.update(body.as_bytes());
    let digest = hasher.finalize();
    DocId(format!("doc-{}", &hex::encode(digest)[..12]))
}

/// Loose BCP-47 shape check: a 2-3 letter primary tag plus alphanumeric subtags.
pub fn is_language_tag(tag: &str) -> bool {
    let mut parts = tag.split('-');
    let primary = parts.next().unwrap_or_default();
    (2..=3).contains(&primary.len())
        && primary.chars().all(|c| c.is_ascii_alphabetic())
        && parts.all(|p| (1..=8).contains(&p.len()) && p.chars().all(|c| c.is_ascii_alphanumeric()))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunStatus {
    Pending,
    Complete,
    Failed,
}

/// Why a run exists. Calibration and repeatability runs are kept apart from
/// analysis runs and hidden from unscoped queries.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RunKind {
    Analysis,
    Calibration,
    Repeatability,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentFailure {
    pub doc_id: DocId,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AnalysisRun {
    pub run_id: RunId,
    pub profile_id: ProfileId,
    pub profile_revision: u32,
    pub temperature: f64,
    pub penalty_settings: BTreeMap<String, f64>,
    pub schema_version: String,
    pub kind: RunKind,
    pub started_at: DateTime<Utc>,
    pub finished_at: Option<DateTime<Utc>>,
    pub status: RunStatus,
    #[serde(default)]
    pub failures: Vec<DocumentFailure>,
}

/// Parameters snapshotted into a new run.
#[derive(Debug, Clone, PartialEq)]
pub struct NewRun {
    pub profile_id: ProfileId,
    pub profile_revision: u32,
    pub temperature: f64,
    pub penalty_settings: BTreeMap<String, f64>,
    pub schema_version: String,
    pub kind: RunKind,
}

impl NewRun {
    pub fn for_profile(profile: &AgentProfile, schema_version: &str, kind: RunKind) -> Self {
        Self {
            profile_id: profile.profile_id.clone(),
            profile_revision: profile.revision,
            temperature: profile.temperature,
            penalty_settings: profile.penalty_settings.clone(),
            schema_version: schema_version.to_string(),
            kind,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StoredRecord {
    pub record_id: RecordId,
    pub run_id: RunId,
    pub doc_id: DocId,
    pub record: AnalysisRecord,
    pub attempt_count: u32,
    pub created_at: DateTime<Utc>,
}

/// Inclusive bounds on one numeric field.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FieldRange {
    pub field: String,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

impl FieldRange {
    pub fn at_least(field: &str, min: f64) -> Self {
        Self {
            field: field.to_string(),
            min: Some(min),
            max: None,
        }
    }

    pub fn matches(&self, record: &AnalysisRecord) -> bool {
        record.numeric(&self.field).is_some_and(|v| {
            self.min.is_none_or(|lo| v >= lo) && self.max.is_none_or(|hi| v <= hi)
        })
    }
}

/// Conjunction of predicates over stored records.
///
/// Without a `run_id`, only records from analysis runs are visible unless
/// `include_auxiliary` is set.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordFilter {
    #[serde(default)]
    pub run_id: Option<RunId>,
    #[serde(default)]
    pub doc_id: Option<DocId>,
    #[serde(default)]
    pub jurisdiction: Option<String>,
    #[serde(default)]
    pub ranges: Vec<FieldRange>,
    #[serde(default)]
    pub include_auxiliary: bool,
}

impl RecordFilter {
    pub fn run(run_id: RunId) -> Self {
        Self {
            run_id: Some(run_id),
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DocumentFilter {
    #[serde(default)]
    pub jurisdiction: Option<String>,
    #[serde(default)]
    pub language: Option<String>,
    #[serde(default)]
    pub doc_ids: Option<Vec<DocId>>,
}

impl DocumentFilter {
    pub fn matches(&self, doc: &JudgmentDocument) -> bool {
        self.jurisdiction.as_ref().is_none_or(|j| &doc.jurisdiction == j)
            && self.language.as_ref().is_none_or(|l| &doc.language == l)
            && self.doc_ids.as_ref().is_none_or(|ids| ids.contains(&doc.doc_id))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(tag = "event", content = "data", rename_all = "camelCase")]
enum Event {
    Document(JudgmentDocument),
    DocumentDeleted(DocId),
    Run(AnalysisRun),
    RunDeleted(RunId),
    Record(StoredRecord),
    Profile(AgentProfile),
    Prompt(PromptTemplate),
    Finding(Finding),
    Case(ArbitrationCase),
}

#[derive(Default)]
struct State {
    documents: BTreeMap<DocId, JudgmentDocument>,
    runs: BTreeMap<RunId, AnalysisRun>,
    records: BTreeMap<RecordId, StoredRecord>,
    run_docs: HashSet<(RunId, DocId)>,
    profiles: BTreeMap<ProfileId, Vec<AgentProfile>>,
    prompts: BTreeMap<PromptRevisionId, PromptTemplate>,
    findings: BTreeMap<FindingId, Finding>,
    cases: BTreeMap<CaseId, ArbitrationCase>,
}

impl State {
    fn apply(&mut self, event: Event) {
        match event {
            Event::Document(doc) => {
                self.documents.insert(doc.doc_id.clone(), doc);
            }
            Event::DocumentDeleted(id) => {
                self.documents.remove(&id);
            }
            Event::Run(run) => {
                self.runs.insert(run.run_id, run);
            }
            Event::RunDeleted(id) => {
                self.runs.remove(&id);
            }
            Event::Record(rec) => {
                self.run_docs.insert((rec.run_id, rec.doc_id.clone()));
                self.records.insert(rec.record_id, rec);
            }
            Event::Profile(profile) => {
                self.profiles
                    .entry(profile.profile_id.clone())
                    .or_default()
                    .push(profile);
            }
            Event::Prompt(prompt) => {
                self.prompts.insert(prompt.revision_id, prompt);
            }
            Event::Finding(finding) => {
                self.findings.insert(finding.finding_id, finding);
            }
            Event::Case(case) => {
                self.cases.insert(case.case_id, case);
            }
        }
    }

    fn next_run(&self) -> RunId {
        RunId(self.runs.keys().next_back().map_or(1, |r| r.0 + 1))
    }

    fn next_record(&self) -> RecordId {
        RecordId(self.records.keys().next_back().map_or(1, |r| r.0 + 1))
    }
}

pub struct Store {
    state: RwLock<State>,
    log: Mutex<Option<BufWriter<File>>>,
    path: Option<PathBuf>,
    registry: JurisdictionRegistry,
    // run ids are never reused, even after deletion
    run_high_water: Mutex<u64>,
}

impl Store {
    pub fn in_memory() -> Self {
        Self::with_state(State::default(), None, None)
    }

    /// Opens (or creates) a store file and replays its log.
    pub fn open(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref().to_path_buf();
        let mut state = State::default();
        let mut high_water = 0;
        if path.exists() {
            let reader = BufReader::new(File::open(&path)?);
            for (i, line) in reader.lines().enumerate() {
                let line = line?;
                if line.trim().is_empty() {
                    continue;
                }
                let event: Event = serde_json::from_str(&line).map_err(|e| StoreError::Corrupt {
                    line: i + 1,
                    message: e.to_string(),
                })?;
                if let Event::Run(run) = &event {
                    high_water = high_water.max(run.run_id.0);
                }
                state.apply(event);
            }
        } else if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent)?;
        }
        let file = OpenOptions::new().create(true).append(true).open(&path)?;
        let mut store = Self::with_state(state, Some(BufWriter::new(file)), Some(path));
        *store.run_high_water.get_mut() = high_water;
        Ok(store)
    }

    fn with_state(state: State, log: Option<BufWriter<File>>, path: Option<PathBuf>) -> Self {
        Self {
            state: RwLock::new(state),
            log: Mutex::new(log),
            path,
            registry: JurisdictionRegistry::default(),
            run_high_water: Mutex::new(0),
        }
    }

    pub fn with_registry(mut self, registry: JurisdictionRegistry) -> Self {
        self.registry = registry;
        self
    }

    pub fn registry(&self) -> &JurisdictionRegistry {
        &self.registry
    }

    pub fn path(&self) -> Option<&Path> {
        self.path.as_deref()
    }

    /// Appends to the log, then applies. Callers hold the state write lock so
    /// log order equals apply order.
    fn commit(&self, state: &mut State, event: Event) -> Result<()> {
        if let Some(log) = self.log.lock().as_mut() {
            let line = serde_json::to_string(&event).expect("events serialize");
            log.write_all(line.as_bytes())?;
            log.write_all(b"\n")?;
            log.flush()?;
        }
        state.apply(event);
        Ok(())
    }

    // ---- documents

    pub fn ingest_document(&self, doc: NewDocument) -> Result<DocId> {
        if doc.body.trim().is_empty() {
            return Err(StoreError::Rejected("document body is empty".into()));
        }
        if !self.registry.contains(&doc.jurisdiction) {
            return Err(StoreError::Rejected(format!(
                "unknown jurisdiction {:?}",
                doc.jurisdiction
            )));
        }
        if !is_language_tag(&doc.language) {
            return Err(StoreError::Rejected(format!(
                "malformed language tag {:?}",
                doc.language
            )));
        }
        let doc_id = document_id(&doc.source_ref, &doc.body);
        let mut state = self.state.write();
        if state.documents.contains_key(&doc_id) {
            return Ok(doc_id);
        }
        let stored = JudgmentDocument {
            doc_id: doc_id.clone(),
            jurisdiction: doc.jurisdiction,
            language: doc.language,
            court: doc.court,
            decision_date: doc.decision_date,
            source_ref: doc.source_ref,
            body: doc.body,
        };
        self.commit(&mut state, Event::Document(stored))?;
        Ok(doc_id)
    }

    pub fn document(&self, id: &DocId) -> Result<JudgmentDocument> {
        self.state
            .read()
            .documents
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("document", id))
    }

    pub fn documents(&self, filter: &DocumentFilter) -> Vec<JudgmentDocument> {
        self.state
            .read()
            .documents
            .values()
            .filter(|d| filter.matches(d))
            .cloned()
            .collect()
    }

    /// Deletes a document that no record references.
    pub fn delete_document(&self, id: &DocId) -> Result<()> {
        let mut state = self.state.write();
        if !state.documents.contains_key(id) {
            return Err(StoreError::not_found("document", id));
        }
        if state.records.values().any(|r| &r.doc_id == id) {
            return Err(StoreError::Conflict(format!(
                "document {id} is referenced by stored records"
            )));
        }
        self.commit(&mut state, Event::DocumentDeleted(id.clone()))
    }

    // ---- runs

    pub fn create_run(&self, new: NewRun) -> Result<AnalysisRun> {
        if !(0.0..=2.0).contains(&new.temperature) {
            return Err(StoreError::Rejected(format!(
                "temperature {} outside [0, 2]",
                new.temperature
            )));
        }
        SchemaConfig::by_version(&new.schema_version)?;
        let mut state = self.state.write();
        let mut high_water = self.run_high_water.lock();
        let run_id = RunId(state.next_run().0.max(*high_water + 1));
        *high_water = run_id.0;
        let run = AnalysisRun {
            run_id,
            profile_id: new.profile_id,
            profile_revision: new.profile_revision,
            temperature: new.temperature,
            penalty_settings: new.penalty_settings,
            schema_version: new.schema_version,
            kind: new.kind,
            started_at: Utc::now(),
            finished_at: None,
            status: RunStatus::Pending,
            failures: Vec::new(),
        };
        self.commit(&mut state, Event::Run(run.clone()))?;
        Ok(run)
    }

    pub fn finish_run(
        &self,
        run_id: RunId,
        status: RunStatus,
        failures: Vec<DocumentFailure>,
    ) -> Result<AnalysisRun> {
        let mut state = self.state.write();
        let mut run = state
            .runs
            .get(&run_id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("run", run_id))?;
        let now = Utc::now();
        run.finished_at = Some(now.max(run.started_at));
        run.status = status;
        run.failures = failures;
        self.commit(&mut state, Event::Run(run.clone()))?;
        Ok(run)
    }

    pub fn run(&self, run_id: RunId) -> Result<AnalysisRun> {
        self.state
            .read()
            .runs
            .get(&run_id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("run", run_id))
    }

    pub fn runs(&self) -> Vec<AnalysisRun> {
        self.state.read().runs.values().cloned().collect()
    }

    /// Deletes a run that holds no records.
    pub fn delete_run(&self, run_id: RunId) -> Result<()> {
        let mut state = self.state.write();
        if !state.runs.contains_key(&run_id) {
            return Err(StoreError::not_found("run", run_id));
        }
        if state.records.values().any(|r| r.run_id == run_id) {
            return Err(StoreError::Conflict(format!(
                "run {run_id} still holds records"
            )));
        }
        self.commit(&mut state, Event::RunDeleted(run_id))
    }

    // ---- records

    pub fn put_record(
        &self,
        run_id: RunId,
        doc_id: &DocId,
        record: AnalysisRecord,
        attempt_count: u32,
    ) -> Result<RecordId> {
        let mut state = self.state.write();
        let run = state
            .runs
            .get(&run_id)
            .ok_or_else(|| StoreError::not_found("run", run_id))?;
        if !state.documents.contains_key(doc_id) {
            return Err(StoreError::not_found("document", doc_id));
        }
        let schema = SchemaConfig::by_version(&run.schema_version)?;
        let report = validate_record(&record, &schema)?;
        if !report.is_valid() {
            return Err(StoreError::InvalidRecord(report));
        }
        if state.run_docs.contains(&(run_id, doc_id.clone())) {
            return Err(StoreError::Conflict(format!(
                "run {run_id} already holds a record for {doc_id}"
            )));
        }
        let record_id = state.next_record();
        let stored = StoredRecord {
            record_id,
            run_id,
            doc_id: doc_id.clone(),
            record,
            attempt_count,
            created_at: Utc::now(),
        };
        self.commit(&mut state, Event::Record(stored))?;
        Ok(record_id)
    }

    pub fn record(&self, id: RecordId) -> Result<StoredRecord> {
        self.state
            .read()
            .records
            .get(&id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("record", id))
    }

    /// Records satisfying every predicate of `filter`, ordered by record id.
    pub fn query_records(&self, filter: &RecordFilter) -> Vec<StoredRecord> {
        let state = self.state.read();
        state
            .records
            .values()
            .filter(|r| {
                let Some(run) = state.runs.get(&r.run_id) else {
                    return false;
                };
                let run_ok = match filter.run_id {
                    Some(id) => r.run_id == id,
                    None => filter.include_auxiliary || run.kind == RunKind::Analysis,
                };
                run_ok
                    && filter.doc_id.as_ref().is_none_or(|d| &r.doc_id == d)
                    && filter.jurisdiction.as_ref().is_none_or(|j| {
                        state
                            .documents
                            .get(&r.doc_id)
                            .is_some_and(|doc| &doc.jurisdiction == j)
                    })
                    && filter.ranges.iter().all(|range| range.matches(&r.record))
            })
            .cloned()
            .collect()
    }

    /// Splits a run's records into CSV batches of at most `batch_size` rows.
    pub fn export_batch(&self, run_id: RunId, batch_size: usize) -> Result<Vec<String>> {
        if batch_size == 0 {
            return Err(StoreError::Rejected("batch size must be at least 1".into()));
        }
        let run = self.run(run_id)?;
        let schema = SchemaConfig::by_version(&run.schema_version)?;
        let records: Vec<AnalysisRecord> = self
            .query_records(&RecordFilter::run(run_id))
            .into_iter()
            .map(|r| r.record)
            .collect();
        records
            .chunks(batch_size)
            .map(|chunk| export_csv(chunk, &schema).map_err(StoreError::from))
            .collect()
    }

    // ---- profiles

    /// Stores `profile` as the next revision of its lineage and returns it
    /// with the assigned revision number.
    pub fn put_profile(&self, mut profile: AgentProfile) -> Result<AgentProfile> {
        profile
            .check()
            .map_err(|e| StoreError::Rejected(e.to_string()))?;
        let mut state = self.state.write();
        for doc in &profile.knowledge_base_docs {
            if !state.documents.contains_key(doc) {
                return Err(StoreError::not_found("document", doc));
            }
        }
        profile.revision = state
            .profiles
            .get(&profile.profile_id)
            .and_then(|revs| revs.last())
            .map_or(1, |p| p.revision + 1);
        profile.created_at = Utc::now();
        self.commit(&mut state, Event::Profile(profile.clone()))?;
        Ok(profile)
    }

    /// Latest revision of a profile lineage.
    pub fn profile(&self, id: &ProfileId) -> Result<AgentProfile> {
        self.state
            .read()
            .profiles
            .get(id)
            .and_then(|revs| revs.last())
            .cloned()
            .ok_or_else(|| StoreError::not_found("profile", id))
    }

    pub fn profile_revision(&self, id: &ProfileId, revision: u32) -> Result<AgentProfile> {
        self.state
            .read()
            .profiles
            .get(id)
            .and_then(|revs| revs.iter().find(|p| p.revision == revision))
            .cloned()
            .ok_or_else(|| StoreError::not_found("profile revision", format!("{id}@{revision}")))
    }

    /// All revisions of a lineage, oldest first.
    pub fn profile_lineage(&self, id: &ProfileId) -> Result<Vec<AgentProfile>> {
        self.state
            .read()
            .profiles
            .get(id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("profile", id))
    }

    pub fn profile_ids(&self) -> Vec<ProfileId> {
        self.state.read().profiles.keys().cloned().collect()
    }

    // ---- prompt templates

    pub fn put_prompt(&self, intent: &str, text: &str) -> Result<PromptTemplate> {
        let mut state = self.state.write();
        let revision_id =
            PromptRevisionId(state.prompts.keys().next_back().map_or(1, |p| p.0 + 1));
        let prompt = PromptTemplate {
            revision_id,
            intent: intent.to_string(),
            text: text.to_string(),
            created_at: Utc::now(),
        };
        self.commit(&mut state, Event::Prompt(prompt.clone()))?;
        Ok(prompt)
    }

    pub fn prompt(&self, id: PromptRevisionId) -> Result<PromptTemplate> {
        self.state
            .read()
            .prompts
            .get(&id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("prompt revision", id))
    }

    // ---- findings

    /// Stores a finding under a fresh id (the incoming id is ignored).
    pub fn put_finding(&self, mut finding: Finding) -> Result<Finding> {
        let mut state = self.state.write();
        for id in &finding.supporting_record_ids {
            if !state.records.contains_key(id) {
                return Err(StoreError::not_found("record", id));
            }
        }
        finding.finding_id =
            FindingId(state.findings.keys().next_back().map_or(1, |f| f.0 + 1));
        self.commit(&mut state, Event::Finding(finding.clone()))?;
        Ok(finding)
    }

    pub fn finding(&self, id: FindingId) -> Result<Finding> {
        self.state
            .read()
            .findings
            .get(&id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("finding", id))
    }

    pub fn findings(&self) -> Vec<Finding> {
        self.state.read().findings.values().cloned().collect()
    }

    // ---- arbitration cases

    pub fn next_case_id(&self) -> CaseId {
        CaseId(
            self.state
                .read()
                .cases
                .keys()
                .next_back()
                .map_or(1, |c| c.0 + 1),
        )
    }

    /// Inserts a new case under a fresh id.
    pub fn insert_case(&self, mut case: ArbitrationCase) -> Result<ArbitrationCase> {
        let mut state = self.state.write();
        case.case_id = CaseId(state.cases.keys().next_back().map_or(1, |c| c.0 + 1));
        self.commit(&mut state, Event::Case(case.clone()))?;
        Ok(case)
    }

    /// Replaces a case snapshot. Transcripts may only grow.
    pub fn update_case(&self, case: &ArbitrationCase) -> Result<()> {
        let mut state = self.state.write();
        let existing = state
            .cases
            .get(&case.case_id)
            .ok_or_else(|| StoreError::not_found("case", case.case_id))?;
        let prefix_kept = existing.transcript.len() <= case.transcript.len()
            && existing
                .transcript
                .iter()
                .zip(&case.transcript)
                .all(|(a, b)| a.hash == b.hash);
        if !prefix_kept {
            return Err(StoreError::Conflict(format!(
                "case {} transcript is append-only",
                case.case_id
            )));
        }
        self.commit(&mut state, Event::Case(case.clone()))
    }

    pub fn case(&self, id: CaseId) -> Result<ArbitrationCase> {
        self.state
            .read()
            .cases
            .get(&id)
            .cloned()
            .ok_or_else(|| StoreError::not_found("case", id))
    }

    pub fn cases(&self) -> Vec<ArbitrationCase> {
        self.state.read().cases.values().cloned().collect()
    }
}
