//! One facade over every module operation. The HTTP service and the CLI
//! both call these methods, and both map failures through [`ErrorCode`].

use std::collections::{BTreeMap, HashMap};
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

use crate::aggregator::{
    append_focus_instruction, compose_findings, AggregateError, ComposeOutcome, Finding,
    FindingOptions, DEFAULT_CROSS_BORDER_THRESHOLD,
};
use crate::analyzer::{
    Analyzer, AnalyzerError, AnalyzerSettings, CalibrationEntry, CalibrationReport,
    CalibrationSpec, RepeatabilityReport,
};
use crate::arbitration::{
    ArbitrationCase, ArbitrationError, Arbitrator, Phase, Turn, Verdict, DEFAULT_MAX_TURNS,
};
use crate::gateway::{AgentProfile, Gateway, GatewayError, GatewaySettings, Provider};
use crate::ids::{CaseId, DocId, FindingId, ProfileId, RunId};
use crate::record::{fields, SchemaConfig, SchemaError};
use crate::store::{
    AnalysisRun, DocumentFilter, FieldRange, JudgmentDocument, NewDocument, RecordFilter, Store,
    StoreError, StoredRecord, DEFAULT_BATCH_SIZE,
};

pub const SHIRLEY_PROFILE: &str = "shirley-v1";
pub const SAM_PROFILE: &str = "sam-v1";
pub const SARA_PROFILE: &str = "sara-v1";

/// Default page size for record listings.
pub const DEFAULT_PAGE_SIZE: usize = 100;

const SHIRLEY_PROMPT: &str = "You are SHIRLEY, an analyst of court judgments. For the judgment you \
are given, score its hidden nature (Score), bias (biasLevel, with a per-writer biasBreakdown), \
credibility, clarity, inferential depth, humor, sarcasm and undertones on 0-10 scales, split its \
rhetoric into persuasive, declarative, inquisitive and exclamatory percentages that sum to 100, \
list your rationales and inferences, and describe context and undertones. When arguing a case \
before an arbitrator, defend your analysis with specific references to the judgment.";

const SAM_PROMPT: &str = "You are SAM, who reviews batches of judgment analysis records for \
unusual values and recurring patterns. You are given a candidate finding that was selected by \
statistics over the records. Explain it plainly, citing the supporting records.";

const SARA_PROMPT: &str = "You are SARA, an arbitrator. Hear the claimant SHIRLEY and the CRITIC, \
question each party where that helps, and decide whether the claimed finding holds. Base your \
decision on the arbitration rules in your knowledge base and cite the rules you apply by number.";

/// Stable error codes shared by the HTTP service and the CLI.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ErrorCode {
    InvalidRequest,
    NotFound,
    Conflict,
    InvalidPhase,
    QuestionBudgetExhausted,
    TurnLimitExceeded,
    InsufficientData,
    EmptyCorpus,
    TypeError,
    KeyError,
    SchemaViolation,
    VerdictParseFailure,
    ProviderUnavailable,
    ProviderFatal,
    StubMiss,
    StorageError,
    ConfigError,
    RouteNotFound,
    Internal,
}

impl ErrorCode {
    pub const ALL: [ErrorCode; 19] = [
        ErrorCode::InvalidRequest,
        ErrorCode::NotFound,
        ErrorCode::Conflict,
        ErrorCode::InvalidPhase,
        ErrorCode::QuestionBudgetExhausted,
        ErrorCode::TurnLimitExceeded,
        ErrorCode::InsufficientData,
        ErrorCode::EmptyCorpus,
        ErrorCode::TypeError,
        ErrorCode::KeyError,
        ErrorCode::SchemaViolation,
        ErrorCode::VerdictParseFailure,
        ErrorCode::ProviderUnavailable,
        ErrorCode::ProviderFatal,
        ErrorCode::StubMiss,
        ErrorCode::StorageError,
        ErrorCode::ConfigError,
        ErrorCode::RouteNotFound,
        ErrorCode::Internal,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ErrorCode::InvalidRequest => "invalid_request",
            ErrorCode::NotFound => "not_found",
            ErrorCode::Conflict => "conflict",
            ErrorCode::InvalidPhase => "invalid_phase",
            ErrorCode::QuestionBudgetExhausted => "question_budget_exhausted",
            ErrorCode::TurnLimitExceeded => "turn_limit_exceeded",
            ErrorCode::InsufficientData => "insufficient_data",
            ErrorCode::EmptyCorpus => "empty_corpus",
            ErrorCode::TypeError => "type_error",
            ErrorCode::KeyError => "key_error",
            ErrorCode::SchemaViolation => "schema_violation",
            ErrorCode::VerdictParseFailure => "verdict_parse_failure",
            ErrorCode::ProviderUnavailable => "provider_unavailable",
            ErrorCode::ProviderFatal => "provider_fatal",
            ErrorCode::StubMiss => "stub_miss",
            ErrorCode::StorageError => "storage_error",
            ErrorCode::ConfigError => "config_error",
            ErrorCode::RouteNotFound => "route_not_found",
            ErrorCode::Internal => "internal",
        }
    }

    pub fn http_status(self) -> u16 {
        match self {
            ErrorCode::InvalidRequest | ErrorCode::KeyError | ErrorCode::ConfigError => 400,
            ErrorCode::NotFound | ErrorCode::RouteNotFound => 404,
            ErrorCode::Conflict | ErrorCode::InvalidPhase | ErrorCode::QuestionBudgetExhausted => 409,
            ErrorCode::TurnLimitExceeded
            | ErrorCode::InsufficientData
            | ErrorCode::EmptyCorpus
            | ErrorCode::TypeError
            | ErrorCode::SchemaViolation
            | ErrorCode::VerdictParseFailure => 422,
            ErrorCode::ProviderUnavailable | ErrorCode::ProviderFatal | ErrorCode::StubMiss => 502,
            ErrorCode::StorageError | ErrorCode::Internal => 500,
        }
    }

    /// Process exit code; distinct per code and never 0.
    pub fn exit_code(self) -> i32 {
        match self {
            ErrorCode::Internal => 1,
            ErrorCode::InvalidRequest => 2,
            ErrorCode::NotFound => 3,
            ErrorCode::Conflict => 4,
            ErrorCode::InvalidPhase => 5,
            ErrorCode::QuestionBudgetExhausted => 6,
            ErrorCode::TurnLimitExceeded => 7,
            ErrorCode::InsufficientData => 8,
            ErrorCode::EmptyCorpus => 9,
            ErrorCode::TypeError => 10,
            ErrorCode::KeyError => 11,
            ErrorCode::SchemaViolation => 12,
            ErrorCode::VerdictParseFailure => 13,
            ErrorCode::ProviderUnavailable => 14,
            ErrorCode::ProviderFatal => 15,
            ErrorCode::StubMiss => 16,
            ErrorCode::StorageError => 17,
            ErrorCode::ConfigError => 18,
            ErrorCode::RouteNotFound => 19,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum PipelineError {
    #[error("{0}")]
    InvalidRequest(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Analyzer(#[from] AnalyzerError),
    #[error(transparent)]
    Aggregate(#[from] AggregateError),
    #[error(transparent)]
    Arbitration(#[from] ArbitrationError),
    #[error(transparent)]
    Schema(#[from] SchemaError),
}

fn gateway_code(e: &GatewayError) -> ErrorCode {
    match e {
        GatewayError::Retryable(_) => ErrorCode::ProviderUnavailable,
        GatewayError::Fatal(_) => ErrorCode::ProviderFatal,
        GatewayError::StubMiss { .. } => ErrorCode::StubMiss,
        GatewayError::Precondition(_) => ErrorCode::InvalidRequest,
        GatewayError::SchemaViolation { .. } => ErrorCode::SchemaViolation,
        GatewayError::Store(e) => store_code(e),
    }
}

fn store_code(e: &StoreError) -> ErrorCode {
    match e {
        StoreError::NotFound { .. } => ErrorCode::NotFound,
        StoreError::Rejected(_) | StoreError::Schema(_) => ErrorCode::InvalidRequest,
        StoreError::Conflict(_) => ErrorCode::Conflict,
        StoreError::InvalidRecord(_) | StoreError::Csv(_) => ErrorCode::SchemaViolation,
        StoreError::Corrupt { .. } | StoreError::Io(_) => ErrorCode::StorageError,
    }
}

impl PipelineError {
    pub fn code(&self) -> ErrorCode {
        match self {
            PipelineError::InvalidRequest(_) | PipelineError::Schema(_) => ErrorCode::InvalidRequest,
            PipelineError::Store(e) => store_code(e),
            PipelineError::Gateway(e) => gateway_code(e),
            PipelineError::Analyzer(e) => match e {
                AnalyzerError::EmptyCorpus => ErrorCode::EmptyCorpus,
                AnalyzerError::Precondition(_) | AnalyzerError::Schema(_) => ErrorCode::InvalidRequest,
                AnalyzerError::Document { source, .. } => gateway_code(source),
                AnalyzerError::Gateway(g) => gateway_code(g),
                AnalyzerError::Store(s) => store_code(s),
            },
            PipelineError::Aggregate(e) => match e {
                AggregateError::InsufficientData { .. } | AggregateError::InsufficientGroups { .. } => {
                    ErrorCode::InsufficientData
                }
                AggregateError::TypeError { .. } => ErrorCode::TypeError,
                AggregateError::KeyError { .. } => ErrorCode::KeyError,
                AggregateError::Precondition(_) => ErrorCode::InvalidRequest,
                AggregateError::Gateway(g) => gateway_code(g),
                AggregateError::Store(s) => store_code(s),
            },
            PipelineError::Arbitration(e) => match e {
                ArbitrationError::Rejected(_) => ErrorCode::InvalidRequest,
                ArbitrationError::InvalidPhase { .. } => ErrorCode::InvalidPhase,
                ArbitrationError::QuestionBudgetExhausted { .. } => ErrorCode::QuestionBudgetExhausted,
                ArbitrationError::TurnLimitExceeded { .. } => ErrorCode::TurnLimitExceeded,
                ArbitrationError::VerdictParseFailure { .. } => ErrorCode::VerdictParseFailure,
                ArbitrationError::Protocol(_) => ErrorCode::SchemaViolation,
                ArbitrationError::Gateway(g) => gateway_code(g),
                ArbitrationError::Store(s) => store_code(s),
            },
        }
    }

    /// Structured context for clients, where there is any.
    pub fn details(&self) -> Option<Value> {
        let attempts = |a: &Vec<crate::gateway::AttemptFailure>| json!({ "attempts": a });
        match self {
            PipelineError::Gateway(GatewayError::SchemaViolation { attempts: a })
            | PipelineError::Analyzer(AnalyzerError::Document {
                source: GatewayError::SchemaViolation { attempts: a },
                ..
            }) => Some(attempts(a)),
            PipelineError::Analyzer(AnalyzerError::Document { doc_id, .. }) => {
                Some(json!({ "docId": doc_id }))
            }
            PipelineError::Gateway(GatewayError::StubMiss { digest }) => Some(json!({ "digest": digest })),
            PipelineError::Store(StoreError::InvalidRecord(report)) => Some(json!({ "report": report })),
            PipelineError::Arbitration(ArbitrationError::TurnLimitExceeded { max_turns, case }) => {
                Some(json!({ "maxTurns": max_turns, "caseId": case.case_id, "turns": case.transcript.len() }))
            }
            PipelineError::Arbitration(ArbitrationError::VerdictParseFailure { raw, .. }) => {
                Some(json!({ "raw": raw }))
            }
            PipelineError::Arbitration(ArbitrationError::QuestionBudgetExhausted { party }) => {
                Some(json!({ "party": party }))
            }
            PipelineError::Arbitration(ArbitrationError::InvalidPhase { phase }) => {
                Some(json!({ "phase": phase }))
            }
            _ => None,
        }
    }
}

pub type Result<T, E = PipelineError> = std::result::Result<T, E>;

#[derive(Debug, Clone, PartialEq)]
pub struct PipelineConfig {
    pub schema_version: String,
    pub workers: usize,
    pub analyzer: AnalyzerSettings,
    pub gateway: GatewaySettings,
}

impl Default for PipelineConfig {
    fn default() -> Self {
        Self {
            schema_version: SchemaConfig::DEFAULT_VERSION.to_string(),
            workers: 4,
            analyzer: AnalyzerSettings::default(),
            gateway: GatewaySettings::default(),
        }
    }
}

// ---- request and response payloads

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RunRequest {
    #[serde(default)]
    pub profile_id: Option<ProfileId>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub filter: DocumentFilter,
    #[serde(default)]
    pub workers: Option<usize>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordQuery {
    #[serde(default)]
    pub limit: Option<usize>,
    #[serde(default)]
    pub offset: Option<usize>,
    #[serde(default)]
    pub jurisdiction: Option<String>,
    /// Numeric field for `min` / `max`.
    #[serde(default)]
    pub field: Option<String>,
    #[serde(default)]
    pub min: Option<f64>,
    #[serde(default)]
    pub max: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RecordPage {
    pub run_id: RunId,
    pub total: usize,
    pub limit: usize,
    pub offset: usize,
    pub records: Vec<StoredRecord>,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CalibrationRequest {
    #[serde(default)]
    pub profile_id: Option<ProfileId>,
    pub entries: Vec<CalibrationEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepeatabilityRequest {
    pub doc_id: DocId,
    #[serde(default)]
    pub profile_id: Option<ProfileId>,
    pub n: usize,
    #[serde(default)]
    pub temperature: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AggregateRequest {
    #[serde(default)]
    pub run_id: Option<RunId>,
    #[serde(default = "default_field")]
    pub field: String,
    #[serde(default = "default_top_k", alias = "topK")]
    pub top_k: usize,
    #[serde(default)]
    pub threshold: Option<f64>,
    #[serde(default)]
    pub profile_id: Option<ProfileId>,
}

fn default_field() -> String {
    fields::BIAS_LEVEL.to_string()
}

fn default_top_k() -> usize {
    1
}

impl Default for AggregateRequest {
    fn default() -> Self {
        Self {
            run_id: None,
            field: default_field(),
            top_k: default_top_k(),
            threshold: None,
            profile_id: None,
        }
    }
}

/// Edits applied to the latest revision of a profile to form the next one.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProfileRevision {
    #[serde(default)]
    pub system_prompt: Option<String>,
    #[serde(default)]
    pub temperature: Option<f64>,
    #[serde(default)]
    pub penalty_settings: Option<BTreeMap<String, f64>>,
    #[serde(default)]
    pub knowledge_base_docs: Option<Vec<DocId>>,
    #[serde(default)]
    pub output_schema_ref: Option<String>,
    /// Question appended to the system prompt.
    #[serde(default)]
    pub focus_question: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Transcript {
    pub case_id: CaseId,
    pub phase: Phase,
    pub turns: Vec<Turn>,
    pub verdict: Option<Verdict>,
    pub phase_history: Vec<Phase>,
    pub text: String,
}

impl From<&ArbitrationCase> for Transcript {
    fn from(case: &ArbitrationCase) -> Self {
        Self {
            case_id: case.case_id,
            phase: case.phase,
            turns: case.transcript.clone(),
            verdict: case.verdict.clone(),
            phase_history: case.phase_history.clone(),
            text: case.render(),
        }
    }
}

pub struct Pipeline {
    store: Arc<Store>,
    gateway: Arc<Gateway>,
    analyzer: Analyzer,
    config: PipelineConfig,
    case_locks: Mutex<HashMap<CaseId, Arc<Mutex<()>>>>,
}

impl Pipeline {
    /// Builds the pipeline and seeds the default profiles when absent.
    pub fn new(store: Arc<Store>, provider: Arc<dyn Provider>, config: PipelineConfig) -> Result<Self> {
        SchemaConfig::by_version(&config.schema_version)?;
        if config.workers == 0 {
            return Err(PipelineError::InvalidRequest("workers must be at least 1".into()));
        }
        let gateway = Arc::new(Gateway::new(provider, store.clone(), config.gateway.clone()));
        Self::with_gateway(gateway, config)
    }

    pub fn with_gateway(gateway: Arc<Gateway>, config: PipelineConfig) -> Result<Self> {
        let store = gateway.store().clone();
        let settings = AnalyzerSettings {
            schema_version: config.schema_version.clone(),
            ..config.analyzer.clone()
        };
        let analyzer = Analyzer::new(gateway.clone()).with_settings(settings);
        let pipeline = Self {
            store,
            gateway,
            analyzer,
            config,
            case_locks: Mutex::new(HashMap::new()),
        };
        pipeline.seed_profiles()?;
        Ok(pipeline)
    }

    fn seed_profiles(&self) -> Result<()> {
        let defaults = [
            (SHIRLEY_PROFILE, "SHIRLEY", SHIRLEY_PROMPT),
            (SAM_PROFILE, "SAM", SAM_PROMPT),
            (SARA_PROFILE, "SARA", SARA_PROMPT),
        ];
        for (id, name, prompt) in defaults {
            if self.store.profile(&ProfileId::from(id)).is_err() {
                let mut profile = AgentProfile::new(id, name, prompt, 0.0);
                if id == SHIRLEY_PROFILE {
                    profile = profile.with_output_schema(&self.config.schema_version);
                }
                self.store.put_profile(profile)?;
            }
        }
        Ok(())
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn gateway(&self) -> &Arc<Gateway> {
        &self.gateway
    }

    pub fn config(&self) -> &PipelineConfig {
        &self.config
    }

    fn profile_or(&self, id: Option<&ProfileId>, default: &str) -> Result<AgentProfile> {
        let id = id.cloned().unwrap_or_else(|| ProfileId::from(default));
        Ok(self.store.profile(&id)?)
    }

    // ---- documents

    pub fn ingest(&self, doc: NewDocument) -> Result<DocId> {
        Ok(self.store.ingest_document(doc)?)
    }

    pub fn document(&self, id: &DocId) -> Result<JudgmentDocument> {
        Ok(self.store.document(id)?)
    }

    // ---- profiles

    /// Starts a new profile lineage at revision 1.
    pub fn create_profile(&self, profile: AgentProfile) -> Result<AgentProfile> {
        if self.store.profile(&profile.profile_id).is_ok() {
            return Err(StoreError::Conflict(format!(
                "profile {} exists; post a revision instead",
                profile.profile_id
            ))
            .into());
        }
        Ok(self.store.put_profile(profile)?)
    }

    pub fn revise_profile(&self, id: &ProfileId, edit: ProfileRevision) -> Result<AgentProfile> {
        let mut next = self.store.profile(id)?;
        if let Some(p) = edit.system_prompt {
            if p.trim().is_empty() {
                return Err(PipelineError::InvalidRequest("systemPrompt is empty".into()));
            }
            next.system_prompt = p;
        }
        if let Some(t) = edit.temperature {
            next.temperature = t;
        }
        if let Some(p) = edit.penalty_settings {
            next.penalty_settings = p;
        }
        if let Some(docs) = edit.knowledge_base_docs {
            next.knowledge_base_docs = docs;
        }
        if let Some(schema) = edit.output_schema_ref {
            SchemaConfig::by_version(&schema)?;
            next.output_schema_ref = Some(schema);
        }
        match edit.focus_question {
            Some(q) => Ok(append_focus_instruction(&self.store, &next, &q)?),
            None => Ok(self.store.put_profile(next)?),
        }
    }

    pub fn profile_lineage(&self, id: &ProfileId) -> Result<Vec<AgentProfile>> {
        Ok(self.store.profile_lineage(id)?)
    }

    // ---- runs and records

    pub fn start_run(&self, req: RunRequest) -> Result<AnalysisRun> {
        let mut profile = self.profile_or(req.profile_id.as_ref(), SHIRLEY_PROFILE)?;
        if let Some(t) = req.temperature {
            profile = profile.with_temperature(t);
        }
        let workers = req.workers.unwrap_or(self.config.workers);
        Ok(self.analyzer.run_batch(&req.filter, &profile, workers)?)
    }

    pub fn run(&self, run_id: RunId) -> Result<AnalysisRun> {
        Ok(self.store.run(run_id)?)
    }

    pub fn run_records(&self, run_id: RunId, query: &RecordQuery) -> Result<RecordPage> {
        self.store.run(run_id)?;
        let ranges = match (&query.field, query.min, query.max) {
            (Some(field), min, max) => vec![FieldRange {
                field: field.clone(),
                min,
                max,
            }],
            (None, None, None) => Vec::new(),
            (None, ..) => {
                return Err(PipelineError::InvalidRequest("min/max need a field".into()));
            }
        };
        let all = self.store.query_records(&RecordFilter {
            run_id: Some(run_id),
            jurisdiction: query.jurisdiction.clone(),
            ranges,
            ..RecordFilter::default()
        });
        let limit = query.limit.unwrap_or(DEFAULT_PAGE_SIZE);
        let offset = query.offset.unwrap_or(0);
        Ok(RecordPage {
            run_id,
            total: all.len(),
            limit,
            offset,
            records: all.into_iter().skip(offset).take(limit).collect(),
        })
    }

    /// The run's records as one CSV: batch concatenation with the header
    /// kept once.
    pub fn export_csv(&self, run_id: RunId) -> Result<String> {
        let run = self.store.run(run_id)?;
        let batches = self.store.export_batch(run_id, DEFAULT_BATCH_SIZE)?;
        let mut out = match batches.first() {
            Some(first) => first.clone(),
            None => {
                let schema = SchemaConfig::by_version(&run.schema_version)?;
                crate::record::export_csv(&[], &schema).map_err(StoreError::from)?
            }
        };
        for batch in batches.iter().skip(1) {
            let body = batch.split_once('\n').map_or("", |(_, rest)| rest);
            out.push_str(body);
        }
        Ok(out)
    }

    // ---- harnesses

    pub fn calibrate(&self, req: CalibrationRequest) -> Result<CalibrationReport> {
        let profile = self.profile_or(req.profile_id.as_ref(), SHIRLEY_PROFILE)?;
        let spec = CalibrationSpec { entries: req.entries };
        Ok(self.analyzer.run_calibration(&spec, &profile)?)
    }

    pub fn repeatability(&self, req: RepeatabilityRequest) -> Result<RepeatabilityReport> {
        let mut profile = self.profile_or(req.profile_id.as_ref(), SHIRLEY_PROFILE)?;
        if let Some(t) = req.temperature {
            profile = profile.with_temperature(t);
        }
        Ok(self.analyzer.run_repeatability(&req.doc_id, &profile, req.n)?)
    }

    // ---- aggregation

    pub fn aggregate_findings(&self, req: AggregateRequest) -> Result<ComposeOutcome> {
        let profile = self.profile_or(req.profile_id.as_ref(), SAM_PROFILE)?;
        let records = self.store.query_records(&RecordFilter {
            run_id: req.run_id,
            ..RecordFilter::default()
        });
        let options = FindingOptions {
            field: req.field,
            top_k: req.top_k,
            threshold: req.threshold.unwrap_or(DEFAULT_CROSS_BORDER_THRESHOLD),
        };
        Ok(compose_findings(&self.gateway, &records, self.store.as_ref(), &profile, &options)?)
    }

    pub fn finding(&self, id: FindingId) -> Result<Finding> {
        Ok(self.store.finding(id)?)
    }

    pub fn findings(&self) -> Vec<Finding> {
        self.store.findings()
    }

    // ---- arbitration

    fn arbitrator(&self) -> Result<Arbitrator<'_>> {
        let sara = self.store.profile(&ProfileId::from(SARA_PROFILE))?;
        let shirley = self.store.profile(&ProfileId::from(SHIRLEY_PROFILE))?;
        Ok(Arbitrator::new(&self.gateway, sara, shirley))
    }

    fn case_lock(&self, id: CaseId) -> Arc<Mutex<()>> {
        self.case_locks.lock().entry(id).or_default().clone()
    }

    pub fn open_arbitration(&self, finding_id: FindingId) -> Result<ArbitrationCase> {
        Ok(self.arbitrator()?.open_finding(finding_id)?)
    }

    pub fn case(&self, id: CaseId) -> Result<ArbitrationCase> {
        Ok(self.store.case(id)?)
    }

    /// Most recently opened case for a finding that is still open.
    pub fn open_case_for(&self, finding_id: FindingId) -> Option<ArbitrationCase> {
        self.store
            .cases()
            .into_iter()
            .rev()
            .find(|c| c.finding.finding_id == finding_id && !c.is_closed())
    }

    pub fn advance_case(&self, id: CaseId) -> Result<ArbitrationCase> {
        let lock = self.case_lock(id);
        let _guard = lock.lock();
        let case = self.store.case(id)?;
        Ok(self.arbitrator()?.advance(&case)?)
    }

    pub fn complete_case(&self, id: CaseId, max_turns: Option<usize>) -> Result<ArbitrationCase> {
        let lock = self.case_lock(id);
        let _guard = lock.lock();
        let case = self.store.case(id)?;
        Ok(self
            .arbitrator()?
            .run_to_completion(&case, max_turns.unwrap_or(DEFAULT_MAX_TURNS))?)
    }

    pub fn transcript(&self, id: CaseId) -> Result<Transcript> {
        Ok(Transcript::from(&self.store.case(id)?))
    }
}
