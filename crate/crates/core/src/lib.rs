//! Judgment analysis pipeline: an analyzer that scores court judgments into
//! structured records, a deterministic aggregator that ranks deviations and
//! cross-jurisdiction patterns, and an arbitration engine that adjudicates
//! flagged findings through a claimant, critic and arbitrator dialogue.

pub mod aggregator;
pub mod api;
pub mod analyzer;
pub mod arbitration;
pub mod fixtures;
pub mod gateway;
pub mod ids;
pub mod pipeline;
pub mod record;
pub mod store;
pub mod tokens;

pub use aggregator::{
    cohort_stats, compose_findings, cross_border_compare, deviation_rank, AggregateError,
    CohortStats, DeviationScore, Finding, FindingCategory, GroupKey,
};
pub use analyzer::{
    Analyzer, AnalyzerError, CalibrationReport, CalibrationSpec, RepeatabilityReport,
};
pub use arbitration::{
    ArbitrationCase, ArbitrationError, Arbitrator, Outcome, Party, Phase, Turn, TurnKind, Verdict,
};
pub use gateway::{
    AgentProfile, Gateway, GatewayError, GatewaySettings, Message, Provider, ProviderBinding,
    RepairLoopPolicy, StubProvider,
};
pub use ids::{CaseId, DocId, FindingId, ProfileId, RecordId, RunId};
pub use record::{
    export_csv, import_csv, parse_record, validate_record, AnalysisRecord, SchemaConfig,
    ValidationReport,
};
pub use store::{JudgmentDocument, NewDocument, RecordFilter, Store, StoreError, StoredRecord};
pub use pipeline::{ErrorCode, Pipeline, PipelineConfig, PipelineError};
