//! The only path to model providers.
//!
//! The gateway assembles prompts (knowledge-base documents, then the
//! profile's system prompt, then the conversation), enforces the in-flight
//! cap and request spacing, retries transient failures with exponential
//! backoff, and writes an audit line per provider call. Structured requests
//! go through a bounded repair loop that feeds validator reports back to the
//! model.

mod hosted;
mod profile;
mod provider;
mod stub;

use std::io::Write;
use std::sync::Arc;
use std::time::{Duration, Instant};

use parking_lot::{Condvar, Mutex};
use serde::{Deserialize, Serialize};
use serde_json::json;

pub use self::hosted::{extract_content, BindingKind, HostedProvider, ProviderBinding, DEFAULT_MODEL};
pub use self::profile::{AgentProfile, ProfileError, PromptTemplate, RepairLoopPolicy};
pub use self::provider::{request_digest, CompletionRequest, Message, Provider, Role};
pub use self::stub::{FailureKind, JitterProvider, StubProvider, StubReply, StubScript};

use crate::ids::DocId;
use crate::record::{parse_record, AnalysisRecord, RecordError, SchemaConfig, ValidationReport, Violation};
use crate::store::{Store, StoreError};
use crate::tokens;

/// One rejected attempt of a repair loop.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AttemptFailure {
    pub attempt: u32,
    pub raw: String,
    pub report: ValidationReport,
}

#[derive(Debug, thiserror::Error)]
pub enum GatewayError {
    #[error("retryable provider failure: {0}")]
    Retryable(String),
    #[error("fatal provider failure: {0}")]
    Fatal(String),
    #[error("stub has no reply for digest {digest}")]
    StubMiss { digest: String },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error("no valid output after {} attempts", attempts.len())]
    SchemaViolation { attempts: Vec<AttemptFailure> },
    #[error(transparent)]
    Store(#[from] StoreError),
}

/// Base system prompt for prompt refinement.
pub const PROMPT_ENGINEER_PROMPT: &str = "You turn rough requests into instructions a language \
model can follow. Read the user's intent, apply the strategy documents in your knowledge base, and \
reply with one self-contained instruction text that states what to examine, how to reason about it \
and which data to return.";

#[derive(Debug, Clone, PartialEq)]
pub struct GatewaySettings {
    /// Token budget for knowledge-base text prepended to the system context.
    pub knowledge_base_budget: usize,
    pub max_in_flight: usize,
    /// Minimum spacing between request starts.
    pub min_interval: Duration,
    /// Retries after the first attempt for retryable failures.
    pub max_retries: u32,
    pub base_backoff: Duration,
    pub max_backoff: Duration,
}

impl Default for GatewaySettings {
    fn default() -> Self {
        Self {
            knowledge_base_budget: 6000,
            max_in_flight: 8,
            min_interval: Duration::ZERO,
            max_retries: 3,
            base_backoff: Duration::from_millis(250),
            max_backoff: Duration::from_secs(8),
        }
    }
}

impl GatewaySettings {
    /// No waiting between retries; for offline tests.
    pub fn immediate() -> Self {
        Self {
            base_backoff: Duration::ZERO,
            max_backoff: Duration::ZERO,
            ..Self::default()
        }
    }

    pub fn backoff(&self, retry: u32) -> Duration {
        let factor = 2u32.saturating_pow(retry);
        self.base_backoff.saturating_mul(factor).min(self.max_backoff)
    }
}

struct Limiter {
    max: usize,
    in_flight: Mutex<usize>,
    freed: Condvar,
    min_interval: Duration,
    last_start: Mutex<Option<Instant>>,
}

struct Permit<'a>(&'a Limiter);

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.in_flight.lock() -= 1;
        self.0.freed.notify_one();
    }
}

impl Limiter {
    fn new(max: usize, min_interval: Duration) -> Self {
        Self {
            max: max.max(1),
            in_flight: Mutex::new(0),
            freed: Condvar::new(),
            min_interval,
            last_start: Mutex::new(None),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut n = self.in_flight.lock();
        while *n >= self.max {
            self.freed.wait(&mut n);
        }
        *n += 1;
        drop(n);
        if !self.min_interval.is_zero() {
            let mut last = self.last_start.lock();
            if let Some(prev) = *last {
                let ready = prev + self.min_interval;
                let now = Instant::now();
                if ready > now {
                    std::thread::sleep(ready - now);
                }
            }
            *last = Some(Instant::now());
        }
        Permit(self)
    }

    fn peak_guard(&self) -> usize {
        *self.in_flight.lock()
    }
}

/// Result of a structured request.
#[derive(Debug, Clone, PartialEq)]
pub struct Structured<T> {
    pub value: T,
    pub attempt_count: u32,
}

pub struct Gateway {
    provider: Arc<dyn Provider>,
    store: Arc<Store>,
    settings: GatewaySettings,
    limiter: Limiter,
    audit: Option<Mutex<Box<dyn Write + Send>>>,
}

impl Gateway {
    pub fn new(provider: Arc<dyn Provider>, store: Arc<Store>, settings: GatewaySettings) -> Self {
        let limiter = Limiter::new(settings.max_in_flight, settings.min_interval);
        Self {
            provider,
            store,
            settings,
            limiter,
            audit: None,
        }
    }

    /// Writes one JSON line per provider call to `sink`.
    pub fn with_audit_log(mut self, sink: Box<dyn Write + Send>) -> Self {
        self.audit = Some(Mutex::new(sink));
        self
    }

    pub fn settings(&self) -> &GatewaySettings {
        &self.settings
    }

    pub fn store(&self) -> &Arc<Store> {
        &self.store
    }

    pub fn provider_name(&self) -> &str {
        self.provider.name()
    }

    #[doc(hidden)]
    pub fn in_flight(&self) -> usize {
        self.limiter.peak_guard()
    }

    fn knowledge_base(&self, docs: &[DocId]) -> Result<Option<String>, GatewayError> {
        if docs.is_empty() {
            return Ok(None);
        }
        let mut text = String::from("Knowledge base (consult before general knowledge):\n");
        for id in docs {
            let doc = self.store.document(id)?;
            let title = if doc.source_ref.is_empty() {
                doc.doc_id.to_string()
            } else {
                doc.source_ref.clone()
            };
            text.push_str(&format!("\n### {title}\n{}\n", doc.body));
        }
        Ok(Some(
            tokens::head(&text, self.settings.knowledge_base_budget).to_string(),
        ))
    }

    /// Builds the exact request `complete` would send.
    pub fn assemble(
        &self,
        profile: &AgentProfile,
        messages: &[Message],
    ) -> Result<CompletionRequest, GatewayError> {
        profile
            .check()
            .map_err(|e| GatewayError::Precondition(e.to_string()))?;
        let mut system = String::new();
        if let Some(kb) = self.knowledge_base(&profile.knowledge_base_docs)? {
            system.push_str(&kb);
            system.push_str("\n\n");
        }
        system.push_str(&profile.system_prompt);
        let mut all = Vec::with_capacity(messages.len() + 1);
        if !system.trim().is_empty() {
            all.push(Message::system(system));
        }
        all.extend_from_slice(messages);
        let mut request = CompletionRequest::new(&profile.name, all, profile.temperature);
        request.penalties = profile.penalty_settings.clone();
        Ok(request)
    }

    /// Sends one request and returns the provider text verbatim.
    pub fn complete(&self, profile: &AgentProfile, messages: &[Message]) -> Result<String, GatewayError> {
        let request = self.assemble(profile, messages)?;
        self.send(&request)
    }

    /// Sends an assembled request, retrying retryable failures.
    pub fn send(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let mut retry = 0;
        loop {
            let started = Instant::now();
            let outcome = {
                let _permit = self.limiter.acquire();
                self.provider.complete(request)
            };
            let latency = started.elapsed();
            self.audit(request, &outcome, latency, retry + 1);
            match outcome {
                Err(GatewayError::Retryable(msg)) if retry < self.settings.max_retries => {
                    tracing::warn!(digest = %request.digest, attempt = retry + 1, "retrying: {msg}");
                    std::thread::sleep(self.settings.backoff(retry));
                    retry += 1;
                }
                other => return other,
            }
        }
    }

    fn audit(
        &self,
        request: &CompletionRequest,
        outcome: &Result<String, GatewayError>,
        latency: Duration,
        attempt: u32,
    ) {
        tracing::info!(
            agent = %request.agent,
            digest = %request.digest,
            temperature = request.temperature,
            latency_ms = latency.as_millis() as u64,
            ok = outcome.is_ok(),
            "provider call"
        );
        let Some(sink) = &self.audit else { return };
        let (status, response) = match outcome {
            Ok(text) => ("ok", text.clone()),
            Err(e) => ("error", e.to_string()),
        };
        let line = json!({
            "ts": chrono::Utc::now().to_rfc3339(),
            "provider": self.provider.name(),
            "agent": request.agent,
            "digest": request.digest,
            "temperature": request.temperature,
            "penalties": request.penalties,
            "attempt": attempt,
            "latencyMs": latency.as_millis() as u64,
            "status": status,
            "messages": request.messages,
            "response": response,
        });
        let mut sink = sink.lock();
        if writeln!(sink, "{line}").and_then(|_| sink.flush()).is_err() {
            tracing::error!("audit log write failed");
        }
    }

    /// Repair loop: re-prompts with validator feedback until `accept`
    /// succeeds or the policy's attempts run out.
    pub fn complete_with_repair<T>(
        &self,
        profile: &AgentProfile,
        messages: &[Message],
        policy: &RepairLoopPolicy,
        mut accept: impl FnMut(&str) -> Result<T, ValidationReport>,
    ) -> Result<Structured<T>, GatewayError> {
        policy
            .check()
            .map_err(|e| GatewayError::Precondition(e.to_string()))?;
        let mut conversation = messages.to_vec();
        let mut failures = Vec::new();
        for attempt in 1..=policy.max_attempts {
            let raw = self.complete(profile, &conversation)?;
            match accept(&raw) {
                Ok(value) => {
                    return Ok(Structured {
                        value,
                        attempt_count: attempt,
                    })
                }
                Err(report) => {
                    tracing::debug!(attempt, %report, "structured output rejected");
                    conversation.push(Message::assistant(raw.clone()));
                    conversation.push(Message::user(policy.feedback(&report.to_string())));
                    failures.push(AttemptFailure {
                        attempt,
                        raw,
                        report,
                    });
                }
            }
        }
        Err(GatewayError::SchemaViolation { attempts: failures })
    }

    /// Requests an analysis record valid under `schema`.
    pub fn complete_structured(
        &self,
        profile: &AgentProfile,
        messages: &[Message],
        schema: &SchemaConfig,
        policy: &RepairLoopPolicy,
    ) -> Result<Structured<AnalysisRecord>, GatewayError> {
        schema
            .check()
            .map_err(|e| GatewayError::Precondition(e.to_string()))?;
        self.complete_with_repair(profile, messages, policy, |raw| {
            parse_record(raw, schema).map_err(report_for)
        })
    }

    /// Turns a stated intent into an engineered system prompt and stores it
    /// as a new prompt revision.
    pub fn refine_prompt(
        &self,
        intent: &str,
        strategy_docs: &[DocId],
    ) -> Result<PromptTemplate, GatewayError> {
        if intent.trim().is_empty() {
            return Err(GatewayError::Precondition("intent is empty".into()));
        }
        let profile = AgentProfile::new("prompt-engineer", "PROMPT-ENGINEER", PROMPT_ENGINEER_PROMPT, 0.0)
            .with_knowledge_base(strategy_docs.to_vec());
        let text = self.complete(&profile, &[Message::user(intent)])?;
        Ok(self.store.put_prompt(intent, &text)?)
    }
}

/// Folds any record error into a validation report for repair feedback.
pub fn report_for(err: RecordError) -> ValidationReport {
    match err {
        RecordError::SchemaViolation(report) | RecordError::RowViolation { report, .. } => report,
        other => ValidationReport {
            violations: vec![Violation::new("payload", "unparseable", other.to_string())],
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures;
    use crate::store::NewDocument;
    use std::sync::atomic::{AtomicUsize, Ordering};

    fn gateway(stub: StubProvider) -> (Gateway, Arc<StubProvider>) {
        let stub = Arc::new(stub);
        let gw = Gateway::new(
            stub.clone(),
            Arc::new(Store::in_memory()),
            GatewaySettings::immediate(),
        );
        (gw, stub)
    }

    fn shirley() -> AgentProfile {
        AgentProfile::new("shirley-v1", "SHIRLEY", "Rate the judgment.", 0.0)
    }

    #[test]
    fn scripted_digest_returns_ok_at_any_temperature() {
        for t in [0.0, 0.9, 2.0] {
            let profile = shirley().with_temperature(t);
            let (gw, _) = gateway(StubProvider::new());
            let digest = gw.assemble(&profile, &[Message::user("hi")]).unwrap().digest;
            let (gw, _) = gateway(StubProvider::new().script(digest, "OK"));
            assert_eq!(gw.complete(&profile, &[Message::user("hi")]).unwrap(), "OK");
        }
    }

    #[test]
    fn deterministic_at_temperature_zero() {
        let (gw, _) = gateway(StubProvider::new().responder(|r| Some(format!("echo {}", r.digest))));
        let a = gw.complete(&shirley(), &[Message::user("x")]).unwrap();
        let b = gw.complete(&shirley(), &[Message::user("x")]).unwrap();
        assert_eq!(a.as_bytes(), b.as_bytes());
    }

    #[test]
    fn unscripted_digest_is_stub_miss() {
        let (gw, _) = gateway(StubProvider::new());
        let expected = gw.assemble(&shirley(), &[Message::user("?")]).unwrap().digest;
        match gw.complete(&shirley(), &[Message::user("?")]) {
            Err(GatewayError::StubMiss { digest }) => assert_eq!(digest, expected),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn retryable_failures_are_retried_fatal_are_not() {
        let (gw, stub) = gateway(
            StubProvider::new().agent("SHIRLEY", [StubReply::retryable("503"), "fine".into()]),
        );
        assert_eq!(gw.complete(&shirley(), &[]).unwrap(), "fine");
        assert_eq!(stub.call_count(), 2);

        let (gw, stub) = gateway(StubProvider::new().agent("SHIRLEY", [StubReply::fatal("401")]));
        assert!(matches!(gw.complete(&shirley(), &[]), Err(GatewayError::Fatal(_))));
        assert_eq!(stub.call_count(), 1);

        let (gw, stub) = gateway(StubProvider::new().agent("SHIRLEY", [StubReply::retryable("down")]));
        assert!(matches!(gw.complete(&shirley(), &[]), Err(GatewayError::Retryable(_))));
        assert_eq!(stub.call_count(), 4);
    }

    #[test]
    fn backoff_grows_and_caps() {
        let s = GatewaySettings::default();
        assert_eq!(s.backoff(0), Duration::from_millis(250));
        assert_eq!(s.backoff(2), Duration::from_secs(1));
        assert_eq!(s.backoff(10), Duration::from_secs(8));
    }

    #[test]
    fn knowledge_base_is_prepended_and_truncated() {
        let store = Arc::new(Store::in_memory());
        let rules = store
            .ingest_document(NewDocument {
                jurisdiction: "other".into(),
                language: "en".into(),
                court: String::new(),
                decision_date: None,
                source_ref: "Arbitration Rules".into(),
                body: "Rule one text. ".repeat(50),
            })
            .unwrap();
        let settings = GatewaySettings {
            knowledge_base_budget: 20,
            ..GatewaySettings::immediate()
        };
        let gw = Gateway::new(Arc::new(StubProvider::new()), store, settings);
        let profile = AgentProfile::new("sara-v1", "SARA", "Arbitrate.", 0.0)
            .with_knowledge_base(vec![rules]);
        let req = gw.assemble(&profile, &[Message::user("case")]).unwrap();
        let system = &req.messages[0].content;
        assert!(system.starts_with("Knowledge base"));
        assert!(system.contains("### Arbitration Rules"));
        assert!(system.ends_with("Arbitrate."));
        assert_eq!(tokens::count_tokens(system), 20 + 1);

        let missing = profile.with_knowledge_base(vec![DocId::from("doc-nope")]);
        assert!(matches!(
            gw.assemble(&missing, &[]),
            Err(GatewayError::Store(StoreError::NotFound { .. }))
        ));
    }

    #[test]
    fn repair_loop_second_attempt_succeeds() {
        let (gw, stub) = gateway(
            StubProvider::new().agent("SHIRLEY", ["{\"Score\": 8}", &fixtures::sample_payload(0)]),
        );
        let out = gw
            .complete_structured(&shirley(), &[Message::user("doc")], &SchemaConfig::core(), &RepairLoopPolicy::default())
            .unwrap();
        assert_eq!(out.attempt_count, 2);
        assert_eq!(out.value.bias_level, 2.3);
        // the retry carried the first report back to the model
        let second = &stub.calls()[1];
        let feedback = second.last_user().unwrap();
        assert!(feedback.contains("missing required field biasLevel"), "{feedback}");
        assert_eq!(second.messages[second.messages.len() - 2].content, "{\"Score\": 8}");
    }

    #[test]
    fn repair_loop_first_attempt() {
        let (gw, _) = gateway(StubProvider::new().agent("SHIRLEY", [fixtures::sample_payload(5)]));
        let out = gw
            .complete_structured(&shirley(), &[], &SchemaConfig::core(), &RepairLoopPolicy::default())
            .unwrap();
        assert_eq!(out.attempt_count, 1);
    }

    #[test]
    fn repair_loop_exhaustion_keeps_every_attempt() {
        let (gw, _) = gateway(StubProvider::new().agent("SHIRLEY", ["", "not json", "{\"Score\": 99}"]));
        match gw.complete_structured(&shirley(), &[], &SchemaConfig::core(), &RepairLoopPolicy::default()) {
            Err(GatewayError::SchemaViolation { attempts }) => {
                assert_eq!(attempts.len(), 3);
                assert_eq!(attempts[1].raw, "not json");
                assert!(attempts[0].report.mentions("empty payload") || !attempts[0].report.is_valid());
                assert!(attempts[2].report.mentions("missing required field biasLevel"));
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn zero_attempt_policy_rejected() {
        let (gw, _) = gateway(StubProvider::new());
        assert!(matches!(
            gw.complete_structured(&shirley(), &[], &SchemaConfig::core(), &RepairLoopPolicy::with_max_attempts(0)),
            Err(GatewayError::Precondition(_))
        ));
    }

    #[test]
    fn refine_prompt_stores_revisions() {
        let (gw, stub) = gateway(StubProvider::new().agent("PROMPT-ENGINEER", ["You rate judgments."]));
        let intent = "rate judgments for bias and undertones";
        let a = gw.refine_prompt(intent, &[]).unwrap();
        let b = gw.refine_prompt(intent, &[]).unwrap();
        assert_eq!(a.text, "You rate judgments.");
        assert_eq!(a.text, b.text);
        assert_ne!(a.revision_id, b.revision_id);
        assert!(stub.calls()[0].messages[0].content.starts_with(PROMPT_ENGINEER_PROMPT));
        assert!(matches!(gw.refine_prompt("  ", &[]), Err(GatewayError::Precondition(_))));
    }

    #[test]
    fn audit_log_lines() {
        #[derive(Clone, Default)]
        struct Sink(Arc<Mutex<Vec<u8>>>);
        impl Write for Sink {
            fn write(&mut self, buf: &[u8]) -> std::io::Result<usize> {
                self.0.lock().extend_from_slice(buf);
                Ok(buf.len())
            }
            fn flush(&mut self) -> std::io::Result<()> {
                Ok(())
            }
        }
        let sink = Sink::default();
        let gw = Gateway::new(
            Arc::new(StubProvider::new().agent("SHIRLEY", ["a"])),
            Arc::new(Store::in_memory()),
            GatewaySettings::immediate(),
        )
        .with_audit_log(Box::new(sink.clone()));
        gw.complete(&shirley(), &[Message::user("x")]).unwrap();
        gw.complete(&shirley(), &[Message::user("y")]).unwrap();
        let text = String::from_utf8(sink.0.lock().clone()).unwrap();
        let lines: Vec<serde_json::Value> =
            text.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 2);
        assert_eq!(lines[0]["agent"], "SHIRLEY");
        assert_eq!(lines[0]["status"], "ok");
        assert_eq!(lines[0]["digest"].as_str().unwrap().len(), 64);
    }

    #[test]
    fn in_flight_cap_is_respected() {
        struct Slow {
            now: AtomicUsize,
            peak: AtomicUsize,
        }
        impl Provider for Slow {
            fn name(&self) -> &str {
                "slow"
            }
            fn complete(&self, _: &CompletionRequest) -> Result<String, GatewayError> {
                let n = self.now.fetch_add(1, Ordering::SeqCst) + 1;
                self.peak.fetch_max(n, Ordering::SeqCst);
                std::thread::sleep(Duration::from_millis(20));
                self.now.fetch_sub(1, Ordering::SeqCst);
                Ok("x".into())
            }
        }
        let slow = Arc::new(Slow {
            now: AtomicUsize::new(0),
            peak: AtomicUsize::new(0),
        });
        let settings = GatewaySettings {
            max_in_flight: 2,
            ..GatewaySettings::immediate()
        };
        let gw = Gateway::new(slow.clone(), Arc::new(Store::in_memory()), settings);
        std::thread::scope(|s| {
            for _ in 0..6 {
                s.spawn(|| gw.complete(&shirley(), &[]).unwrap());
            }
        });
        assert!(slow.peak.load(Ordering::SeqCst) <= 2);
        assert_eq!(gw.in_flight(), 0);
    }
}
