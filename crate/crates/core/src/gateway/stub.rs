//! Offline providers for tests and demos.

use std::collections::{HashMap, VecDeque};
use std::sync::Arc;

use parking_lot::Mutex;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::provider::{CompletionRequest, Provider};
use super::GatewayError;

/// One scripted reply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum StubReply {
    Text(String),
    Failure { failure: FailureKind, message: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum FailureKind {
    Retryable,
    Fatal,
}

impl StubReply {
    pub fn retryable(message: &str) -> Self {
        StubReply::Failure {
            failure: FailureKind::Retryable,
            message: message.to_string(),
        }
    }

    pub fn fatal(message: &str) -> Self {
        StubReply::Failure {
            failure: FailureKind::Fatal,
            message: message.to_string(),
        }
    }

    fn into_result(self) -> Result<String, GatewayError> {
        match self {
            StubReply::Text(t) => Ok(t),
            StubReply::Failure {
                failure: FailureKind::Retryable,
                message,
            } => Err(GatewayError::Retryable(message)),
            StubReply::Failure {
                failure: FailureKind::Fatal,
                message,
            } => Err(GatewayError::Fatal(message)),
        }
    }
}

impl From<&str> for StubReply {
    fn from(s: &str) -> Self {
        StubReply::Text(s.to_string())
    }
}

impl From<String> for StubReply {
    fn from(s: String) -> Self {
        StubReply::Text(s)
    }
}

/// Serializable stub configuration.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct StubScript {
    #[serde(default)]
    pub by_digest: HashMap<String, String>,
    #[serde(default)]
    pub by_agent: HashMap<String, Vec<StubReply>>,
}

type Responder = dyn Fn(&CompletionRequest) -> Option<String> + Send + Sync;

/// Scripted provider.
///
/// Lookup order: exact request digest, then the per-agent reply queue, then
/// the responder closure. Agent queues are consumed front to back and the
/// last reply repeats once the queue is down to one entry. Anything else is a
/// [`GatewayError::StubMiss`].
#[derive(Default)]
pub struct StubProvider {
    by_digest: HashMap<String, String>,
    by_agent: Mutex<HashMap<String, VecDeque<StubReply>>>,
    responder: Option<Arc<Responder>>,
    calls: Mutex<Vec<CompletionRequest>>,
}

impl StubProvider {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn from_script(script: StubScript) -> Self {
        let mut stub = Self::new();
        stub.by_digest = script.by_digest;
        for (agent, replies) in script.by_agent {
            stub = stub.agent(&agent, replies);
        }
        stub
    }

    pub fn script(mut self, digest: impl Into<String>, response: impl Into<String>) -> Self {
        self.by_digest.insert(digest.into(), response.into());
        self
    }

    pub fn agent<I, R>(self, agent: &str, replies: I) -> Self
    where
        I: IntoIterator<Item = R>,
        R: Into<StubReply>,
    {
        self.by_agent
            .lock()
            .entry(agent.to_string())
            .or_default()
            .extend(replies.into_iter().map(Into::into));
        self
    }

    pub fn responder<F>(mut self, f: F) -> Self
    where
        F: Fn(&CompletionRequest) -> Option<String> + Send + Sync + 'static,
    {
        self.responder = Some(Arc::new(f));
        self
    }

    /// Every request received so far, in arrival order.
    pub fn calls(&self) -> Vec<CompletionRequest> {
        self.calls.lock().clone()
    }

    pub fn call_count(&self) -> usize {
        self.calls.lock().len()
    }

    fn queued_reply(&self, agent: &str) -> Option<StubReply> {
        let mut queues = self.by_agent.lock();
        let queue = queues.get_mut(agent)?;
        match queue.len() {
            0 => None,
            1 => queue.front().cloned(),
            _ => queue.pop_front(),
        }
    }
}

impl Provider for StubProvider {
    fn name(&self) -> &str {
        "stub"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        self.calls.lock().push(request.clone());
        if let Some(text) = self.by_digest.get(&request.digest) {
            return Ok(text.clone());
        }
        if let Some(reply) = self.queued_reply(&request.agent) {
            return reply.into_result();
        }
        if let Some(text) = self.responder.as_ref().and_then(|f| f(request)) {
            return Ok(text);
        }
        Err(GatewayError::StubMiss {
            digest: request.digest.clone(),
        })
    }
}

/// Perturbs one numeric field of JSON replies when the request temperature is
/// above zero, mimicking sampling variability.
///
/// Offsets are uniform in `[-amplitude, amplitude]` and drawn from a seeded
/// generator, so two jitter providers with the same seed produce the same
/// sequence. Results are clamped to `[0, 10]`.
pub struct JitterProvider {
    inner: Arc<dyn Provider>,
    field: String,
    amplitude: f64,
    rng: Mutex<ChaCha8Rng>,
}

impl JitterProvider {
    pub fn new(inner: Arc<dyn Provider>, field: &str, amplitude: f64, seed: u64) -> Self {
        Self {
            inner,
            field: field.to_string(),
            amplitude,
            rng: Mutex::new(ChaCha8Rng::seed_from_u64(seed)),
        }
    }

    pub fn amplitude(&self) -> f64 {
        self.amplitude
    }
}

impl Provider for JitterProvider {
    fn name(&self) -> &str {
        "jitter-stub"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let text = self.inner.complete(request)?;
        if request.temperature <= 0.0 || self.amplitude <= 0.0 {
            return Ok(text);
        }
        let Ok(Value::Object(mut map)) = serde_json::from_str::<Value>(&text) else {
            return Ok(text);
        };
        let Some(current) = map.get(&self.field).and_then(Value::as_f64) else {
            return Ok(text);
        };
        let offset = self.rng.lock().random_range(-self.amplitude..=self.amplitude);
        let jittered = (current + offset).clamp(0.0, 10.0);
        if let Some(n) = serde_json::Number::from_f64(jittered) {
            map.insert(self.field.clone(), Value::Number(n));
        }
        Ok(Value::Object(map).to_string())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::Message;

    fn req(agent: &str, text: &str, temperature: f64) -> CompletionRequest {
        CompletionRequest::new(agent, vec![Message::user(text)], temperature)
    }

    #[test]
    fn digest_script_answers_any_agent() {
        let r = req("SHIRLEY", "hello", 0.0);
        let stub = StubProvider::new().script(r.digest.clone(), "OK");
        assert_eq!(stub.complete(&r).unwrap(), "OK");
        assert_eq!(stub.complete(&r).unwrap(), "OK");
    }

    #[test]
    fn miss_names_the_digest() {
        let r = req("SAM", "unscripted", 0.0);
        match StubProvider::new().complete(&r) {
            Err(GatewayError::StubMiss { digest }) => assert_eq!(digest, r.digest),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn agent_queue_consumes_then_repeats_last() {
        let stub = StubProvider::new().agent("SARA", ["a", "b"]);
        let r = req("SARA", "x", 0.0);
        assert_eq!(stub.complete(&r).unwrap(), "a");
        assert_eq!(stub.complete(&r).unwrap(), "b");
        assert_eq!(stub.complete(&r).unwrap(), "b");
        assert_eq!(stub.call_count(), 3);
    }

    #[test]
    fn scripted_failures() {
        let stub = StubProvider::new().agent(
            "CRITIC",
            [StubReply::retryable("timeout"), StubReply::fatal("401")],
        );
        let r = req("CRITIC", "x", 0.0);
        assert!(matches!(stub.complete(&r), Err(GatewayError::Retryable(_))));
        assert!(matches!(stub.complete(&r), Err(GatewayError::Fatal(_))));
    }

    #[test]
    fn script_deserializes() {
        let script: StubScript = serde_json::from_str(
            r#"{"byAgent": {"SARA": ["x", {"failure": "retryable", "message": "later"}]}}"#,
        )
        .unwrap();
        assert_eq!(script.by_agent["SARA"][1], StubReply::retryable("later"));
    }

    #[test]
    fn jitter_only_above_zero_temperature() {
        let base: Arc<dyn Provider> =
            Arc::new(StubProvider::new().responder(|_| Some(r#"{"biasLevel":2.5}"#.into())));
        let jitter = JitterProvider::new(base, "biasLevel", 0.2, 7);
        let cold = jitter.complete(&req("SHIRLEY", "d", 0.0)).unwrap();
        assert_eq!(cold, r#"{"biasLevel":2.5}"#);
        let mut seen = Vec::new();
        for _ in 0..20 {
            let hot = jitter.complete(&req("SHIRLEY", "d", 0.9)).unwrap();
            let v: Value = serde_json::from_str(&hot).unwrap();
            let b = v["biasLevel"].as_f64().unwrap();
            assert!((b - 2.5).abs() <= 0.2 + 1e-12);
            seen.push(b);
        }
        assert!(seen.iter().any(|&b| b != seen[0]));
    }

    #[test]
    fn jitter_is_seeded() {
        let make = || {
            let base: Arc<dyn Provider> =
                Arc::new(StubProvider::new().responder(|_| Some(r#"{"biasLevel":5}"#.into())));
            JitterProvider::new(base, "biasLevel", 0.5, 42)
        };
        let (a, b) = (make(), make());
        for _ in 0..5 {
            let r = req("SHIRLEY", "d", 1.0);
            assert_eq!(a.complete(&r).unwrap(), b.complete(&r).unwrap());
        }
    }
}
