//! OpenAI-style chat-completion binding.

use std::sync::{Arc, OnceLock};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use serde_json::{json, Map, Value};

use super::provider::{CompletionRequest, Provider};
use super::stub::{StubProvider, StubScript};
use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BindingKind {
    Hosted,
    Stub,
}

/// How the gateway reaches a model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProviderBinding {
    pub kind: BindingKind,
    /// Full chat-completions URL.
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key.
    #[serde(default)]
    pub credentials_ref: Option<String>,
    #[serde(default)]
    pub model: Option<String>,
    #[serde(default)]
    pub stub_script: Option<StubScript>,
}

impl ProviderBinding {
    pub fn stub(script: StubScript) -> Self {
        Self {
            kind: BindingKind::Stub,
            endpoint: None,
            credentials_ref: None,
            model: None,
            stub_script: Some(script),
        }
    }

    pub fn hosted(endpoint: &str, credentials_ref: &str, model: &str) -> Self {
        Self {
            kind: BindingKind::Hosted,
            endpoint: Some(endpoint.to_string()),
            credentials_ref: Some(credentials_ref.to_string()),
            model: Some(model.to_string()),
            stub_script: None,
        }
    }

    pub fn check(&self) -> Result<(), GatewayError> {
        match self.kind {
            BindingKind::Hosted if self.endpoint.is_none() || self.credentials_ref.is_none() => {
                Err(GatewayError::Precondition(
                    "hosted binding needs endpoint and credentialsRef".into(),
                ))
            }
            BindingKind::Stub if self.stub_script.is_none() => Err(GatewayError::Precondition(
                "stub binding needs a script".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn Provider>, GatewayError> {
        self.check()?;
        match self.kind {
            BindingKind::Stub => Ok(Arc::new(StubProvider::from_script(
                self.stub_script.clone().unwrap_or_default(),
            ))),
            BindingKind::Hosted => Ok(Arc::new(HostedProvider::from_binding(self)?)),
        }
    }
}

pub const DEFAULT_MODEL: &str = "gpt-4-turbo";

pub struct HostedProvider {
    endpoint: String,
    api_key: String,
    model: String,
    timeout: Duration,
    // built lazily so construction never happens inside an async context
    client: OnceLock<reqwest::blocking::Client>,
}

impl HostedProvider {
    /// Resolves the credential from the environment variable the binding names.
    pub fn from_binding(binding: &ProviderBinding) -> Result<Self, GatewayError> {
        binding.check()?;
        let var = binding.credentials_ref.as_deref().unwrap_or_default();
        let api_key = std::env::var(var)
            .map_err(|_| GatewayError::Fatal(format!("environment variable {var} is not set")))?;
        Ok(Self {
            endpoint: binding.endpoint.clone().unwrap_or_default(),
            api_key,
            model: binding.model.clone().unwrap_or_else(|| DEFAULT_MODEL.to_string()),
            timeout: Duration::from_secs(120),
            client: OnceLock::new(),
        })
    }

    pub fn with_timeout(mut self, timeout: Duration) -> Self {
        self.timeout = timeout;
        self
    }

    /// Request body in chat-completion wire format. Penalties are passed
    /// through as top-level parameters.
    pub fn request_body(&self, request: &CompletionRequest) -> Value {
        let mut body = Map::new();
        body.insert("model".into(), json!(self.model));
        body.insert("messages".into(), json!(request.messages));
        body.insert("temperature".into(), json!(request.temperature));
        for (k, v) in &request.penalties {
            body.insert(k.clone(), json!(v));
        }
        Value::Object(body)
    }

    fn client(&self) -> Result<&reqwest::blocking::Client, GatewayError> {
        if let Some(c) = self.client.get() {
            return Ok(c);
        }
        let client = reqwest::blocking::Client::builder()
            .timeout(self.timeout)
            .build()
            .map_err(|e| GatewayError::Fatal(format!("http client: {e}")))?;
        Ok(self.client.get_or_init(|| client))
    }
}

/// Pulls `choices[0].message.content` out of a response body.
pub fn extract_content(body: &Value) -> Option<&str> {
    body.get("choices")?
        .get(0)?
        .get("message")?
        .get("content")?
        .as_str()
}

impl Provider for HostedProvider {
    fn name(&self) -> &str {
        "hosted"
    }

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError> {
        let response = self
            .client()?
            .post(&self.endpoint)
            .bearer_auth(&self.api_key)
            .json(&self.request_body(request))
            .send()
            .map_err(|e| GatewayError::Retryable(format!("transport: {e}")))?;
        let status = response.status();
        if status.as_u16() == 401 || status.as_u16() == 403 {
            return Err(GatewayError::Fatal(format!("authentication failed ({status})")));
        }
        if status.as_u16() == 429 || status.is_server_error() {
            return Err(GatewayError::Retryable(format!("provider returned {status}")));
        }
        if !status.is_success() {
            return Err(GatewayError::Fatal(format!("provider returned {status}")));
        }
        let body: Value = response
            .json()
            .map_err(|e| GatewayError::Retryable(format!("unreadable response: {e}")))?;
        extract_content(&body)
            .map(str::to_string)
            .ok_or_else(|| GatewayError::Fatal("response has no choices[0].message.content".into()))
    }
}
