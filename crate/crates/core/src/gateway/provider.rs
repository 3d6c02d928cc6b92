use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::GatewayError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Message {
    pub role: Role,
    pub content: String,
}

impl Message {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

/// A fully assembled request as handed to a provider.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CompletionRequest {
    /// Agent name from the profile (SHIRLEY, SAM, ...).
    pub agent: String,
    pub messages: Vec<Message>,
    pub temperature: f64,
    pub penalties: BTreeMap<String, f64>,
    pub digest: String,
}

impl CompletionRequest {
    pub fn new(agent: &str, messages: Vec<Message>, temperature: f64) -> Self {
        let digest = request_digest(&messages, temperature);
        Self {
            agent: agent.to_string(),
            messages,
            temperature,
            penalties: BTreeMap::new(),
            digest,
        }
    }

    /// Content of the final user message, if any.
    pub fn last_user(&self) -> Option<&str> {
        self.messages
            .iter()
            .rev()
            .find(|m| m.role == Role::User)
            .map(|m| m.content.as_str())
    }
}

/// Stable SHA-256 over canonicalized messages and temperature.
///
/// Canonical form: one JSON array of `[role, content]` pairs followed by the
/// temperature printed with four decimals.
pub fn request_digest(messages: &[Message], temperature: f64) -> String {
    let pairs: Vec<(Role, &str)> = messages
        .iter()
        .map(|m| (m.role, m.content.as_str()))
        .collect();
    let canonical = serde_json::to_string(&pairs).expect("messages serialize");
    let mut hasher = Sha256::new();
    hasher.update(canonical.as_bytes());
    hasher.update(format!("|t={temperature:.4}").as_bytes());
    hex::encode(hasher.finalize())
}

/// A model backend. Implementations must be callable from many threads.
pub trait Provider: Send + Sync {
    fn name(&self) -> &str;

    fn complete(&self, request: &CompletionRequest) -> Result<String, GatewayError>;
}
