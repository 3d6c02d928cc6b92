use std::collections::BTreeMap;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use crate::ids::{DocId, ProfileId, PromptRevisionId};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ProfileError {
    #[error("profile name is empty")]
    EmptyName,
    #[error("temperature {0} outside [0, 2]")]
    Temperature(f64),
    #[error("penalty {0} is not finite")]
    Penalty(String),
    #[error("repair policy needs at least one attempt")]
    NoAttempts,
}

/// A named prompt configuration for one agent.
///
/// Profiles are immutable once stored; edits create a new revision in the
/// same lineage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct AgentProfile {
    pub profile_id: ProfileId,
    #[serde(default)]
    pub revision: u32,
    pub name: String,
    pub system_prompt: String,
    pub temperature: f64,
    #[serde(default)]
    pub penalty_settings: BTreeMap<String, f64>,
    #[serde(default)]
    pub knowledge_base_docs: Vec<DocId>,
    #[serde(default)]
    pub output_schema_ref: Option<String>,
    #[serde(default = "Utc::now")]
    pub created_at: DateTime<Utc>,
}

impl AgentProfile {
    pub fn new(profile_id: &str, name: &str, system_prompt: &str, temperature: f64) -> Self {
        Self {
            profile_id: ProfileId::from(profile_id),
            revision: 0,
            name: name.to_string(),
            system_prompt: system_prompt.to_string(),
            temperature,
            penalty_settings: BTreeMap::new(),
            knowledge_base_docs: Vec::new(),
            output_schema_ref: None,
            created_at: Utc::now(),
        }
    }

    pub fn with_temperature(mut self, temperature: f64) -> Self {
        self.temperature = temperature;
        self
    }

    pub fn with_knowledge_base(mut self, docs: Vec<DocId>) -> Self {
        self.knowledge_base_docs = docs;
        self
    }

    pub fn with_penalty(mut self, name: &str, value: f64) -> Self {
        self.penalty_settings.insert(name.to_string(), value);
        self
    }

    pub fn with_output_schema(mut self, version: &str) -> Self {
        self.output_schema_ref = Some(version.to_string());
        self
    }

    /// `profileId@revision`.
    pub fn revision_label(&self) -> String {
        format!("{}@{}", self.profile_id, self.revision)
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        if self.name.trim().is_empty() {
            return Err(ProfileError::EmptyName);
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(ProfileError::Temperature(self.temperature));
        }
        if let Some((name, _)) = self.penalty_settings.iter().find(|(_, v)| !v.is_finite()) {
            return Err(ProfileError::Penalty(name.clone()));
        }
        Ok(())
    }
}

/// An engineered system prompt produced by prompt refinement.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct PromptTemplate {
    pub revision_id: PromptRevisionId,
    pub intent: String,
    pub text: String,
    pub created_at: DateTime<Utc>,
}

/// Bounded re-prompting with validator feedback.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct RepairLoopPolicy {
    pub max_attempts: u32,
    /// `{report}` is replaced by the rejected attempt's validation report.
    pub feedback_template: String,
}

impl RepairLoopPolicy {
    pub fn with_max_attempts(max_attempts: u32) -> Self {
        Self {
            max_attempts,
            ..Self::default()
        }
    }

    pub fn check(&self) -> Result<(), ProfileError> {
        if self.max_attempts == 0 {
            return Err(ProfileError::NoAttempts);
        }
        Ok(())
    }

    pub fn feedback(&self, report: &str) -> String {
        self.feedback_template.replace("{report}", report)
    }
}

impl Default for RepairLoopPolicy {
    fn default() -> Self {
        Self {
            max_attempts: 3,
            feedback_template: "Your previous answer was rejected by the validator:\n{report}\n\
                                Reply again with only the corrected JSON object."
                .to_string(),
        }
    }
}
