use std::fmt;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::ArbitrationError;
use crate::gateway::{AgentProfile, Gateway, GatewayError, Message, RepairLoopPolicy};
use crate::record::{ValidationReport, Violation};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Outcome {
    ClaimUpheld,
    ClaimRejected,
    PartiallyUpheld,
}

impl fmt::Display for Outcome {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Outcome::ClaimUpheld => "claim_upheld",
            Outcome::ClaimRejected => "claim_rejected",
            Outcome::PartiallyUpheld => "partially_upheld",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Verdict {
    pub outcome: Outcome,
    pub rationale: String,
    pub rule_citations: Vec<String>,
    /// On the 0-10 record scale.
    #[serde(default)]
    pub bias_assessment: Option<f64>,
}

const VERDICT_PROMPT: &str = "You classify arbitration decisions. Read the decision text and reply \
with one JSON object and nothing else: {\"outcome\": \"claim_upheld\" | \"claim_rejected\" | \
\"partially_upheld\", \"rationale\": one or two sentences, \"biasAssessment\": the bias level the \
decision accepts on a 0-10 scale, or null when it accepts none}.";

/// The classification profile used for decision texts.
pub fn verdict_profile() -> AgentProfile {
    AgentProfile::new("sara-verdict", "SARA-VERDICT", VERDICT_PROMPT, 0.0)
}

/// Distinct `Rule N` references in order of first appearance.
pub fn extract_rule_citations(text: &str) -> Vec<String> {
    static RULE: OnceLock<Regex> = OnceLock::new();
    let re = RULE.get_or_init(|| Regex::new(r"\bRule\s+(\d+)").expect("valid regex"));
    let mut out: Vec<String> = Vec::new();
    for cap in re.captures_iter(text) {
        let cite = format!("Rule {}", &cap[1]);
        if !out.contains(&cite) {
            out.push(cite);
        }
    }
    out
}

fn classification(raw: &str) -> Result<(Outcome, String, Option<f64>), ValidationReport> {
    let mut report = ValidationReport::default();
    let body = raw.trim().trim_start_matches("```json").trim_start_matches("```").trim_end_matches("```");
    let value: Value = match serde_json::from_str(body.trim()) {
        Ok(v) => v,
        Err(e) => {
            report.push(Violation::new("payload", "unparseable", e.to_string()));
            return Err(report);
        }
    };
    let outcome = value
        .get("outcome")
        .cloned()
        .and_then(|v| serde_json::from_value::<Outcome>(v).ok());
    if outcome.is_none() {
        report.push(Violation::new(
            "outcome",
            value.get("outcome").map_or("missing".to_string(), Value::to_string),
            "outcome must be claim_upheld, claim_rejected or partially_upheld",
        ));
    }
    let rationale = value.get("rationale").and_then(Value::as_str).unwrap_or_default().trim().to_string();
    if rationale.is_empty() {
        report.push(Violation::new("rationale", "\"\"", "rationale is empty"));
    }
    let bias = match value.get("biasAssessment") {
        None | Some(Value::Null) => None,
        Some(v) => match v.as_f64() {
            Some(b) if (0.0..=10.0).contains(&b) => Some(b),
            _ => {
                report.push(Violation::new("biasAssessment", v, "biasAssessment out of range"));
                None
            }
        },
    };
    match outcome {
        Some(o) if report.is_valid() => Ok((o, rationale, bias)),
        _ => Err(report),
    }
}

/// Classifies SARA's decision text through a structured request with
/// repair, and extracts rule citations from the text itself.
pub fn parse_verdict(
    gateway: &Gateway,
    profile: &AgentProfile,
    policy: &RepairLoopPolicy,
    decision_text: &str,
) -> Result<Verdict, ArbitrationError> {
    let failure = |reason: String| ArbitrationError::VerdictParseFailure {
        raw: decision_text.to_string(),
        reason,
    };
    if decision_text.trim().is_empty() {
        return Err(failure("decision text is empty".into()));
    }
    let rule_citations = extract_rule_citations(decision_text);
    if rule_citations.is_empty() {
        return Err(failure("decision cites no rule".into()));
    }
    let classified = gateway.complete_with_repair(
        profile,
        &[Message::user(decision_text)],
        policy,
        classification,
    );
    let (outcome, rationale, bias_assessment) = match classified {
        Ok(s) => s.value,
        Err(GatewayError::SchemaViolation { attempts }) => {
            let last = attempts.last().map(|a| a.report.to_string()).unwrap_or_default();
            return Err(failure(format!(
                "unclassifiable after {} attempts: {last}",
                attempts.len()
            )));
        }
        Err(e) => return Err(e.into()),
    };
    Ok(Verdict {
        outcome,
        rationale,
        rule_citations,
        bias_assessment,
    })
}
