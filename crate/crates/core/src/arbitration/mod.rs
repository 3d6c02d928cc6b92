//! Turn-based arbitration of a finding.
//!
//! SHIRLEY defends the finding, a per-case CRITIC argues against it, and
//! SARA questions both parties before deciding. The protocol itself is a
//! pure function from (state, turn) to the next state, shared by the live
//! engine and by transcript replay.

mod engine;
mod verdict;

use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

pub use self::engine::{parse_sara_action, Arbitrator, SaraAction, DEFAULT_MAX_TURNS};
pub use self::verdict::{extract_rule_citations, parse_verdict, verdict_profile, Outcome, Verdict};

use crate::aggregator::Finding;
use crate::gateway::GatewayError;
use crate::ids::CaseId;
use crate::store::{StoreError, StoredRecord};

/// Questions SARA may put to each party in one case.
pub const DEFAULT_QUESTION_BUDGET: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Party {
    Sara,
    Shirley,
    Critic,
}

impl fmt::Display for Party {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Party::Sara => "SARA",
            Party::Shirley => "SHIRLEY",
            Party::Critic => "CRITIC",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum TurnKind {
    Request,
    Claim,
    Counter,
    Question,
    Answer,
    Decision,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    Opening,
    Claim,
    Counter,
    Clarification,
    Responses,
    Decision,
    Closed,
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Turn {
    pub index: usize,
    pub speaker: Party,
    pub kind: TurnKind,
    /// Party a SARA request or question is addressed to.
    #[serde(default)]
    pub to: Option<Party>,
    pub content: String,
    pub timestamp: DateTime<Utc>,
    pub prev_hash: String,
    /// Chains the previous hash with this turn's content (timestamp excluded).
    pub hash: String,
}

pub const GENESIS_HASH: &str = "0000000000000000000000000000000000000000000000000000000000000000";

pub fn turn_hash(
    prev_hash: &str,
    index: usize,
    speaker: Party,
    kind: TurnKind,
    to: Option<Party>,
    content: &str,
) -> String {
    let header = serde_json::to_string(&(index, speaker, kind, to)).expect("turn header serializes");
    let mut h = Sha256::new();
    h.update(prev_hash.as_bytes());
    h.update(b"\n");
    h.update(header.as_bytes());
    h.update(b"\n");
    h.update(content.as_bytes());
    hex::encode(h.finalize())
}

impl Turn {
    pub fn new(prev: Option<&Turn>, speaker: Party, kind: TurnKind, to: Option<Party>, content: String) -> Self {
        let index = prev.map_or(0, |t| t.index + 1);
        let prev_hash = prev.map_or_else(|| GENESIS_HASH.to_string(), |t| t.hash.clone());
        let hash = turn_hash(&prev_hash, index, speaker, kind, to, &content);
        Self {
            index,
            speaker,
            kind,
            to,
            content,
            timestamp: Utc::now(),
            prev_hash,
            hash,
        }
    }
}

/// True when indices are contiguous and every hash link recomputes.
pub fn verify_chain(transcript: &[Turn]) -> bool {
    let mut prev = GENESIS_HASH.to_string();
    transcript.iter().enumerate().all(|(i, t)| {
        let ok = t.index == i
            && t.prev_hash == prev
            && t.hash == turn_hash(&prev, t.index, t.speaker, t.kind, t.to, &t.content);
        prev = t.hash.clone();
        ok
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ProtocolState {
    pub phase: Phase,
    pub question_budget: BTreeMap<Party, u32>,
    /// Party whose answer SARA is waiting for.
    pub awaiting: Option<Party>,
}

impl ProtocolState {
    pub fn new(budget: u32) -> Self {
        Self {
            phase: Phase::Opening,
            question_budget: [(Party::Shirley, budget), (Party::Critic, budget)].into(),
            awaiting: None,
        }
    }

    fn budgets_exhausted(&self) -> bool {
        self.question_budget.values().all(|&b| b == 0)
    }

    /// Who must speak next, and in what capacity.
    pub fn next_speaker(&self) -> Option<(Party, TurnKind)> {
        match self.phase {
            Phase::Opening => Some((Party::Shirley, TurnKind::Claim)),
            Phase::Claim => Some((Party::Critic, TurnKind::Counter)),
            Phase::Counter | Phase::Responses => Some((Party::Sara, TurnKind::Question)),
            Phase::Clarification => self.awaiting.map(|p| (p, TurnKind::Answer)),
            Phase::Decision => Some((Party::Sara, TurnKind::Decision)),
            Phase::Closed => None,
        }
    }

    /// Applies one turn. Returns the phases entered, in order.
    ///
    /// An empty transcript accepts only SARA's opening request. A decision
    /// from `Counter` or `Responses` passes through `Decision` on its way to
    /// `Closed`.
    pub fn apply(&mut self, turn: &Turn, first: bool) -> Result<Vec<Phase>, ArbitrationError> {
        use Phase as P;
        use TurnKind as K;
        let unexpected = || {
            ArbitrationError::Protocol(format!(
                "{} {:?} is not allowed in phase {}",
                turn.speaker, turn.kind, self.phase
            ))
        };
        if first {
            return match (turn.speaker, turn.kind, turn.to) {
                (Party::Sara, K::Request, Some(Party::Shirley)) => Ok(vec![]),
                _ => Err(unexpected()),
            };
        }
        let entered = match (self.phase, turn.speaker, turn.kind) {
            (P::Closed, ..) => return Err(ArbitrationError::InvalidPhase { phase: P::Closed }),
            (P::Opening, Party::Shirley, K::Claim) => vec![P::Claim],
            (P::Claim, Party::Critic, K::Counter) => vec![P::Counter],
            (P::Counter | P::Responses, Party::Sara, K::Question) => {
                let to = turn.to.filter(|p| *p != Party::Sara).ok_or_else(unexpected)?;
                let left = self.question_budget.get_mut(&to).ok_or_else(unexpected)?;
                if *left == 0 {
                    return Err(ArbitrationError::QuestionBudgetExhausted { party: to });
                }
                *left -= 1;
                self.awaiting = Some(to);
                vec![P::Clarification]
            }
            (P::Counter | P::Responses, Party::Sara, K::Request) => {
                let to = turn.to.filter(|p| *p != Party::Sara).ok_or_else(unexpected)?;
                self.awaiting = Some(to);
                vec![P::Clarification]
            }
            (P::Counter | P::Responses, Party::Sara, K::Decision) => vec![P::Decision, P::Closed],
            (P::Clarification, speaker, K::Answer) if Some(speaker) == self.awaiting => {
                self.awaiting = None;
                if self.budgets_exhausted() {
                    vec![P::Decision]
                } else {
                    vec![P::Responses]
                }
            }
            (P::Decision, Party::Sara, K::Decision) => vec![P::Closed],
            _ => return Err(unexpected()),
        };
        self.phase = *entered.last().expect("at least one phase");
        Ok(entered)
    }
}

/// Replays a transcript from scratch and returns the phase sequence it
/// implies, starting with `Opening`.
pub fn replay_phases(transcript: &[Turn], budget: u32) -> Result<Vec<Phase>, ArbitrationError> {
    let mut state = ProtocolState::new(budget);
    let mut phases = vec![Phase::Opening];
    for (i, turn) in transcript.iter().enumerate() {
        phases.extend(state.apply(turn, i == 0)?);
    }
    Ok(phases)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ArbitrationCase {
    pub case_id: CaseId,
    pub finding: Finding,
    /// Supporting records as they stood when the case was opened.
    pub evidence: Vec<StoredRecord>,
    pub phase: Phase,
    pub transcript: Vec<Turn>,
    pub verdict: Option<Verdict>,
    pub question_budget: BTreeMap<Party, u32>,
    #[serde(default)]
    pub awaiting: Option<Party>,
    pub initial_question_budget: u32,
    /// Every phase entered, starting with `Opening`.
    pub phase_history: Vec<Phase>,
    /// `profileId@revision` of the generated critic, once created.
    #[serde(default)]
    pub critic_profile: Option<String>,
    pub opened_at: DateTime<Utc>,
}

impl ArbitrationCase {
    pub fn state(&self) -> ProtocolState {
        ProtocolState {
            phase: self.phase,
            question_budget: self.question_budget.clone(),
            awaiting: self.awaiting,
        }
    }

    pub fn is_closed(&self) -> bool {
        self.phase == Phase::Closed
    }

    pub fn speakers(&self) -> Vec<Party> {
        self.transcript.iter().map(|t| t.speaker).collect()
    }

    /// Questions SARA has put to `party` so far.
    pub fn questions_to(&self, party: Party) -> usize {
        self.transcript
            .iter()
            .filter(|t| t.kind == TurnKind::Question && t.to == Some(party))
            .count()
    }

    /// Human-readable transcript.
    pub fn render(&self) -> String {
        let mut out = format!(
            "Case {} | finding {} ({}) | phase {}\n\n{}\n",
            self.case_id, self.finding.finding_id, self.finding.category, self.phase, self.finding.narrative
        );
        for t in &self.transcript {
            let to = t.to.map(|p| format!(" -> {p}")).unwrap_or_default();
            out.push_str(&format!("\n[{}] {} ({:?}{to}):\n{}\n", t.index, t.speaker, t.kind, t.content));
        }
        if let Some(v) = &self.verdict {
            out.push_str(&format!(
                "\nVerdict: {} | citations: {}\n",
                v.outcome,
                v.rule_citations.join(", ")
            ));
        }
        out
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ArbitrationError {
    #[error("rejected: {0}")]
    Rejected(String),
    #[error("case is in phase {phase}")]
    InvalidPhase { phase: Phase },
    #[error("question budget for {party} is exhausted")]
    QuestionBudgetExhausted { party: Party },
    #[error("no verdict after {max_turns} turns")]
    TurnLimitExceeded {
        max_turns: usize,
        case: Box<ArbitrationCase>,
    },
    #[error("verdict could not be parsed: {reason}")]
    VerdictParseFailure { raw: String, reason: String },
    #[error("protocol violation: {0}")]
    Protocol(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}
