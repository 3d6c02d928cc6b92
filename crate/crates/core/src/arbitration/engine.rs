use chrono::Utc;
use serde::Deserialize;

use super::verdict::{parse_verdict, verdict_profile};
use super::{
    ArbitrationCase, ArbitrationError, Party, Phase, ProtocolState, Turn, TurnKind,
    DEFAULT_QUESTION_BUDGET,
};
use crate::aggregator::Finding;
use crate::gateway::{AgentProfile, Gateway, Message, RepairLoopPolicy};
use crate::ids::{CaseId, FindingId};
use crate::record::record_to_object;

pub const DEFAULT_MAX_TURNS: usize = 24;

/// What SARA wants to do next.
#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(tag = "action", rename_all = "lowercase")]
pub enum SaraAction {
    /// Budgeted question(s) to one party.
    Question {
        to: Party,
        #[serde(default)]
        questions: Vec<String>,
        #[serde(default)]
        question: Option<String>,
    },
    /// Unbudgeted request for information.
    Request { to: Party, content: String },
    Decide { decision: String },
}

/// Reads SARA's reply. JSON objects carry an explicit action; anything
/// else is taken as decision prose.
pub fn parse_sara_action(raw: &str) -> Result<SaraAction, ArbitrationError> {
    let trimmed = raw.trim();
    let body = trimmed
        .strip_prefix("```json")
        .or_else(|| trimmed.strip_prefix("```"))
        .map(|s| s.trim_end_matches("```").trim())
        .unwrap_or(trimmed);
    if !body.starts_with('{') {
        return Ok(SaraAction::Decide {
            decision: raw.to_string(),
        });
    }
    serde_json::from_str(body)
        .map_err(|e| ArbitrationError::Protocol(format!("unreadable SARA action: {e}")))
}

/// Drives cases through the protocol. Every provider call goes through the
/// gateway; every accepted turn is persisted before `advance` returns.
pub struct Arbitrator<'a> {
    gateway: &'a Gateway,
    pub sara: AgentProfile,
    pub shirley: AgentProfile,
    pub verdict: AgentProfile,
    pub policy: RepairLoopPolicy,
    pub question_budget: u32,
}

impl<'a> Arbitrator<'a> {
    pub fn new(gateway: &'a Gateway, sara: AgentProfile, shirley: AgentProfile) -> Self {
        Self {
            gateway,
            sara,
            shirley,
            verdict: verdict_profile(),
            policy: RepairLoopPolicy::default(),
            question_budget: DEFAULT_QUESTION_BUDGET,
        }
    }

    /// Opens a case on a stored finding with SARA's templated request to
    /// SHIRLEY as turn 0.
    pub fn open_case(&self, finding: &Finding) -> Result<ArbitrationCase, ArbitrationError> {
        if finding.supporting_record_ids.is_empty() {
            return Err(ArbitrationError::Rejected("finding has no supporting records".into()));
        }
        let store = self.gateway.store();
        let evidence = finding
            .supporting_record_ids
            .iter()
            .map(|id| store.record(*id))
            .collect::<Result<Vec<_>, _>>()?;
        let request = format!(
            "This case concerns the following {} finding:\n\n{}\n\nSHIRLEY, set out your claim \
             and the parts of the judgment it rests on.",
            finding.category, finding.narrative
        );
        let turn0 = Turn::new(None, Party::Sara, TurnKind::Request, Some(Party::Shirley), request);
        let state = ProtocolState::new(self.question_budget);
        let case = ArbitrationCase {
            case_id: CaseId(0),
            finding: finding.clone(),
            evidence,
            phase: Phase::Opening,
            transcript: vec![turn0],
            verdict: None,
            question_budget: state.question_budget,
            awaiting: None,
            initial_question_budget: self.question_budget,
            phase_history: vec![Phase::Opening],
            critic_profile: None,
            opened_at: Utc::now(),
        };
        Ok(store.insert_case(case)?)
    }

    pub fn open_finding(&self, finding_id: FindingId) -> Result<ArbitrationCase, ArbitrationError> {
        let finding = self.gateway.store().finding(finding_id)?;
        self.open_case(&finding)
    }

    fn critic_prompt(case: &ArbitrationCase) -> String {
        let mut text = format!(
            "You are CRITIC in arbitration case {}. SHIRLEY claims the following {} finding:\n\n{}\n\n\
             Supporting records:\n",
            case.case_id, case.finding.category, case.finding.narrative
        );
        for r in &case.evidence {
            let object = serde_json::Value::Object(record_to_object(&r.record));
            text.push_str(&format!("{} ({}): {}\n", r.record_id, r.doc_id, object));
        }
        text.push_str(
            "\nYour task is to criticize SHIRLEY's claim and build the strongest case that \
             discredits it. Answer SARA's questions directly.",
        );
        text
    }

    /// Builds and stores the adversarial profile for a case. The prompt is a
    /// pure function of the case, so repeated calls yield identical text
    /// under new revisions.
    pub fn generate_critic(&self, case: &ArbitrationCase) -> Result<AgentProfile, ArbitrationError> {
        if case.is_closed() {
            return Err(ArbitrationError::InvalidPhase { phase: case.phase });
        }
        let profile = AgentProfile::new(
            &format!("critic-{}", case.case_id),
            "CRITIC",
            &Self::critic_prompt(case),
            self.shirley.temperature,
        );
        Ok(self.gateway.store().put_profile(profile)?)
    }

    fn critic_for(&self, case: &ArbitrationCase) -> Result<AgentProfile, ArbitrationError> {
        let store = self.gateway.store();
        match &case.critic_profile {
            Some(label) => {
                let (id, rev) = label.rsplit_once('@').unwrap_or((label, "0"));
                Ok(store.profile_revision(&id.into(), rev.parse().unwrap_or(0))?)
            }
            None => self.generate_critic(case),
        }
    }

    fn context(case: &ArbitrationCase) -> String {
        let mut text = format!(
            "Finding under arbitration ({}, severity {:.4}):\n{}\n\nTranscript so far:\n",
            case.finding.category, case.finding.severity, case.finding.narrative
        );
        for t in &case.transcript {
            let to = t.to.map(|p| format!(" to {p}")).unwrap_or_default();
            text.push_str(&format!("[{}] {} {:?}{to}: {}\n", t.index, t.speaker, t.kind, t.content));
        }
        text
    }

    fn sara_instruction(state: &ProtocolState) -> String {
        let budget = |p| state.question_budget.get(&p).copied().unwrap_or(0);
        if state.phase == Phase::Decision {
            return "All questions are spent. Render your decision now, citing the rules you rely on."
                .to_string();
        }
        format!(
            "Reply with one JSON object. To question a party: {{\"action\":\"question\",\"to\":\
             \"SHIRLEY\"|\"CRITIC\",\"questions\":[...]}} (remaining: SHIRLEY {}, CRITIC {}). To \
             request information without using a question: {{\"action\":\"request\",\"to\":...,\
             \"content\":...}}. To decide: {{\"action\":\"decide\",\"decision\":...}} citing the \
             rules you rely on.",
            budget(Party::Shirley),
            budget(Party::Critic)
        )
    }

    /// Appends exactly one turn. On any error the stored case is untouched.
    pub fn advance(&self, case: &ArbitrationCase) -> Result<ArbitrationCase, ArbitrationError> {
        let mut state = case.state();
        let (speaker, _) = state
            .next_speaker()
            .ok_or(ArbitrationError::InvalidPhase { phase: case.phase })?;
        let mut next = case.clone();
        let context = Self::context(case);
        let (kind, to, content) = match speaker {
            Party::Shirley => {
                let kind = if state.phase == Phase::Opening {
                    TurnKind::Claim
                } else {
                    TurnKind::Answer
                };
                let reply = self.gateway.complete(
                    &self.shirley,
                    &[Message::user(format!("{context}\nYou are SHIRLEY. Respond to SARA's latest turn."))],
                )?;
                (kind, None, reply)
            }
            Party::Critic => {
                let critic = self.critic_for(case)?;
                next.critic_profile = Some(critic.revision_label());
                let kind = if state.phase == Phase::Claim {
                    TurnKind::Counter
                } else {
                    TurnKind::Answer
                };
                let reply = self.gateway.complete(
                    &critic,
                    &[Message::user(format!("{context}\nYou are CRITIC. Respond to the latest turn."))],
                )?;
                (kind, None, reply)
            }
            Party::Sara => {
                let reply = self.gateway.complete(
                    &self.sara,
                    &[Message::user(format!("{context}\n{}", Self::sara_instruction(&state)))],
                )?;
                match parse_sara_action(&reply)? {
                    SaraAction::Decide { decision } => (TurnKind::Decision, None, decision),
                    _ if state.phase == Phase::Decision => {
                        // budgets are spent; only a decision is acceptable
                        let party = case.awaiting.unwrap_or(Party::Shirley);
                        return Err(ArbitrationError::QuestionBudgetExhausted { party });
                    }
                    SaraAction::Question {
                        to,
                        questions,
                        question,
                    } => {
                        let mut qs = questions;
                        qs.extend(question);
                        if qs.is_empty() {
                            return Err(ArbitrationError::Protocol("question action without questions".into()));
                        }
                        (TurnKind::Question, Some(to), qs.join("\n"))
                    }
                    SaraAction::Request { to, content } => (TurnKind::Request, Some(to), content),
                }
            }
        };
        let turn = Turn::new(case.transcript.last(), speaker, kind, to, content);
        let entered = state.apply(&turn, false)?;
        if state.phase == Phase::Closed {
            next.verdict = Some(parse_verdict(self.gateway, &self.verdict, &self.policy, &turn.content)?);
        }
        next.transcript.push(turn);
        next.phase = state.phase;
        next.question_budget = state.question_budget;
        next.awaiting = state.awaiting;
        next.phase_history.extend(entered);
        self.gateway.store().update_case(&next)?;
        tracing::info!(case = %next.case_id, turn = next.transcript.len() - 1, phase = %next.phase, "case advanced");
        Ok(next)
    }

    /// Advances until the case closes or the transcript reaches `max_turns`.
    pub fn run_to_completion(
        &self,
        case: &ArbitrationCase,
        max_turns: usize,
    ) -> Result<ArbitrationCase, ArbitrationError> {
        if case.is_closed() {
            return Err(ArbitrationError::InvalidPhase { phase: case.phase });
        }
        let mut current = case.clone();
        while !current.is_closed() {
            if current.transcript.len() >= max_turns {
                return Err(ArbitrationError::TurnLimitExceeded {
                    max_turns,
                    case: Box::new(current),
                });
            }
            current = self.advance(&current)?;
        }
        Ok(current)
    }
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::{replay_phases, verify_chain, Outcome};
    use super::*;
    use crate::aggregator::FindingCategory;
    use crate::fixtures;
    use crate::gateway::{GatewaySettings, StubProvider, StubReply};
    use crate::ids::RecordId;
    use crate::store::{NewDocument, NewRun, RunKind, Store};
    use proptest::prelude::*;

    const DECISION: &str = "The reasoning is ordinary statutory construction (Rule 31 on construing \
        the rules, Rule 32 on applying the governing law). No marked bias is shown.";

    fn setup(stub: StubProvider) -> (Gateway, Finding) {
        let store = Arc::new(Store::in_memory());
        let shirley = AgentProfile::new("shirley-v1", "SHIRLEY", "Analyze.", 0.0);
        let run = store
            .create_run(NewRun::for_profile(&shirley, "core-v1", RunKind::Analysis))
            .unwrap();
        let doc = store
            .ingest_document(NewDocument {
                jurisdiction: "UK".into(),
                language: "en".into(),
                court: "Supreme Court".into(),
                decision_date: None,
                source_ref: "lease case".into(),
                body: "A commercial lease dispute.".into(),
            })
            .unwrap();
        let rec = store
            .put_record(run.run_id, &doc, fixtures::sample_record(fixtures::HIGH_BIAS_ROW), 1)
            .unwrap();
        let finding = store
            .put_finding(Finding {
                finding_id: FindingId(0),
                category: FindingCategory::BiasDeviation,
                severity: 3.0,
                narrative: "The bias score of this record stands far from the rest of the run.".into(),
                supporting_record_ids: vec![rec],
                profile_revision: "sam-v1@1".into(),
                field: Some("biasLevel".into()),
                interpretive: false,
                created_at: Utc::now(),
            })
            .unwrap();
        let gw = Gateway::new(Arc::new(stub), store, GatewaySettings::immediate());
        (gw, finding)
    }

    fn arbitrator(gw: &Gateway) -> Arbitrator<'_> {
        Arbitrator::new(
            gw,
            AgentProfile::new("sara-v1", "SARA", "Arbitrate.", 0.0),
            AgentProfile::new("shirley-v1", "SHIRLEY", "Defend.", 0.0),
        )
    }

    fn dialogue_stub() -> StubProvider {
        StubProvider::new()
            .agent("SHIRLEY", ["Claim: bias at 6.", "Answer: earlier cases were set aside."])
            .agent("CRITIC", ["Counter: purposive construction.", "Answer: the purpose is stated."])
            .agent(
                "SARA",
                [
                    r#"{"action":"question","to":"SHIRLEY","questions":["Which cases?","Why 6?"]}"#.to_string(),
                    r#"{"action":"question","to":"CRITIC","questions":["Which passage?","Literal reading?"]}"#.to_string(),
                    serde_json::json!({"action": "decide", "decision": DECISION}).to_string(),
                ],
            )
            .agent(
                "SARA-VERDICT",
                [r#"{"outcome":"claim_rejected","rationale":"No significant bias.","biasAssessment":null}"#],
            )
    }

    #[test]
    fn scripted_dialogue_replay() {
        let (gw, finding) = setup(dialogue_stub());
        let arb = arbitrator(&gw);
        let case = arb.open_case(&finding).unwrap();
        assert_eq!(case.phase, Phase::Opening);
        assert_eq!(case.transcript[0].speaker, Party::Sara);
        let done = arb.run_to_completion(&case, DEFAULT_MAX_TURNS).unwrap();
        use Party::*;
        assert_eq!(done.speakers(), [Sara, Shirley, Critic, Sara, Shirley, Sara, Critic, Sara]);
        let v = done.verdict.as_ref().unwrap();
        assert_eq!(v.outcome, Outcome::ClaimRejected);
        assert!(v.rule_citations.contains(&"Rule 31".to_string()));
        assert!(v.rule_citations.contains(&"Rule 32".to_string()));
        assert!(verify_chain(&done.transcript));
        assert_eq!(replay_phases(&done.transcript, 2).unwrap(), done.phase_history);
        assert_eq!(gw.store().case(done.case_id).unwrap(), done);
        assert_eq!(done.critic_profile.as_deref(), Some("critic-C1@1"));
    }

    #[test]
    fn closed_case_cannot_advance() {
        let (gw, finding) = setup(dialogue_stub());
        let arb = arbitrator(&gw);
        let done = arb.run_to_completion(&arb.open_case(&finding).unwrap(), 24).unwrap();
        assert!(matches!(arb.advance(&done), Err(ArbitrationError::InvalidPhase { phase: Phase::Closed })));
        assert!(matches!(arb.generate_critic(&done), Err(ArbitrationError::InvalidPhase { .. })));
    }

    #[test]
    fn third_question_to_shirley_rejected_and_case_unchanged() {
        let q = r#"{"action":"question","to":"SHIRLEY","questions":["Again?"]}"#;
        let (gw, finding) = setup(
            StubProvider::new()
                .agent("SHIRLEY", ["claim"])
                .agent("CRITIC", ["counter"])
                .agent("SARA", [q]),
        );
        let arb = arbitrator(&gw);
        let mut case = arb.open_case(&finding).unwrap();
        for _ in 0..6 {
            case = arb.advance(&case).unwrap();
        }
        assert_eq!(case.questions_to(Party::Shirley), 2);
        let before = gw.store().case(case.case_id).unwrap();
        assert!(matches!(
            arb.advance(&case),
            Err(ArbitrationError::QuestionBudgetExhausted { party: Party::Shirley })
        ));
        assert_eq!(gw.store().case(case.case_id).unwrap(), before);
    }

    #[test]
    fn provider_failure_leaves_case_untouched() {
        let (gw, finding) = setup(StubProvider::new().agent("SHIRLEY", [StubReply::fatal("401")]));
        let arb = arbitrator(&gw);
        let case = arb.open_case(&finding).unwrap();
        assert!(matches!(arb.advance(&case), Err(ArbitrationError::Gateway(_))));
        assert_eq!(gw.store().case(case.case_id).unwrap().transcript.len(), 1);
    }

    #[test]
    fn never_deciding_sara_hits_turn_limit() {
        let (gw, finding) = setup(
            StubProvider::new()
                .agent("SHIRLEY", ["claim"])
                .agent("CRITIC", ["counter"])
                .agent("SARA", [r#"{"action":"request","to":"CRITIC","content":"More detail please."}"#]),
        );
        let arb = arbitrator(&gw);
        let case = arb.open_case(&finding).unwrap();
        match arb.run_to_completion(&case, DEFAULT_MAX_TURNS) {
            Err(ArbitrationError::TurnLimitExceeded { max_turns, case }) => {
                assert_eq!(max_turns, 24);
                assert_eq!(case.transcript.len(), 24);
                assert!(verify_chain(&case.transcript));
                assert_eq!(gw.store().case(case.case_id).unwrap().transcript.len(), 24);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn open_case_checks() {
        let (gw, mut finding) = setup(StubProvider::new());
        let arb = arbitrator(&gw);
        let a = arb.open_case(&finding).unwrap();
        let b = arb.open_case(&finding).unwrap();
        assert_ne!(a.case_id, b.case_id);
        finding.supporting_record_ids.clear();
        assert!(matches!(arb.open_case(&finding), Err(ArbitrationError::Rejected(_))));
        finding.supporting_record_ids = vec![RecordId(99)];
        assert!(matches!(arb.open_case(&finding), Err(ArbitrationError::Store(_))));
    }

    #[test]
    fn critic_prompt_is_stable() {
        let (gw, finding) = setup(StubProvider::new());
        let arb = arbitrator(&gw);
        let case = arb.open_case(&finding).unwrap();
        let a = arb.generate_critic(&case).unwrap();
        let b = arb.generate_critic(&case).unwrap();
        assert!(a.system_prompt.contains(&finding.narrative));
        assert!(a.system_prompt.contains("\"biasLevel\":4.5"));
        assert_eq!(a.system_prompt, b.system_prompt);
        assert_ne!(a.revision, b.revision);
    }

    #[test]
    fn plain_text_is_a_decision() {
        assert_eq!(
            parse_sara_action("I decide: Rule 31.").unwrap(),
            SaraAction::Decide {
                decision: "I decide: Rule 31.".into()
            }
        );
        assert!(parse_sara_action("{\"action\":\"dance\"}").is_err());
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        /// Whatever SARA says, the case closes or stops at the turn bound,
        /// and the stored transcript always replays to the recorded phases.
        #[test]
        fn terminates_and_replays(choices in prop::collection::vec(0usize..6, 1..30), max_turns in 4usize..30) {
            let actions: Vec<String> = choices
                .iter()
                .map(|c| match c {
                    0 => r#"{"action":"question","to":"SHIRLEY","questions":["q"]}"#.to_string(),
                    1 => r#"{"action":"question","to":"CRITIC","questions":["q"]}"#.to_string(),
                    2 => r#"{"action":"request","to":"SHIRLEY","content":"r"}"#.to_string(),
                    3 => r#"{"action":"request","to":"CRITIC","content":"r"}"#.to_string(),
                    4 => serde_json::json!({"action":"decide","decision": DECISION}).to_string(),
                    _ => "Decided under Rule 31 and Rule 32.".to_string(),
                })
                .collect();
            let stub = StubProvider::new()
                .agent("SHIRLEY", ["s"])
                .agent("CRITIC", ["c"])
                .agent("SARA", actions)
                .agent("SARA-VERDICT", [r#"{"outcome":"partially_upheld","rationale":"r"}"#]);
            let (gw, finding) = setup(stub);
            let arb = arbitrator(&gw);
            let mut case = arb.open_case(&finding).unwrap();
            let mut steps = 0;
            loop {
                steps += 1;
                prop_assert!(steps <= max_turns + 30);
                if case.is_closed() || case.transcript.len() >= max_turns {
                    break;
                }
                match arb.advance(&case) {
                    Ok(next) => case = next,
                    Err(ArbitrationError::QuestionBudgetExhausted { .. }) => break,
                    Err(e) => return Err(TestCaseError::fail(e.to_string())),
                }
            }
            prop_assert!(case.transcript.len() <= max_turns.max(1) + 0);
            prop_assert!(case.questions_to(Party::Shirley) <= 2);
            prop_assert!(case.questions_to(Party::Critic) <= 2);
            prop_assert!(verify_chain(&case.transcript));
            prop_assert_eq!(replay_phases(&case.transcript, 2).unwrap(), case.phase_history.clone());
            prop_assert_eq!(case.verdict.is_some(), case.is_closed());
        }
    }
}
