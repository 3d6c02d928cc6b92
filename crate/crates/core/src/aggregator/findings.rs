use std::collections::BTreeMap;
use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};

use super::{
    cross_border_compare, deviation_rank, AggregateError, GroupKey, MetadataSource,
    DEFAULT_CROSS_BORDER_THRESHOLD,
};
use crate::gateway::{AgentProfile, Gateway, Message};
use crate::ids::{FindingId, RecordId};
use crate::record::{fields, record_to_object};
use crate::store::{JudgmentDocument, Store, StoredRecord};

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum FindingCategory {
    BiasDeviation,
    CrossBorderPatterns,
    SameLocations,
    Custom(String),
}

impl fmt::Display for FindingCategory {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FindingCategory::BiasDeviation => "BiasDeviation",
            FindingCategory::CrossBorderPatterns => "CrossBorderPatterns",
            FindingCategory::SameLocations => "SameLocations",
            FindingCategory::Custom(name) => name,
        })
    }
}

impl From<&str> for FindingCategory {
    fn from(s: &str) -> Self {
        match s {
            "BiasDeviation" => FindingCategory::BiasDeviation,
            "CrossBorderPatterns" => FindingCategory::CrossBorderPatterns,
            "SameLocations" => FindingCategory::SameLocations,
            other => FindingCategory::Custom(other.to_string()),
        }
    }
}

impl Serialize for FindingCategory {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for FindingCategory {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        Ok(FindingCategory::from(s.as_str()))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Finding {
    pub finding_id: FindingId,
    pub category: FindingCategory,
    pub severity: f64,
    pub narrative: String,
    pub supporting_record_ids: Vec<RecordId>,
    /// `profileId@revision` of the profile that narrated the finding.
    pub profile_revision: String,
    #[serde(default)]
    pub field: Option<String>,
    /// Set for categories whose selection rule is an interpretation rather
    /// than a measurement.
    #[serde(default)]
    pub interpretive: bool,
    pub created_at: DateTime<Utc>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FindingOptions {
    pub field: String,
    pub top_k: usize,
    #[serde(default = "default_threshold")]
    pub threshold: f64,
}

fn default_threshold() -> f64 {
    DEFAULT_CROSS_BORDER_THRESHOLD
}

impl FindingOptions {
    pub fn new(field: &str, top_k: usize) -> Self {
        Self {
            field: field.to_string(),
            top_k,
            threshold: DEFAULT_CROSS_BORDER_THRESHOLD,
        }
    }
}

/// A finding before narration.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct Candidate {
    pub category: FindingCategory,
    pub severity: f64,
    pub supporting_record_ids: Vec<RecordId>,
    pub field: String,
    pub interpretive: bool,
    /// Plain statement of why the candidate was selected.
    pub summary: String,
}

/// Deterministic candidate selection.
///
/// * one `BiasDeviation` per top-`k` deviation, severity = its score;
/// * one `CrossBorderPatterns` per flagged jurisdiction pair (at most `k`,
///   largest gap first), severity = the absolute median gap;
/// * one `SameLocations` per jurisdiction holding two or more of the top-`k`
///   records, severity = the highest of their scores. Interpretive.
pub fn select_candidates(
    records: &[StoredRecord],
    meta: &dyn MetadataSource,
    options: &FindingOptions,
) -> Result<Vec<Candidate>, AggregateError> {
    if options.top_k == 0 {
        return Ok(Vec::new());
    }
    let field = options.field.as_str();
    let ranked = deviation_rank(records, field)?;
    let top: Vec<_> = ranked.iter().take(options.top_k).collect();
    let mut out: Vec<Candidate> = top
        .iter()
        .map(|s| Candidate {
            category: FindingCategory::BiasDeviation,
            severity: s.score,
            supporting_record_ids: vec![s.record_id],
            field: field.to_string(),
            interpretive: false,
            summary: format!(
                "record {} has {field} {} with deviation score {:.4} (rank {} of {})",
                s.record_id,
                s.value,
                s.score,
                s.rank,
                ranked.len()
            ),
        })
        .collect();

    match cross_border_compare(records, field, meta, options.threshold) {
        Ok(matrix) => {
            let mut flagged: Vec<_> = matrix.flagged().collect();
            flagged.sort_by(|a, b| b.diff.abs().total_cmp(&a.diff.abs()));
            for pair in flagged.into_iter().take(options.top_k) {
                let ids = records
                    .iter()
                    .filter(|r| {
                        let j = GroupKey::Jurisdiction.value_for(r, meta);
                        j == pair.a || j == pair.b
                    })
                    .map(|r| r.record_id)
                    .collect();
                out.push(Candidate {
                    category: FindingCategory::CrossBorderPatterns,
                    severity: pair.diff.abs(),
                    supporting_record_ids: ids,
                    field: field.to_string(),
                    interpretive: false,
                    summary: format!(
                        "median {field} differs by {:.4} between {} and {} (threshold {})",
                        pair.diff, pair.a, pair.b, options.threshold
                    ),
                });
            }
        }
        Err(AggregateError::InsufficientGroups { .. }) => {}
        Err(e) => return Err(e),
    }

    let mut by_location: BTreeMap<String, Vec<_>> = BTreeMap::new();
    for s in &top {
        let r = records.iter().find(|r| r.record_id == s.record_id).expect("ranked record");
        by_location
            .entry(GroupKey::Jurisdiction.value_for(r, meta))
            .or_default()
            .push(*s);
    }
    for (place, hits) in by_location.into_iter().filter(|(_, v)| v.len() >= 2) {
        out.push(Candidate {
            category: FindingCategory::SameLocations,
            severity: hits.iter().map(|s| s.score).fold(0.0, f64::max),
            supporting_record_ids: hits.iter().map(|s| s.record_id).collect(),
            field: field.to_string(),
            interpretive: true,
            summary: format!(
                "{} of the top {} {field} deviations come from {place}",
                hits.len(),
                options.top_k
            ),
        });
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FindingFailure {
    pub category: FindingCategory,
    pub supporting_record_ids: Vec<RecordId>,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct ComposeOutcome {
    pub findings: Vec<Finding>,
    pub failures: Vec<FindingFailure>,
}

fn narration_prompt(candidate: &Candidate, records: &[&StoredRecord]) -> String {
    let mut text = format!(
        "Category: {}\nSelection: {}\n\nSupporting records:\n",
        candidate.category, candidate.summary
    );
    for r in records {
        let object = serde_json::Value::Object(record_to_object(&r.record));
        text.push_str(&format!("{} ({}): {}\n", r.record_id, r.doc_id, object));
    }
    text.push_str("\nDescribe this finding in a short paragraph for an arbitration panel.");
    text
}

/// Selects candidates, asks `profile` to narrate each, and stores the
/// results. A narration failure is reported for that candidate only.
pub fn compose_findings(
    gateway: &Gateway,
    records: &[StoredRecord],
    meta: &dyn MetadataSource,
    profile: &AgentProfile,
    options: &FindingOptions,
) -> Result<ComposeOutcome, AggregateError> {
    let candidates = select_candidates(records, meta, options)?;
    let mut outcome = ComposeOutcome {
        findings: Vec::new(),
        failures: Vec::new(),
    };
    for candidate in candidates {
        let support: Vec<&StoredRecord> = records
            .iter()
            .filter(|r| candidate.supporting_record_ids.contains(&r.record_id))
            .collect();
        let prompt = narration_prompt(&candidate, &support);
        let narrated = gateway
            .complete(profile, &[Message::user(prompt)])
            .map_err(AggregateError::from)
            .and_then(|narrative| {
                let finding = Finding {
                    finding_id: FindingId(0),
                    category: candidate.category.clone(),
                    severity: candidate.severity,
                    narrative,
                    supporting_record_ids: candidate.supporting_record_ids.clone(),
                    profile_revision: profile.revision_label(),
                    field: Some(candidate.field.clone()),
                    interpretive: candidate.interpretive,
                    created_at: Utc::now(),
                };
                Ok(gateway.store().put_finding(finding)?)
            });
        match narrated {
            Ok(f) => outcome.findings.push(f),
            Err(e) => {
                tracing::warn!(category = %candidate.category, "finding not composed: {e}");
                outcome.failures.push(FindingFailure {
                    category: candidate.category,
                    supporting_record_ids: candidate.supporting_record_ids,
                    error: e.to_string(),
                });
            }
        }
    }
    Ok(outcome)
}

/// Appends an analyst question to a profile's system prompt as a new
/// revision of the same lineage.
pub fn append_focus_instruction(
    store: &Store,
    profile: &AgentProfile,
    question: &str,
) -> Result<AgentProfile, AggregateError> {
    let question = question.trim();
    if question.is_empty() {
        return Err(AggregateError::Precondition("focus question is empty".into()));
    }
    let mut next = profile.clone();
    next.system_prompt = format!("{}\n\n{question}", profile.system_prompt.trim_end());
    Ok(store.put_profile(next)?)
}

/// A finding with snapshots of everything it rests on.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct EvidenceBundle {
    pub finding: Finding,
    pub records: Vec<StoredRecord>,
    pub documents: Vec<JudgmentDocument>,
}

impl EvidenceBundle {
    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("bundle serializes")
    }

    /// Bias level of the top supporting record, if the finding is about bias.
    pub fn headline_value(&self) -> Option<f64> {
        let field = self.finding.field.as_deref().unwrap_or(fields::BIAS_LEVEL);
        self.records.first().and_then(|r| r.record.numeric(field))
    }
}

pub fn evidence_bundle(store: &Store, finding: &Finding) -> Result<EvidenceBundle, AggregateError> {
    let records = finding
        .supporting_record_ids
        .iter()
        .map(|id| store.record(*id))
        .collect::<Result<Vec<_>, _>>()?;
    let mut documents: Vec<JudgmentDocument> = Vec::new();
    for r in &records {
        if documents.iter().all(|d| d.doc_id != r.doc_id) {
            documents.push(store.document(&r.doc_id)?);
        }
    }
    Ok(EvidenceBundle {
        finding: finding.clone(),
        records,
        documents,
    })
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::super::test_support::*;
    use super::*;
    use crate::fixtures;
    use crate::gateway::{GatewaySettings, StubProvider, StubReply};
    use crate::store::{NewDocument, NewRun, RunKind};

    const NARRATIVE: &str = "The bias score of this record stands far from the rest of the run.";

    fn sam() -> AgentProfile {
        AgentProfile::new("sam-v1", "SAM", "Find patterns.", 0.0)
    }

    /// Sample rows stored under one run, all in one jurisdiction.
    fn stored_fixture(stub: StubProvider) -> (Gateway, Vec<StoredRecord>) {
        let store = Arc::new(Store::in_memory());
        let run = store
            .create_run(NewRun::for_profile(&sam(), "core-v1", RunKind::Analysis))
            .unwrap();
        for (i, r) in fixtures::sample_records().into_iter().enumerate() {
            let doc = store
                .ingest_document(NewDocument {
                    jurisdiction: "UK".into(),
                    language: "en".into(),
                    court: String::new(),
                    decision_date: None,
                    source_ref: format!("case {i}"),
                    body: format!("body {i}"),
                })
                .unwrap();
            store.put_record(run.run_id, &doc, r, 1).unwrap();
        }
        let records = store.query_records(&Default::default());
        let gw = Gateway::new(Arc::new(stub), store, GatewaySettings::immediate());
        (gw, records)
    }

    #[test]
    fn top_one_is_the_high_bias_record() {
        let (gw, records) = stored_fixture(StubProvider::new().agent("SAM", [NARRATIVE]));
        let store = gw.store().clone();
        let out = compose_findings(&gw, &records, store.as_ref(), &sam(), &FindingOptions::new("biasLevel", 1))
            .unwrap();
        assert_eq!(out.findings.len(), 1);
        let f = &out.findings[0];
        assert_eq!(f.category, FindingCategory::BiasDeviation);
        assert_eq!(f.narrative, NARRATIVE);
        let top = deviation_rank(&records, "biasLevel").unwrap()[0].clone();
        assert_eq!(f.severity, top.score);
        assert_eq!(f.supporting_record_ids, vec![top.record_id]);
        assert_eq!(store.record(top.record_id).unwrap().record.bias_level, 4.5);
        assert_eq!(f.finding_id, FindingId(1));

        let bundle = evidence_bundle(&store, f).unwrap();
        assert_eq!(bundle.headline_value(), Some(4.5));
        assert!(bundle.to_json().contains("\"biasLevel\": 4.5"));
    }

    #[test]
    fn top_zero_is_empty() {
        let (gw, records) = stored_fixture(StubProvider::new());
        let out = compose_findings(&gw, &records, gw.store().as_ref(), &sam(), &FindingOptions::new("biasLevel", 0))
            .unwrap();
        assert!(out.findings.is_empty() && out.failures.is_empty());
    }

    #[test]
    fn narration_failure_is_per_finding() {
        let (gw, records) = stored_fixture(
            StubProvider::new().agent("SAM", [StubReply::fatal("401"), NARRATIVE.into()]),
        );
        let out = compose_findings(&gw, &records, gw.store().as_ref(), &sam(), &FindingOptions::new("biasLevel", 2))
            .unwrap();
        // two deviations plus SameLocations (both top records are UK)
        assert_eq!(out.failures.len(), 1);
        assert_eq!(out.failures[0].category, FindingCategory::BiasDeviation);
        let cats: Vec<_> = out.findings.iter().map(|f| f.category.clone()).collect();
        assert_eq!(cats, [FindingCategory::BiasDeviation, FindingCategory::SameLocations]);
    }

    #[test]
    fn candidates_across_jurisdictions() {
        let records = vec![
            with_bias(1, "a", 2.3),
            with_bias(2, "b", 2.3),
            with_bias(3, "c", 2.4),
            with_bias(4, "d", 3.2),
            with_bias(5, "e", 6.0),
            with_bias(6, "f", 6.5),
        ];
        let meta = meta(&[
            ("a", "HongKong"),
            ("b", "HongKong"),
            ("c", "HongKong"),
            ("d", "US"),
            ("e", "US"),
            ("f", "US"),
        ]);
        let c = select_candidates(&records, &meta, &FindingOptions::new("biasLevel", 2)).unwrap();
        let cats: Vec<String> = c.iter().map(|c| c.category.to_string()).collect();
        assert_eq!(cats, ["BiasDeviation", "BiasDeviation", "CrossBorderPatterns", "SameLocations"]);
        assert_eq!(c[0].supporting_record_ids, vec![RecordId(6)]);
        assert_eq!(c[2].supporting_record_ids.len(), 6);
        assert!((c[2].severity - 3.7).abs() < 1e-9);
        assert!(c[3].interpretive);
        assert_eq!(c[3].supporting_record_ids, vec![RecordId(6), RecordId(5)]);
    }

    #[test]
    fn focus_instructions_chain() {
        let store = Store::in_memory();
        let v1 = store.put_profile(sam()).unwrap();
        let q1 = "Which records point to a shift in how courts weigh public interest?";
        let v2 = append_focus_instruction(&store, &v1, q1).unwrap();
        let v3 = append_focus_instruction(&store, &v2, "Second question?").unwrap();
        assert_eq!((v1.revision, v2.revision, v3.revision), (1, 2, 3));
        assert!(v2.system_prompt.ends_with(q1));
        assert!(v3.system_prompt.ends_with(&format!("{q1}\n\nSecond question?")));
        let lineage = store.profile_lineage(&v1.profile_id).unwrap();
        assert_eq!(lineage[0].system_prompt, "Find patterns.");
        assert_eq!(lineage.len(), 3);
        assert!(append_focus_instruction(&store, &v3, " ").is_err());
    }

    #[test]
    fn category_wire_names() {
        let json = serde_json::to_string(&FindingCategory::Custom("Policy".into())).unwrap();
        assert_eq!(json, "\"Policy\"");
        let back: FindingCategory = serde_json::from_str("\"SameLocations\"").unwrap();
        assert_eq!(back, FindingCategory::SameLocations);
    }
}
