//! SAM's quantitative side: deviation ranking, cohort statistics and
//! cross-jurisdiction comparison over stored records, plus finding
//! composition and the focus-instruction workflow.
//!
//! Every statistic here is computed in code. The model is only asked to
//! narrate candidates that were selected deterministically.

mod findings;
pub mod stats;

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

pub use self::findings::{
    append_focus_instruction, compose_findings, evidence_bundle, select_candidates, Candidate,
    ComposeOutcome, EvidenceBundle, Finding, FindingCategory, FindingFailure, FindingOptions,
};

use crate::gateway::GatewayError;
use crate::ids::{DocId, RecordId};
use crate::record::SchemaConfig;
use crate::store::{JudgmentDocument, Store, StoreError, StoredRecord};

/// Default cross-border flag threshold, in score points.
pub const DEFAULT_CROSS_BORDER_THRESHOLD: f64 = 0.5;

/// Fewest records a deviation ranking accepts.
pub const MIN_RANK_RECORDS: usize = 3;

#[derive(Debug, thiserror::Error)]
pub enum AggregateError {
    #[error("need at least {needed} records, found {found}")]
    InsufficientData { needed: usize, found: usize },
    #[error("field {field} is not numeric")]
    TypeError { field: String },
    #[error("unknown grouping key {key}")]
    KeyError { key: String },
    #[error("need at least 2 groups, found {found}")]
    InsufficientGroups { found: usize },
    #[error("precondition failed: {0}")]
    Precondition(String),
    #[error(transparent)]
    Gateway(#[from] GatewayError),
    #[error(transparent)]
    Store(#[from] StoreError),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct DeviationScore {
    pub record_id: RecordId,
    pub doc_id: DocId,
    pub field: String,
    pub value: f64,
    pub score: f64,
    pub rank: usize,
}

/// Which spread estimate a ranking used.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum SpreadMethod {
    /// Median and scaled MAD.
    Robust,
    /// Mean and sample standard deviation, used when MAD is zero.
    Classical,
    /// Every value equal.
    Degenerate,
}

fn field_values(records: &[StoredRecord], field: &str) -> Result<Vec<f64>, AggregateError> {
    records
        .iter()
        .map(|r| {
            r.record.numeric(field).ok_or_else(|| AggregateError::TypeError {
                field: field.to_string(),
            })
        })
        .collect()
}

/// Center, spread and method for a sample, following the robust-first
/// fallback chain.
pub fn spread_of(values: &[f64]) -> (f64, f64, SpreadMethod) {
    let median = stats::median(values).unwrap_or(0.0);
    let mad = stats::mad(values).unwrap_or(0.0);
    if mad > 0.0 {
        return (median, stats::MAD_SCALE * mad, SpreadMethod::Robust);
    }
    let mean = stats::mean(values).unwrap_or(0.0);
    let sd = stats::stdev(values).unwrap_or(0.0);
    if sd > 0.0 {
        (mean, sd, SpreadMethod::Classical)
    } else {
        (mean, 0.0, SpreadMethod::Degenerate)
    }
}

/// Ranks records by how far `field` sits from the sample center.
///
/// Scores are `|x - median| / (1.4826 * MAD)`. When MAD is zero the
/// classical `|x - mean| / stdev` is used instead, and when every value is
/// equal all scores are zero. Rank 1 is the largest score; ties go to the
/// lower record id.
pub fn deviation_rank(
    records: &[StoredRecord],
    field: &str,
) -> Result<Vec<DeviationScore>, AggregateError> {
    let values = field_values(records, field)?;
    if records.len() < MIN_RANK_RECORDS {
        return Err(AggregateError::InsufficientData {
            needed: MIN_RANK_RECORDS,
            found: records.len(),
        });
    }
    let (center, spread, method) = spread_of(&values);
    let mut scores: Vec<DeviationScore> = records
        .iter()
        .zip(&values)
        .map(|(r, &value)| DeviationScore {
            record_id: r.record_id,
            doc_id: r.doc_id.clone(),
            field: field.to_string(),
            value,
            score: match method {
                SpreadMethod::Degenerate => 0.0,
                _ => (value - center).abs() / spread,
            },
            rank: 0,
        })
        .collect();
    scores.sort_by(|a, b| {
        b.score
            .total_cmp(&a.score)
            .then(a.record_id.cmp(&b.record_id))
    });
    for (i, s) in scores.iter_mut().enumerate() {
        s.rank = i + 1;
    }
    Ok(scores)
}

/// Document metadata lookup used for grouping.
pub trait MetadataSource {
    fn document(&self, id: &DocId) -> Option<JudgmentDocument>;
}

impl MetadataSource for Store {
    fn document(&self, id: &DocId) -> Option<JudgmentDocument> {
        Store::document(self, id).ok()
    }
}

impl MetadataSource for BTreeMap<DocId, JudgmentDocument> {
    fn document(&self, id: &DocId) -> Option<JudgmentDocument> {
        self.get(id).cloned()
    }
}

/// Records whose document cannot be resolved fall into this group.
pub const UNKNOWN_GROUP: &str = "unknown";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub enum GroupKey {
    Jurisdiction,
    Language,
    Court,
    RunId,
    DocId,
}

impl FromStr for GroupKey {
    type Err = AggregateError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "jurisdiction" => GroupKey::Jurisdiction,
            "language" => GroupKey::Language,
            "court" => GroupKey::Court,
            "runId" => GroupKey::RunId,
            "docId" => GroupKey::DocId,
            _ => return Err(AggregateError::KeyError { key: s.to_string() }),
        })
    }
}

impl fmt::Display for GroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GroupKey::Jurisdiction => "jurisdiction",
            GroupKey::Language => "language",
            GroupKey::Court => "court",
            GroupKey::RunId => "runId",
            GroupKey::DocId => "docId",
        })
    }
}

impl GroupKey {
    pub fn value_for(self, record: &StoredRecord, meta: &dyn MetadataSource) -> String {
        let doc = || meta.document(&record.doc_id);
        let v = match self {
            GroupKey::RunId => Some(record.run_id.to_string()),
            GroupKey::DocId => Some(record.doc_id.to_string()),
            GroupKey::Jurisdiction => doc().map(|d| d.jurisdiction),
            GroupKey::Language => doc().map(|d| d.language),
            GroupKey::Court => doc().map(|d| d.court),
        };
        v.unwrap_or_else(|| UNKNOWN_GROUP.to_string())
    }
}

fn group<'a>(
    records: &'a [StoredRecord],
    key: GroupKey,
    meta: &dyn MetadataSource,
) -> BTreeMap<String, Vec<&'a StoredRecord>> {
    let mut groups: BTreeMap<String, Vec<&StoredRecord>> = BTreeMap::new();
    for r in records {
        groups.entry(key.value_for(r, meta)).or_default().push(r);
    }
    groups
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct FieldStats {
    pub n: usize,
    pub mean: f64,
    pub median: f64,
    pub mad: f64,
    pub min: f64,
    pub max: f64,
}

impl FieldStats {
    pub fn of(values: &[f64]) -> Option<Self> {
        Some(Self {
            n: values.len(),
            mean: stats::mean(values)?,
            median: stats::median(values)?,
            mad: stats::mad(values)?,
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CohortStats {
    pub group_by: GroupKey,
    pub group_key: String,
    pub n: usize,
    /// Per numeric field of the core schema. `mad` is unscaled.
    pub fields: BTreeMap<String, FieldStats>,
}

/// Summary statistics per group, one entry per distinct group value in
/// ascending order.
pub fn cohort_stats(
    records: &[StoredRecord],
    group_by: GroupKey,
    meta: &dyn MetadataSource,
) -> Result<Vec<CohortStats>, AggregateError> {
    if records.is_empty() {
        return Err(AggregateError::InsufficientData {
            needed: 1,
            found: 0,
        });
    }
    let schema = SchemaConfig::core();
    let numeric = schema.numeric_fields();
    Ok(group(records, group_by, meta)
        .into_iter()
        .map(|(group_key, members)| {
            let fields = numeric
                .iter()
                .filter_map(|&field| {
                    let values: Vec<f64> =
                        members.iter().filter_map(|r| r.record.numeric(field)).collect();
                    FieldStats::of(&values).map(|s| (field.to_string(), s))
                })
                .collect();
            CohortStats {
                group_by,
                group_key,
                n: members.len(),
                fields,
            }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct GroupPair {
    pub a: String,
    pub b: String,
    /// `median(a) - median(b)`.
    pub diff: f64,
    pub flagged: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "camelCase")]
pub struct CrossBorderMatrix {
    pub field: String,
    pub threshold: f64,
    pub groups: Vec<String>,
    pub medians: Vec<f64>,
    /// `diff[i][j] = medians[i] - medians[j]`.
    pub diff: Vec<Vec<f64>>,
    /// Unordered pairs `i < j`.
    pub pairs: Vec<GroupPair>,
}

impl CrossBorderMatrix {
    pub fn flagged(&self) -> impl Iterator<Item = &GroupPair> {
        self.pairs.iter().filter(|p| p.flagged)
    }
}

/// Pairwise jurisdiction median differences for `field`, flagging pairs
/// whose absolute difference exceeds `threshold`.
pub fn cross_border_compare(
    records: &[StoredRecord],
    field: &str,
    meta: &dyn MetadataSource,
    threshold: f64,
) -> Result<CrossBorderMatrix, AggregateError> {
    field_values(records, field)?;
    let groups = group(records, GroupKey::Jurisdiction, meta);
    if groups.len() < 2 {
        return Err(AggregateError::InsufficientGroups {
            found: groups.len(),
        });
    }
    let names: Vec<String> = groups.keys().cloned().collect();
    let medians: Vec<f64> = groups
        .values()
        .map(|members| {
            let values: Vec<f64> = members.iter().filter_map(|r| r.record.numeric(field)).collect();
            stats::median(&values).unwrap_or(0.0)
        })
        .collect();
    let diff: Vec<Vec<f64>> = medians
        .iter()
        .map(|a| medians.iter().map(|b| a - b).collect())
        .collect();
    let mut pairs = Vec::new();
    for i in 0..names.len() {
        for j in i + 1..names.len() {
            pairs.push(GroupPair {
                a: names[i].clone(),
                b: names[j].clone(),
                diff: diff[i][j],
                flagged: diff[i][j].abs() > threshold,
            });
        }
    }
    Ok(CrossBorderMatrix {
        field: field.to_string(),
        threshold,
        groups: names,
        medians,
        diff,
        pairs,
    })
}


#[cfg(test)]
mod tests {
    use super::test_support::*;
    use super::*;
    use crate::fixtures;
    use crate::record::fields;
    use proptest::prelude::*;

    fn sample() -> Vec<StoredRecord> {
        fixtures::sample_records()
            .into_iter()
            .enumerate()
            .map(|(i, r)| stored(i as u64 + 1, &format!("d{i}"), r))
            .collect()
    }

    /// Independent reimplementation: plain loops, no shared helpers.
    fn oracle_scores(values: &[f64]) -> Vec<f64> {
        let n = values.len();
        let mut s = values.to_vec();
        for i in 0..n {
            for j in 0..n - 1 - i {
                if s[j] > s[j + 1] {
                    s.swap(j, j + 1);
                }
            }
        }
        let med = |s: &Vec<f64>| {
            if s.len() % 2 == 1 {
                s[s.len() / 2]
            } else {
                0.5 * (s[s.len() / 2 - 1] + s[s.len() / 2])
            }
        };
        let m = med(&s);
        let mut dev: Vec<f64> = values.iter().map(|v| if *v > m { v - m } else { m - v }).collect();
        dev.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let mad = med(&dev);
        if mad != 0.0 {
            return values.iter().map(|v| (v - m).abs() / (1.4826 * mad)).collect();
        }
        let mut total = 0.0;
        for v in values {
            total += v;
        }
        let mu = total / n as f64;
        let mut ss = 0.0;
        for v in values {
            ss += (v - mu) * (v - mu);
        }
        let sd = (ss / (n as f64 - 1.0)).sqrt();
        if sd == 0.0 {
            return vec![0.0; n];
        }
        values.iter().map(|v| (v - mu).abs() / sd).collect()
    }

    #[test]
    fn high_bias_row_ranks_first() {
        let records = sample();
        let ranked = deviation_rank(&records, fields::BIAS_LEVEL).unwrap();
        assert_eq!(ranked[0].value, 4.5);
        assert_eq!(ranked[0].record_id, RecordId(fixtures::HIGH_BIAS_ROW as u64 + 1));
        let values: Vec<f64> = records.iter().map(|r| r.record.bias_level).collect();
        let expected = oracle_scores(&values);
        for s in &ranked {
            let i = s.record_id.0 as usize - 1;
            assert!((s.score - expected[i]).abs() <= 1e-9);
        }
        let ranks: Vec<usize> = ranked.iter().map(|s| s.rank).collect();
        assert_eq!(ranks, (1..=25).collect::<Vec<_>>());
    }

    #[test]
    fn all_equal_scores_zero_by_id() {
        let records: Vec<_> = [3u64, 1, 2].iter().map(|&i| with_bias(i, "d", 2.5)).collect();
        let ranked = deviation_rank(&records, fields::BIAS_LEVEL).unwrap();
        assert!(ranked.iter().all(|s| s.score == 0.0));
        let ids: Vec<u64> = ranked.iter().map(|s| s.record_id.0).collect();
        assert_eq!(ids, [1, 2, 3]);
    }

    #[test]
    fn rank_errors() {
        let two = vec![with_bias(1, "a", 1.0), with_bias(2, "b", 2.0)];
        assert!(matches!(
            deviation_rank(&two, fields::BIAS_LEVEL),
            Err(AggregateError::InsufficientData { found: 2, .. })
        ));
        let three = sample()[..3].to_vec();
        assert!(matches!(
            deviation_rank(&three, fields::CONTEXT),
            Err(AggregateError::TypeError { .. })
        ));
    }

    #[test]
    fn cohorts_partition_and_match_oracle() {
        let records = vec![
            with_bias(1, "a", 2.0),
            with_bias(2, "b", 3.0),
            with_bias(3, "c", 7.0),
            with_bias(4, "d", 2.5),
            with_bias(5, "e", 2.25),
        ];
        let meta = meta(&[("a", "UK"), ("b", "UK"), ("c", "UK"), ("d", "Sweden"), ("e", "Sweden")]);
        let cohorts = cohort_stats(&records, GroupKey::Jurisdiction, &meta).unwrap();
        assert_eq!(cohorts.len(), 2);
        assert_eq!(cohorts.iter().map(|c| c.n).sum::<usize>(), 5);
        let uk = cohorts.iter().find(|c| c.group_key == "UK").unwrap();
        let b = &uk.fields[fields::BIAS_LEVEL];
        assert!((b.mean - 4.0).abs() <= 1e-9);
        assert_eq!((b.median, b.mad, b.min, b.max), (3.0, 1.0, 2.0, 7.0));
        let se = &cohorts.iter().find(|c| c.group_key == "Sweden").unwrap().fields[fields::BIAS_LEVEL];
        assert!((se.median - 2.375).abs() <= 1e-9);
    }

    #[test]
    fn single_record_cohort() {
        let records = vec![with_bias(1, "a", 4.0)];
        let cohorts = cohort_stats(&records, GroupKey::DocId, &BTreeMap::new()).unwrap();
        let s = &cohorts[0].fields[fields::BIAS_LEVEL];
        assert_eq!((s.n, s.mean, s.median, s.mad), (1, 4.0, 4.0, 0.0));
        assert!(matches!(
            "bench".parse::<GroupKey>(),
            Err(AggregateError::KeyError { .. })
        ));
    }

    #[test]
    fn cross_border_flags() {
        let records = vec![
            with_bias(1, "a", 2.3),
            with_bias(2, "b", 2.3),
            with_bias(3, "c", 3.2),
            with_bias(4, "d", 3.2),
        ];
        let meta = meta(&[("a", "HongKong"), ("b", "HongKong"), ("c", "US"), ("d", "US")]);
        let m = cross_border_compare(&records, fields::BIAS_LEVEL, &meta, 0.5).unwrap();
        assert_eq!(m.groups, ["HongKong", "US"]);
        assert!((m.diff[0][1] + 0.9).abs() < 1e-12);
        assert_eq!(m.diff[0][1], -m.diff[1][0]);
        assert!(m.pairs[0].flagged);

        let same = meta.clone();
        let flat = vec![with_bias(1, "a", 2.5), with_bias(3, "c", 2.5)];
        let m = cross_border_compare(&flat, fields::BIAS_LEVEL, &same, 0.5).unwrap();
        assert_eq!(m.pairs[0].diff, 0.0);
        assert!(!m.pairs[0].flagged);

        let one = vec![with_bias(1, "a", 1.0), with_bias(2, "b", 2.0)];
        assert!(matches!(
            cross_border_compare(&one, fields::BIAS_LEVEL, &meta, 0.5),
            Err(AggregateError::InsufficientGroups { found: 1 })
        ));
    }

    fn ordering(ranked: &[DeviationScore]) -> Vec<RecordId> {
        ranked.iter().map(|s| s.record_id).collect()
    }

    proptest! {
        #[test]
        fn rank_is_permutation_invariant(
            values in prop::collection::vec(0u32..=100, 3..40),
            seed in any::<u64>(),
        ) {
            let records: Vec<_> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| with_bias(i as u64 + 1, "d", v as f64 / 10.0))
                .collect();
            let mut shuffled = records.clone();
            let mut state = seed;
            for i in (1..shuffled.len()).rev() {
                state = state.wrapping_mul(6364136223846793005).wrapping_add(1442695040888963407);
                shuffled.swap(i, (state >> 33) as usize % (i + 1));
            }
            let a = deviation_rank(&records, fields::BIAS_LEVEL).unwrap();
            let b = deviation_rank(&shuffled, fields::BIAS_LEVEL).unwrap();
            prop_assert_eq!(a, b);
        }

        #[test]
        fn rank_order_survives_positive_scaling(
            values in prop::collection::vec(0u32..=100, 3..40),
            factor in prop::sample::select(vec![0.25, 0.5, 2.0, 3.0, 8.0]),
        ) {
            let mk = |scale: f64| -> Vec<StoredRecord> {
                values
                    .iter()
                    .enumerate()
                    .map(|(i, &v)| {
                        let mut r = with_bias(i as u64 + 1, "d", 0.0);
                        r.record.extensions.insert(
                            "x".into(),
                            crate::record::ExtensionValue::Number(v as f64 * scale),
                        );
                        r
                    })
                    .collect()
            };
            let a = deviation_rank(&mk(1.0), "x").unwrap();
            let b = deviation_rank(&mk(factor), "x").unwrap();
            prop_assert_eq!(ordering(&a), ordering(&b));
        }

        #[test]
        fn scores_match_oracle(values in prop::collection::vec(0u32..=100, 3..50)) {
            let records: Vec<_> = values
                .iter()
                .enumerate()
                .map(|(i, &v)| with_bias(i as u64 + 1, "d", v as f64 / 10.0))
                .collect();
            let raw: Vec<f64> = values.iter().map(|&v| v as f64 / 10.0).collect();
            let expected = oracle_scores(&raw);
            for s in deviation_rank(&records, fields::BIAS_LEVEL).unwrap() {
                prop_assert!((s.score - expected[s.record_id.0 as usize - 1]).abs() <= 1e-9);
            }
        }
    }
}
