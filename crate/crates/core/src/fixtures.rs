//! Sample analyzer output used by tests, benches and the offline demo.
//!
//! The sample data is split into a score panel (25 rows) and a tone panel
//! (35 rows). Text cells are truncated, as they were received. The panels
//! share no row key, so records pair them by row index.

use crate::gateway::{StubReply, StubScript};
use crate::record::{
    record_to_object, AnalysisRecord, BiasBreakdownEntry, Inference, Rationale, SpeechActProfile,
};

/// (Score, hiddenNatureNotes, inference, biasLevel, credibility, clarity, inferentialDepth, number)
pub type ScoreRow = (f64, &'static str, &'static str, f64, f64, f64, f64, u64);

/// (humor, sarcasm, persuasive, declarative, inquisitive, context, undertonesScore, exclamatory, undertonesDescriptions)
pub type ToneRow = (f64, f64, f64, f64, f64, &'static str, f64, f64, &'static str);

pub const SCORE_ROWS: [ScoreRow; 25] = [
    (8.0, "The judgement subtly indicate...", "The court is ca...", 2.3, 9.0, 9.0, 9.0, 7),
    (8.0, "The judgement subtly emphas...", "The court supp...", 2.5, 9.0, 9.0, 9.0, 7),
    (8.0, "The judgement subtly hints at f...", "The plaintiff ma...", 2.1, 9.0, 9.0, 9.0, 7),
    (9.0, "The subtext of the judgement...", "The use of Engl...", 2.1, 9.0, 9.0, 9.0, 7),
    (9.0, "The judgment implicitly under...", "The court is ca...", 2.5, 9.0, 9.0, 9.0, 8),
    (8.0, "The document subtly suggest...", "The legal syste...", 2.5, 9.0, 9.0, 9.0, 8),
    (9.0, "The judgement subtly undersc...", "The court may ...", 2.5, 9.0, 9.0, 9.0, 9),
    (9.0, "The decision subtly reflects th...", "The plaintiff is u...", 2.5, 9.0, 9.0, 9.0, 9),
    (8.0, "The document subtly emphasi...", "The sentence ai...", 2.5, 9.0, 8.0, 9.0, 8),
    (9.0, "The judgement subtly undersc...", "The court is me...", 2.5, 9.0, 9.0, 9.0, 9),
    (7.5, "The judgement subtly indicat...", "The judgement...", 2.3, 9.0, 9.0, 9.0, 8),
    (7.5, "The judgement implicitly unde...", "The respondent...", 2.5, 9.0, 9.0, 9.0, 8),
    (9.0, "The court's decision implicitl...", "The ruling may i...", 2.5, 9.0, 9.0, 9.0, 6),
    (7.5, "The judgement subtly emphas...", "The judgement...", 2.1, 9.0, 9.0, 9.0, 8),
    (9.0, "The judgement implicitly supp...", "The court value...", 2.5, 9.0, 9.0, 9.0, 6),
    (8.0, "The judgement may implicitl...", "The municipalit...", 2.5, 9.0, 9.0, 9.0, 8),
    (9.0, "The judgement subtly undersc...", "The term 'butte...", 2.5, 9.0, 9.0, 9.0, 8),
    (8.0, "The document subtly undersc...", "the marketing c...", 2.5, 9.0, 9.0, 9.0, 8),
    (8.0, "The judgement subtly address...", "The court's de...", 4.5, 9.0, 9.0, 9.0, 8),
    (9.0, "The judgement implicitly sugg...", "The schemes w...", 2.3, 9.0, 9.0, 9.0, 9),
    (7.5, "The judgement subtly reinforce...", "The court is mi...", 2.5, 9.0, 9.0, 9.0, 8),
    (9.0, "The judgement implicitly critiq...", "The legal syste...", 2.3, 9.0, 9.0, 9.0, 9),
    (8.0, "The judgement subtly undersc...", "The Tribunal's ...", 2.1, 9.0, 9.0, 9.0, 8),
    (9.0, "The document reflects the Su...", "The Supreme C...", 3.2, 8.0, 9.0, 9.0, 8),
    (8.0, "The decision reflects an under...", "The balance be...", 2.9, 8.0, 8.0, 8.0, 7),
];

pub const TONE_ROWS: [ToneRow; 35] = [
    (0.0, 0.0, 30.0, 70.0, 0.0, "Legal dispute over debt recov...", 0.0, 0.0, "The document primarily"),
    (1.0, 1.0, 20.0, 80.0, 0.0, "Legal judgement on VAT-savin...", 1.0, 0.0, "The document primarily"),
    (0.0, 0.0, 60.0, 40.0, 0.0, "Legal Judgement", 4.0, 0.0, "The judgement predomi"),
    (0.0, 0.0, 10.0, 90.0, 0.0, "Legal judgment on securities li...", 2.5, 0.0, "The document primarily"),
    (0.0, 0.0, 70.0, 30.0, 0.0, "Supreme Court judgement on...", 2.0, 0.0, "The judgement predomi"),
    (0.0, 0.0, 80.0, 20.0, 0.0, "Legal Analysis of Medical Malp...", 0.0, 0.0, "The judgment is predom"),
    (0.0, 0.0, 80.0, 20.0, 0.0, "Legal context of due process...", 0.0, 0.0, "The tone is predomina"),
    (0.0, 0.0, 60.0, 40.0, 0.0, "Legal interpretation of federal...", 4.0, 0.0, "The document primarily"),
    (0.0, 0.0, 20.0, 70.0, 10.0, "Legal Analysis", 2.5, 0.0, "The document primarily"),
    (0.0, 0.0, 25.0, 75.0, 0.0, "Legal interpretation of the Eig...", 2.0, 0.0, "The document primarily"),
    (0.0, 0.0, 80.0, 15.0, 5.0, "Legal analysis of a criminal case", 0.0, 0.0, "The document primarily"),
    (0.0, 0.0, 30.0, 70.0, 0.0, "U.S. constitutional law", 2.5, 0.0, "The document is predor"),
    (0.0, 0.0, 30.0, 70.0, 0.0, "U.S. constitutional law", 2.5, 0.0, "The document primarily"),
    (0.0, 0.0, 70.0, 30.0, 0.0, "Legal analysis of Fourth Amen...", 1.0, 0.0, "The document predomi"),
    (0.0, 0.0, 60.0, 40.0, 0.0, "Legal adjudication of trust and...", 7.0, 0.0, "The judgment predomi"),
    (0.0, 0.0, 70.0, 30.0, 0.0, "Legal analysis of Fourth Amen...", 0.0, 0.0, "The decision is predomi"),
    (0.0, 0.0, 40.0, 50.0, 10.0, "Legal judgment on pesticide d...", 2.0, 0.0, "The document primarily"),
    (0.0, 0.0, 60.0, 40.0, 0.0, "Legal and constitutional analy...", 1.5, 0.0, "The document predomi"),
    (0.0, 0.0, 70.0, 30.0, 0.0, "Supreme Court Judgement", 3.0, 0.0, "The judgement primaril"),
    (0.0, 0.0, 20.0, 80.0, 0.0, "Legal Judgement", 0.0, 0.0, "The document primaril"),
    (0.0, 0.0, 10.0, 90.0, 0.0, "Legal judgement", 0.0, 0.0, "The document is primar"),
    (0.0, 0.0, 20.0, 80.0, 0.0, "Legal dispute over trademark r...", 0.0, 0.0, "The document primaril"),
    (1.0, 1.0, 20.0, 80.0, 0.0, "Civil dispute over loan repaym...", 1.0, 0.0, "The document primaril"),
    (1.0, 1.0, 20.0, 70.0, 5.0, "Legal judgement", 5.0, 5.0, "The document primaril"),
    (0.0, 0.0, 20.0, 80.0, 0.0, "Legal judgement", 2.0, 0.0, "The judgement contain"),
    (0.0, 0.0, 10.0, 90.0, 0.0, "Legal Decision", 0.0, 0.0, "The document is predor"),
    (1.0, 1.0, 0.0, 100.0, 0.0, "Legal Judgement", 1.0, 0.0, "The document is devoid"),
    (1.0, 1.0, 0.1, 99.8, 0.1, "Legal judgement", 1.0, 0.0, "The document is predor"),
    (0.0, 0.0, 0.0, 100.0, 0.0, "Legal Judgement", 0.0, 0.0, "The document is strictl"),
    (1.0, 1.0, 0.0, 100.0, 0.0, "Legal judgement", 1.0, 0.0, "The document contains"),
    (1.0, 1.0, 30.0, 70.0, 0.0, "Legal judgement on financial tr...", 1.0, 0.0, "The document primaril"),
    (0.0, 0.0, 0.0, 100.0, 0.0, "Legal analysis of an antitrust c...", 0.0, 0.0, "The document is declar"),
    (0.0, 0.0, 0.0, 100.0, 0.0, "Legal Judgement", 0.0, 0.0, "The document is strictl"),
    (1.0, 1.0, 0.0, 100.0, 0.0, "Legal", 1.0, 0.0, "The document is devoid"),
    (1.0, 1.0, 0.0, 100.0, 0.0, "Legal Judgement", 1.0, 0.0, "The document is level"),
];

/// Index (0-based) of the tone row with the 0.1 / 99.8 / 0.1 split.
pub const FRACTIONAL_TONE_ROW: usize = 27;

/// Index (0-based) of the score row with biasLevel 4.5.
pub const HIGH_BIAS_ROW: usize = 18;

fn build(score: &ScoreRow, tone: &ToneRow) -> AnalysisRecord {
    let (overall, notes, inference, bias, credibility, clarity, depth, number) = *score;
    let (humor, sarcasm, persuasive, declarative, inquisitive, context, undertones, exclamatory, description) =
        *tone;
    AnalysisRecord {
        overall_score: overall,
        hidden_nature_notes: notes.to_string(),
        rationales: vec![Rationale {
            rationale_id: 0,
            content: "elided in source table".to_string(),
        }],
        inferences: vec![Inference {
            inference: inference.to_string(),
        }],
        bias_level: bias,
        bias_breakdown: vec![BiasBreakdownEntry {
            writer_id: 0,
            bias_level: bias,
            note: String::new(),
        }],
        credibility_score: credibility,
        clarity_score: clarity,
        inferential_depth_score: depth,
        item_number: number,
        level_of_humor: humor,
        level_of_sarcasm: sarcasm,
        speech_acts: SpeechActProfile::new(persuasive, declarative, inquisitive, exclamatory),
        context: context.to_string(),
        undertones_score: undertones,
        undertones_description: description.to_string(),
        extensions: Default::default(),
    }
}

/// Score row `i` paired with tone row `i` (`i < 25`).
pub fn sample_record(i: usize) -> AnalysisRecord {
    build(&SCORE_ROWS[i], &TONE_ROWS[i])
}

/// The 25 fully paired records.
pub fn sample_records() -> Vec<AnalysisRecord> {
    (0..SCORE_ROWS.len()).map(sample_record).collect()
}

/// One record per tone row (35), reusing score rows cyclically.
pub fn sample_tone_records() -> Vec<AnalysisRecord> {
    TONE_ROWS
        .iter()
        .enumerate()
        .map(|(i, tone)| build(&SCORE_ROWS[i % SCORE_ROWS.len()], tone))
        .collect()
}

/// Record `i mod 25`, for building batches of arbitrary size.
pub fn sample_record_cycled(i: usize) -> AnalysisRecord {
    sample_record(i % SCORE_ROWS.len())
}

/// Analyzer payload (compact JSON) for record `i`.
pub fn sample_payload(i: usize) -> String {
    serde_json::Value::Object(record_to_object(&sample_record(i))).to_string()
}

/// Payload for an arbitrary record.
pub fn payload_for(record: &AnalysisRecord) -> String {
    serde_json::Value::Object(record_to_object(record)).to_string()
}

/// Decision text closing the sample arbitration dialogue.
pub const SAMPLE_DECISION: &str = "The reasoning stays inside the room a court has when construing a \
statute (Rule 31 on construing the rules, Rule 32 on applying the governing law). The claim of a \
marked bias is not made out.";

/// Scripted replies for a full arbitration: claim, counter, two question
/// rounds and a rejecting decision. Usable as a stub provider script.
pub fn arbitration_script() -> StubScript {
    let text = |items: &[&str]| items.iter().map(|s| StubReply::from(*s)).collect::<Vec<_>>();
    let sara = vec![
        StubReply::from(
            r#"{"action":"question","to":"SHIRLEY","questions":["Which earlier decisions does the judgment part from?","How was the level of 6 reached?"]}"#,
        ),
        StubReply::from(
            r#"{"action":"question","to":"CRITIC","questions":["Which passage states the purpose the court relied on?","Would a literal reading change the result?"]}"#,
        ),
        StubReply::from(serde_json::json!({ "action": "decide", "decision": SAMPLE_DECISION }).to_string()),
    ];
    let mut script = StubScript::default();
    script.by_agent.insert(
        "SHIRLEY".into(),
        text(&[
            "The judgment reads the lease scheme against the landlords further than earlier cases did. I put the bias at 6.",
            "An anti-avoidance doctrine was carried into a statute it had not been used on before.",
        ]),
    );
    script.by_agent.insert(
        "CRITIC".into(),
        text(&[
            "Reading a statute by its purpose is a method of construction. It is not a bias.",
            "The purpose is set out in the reasons, so the same facts would lead to the same result.",
        ]),
    );
    script.by_agent.insert("SARA".into(), sara);
    script.by_agent.insert(
        "SARA-VERDICT".into(),
        text(&[r#"{"outcome":"claim_rejected","rationale":"The marked bias claimed is not made out.","biasAssessment":null}"#]),
    );
    script
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn tone_rows_sum_to_hundred() {
        for (i, row) in TONE_ROWS.iter().enumerate() {
            let sum = row.2 + row.3 + row.4 + row.7;
            assert!((sum - 100.0).abs() <= 0.5, "row {i} sums to {sum}");
        }
        let frac = TONE_ROWS[FRACTIONAL_TONE_ROW];
        assert_eq!((frac.2, frac.3, frac.4), (0.1, 99.8, 0.1));
    }

    #[test]
    fn high_bias_row() {
        assert_eq!(SCORE_ROWS[HIGH_BIAS_ROW].3, 4.5);
        assert_eq!(sample_tone_records().len(), 35);
    }
}
