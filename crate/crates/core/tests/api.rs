mod common;

use std::sync::Arc;

use common::{doc, fixture_pipeline};
use reqwest::blocking::Client;
use saap_core::api::{self, ServerHandle};
use saap_core::fixtures;
use saap_core::Pipeline;
use serde_json::{json, Value};

fn serve(pipeline: Arc<Pipeline>, ui: Option<std::path::PathBuf>) -> ServerHandle {
    api::start(pipeline, "127.0.0.1:0".parse().unwrap(), ui).unwrap()
}

fn post(server: &ServerHandle, path: &str, body: Value) -> (u16, Value) {
    let resp = Client::new().post(server.url(path)).json(&body).send().unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap_or(Value::Null))
}

fn get(server: &ServerHandle, path: &str) -> (u16, Value) {
    let resp = Client::new().get(server.url(path)).send().unwrap();
    let status = resp.status().as_u16();
    (status, resp.json().unwrap_or(Value::Null))
}

fn ingest_and_run(server: &ServerHandle, n: usize) -> String {
    for i in 0..n {
        let (status, _) = post(server, "/documents", serde_json::to_value(doc(i, "UK")).unwrap());
        assert_eq!(status, 201);
    }
    let (status, run) = post(server, "/runs", json!({}));
    assert_eq!(status, 201, "{run}");
    assert_eq!(run["status"], "complete");
    run["runId"].as_str().unwrap().to_string()
}

#[test]
fn profile_lifecycle() {
    let server = serve(fixture_pipeline(), None);
    let profile = json!({
        "profileId": "shirley-strict",
        "name": "SHIRLEY",
        "systemPrompt": "Score the judgment strictly.",
        "temperature": 0.0
    });
    let (status, created) = post(&server, "/profiles", profile.clone());
    assert_eq!(status, 201, "{created}");
    assert_eq!(created["revision"], 1);
    let (status, err) = post(&server, "/profiles", profile);
    assert_eq!((status, err["code"].as_str()), (409, Some("conflict")));

    let (status, rev) = post(
        &server,
        "/profiles/shirley-strict/revisions",
        json!({ "temperature": 0.9, "focusQuestion": "Does the lease ruling follow earlier cases?" }),
    );
    assert_eq!(status, 201, "{rev}");
    assert_eq!(rev["revision"], 2);
    assert!(rev["systemPrompt"].as_str().unwrap().contains("follow earlier cases"));

    let (status, lineage) = get(&server, "/profiles/shirley-strict");
    assert_eq!(status, 200);
    let revisions: Vec<i64> = lineage.as_array().unwrap().iter().map(|p| p["revision"].as_i64().unwrap()).collect();
    assert_eq!(revisions, [1, 2]);

    let (status, err) = post(&server, "/profiles/shirley-strict/revisions", json!({ "outputSchemaRef": "v9" }));
    assert_eq!(status, 400, "{err}");
}

#[test]
fn record_paging_and_filters() {
    let server = serve(fixture_pipeline(), None);
    let run = ingest_and_run(&server, 30);
    let (_, page) = get(&server, &format!("/runs/{run}/records?limit=10&offset=25"));
    assert_eq!(page["total"], 30);
    assert_eq!(page["records"].as_array().unwrap().len(), 5);
    let (_, page) = get(&server, &format!("/runs/{run}/records?field=biasLevel&min=4"));
    let values: Vec<f64> = page["records"]
        .as_array()
        .unwrap()
        .iter()
        .map(|r| r["record"]["biasLevel"].as_f64().unwrap())
        .collect();
    assert_eq!(values, [4.5]);
    let (status, err) = get(&server, &format!("/runs/{run}/records?min=4"));
    assert_eq!((status, err["code"].as_str()), (400, Some("invalid_request")));
    let (status, err) = get(&server, "/runs/not-a-run");
    assert_eq!((status, err["code"].as_str()), (400, Some("invalid_request")));
}

#[test]
fn csv_export_is_text() {
    let server = serve(fixture_pipeline(), None);
    let run = ingest_and_run(&server, 3);
    let resp = Client::new().get(server.url(&format!("/export/csv?runId={run}"))).send().unwrap();
    assert!(resp.headers()["content-type"].to_str().unwrap().starts_with("text/csv"));
    let body = resp.text().unwrap();
    assert!(body.starts_with("Score,hiddenNatureNotes,"));
    assert_eq!(body.lines().count(), 4);
}

#[test]
fn stepwise_arbitration_over_http() {
    let server = serve(fixture_pipeline(), None);
    let run = ingest_and_run(&server, fixtures::SCORE_ROWS.len());
    let (status, outcome) = post(&server, "/aggregate/findings", json!({ "runId": run }));
    assert_eq!(status, 200, "{outcome}");
    let finding = outcome["findings"][0]["findingId"].as_str().unwrap().to_string();

    let (status, case) = post(&server, "/arbitrations", json!({ "findingId": finding }));
    assert_eq!(status, 201);
    let id = case["caseId"].as_str().unwrap().to_string();
    let mut last_index = 0;
    for _ in 0..3 {
        let (status, case) = post(&server, &format!("/arbitrations/{id}/advance"), json!({}));
        assert_eq!(status, 200, "{case}");
        let index = case["transcript"].as_array().unwrap().last().unwrap()["index"].as_u64().unwrap();
        assert_eq!(index, last_index + 1);
        last_index = index;
    }
    let (_, done) = post(&server, &format!("/arbitrations/{id}/complete"), json!({}));
    assert_eq!(done["phase"], "Closed");
    assert_eq!(done["verdict"]["outcome"], "claim_rejected");
    let (_, transcript) = get(&server, &format!("/arbitrations/{id}/transcript"));
    assert!(transcript["text"].as_str().unwrap().contains("Rule 31"));
    let (status, err) = post(&server, &format!("/arbitrations/{id}/advance"), json!({}));
    assert_eq!((status, err["code"].as_str()), (409, Some("invalid_phase")));
}

#[test]
fn concurrent_advances_never_fork_the_transcript() {
    let pipeline = fixture_pipeline();
    let server = serve(pipeline.clone(), None);
    let run = ingest_and_run(&server, fixtures::SCORE_ROWS.len());
    let (_, outcome) = post(&server, "/aggregate/findings", json!({ "runId": run }));
    let finding = outcome["findings"][0]["findingId"].as_str().unwrap().to_string();
    let (_, case) = post(&server, "/arbitrations", json!({ "findingId": finding }));
    let id = case["caseId"].as_str().unwrap().to_string();

    std::thread::scope(|s| {
        for _ in 0..4 {
            s.spawn(|| post(&server, &format!("/arbitrations/{id}/advance"), json!({})));
        }
    });
    let case = pipeline.case(id.parse().unwrap()).unwrap();
    let indices: Vec<usize> = case.transcript.iter().map(|t| t.index).collect();
    assert_eq!(indices, (0..indices.len()).collect::<Vec<_>>());
    assert_eq!(indices.len(), 5);
    assert!(saap_core::arbitration::verify_chain(&case.transcript));
}

#[test]
fn ui_assets_are_static_files() {
    let dir = tempfile::tempdir().unwrap();
    std::fs::write(dir.path().join("index.html"), "<html>review</html>").unwrap();
    let server = serve(fixture_pipeline(), Some(dir.path().to_path_buf()));
    let body = Client::new().get(server.url("/ui/index.html")).send().unwrap().text().unwrap();
    assert_eq!(body, "<html>review</html>");
    let (status, _) = get(&server, "/documents/unknown-doc");
    assert_eq!(status, 404);
}
