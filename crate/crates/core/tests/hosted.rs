use std::net::SocketAddr;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;

use axum::http::{HeaderMap, StatusCode};
use axum::routing::post;
use axum::{Json, Router};
use saap_core::gateway::{CompletionRequest, HostedProvider, Provider, ProviderBinding};
use saap_core::{AgentProfile, Gateway, GatewayError, GatewaySettings, Message, Store};
use serde_json::{json, Value};

const KEY_VAR: &str = "SAAP_HOSTED_TEST_KEY";

/// Mock chat-completions server on a background runtime.
fn mock_server(busy_hits: Arc<AtomicUsize>) -> SocketAddr {
    let app = Router::new()
        .route(
            "/ok",
            post(|headers: HeaderMap, Json(body): Json<Value>| async move {
                if headers.get("authorization").and_then(|v| v.to_str().ok()) != Some("Bearer sk-test") {
                    return (StatusCode::UNAUTHORIZED, Json(json!({})));
                }
                let last = body["messages"].as_array().and_then(|m| m.last()).cloned().unwrap_or_default();
                let content = format!(
                    "model={} temperature={} presence_penalty={} echo={}",
                    body["model"].as_str().unwrap_or_default(),
                    body["temperature"],
                    body["presence_penalty"],
                    last["content"].as_str().unwrap_or_default()
                );
                (
                    StatusCode::OK,
                    Json(json!({ "choices": [{ "message": { "role": "assistant", "content": content } }] })),
                )
            }),
        )
        .route("/unauthorized", post(|| async { StatusCode::UNAUTHORIZED }))
        .route(
            "/busy",
            post(move || {
                let hits = busy_hits.clone();
                async move {
                    hits.fetch_add(1, Ordering::SeqCst);
                    StatusCode::SERVICE_UNAVAILABLE
                }
            }),
        )
        .route("/empty", post(|| async { Json(json!({ "choices": [] })) }));

    let runtime = tokio::runtime::Builder::new_multi_thread().enable_all().build().unwrap();
    let listener = runtime
        .block_on(tokio::net::TcpListener::bind("127.0.0.1:0"))
        .unwrap();
    let addr = listener.local_addr().unwrap();
    std::thread::spawn(move || runtime.block_on(async { axum::serve(listener, app).await.unwrap() }));
    addr
}

fn provider(addr: SocketAddr, path: &str) -> HostedProvider {
    std::env::set_var(KEY_VAR, "sk-test");
    let binding = ProviderBinding::hosted(&format!("http://{addr}{path}"), KEY_VAR, "test-model");
    HostedProvider::from_binding(&binding).unwrap()
}

fn request() -> CompletionRequest {
    let mut req = CompletionRequest::new("SHIRLEY", vec![Message::user("hello there")], 0.7);
    req.penalties.insert("presence_penalty".into(), 0.5);
    req
}

#[test]
fn content_is_extracted_and_parameters_forwarded() {
    let addr = mock_server(Arc::default());
    let text = provider(addr, "/ok").complete(&request()).unwrap();
    assert_eq!(text, "model=test-model temperature=0.7 presence_penalty=0.5 echo=hello there");
}

#[test]
fn unauthorized_is_fatal_and_not_retried() {
    let addr = mock_server(Arc::default());
    let err = provider(addr, "/unauthorized").complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Fatal(_)), "{err:?}");
}

#[test]
fn unavailable_is_retryable_and_retried_by_gateway() {
    let hits = Arc::new(AtomicUsize::new(0));
    let addr = mock_server(hits.clone());
    let hosted = provider(addr, "/busy");
    assert!(matches!(hosted.complete(&request()), Err(GatewayError::Retryable(_))));
    hits.store(0, Ordering::SeqCst);

    let settings = GatewaySettings::immediate();
    let gateway = Gateway::new(Arc::new(hosted), Arc::new(Store::in_memory()), settings.clone());
    let profile = AgentProfile::new("shirley-v1", "SHIRLEY", "Analyze.", 0.0);
    let err = gateway.complete(&profile, &[Message::user("x")]).unwrap_err();
    assert!(matches!(err, GatewayError::Retryable(_)), "{err:?}");
    assert_eq!(hits.load(Ordering::SeqCst), settings.max_retries as usize + 1);
}

#[test]
fn missing_content_is_fatal() {
    let addr = mock_server(Arc::default());
    let err = provider(addr, "/empty").complete(&request()).unwrap_err();
    assert!(matches!(err, GatewayError::Fatal(_)), "{err:?}");
}
