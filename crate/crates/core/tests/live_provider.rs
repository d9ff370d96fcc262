use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::mpsc;
use std::thread;

use recaudit::providers::{
    CompletionProvider, CompletionRequest, LiveConfig, LiveProvider, ProviderError, ProviderKind,
};
use serde_json::Value;

struct Captured {
    request_line: String,
    authorization: Option<String>,
    body: Value,
}

/// Serves the scripted `(status, body)` replies in order, one per connection.
fn mock_server(script: Vec<(u16, String)>) -> (String, mpsc::Receiver<Captured>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let addr = listener.local_addr().unwrap();
    let (tx, rx) = mpsc::channel();
    thread::spawn(move || {
        for (status, reply) in script {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut request_line = String::new();
            reader.read_line(&mut request_line).unwrap();
            let mut length = 0;
            let mut authorization = None;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let (name, value) = line.split_once(':').unwrap();
                match name.to_ascii_lowercase().as_str() {
                    "content-length" => length = value.trim().parse().unwrap(),
                    "authorization" => authorization = Some(value.trim().to_string()),
                    _ => {}
                }
            }
            let mut body = vec![0; length];
            reader.read_exact(&mut body).unwrap();
            tx.send(Captured {
                request_line: request_line.trim_end().to_string(),
                authorization,
                body: serde_json::from_slice(&body).unwrap(),
            })
            .unwrap();
            let mut stream = stream;
            write!(
                stream,
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{reply}",
                reply.len()
            )
            .unwrap();
            stream.flush().unwrap();
        }
    });
    (format!("http://{addr}/v1"), rx)
}

fn ok_body(text: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": text}}]}).to_string()
}

fn config(base_url: String, max_attempts: u32) -> LiveConfig {
    LiveConfig {
        base_url,
        api_key_env: None,
        requests_per_minute: 60_000,
        max_attempts,
        initial_backoff_ms: 1,
        max_backoff_ms: 5,
        timeout_secs: 10,
        ..LiveConfig::default()
    }
}

fn request() -> CompletionRequest {
    let mut r = CompletionRequest::new("Can you recommend 3 movies for Bob?", "test-model");
    r.temperature = 0.7;
    r.max_tokens = 256;
    r.seed = Some(42);
    r
}

#[test]
fn wire_format_and_reply_extraction() {
    let (url, seen) = mock_server(vec![(200, ok_body("1. Heat"))]);
    let provider = LiveProvider::with_key(config(url, 3), Some("sk-test".into())).unwrap();
    let result = provider.complete(&request()).unwrap();
    assert_eq!(result.text, "1. Heat");
    assert_eq!(result.provider_kind, ProviderKind::Live);
    assert_eq!(result.cache_key, request().cache_key());

    let c = seen.recv().unwrap();
    assert_eq!(c.request_line, "POST /v1/chat/completions HTTP/1.1");
    assert_eq!(c.authorization.as_deref(), Some("Bearer sk-test"));
    assert_eq!(c.body["model"], "test-model");
    assert_eq!(c.body["temperature"], 0.7);
    assert_eq!(c.body["max_tokens"], 256);
    assert_eq!(c.body["seed"], 42);
    let messages = c.body["messages"].as_array().unwrap();
    assert_eq!(messages.len(), 1);
    assert_eq!(messages[0]["role"], "user");
    assert_eq!(messages[0]["content"], "Can you recommend 3 movies for Bob?");
}

#[test]
fn retries_rate_limits_and_server_errors() {
    let (url, seen) = mock_server(vec![
        (429, "{}".into()),
        (503, "{}".into()),
        (200, ok_body("fine")),
    ]);
    let provider = LiveProvider::with_key(config(url, 3), None).unwrap();
    assert_eq!(provider.complete(&request()).unwrap().text, "fine");
    assert_eq!(seen.try_iter().count(), 3);
}

#[test]
fn gives_up_after_max_attempts() {
    let (url, seen) = mock_server(vec![(500, "{}".into()), (500, "{}".into())]);
    let provider = LiveProvider::with_key(config(url, 2), None).unwrap();
    match provider.complete(&request()) {
        Err(ProviderError::Exhausted { attempts, .. }) => assert_eq!(attempts, 2),
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(seen.try_iter().count(), 2);
}

#[test]
fn client_errors_are_not_retried() {
    let (url, seen) = mock_server(vec![(400, "{\"error\":\"bad\"}".into())]);
    let provider = LiveProvider::with_key(config(url, 4), None).unwrap();
    match provider.complete(&request()) {
        Err(ProviderError::Rejected { status, body }) => {
            assert_eq!(status, 400);
            assert!(body.contains("bad"));
        }
        other => panic!("expected rejection, got {other:?}"),
    }
    assert_eq!(seen.try_iter().count(), 1);
}

#[test]
fn malformed_body_is_reported() {
    let (url, _seen) = mock_server(vec![(200, "{\"choices\": []}".into())]);
    let provider = LiveProvider::with_key(config(url, 2), None).unwrap();
    assert!(matches!(
        provider.complete(&request()),
        Err(ProviderError::BadResponse(_))
    ));
}

#[test]
fn unreachable_endpoint_exhausts() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}/v1", listener.local_addr().unwrap());
    drop(listener);
    let provider = LiveProvider::with_key(config(url, 2), None).unwrap();
    assert!(matches!(
        provider.complete(&request()),
        Err(ProviderError::Exhausted { attempts: 2, .. })
    ));
}
