use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use stance_core::llm::{ChatRequest, HttpBackend, LlmClient, LlmError, RetryPolicy};

/// Serves one canned response per connection, in order, and records request
/// headers.
fn serve(responses: Vec<(u16, &'static str)>) -> (String, Arc<AtomicUsize>, thread::JoinHandle<Vec<String>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let counter = hits.clone();
    let handle = thread::spawn(move || {
        let mut auth = Vec::new();
        for (status, body) in responses {
            let (mut stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream.try_clone().unwrap());
            let mut length = 0usize;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                let line = line.trim_end();
                if line.is_empty() {
                    break;
                }
                let lower = line.to_ascii_lowercase();
                if let Some(v) = lower.strip_prefix("content-length:") {
                    length = v.trim().parse().unwrap();
                }
                if lower.starts_with("authorization:") {
                    auth.push(line.to_string());
                }
            }
            let mut buf = vec![0; length];
            reader.read_exact(&mut buf).unwrap();
            counter.fetch_add(1, Ordering::SeqCst);
            let reply = format!(
                "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                body.len()
            );
            stream.write_all(reply.as_bytes()).unwrap();
        }
        auth
    });
    (url, hits, handle)
}

fn quick_retry() -> RetryPolicy {
    RetryPolicy {
        base_delay: Duration::from_millis(5),
        ..RetryPolicy::default()
    }
}

const OK: &str = r#"{"choices":[{"message":{"role":"assistant","content":"Support"}}]}"#;

#[test]
fn rate_limits_are_retried_until_success() {
    let (url, hits, server) = serve(vec![(429, "{}"), (429, "{}"), (200, OK)]);
    let client = LlmClient::new(HttpBackend::new(url, "test-key", Duration::from_secs(5))).with_retry(quick_retry());
    let reply = client.complete(&ChatRequest::new("m", "prompt")).unwrap();
    assert_eq!(reply.content, "Support");
    assert_eq!(reply.attempts, 3);
    assert_eq!(hits.load(Ordering::SeqCst), 3);
    assert_eq!(client.network_calls(), 3);
    let auth = server.join().unwrap();
    assert!(auth.iter().all(|h| h.ends_with("Bearer test-key")));
}

#[test]
fn client_errors_are_not_retried() {
    let (url, hits, server) = serve(vec![(400, r#"{"error":"bad"}"#)]);
    let client = LlmClient::new(HttpBackend::new(url, "k", Duration::from_secs(5))).with_retry(quick_retry());
    match client.complete(&ChatRequest::new("m", "prompt")) {
        Err(LlmError::Http { status: 400, body }) => assert!(body.contains("bad")),
        other => panic!("expected HTTP 400, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    server.join().unwrap();
}

#[test]
fn server_errors_exhaust_retries() {
    let (url, hits, server) = serve(vec![(503, "{}"); 5]);
    let client = LlmClient::new(HttpBackend::new(url, "k", Duration::from_secs(5))).with_retry(quick_retry());
    match client.complete(&ChatRequest::new("m", "prompt")) {
        Err(LlmError::RetriesExhausted { attempts: 5, .. }) => {}
        other => panic!("expected exhaustion, got {other:?}"),
    }
    assert_eq!(hits.load(Ordering::SeqCst), 5);
    server.join().unwrap();
}

#[test]
fn malformed_success_body_is_fatal() {
    let (url, hits, server) = serve(vec![(200, r#"{"choices":[]}"#)]);
    let client = LlmClient::new(HttpBackend::new(url, "k", Duration::from_secs(5))).with_retry(quick_retry());
    assert!(matches!(
        client.complete(&ChatRequest::new("m", "prompt")),
        Err(LlmError::MalformedResponse(_))
    ));
    assert_eq!(hits.load(Ordering::SeqCst), 1);
    server.join().unwrap();
}

#[test]
fn unreachable_server_is_retried_then_reported() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let client = LlmClient::new(HttpBackend::new(format!("http://127.0.0.1:{port}"), "k", Duration::from_secs(2)))
        .with_retry(quick_retry());
    assert!(matches!(
        client.complete(&ChatRequest::new("m", "prompt")),
        Err(LlmError::RetriesExhausted { attempts: 5, .. })
    ));
}
