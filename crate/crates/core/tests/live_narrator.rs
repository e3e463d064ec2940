use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use twin_core::narrator::{with_retry, LiveConfig, LiveNarrator, NarratorError};
use twin_core::{Narrator, NarratorRequest, RequestKind};

/// Answers each connection with the next canned status and body and keeps
/// the request bodies it received.
fn stub(responses: Vec<(u16, String)>) -> (String, Arc<Mutex<Vec<Value>>>) {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    let seen = Arc::new(Mutex::new(Vec::new()));
    let bodies = seen.clone();
    thread::spawn(move || {
        for (status, body) in responses {
            let (stream, _) = listener.accept().unwrap();
            let mut reader = BufReader::new(stream);
            let mut length = 0;
            loop {
                let mut line = String::new();
                reader.read_line(&mut line).unwrap();
                if line == "\r\n" || line.is_empty() {
                    break;
                }
                if let Some((name, value)) = line.split_once(':') {
                    if name.eq_ignore_ascii_case("content-length") {
                        length = value.trim().parse().unwrap();
                    }
                }
            }
            let mut raw = vec![0; length];
            reader.read_exact(&mut raw).unwrap();
            bodies
                .lock()
                .unwrap()
                .push(serde_json::from_slice(&raw).unwrap());
            let reply = format!(
                "HTTP/1.1 {status} X\r\ncontent-type: application/json\r\ncontent-length: {}\r\nconnection: close\r\n\r\n{body}",
                body.len()
            );
            reader.get_mut().write_all(reply.as_bytes()).unwrap();
        }
    });
    (url, seen)
}

fn config(url: String) -> LiveConfig {
    LiveConfig::from_lookup(|k| match k {
        "NARRATOR_URL" => Some(url.clone()),
        "NARRATOR_MODEL" => Some("test-model".into()),
        "NARRATOR_PARAMS" => Some(r#"{"temperature": 0.7}"#.into()),
        _ => None,
    })
    .unwrap()
}

fn request() -> NarratorRequest {
    NarratorRequest::new(
        RequestKind::ChooseObjective,
        "You narrate Gracia.",
        "Lex is at Dunes.",
        4,
    )
}

fn completion(content: &str) -> String {
    serde_json::json!({"choices": [{"message": {"role": "assistant", "content": content}}]})
        .to_string()
}

#[test]
fn retries_server_errors_then_succeeds() {
    let (url, seen) = stub(vec![
        (500, "{}".into()),
        (500, "{}".into()),
        (200, completion("Walk to the Oasis and drink deeply today.")),
    ]);
    let sleeps = Arc::new(Mutex::new(Vec::new()));
    let record = sleeps.clone();
    let narrator = with_retry(
        LiveNarrator::new(config(url)).unwrap(),
        4,
        Duration::from_millis(10),
    )
    .with_sleeper(Arc::new(move |d| record.lock().unwrap().push(d)));
    let reply = narrator.complete(&request()).unwrap();
    assert_eq!(reply.text, "Walk to the Oasis");
    assert_eq!(reply.backend_id, "live:test-model");
    assert_eq!(
        *sleeps.lock().unwrap(),
        [Duration::from_millis(10), Duration::from_millis(20)]
    );

    let bodies = seen.lock().unwrap();
    assert_eq!(bodies.len(), 3);
    assert_eq!(bodies[0]["model"], "test-model");
    assert_eq!(bodies[0]["temperature"], 0.7);
    assert_eq!(bodies[0]["max_tokens"], 4);
    assert_eq!(bodies[0]["messages"][0]["role"], "system");
    assert_eq!(bodies[0]["messages"][1]["content"], "Lex is at Dunes.");
}

#[test]
fn exhausted_retries_report_unavailable() {
    let (url, _) = stub(vec![(503, "{}".into()), (503, "{}".into())]);
    let narrator = with_retry(LiveNarrator::new(config(url)).unwrap(), 2, Duration::ZERO);
    let err = narrator.complete(&request()).unwrap_err();
    assert!(
        matches!(err, NarratorError::Unavailable { attempts: 2, .. }),
        "{err:?}"
    );
    assert!(err.is_outage());
}

#[test]
fn every_non_success_status_is_retried() {
    let (url, seen) = stub(vec![
        (400, "{\"error\": \"bad\"}".into()),
        (200, completion("Rest.")),
    ]);
    let narrator = with_retry(LiveNarrator::new(config(url)).unwrap(), 4, Duration::ZERO);
    assert_eq!(narrator.complete(&request()).unwrap().text, "Rest.");
    assert_eq!(seen.lock().unwrap().len(), 2);
}

#[test]
fn invalid_requests_are_not_sent() {
    let (url, seen) = stub(Vec::new());
    let narrator = with_retry(LiveNarrator::new(config(url)).unwrap(), 4, Duration::ZERO);
    let empty = NarratorRequest::new(RequestKind::ChooseObjective, "system", "", 4);
    let err = narrator.complete(&empty).unwrap_err();
    assert!(matches!(err, NarratorError::InvalidRequest(_)), "{err:?}");
    assert!(seen.lock().unwrap().is_empty());
}

#[test]
fn malformed_bodies_are_reported() {
    let (url, _) = stub(vec![(200, "{\"choices\": []}".into())]);
    let narrator = LiveNarrator::new(config(url)).unwrap();
    assert!(matches!(
        narrator.complete(&request()),
        Err(NarratorError::Malformed(_))
    ));
}

#[test]
fn unreachable_backend_is_a_transport_error() {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!(
        "http://{}/v1/chat/completions",
        listener.local_addr().unwrap()
    );
    drop(listener);
    let err = LiveNarrator::new(config(url))
        .unwrap()
        .complete(&request())
        .unwrap_err();
    assert!(matches!(err, NarratorError::Transport(_)), "{err:?}");
    assert!(err.is_retryable());
}
