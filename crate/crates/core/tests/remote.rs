//! Remote providers against an in-process HTTP server that replays scripted
//! responses and records what it was sent.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::thread;

use ragtrim::compression::{ModelServerSummarizer, SummarizeError, Summarizer};
use ragtrim::embedding::{embed, EmbedError, EmbeddingProvider, RemoteEmbedder};
use ragtrim::http::{Endpoint, API_KEY_ENV_PREFIX};
use ragtrim::llm::{ChatMessage, LlmClient, LlmError, RemoteChat, RetryPolicy};
use ragtrim::retrieval::nsp::{NspError, NspScorer, RemoteNspScorer};
use ragtrim::text::TokenCounter;
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Request {
    headers: Vec<(String, String)>,
    body: Value,
}

impl Request {
    fn header(&self, name: &str) -> Option<&str> {
        self.headers.iter().find(|(k, _)| k.eq_ignore_ascii_case(name)).map(|(_, v)| v.as_str())
    }
}

struct MockServer {
    url: String,
    seen: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    /// Serves `responses` in order, one per connection, then stops accepting.
    fn start(responses: Vec<(u16, Value)>) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}/v1/endpoint", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        thread::spawn(move || {
            for (status, body) in responses {
                let Ok((stream, _)) = listener.accept() else { return };
                let mut reader = BufReader::new(stream);
                let req = read_request(&mut reader);
                log.lock().unwrap().push(req);
                let payload = body.to_string();
                let mut stream = reader.into_inner();
                let _ = write!(
                    stream,
                    "HTTP/1.1 {status} Mock\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{payload}",
                    payload.len()
                );
            }
        });
        MockServer { url, seen }
    }

    fn endpoint(&self) -> Endpoint {
        Endpoint { timeout_secs: 5, ..Endpoint::new(&self.url) }
    }

    fn requests(&self) -> Vec<Request> {
        self.seen.lock().unwrap().clone()
    }
}

fn read_request(reader: &mut BufReader<std::net::TcpStream>) -> Request {
    let mut line = String::new();
    reader.read_line(&mut line).unwrap();
    let mut headers = Vec::new();
    loop {
        line.clear();
        reader.read_line(&mut line).unwrap();
        let l = line.trim_end();
        if l.is_empty() {
            break;
        }
        if let Some((k, v)) = l.split_once(':') {
            headers.push((k.trim().to_string(), v.trim().to_string()));
        }
    }
    let find = |name: &str| headers.iter().find(|(k, _): &&(String, String)| k.eq_ignore_ascii_case(name));
    let mut body = Vec::new();
    if let Some((_, len)) = find("content-length") {
        body.resize(len.parse().unwrap(), 0);
        reader.read_exact(&mut body).unwrap();
    } else if find("transfer-encoding").is_some() {
        loop {
            line.clear();
            reader.read_line(&mut line).unwrap();
            let size = usize::from_str_radix(line.trim(), 16).unwrap();
            let mut chunk = vec![0; size + 2];
            reader.read_exact(&mut chunk).unwrap();
            if size == 0 {
                break;
            }
            body.extend_from_slice(&chunk[..size]);
        }
    }
    Request { headers, body: serde_json::from_slice(&body).unwrap_or(Value::Null) }
}

fn chat_ok(text: &str) -> Value {
    json!({
        "choices": [{"message": {"role": "assistant", "content": text}}],
        "usage": {"prompt_tokens": 17, "completion_tokens": 3}
    })
}

fn chat_client(server: &MockServer, retry: RetryPolicy) -> LlmClient {
    let provider = RemoteChat { endpoint: server.endpoint(), model: "gpt-test".into(), temperature: 0.0, max_output_tokens: Some(8) };
    LlmClient::new(Box::new(provider), retry, TokenCounter::default())
}

#[test]
fn chat_retries_server_errors_then_succeeds() {
    let server = MockServer::start(vec![(500, json!({"error": "boom"})), (200, chat_ok("The answer is (2)."))]);
    let client = chat_client(&server, RetryPolicy::immediate(2));
    let done = client.complete("question?").unwrap();
    assert_eq!(done.text, "The answer is (2).");
    assert_eq!(done.retries, 1);
    assert_eq!((done.input_tokens, done.output_tokens), (17, 3));

    let reqs = server.requests();
    assert_eq!(reqs.len(), 2);
    let body = &reqs[1].body;
    assert_eq!(body["model"], "gpt-test");
    assert_eq!(body["temperature"], 0.0);
    assert_eq!(body["max_tokens"], 8);
    assert_eq!(body["messages"][0]["role"], "user");
    assert_eq!(body["messages"][0]["content"], "question?");
    assert_eq!(client.call_log().len(), 1);
}

#[test]
fn chat_gives_up_after_retry_budget() {
    let server = MockServer::start(vec![(503, json!({})), (503, json!({})), (503, json!({}))]);
    let client = chat_client(&server, RetryPolicy::immediate(2));
    match client.complete("q") {
        Err(LlmError::RetriesExhausted { attempts, last }) => {
            assert_eq!(attempts, 3);
            assert!(matches!(*last, LlmError::Status { status: 503, .. }));
        }
        other => panic!("unexpected {other:?}"),
    }
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn unauthorized_is_auth_and_not_retried() {
    let server = MockServer::start(vec![(401, json!({"error": "bad key"})), (200, chat_ok("(1)"))]);
    let client = chat_client(&server, RetryPolicy::immediate(3));
    assert!(matches!(client.complete("q"), Err(LlmError::Auth(_))));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn context_overflow_is_distinguished() {
    let server = MockServer::start(vec![(400, json!({"error": {"code": "context_length_exceeded"}}))]);
    let client = chat_client(&server, RetryPolicy::immediate(3));
    assert!(matches!(client.complete("q"), Err(LlmError::ContextOverflow(_))));
}

#[test]
fn api_key_comes_from_the_named_variable() {
    let var = format!("{API_KEY_ENV_PREFIX}MOCK_PRESENT");
    std::env::set_var(&var, "s3cret");
    let server = MockServer::start(vec![(200, chat_ok("(3)"))]);
    let provider = RemoteChat {
        endpoint: Endpoint { api_key_env: Some(var), ..server.endpoint() },
        model: "m".into(),
        temperature: 0.0,
        max_output_tokens: None,
    };
    let client = LlmClient::new(Box::new(provider), RetryPolicy::none(), TokenCounter::default());
    client.chat(&[ChatMessage::user("hi")]).unwrap();
    let reqs = server.requests();
    assert_eq!(reqs[0].header("authorization"), Some("Bearer s3cret"));
    assert!(reqs[0].body.get("max_tokens").is_none());
}

#[test]
fn missing_api_key_fails_before_any_request() {
    let server = MockServer::start(vec![(200, chat_ok("(3)"))]);
    let provider = RemoteChat {
        endpoint: Endpoint { api_key_env: Some(format!("{API_KEY_ENV_PREFIX}MOCK_ABSENT")), ..server.endpoint() },
        model: "m".into(),
        temperature: 0.0,
        max_output_tokens: None,
    };
    let client = LlmClient::new(Box::new(provider), RetryPolicy::immediate(3), TokenCounter::default());
    match client.complete("q") {
        Err(LlmError::Auth(msg)) => assert!(msg.contains("MOCK_ABSENT")),
        other => panic!("unexpected {other:?}"),
    }
    assert!(server.requests().is_empty());
}

#[test]
fn remote_embedder_parses_and_checks_dimension() {
    let server = MockServer::start(vec![
        (200, json!({"data": [{"embedding": [0.6, 0.8, 0.0]}]})),
        (200, json!({"embedding": [1.0, 0.0]})),
        (429, json!({"error": "slow down"})),
    ]);
    let emb = RemoteEmbedder { endpoint: server.endpoint(), model: "e".into(), dim: 3 };
    assert_eq!(embed(&emb, "hello").unwrap().values, vec![0.6, 0.8, 0.0]);
    assert!(matches!(emb.embed("hello"), Err(EmbedError::DimensionMismatch { expected: 3, actual: 2 })));
    let err = emb.embed("hello").unwrap_err();
    assert!(err.is_retryable());
    assert_eq!(err.http_status(), Some(429));
    assert!(matches!(emb.embed("  "), Err(EmbedError::EmptyInput)));
    assert_eq!(server.requests()[0].body, json!({"model": "e", "input": ["hello"]}));
}

#[test]
fn remote_nsp_validates_probability() {
    let server = MockServer::start(vec![(200, json!({"probability": 0.7})), (200, json!({"probability": 1.5}))]);
    let scorer = RemoteNspScorer { endpoint: server.endpoint() };
    assert_eq!(scorer.probability("a", "b").unwrap(), 0.7);
    assert!(matches!(scorer.probability("a", "b"), Err(NspError::OutOfRange(p)) if p == 1.5));
    assert_eq!(server.requests()[0].body, json!({"text_a": "a", "text_b": "b"}));
}

#[test]
fn model_server_summarizer_round_trip() {
    let server = MockServer::start(vec![(200, json!({"summary": "short text"}))]);
    let s = ModelServerSummarizer { endpoint: server.endpoint(), supported_ratios: Some(vec![0.3, 0.5, 0.7]) };
    assert!(matches!(s.summarize("long text here", 0.4), Err(SummarizeError::UnsupportedRatio(_))));
    assert_eq!(s.summarize("long text here", 0.5).unwrap(), "short text");
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].body, json!({"text": "long text here", "target_ratio": 0.5}));
}

#[test]
fn unreachable_endpoint_is_a_retryable_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let emb = RemoteEmbedder { endpoint: Endpoint::new(format!("http://127.0.0.1:{port}/x")), model: "e".into(), dim: 2 };
    let err = emb.embed("hello").unwrap_err();
    assert!(err.is_retryable(), "{err}");
}
