use std::io::{BufRead, BufReader, Read, Write};
use std::net::TcpListener;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use erarag::embed::{EmbeddingCache, RemoteEmbedder};
use erarag::remote::{OpenAiClient, RetryPolicy};
use erarag::retrieve::RemoteGenerator;
use erarag::summarize::{RemoteSummarizer, SummaryRequest};
use erarag::{Embedder, Error, Generator, Summarizer};
use serde_json::{json, Value};

#[derive(Debug, Clone)]
struct Request {
    path: String,
    auth: Option<String>,
    body: Value,
}

type Handler = dyn Fn(usize, &Request) -> (u16, String) + Send + Sync;

/// Minimal HTTP/1.1 server answering each request via `handler(index, request)`.
struct MockServer {
    base: String,
    log: Arc<Mutex<Vec<Request>>>,
}

impl MockServer {
    fn start(handler: impl Fn(usize, &Request) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let log = Arc::new(Mutex::new(Vec::new()));
        let handler: Arc<Handler> = Arc::new(handler);
        let server_log = Arc::clone(&log);
        std::thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(mut stream) = stream else { break };
                let mut reader = BufReader::new(stream.try_clone().unwrap());
                let mut line = String::new();
                if reader.read_line(&mut line).unwrap_or(0) == 0 {
                    continue;
                }
                let path = line.split_whitespace().nth(1).unwrap_or("").to_string();
                let mut len = 0;
                let mut auth = None;
                loop {
                    let mut h = String::new();
                    reader.read_line(&mut h).unwrap();
                    let h = h.trim_end();
                    if h.is_empty() {
                        break;
                    }
                    let (name, value) = h.split_once(':').unwrap();
                    match name.to_ascii_lowercase().as_str() {
                        "content-length" => len = value.trim().parse().unwrap(),
                        "authorization" => auth = Some(value.trim().to_string()),
                        _ => {}
                    }
                }
                let mut body = vec![0; len];
                reader.read_exact(&mut body).unwrap();
                let req = Request {
                    path,
                    auth,
                    body: serde_json::from_slice(&body).unwrap_or(Value::Null),
                };
                let index = {
                    let mut log = server_log.lock().unwrap();
                    log.push(req.clone());
                    log.len() - 1
                };
                let (status, text) = handler(index, &req);
                let resp = format!(
                    "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{text}",
                    text.len()
                );
                let _ = stream.write_all(resp.as_bytes());
            }
        });
        Self { base, log }
    }

    fn requests(&self) -> Vec<Request> {
        self.log.lock().unwrap().clone()
    }

    fn client(&self, attempts: u32) -> OpenAiClient {
        OpenAiClient::new(self.base.clone(), Some("secret".into()))
            .unwrap()
            .with_retry(RetryPolicy {
                base: Duration::from_millis(1),
                factor: 2,
                max_attempts: attempts,
            })
    }
}

/// Embeds each input as `[len, 1, 0]` so results are checkable.
fn embeddings_body(req: &Request) -> String {
    let inputs = req.body["input"].as_array().unwrap();
    let data: Vec<Value> = inputs
        .iter()
        .enumerate()
        .rev()
        .map(|(i, t)| json!({"index": i, "embedding": [t.as_str().unwrap().len() as f32, 1.0, 0.0]}))
        .collect();
    json!({ "data": data }).to_string()
}

fn chat_body(content: &str, usage: bool) -> String {
    let mut v = json!({"choices": [{"message": {"role": "assistant", "content": content}}]});
    if usage {
        v["usage"] = json!({"prompt_tokens": 11, "completion_tokens": 3});
    }
    v.to_string()
}

#[test]
fn embeddings_round_trip_in_input_order() {
    let server = MockServer::start(|_, r| (200, embeddings_body(r)));
    let emb = RemoteEmbedder::new(server.client(1), "m".into(), 3, EmbeddingCache::in_memory());
    let out = emb.embed_batch(&["ab", "abcd"]).unwrap();
    let expect = |len: f32| {
        let n = (len * len + 1.0).sqrt();
        [len / n, 1.0 / n, 0.0]
    };
    for (e, len) in out.iter().zip([2.0, 4.0]) {
        for (a, b) in e.values().iter().zip(expect(len)) {
            assert!((a - b).abs() < 1e-6);
        }
    }
    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].path, "/v1/embeddings");
    assert_eq!(reqs[0].auth.as_deref(), Some("Bearer secret"));
    assert_eq!(reqs[0].body["model"], "m");
}

#[test]
fn retries_server_errors_and_rate_limits() {
    let server = MockServer::start(|i, r| match i {
        0 => (500, "{}".into()),
        1 => (429, "{}".into()),
        _ => (200, embeddings_body(r)),
    });
    let emb = RemoteEmbedder::new(server.client(3), "m".into(), 3, EmbeddingCache::in_memory());
    emb.embed_text("hello").unwrap();
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn gives_up_after_max_attempts() {
    let server = MockServer::start(|_, _| (503, "{\"error\":\"busy\"}".into()));
    let emb = RemoteEmbedder::new(server.client(4), "m".into(), 3, EmbeddingCache::in_memory());
    match emb.embed_text("hello") {
        Err(Error::Provider {
            attempts, retryable, ..
        }) => {
            assert_eq!(attempts, 4);
            assert!(retryable);
        }
        other => panic!("expected provider error, got {other:?}"),
    }
    assert_eq!(server.requests().len(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _| (400, "{}".into()));
    let emb = RemoteEmbedder::new(server.client(5), "m".into(), 3, EmbeddingCache::in_memory());
    assert!(matches!(
        emb.embed_text("x"),
        Err(Error::Provider {
            attempts: 1,
            retryable: false,
            ..
        })
    ));
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn cache_avoids_repeat_requests_and_persists() {
    let server = MockServer::start(|_, r| (200, embeddings_body(r)));
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("cache.bin");
    let first = {
        let emb = RemoteEmbedder::new(server.client(1), "m".into(), 3, EmbeddingCache::open(&path).unwrap());
        let a = emb.embed_batch(&["one", "two", "one"]).unwrap();
        assert_eq!(a[0], a[2]);
        let b = emb.embed_batch(&["two", "one"]).unwrap();
        assert_eq!(b[1], a[0]);
        assert_eq!(emb.cache().len(), 2);
        a
    };
    assert_eq!(server.requests().len(), 1);
    assert_eq!(server.requests()[0].body["input"], json!(["one", "two"]));

    let emb = RemoteEmbedder::new(server.client(1), "m".into(), 3, EmbeddingCache::open(&path).unwrap());
    assert_eq!(emb.embed_batch(&["one", "two"]).unwrap(), first[..2].to_vec());
    assert_eq!(server.requests().len(), 1);

    // a different model is a different key
    let other = RemoteEmbedder::new(server.client(1), "m2".into(), 3, EmbeddingCache::open(&path).unwrap());
    other.embed_text("one").unwrap();
    assert_eq!(server.requests().len(), 2);
}

#[test]
fn wrong_dimension_is_rejected() {
    let server = MockServer::start(|_, r| (200, embeddings_body(r)));
    let emb = RemoteEmbedder::new(server.client(1), "m".into(), 4, EmbeddingCache::in_memory());
    assert!(matches!(emb.embed_text("x"), Err(Error::Provider { .. })));
}

#[test]
fn summarizer_uses_reported_usage_or_counts_tokens() {
    let server = MockServer::start(|i, _| (200, chat_body("short summary text", i == 0)));
    let s = RemoteSummarizer::new(server.client(1), "chat".into());
    let req = SummaryRequest::new(vec!["alpha beta".into(), "gamma".into()], 16).unwrap();
    let reported = s.summarize(&req).unwrap();
    assert_eq!(reported.text, "short summary text");
    assert_eq!(
        (reported.usage.prompt_tokens, reported.usage.completion_tokens),
        (11, 3)
    );
    let counted = s.summarize(&req).unwrap();
    let prompt_tokens = req.prompt().split_whitespace().count() as u64;
    assert_eq!(
        (counted.usage.prompt_tokens, counted.usage.completion_tokens),
        (prompt_tokens, 3)
    );

    let reqs = server.requests();
    assert_eq!(reqs[0].path, "/v1/chat/completions");
    assert_eq!(reqs[0].body["model"], "chat");
    assert_eq!(reqs[0].body["messages"][0]["role"], "user");
    assert_eq!(reqs[0].body["messages"][0]["content"], req.prompt());
}

#[test]
fn overlong_summary_is_truncated() {
    let server = MockServer::start(|_, _| {
        (
            200,
            chat_body(&(0..20).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "), true),
        )
    });
    let s = RemoteSummarizer::new(server.client(1), "chat".into());
    let out = s
        .summarize(&SummaryRequest::new(vec!["x".into(), "y".into()], 16).unwrap())
        .unwrap();
    assert_eq!(out.text, (0..16).map(|i| format!("w{i}")).collect::<Vec<_>>().join(" "));
    assert!(out.truncated);
}

#[test]
fn generator_sends_query_prompt() {
    let server = MockServer::start(|_, _| (200, chat_body("the answer", true)));
    let g = RemoteGenerator::new(server.client(1), "chat".into());
    let (text, usage) = g.generate("what?", "some context").unwrap();
    assert_eq!(text, "the answer");
    assert_eq!(usage.completion_tokens, 3);
    let content = server.requests()[0].body["messages"][0]["content"]
        .as_str()
        .unwrap()
        .to_string();
    assert_eq!(content, erarag::retrieve::query_prompt("what?", "some context"));
}
