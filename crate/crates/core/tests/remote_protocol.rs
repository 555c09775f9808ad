//! Wire-protocol tests for the HTTP scorer client against a scripted server.

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::Duration;

use serde_json::Value;
use silverforge::scorers::{PairScorer, RemoteClient, RemoteConfig, ScorerError, SentenceEmbedder};

#[derive(Debug, Clone)]
struct Seen {
    method: String,
    path: String,
    content_type: Option<String>,
    body: String,
}

type Handler = dyn Fn(&Seen, usize) -> (u16, String) + Send + Sync;

struct MockServer {
    url: String,
    seen: Arc<Mutex<Vec<Seen>>>,
}

impl MockServer {
    /// `handler` gets the request and its 0-based arrival index.
    fn start(handler: impl Fn(&Seen, usize) -> (u16, String) + Send + Sync + 'static) -> Self {
        let listener = TcpListener::bind("127.0.0.1:0").unwrap();
        let url = format!("http://{}", listener.local_addr().unwrap());
        let seen = Arc::new(Mutex::new(Vec::new()));
        let log = Arc::clone(&seen);
        let handler: Arc<Handler> = Arc::new(handler);
        thread::spawn(move || {
            for stream in listener.incoming() {
                let Ok(stream) = stream else { break };
                let log = Arc::clone(&log);
                let handler = Arc::clone(&handler);
                thread::spawn(move || serve(stream, &log, &*handler));
            }
        });
        Self { url, seen }
    }

    fn requests(&self) -> Vec<Seen> {
        self.seen.lock().unwrap().clone()
    }
}

fn serve(stream: TcpStream, log: &Mutex<Vec<Seen>>, handler: &Handler) {
    let mut reader = BufReader::new(stream.try_clone().unwrap());
    let mut line = String::new();
    if reader.read_line(&mut line).unwrap_or(0) == 0 {
        return;
    }
    let mut parts = line.split_whitespace();
    let method = parts.next().unwrap_or_default().to_string();
    let path = parts.next().unwrap_or_default().to_string();
    let mut length = 0;
    let mut content_type = None;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).unwrap();
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        let (name, value) = h.split_once(':').unwrap();
        match name.to_ascii_lowercase().as_str() {
            "content-length" => length = value.trim().parse().unwrap(),
            "content-type" => content_type = Some(value.trim().to_string()),
            _ => {}
        }
    }
    let mut body = vec![0; length];
    reader.read_exact(&mut body).unwrap();
    let seen = Seen {
        method,
        path,
        content_type,
        body: String::from_utf8(body).unwrap(),
    };
    let index = {
        let mut log = log.lock().unwrap();
        log.push(seen.clone());
        log.len() - 1
    };
    let (status, body) = handler(&seen, index);
    let mut out = stream;
    write!(
        out,
        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .unwrap();
    out.flush().unwrap();
}

fn fixture(name: &str) -> String {
    let path: PathBuf = [
        env!("CARGO_MANIFEST_DIR"),
        "tests",
        "fixtures",
        "protocol",
        name,
    ]
    .iter()
    .collect();
    std::fs::read_to_string(path).unwrap()
}

fn json(s: &str) -> Value {
    serde_json::from_str(s).unwrap()
}

fn client(url: &str, batch_size: usize) -> RemoteClient {
    let mut cfg = RemoteConfig::new(url);
    cfg.batch_size = batch_size;
    cfg.backoff = Duration::from_millis(1);
    cfg.timeout = Duration::from_secs(5);
    RemoteClient::new(cfg).unwrap()
}

fn pairs_of(request: &Value) -> Vec<(String, String)> {
    request["pairs"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| {
            (
                p[0].as_str().unwrap().to_string(),
                p[1].as_str().unwrap().to_string(),
            )
        })
        .collect()
}

#[test]
fn golden_score_exchange_round_trips() {
    let response = fixture("score_response.json");
    let server = MockServer::start(move |_, _| (200, response.clone()));
    let golden = json(&fixture("score_request.json"));
    let owned = pairs_of(&golden);
    let pairs: Vec<(&str, &str)> = owned
        .iter()
        .map(|(a, b)| (a.as_str(), b.as_str()))
        .collect();

    let scores = client(&server.url, 32).score_batch(&pairs).unwrap();
    assert_eq!(scores, vec![0.912, 0.031, 0.998]);

    let reqs = server.requests();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].method, "POST");
    assert_eq!(reqs[0].path, "/score");
    assert!(reqs[0]
        .content_type
        .as_deref()
        .unwrap()
        .starts_with("application/json"));
    assert_eq!(json(&reqs[0].body), golden);
}

#[test]
fn golden_embed_and_health_exchanges_round_trip() {
    let embed = fixture("embed_response.json");
    let health = fixture("health_response.json");
    let server = MockServer::start(move |req, _| match req.path.as_str() {
        "/health" => (200, health.clone()),
        "/embed" => (200, embed.clone()),
        _ => (404, "{}".into()),
    });
    let c = client(&server.url, 32);
    assert_eq!(c.dim(), 3);
    let h = c.health().unwrap();
    assert_eq!(h.status, "ok");

    let golden = json(&fixture("embed_request.json"));
    let sentences: Vec<&str> = golden["sentences"]
        .as_array()
        .unwrap()
        .iter()
        .map(|s| s.as_str().unwrap())
        .collect();
    let rows = c.embed_batch(&sentences).unwrap();
    assert_eq!(rows, vec![vec![0.125, -0.5, 0.25], vec![0.0, 0.75, -0.125]]);

    let reqs = server.requests();
    assert_eq!(reqs[0].method, "GET");
    let embed_req = reqs.iter().find(|r| r.path == "/embed").unwrap();
    assert_eq!(json(&embed_req.body), golden);
}

/// Scores each pair by a function of its own text, so order errors show up.
fn echo_scores(req: &Seen) -> String {
    let pairs = pairs_of(&json(&req.body));
    let scores: Vec<f64> = pairs.iter().map(|(a, _)| a.len() as f64 / 1000.0).collect();
    serde_json::json!({ "scores": scores }).to_string()
}

#[test]
fn large_requests_are_split_and_reassembled_in_order() {
    let server = MockServer::start(|req, _| (200, echo_scores(req)));
    let texts: Vec<String> = (0..70).map(|i| "x".repeat(i + 1)).collect();
    let pairs: Vec<(&str, &str)> = texts.iter().map(|t| (t.as_str(), "y")).collect();
    let scores = client(&server.url, 32).score_batch(&pairs).unwrap();
    let want: Vec<f64> = (0..70).map(|i| (i + 1) as f64 / 1000.0).collect();
    assert_eq!(scores, want);
    let mut sizes: Vec<usize> = server
        .requests()
        .iter()
        .map(|r| pairs_of(&json(&r.body)).len())
        .collect();
    sizes.sort_unstable();
    assert_eq!(sizes, vec![6, 32, 32]);
}

#[test]
fn short_responses_are_protocol_errors() {
    let server = MockServer::start(|_, _| (200, r#"{"scores": [0.5]}"#.into()));
    let err = client(&server.url, 32)
        .score_batch(&[("a", "b"), ("c", "d")])
        .unwrap_err();
    assert!(
        matches!(err, ScorerError::Protocol { batch: 0, .. }),
        "{err:?}"
    );
}

#[test]
fn out_of_range_scores_are_protocol_errors() {
    let server = MockServer::start(|_, _| (200, r#"{"scores": [0.5, 1.2]}"#.into()));
    let err = client(&server.url, 32)
        .score_batch(&[("a", "b"), ("c", "d")])
        .unwrap_err();
    assert!(matches!(err, ScorerError::Protocol { .. }), "{err:?}");
}

#[test]
fn malformed_bodies_are_protocol_errors() {
    let server = MockServer::start(|_, _| (200, r#"{"score": "nope"}"#.into()));
    let err = client(&server.url, 32)
        .score_batch(&[("a", "b")])
        .unwrap_err();
    assert!(matches!(err, ScorerError::Protocol { .. }), "{err:?}");
}

#[test]
fn failing_batch_index_is_reported() {
    let server = MockServer::start(|req, _| {
        let pairs = pairs_of(&json(&req.body));
        if pairs[0].0 == "bad" {
            (200, r#"{"scores": []}"#.into())
        } else {
            (200, echo_scores(req))
        }
    });
    let mut pairs = vec![("ok", "y"); 4];
    pairs[2] = ("bad", "y");
    let err = client(&server.url, 2).score_batch(&pairs).unwrap_err();
    assert_eq!(err.batch(), Some(1));
}

#[test]
fn server_errors_are_retried() {
    let server = MockServer::start(|req, i| {
        if i < 2 {
            (503, r#"{"error": "loading"}"#.into())
        } else {
            (200, echo_scores(req))
        }
    });
    let scores = client(&server.url, 32)
        .score_batch(&[("abc", "d")])
        .unwrap();
    assert_eq!(scores, vec![0.003]);
    assert_eq!(server.requests().len(), 3);
}

#[test]
fn retries_give_up_after_the_budget() {
    let server = MockServer::start(|_, _| (503, "{}".into()));
    let err = client(&server.url, 32)
        .score_batch(&[("a", "b")])
        .unwrap_err();
    assert!(
        matches!(err, ScorerError::Http { status: 503, .. }),
        "{err:?}"
    );
    assert_eq!(server.requests().len(), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let server = MockServer::start(|_, _| (413, r#"{"error": "batch too large"}"#.into()));
    let err = client(&server.url, 32)
        .score_batch(&[("a", "b")])
        .unwrap_err();
    match err {
        ScorerError::Http { status, body, .. } => {
            assert_eq!(status, 413);
            assert!(body.contains("too large"));
        }
        other => panic!("{other:?}"),
    }
    assert_eq!(server.requests().len(), 1);
}

#[test]
fn unreachable_endpoint_is_a_transport_error() {
    let port = TcpListener::bind("127.0.0.1:0")
        .unwrap()
        .local_addr()
        .unwrap()
        .port();
    let err = client(&format!("http://127.0.0.1:{port}"), 32)
        .score_batch(&[("a", "b")])
        .unwrap_err();
    assert!(matches!(err, ScorerError::Transport { .. }), "{err:?}");
}

#[test]
fn ragged_embeddings_are_rejected() {
    let server = MockServer::start(|_, _| (200, r#"{"embeddings": [[1.0, 0.0], [1.0]]}"#.into()));
    let err = client(&server.url, 32)
        .embed_batch(&["a", "b"])
        .unwrap_err();
    assert!(matches!(err, ScorerError::Protocol { .. }), "{err:?}");
}

#[test]
fn zero_batch_size_is_a_config_error() {
    let mut cfg = RemoteConfig::new("http://127.0.0.1:1");
    cfg.batch_size = 0;
    assert!(matches!(
        RemoteClient::new(cfg),
        Err(ScorerError::Config(_))
    ));
}
