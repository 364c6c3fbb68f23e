mod common;

use std::io::{BufRead, BufReader, Read, Write};
use std::net::{TcpListener, TcpStream};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::{Arc, Mutex};
use std::thread;
use std::time::{Duration, Instant};

use common::obs;
use cotree_core::env::Action;
use cotree_core::oracles::{
    ActionCritic, OracleError, RemoteConfig, RemoteJudge, RemoteOracles, RewardModel, TrajectoryRecord, WIRE_VERSION,
};
use serde_json::{json, Value};

enum Reply {
    Json(u16, &'static str),
    Hang,
}

struct Mock {
    url: String,
    hits: Arc<AtomicUsize>,
    requests: Arc<Mutex<Vec<(String, Value)>>>,
}

fn read_request(stream: &mut TcpStream) -> Option<(String, Value)> {
    let mut reader = BufReader::new(stream.try_clone().ok()?);
    let mut line = String::new();
    reader.read_line(&mut line).ok()?;
    let path = line.split_whitespace().nth(1)?.to_string();
    let mut len = 0;
    loop {
        let mut h = String::new();
        reader.read_line(&mut h).ok()?;
        let h = h.trim_end();
        if h.is_empty() {
            break;
        }
        if let Some((k, v)) = h.split_once(':') {
            if k.eq_ignore_ascii_case("content-length") {
                len = v.trim().parse().ok()?;
            }
        }
    }
    let mut body = vec![0; len];
    reader.read_exact(&mut body).ok()?;
    Some((path, serde_json::from_slice(&body).unwrap_or(Value::Null)))
}

fn mock(reply: Reply) -> Mock {
    let listener = TcpListener::bind("127.0.0.1:0").unwrap();
    let url = format!("http://{}", listener.local_addr().unwrap());
    let hits = Arc::new(AtomicUsize::new(0));
    let requests = Arc::new(Mutex::new(Vec::new()));
    let (h, r) = (Arc::clone(&hits), Arc::clone(&requests));
    thread::spawn(move || {
        for stream in listener.incoming() {
            let Ok(mut stream) = stream else { continue };
            let Some(req) = read_request(&mut stream) else { continue };
            h.fetch_add(1, Ordering::SeqCst);
            r.lock().unwrap().push(req);
            match reply {
                Reply::Json(status, body) => {
                    let text = format!(
                        "HTTP/1.1 {status} X\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
                        body.len()
                    );
                    let _ = stream.write_all(text.as_bytes());
                }
                Reply::Hang => {
                    thread::sleep(Duration::from_secs(3));
                }
            }
        }
    });
    Mock { url, hits, requests }
}

fn config(url: &str) -> RemoteConfig {
    RemoteConfig {
        endpoint: url.to_string(),
        timeout_ms: 2_000,
        retries: 3,
        backoff_ms: 5,
        max_in_flight: 2,
    }
}

fn record() -> TrajectoryRecord {
    TrajectoryRecord {
        steps: Vec::new(),
        final_observation: obs(7),
    }
}

#[test]
fn reward_round_trip_uses_role_path_and_versioned_body() {
    let m = mock(Reply::Json(200, r#"{"version":1,"r":1}"#));
    let remote = RemoteOracles::new(config(&m.url));
    let v = remote.judge_trajectory("do it", &record()).unwrap();
    assert_eq!(v.r_tau, 1);
    let reqs = m.requests.lock().unwrap();
    assert_eq!(reqs.len(), 1);
    assert_eq!(reqs[0].0, "/reward");
    assert_eq!(reqs[0].1["version"], json!(WIRE_VERSION));
    assert_eq!(reqs[0].1["role"], json!("reward"));
    assert_eq!(reqs[0].1["request"]["instruction"], json!("do it"));
}

#[test]
fn raw_invoke_returns_the_document() {
    let m = mock(Reply::Json(200, r#"{"r":1}"#));
    let judge = RemoteJudge::new(config(&m.url));
    assert_eq!(judge.invoke("echo", json!({"x": 1})).unwrap(), json!({"r": 1}));
}

#[test]
fn malformed_response_is_judge_unavailable() {
    let m = mock(Reply::Json(200, "not json"));
    let remote = RemoteOracles::new(config(&m.url));
    let err = remote.judge_trajectory("do it", &record()).unwrap_err();
    assert!(matches!(err, OracleError::JudgeUnavailable(_)), "{err}");
    assert_eq!(m.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn out_of_range_verdict_is_rejected() {
    let m = mock(Reply::Json(200, r#"{"v":3}"#));
    let remote = RemoteOracles::new(config(&m.url));
    let err = remote
        .verify_action(&obs(1), &Action::click("ok"), &obs(2))
        .unwrap_err();
    assert!(matches!(err, OracleError::JudgeUnavailable(_)));
}

#[test]
fn server_errors_are_retried_then_reported() {
    let m = mock(Reply::Json(503, "{}"));
    let remote = RemoteOracles::new(config(&m.url));
    let err = remote.judge_trajectory("do it", &record()).unwrap_err();
    assert!(matches!(err, OracleError::JudgeUnavailable(ref s) if s.contains("503")), "{err}");
    assert_eq!(m.hits.load(Ordering::SeqCst), 4);
}

#[test]
fn client_errors_are_not_retried() {
    let m = mock(Reply::Json(400, "{}"));
    let remote = RemoteOracles::new(config(&m.url));
    assert!(remote.judge_trajectory("do it", &record()).is_err());
    assert_eq!(m.hits.load(Ordering::SeqCst), 1);
}

#[test]
fn timeout_becomes_judge_unavailable() {
    let m = mock(Reply::Hang);
    let mut cfg = config(&m.url);
    cfg.timeout_ms = 200;
    cfg.retries = 0;
    let remote = RemoteOracles::new(cfg);
    let t = Instant::now();
    let err = remote.judge_trajectory("do it", &record()).unwrap_err();
    assert!(matches!(err, OracleError::JudgeUnavailable(_)));
    assert!(t.elapsed() < Duration::from_secs(2));
}

#[test]
fn unreachable_endpoint_is_judge_unavailable() {
    let port = TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port();
    let mut cfg = config(&format!("http://127.0.0.1:{port}"));
    cfg.retries = 1;
    let err = RemoteOracles::new(cfg).judge_trajectory("x", &record()).unwrap_err();
    assert!(matches!(err, OracleError::JudgeUnavailable(_)));
}
