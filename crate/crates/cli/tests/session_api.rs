use std::io::{BufRead, BufReader};
use std::path::Path;
use std::process::{Child, Command, Stdio};

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde_json::{json, Value};

struct Server {
    child: Child,
    base: String,
}

impl Server {
    fn start(dir: &Path) -> Server {
        let mut child = Command::new(env!("CARGO_BIN_EXE_alloc-lab"))
            .args(["serve", "--addr", "127.0.0.1:0", "--state-dir"])
            .arg(dir)
            .stdout(Stdio::piped())
            .stderr(Stdio::inherit())
            .spawn()
            .expect("server starts");
        let mut line = String::new();
        BufReader::new(child.stdout.take().unwrap())
            .read_line(&mut line)
            .unwrap();
        let base = line
            .trim()
            .strip_prefix("listening on ")
            .unwrap_or_else(|| panic!("unexpected banner {line:?}"))
            .to_string();
        Server { child, base }
    }

    fn url(&self, path: &str) -> String {
        format!("{}{}", self.base, path)
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        let _ = self.child.kill();
        let _ = self.child.wait();
    }
}

fn create(c: &Client, s: &Server, body: Value) -> Value {
    let r = c.post(s.url("/sessions")).json(&body).send().unwrap();
    assert_eq!(r.status(), StatusCode::CREATED);
    r.json().unwrap()
}

fn enroll(c: &Client, s: &Server, id: &str) -> Value {
    let r = c.post(s.url(&format!("/sessions/{id}/enroll"))).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.json().unwrap()
}

fn outcome(c: &Client, s: &Server, id: &str, m: u64, success: bool) -> reqwest::blocking::Response {
    c.post(s.url(&format!("/sessions/{id}/subjects/{m}/outcome")))
        .json(&json!({ "success": success }))
        .send()
        .unwrap()
}

fn state_bytes(c: &Client, s: &Server, id: &str) -> Vec<u8> {
    let r = c.get(s.url(&format!("/sessions/{id}"))).send().unwrap();
    assert_eq!(r.status(), StatusCode::OK);
    r.bytes().unwrap().to_vec()
}

fn dbcd_rsihr(seed: u64) -> Value {
    json!({ "design": { "kind": "dbcd", "target": "rsihr", "gamma": 2 }, "arms": 2, "seed": seed })
}

#[test]
fn dbcd_burn_in_is_round_robin() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let c = Client::new();
    let view = create(&c, &s, dbcd_rsihr(11));
    let id = view["id"].as_str().unwrap().to_string();
    assert_eq!(view["burn_in"], json!({ "required": 4, "completed": 0 }));

    let first: Vec<Value> = (0..4).map(|_| enroll(&c, &s, &id)).collect();
    for (i, e) in first.iter().enumerate() {
        assert_eq!(e["subject_index"], i as u64);
        assert_eq!(e["assignment"], (i % 2) as u64);
        assert_eq!(e["burn_in"], true);
    }
    assert_eq!(enroll(&c, &s, &id)["burn_in"], false);

    let view: Value = serde_json::from_slice(&state_bytes(&c, &s, &id)).unwrap();
    assert_eq!(view["n"], 5);
    assert_eq!(view["pending"].as_array().unwrap().len(), 5);
    assert_eq!(view["observed"], json!([0, 0]));
}

#[test]
fn outcomes_update_counts_and_estimates() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let c = Client::new();
    let id = create(&c, &s, dbcd_rsihr(3))["id"].as_str().unwrap().to_string();
    for _ in 0..4 {
        enroll(&c, &s, &id);
    }
    let r = outcome(&c, &s, &id, 0, true);
    assert_eq!(r.status(), StatusCode::OK);
    let r = outcome(&c, &s, &id, 3, false);
    let view: Value = r.json().unwrap();
    assert_eq!(view["successes"], json!([1, 0]));
    assert_eq!(view["observed"], json!([1, 1]));
    assert_eq!(view["p_hat"], json!([1.0, 0.0]));
    let pending: Vec<u64> = view["pending"]
        .as_array()
        .unwrap()
        .iter()
        .map(|p| p["subject"].as_u64().unwrap())
        .collect();
    assert_eq!(pending, vec![1, 2]);
    let rho = view["rho_hat"].as_array().unwrap();
    // (S+1)/(N+2) gives p_hat = (2/3, 1/3); RSIHR is sqrt(p1)/(sqrt(p1)+sqrt(p2))
    let expect = (2.0f64 / 3.0).sqrt() / ((2.0f64 / 3.0).sqrt() + (1.0f64 / 3.0).sqrt());
    assert!((rho[0].as_f64().unwrap() - expect).abs() < 1e-12);
    let probs = view["next_probabilities"].as_array().unwrap();
    assert!((probs[0].as_f64().unwrap() + probs[1].as_f64().unwrap() - 1.0).abs() < 1e-12);
}

#[test]
fn error_statuses() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let c = Client::new();

    let r = c.get(s.url("/sessions/nope")).send().unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    let r = c.post(s.url("/sessions/nope/enroll")).send().unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);

    for bad in [
        json!({ "design": { "kind": "bogus" }, "arms": 2, "seed": 1 }),
        json!({ "design": { "kind": "pw" }, "arms": 3, "seed": 1 }),
        json!({ "design": { "kind": "rpw" }, "arms": 9, "seed": 1 }),
        json!({ "design": { "kind": "dbcd", "target": "rsihr" }, "arms": 3, "seed": 1 }),
        json!({ "design": { "kind": "pw" }, "arms": 2, "seed": 1, "extra": true }),
        json!({ "design": { "kind": "pw" }, "arms": 2 }),
    ] {
        let r = c.post(s.url("/sessions")).json(&bad).send().unwrap();
        assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
        let body: Value = r.json().unwrap();
        assert!(body["error"].is_string());
    }
    let r = c.post(s.url("/sessions")).body("not json").send().unwrap();
    assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY);

    let id = create(&c, &s, json!({ "design": { "kind": "rpw" }, "arms": 2, "seed": 5 }))["id"]
        .as_str()
        .unwrap()
        .to_string();
    enroll(&c, &s, &id);
    assert_eq!(outcome(&c, &s, &id, 1, true).status(), StatusCode::NOT_FOUND);
    let r = c
        .post(s.url(&format!("/sessions/{id}/subjects/abc/outcome")))
        .json(&json!({ "success": true }))
        .send()
        .unwrap();
    assert_eq!(r.status(), StatusCode::NOT_FOUND);
    for bad in [json!({}), json!({ "success": "yes" }), json!({ "success": true, "x": 1 })] {
        let r = c
            .post(s.url(&format!("/sessions/{id}/subjects/0/outcome")))
            .json(&bad)
            .send()
            .unwrap();
        assert_eq!(r.status(), StatusCode::UNPROCESSABLE_ENTITY, "{bad}");
    }

    assert_eq!(outcome(&c, &s, &id, 0, true).status(), StatusCode::OK);
    let before = state_bytes(&c, &s, &id);
    assert_eq!(outcome(&c, &s, &id, 0, false).status(), StatusCode::CONFLICT);
    assert_eq!(state_bytes(&c, &s, &id), before);
}

#[test]
fn restart_replays_to_identical_state() {
    let dir = tempfile::tempdir().unwrap();
    let c = Client::new();
    let designs = [
        dbcd_rsihr(21),
        json!({ "design": { "kind": "dl" }, "arms": 3, "seed": 22 }),
        json!({ "design": { "kind": "rbcd", "target": "neyman" }, "arms": 2, "seed": 23, "name": "ward 4" }),
    ];

    let s = Server::start(dir.path());
    let mut ids = Vec::new();
    for d in &designs {
        let id = create(&c, &s, d.clone())["id"].as_str().unwrap().to_string();
        // The control receives the same operations and is never restarted.
        let control = create(&c, &s, d.clone())["id"].as_str().unwrap().to_string();
        for step in 0..30u64 {
            let a = enroll(&c, &s, &id);
            let b = enroll(&c, &s, &control);
            assert_eq!(a, b);
            if step % 3 != 2 {
                let m = step / 2;
                let success = step % 5 < 3;
                if outcome(&c, &s, &id, m, success).status() == StatusCode::OK {
                    assert_eq!(outcome(&c, &s, &control, m, success).status(), StatusCode::OK);
                }
            }
        }
        ids.push((id, control));
    }
    let before: Vec<Vec<u8>> = ids.iter().map(|(id, _)| state_bytes(&c, &s, id)).collect();
    drop(s);

    let s = Server::start(dir.path());
    for ((id, control), before) in ids.iter().zip(&before) {
        assert_eq!(&state_bytes(&c, &s, id), before, "session {id}");
        for _ in 0..10 {
            assert_eq!(enroll(&c, &s, id), enroll(&c, &s, control));
        }
    }
    let listed: Vec<String> = c.get(s.url("/sessions")).send().unwrap().json().unwrap();
    assert_eq!(listed.len(), 6);

    let fresh = create(&c, &s, dbcd_rsihr(1))["id"].as_str().unwrap().to_string();
    assert!(!listed.contains(&fresh));
}

#[test]
fn event_log_is_line_delimited_json() {
    let dir = tempfile::tempdir().unwrap();
    let s = Server::start(dir.path());
    let c = Client::new();
    let id = create(&c, &s, json!({ "design": { "kind": "pw" }, "arms": 2, "seed": 9 }))["id"]
        .as_str()
        .unwrap()
        .to_string();
    enroll(&c, &s, &id);
    outcome(&c, &s, &id, 0, false);
    let text = std::fs::read_to_string(dir.path().join(format!("{id}.jsonl"))).unwrap();
    let kinds: Vec<String> = text
        .lines()
        .map(|l| {
            let v: Value = serde_json::from_str(l).unwrap();
            assert!(v["ts"].is_u64());
            assert!(v["payload"].is_object());
            v["kind"].as_str().unwrap().to_string()
        })
        .collect();
    assert_eq!(kinds, ["create", "enroll", "outcome"]);
}
