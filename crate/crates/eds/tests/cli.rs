use std::io::{Read, Write};
use std::net::{TcpListener, TcpStream};
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Output, Stdio};
use std::time::{Duration, Instant};

use chrono::{TimeZone, Utc};
use eds_core::annotation::{ExpertId, Vote};
use eds_core::corpus::ModelSource;
use eds_core::formats::{append_votes, read_labels, read_suspects, write_embeddings, write_manifest, write_scores};
use eds_core::synthetic::{generate, SyntheticConfig, SyntheticCorpus, SyntheticModel};
use serde_json::Value;
use tempfile::TempDir;

const BIN: &str = env!("CARGO_BIN_EXE_eds");

struct Workspace {
    dir: TempDir,
    synth: SyntheticCorpus,
}

impl Workspace {
    fn new() -> Self {
        let config = SyntheticConfig {
            num_items: 300,
            num_queries: 12,
            positives_per_query: 2,
            models: vec![
                SyntheticModel::new("sharp", 0.3),
                SyntheticModel::new("blurry", 1.0),
                SyntheticModel::inverted("contrarian", 0.3),
            ],
            ..SyntheticConfig::default()
        };
        let synth = generate(&config).unwrap();
        let dir = TempDir::new().unwrap();
        write_manifest(dir.path().join("manifest.tsv"), &synth.corpus).unwrap();
        for model in &synth.models {
            match model.source() {
                ModelSource::Embeddings(table) => {
                    write_embeddings(dir.path().join(format!("{}.emb", model.name())), model.name(), table).unwrap()
                }
                ModelSource::Scores(_) => {
                    let corpus = &synth.corpus;
                    let rows = corpus.queries().iter().flat_map(|q| {
                        corpus
                            .candidates(q)
                            .map(|c| (q.clone(), c.clone(), model.similarity(q, c).unwrap()))
                            .collect::<Vec<_>>()
                    });
                    write_scores(dir.path().join(format!("{}.tsv", model.name())), model.name(), rows).unwrap()
                }
            }
        }
        Workspace { dir, synth }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.dir.path().join(name)
    }

    fn arg(&self, name: &str) -> String {
        self.path(name).display().to_string()
    }

    fn models(&self) -> Vec<String> {
        vec![
            format!("sharp={}", self.arg("sharp.emb")),
            format!("blurry={}", self.arg("blurry.emb")),
            format!("contrarian={}", self.arg("contrarian.tsv")),
        ]
    }

    fn run(&self, args: &[String]) -> Output {
        Command::new(BIN)
            .args(args)
            .env("EDS_DATA_DIR", self.path("data"))
            .env("RUST_LOG", "warn")
            .output()
            .unwrap()
    }

    fn json(&self, args: &[&str]) -> Value {
        let args: Vec<String> = args.iter().map(|s| s.to_string()).collect();
        let out = self.run(&args);
        assert!(
            out.status.success(),
            "eds {args:?} failed: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        serde_json::from_slice(&out.stdout).unwrap()
    }

    fn discover(&self) -> Value {
        let mut args = vec!["discover".to_string(), "--corpus".into(), self.arg("manifest.tsv")];
        for m in self.models() {
            args.extend(["--model".to_string(), m]);
        }
        args.extend(["--k".into(), "3".into(), "--out".into(), self.arg("suspects.jsonl")]);
        let out = self.run(&args);
        assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
        serde_json::from_slice(&out.stdout).unwrap()
    }

    /// Three experts vote the planted truth, except that carol dissents on every pair.
    fn write_votes(&self) -> usize {
        let suspects = read_suspects(self.path("suspects.jsonl"), None).unwrap();
        let mut votes = Vec::new();
        for (i, sp) in suspects.pairs().iter().enumerate() {
            let truth = self.synth.is_positive(&sp.pair);
            for (e, expert) in ["alice", "bob", "carol"].into_iter().enumerate() {
                votes.push(Vote {
                    pair: sp.pair.clone(),
                    expert: ExpertId::new(expert).unwrap(),
                    label: if expert == "carol" { !truth } else { truth },
                    ts: Utc.timestamp_opt(1_700_000_000 + (3 * i + e) as i64, 0).unwrap(),
                });
            }
        }
        append_votes(self.path("votes.jsonl"), &votes).unwrap();
        suspects.len()
    }
}

#[test]
fn full_pipeline() {
    let ws = Workspace::new();

    let discovered = ws.discover();
    assert_eq!(discovered["k"], 3);
    assert_eq!(discovered["queries"], 12);
    let pairs = discovered["pairs"].as_u64().unwrap();
    assert!(pairs <= discovered["upper_bound"].as_u64().unwrap());
    assert!(pairs >= 3 * 12);

    let overlap = ws.json(&["overlap", "--suspects", &ws.arg("suspects.jsonl")]);
    assert_eq!(overlap["overlap"]["models"].as_array().unwrap().len(), 3);

    let cost = ws.json(&[
        "cost",
        "--suspects",
        &ws.arg("suspects.jsonl"),
        "--p-hat",
        "0.01",
        "--corpus",
        &ws.arg("manifest.tsv"),
    ]);
    assert_eq!(cost["brute_force_ops"], 12 * 299);
    assert_eq!(cost["eds_ops"], pairs);
    let by_count = ws.json(&[
        "cost",
        "--suspects",
        &ws.arg("suspects.jsonl"),
        "--p-hat",
        "0.01",
        "--items",
        "300",
    ]);
    assert_eq!(by_count["brute_force_ops"], cost["brute_force_ops"]);
    std::fs::create_dir_all(ws.path("data")).unwrap();
    std::fs::copy(ws.path("manifest.tsv"), ws.path("data").join("manifest.tsv")).unwrap();
    let by_default = ws.json(&["cost", "--suspects", &ws.arg("suspects.jsonl"), "--p-hat", "0.01"]);
    assert_eq!(by_default, cost);

    let n = ws.write_votes();
    let resolved = ws.json(&[
        "resolve",
        "--votes",
        &ws.arg("votes.jsonl"),
        "--suspects",
        &ws.arg("suspects.jsonl"),
        "--out",
        &ws.arg("labels.tsv"),
    ]);
    assert_eq!(resolved["resolved"], n);
    assert_eq!(resolved["incomplete"], 0);
    let labels = read_labels(ws.path("labels.tsv"), 0).unwrap();
    assert_eq!(labels.num_experts(), 3);
    for (pair, label) in labels.labels() {
        assert_eq!(*label, ws.synth.is_positive(pair), "{pair:?}");
    }

    let eval = ws.json(&[
        "eval",
        "--corpus",
        &ws.arg("manifest.tsv"),
        "--model",
        &ws.models()[0],
        "--model",
        &ws.models()[2],
        "--labels",
        &ws.arg("labels.tsv"),
        "--k",
        "1,3",
        "--neg",
        "annotated,sampled",
        "--window",
        "20:80",
        "--count",
        "5",
        "--seed",
        "3",
        "--out",
        &ws.arg("report.json"),
    ]);
    assert_eq!(eval["config"]["window"], "20:80");
    assert_eq!(eval["config"]["seed"], 3);
    let reports = eval["reports"].as_array().unwrap();
    assert_eq!(reports.len(), 4);
    let sharp = &reports[0];
    let contrarian = &reports[2];
    assert_eq!(sharp["model"], "sharp");
    assert!(sharp["hr"]["3"].as_f64().unwrap() > contrarian["hr"]["3"].as_f64().unwrap());
    let saved: Value = serde_json::from_str(&std::fs::read_to_string(ws.path("report.json")).unwrap()).unwrap();
    assert_eq!(saved, eval);

    let mut loo = vec![
        "loo".to_string(),
        "--corpus".into(),
        ws.arg("manifest.tsv"),
        "--suspects".into(),
        ws.arg("suspects.jsonl"),
        "--labels".into(),
        ws.arg("labels.tsv"),
        "--permutation".into(),
        "exact".into(),
    ];
    for m in ws.models() {
        loo.extend(["--models".to_string(), m]);
    }
    let out = ws.run(&loo);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let report: Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(report["per_subset"].as_array().unwrap().len(), 3);
}

#[test]
fn estimation_commands() {
    let ws = Workspace::new();
    let est = ws.json(&["estimate-p", "--a", "0", "--b", "1000", "--p-lb", "0.002"]);
    assert_eq!(est["p_hat"], 0.002);
    let est = ws.json(&["estimate-p", "--a", "5", "--b", "1000", "--p-lb", "0.002"]);
    assert_eq!(est["p_hat"], 0.005);

    let budget = ws.json(&["budget", "--epsilon", "0.01", "--q", "0.05"]);
    assert_eq!(budget["budget"], 2000);
}

#[test]
fn discover_defaults_to_the_data_dir() {
    let ws = Workspace::new();
    let models = ws.models();
    let out = ws.run(&[
        "discover".into(),
        "--corpus".into(),
        ws.arg("manifest.tsv"),
        "--model".into(),
        models[0].clone(),
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(ws.path("data").join("suspects.jsonl").exists());
}

#[test]
fn bad_input_fails_cleanly() {
    let ws = Workspace::new();
    let out = ws.run(&["discover".into(), "--corpus".into(), ws.arg("manifest.tsv"), "--model".into(), "no-equals".into()]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("<name>=<file>"));

    let out = ws.run(&["estimate-p".into(), "--a".into(), "5".into(), "--b".into(), "2".into(), "--p-lb".into(), "0".into()]);
    assert!(!out.status.success());

    ws.discover();
    ws.write_votes();
    let out = ws.run(&[
        "resolve".into(),
        "--votes".into(),
        ws.arg("votes.jsonl"),
        "--suspects".into(),
        ws.arg("suspects.jsonl"),
        "--experts".into(),
        "alice,bob".into(),
        "--out".into(),
        ws.arg("labels.tsv"),
    ]);
    assert!(!out.status.success());
    assert!(String::from_utf8_lossy(&out.stderr).contains("carol"));
}

struct Server(Child);

impl Drop for Server {
    fn drop(&mut self) {
        self.0.kill().ok();
        self.0.wait().ok();
    }
}

fn http(port: u16, method: &str, path: &str, body: &str) -> Option<(u16, Value)> {
    let mut stream = TcpStream::connect(("127.0.0.1", port)).ok()?;
    write!(
        stream,
        "{method} {path} HTTP/1.1\r\nHost: localhost\r\nContent-Type: application/json\r\nContent-Length: {}\r\nConnection: close\r\n\r\n{body}",
        body.len()
    )
    .ok()?;
    let mut response = String::new();
    stream.read_to_string(&mut response).ok()?;
    let status = response.split_whitespace().nth(1)?.parse().ok()?;
    let (_, payload) = response.split_once("\r\n\r\n")?;
    Some((status, serde_json::from_str(payload).unwrap_or(Value::Null)))
}

fn start(ws: &Workspace, port: u16) -> Server {
    let child = Command::new(BIN)
        .args([
            "serve",
            "--corpus",
            &ws.arg("manifest.tsv"),
            "--suspects",
            &ws.arg("suspects.jsonl"),
            "--votes",
            &ws.arg("served-votes.jsonl"),
            "--experts",
            "alice,bob,carol",
            "--port",
            &port.to_string(),
        ])
        .env("EDS_DATA_DIR", ws.path("data"))
        .env("RUST_LOG", "warn")
        .stdout(Stdio::null())
        .stderr(Stdio::null())
        .spawn()
        .unwrap();
    let server = Server(child);
    let deadline = Instant::now() + Duration::from_secs(30);
    while http(port, "GET", "/api/progress", "").is_none() {
        assert!(Instant::now() < deadline, "server did not come up");
        std::thread::sleep(Duration::from_millis(50));
    }
    server
}

fn free_port() -> u16 {
    TcpListener::bind("127.0.0.1:0").unwrap().local_addr().unwrap().port()
}

#[test]
fn serve_survives_a_kill() {
    let ws = Workspace::new();
    ws.discover();
    let port = free_port();
    let server = start(&ws, port);
    let (status, batch) = http(port, "GET", "/api/tasks?expert=alice&n=3", "").unwrap();
    assert_eq!(status, 200);
    for task in batch["pairs"].as_array().unwrap() {
        let body = format!(r#"{{"pair_id":{},"expert":"alice","label":1}}"#, task["pair_id"]);
        let (status, _) = http(port, "POST", "/api/votes", &body).unwrap();
        assert_eq!(status, 200);
    }
    let (_, before) = http(port, "GET", "/api/progress", "").unwrap();
    assert_eq!(before["votes_logged"], 3);
    drop(server);

    let port = free_port();
    let _server = start(&ws, port);
    let (_, after) = http(port, "GET", "/api/progress", "").unwrap();
    assert_eq!(before, after);
    let (status, summary) = http(port, "POST", "/api/resolve", "").unwrap();
    assert_eq!(status, 200);
    assert_eq!(summary["pairs"], 3);
    assert!(Path::new(summary["path"].as_str().unwrap()).starts_with(ws.path("data")));
}
