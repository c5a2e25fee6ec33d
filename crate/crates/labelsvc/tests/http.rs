//! The judge protocol exercised over real HTTP on a loopback port.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use labelsvc::{LabelService, ServiceConfig};
use repomine::corpus::CorpusSnapshot;
use repomine::synth::synthetic_corpus;
use serde_json::{json, Value};
use tokio::sync::oneshot;

const JUDGES: [&str; 3] = ["ana", "ben", "cho"];

fn workspace(repos: usize) -> (tempfile::TempDir, Vec<String>) {
    let dir = tempfile::tempdir().unwrap();
    let mut snap = CorpusSnapshot::new();
    for (r, _) in synthetic_corpus(17, repos.div_ceil(2)).into_iter().take(repos) {
        snap.upsert(r).unwrap();
    }
    std::fs::write(dir.path().join("corpus.jsonl"), snap.records_to_jsonl()).unwrap();
    let names = snap.records().map(|r| r.full_name.clone()).collect();
    (dir, names)
}

struct Server {
    base: String,
    client: reqwest::Client,
    stop: Option<oneshot::Sender<()>>,
}

impl Server {
    async fn start(dir: &Path) -> Self {
        let mut config = ServiceConfig::new(dir, JUDGES);
        config.seed = 42;
        let service = Arc::new(LabelService::open(config).unwrap());
        let listener = tokio::net::TcpListener::bind("127.0.0.1:0").await.unwrap();
        let base = format!("http://{}", listener.local_addr().unwrap());
        let (tx, rx) = oneshot::channel::<()>();
        tokio::spawn(labelsvc::serve(listener, service, None, async {
            let _ = rx.await;
        }));
        Server { base, client: reqwest::Client::new(), stop: Some(tx) }
    }

    async fn get(&self, path: &str) -> (u16, String) {
        let resp = self.client.get(format!("{}{path}", self.base)).send().await.unwrap();
        (resp.status().as_u16(), resp.text().await.unwrap())
    }

    async fn get_json(&self, path: &str) -> Value {
        let (status, body) = self.get(path).await;
        assert_eq!(status, 200, "{path}: {body}");
        serde_json::from_str(&body).unwrap()
    }

    async fn ballot(&self, repo: &str, judge: &str, label: &str) -> (u16, Value) {
        let body = json!({ "repo_name": repo, "judge_id": judge, "label": label, "timestamp": "2021-03-01T12:00:00Z" });
        let resp = self.client.post(format!("{}/api/ballot", self.base)).json(&body).send().await.unwrap();
        let status = resp.status().as_u16();
        let text = resp.text().await.unwrap();
        (status, serde_json::from_str(&text).unwrap_or(Value::String(text)))
    }

    async fn vote(&self, repo: &str, labels: [&str; 3]) -> Value {
        let mut last = Value::Null;
        for (judge, label) in JUDGES.iter().zip(labels) {
            let (status, receipt) = self.ballot(repo, judge, label).await;
            assert_eq!(status, 200, "{receipt}");
            last = receipt;
        }
        last["status"].clone()
    }
}

impl Drop for Server {
    fn drop(&mut self) {
        if let Some(tx) = self.stop.take() {
            let _ = tx.send(());
        }
    }
}

#[tokio::test]
async fn unanimity_rules_and_stable_export() {
    let (dir, names) = workspace(5);
    let srv = Server::start(dir.path()).await;
    assert_eq!(srv.vote(&names[0], ["malware", "malware", "malware"]).await, "kept_malware");
    assert_eq!(srv.vote(&names[1], ["malware", "malware", "benign"]).await, "excluded");
    assert_eq!(srv.vote(&names[2], ["malware", "malware", "uncertain"]).await, "excluded");
    assert_eq!(srv.vote(&names[3], ["benign", "benign", "benign"]).await, "kept_benign");
    let (_, two) = srv.ballot(&names[4], "ana", "malware").await;
    assert_eq!(two["status"], "pending");

    let (status, first) = srv.get("/api/export").await;
    assert_eq!(status, 200);
    let (_, second) = srv.get("/api/export").await;
    assert_eq!(first, second);
    assert_eq!(std::fs::read_to_string(dir.path().join("labels.jsonl")).unwrap(), first);

    let exported: Vec<Value> = first.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let got: Vec<(&str, &str)> =
        exported.iter().map(|e| (e["full_name"].as_str().unwrap(), e["label"].as_str().unwrap())).collect();
    let mut want = vec![(names[0].as_str(), "malware"), (names[3].as_str(), "benign")];
    want.sort();
    assert_eq!(got, want);

    let consensus = srv.get_json("/api/consensus").await;
    let statuses: Vec<&str> = consensus.as_array().unwrap().iter().map(|e| e["status"].as_str().unwrap()).collect();
    assert_eq!(statuses.len(), 5);
    let progress = srv.get_json("/api/progress").await;
    assert_eq!(progress["status"]["excluded"], 2);
    assert_eq!(progress["status"]["pending"], 1);
    assert_eq!(progress["judges"]["ana"]["balloted"], 5);
    assert_eq!(progress["judges"]["cho"]["remaining"], 1);
}

#[tokio::test]
async fn export_depends_only_on_the_ballot_multiset() {
    let (dir_a, names) = workspace(4);
    let dir_b = tempfile::tempdir().unwrap();
    std::fs::copy(dir_a.path().join("corpus.jsonl"), dir_b.path().join("corpus.jsonl")).unwrap();
    let plan: Vec<(usize, &str, &str)> = names
        .iter()
        .enumerate()
        .flat_map(|(i, _)| JUDGES.iter().map(move |j| (i, *j, if i % 2 == 0 { "malware" } else { "benign" })))
        .collect();

    let a = Server::start(dir_a.path()).await;
    for (i, j, l) in &plan {
        a.ballot(&names[*i], j, l).await;
    }
    let b = Server::start(dir_b.path()).await;
    for (i, j, l) in plan.iter().rev() {
        b.ballot(&names[*i], j, l).await;
    }
    let (_, ea) = a.get("/api/export").await;
    let (_, eb) = b.get("/api/export").await;
    assert_eq!(ea, eb);
    assert_eq!(ea.lines().count(), 4);
}

#[tokio::test]
async fn judges_are_isolated() {
    let (dir, names) = workspace(6);
    let srv = Server::start(dir.path()).await;
    let before = srv.get_json("/api/queue/ana").await;
    for n in &names {
        srv.ballot(n, "ben", "malware").await;
        srv.ballot(n, "cho", "benign").await;
    }
    assert_eq!(srv.get_json("/api/queue/ana").await, before);
    assert_eq!(before["remaining"], 6);

    // Walking a queue visits every repository exactly once.
    let mut order = Vec::new();
    loop {
        let view = srv.get_json("/api/queue/ana").await;
        let Some(name) = view["next"]["full_name"].as_str() else {
            assert_eq!(view["remaining"], 0);
            break;
        };
        order.push(name.to_string());
        srv.ballot(name, "ana", "uncertain").await;
    }
    let visited: BTreeSet<&String> = order.iter().collect();
    assert_eq!(order.len(), 6);
    assert_eq!(visited, names.iter().collect());
}

#[tokio::test]
async fn queues_follow_a_seeded_order() {
    let (dir, _) = workspace(8);
    let first = {
        let srv = Server::start(dir.path()).await;
        [srv.get_json("/api/queue/ana").await, srv.get_json("/api/queue/ben").await]
    };
    let srv = Server::start(dir.path()).await;
    assert_eq!(srv.get_json("/api/queue/ana").await, first[0]);
    assert_eq!(srv.get_json("/api/queue/ben").await, first[1]);
}

#[tokio::test]
async fn ballots_survive_restart_and_revisions_win() {
    let (dir, names) = workspace(2);
    {
        let srv = Server::start(dir.path()).await;
        srv.vote(&names[0], ["malware", "malware", "benign"]).await;
    }
    let srv = Server::start(dir.path()).await;
    let entry = &srv.get_json("/api/consensus").await[0];
    assert_eq!(entry["status"], "excluded");
    let (status, receipt) = srv.ballot(&names[0], "cho", "malware").await;
    assert_eq!(status, 200);
    assert_eq!(receipt["revised"], true);
    assert_eq!(receipt["status"], "kept_malware");
    // the log keeps the superseded ballot
    let log = std::fs::read_to_string(dir.path().join("ballots.jsonl")).unwrap();
    assert_eq!(log.lines().count(), 4);
}

#[tokio::test]
async fn repository_detail_and_errors() {
    let (dir, names) = workspace(2);
    let srv = Server::start(dir.path()).await;
    let detail = srv.get_json(&format!("/api/repo/{}", names[1])).await;
    assert_eq!(detail["full_name"], names[1].as_str());
    assert!(detail["file_paths"].is_array());

    assert_eq!(srv.get("/api/repo/nobody/nothing").await.0, 404);
    assert_eq!(srv.get("/api/queue/mallory").await.0, 404);
    assert_eq!(srv.ballot(&names[0], "mallory", "malware").await.0, 404);
    assert_eq!(srv.ballot("nobody/nothing", "ana", "malware").await.0, 404);
    let (status, _) = srv.ballot(&names[0], "ana", "probably").await;
    assert!((400..500).contains(&status));

    let (_, export) = srv.get("/api/export").await;
    assert!(export.is_empty());
}
