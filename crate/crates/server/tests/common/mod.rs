#![allow(dead_code)]

use std::collections::HashMap;
use std::net::SocketAddr;
use std::sync::{Arc, OnceLock};

use imtforge::decode::SearchOptions;
use imtforge::engine::{Engine, ParallelCorpus};
use imtforge::model::ModelConfig;
use imtforge::train::{Algorithm, OptimizerState, TrainConfig};
use imtforge_server::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use reqwest::StatusCode;
use serde_json::{json, Value};

pub fn corpus() -> ParallelCorpus {
    ParallelCorpus::from_lines(&[
        ("das haus ist klein", "the house is small"),
        ("das buch ist gut", "the book is good"),
        ("ein kleines haus", "a small house"),
        ("das haus ist gut", "the house is good"),
        ("ein gutes buch", "a good book"),
    ])
    .unwrap()
}

/// A small model trained briefly, so hypotheses are non-trivial.
pub fn engine() -> Engine {
    static ENGINE: OnceLock<Engine> = OnceLock::new();
    ENGINE
        .get_or_init(|| {
            let c = corpus();
            let dims = ModelConfig { src_vocab: 0, trg_vocab: 0, embed_dim: 12, hidden_dim: 12, output_dim: 12, standard_lstm_output: true };
            let mut e = Engine::initialize(&[&c], 20, dims, 3).unwrap();
            let opt = OptimizerState::new(Algorithm::Adam, 0.02, e.params.tensors()).unwrap();
            let cfg = TrainConfig { batch_size: 5, eval_interval: 50, patience: 100, max_updates: 150, ..Default::default() };
            e.fit(&c, &c, opt, &cfg, &SearchOptions::beam(1)).unwrap();
            e
        })
        .clone()
}

#[derive(Clone)]
pub struct Api {
    pub base: String,
    pub http: reqwest::Client,
}

pub struct Server {
    pub api: Api,
    pub state: Arc<AppState>,
}

pub async fn start(config: ServiceConfig) -> Server {
    let state = Arc::new(AppState::new(config, engine()).unwrap());
    let listener = tokio::net::TcpListener::bind(SocketAddr::from(([127, 0, 0, 1], 0))).await.unwrap();
    let base = format!("http://{}", listener.local_addr().unwrap());
    tokio::spawn(serve(state.clone(), listener));
    Server { api: Api { base, http: reqwest::Client::new() }, state }
}

impl std::ops::Deref for Server {
    type Target = Api;

    fn deref(&self) -> &Api {
        &self.api
    }
}

impl Api {
    pub async fn post(&self, path: &str, owner: Option<&str>, body: Value) -> (StatusCode, Value) {
        let mut req = self.http.post(format!("{}{path}", self.base)).json(&body);
        if let Some(o) = owner {
            req = req.header(OWNER_HEADER, o);
        }
        let resp = req.send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    pub async fn get(&self, path: &str) -> (StatusCode, Value) {
        let resp = self.http.get(format!("{}{path}", self.base)).send().await.unwrap();
        let status = resp.status();
        (status, resp.json().await.unwrap())
    }

    pub async fn create(&self, source: &str) -> (u64, String, Value) {
        let (s, v) = self.post("/v1/sessions", None, json!({ "source": source })).await;
        assert_eq!(s, StatusCode::CREATED, "{v}");
        (v["session_id"].as_u64().unwrap(), v["owner_token"].as_str().unwrap().to_owned(), v)
    }
}

#[derive(Debug, Default)]
pub struct StressOutcome {
    pub events: usize,
    pub accepts: usize,
    pub conflicts: usize,
    /// Versions returned by accepts, in completion order per client.
    pub accept_versions: Vec<u64>,
    /// Every fingerprint seen for each version.
    pub fingerprints: HashMap<u64, Vec<String>>,
    /// Whether each client saw non-decreasing versions.
    pub monotone_per_client: bool,
    pub final_version: u64,
    pub unexpected: Vec<String>,
}

/// `clients` concurrent users each open sessions, send random character
/// corrections and accept now and then, until `events` requests have been
/// made in total. Adaptation must be enabled on the server.
pub async fn stress(server: &Server, clients: usize, events: usize, seed: u64) -> StressOutcome {
    let sources = ["das haus ist klein", "das buch ist gut", "ein kleines haus", "ein gutes buch"];
    let alphabet: Vec<char> = "abdeghiklmostu".chars().collect();
    let per_client = events / clients;
    let mut handles = Vec::new();
    for c in 0..clients {
        let srv = server.api.clone();
        let alphabet = alphabet.clone();
        let n = per_client + usize::from(c < events % clients);
        handles.push(tokio::spawn(async move {
            let mut rng = ChaCha8Rng::seed_from_u64(seed + c as u64);
            let mut seen: Vec<(u64, String)> = Vec::new();
            let mut accepts = Vec::new();
            let mut unexpected = Vec::new();
            let mut conflicts = 0;
            let mut session: Option<(u64, String, usize, usize)> = None;
            for _ in 0..n {
                let (status, body) = match &session {
                    None => {
                        let src = sources[rng.random_range(0..sources.len())];
                        srv.post("/v1/sessions", None, json!({ "source": src })).await
                    }
                    Some((id, owner, lo, hi)) => {
                        if rng.random_bool(0.15) {
                            srv.post(&format!("/v1/sessions/{id}/accept"), Some(owner), json!({})).await
                        } else {
                            let pos = rng.random_range(*lo..=*hi);
                            let ch = alphabet[rng.random_range(0..alphabet.len())];
                            let body = json!({ "kind": "char", "position": pos, "text": ch.to_string() });
                            srv.post(&format!("/v1/sessions/{id}/feedback"), Some(owner), body).await
                        }
                    }
                };
                match status {
                    StatusCode::CREATED | StatusCode::OK => {}
                    StatusCode::CONFLICT => {
                        conflicts += 1;
                        continue;
                    }
                    _ => {
                        unexpected.push(format!("{status}: {body}"));
                        continue;
                    }
                }
                let model = &body["model"];
                seen.push((model["version"].as_u64().unwrap(), model["fingerprint"].as_str().unwrap().to_owned()));
                if body.get("adapted").is_some() {
                    accepts.push(model["version"].as_u64().unwrap());
                    session = None;
                } else {
                    let id = body["session_id"].as_u64().unwrap();
                    let owner = match (&session, body["owner_token"].as_str()) {
                        (_, Some(o)) => o.to_owned(),
                        (Some((_, o, _, _)), None) => o.clone(),
                        (None, None) => unreachable!(),
                    };
                    let lo = body["constraint"].as_str().unwrap().chars().count();
                    let hi = body["hypothesis"].as_str().unwrap().chars().count();
                    session = if hi >= 60 { None } else { Some((id, owner, lo, hi)) };
                }
            }
            (seen, accepts, conflicts, unexpected)
        }));
    }
    let mut out = StressOutcome { events, monotone_per_client: true, ..Default::default() };
    for h in handles {
        let (seen, accepts, conflicts, unexpected) = h.await.unwrap();
        out.monotone_per_client &= seen.windows(2).all(|w| w[0].0 <= w[1].0);
        for (v, f) in seen {
            out.fingerprints.entry(v).or_default().push(f);
        }
        out.accepts += accepts.len();
        out.accept_versions.extend(accepts);
        out.conflicts += conflicts;
        out.unexpected.extend(unexpected);
    }
    out.final_version = server.state.model().version;
    out
}

impl StressOutcome {
    /// Accept versions are exactly 1..=accepts and each version maps to a
    /// single parameter fingerprint.
    pub fn serializable(&self) -> bool {
        let mut v = self.accept_versions.clone();
        v.sort_unstable();
        let dense = v.iter().enumerate().all(|(i, x)| *x == i as u64 + 1);
        let consistent = self.fingerprints.values().all(|fs| fs.iter().all(|f| f == &fs[0]));
        dense && consistent && self.monotone_per_client && self.final_version == self.accepts as u64 && self.unexpected.is_empty()
    }
}
