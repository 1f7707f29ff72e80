mod common;

use std::sync::Arc;

use common::*;
use gac_core::backends::{Backend, RemoteBackend};
use gac_core::stepserver::wire::{codes, ROUTE_APPEND, ROUTE_CREATE_SESSION, ROUTE_STEP};
use gac_core::stepserver::{serve, ServeOptions, ServerHandle};
use gac_core::{Ensemble, EnsembleConfig, Error, Member, SamplingPolicy, TokenId};
use rand::Rng;
use serde_json::{json, Value};

fn host(backend: Arc<dyn Backend>, options: ServeOptions) -> ServerHandle {
    serve(backend, "127.0.0.1:0", options).unwrap()
}

fn raw_post(url: &str, route: &str, body: Value) -> (u16, Value) {
    let agent: ureq::Agent = ureq::Agent::config_builder().http_status_as_error(false).build().into();
    let mut resp = agent.post(format!("{url}{route}")).send_json(&body).unwrap();
    let status = resp.status().as_u16();
    let text = resp.body_mut().read_to_string().unwrap();
    (status, serde_json::from_str(&text).unwrap())
}

#[test]
fn remote_steps_match_in_process() {
    let mut r = rng(11);
    let v = random_vocab(&mut r, 30);
    let local: Arc<dyn Backend> = Arc::new(random_table(&mut r, "t", v.clone(), 40));
    let server = host(local.clone(), ServeOptions::default());
    let remote = Arc::new(RemoteBackend::connect("t", &server.url()).unwrap());
    assert_eq!(**remote.vocabulary(), *v);

    for _ in 0..30 {
        let len = r.gen_range(0..5);
        let prefix: Vec<TokenId> = (0..len).map(|_| r.gen_range(0..30)).collect();
        let mut rs = remote.clone().start_session(&prefix[..len / 2]).unwrap();
        rs.append(&prefix[len / 2..]).unwrap();
        let got = rs.step().unwrap();
        let want = local.clone().start_session(&prefix).unwrap().step().unwrap();
        let dev = got
            .values()
            .iter()
            .zip(want.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        assert!(dev <= 1e-9, "deviation {dev}");
    }
}

#[test]
fn remote_generation_reproduces_local_trace() {
    let mut r = rng(5);
    let va = random_vocab(&mut r, 20);
    let a: Arc<dyn Backend> = Arc::new(random_table(&mut r, "a", va.clone(), 30));
    let b: Arc<dyn Backend> = Arc::new(random_table(&mut r, "b", va, 30));
    let server = host(b.clone(), ServeOptions::default());
    let remote_b: Arc<dyn Backend> = Arc::new(RemoteBackend::connect("b", &server.url()).unwrap());
    let config = EnsembleConfig {
        sampling: SamplingPolicy::Temperature(0.8),
        seed: 3,
        max_tokens: 40,
        ..EnsembleConfig::default()
    };
    let local = Ensemble::new(vec![Member::new(a.clone()), Member::new(b)]).unwrap();
    let mixed = Ensemble::new(vec![Member::new(a), Member::new(remote_b)]).unwrap();
    let want = local.generate("", &config).unwrap();
    let got = mixed.generate("", &config).unwrap();
    assert_eq!(got.trace_jsonl(false), want.trace_jsonl(false));
    assert_eq!(got.text, want.text);
}

#[test]
fn unknown_session_is_reported() {
    let v = vocab(&["x", "y"], &[]);
    let server = host(table("t", v, &[0.5, 0.5], &[]), ServeOptions::default());
    let (status, body) = raw_post(&server.url(), ROUTE_STEP, json!({"session_id": "nope"}));
    assert_eq!(status, 404);
    assert_eq!(body["error"]["code"], codes::SESSION_NOT_FOUND);
}

#[test]
fn out_of_range_ids_are_bad_ids() {
    let v = vocab(&["x", "y"], &[]);
    let server = host(table("t", v, &[0.5, 0.5], &[]), ServeOptions::default());
    let (status, body) = raw_post(&server.url(), ROUTE_CREATE_SESSION, json!({"prompt_ids": [5]}));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], codes::BAD_IDS);

    let (_, created) = raw_post(&server.url(), ROUTE_CREATE_SESSION, json!({"prompt_ids": [1]}));
    let id = created["session_id"].as_str().unwrap().to_string();
    let (status, body) = raw_post(&server.url(), ROUTE_APPEND, json!({"session_id": id, "ids": [0, 7]}));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], codes::BAD_IDS);
    // the failed append left the prefix alone
    let (_, ok) = raw_post(&server.url(), ROUTE_APPEND, json!({"session_id": id, "ids": [0]}));
    assert_eq!(ok["prefix_len"], 2);
}

#[test]
fn malformed_body_is_bad_request() {
    let v = vocab(&["x"], &[]);
    let server = host(table("t", v, &[1.0], &[]), ServeOptions::default());
    let (status, body) = raw_post(&server.url(), ROUTE_STEP, json!({"sid": 1}));
    assert_eq!(status, 400);
    assert_eq!(body["error"]["code"], codes::BAD_REQUEST);
}

#[test]
fn interleaved_sessions_stay_isolated() {
    let v = vocab(&["x", "y", "z"], &[]);
    let t = table(
        "t",
        v,
        &[1.0, 0.0, 0.0],
        &[(&[1], &[0.0, 1.0, 0.0]), (&[2], &[0.0, 0.0, 1.0])],
    );
    let server = host(t, ServeOptions::default());
    let remote = Arc::new(RemoteBackend::connect("t", &server.url()).unwrap());
    let mut s1 = remote.clone().start_session(&[]).unwrap();
    let mut s2 = remote.clone().start_session(&[]).unwrap();
    s1.append(&[1]).unwrap();
    s2.append(&[2]).unwrap();
    assert_eq!(s1.step().unwrap().argmax(), 1);
    assert_eq!(s2.step().unwrap().argmax(), 2);
    s1.append(&[2]).unwrap();
    assert_eq!(s1.step().unwrap().argmax(), 2);
    assert_eq!(s2.prefix(), &[2]);
}

#[test]
fn sparse_responses_keep_top_entries() {
    let mut r = rng(2);
    let v = random_vocab(&mut r, 40);
    let local: Arc<dyn Backend> = Arc::new(random_table(&mut r, "t", v, 0));
    let options = ServeOptions {
        sparse_top_k: Some(5),
        sparse_above: 10,
        ..ServeOptions::default()
    };
    let server = host(local.clone(), options);
    let remote = Arc::new(RemoteBackend::connect("t", &server.url()).unwrap());
    let got = remote.start_session(&[]).unwrap().step().unwrap();
    let want = local.start_session(&[]).unwrap().step().unwrap();
    assert!((got.sum() - 1.0).abs() <= 1e-9);
    for (i, p) in want.top_k(5) {
        assert!((got.get(i) - p).abs() <= 1e-12);
    }
    assert_eq!(got.argmax(), want.argmax());
}

#[test]
fn unreachable_server_is_a_transport_error() {
    let v = vocab(&["x"], &[]);
    let addr = {
        let server = host(table("t", v, &[1.0], &[]), ServeOptions::default());
        server.url()
    };
    match RemoteBackend::connect("t", &addr) {
        Err(e) => assert!(matches!(e, Error::Transport(_)), "{e:?}"),
        Ok(_) => panic!("connected to a stopped server"),
    }
}
