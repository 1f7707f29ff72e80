mod common;

use std::sync::Arc;
use std::time::Duration;

use common::*;
use gac_core::backends::{with_delay, Backend, DelayBackend};
use gac_core::harness::{
    load_tasks, parse_tasks, run_benchmark, score, serialize_tasks, warmup, Scoring, Task, DEFAULT_WARMUP_TOKENS,
};
use gac_core::{BelowPolicy, CascadeConfig, Ensemble, EnsembleConfig, Error, Member};

fn task(id: &str, prompt: &str, answer: &str) -> Task {
    Task {
        id: id.into(),
        prompt: prompt.into(),
        answers: vec![answer.into()],
        scoring: Scoring::Exact,
    }
}

fn arithmetic() -> Arc<dyn Backend> {
    let v = vocab(&["</s>", "Q:", " 2+2", " 3+3", " 4", " 6"], &[0]);
    table(
        "calc",
        v,
        &[1.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        &[
            (&[2], &[0.0, 0.0, 0.0, 0.0, 1.0, 0.0]),
            (&[3], &[0.0, 0.0, 0.0, 0.0, 0.0, 1.0]),
        ],
    )
}

#[test]
fn perfect_backend_scores_one() {
    let e = Ensemble::new(vec![Member::new(arithmetic())]).unwrap();
    let tasks = vec![task("a", "Q: 2+2", "4"), task("b", "Q: 3+3", " 6 ")];
    let report = run_benchmark(&tasks, &e, &EnsembleConfig::default(), None).unwrap();
    assert_eq!(report.accuracy, 1.0);
    assert_eq!(report.tasks, 2);
    // answer token plus end marker per task
    assert_eq!(report.tokens_generated, 4);
}

#[test]
fn wrong_answers_lower_accuracy() {
    let e = Ensemble::new(vec![Member::new(arithmetic())]).unwrap();
    let tasks = vec![task("a", "Q: 2+2", "5"), task("b", "Q: 3+3", "6")];
    let report = run_benchmark(&tasks, &e, &EnsembleConfig::default(), None).unwrap();
    assert_eq!(report.accuracy, 0.5);
    assert!(!report.records[0].correct);
}

#[test]
fn latency_tracks_member_delay() {
    let v = vocab(&["x"], &[]);
    let slow: Arc<dyn Backend> = Arc::new(with_delay(table("slow", v, &[1.0], &[]), 10));
    let e = Ensemble::new(vec![Member::new(slow)]).unwrap();
    let config = EnsembleConfig {
        max_tokens: 200,
        ..EnsembleConfig::default()
    };
    let report = run_benchmark(&[task("t", "", "x")], &e, &config, None).unwrap();
    assert_eq!(report.tokens_generated, 200);
    assert!((10.0..=15.0).contains(&report.ms_per_token), "{}", report.ms_per_token);
}

#[test]
fn cascade_fraction_is_count_ratio() {
    let (gate, other) = alternating_pair();
    let e = Ensemble::new(vec![Member::new(gate), Member::new(other)]).unwrap();
    let cascade = CascadeConfig {
        gate: 0,
        threshold: 0.5,
        below: BelowPolicy::Ensemble,
    };
    let config = EnsembleConfig {
        max_tokens: 4,
        ..EnsembleConfig::default()
    };
    let tasks = vec![task("1", "", "acdc"), task("2", "", "acdc"), task("3", "", "x")];
    let report = run_benchmark(&tasks, &e, &config, Some(&cascade)).unwrap();
    assert_eq!(report.tokens_generated, 12);
    assert_eq!(report.ensembled_steps, 6);
    assert_eq!(report.ensembled_fraction, 0.5);
    assert!((report.accuracy - 2.0 / 3.0).abs() < 1e-15);
}

#[test]
fn failing_task_is_recorded_not_fatal() {
    let e = Ensemble::new(vec![Member::new(arithmetic())]).unwrap();
    // "zz" cannot be tokenized by the member
    let tasks = vec![task("bad", "zz", "4"), task("good", "Q: 2+2", "4")];
    let report = run_benchmark(&tasks, &e, &EnsembleConfig::default(), None).unwrap();
    assert!(report.records[0].error.is_some());
    assert!(!report.records[0].correct);
    assert!(report.records[1].correct);
    assert_eq!(report.accuracy, 0.5);
}

#[test]
fn warmup_removes_startup_cost_from_measurements() {
    assert_eq!(DEFAULT_WARMUP_TOKENS, 1024);
    let make = || -> Arc<dyn Backend> {
        let v = vocab(&["x"], &[]);
        Arc::new(
            DelayBackend::new(table("m", v, &[1.0], &[]), Duration::from_millis(1))
                .with_startup_cost(Duration::from_millis(150)),
        )
    };
    let config = EnsembleConfig {
        max_tokens: 20,
        ..EnsembleConfig::default()
    };
    let tasks: Vec<Task> = (0..3).map(|i| task(&i.to_string(), "", "x")).collect();
    let spread = |report: &gac_core::harness::RunReport| {
        let ms: Vec<f64> = report.records.iter().map(|r| r.ms_per_token).collect();
        ms.iter().cloned().fold(f64::MIN, f64::max) - ms.iter().cloned().fold(f64::MAX, f64::min)
    };

    let cold = make();
    let e = Ensemble::new(vec![Member::new(cold)]).unwrap();
    let cold_report = run_benchmark(&tasks, &e, &config, None).unwrap();

    let warm = make();
    warmup(std::slice::from_ref(&warm), 16).unwrap();
    let e = Ensemble::new(vec![Member::new(warm)]).unwrap();
    let warm_report = run_benchmark(&tasks, &e, &config, None).unwrap();

    assert!(spread(&cold_report) > 5.0, "{}", spread(&cold_report));
    assert!(spread(&warm_report) < 1.5, "{}", spread(&warm_report));
}

#[test]
fn task_files_round_trip() {
    let tasks = vec![task("a", "Q: 2+2", "4"), task("b", "x", "y")];
    let text = serialize_tasks(&tasks);
    assert_eq!(parse_tasks(&text, "mem").unwrap(), tasks);

    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("tasks.jsonl");
    std::fs::write(&path, format!("\n{text}\n")).unwrap();
    assert_eq!(load_tasks(&path).unwrap(), tasks);
}

#[test]
fn task_file_errors_name_the_line() {
    let text = "{\"id\":\"a\",\"prompt\":\"\",\"answers\":[\"x\"],\"scoring\":\"exact\"}\n{\"id\":\"b\"}\n";
    match parse_tasks(text, "tasks.jsonl") {
        Err(Error::Parse { line, .. }) => assert_eq!(line, 2),
        other => panic!("{other:?}"),
    }
    let empty = "{\"id\":\"a\",\"prompt\":\"\",\"answers\":[],\"scoring\":\"exact\"}";
    assert!(parse_tasks(empty, "t").is_err());
}

#[test]
fn scoring_is_case_and_space_insensitive() {
    let t = Task {
        scoring: Scoring::Contains,
        ..task("a", "", "Paris")
    };
    assert!(score("  the answer is paris.", &t));
    assert!(!score("london", &t));
    assert!(score(" PARIS ", &task("b", "", "paris")));
}

#[test]
fn empty_task_list_is_config_error() {
    let e = Ensemble::new(vec![Member::new(arithmetic())]).unwrap();
    assert!(matches!(
        run_benchmark(&[], &e, &EnsembleConfig::default(), None),
        Err(Error::Config(_))
    ));
}
