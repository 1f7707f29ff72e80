//! Desk-scale benchmark runner: task files, scoring, warm-up and latency.

use std::path::Path;
use std::sync::Arc;
use std::thread;
use std::time::Duration;

use log::info;
use serde::{Deserialize, Serialize};

use crate::backends::Backend;
use crate::engine::{CascadeConfig, Ensemble, EnsembleConfig, GenerationResult};
use crate::error::{Error, Result};

pub const DEFAULT_WARMUP_TOKENS: usize = 1024;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Scoring {
    Exact,
    Contains,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Task {
    pub id: String,
    pub prompt: String,
    pub answers: Vec<String>,
    pub scoring: Scoring,
}

pub fn load_tasks(path: impl AsRef<Path>) -> Result<Vec<Task>> {
    let path = path.as_ref();
    parse_tasks(&std::fs::read_to_string(path)?, &path.display().to_string())
}

/// One JSON object per non-empty line.
pub fn parse_tasks(text: &str, source_name: &str) -> Result<Vec<Task>> {
    let mut tasks = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let task: Task = serde_json::from_str(line).map_err(|e| Error::parse(source_name, i + 1, e.to_string()))?;
        if task.answers.is_empty() {
            return Err(Error::parse(
                source_name,
                i + 1,
                format!("task `{}` has no answers", task.id),
            ));
        }
        tasks.push(task);
    }
    Ok(tasks)
}

pub fn serialize_tasks(tasks: &[Task]) -> String {
    tasks
        .iter()
        .map(|t| serde_json::to_string(t).expect("tasks serialize") + "\n")
        .collect()
}

fn normalize(s: &str) -> String {
    s.trim().to_lowercase()
}

/// Trim + lowercase on both sides, nothing else.
pub fn score(output: &str, task: &Task) -> bool {
    let out = normalize(output);
    task.answers.iter().map(|a| normalize(a)).any(|a| match task.scoring {
        Scoring::Exact => out == a,
        Scoring::Contains => out.contains(&a),
    })
}

/// Runs `n_tokens` greedy steps on a throwaway session of every backend,
/// all backends in parallel.
pub fn warmup(backends: &[Arc<dyn Backend>], n_tokens: usize) -> Result<()> {
    if n_tokens == 0 {
        return Ok(());
    }
    let results: Vec<Result<()>> = thread::scope(|scope| {
        let handles: Vec<_> = backends
            .iter()
            .map(|b| {
                scope.spawn(move || {
                    let mut session = b.clone().start_session(&[])?;
                    for _ in 0..n_tokens {
                        let next = session.step()?.argmax() as u32;
                        session.append(&[next])?;
                    }
                    info!("warmed up {} with {n_tokens} tokens", b.name());
                    Ok(())
                })
            })
            .collect();
        handles
            .into_iter()
            .map(|h| h.join().unwrap_or_else(|p| std::panic::resume_unwind(p)))
            .collect()
    });
    results.into_iter().collect()
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct TaskRecord {
    pub id: String,
    pub correct: bool,
    pub output: String,
    pub tokens_generated: usize,
    pub ensembled_steps: usize,
    pub ms_per_token: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct RunReport {
    pub accuracy: f64,
    pub ms_per_token: f64,
    pub ensembled_fraction: f64,
    pub tasks: usize,
    pub tokens_generated: usize,
    pub ensembled_steps: usize,
    pub records: Vec<TaskRecord>,
}

impl RunReport {
    pub fn summary(&self) -> String {
        format!(
            "accuracy {:.4} ({}/{})  latency {:.2} ms/token  ensembled {:.2}% of {} tokens",
            self.accuracy,
            self.records.iter().filter(|r| r.correct).count(),
            self.tasks,
            self.ms_per_token,
            self.ensembled_fraction * 100.0,
            self.tokens_generated
        )
    }
}

/// Runs every task in order, scoring each output. Generation failures are
/// recorded against the task and count as incorrect.
pub fn run_benchmark(
    tasks: &[Task],
    ensemble: &Ensemble,
    config: &EnsembleConfig,
    cascade: Option<&CascadeConfig>,
) -> Result<RunReport> {
    if tasks.is_empty() {
        return Err(Error::Config("benchmark needs at least one task".into()));
    }
    config.validate()?;
    if let Some(c) = cascade {
        c.validate(ensemble.members().len())?;
    }

    let mut records = Vec::with_capacity(tasks.len());
    let mut loop_time = Duration::ZERO;
    let mut tokens = 0usize;
    let mut ensembled = 0usize;
    for task in tasks {
        let outcome = match cascade {
            Some(c) => ensemble.generate_cascade(&task.prompt, config, c),
            None => ensemble.generate(&task.prompt, config),
        };
        let (result, error): (Option<GenerationResult>, Option<String>) = match outcome {
            Ok(r) => (Some(r), None),
            Err(Error::Generation {
                member,
                source,
                partial,
            }) => (Some(*partial), Some(format!("member {member}: {source}"))),
            Err(e) => (None, Some(e.to_string())),
        };
        let (output, n, e, t, ms) = match &result {
            Some(r) => (
                r.text.clone(),
                r.tokens_generated,
                r.ensembled_steps(),
                r.loop_time,
                r.ms_per_token,
            ),
            None => (String::new(), 0, 0, Duration::ZERO, 0.0),
        };
        tokens += n;
        ensembled += e;
        loop_time += t;
        let correct = error.is_none() && score(&output, task);
        info!("task {}: correct={correct} tokens={n}", task.id);
        records.push(TaskRecord {
            id: task.id.clone(),
            correct,
            output,
            tokens_generated: n,
            ensembled_steps: e,
            ms_per_token: ms,
            error,
        });
    }

    let correct = records.iter().filter(|r| r.correct).count();
    let (ms_per_token, ensembled_fraction) = if tokens == 0 {
        (0.0, 0.0)
    } else {
        (
            loop_time.as_secs_f64() * 1000.0 / tokens as f64,
            ensembled as f64 / tokens as f64,
        )
    };
    Ok(RunReport {
        accuracy: correct as f64 / tasks.len() as f64,
        ms_per_token,
        ensembled_fraction,
        tasks: tasks.len(),
        tokens_generated: tokens,
        ensembled_steps: ensembled,
        records,
    })
}
