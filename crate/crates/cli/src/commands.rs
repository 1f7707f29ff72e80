use std::io::Write;
use std::path::Path;
use std::sync::Arc;

use gac_core::backends::Backend;
use gac_core::calibration::{compute_ece, PredictionRecord};
use gac_core::harness::{load_tasks, run_benchmark, warmup};
use gac_core::stepserver::{serve as start_server, ServeOptions};
use gac_core::vocab::{agreement_rate, build_union, load_vocab_file, write_vocab_file, LongestMatchTokenizer};
use gac_core::{Ensemble, Error, GenerationResult, Result, Vocabulary};
use log::info;

use crate::config::RunConfig;

pub const EXIT_CONFIG: u8 = 2;
pub const EXIT_TRANSPORT: u8 = 3;

/// 2 for bad configuration or input files, 3 for unreachable or
/// misbehaving remote members, 1 for anything else.
pub fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::Config(_) | Error::Parse { .. } | Error::Contract(_) | Error::Io(_) => EXIT_CONFIG,
        Error::Transport(_) | Error::Protocol(_) | Error::Remote { .. } => EXIT_TRANSPORT,
        Error::Generation { .. } => 1,
    }
}

fn load_config(path: &Path, seed: Option<u64>) -> Result<RunConfig> {
    let config = RunConfig::load(path)?;
    eprintln!("{}", config.describe(seed));
    Ok(config)
}

fn write_file(path: &Path, contents: &str) -> Result<()> {
    std::fs::write(path, contents).map_err(|e| Error::Config(format!("cannot write {}: {e}", path.display())))
}

pub fn union(paths: &[impl AsRef<Path>], dump: Option<&Path>) -> Result<()> {
    let vocabs = paths
        .iter()
        .map(|p| load_vocab_file(p.as_ref()))
        .collect::<Result<Vec<_>>>()?;
    let refs: Vec<&Vocabulary> = vocabs.iter().collect();
    let (union, matrices) = build_union(&refs)?;
    for (i, (path, v)) in paths.iter().zip(&vocabs).enumerate() {
        println!("member {} {}: {} tokens", i + 1, path.as_ref().display(), v.len());
    }
    for (i, m) in matrices.iter().enumerate() {
        let mut cols: Vec<usize> = (0..m.rows() as u32).map(|r| m.column_of(r)).collect();
        cols.sort_unstable();
        cols.dedup();
        println!(
            "matrix {}: {} x {}, {} distinct columns",
            i + 1,
            m.rows(),
            m.cols(),
            cols.len()
        );
    }
    println!("union: {} tokens", union.len());
    if let Some(path) = dump {
        let specials = union.special_columns().iter().map(|&c| c as u32);
        let merged = Vocabulary::new(union.surfaces().to_vec(), specials)?;
        write_file(path, &write_vocab_file(&merged))?;
    }
    Ok(())
}

fn report_generation(result: &GenerationResult) {
    for w in &result.warnings {
        eprintln!("warning: {w}");
    }
    eprintln!(
        "tokens {}  stop {:?}  ensembled {:.2}%  {:.2} ms/token",
        result.tokens_generated,
        result.stop,
        result.ensembled_fraction * 100.0,
        result.ms_per_token
    );
}

pub fn generate(
    config_path: &Path,
    prompt: &str,
    trace: Option<&Path>,
    trace_timing: bool,
    show_steps: bool,
    seed: Option<u64>,
) -> Result<()> {
    let config = load_config(config_path, seed)?;
    let ensemble = Ensemble::new(config.build_members()?)?;
    let run_config = config.ensemble_config(seed)?;
    let outcome = match config.cascade_config()? {
        Some(c) => ensemble.generate_cascade(prompt, &run_config, &c),
        None => ensemble.generate(prompt, &run_config),
    };
    let (result, failure) = match outcome {
        Ok(r) => (r, None),
        Err(Error::Generation {
            member,
            source,
            partial,
        }) => {
            eprintln!("gac: generation aborted by member {member}; keeping the partial trace");
            (*partial, Some(*source))
        }
        Err(e) => return Err(e),
    };
    if let Some(path) = trace {
        write_file(path, &result.trace_jsonl(trace_timing))?;
    }
    if show_steps {
        eprint!("{}", result.render_steps());
    }
    println!("{}", result.text);
    report_generation(&result);
    failure.map_or(Ok(()), Err)
}

pub fn bench(
    config_path: &Path,
    tasks_path: &Path,
    report: Option<&Path>,
    warmup_override: Option<usize>,
    seed: Option<u64>,
) -> Result<()> {
    let config = load_config(config_path, seed)?;
    let tasks = load_tasks(tasks_path)?;
    let members = config.build_members()?;
    let backends: Vec<Arc<dyn Backend>> = members.iter().map(|m| m.backend.clone()).collect();
    let n = warmup_override.unwrap_or(config.warmup_tokens);
    info!("warming up {} members with {n} tokens", backends.len());
    warmup(&backends, n)?;
    let ensemble = Ensemble::new(members)?;
    let run = run_benchmark(
        &tasks,
        &ensemble,
        &config.ensemble_config(seed)?,
        config.cascade_config()?.as_ref(),
    )?;
    for r in run.records.iter().filter(|r| r.error.is_some()) {
        eprintln!("task {}: {}", r.id, r.error.as_deref().unwrap_or_default());
    }
    if let Some(path) = report {
        let json = serde_json::to_string_pretty(&run).expect("report serializes");
        write_file(path, &(json + "\n"))?;
    }
    println!("{}", run.summary());
    Ok(())
}

pub fn agreement(vocab_a: &Path, vocab_b: &Path, words_path: &Path) -> Result<()> {
    let a = LongestMatchTokenizer::new(Arc::new(load_vocab_file(vocab_a)?));
    let b = LongestMatchTokenizer::new(Arc::new(load_vocab_file(vocab_b)?));
    let text = std::fs::read_to_string(words_path)?;
    let words: Vec<&str> = text.lines().map(str::trim).filter(|w| !w.is_empty()).collect();
    let rate = agreement_rate(&a, &b, &words)?;
    println!("agreement {rate:.4} over {} words", words.len());
    Ok(())
}

pub fn ece(records_path: &Path, bins: usize) -> Result<()> {
    let text = std::fs::read_to_string(records_path)?;
    let source_name = records_path.display().to_string();
    let mut records = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parse_error = |message: String| Error::Parse {
            source_name: source_name.clone(),
            line: i + 1,
            message,
        };
        let raw: PredictionRecord = serde_json::from_str(line).map_err(|e| parse_error(e.to_string()))?;
        records.push(PredictionRecord::new(raw.confidence, raw.correct).map_err(|e| parse_error(e.to_string()))?);
    }
    print!("{}", compute_ece(&records, bins)?.summary());
    Ok(())
}

pub fn serve(config_path: &Path, addr: &str, member: Option<&str>, workers: usize) -> Result<()> {
    let config = load_config(config_path, None)?;
    let index = member.map_or(Ok(0), |m| config.member_index(m))?;
    let backend = config.build_backend(index)?;
    let options = ServeOptions {
        workers,
        ..ServeOptions::default()
    };
    let handle = start_server(backend, addr, options)?;
    println!("serving {} on {}", config.member_name(index), handle.url());
    let _ = std::io::stdout().flush();
    handle.join();
    Ok(())
}
