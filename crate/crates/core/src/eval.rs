//! Dataset ingestion, per-task strategy execution, scoring and reporting.
//!
//! Datasets are line-delimited JSON records (`id`, `question`, optional
//! `options`, `answer`, `part`). Reports aggregate per-part accuracy plus the
//! unweighted macro average across parts.

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::baseline::run_cot;
use crate::model::{ModelError, ModelHandle};
use crate::prompt::{RenderCtx, TemplateSet};
use crate::search::{Engine, MctsConfig, SearchError};

/// One multiple-choice (or free-form) question.
#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TaskRecord {
    pub id: String,
    pub question: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub options: Option<Vec<String>>,
    #[serde(rename = "answer")]
    pub gold: String,
    pub part: String,
}

#[derive(Debug, Error)]
pub enum DatasetError {
    #[error("cannot read dataset: {0}")]
    Io(#[from] std::io::Error),
    #[error("line {line}: {message}")]
    Malformed { line: usize, message: String },
    #[error("line {line}: duplicate task id {id:?}")]
    DuplicateId { line: usize, id: String },
}

/// Parses a line-delimited dataset, preserving file order. Blank lines are
/// allowed; malformed records and duplicate ids are not.
pub fn load_dataset(path: impl AsRef<Path>) -> Result<Vec<TaskRecord>, DatasetError> {
    let text = std::fs::read_to_string(path.as_ref())?;
    let mut tasks = Vec::new();
    let mut seen = HashSet::new();
    for (index, line) in text.lines().enumerate() {
        let line_no = index + 1;
        if line.trim().is_empty() {
            continue;
        }
        let task: TaskRecord =
            serde_json::from_str(line).map_err(|err| DatasetError::Malformed {
                line: line_no,
                message: err.to_string(),
            })?;
        if task.gold.is_empty() {
            return Err(DatasetError::Malformed {
                line: line_no,
                message: "empty answer".to_string(),
            });
        }
        if !seen.insert(task.id.clone()) {
            return Err(DatasetError::DuplicateId {
                line: line_no,
                id: task.id,
            });
        }
        tasks.push(task);
    }
    Ok(tasks)
}

fn normalize(text: &str) -> String {
    text.split_whitespace()
        .map(|token| {
            token
                .trim_matches(|c: char| !c.is_alphanumeric())
                .to_lowercase()
        })
        .filter(|token| !token.is_empty())
        .collect::<Vec<_>>()
        .join(" ")
}

/// Maps an answer to its canonical form: a bare option label stays a label,
/// text equal to an option's text becomes that option's label, anything else
/// is its normalized text.
fn canonical(answer: &str, options: Option<&[String]>) -> String {
    let normalized = normalize(answer);
    let Some(options) = options.filter(|opts| !opts.is_empty()) else {
        return normalized;
    };
    if normalized.len() == 1 {
        let c = normalized.chars().next().expect("single char");
        let index = (c as u32).wrapping_sub('a' as u32) as usize;
        if index < options.len() {
            return normalized;
        }
    }
    for (i, option) in options.iter().enumerate() {
        if normalize(option) == normalized {
            return ((b'a' + i as u8) as char).to_string();
        }
    }
    normalized
}

/// Case-insensitive, punctuation/whitespace-normalized equality; with
/// options, a label and its option text compare equal.
#[must_use]
pub fn score_answer(predicted: &str, gold: &str, options: Option<&[String]>) -> bool {
    canonical(predicted, options) == canonical(gold, options)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Strategy {
    ImprovedMcts,
    Cot,
}

impl std::fmt::Display for Strategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Strategy::ImprovedMcts => write!(f, "improved-mcts"),
            Strategy::Cot => write!(f, "cot"),
        }
    }
}

impl std::str::FromStr for Strategy {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "improved-mcts" => Ok(Strategy::ImprovedMcts),
            "cot" => Ok(Strategy::Cot),
            other => Err(format!("unknown strategy {other:?}")),
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct PartStats {
    pub correct: u64,
    pub total: u64,
    pub accuracy: f64,
}

/// Per-part accuracies plus their unweighted mean, the shape the summary
/// table prints.
#[derive(Debug, Clone, Serialize)]
pub struct RunReport {
    pub strategy: String,
    pub model_name: String,
    pub per_part: BTreeMap<String, PartStats>,
    pub macro_average: f64,
    pub wall_time_s: f64,
}

/// Folds (part, correct?) outcomes into per-part accuracy and the macro
/// average. Accuracies are kept at full precision; rendering rounds.
#[must_use]
pub fn aggregate_report(
    results: &[(String, bool)],
    strategy: &str,
    model_name: &str,
    wall_time_s: f64,
) -> RunReport {
    let mut per_part: BTreeMap<String, PartStats> = BTreeMap::new();
    for (part, correct) in results {
        let stats = per_part.entry(part.clone()).or_default();
        stats.total += 1;
        if *correct {
            stats.correct += 1;
        }
    }
    for stats in per_part.values_mut() {
        stats.accuracy = 100.0 * stats.correct as f64 / stats.total as f64;
    }
    let macro_average = if per_part.is_empty() {
        0.0
    } else {
        per_part.values().map(|s| s.accuracy).sum::<f64>() / per_part.len() as f64
    };
    RunReport {
        strategy: strategy.to_string(),
        model_name: model_name.to_string(),
        per_part,
        macro_average,
        wall_time_s,
    }
}

impl RunReport {
    /// Pretty JSON, stable except for the `wall_time_s` line.
    #[must_use]
    pub fn render_json(&self) -> String {
        let mut text = serde_json::to_string_pretty(self).expect("report serializes");
        text.push('\n');
        text
    }

    /// `part,correct,total,accuracy` rows, accuracy at two decimals.
    #[must_use]
    pub fn render_csv(&self) -> String {
        let mut out = String::from("part,correct,total,accuracy\n");
        for (part, stats) in &self.per_part {
            out.push_str(&format!(
                "{part},{},{},{:.2}\n",
                stats.correct, stats.total, stats.accuracy
            ));
        }
        out
    }

    /// Human summary printed by the evaluation command.
    #[must_use]
    pub fn render_summary(&self) -> String {
        let mut out = String::new();
        for (part, stats) in &self.per_part {
            out.push_str(&format!(
                "{part}: {}/{} correct, accuracy {:.2}\n",
                stats.correct, stats.total, stats.accuracy
            ));
        }
        out.push_str(&format!("macro average: {:.2}\n", self.macro_average));
        out
    }
}

/// Stable per-task seed: global seed mixed with the task id.
#[must_use]
pub fn derive_seed(global: u64, tag: &str) -> u64 {
    let mut hasher = Sha256::new();
    hasher.update(global.to_le_bytes());
    hasher.update(tag.as_bytes());
    let digest = hasher.finalize();
    u64::from_le_bytes(digest[..8].try_into().expect("8 bytes"))
}

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Search(#[from] SearchError),
    #[error(transparent)]
    Model(#[from] ModelError),
}

/// Outcome for one task.
#[derive(Debug, Clone, Serialize)]
pub struct TaskResult {
    pub id: String,
    pub part: String,
    pub predicted: Option<String>,
    pub correct: bool,
    /// True when no answer could be extracted for the task.
    pub flagged: bool,
    /// True when the search fell back to the baseline for this task.
    pub used_fallback: bool,
}

/// Single CoT exchange for one task; `None` when the reply carried no
/// extractable answer (the task is then scored incorrect and flagged).
pub fn run_cot_baseline(
    task: &TaskRecord,
    templates: &TemplateSet,
    model: &ModelHandle,
) -> Result<Option<String>, ModelError> {
    let ctx = RenderCtx {
        templates,
        model_name: model.name(),
        max_tokens: model.max_tokens(),
    };
    let outcome = run_cot(&ctx, &task.question, task.options.as_deref(), model)?;
    Ok(outcome.answer)
}

fn options_suffix(options: Option<&[String]>) -> String {
    match options.filter(|opts| !opts.is_empty()) {
        None => String::new(),
        Some(options) => {
            let mut block = String::from("\nOptions:");
            for (i, option) in options.iter().enumerate() {
                block.push_str(&format!("\n{}. {option}", (b'A' + i as u8) as char));
            }
            block
        }
    }
}

fn run_one(
    task: &TaskRecord,
    strategy: Strategy,
    config: &MctsConfig,
    templates: &TemplateSet,
    model: &ModelHandle,
) -> Result<TaskResult, EvalError> {
    let (predicted, used_fallback) = match strategy {
        Strategy::Cot => (run_cot_baseline(task, templates, model)?, false),
        Strategy::ImprovedMcts => {
            let task_config = config.clone().with_seed(derive_seed(config.seed, &task.id));
            let problem = format!(
                "{}{}",
                task.question,
                options_suffix(task.options.as_deref())
            );
            let result = Engine::new(&problem, &task_config, model, templates)?.run()?;
            let answer = if result.answer.is_empty() {
                None
            } else {
                Some(result.answer)
            };
            (answer, result.used_fallback)
        }
    };
    let correct = predicted
        .as_deref()
        .is_some_and(|p| score_answer(p, &task.gold, task.options.as_deref()));
    Ok(TaskResult {
        id: task.id.clone(),
        part: task.part.clone(),
        flagged: predicted.is_none(),
        predicted,
        correct,
        used_fallback,
    })
}

/// Runs `strategy` over every task and aggregates the report. Tasks fan out
/// over `parallelism` workers; results keep dataset order and per-task seeds
/// derive from the task id, so the report is independent of scheduling.
pub fn run_eval(
    tasks: &[TaskRecord],
    strategy: Strategy,
    config: &MctsConfig,
    templates: &TemplateSet,
    model: &ModelHandle,
    parallelism: usize,
) -> Result<(RunReport, Vec<TaskResult>), EvalError> {
    let started = Instant::now();
    let workers = parallelism.clamp(1, tasks.len().max(1));
    let next = AtomicUsize::new(0);
    let slots: Vec<Mutex<Option<Result<TaskResult, EvalError>>>> =
        tasks.iter().map(|_| Mutex::new(None)).collect();

    std::thread::scope(|scope| {
        for _ in 0..workers {
            scope.spawn(|| loop {
                let index = next.fetch_add(1, Ordering::SeqCst);
                if index >= tasks.len() {
                    break;
                }
                let outcome = run_one(&tasks[index], strategy, config, templates, model);
                *slots[index].lock().expect("result slot") = Some(outcome);
            });
        }
    });

    let mut results = Vec::with_capacity(tasks.len());
    for slot in slots {
        results.push(slot.into_inner().expect("result slot").expect("worker ran")?);
    }
    let outcomes: Vec<(String, bool)> = results
        .iter()
        .map(|r| (r.part.clone(), r.correct))
        .collect();
    let report = aggregate_report(
        &outcomes,
        &strategy.to_string(),
        model.name(),
        started.elapsed().as_secs_f64(),
    );
    Ok((report, results))
}
