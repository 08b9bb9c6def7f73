//! Whole-run evaluation: pairs predictions with gold records, scores them
//! in parallel and aggregates per-subtask and per-family scores.

use std::collections::{BTreeMap, HashMap};
use std::fmt::Write as _;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::extract::{extract_answer, ExtractionError};
use super::scoring::{score_answer, QuestionScore, ScoringContext};
use super::tomg::{subtask_wsr, TomgScore, WsrForm};
use super::{registry, Family, TaskError};
use crate::datakit::{write_file, DataError, DatasetRecord};

/// One line of a prediction file. The answer is taken from `raw_output`
/// (through tag extraction) when present, else from `answer` verbatim,
/// else from `gold`, which lets a gold file be scored against itself.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub task_id: String,
    pub question_id: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub raw_output: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answer: Option<String>,
    #[serde(default, alias = "target", skip_serializing_if = "Option::is_none")]
    pub gold: Option<String>,
}

impl PredictionRecord {
    /// The answer to score, or the extraction failure.
    pub fn resolve(&self) -> Result<String, ExtractionError> {
        if let Some(raw) = &self.raw_output {
            return extract_answer(raw);
        }
        let text = self.answer.as_deref().or(self.gold.as_deref()).unwrap_or("").trim();
        if text.is_empty() {
            Err(ExtractionError::EmptyAnswer)
        } else {
            Ok(text.to_string())
        }
    }
}

/// Parses a line-delimited prediction file; a `{"schema": ...}` header
/// line is skipped.
pub fn parse_predictions(text: &str) -> Result<Vec<PredictionRecord>, DataError> {
    let mut out = Vec::new();
    for (idx, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let value: serde_json::Value = serde_json::from_str(line).map_err(|e| DataError::SchemaViolation {
            line: idx + 1,
            message: e.to_string(),
        })?;
        if idx == 0 && value.get("schema").is_some() && value.get("task_id").is_none() {
            continue;
        }
        out.push(serde_json::from_value(value).map_err(|e| DataError::SchemaViolation {
            line: idx + 1,
            message: e.to_string(),
        })?);
    }
    Ok(out)
}

pub fn load_predictions(path: &Path) -> Result<Vec<PredictionRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    })?;
    parse_predictions(&text)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionResult {
    pub question_id: String,
    pub answer: Option<String>,
    pub extraction_error: Option<ExtractionError>,
    pub score: QuestionScore,
}

/// Scores of one subtask. Metric aggregates are per-question means, except
/// that TOMG `quality` averages over valid answers under the default WSR
/// form and TOMG `wsr` follows the configured form.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScoreReport {
    pub task_id: String,
    pub family: Family,
    pub n: usize,
    pub primary_metric: String,
    pub primary: f64,
    /// Fraction of answers equal to gold under the task's matching rule.
    pub correct_rate: f64,
    pub metrics: BTreeMap<String, f64>,
    pub questions: Vec<QuestionResult>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkReport {
    pub wsr_form: WsrForm,
    pub n_questions: usize,
    /// Registry order.
    pub subtasks: Vec<ScoreReport>,
    /// Nine columns in report order; `None` when no subtask of the family
    /// was evaluated.
    pub macro_scores: Vec<(Family, Option<f64>)>,
}

impl BenchmarkReport {
    pub fn macro_score(&self, family: Family) -> Option<f64> {
        self.macro_scores.iter().find(|(f, _)| *f == family).and_then(|(_, v)| *v)
    }

    pub fn subtask(&self, task_id: &str) -> Option<&ScoreReport> {
        self.subtasks.iter().find(|s| s.task_id == task_id)
    }
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = values.fold((0.0, 0usize), |(s, n), v| (s + v, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

fn aggregate(task_id: &str, questions: Vec<QuestionResult>, form: WsrForm) -> ScoreReport {
    let spec = registry().get(task_id).expect("validated task id");
    let mut names: Vec<&String> = questions.iter().flat_map(|q| q.score.metrics.keys()).collect();
    names.sort();
    names.dedup();
    let mut metrics: BTreeMap<String, f64> = names
        .into_iter()
        .map(|m| (m.clone(), mean(questions.iter().map(|q| q.score.metrics.get(m).copied().unwrap_or(0.0)))))
        .collect();
    if spec.params.tomg.is_some() {
        let scores: Vec<TomgScore> = questions.iter().filter_map(|q| q.score.tomg).collect();
        let (sr, quality, wsr) = subtask_wsr(&scores, form);
        metrics.insert("success_rate".into(), sr);
        metrics.insert("quality".into(), quality);
        metrics.insert("wsr".into(), wsr);
    }
    let primary = metrics.get(spec.primary_metric()).copied().unwrap_or(0.0);
    ScoreReport {
        task_id: task_id.to_string(),
        family: spec.family,
        n: questions.len(),
        primary_metric: spec.primary_metric().to_string(),
        primary,
        correct_rate: mean(questions.iter().map(|q| f64::from(u8::from(q.score.correct)))),
        metrics,
        questions,
    }
}

/// Scores every prediction against its gold record. Every prediction must
/// have a gold record and every gold record a prediction.
pub fn evaluate_run(
    predictions: &[PredictionRecord],
    gold: &[DatasetRecord],
    ctx: &ScoringContext,
) -> Result<BenchmarkReport, TaskError> {
    if predictions.is_empty() {
        return Err(TaskError::EmptyPredictions);
    }
    let reg = registry();
    for id in predictions.iter().map(|p| &p.task_id).chain(gold.iter().map(|g| &g.task_id)) {
        reg.get(id)?;
    }
    let gold_index: HashMap<(&str, &str), &DatasetRecord> = gold
        .iter()
        .map(|g| ((g.task_id.as_str(), g.question_id.as_str()), g))
        .collect();
    let mut pairs: BTreeMap<(&str, &str), (&PredictionRecord, &DatasetRecord)> = BTreeMap::new();
    let mut problems = Vec::new();
    for p in predictions {
        let key = (p.task_id.as_str(), p.question_id.as_str());
        match gold_index.get(&key) {
            None => problems.push(format!("no gold for {}/{}", key.0, key.1)),
            Some(g) => {
                if pairs.insert(key, (p, g)).is_some() {
                    problems.push(format!("duplicate prediction for {}/{}", key.0, key.1));
                }
            }
        }
    }
    for g in gold {
        if !pairs.contains_key(&(g.task_id.as_str(), g.question_id.as_str())) {
            problems.push(format!("no prediction for {}/{}", g.task_id, g.question_id));
        }
    }
    if !problems.is_empty() {
        problems.sort();
        return Err(TaskError::GoldMismatch(problems.join("; ")));
    }

    let work: Vec<_> = pairs.into_iter().collect();
    let scored: Vec<(String, QuestionResult)> = work
        .par_iter()
        .map(|((task_id, qid), (p, g))| {
            let spec = reg.get(task_id)?;
            let resolved = p.resolve();
            let score = score_answer(spec, g, resolved.as_deref().ok(), ctx)?;
            Ok((
                task_id.to_string(),
                QuestionResult {
                    question_id: qid.to_string(),
                    answer: resolved.clone().ok(),
                    extraction_error: resolved.err(),
                    score,
                },
            ))
        })
        .collect::<Result<_, TaskError>>()?;

    let mut by_task: BTreeMap<String, Vec<QuestionResult>> = BTreeMap::new();
    for (t, q) in scored {
        by_task.entry(t).or_default().push(q);
    }
    let n_questions = work.len();
    let subtasks: Vec<ScoreReport> = reg
        .tasks()
        .iter()
        .filter_map(|spec| by_task.remove(spec.task_id).map(|qs| aggregate(spec.task_id, qs, ctx.wsr_form)))
        .collect();
    let macro_scores = Family::ALL
        .iter()
        .map(|&f| {
            let prim: Vec<f64> = subtasks.iter().filter(|s| s.family == f).map(|s| s.primary).collect();
            (f, (!prim.is_empty()).then(|| mean(prim.into_iter())))
        })
        .collect();
    Ok(BenchmarkReport {
        wsr_form: ctx.wsr_form,
        n_questions,
        subtasks,
        macro_scores,
    })
}

fn cell(v: Option<f64>) -> String {
    v.map_or_else(|| "-".to_string(), |x| format!("{x:.4}"))
}

/// Aligned plain-text report: the nine macro columns, then one row per
/// subtask.
pub fn render_text_table(report: &BenchmarkReport) -> String {
    let mut out = String::new();
    let width = 8;
    for (f, _) in &report.macro_scores {
        let _ = write!(out, "{:>width$}", f.column());
    }
    out.push('\n');
    for (_, v) in &report.macro_scores {
        let _ = write!(out, "{:>width$}", cell(*v));
    }
    out.push_str("\n\n");
    let id_w = report.subtasks.iter().map(|s| s.task_id.len()).max().unwrap_or(7).max(7);
    let _ = writeln!(out, "{:<id_w$}  {:>5}  {:<12}  {:>8}  {:>8}", "subtask", "n", "metric", "score", "correct");
    for s in &report.subtasks {
        let _ = writeln!(
            out,
            "{:<id_w$}  {:>5}  {:<12}  {:>8.4}  {:>8.4}",
            s.task_id, s.n, s.primary_metric, s.primary, s.correct_rate
        );
    }
    out
}

/// Long-format CSV: one row per subtask metric.
pub fn render_csv(report: &BenchmarkReport) -> String {
    let mut out = String::from("task_id,family,n,metric,value\n");
    for s in &report.subtasks {
        for (m, v) in &s.metrics {
            let _ = writeln!(out, "{},{},{},{},{}", s.task_id, s.family.column(), s.n, m, v);
        }
    }
    out
}

/// Writes `report.json`, `subtasks.csv` and `report.txt` into `dir`.
pub fn write_reports(report: &BenchmarkReport, dir: &Path) -> Result<(), DataError> {
    let json = serde_json::to_string_pretty(report).expect("report serializes");
    write_file(&dir.join("report.json"), json.as_bytes())?;
    write_file(&dir.join("subtasks.csv"), render_csv(report).as_bytes())?;
    write_file(&dir.join("report.txt"), render_text_table(report).as_bytes())
}
