//! Distillation stages, the audit log and the run directory.
//!
//! Run directory layout:
//!
//! ```text
//! traces/<task_id>.jsonl     labeled teacher traces
//! protocols/<task_id>.json   reasoning protocols (merged in place)
//! cots/<task_id>.jsonl       synthesized and filtered CoT records
//! audit/<task_id>.jsonl      every teacher exchange
//! sft/sft.jsonl              accepted (prompt, completion) pairs
//! ```
//!
//! Every file is written in a stable order and carries no timestamps, so a
//! cassette-replayed run reproduces it byte for byte.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use parking_lot::Mutex;
use rayon::prelude::*;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use super::protocol::{generate_protocol, merge_cautions, Alignment};
use super::template::{instantiate_protocol, render_template, PromptAssets, TemplateSet};
use super::{CoTRecord, DistillError, InstantiatedPrompt, ReasoningProtocol, RejectionReason, TraceSample};
use crate::datakit::{DatasetRecord, SftPair};
use crate::llmclient::{request_fingerprint, ChatRequest, LlmClient, Message};
use crate::tasks::{extract_answer, registry, score_answer, yes_no_gold, AnswerSchema, ScoringContext, TaskSpec};

/// Knobs of the distillation run.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DistillConfig {
    /// Teacher responses collected per question.
    pub samples_per_question: u32,
    /// Positive (and at most as many negative) traces shown per protocol.
    pub k: usize,
    pub seed: u64,
    pub trace_temperature: f64,
    pub protocol_temperature: f64,
    pub synthesis_temperature: f64,
    /// Regeneration runs greedy so the filter is deterministic.
    pub regeneration_temperature: f64,
    /// Extra attempts when the teacher's protocol text does not parse.
    pub protocol_retries: u32,
    /// Extra synthesis attempts after a rejection.
    pub rejection_retries: u32,
    pub template_dir: Option<PathBuf>,
    pub alignment_path: Option<PathBuf>,
}

impl Default for DistillConfig {
    fn default() -> Self {
        DistillConfig {
            samples_per_question: 5,
            k: 5,
            seed: 0,
            trace_temperature: 0.6,
            protocol_temperature: 0.6,
            synthesis_temperature: 0.6,
            regeneration_temperature: 0.0,
            protocol_retries: 3,
            rejection_retries: 3,
            template_dir: None,
            alignment_path: None,
        }
    }
}

impl DistillConfig {
    pub fn templates(&self) -> Result<TemplateSet, DistillError> {
        match &self.template_dir {
            Some(d) => TemplateSet::load_dir(d),
            None => Ok(TemplateSet::bundled()),
        }
    }

    pub fn alignment(&self) -> Result<Alignment, DistillError> {
        match &self.alignment_path {
            Some(p) => Alignment::load(p),
            None => Ok(Alignment::bundled()),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AuditStage {
    Trace,
    ProtocolSteps,
    ProtocolCautions,
    Synthesis,
    Regeneration,
}

/// One teacher exchange.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AuditEntry {
    pub task_id: String,
    pub stage: AuditStage,
    pub question_id: Option<String>,
    pub attempt: u32,
    pub fingerprint: String,
    pub temperature: f64,
    pub prompt: String,
    pub completion: String,
    /// Filter decision for regeneration exchanges.
    pub decision: Option<String>,
}

impl AuditEntry {
    fn key(&self) -> (String, AuditStage, Option<String>, u32) {
        (self.task_id.clone(), self.stage, self.question_id.clone(), self.attempt)
    }
}

/// Thread-safe collector of teacher exchanges.
#[derive(Debug, Default)]
pub struct AuditLog {
    entries: Mutex<Vec<AuditEntry>>,
}

impl AuditLog {
    pub fn record(&self, entry: AuditEntry) {
        self.entries.lock().push(entry);
    }

    /// Entries sorted by (task, stage, question, attempt).
    pub fn sorted(&self) -> Vec<AuditEntry> {
        let mut v = self.entries.lock().clone();
        v.sort_by_key(AuditEntry::key);
        v
    }

    pub fn len(&self) -> usize {
        self.entries.lock().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn exchange(
    client: &LlmClient,
    stage: AuditStage,
    task_id: &str,
    question_id: Option<&str>,
    attempt: u32,
    prompt: &str,
    temperature: f64,
) -> Result<AuditEntry, DistillError> {
    let mut req = ChatRequest::new(vec![Message::user(prompt)]);
    req.temperature = temperature;
    let resp = client.complete_slot(&req, attempt)?;
    Ok(AuditEntry {
        task_id: task_id.to_string(),
        stage,
        question_id: question_id.map(str::to_string),
        attempt,
        fingerprint: request_fingerprint(client.model(), &req, attempt),
        temperature,
        prompt: prompt.to_string(),
        completion: resp.completions.into_iter().next().unwrap_or_default(),
        decision: None,
    })
}

/// One logged single-completion teacher call; `attempt` is the sample slot.
#[allow(clippy::too_many_arguments)]
pub(crate) fn call_teacher(
    client: &LlmClient,
    audit: &AuditLog,
    stage: AuditStage,
    task_id: &str,
    question_id: Option<&str>,
    attempt: u32,
    prompt: &str,
    temperature: f64,
) -> Result<String, DistillError> {
    let e = exchange(client, stage, task_id, question_id, attempt, prompt, temperature)?;
    let out = e.completion.clone();
    audit.record(e);
    Ok(out)
}

/// The gold answer as the scorer compares it (binarized for Yes/No tasks).
fn answer_gold(spec: &TaskSpec, record: &DatasetRecord) -> Result<String, DistillError> {
    if spec.answer_schema == AnswerSchema::YesNo {
        return yes_no_gold(spec, record).map_err(|e| unscorable(record, e.to_string()));
    }
    Ok(record.target.trim().to_string())
}

fn unscorable(record: &DatasetRecord, reason: String) -> DistillError {
    DistillError::UnscorableGold {
        task_id: record.task_id.clone(),
        question_id: record.question_id.clone(),
        reason,
    }
}

/// Whether `answer` equals the gold answer under the task's matching rule.
fn matches_gold(spec: &TaskSpec, record: &DatasetRecord, answer: &str, ctx: &ScoringContext) -> Result<bool, DistillError> {
    Ok(score_answer(spec, record, Some(answer), ctx)?.correct)
}

/// Samples `cfg.samples_per_question` teacher responses per question and
/// labels each by the task scorer. Output is sorted by (question, slot).
pub fn collect_traces(
    spec: &TaskSpec,
    records: &[DatasetRecord],
    cfg: &DistillConfig,
    prompts: &PromptAssets,
    client: &LlmClient,
    ctx: &ScoringContext,
    audit: &AuditLog,
) -> Result<Vec<TraceSample>, DistillError> {
    let per_q: Vec<Vec<TraceSample>> = records
        .par_iter()
        .filter(|r| r.task_id == spec.task_id)
        .map(|r| {
            let gold = answer_gold(spec, r)?;
            match score_answer(spec, r, Some(&gold), ctx) {
                Ok(s) if s.correct => {}
                Ok(_) => return Err(unscorable(r, "gold does not match itself".into())),
                Err(e) => return Err(unscorable(r, e.to_string())),
            }
            let prompt = render_template(
                "solve",
                &prompts.solve,
                &BTreeMap::from([("question".to_string(), r.input.clone())]),
            )?;
            (0..cfg.samples_per_question)
                .map(|slot| {
                    let response = call_teacher(
                        client,
                        audit,
                        AuditStage::Trace,
                        spec.task_id,
                        Some(&r.question_id),
                        slot,
                        &prompt,
                        cfg.trace_temperature,
                    )?;
                    let extracted = extract_answer(&response).ok();
                    let is_positive = match &extracted {
                        Some(a) => matches_gold(spec, r, a, ctx)?,
                        None => false,
                    };
                    Ok(TraceSample {
                        task_id: spec.task_id.to_string(),
                        question_id: r.question_id.clone(),
                        question: r.input.clone(),
                        gold: gold.clone(),
                        slot,
                        response,
                        extracted_answer: extracted,
                        is_positive,
                    })
                })
                .collect()
        })
        .collect::<Result<_, DistillError>>()?;
    let mut out: Vec<TraceSample> = per_q.into_iter().flatten().collect();
    out.sort_by(|a, b| (&a.question_id, a.slot).cmp(&(&b.question_id, b.slot)));
    Ok(out)
}

fn think_span(text: &str) -> Option<String> {
    let open = text.find("<think>")? + "<think>".len();
    let close = text[open..].find("</think>")? + open;
    let t = text[open..close].trim();
    (!t.is_empty()).then(|| t.to_string())
}

/// Asks the teacher for a CoT following the instantiated protocol. Step
/// titles missing from the reasoning are recorded, not fatal.
pub fn synthesize_cot(
    prompt: &InstantiatedPrompt,
    attempt: u32,
    cfg: &DistillConfig,
    client: &LlmClient,
    audit: &AuditLog,
) -> Result<CoTRecord, DistillError> {
    let out = call_teacher(
        client,
        audit,
        AuditStage::Synthesis,
        &prompt.task_id,
        Some(&prompt.question_id),
        attempt,
        &prompt.rendered_text,
        cfg.synthesis_temperature,
    )?;
    let missing = || DistillError::MissingThinkOrAnswer {
        question_id: prompt.question_id.clone(),
    };
    let think = think_span(&out).ok_or_else(missing)?;
    let answer = extract_answer(&out).map_err(|_| missing())?;
    let lower = think.to_lowercase();
    let missing_steps: Vec<String> = prompt
        .step_titles
        .iter()
        .filter(|t| !lower.contains(&t.to_lowercase()))
        .cloned()
        .collect();
    Ok(CoTRecord {
        task_id: prompt.task_id.clone(),
        question_id: prompt.question_id.clone(),
        question: prompt.question.clone(),
        gold: prompt.correct_info.answer.clone(),
        think,
        answer,
        accepted: None,
        rejection_reason: None,
        regenerated_answer: None,
        protocol_deviation: !missing_steps.is_empty(),
        missing_steps,
        attempt,
    })
}

/// Decision for one regenerated completion: `(accepted, reason, answer)`.
fn regeneration_decision(
    spec: &TaskSpec,
    gold: &DatasetRecord,
    completion: &str,
    ctx: &ScoringContext,
) -> Result<(bool, Option<RejectionReason>, Option<String>), DistillError> {
    let Ok(answer) = extract_answer(completion) else {
        return Ok((false, Some(RejectionReason::RegenerationUnparseable), None));
    };
    let molecular = matches!(spec.answer_schema, AnswerSchema::Smiles | AnswerSchema::SmilesSet);
    if molecular && answer.split('.').any(|c| crate::molgraph::parse_smiles(c.trim()).is_err()) {
        return Ok((false, Some(RejectionReason::RegenerationUnparseable), Some(answer)));
    }
    if matches_gold(spec, gold, &answer, ctx)? {
        Ok((true, None, Some(answer)))
    } else {
        Ok((false, Some(RejectionReason::RegenerationMismatch), Some(answer)))
    }
}

fn decision_label(accepted: bool, reason: Option<RejectionReason>) -> String {
    match (accepted, reason) {
        (true, _) => "accepted".to_string(),
        (false, Some(r)) => serde_json::to_value(r).unwrap().as_str().unwrap().to_string(),
        (false, None) => "rejected".to_string(),
    }
}

/// Re-prompts the teacher with the question and the reasoning only and
/// accepts the record iff the regenerated answer matches the gold answer.
pub fn rejected_sampling_filter(
    mut record: CoTRecord,
    spec: &TaskSpec,
    gold: &DatasetRecord,
    cfg: &DistillConfig,
    prompts: &PromptAssets,
    client: &LlmClient,
    ctx: &ScoringContext,
    audit: &AuditLog,
) -> Result<CoTRecord, DistillError> {
    let prompt = render_template(
        "regenerate",
        &prompts.regenerate,
        &BTreeMap::from([
            ("question".to_string(), record.question.clone()),
            ("think".to_string(), record.think.clone()),
        ]),
    )?;
    let mut entry = exchange(
        client,
        AuditStage::Regeneration,
        &record.task_id,
        Some(&record.question_id),
        record.attempt,
        &prompt,
        cfg.regeneration_temperature,
    )?;
    let (accepted, reason, answer) = regeneration_decision(spec, gold, &entry.completion, ctx)?;
    entry.decision = Some(decision_label(accepted, reason));
    audit.record(entry);
    record.accepted = Some(accepted);
    record.rejection_reason = reason;
    record.regenerated_answer = answer;
    Ok(record)
}

fn malformed(prompt: &InstantiatedPrompt, attempt: u32) -> CoTRecord {
    CoTRecord {
        task_id: prompt.task_id.clone(),
        question_id: prompt.question_id.clone(),
        question: prompt.question.clone(),
        gold: prompt.correct_info.answer.clone(),
        think: String::new(),
        answer: String::new(),
        accepted: Some(false),
        rejection_reason: Some(RejectionReason::SynthesisMalformed),
        regenerated_answer: None,
        missing_steps: Vec::new(),
        protocol_deviation: false,
        attempt,
    }
}

/// Shared handles for the pipeline stages.
pub struct Distiller<'a> {
    pub cfg: &'a DistillConfig,
    pub prompts: &'a PromptAssets,
    pub templates: &'a TemplateSet,
    pub client: &'a LlmClient,
    pub ctx: &'a ScoringContext,
    pub audit: &'a AuditLog,
}

/// Synthesis then filtering, retried with fresh slots after a rejection,
/// starting at `first_attempt`. Returns the first accepted record or the
/// last rejected one.
pub fn synthesize_with_retries(
    d: &Distiller<'_>,
    protocol: &ReasoningProtocol,
    spec: &TaskSpec,
    gold: &DatasetRecord,
    first_attempt: u32,
) -> Result<CoTRecord, DistillError> {
    let prompt = instantiate_protocol(protocol, spec, gold, d.templates)?;
    let mut last = None;
    for attempt in first_attempt..=d.cfg.rejection_retries {
        let rec = match synthesize_cot(&prompt, attempt, d.cfg, d.client, d.audit) {
            Ok(r) => rejected_sampling_filter(r, spec, gold, d.cfg, d.prompts, d.client, d.ctx, d.audit)?,
            Err(DistillError::MissingThinkOrAnswer { .. }) => malformed(&prompt, attempt),
            Err(e) => return Err(e),
        };
        if rec.accepted == Some(true) {
            return Ok(rec);
        }
        last = Some(rec);
    }
    Ok(last.unwrap_or_else(|| malformed(&prompt, first_attempt)))
}

/// Accepted records as SFT pairs ordered by (task_id, question_id), one
/// JSON object per line.
pub fn build_sft_dataset(records: &[CoTRecord]) -> String {
    let mut acc: Vec<&CoTRecord> = records.iter().filter(|r| r.accepted == Some(true)).collect();
    acc.sort_by(|a, b| (&a.task_id, &a.question_id).cmp(&(&b.task_id, &b.question_id)));
    let mut out = String::new();
    for r in acc {
        let pair = SftPair {
            task_id: r.task_id.clone(),
            prompt: r.question.clone(),
            completion: format!("<think>\n{}\n</think>\n<answer>{}</answer>", r.think, r.answer),
        };
        out.push_str(&serde_json::to_string(&pair).expect("pair serializes"));
        out.push('\n');
    }
    out
}

pub fn write_jsonl<T: Serialize>(path: &Path, items: &[T]) -> Result<(), DistillError> {
    let mut text = String::new();
    for i in items {
        text.push_str(&serde_json::to_string(i).expect("serializable"));
        text.push('\n');
    }
    write_text(path, &text)
}

pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, DistillError> {
    let text = std::fs::read_to_string(path).map_err(|e| DistillError::io(path, e))?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| DistillError::Format {
                path: path.to_path_buf(),
                line: i + 1,
                message: e.to_string(),
            })
        })
        .collect()
}

fn write_text(path: &Path, text: &str) -> Result<(), DistillError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| DistillError::io(dir, e))?;
    }
    std::fs::write(path, text).map_err(|e| DistillError::io(path, e))
}

/// Paths inside a run directory.
#[derive(Clone, Debug)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> RunDir {
        RunDir { root: root.into() }
    }

    pub fn traces(&self, task_id: &str) -> PathBuf {
        self.root.join("traces").join(format!("{task_id}.jsonl"))
    }

    pub fn protocol(&self, task_id: &str) -> PathBuf {
        self.root.join("protocols").join(format!("{task_id}.json"))
    }

    pub fn cots(&self, task_id: &str) -> PathBuf {
        self.root.join("cots").join(format!("{task_id}.jsonl"))
    }

    pub fn audit(&self, task_id: &str) -> PathBuf {
        self.root.join("audit").join(format!("{task_id}.jsonl"))
    }

    pub fn sft(&self) -> PathBuf {
        self.root.join("sft").join("sft.jsonl")
    }

    /// Merges this run's audit entries into `audit/`, replacing entries
    /// with the same (task, stage, question, attempt).
    pub fn flush_audit(&self, log: &AuditLog) -> Result<(), DistillError> {
        let mut by_task: BTreeMap<String, BTreeMap<_, AuditEntry>> = BTreeMap::new();
        for e in log.sorted() {
            by_task.entry(e.task_id.clone()).or_default().insert(e.key(), e);
        }
        for (task, fresh) in by_task {
            let path = self.audit(&task);
            let mut all: BTreeMap<_, AuditEntry> = if path.exists() {
                read_jsonl::<AuditEntry>(&path)?.into_iter().map(|e| (e.key(), e)).collect()
            } else {
                BTreeMap::new()
            };
            all.extend(fresh);
            write_jsonl(&path, &all.into_values().collect::<Vec<_>>())?;
        }
        Ok(())
    }

    pub fn read_audit(&self, task_id: &str) -> Result<Vec<AuditEntry>, DistillError> {
        read_jsonl(&self.audit(task_id))
    }
}

fn require(stage: &'static str, path: PathBuf) -> Result<PathBuf, DistillError> {
    if path.exists() {
        Ok(path)
    } else {
        Err(DistillError::MissingPriorStage { stage, path })
    }
}

/// Task ids present in `records`, in registry order.
fn tasks_in(records: &[DatasetRecord]) -> Result<Vec<&'static TaskSpec>, DistillError> {
    for r in records {
        registry().get(&r.task_id)?;
    }
    Ok(registry()
        .tasks()
        .iter()
        .filter(|t| records.iter().any(|r| r.task_id == t.task_id))
        .collect())
}

fn sorted_questions<'r>(records: &'r [DatasetRecord], task_id: &str) -> Vec<&'r DatasetRecord> {
    let mut v: Vec<&DatasetRecord> = records.iter().filter(|r| r.task_id == task_id).collect();
    v.sort_by(|a, b| a.question_id.cmp(&b.question_id));
    v
}

/// Collects and writes traces for every task in `records`.
pub fn run_traces(d: &Distiller<'_>, run: &RunDir, records: &[DatasetRecord]) -> Result<usize, DistillError> {
    let mut n = 0;
    for spec in tasks_in(records)? {
        let traces = collect_traces(spec, records, d.cfg, d.prompts, d.client, d.ctx, d.audit)?;
        n += traces.len();
        write_jsonl(&run.traces(spec.task_id), &traces)?;
    }
    run.flush_audit(d.audit)?;
    Ok(n)
}

/// Generates a protocol per task from its written traces.
pub fn run_protocols(d: &Distiller<'_>, run: &RunDir, records: &[DatasetRecord]) -> Result<usize, DistillError> {
    let specs = tasks_in(records)?;
    let protocols: Vec<ReasoningProtocol> = specs
        .par_iter()
        .map(|spec| {
            let traces: Vec<TraceSample> = read_jsonl(&require("protocol", run.traces(spec.task_id))?)?;
            generate_protocol(spec.task_id, &traces, d.cfg, d.prompts, d.client, d.audit)
        })
        .collect::<Result<_, DistillError>>()?;
    for p in &protocols {
        write_protocol(run, p)?;
    }
    run.flush_audit(d.audit)?;
    Ok(protocols.len())
}

fn write_protocol(run: &RunDir, p: &ReasoningProtocol) -> Result<(), DistillError> {
    let mut text = serde_json::to_string_pretty(p).expect("protocol serializes");
    text.push('\n');
    write_text(&run.protocol(&p.task_id), &text)
}

fn read_protocol(run: &RunDir, task_id: &str) -> Result<ReasoningProtocol, DistillError> {
    let path = run.protocol(task_id);
    let text = std::fs::read_to_string(&path).map_err(|e| DistillError::io(&path, e))?;
    serde_json::from_str(&text).map_err(|e| DistillError::Format {
        path,
        line: e.line(),
        message: e.to_string(),
    })
}

/// Merges cautions across every protocol in the run directory.
pub fn run_merge(run: &RunDir, records: &[DatasetRecord], alignment: &Alignment) -> Result<usize, DistillError> {
    let protocols: Vec<ReasoningProtocol> = tasks_in(records)?
        .iter()
        .map(|s| {
            require("merge", run.protocol(s.task_id))?;
            read_protocol(run, s.task_id)
        })
        .collect::<Result<_, _>>()?;
    let merged = merge_cautions(&protocols, alignment)?;
    let changed = merged.iter().zip(&protocols).filter(|(a, b)| a != b).count();
    for p in &merged {
        write_protocol(run, p)?;
    }
    Ok(changed)
}

/// One synthesis attempt per question; records stay pending for the filter.
pub fn run_synthesize(d: &Distiller<'_>, run: &RunDir, records: &[DatasetRecord]) -> Result<usize, DistillError> {
    let mut n = 0;
    for spec in tasks_in(records)? {
        require("synthesize", run.protocol(spec.task_id))?;
        let protocol = read_protocol(run, spec.task_id)?;
        let cots: Vec<CoTRecord> = sorted_questions(records, spec.task_id)
            .par_iter()
            .map(|r| {
                let prompt = instantiate_protocol(&protocol, spec, r, d.templates)?;
                match synthesize_cot(&prompt, 0, d.cfg, d.client, d.audit) {
                    Ok(c) => Ok(c),
                    Err(DistillError::MissingThinkOrAnswer { .. }) => Ok(malformed(&prompt, 0)),
                    Err(e) => Err(e),
                }
            })
            .collect::<Result<_, DistillError>>()?;
        n += cots.len();
        write_jsonl(&run.cots(spec.task_id), &cots)?;
    }
    run.flush_audit(d.audit)?;
    Ok(n)
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DistillSummary {
    pub records: usize,
    pub accepted: usize,
    pub rejected: usize,
    pub protocol_deviations: usize,
}

/// Filters pending records, retries rejected ones, and writes the SFT set.
pub fn run_filter(d: &Distiller<'_>, run: &RunDir, records: &[DatasetRecord]) -> Result<DistillSummary, DistillError> {
    let mut all = Vec::new();
    for spec in tasks_in(records)? {
        let protocol = read_protocol(run, spec.task_id)?;
        let gold: BTreeMap<&str, &DatasetRecord> = sorted_questions(records, spec.task_id)
            .into_iter()
            .map(|r| (r.question_id.as_str(), r))
            .collect();
        let cots: Vec<CoTRecord> = read_jsonl(&require("filter", run.cots(spec.task_id))?)?;
        let filtered: Vec<CoTRecord> = cots
            .into_par_iter()
            .map(|c| {
                let g = *gold.get(c.question_id.as_str()).ok_or_else(|| {
                    unscorable_id(spec.task_id, &c.question_id, "CoT record without a gold record")
                })?;
                let first = match c.accepted {
                    None => rejected_sampling_filter(c, spec, g, d.cfg, d.prompts, d.client, d.ctx, d.audit)?,
                    Some(_) => c,
                };
                if first.accepted == Some(true) || first.attempt >= d.cfg.rejection_retries {
                    return Ok(first);
                }
                synthesize_with_retries(d, &protocol, spec, g, first.attempt + 1)
            })
            .collect::<Result<_, DistillError>>()?;
        write_jsonl(&run.cots(spec.task_id), &filtered)?;
        all.extend(filtered);
    }
    run.flush_audit(d.audit)?;
    write_text(&run.sft(), &build_sft_dataset(&all))?;
    let accepted = all.iter().filter(|r| r.accepted == Some(true)).count();
    Ok(DistillSummary {
        records: all.len(),
        accepted,
        rejected: all.len() - accepted,
        protocol_deviations: all.iter().filter(|r| r.protocol_deviation).count(),
    })
}

fn unscorable_id(task_id: &str, question_id: &str, reason: &str) -> DistillError {
    DistillError::UnscorableGold {
        task_id: task_id.to_string(),
        question_id: question_id.to_string(),
        reason: reason.to_string(),
    }
}

/// traces, protocols, merge, synthesize, filter.
pub fn run_all(
    d: &Distiller<'_>,
    run: &RunDir,
    records: &[DatasetRecord],
    alignment: &Alignment,
) -> Result<DistillSummary, DistillError> {
    run_traces(d, run, records)?;
    run_protocols(d, run, records)?;
    run_merge(run, records, alignment)?;
    run_synthesize(d, run, records)?;
    run_filter(d, run, records)
}

/// Outcome of re-deriving filter decisions from an audit log.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct AuditReplay {
    pub checked: usize,
    pub mismatches: Vec<String>,
}

/// Recomputes every logged regeneration decision from its stored completion
/// without contacting the teacher.
pub fn replay_filter_decisions(
    entries: &[AuditEntry],
    gold: &[DatasetRecord],
    ctx: &ScoringContext,
) -> Result<AuditReplay, DistillError> {
    let index: BTreeMap<(&str, &str), &DatasetRecord> = gold
        .iter()
        .map(|g| ((g.task_id.as_str(), g.question_id.as_str()), g))
        .collect();
    let mut out = AuditReplay::default();
    for e in entries.iter().filter(|e| e.stage == AuditStage::Regeneration) {
        let qid = e.question_id.as_deref().unwrap_or_default();
        let g = index
            .get(&(e.task_id.as_str(), qid))
            .ok_or_else(|| unscorable_id(&e.task_id, qid, "audit entry without a gold record"))?;
        let spec = registry().get(&e.task_id)?;
        let (accepted, reason, _) = regeneration_decision(spec, g, &e.completion, ctx)?;
        let label = decision_label(accepted, reason);
        out.checked += 1;
        if e.decision.as_deref() != Some(label.as_str()) {
            out.mismatches.push(format!(
                "{}/{}#{}: logged {:?}, replayed {label}",
                e.task_id, qid, e.attempt, e.decision
            ));
        }
    }
    Ok(out)
}
