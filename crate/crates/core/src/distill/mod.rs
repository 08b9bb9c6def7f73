//! Protocol-guided chain-of-thought distillation.
//!
//! Stages: collect labeled teacher traces per task, distil a reasoning
//! protocol from `k` positive and `k` negative traces, merge cautions across
//! aligned steps of different tasks, instantiate the protocol with the
//! question's functional groups and gold answer, synthesize a CoT, and keep
//! it only if the teacher re-derives the gold answer from the reasoning
//! alone. Every teacher call is logged to the run directory's `audit/`.

mod pipeline;
mod protocol;
mod template;

use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::llmclient::LlmError;
use crate::molgraph::FunctionalGroupHit;
use crate::tasks::TaskError;

pub use pipeline::{
    build_sft_dataset, collect_traces, read_jsonl, rejected_sampling_filter, replay_filter_decisions, run_all,
    run_filter, run_merge, run_protocols, run_synthesize, run_traces, synthesize_cot, synthesize_with_retries,
    write_jsonl, AuditEntry, AuditLog, AuditReplay, AuditStage, DistillConfig, DistillSummary, Distiller, RunDir,
};
pub use protocol::{
    format_protocol, generate_protocol, merge_cautions, parse_protocol_block, select_examples, Alignment,
    AlignmentMember,
};
pub use template::{
    functional_groups_str, instantiate_protocol, render_template, PromptAssets, TemplateSet, PROMPT_VERSION,
    TEMPLATE_VERSION,
};

#[derive(Debug, Error)]
pub enum DistillError {
    #[error(transparent)]
    Llm(#[from] LlmError),
    #[error(transparent)]
    Task(#[from] TaskError),
    #[error("gold of {task_id}/{question_id} cannot be scored: {reason}")]
    UnscorableGold {
        task_id: String,
        question_id: String,
        reason: String,
    },
    #[error("task {task_id} has {found} positive traces, {needed} needed")]
    InsufficientPositives { task_id: String, needed: usize, found: usize },
    #[error("protocol for {task_id} unparseable after {attempts} attempts: {reason}")]
    ProtocolParseFailure {
        task_id: String,
        attempts: u32,
        reason: String,
    },
    #[error("alignment group {group}: {task_id} step {step} out of range (protocol has {steps} steps)")]
    AlignmentOutOfRange {
        group: String,
        task_id: String,
        step: usize,
        steps: usize,
    },
    #[error("alignment line {line}: {message}")]
    AlignmentSyntax { line: usize, message: String },
    #[error("template {template} has no value for slot {{{slot}}}")]
    TemplateSlotMissing { template: String, slot: String },
    #[error("no template named {0}")]
    TemplateNotFound(String),
    #[error("{task_id}/{question_id}: no parseable molecule in {text:?}")]
    UnparseableMolecule {
        task_id: String,
        question_id: String,
        text: String,
    },
    #[error("{question_id}: teacher output lacks a <think> or <answer> span")]
    MissingThinkOrAnswer { question_id: String },
    #[error("stage {stage} needs {path}, which an earlier stage writes")]
    MissingPriorStage { stage: &'static str, path: PathBuf },
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("{path} line {line}: {message}")]
    Format { path: PathBuf, line: usize, message: String },
}

impl DistillError {
    pub(crate) fn io(path: &std::path::Path, e: impl std::fmt::Display) -> DistillError {
        DistillError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// One labeled teacher response.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TraceSample {
    pub task_id: String,
    pub question_id: String,
    pub question: String,
    pub gold: String,
    pub slot: u32,
    pub response: String,
    pub extracted_answer: Option<String>,
    pub is_positive: bool,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProtocolStep {
    pub title: String,
    pub instruction: String,
    #[serde(default)]
    pub cautions: Vec<String>,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Provenance {
    pub k: usize,
    /// `question_id#slot` of the traces shown to the teacher.
    pub positives: Vec<String>,
    pub negatives: Vec<String>,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReasoningProtocol {
    pub task_id: String,
    pub version: u32,
    pub steps: Vec<ProtocolStep>,
    pub provenance: Provenance,
}

/// The "correct information" handed to the teacher with a protocol.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorrectInfo {
    pub functional_groups: Vec<FunctionalGroupHit>,
    pub functional_groups_str: String,
    pub answer: String,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct InstantiatedPrompt {
    pub task_id: String,
    pub question_id: String,
    pub protocol_version: u32,
    pub step_titles: Vec<String>,
    pub question: String,
    pub correct_info: CorrectInfo,
    pub rendered_text: String,
    /// Set when functional groups were omitted because the question carried
    /// no parseable molecule.
    pub functional_groups_omitted: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RejectionReason {
    RegenerationMismatch,
    RegenerationUnparseable,
    /// Every synthesis attempt lacked a `<think>` or `<answer>` span.
    SynthesisMalformed,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoTRecord {
    pub task_id: String,
    pub question_id: String,
    pub question: String,
    pub gold: String,
    pub think: String,
    pub answer: String,
    /// `None` until the filter has run.
    pub accepted: Option<bool>,
    pub rejection_reason: Option<RejectionReason>,
    pub regenerated_answer: Option<String>,
    /// Protocol step titles absent from `think`.
    pub missing_steps: Vec<String>,
    pub protocol_deviation: bool,
    pub attempt: u32,
}
