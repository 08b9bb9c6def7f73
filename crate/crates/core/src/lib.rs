//! Toolkit for chemical-reasoning model pipelines: SMILES graphs and
//! canonical forms, fingerprints, text metrics, a 25-subtask scoring
//! harness, protocol-guided distillation driven by a chat-completion
//! teacher, and multi-task GRPO mathematics with a training simulator.

pub mod chemsim;
pub mod cli;
pub mod config;
pub mod datakit;
pub mod distill;
pub mod grpo;
pub mod llmclient;
pub mod molgraph;
pub mod tasks;
pub mod textmetrics;
