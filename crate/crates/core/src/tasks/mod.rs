//! The 25-subtask registry, answer extraction, per-task scoring and
//! benchmark aggregation.
//!
//! Every scorer is total over arbitrary model text and returns a primary
//! score in [0, 1], so the same functions serve as GRPO rewards. Data errors
//! in gold records (unparseable gold SMILES, gold outside the option list)
//! abort instead.

mod eval;
mod extract;
mod properties;
mod scoring;
mod tomg;

use std::fmt;
use std::sync::OnceLock;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::chemsim::ChemSimError;

pub use eval::{
    evaluate_run, load_predictions, parse_predictions, render_csv, render_text_table, write_reports, BenchmarkReport,
    PredictionRecord, QuestionResult, ScoreReport,
};
pub use extract::{extract_answer, ExtractionError, Prediction};
pub use properties::{AtomContributionOracle, OracleError, PropertyOracle, TableOracle};
pub use scoring::{
    score_answer, score_captioning, score_choice, score_molecule_design, score_smiles_exact, score_smiles_set,
    score_yes_no, split_ranked, yes_no_gold, QuestionScore, ScoringContext, StereoMode,
};
pub use tomg::{aggregate_wsr, score_tomg, subtask_wsr, tomg_group_count, TomgScore, WsrForm, GROUP_ALIASES};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum TaskError {
    #[error("unknown task {0:?}")]
    UnknownTask(String),
    #[error("gold answer {gold:?} does not parse: {reason}")]
    GoldUnparseable { gold: String, reason: String },
    #[error("gold answer {gold:?} is not among the options")]
    GoldNotInOptions { gold: String },
    #[error("gold must be Yes or No, got {0:?}")]
    InvalidYesNoGold(String),
    #[error("record {question_id}: {message}")]
    BadRecord { question_id: String, message: String },
    #[error("unknown TOMG subtask {0:?}")]
    UnknownSubtask(String),
    #[error("novelty scoring needs a reference set")]
    MissingReferenceSet,
    #[error("no property oracle registered for {0:?}")]
    MissingOracle(String),
    #[error("property oracle: {0}")]
    Oracle(#[from] OracleError),
    #[error("missing TOMG subtask scores for {0:?}")]
    MissingSubtask(Vec<String>),
    #[error("prediction set is empty")]
    EmptyPredictions,
    #[error("predictions and gold disagree: {0}")]
    GoldMismatch(String),
    #[error(transparent)]
    ChemSim(#[from] ChemSimError),
}

/// The nine macro-task columns, in report order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Family {
    Name,
    Property,
    Design,
    Captioning,
    Tomg,
    Yield,
    Reagent,
    Reaction,
    Retrosynthesis,
}

impl Family {
    pub const ALL: [Family; 9] = [
        Family::Name,
        Family::Property,
        Family::Design,
        Family::Captioning,
        Family::Tomg,
        Family::Yield,
        Family::Reagent,
        Family::Reaction,
        Family::Retrosynthesis,
    ];

    /// Short column header.
    pub fn column(self) -> &'static str {
        match self {
            Family::Name => "Name",
            Family::Property => "Prop.",
            Family::Design => "Design",
            Family::Captioning => "Capt.",
            Family::Tomg => "TOMG",
            Family::Yield => "Yield",
            Family::Reagent => "Reag.",
            Family::Reaction => "React.",
            Family::Retrosynthesis => "Retro",
        }
    }

    pub fn parse(s: &str) -> Option<Family> {
        let s = s.trim_end_matches('.').to_ascii_lowercase();
        Family::ALL.into_iter().find(|f| {
            let ser = serde_json::to_value(f).unwrap();
            ser.as_str() == Some(s.as_str()) || f.column().trim_end_matches('.').to_ascii_lowercase() == s
        })
    }
}

impl fmt::Display for Family {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.column())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AnswerSchema {
    Smiles,
    SmilesSet,
    Text,
    YesNo,
    Choice,
    RankedChoices,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TextMatch {
    /// Lowercase and whitespace-collapse before comparing.
    Iupac,
    /// Captions: scored by text metrics, "correct" only on exact token match.
    Caption,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TomgKind {
    EditAdd,
    EditDel,
    EditSub,
    OptLogP,
    OptMr,
    OptQed,
    CustomAtomNum,
    CustomBondNum,
    CustomFunctionalGroup,
}

impl TomgKind {
    pub fn property(self) -> Option<&'static str> {
        match self {
            TomgKind::OptLogP => Some("logp"),
            TomgKind::OptMr => Some("mr"),
            TomgKind::OptQed => Some("qed"),
            _ => None,
        }
    }

    pub fn uses_novelty(self) -> bool {
        matches!(
            self,
            TomgKind::CustomAtomNum | TomgKind::CustomBondNum | TomgKind::CustomFunctionalGroup
        )
    }
}

/// Where the molecule whose functional groups feed a distillation prompt
/// comes from.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FgSource {
    Input,
    Target,
    /// `meta.source`, the molecule being edited or optimized.
    SourceMolecule,
    None,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskParams {
    /// Prompt template file stem under the template directory.
    pub template: &'static str,
    pub fg_source: FgSource,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub top_k: Option<usize>,
    /// Percent yield above which the gold label is Yes, when a record
    /// carries a numeric `meta.yield` instead of a binarized label.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub yield_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub text_match: Option<TextMatch>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tomg: Option<TomgKind>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TaskSpec {
    pub task_id: &'static str,
    pub family: Family,
    pub answer_schema: AnswerSchema,
    /// Metric identifiers reported for the task; the first is the primary
    /// metric that feeds the macro column.
    pub metric_bundle: Vec<&'static str>,
    pub params: TaskParams,
}

impl TaskSpec {
    pub fn primary_metric(&self) -> &'static str {
        self.metric_bundle[0]
    }
}

pub struct Registry {
    tasks: Vec<TaskSpec>,
}

impl Registry {
    pub fn tasks(&self) -> &[TaskSpec] {
        &self.tasks
    }

    pub fn get(&self, task_id: &str) -> Result<&TaskSpec, TaskError> {
        self.tasks
            .iter()
            .find(|t| t.task_id == task_id)
            .ok_or_else(|| TaskError::UnknownTask(task_id.to_string()))
    }

    pub fn family(&self, family: Family) -> impl Iterator<Item = &TaskSpec> {
        self.tasks.iter().filter(move |t| t.family == family)
    }
}

fn spec(
    task_id: &'static str,
    family: Family,
    answer_schema: AnswerSchema,
    metric_bundle: &[&'static str],
    template: &'static str,
    fg_source: FgSource,
) -> TaskSpec {
    TaskSpec {
        task_id,
        family,
        answer_schema,
        metric_bundle: metric_bundle.to_vec(),
        params: TaskParams {
            template,
            fg_source,
            top_k: None,
            yield_threshold: None,
            text_match: None,
            tomg: None,
        },
    }
}

const DESIGN_METRICS: &[&str] = &[
    "exact_match",
    "bleu",
    "levenshtein",
    "key_sim",
    "path_sim",
    "morgan_sim",
    "validity",
];
const CAPTION_METRICS: &[&str] = &["bleu4", "bleu2", "rouge1", "rouge2", "rougeL", "meteor"];
const TOMG_METRICS: &[&str] = &["wsr", "success_rate", "quality", "validity"];

fn build_registry() -> Vec<TaskSpec> {
    use AnswerSchema as A;
    use Family as F;
    use FgSource as S;
    let mut t = Vec::new();

    let mut s2i = spec("name.smiles2iupac", F::Name, A::Text, &["exact_match"], "smiles2iupac", S::Input);
    s2i.params.text_match = Some(TextMatch::Iupac);
    t.push(s2i);
    t.push(spec("name.iupac2smiles", F::Name, A::Smiles, &["exact_match"], "iupac2smiles", S::Target));

    for (id, tpl) in [
        ("prop.bace", "bace"),
        ("prop.bbbp", "bbbp"),
        ("prop.clintox", "clintox"),
        ("prop.hiv", "hiv"),
        ("prop.tox21", "tox21"),
    ] {
        t.push(spec(id, F::Property, A::YesNo, &["accuracy"], tpl, S::Input));
    }

    t.push(spec("design.chebi20", F::Design, A::Smiles, DESIGN_METRICS, "molecule_design", S::Target));
    let mut cap = spec("caption.chebi20", F::Captioning, A::Text, CAPTION_METRICS, "molecule_captioning", S::Input);
    cap.params.text_match = Some(TextMatch::Caption);
    t.push(cap);

    for (id, tpl, kind, src) in [
        ("tomg.moledit.add", "moledit", TomgKind::EditAdd, S::SourceMolecule),
        ("tomg.moledit.del", "moledit", TomgKind::EditDel, S::SourceMolecule),
        ("tomg.moledit.sub", "moledit", TomgKind::EditSub, S::SourceMolecule),
        ("tomg.molopt.logp", "molopt", TomgKind::OptLogP, S::SourceMolecule),
        ("tomg.molopt.mr", "molopt", TomgKind::OptMr, S::SourceMolecule),
        ("tomg.molopt.qed", "molopt", TomgKind::OptQed, S::SourceMolecule),
        ("tomg.molcustom.atomnum", "molcustom", TomgKind::CustomAtomNum, S::None),
        ("tomg.molcustom.bondnum", "molcustom", TomgKind::CustomBondNum, S::None),
        ("tomg.molcustom.fg", "molcustom", TomgKind::CustomFunctionalGroup, S::None),
    ] {
        let mut s = spec(id, F::Tomg, A::Smiles, TOMG_METRICS, tpl, src);
        s.params.tomg = Some(kind);
        t.push(s);
    }

    let mut bh = spec("yield.buchwald_hartwig", F::Yield, A::YesNo, &["accuracy"], "yield_prediction", S::Input);
    bh.params.yield_threshold = Some(70.0);
    t.push(bh);
    t.push(spec("yield.suzuki", F::Yield, A::YesNo, &["accuracy"], "yield_prediction", S::Input));

    for (id, k) in [("reagent.reactant", 1), ("reagent.solvent", 1), ("reagent.ligand", 5)] {
        let schema = if k == 1 { A::Choice } else { A::RankedChoices };
        let mut s = spec(id, F::Reagent, schema, &["accuracy"], "reagent_selection", S::Input);
        s.params.top_k = Some(k);
        t.push(s);
    }

    t.push(spec("reaction.uspto_mixed", F::Reaction, A::SmilesSet, &["exact_match"], "reaction_prediction", S::Input));
    t.push(spec("retro.uspto_50k", F::Retrosynthesis, A::SmilesSet, &["exact_match"], "retrosynthesis", S::Input));
    t
}

/// The built-in registry of 25 subtasks.
pub fn registry() -> &'static Registry {
    static REG: OnceLock<Registry> = OnceLock::new();
    REG.get_or_init(|| Registry { tasks: build_registry() })
}
