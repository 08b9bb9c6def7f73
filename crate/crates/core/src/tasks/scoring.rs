//! Per-question scorers and the dispatcher that routes a record to them.

use std::collections::BTreeMap;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::properties::{AtomContributionOracle, PropertyOracle};
use super::tomg::{score_tomg, TomgScore, WsrForm};
use super::{AnswerSchema, TaskError, TaskSpec, TextMatch};
use crate::chemsim::{fingerprint, tanimoto, structural_keys, FingerprintKind, ReferenceSet};
use crate::datakit::DatasetRecord;
use crate::molgraph::{canonicalize_with, parse_smiles, CanonOptions, MolGraph};
use crate::textmetrics::{
    bleu, char_tokens, exact_match_text, levenshtein, meteor, rouge_l, rouge_n, tokenize, BleuConfig, Normalizer,
};

/// Whether stereo marks take part in SMILES equality.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StereoMode {
    #[default]
    Keep,
    Ignore,
}

impl StereoMode {
    fn options(self) -> CanonOptions {
        CanonOptions {
            stereo: self == StereoMode::Keep,
        }
    }
}

/// Shared scoring configuration: property oracles, the novelty reference
/// set and matching knobs.
#[derive(Clone)]
pub struct ScoringContext {
    pub oracles: BTreeMap<String, Arc<dyn PropertyOracle>>,
    pub reference: Option<Arc<ReferenceSet>>,
    pub stereo: StereoMode,
    pub wsr_form: WsrForm,
    /// MolCustom atom counts include hydrogens when set.
    pub include_hydrogens: bool,
    /// Fingerprint used for TOMG similarity and novelty.
    pub quality_fingerprint: FingerprintKind,
}

impl Default for ScoringContext {
    fn default() -> Self {
        let mut oracles: BTreeMap<String, Arc<dyn PropertyOracle>> = BTreeMap::new();
        oracles.insert("logp".into(), Arc::new(AtomContributionOracle::logp()));
        oracles.insert("mr".into(), Arc::new(AtomContributionOracle::mr()));
        ScoringContext {
            oracles,
            reference: None,
            stereo: StereoMode::Keep,
            wsr_form: WsrForm::default(),
            include_hydrogens: false,
            quality_fingerprint: FingerprintKind::default(),
        }
    }
}

impl std::fmt::Debug for ScoringContext {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("ScoringContext")
            .field("oracles", &self.oracles.keys().collect::<Vec<_>>())
            .field("reference", &self.reference.as_ref().map(|r| r.len()))
            .field("stereo", &self.stereo)
            .field("wsr_form", &self.wsr_form)
            .field("include_hydrogens", &self.include_hydrogens)
            .finish()
    }
}

impl ScoringContext {
    pub fn with_oracle(mut self, name: &str, oracle: Arc<dyn PropertyOracle>) -> Self {
        self.oracles.insert(name.to_string(), oracle);
        self
    }

    pub fn with_reference(mut self, reference: Arc<ReferenceSet>) -> Self {
        self.reference = Some(reference);
        self
    }
}

/// Score of one question. `primary` is the reward-compatible value in
/// [0, 1]; `correct` is equality with the gold answer under the task's
/// matching rule.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct QuestionScore {
    pub primary: f64,
    pub correct: bool,
    pub metrics: BTreeMap<String, f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub tomg: Option<TomgScore>,
}

impl QuestionScore {
    fn binary(metric: &str, hit: bool) -> QuestionScore {
        let v = if hit { 1.0 } else { 0.0 };
        QuestionScore {
            primary: v,
            correct: hit,
            metrics: BTreeMap::from([(metric.to_string(), v)]),
            tomg: None,
        }
    }
}

/// Parses a model answer; blank text counts as unparseable.
pub(crate) fn parse_pred(text: &str) -> Option<MolGraph> {
    let t = text.trim();
    if t.is_empty() {
        return None;
    }
    parse_smiles(t).ok()
}

fn parse_gold(text: &str) -> Result<MolGraph, TaskError> {
    let t = text.trim();
    if t.is_empty() {
        return Err(TaskError::GoldUnparseable {
            gold: text.to_string(),
            reason: "empty".into(),
        });
    }
    parse_smiles(t).map_err(|e| TaskError::GoldUnparseable {
        gold: text.to_string(),
        reason: e.to_string(),
    })
}

fn canon(mol: &MolGraph, stereo: StereoMode) -> String {
    canonicalize_with(mol, stereo.options()).text
}

/// 1 iff both strings parse to the same canonical molecule.
pub fn score_smiles_exact(pred: &str, gold: &str, stereo: StereoMode) -> Result<f64, TaskError> {
    let g = canon(&parse_gold(gold)?, stereo);
    Ok(match parse_pred(pred) {
        Some(p) if canon(&p, stereo) == g => 1.0,
        _ => 0.0,
    })
}

fn component_multiset(text: &str, stereo: StereoMode) -> Option<Vec<String>> {
    let mut parts = Vec::new();
    for c in text.trim().split('.') {
        parts.push(canon(&parse_pred(c)?, stereo));
    }
    parts.sort();
    Some(parts)
}

/// 1 iff the multisets of canonical '.'-separated components agree.
pub fn score_smiles_set(pred: &str, gold: &str, stereo: StereoMode) -> Result<f64, TaskError> {
    let g = match component_multiset(gold, stereo) {
        Some(g) => g,
        None => {
            // Report the first offending component.
            for c in gold.trim().split('.') {
                parse_gold(c)?;
            }
            unreachable!("every gold component parsed")
        }
    };
    Ok(match component_multiset(pred, stereo) {
        Some(p) if p == g => 1.0,
        _ => 0.0,
    })
}

fn yes_no(text: &str) -> Option<bool> {
    match text.trim().to_ascii_lowercase().as_str() {
        "yes" => Some(true),
        "no" => Some(false),
        _ => None,
    }
}

/// Case-insensitive Yes/No comparison after trimming; no lenient parsing.
pub fn score_yes_no(pred: &str, gold: &str) -> Result<f64, TaskError> {
    let g = yes_no(gold).ok_or_else(|| TaskError::InvalidYesNoGold(gold.to_string()))?;
    Ok(if yes_no(pred) == Some(g) { 1.0 } else { 0.0 })
}

/// Splits a ranked answer on newlines or semicolons, dropping blanks.
pub fn split_ranked(pred: &str) -> Vec<&str> {
    pred.split(['\n', ';']).map(str::trim).filter(|s| !s.is_empty()).collect()
}

/// Two choice entries are equal when both parse to the same canonical
/// SMILES, or otherwise when their normalized texts agree.
fn same_choice(a: &str, b: &str, stereo: StereoMode) -> bool {
    match (parse_pred(a), parse_pred(b)) {
        (Some(x), Some(y)) => canon(&x, stereo) == canon(&y, stereo),
        _ => Normalizer::Iupac.apply(a) == Normalizer::Iupac.apply(b),
    }
}

/// 1 iff the gold entry appears within the first `top_k` ranked entries.
pub fn score_choice(
    pred: &str,
    gold: &str,
    options: Option<&[String]>,
    top_k: usize,
    stereo: StereoMode,
) -> Result<f64, TaskError> {
    if let Some(opts) = options {
        if !opts.iter().any(|o| same_choice(o, gold, stereo)) {
            return Err(TaskError::GoldNotInOptions { gold: gold.to_string() });
        }
    }
    let k = top_k.max(1);
    let hit = split_ranked(pred).into_iter().take(k).any(|e| same_choice(e, gold, stereo));
    Ok(if hit { 1.0 } else { 0.0 })
}

/// Caption metrics: bleu2, bleu4, rouge1, rouge2, rougeL, meteor.
pub fn score_captioning(pred: &str, gold: &str) -> Result<BTreeMap<String, f64>, TaskError> {
    let c = tokenize(pred);
    let r = tokenize(gold);
    if r.is_empty() {
        return Err(TaskError::BadRecord {
            question_id: String::new(),
            message: "empty caption gold".into(),
        });
    }
    let refs = std::slice::from_ref(&r);
    let b2 = bleu(&c, refs, &BleuConfig::bleu2()).expect("fixed BLEU-2 config");
    let b4 = bleu(&c, refs, &BleuConfig::bleu4()).expect("fixed BLEU-4 config");
    Ok(BTreeMap::from([
        ("bleu2".to_string(), b2),
        ("bleu4".to_string(), b4),
        ("rouge1".to_string(), rouge_n(&c, &r, 1)),
        ("rouge2".to_string(), rouge_n(&c, &r, 2)),
        ("rougeL".to_string(), rouge_l(&c, &r)),
        ("meteor".to_string(), meteor(&c, &r)),
    ]))
}

/// Molecule-design metrics. Similarities of an invalid prediction are 0.
pub fn score_molecule_design(pred: &str, gold: &str, stereo: StereoMode) -> Result<BTreeMap<String, f64>, TaskError> {
    let g = parse_gold(gold)?;
    let (pred_t, gold_t) = (pred.trim(), gold.trim());
    let b = bleu(
        &char_tokens(pred_t),
        std::slice::from_ref(&char_tokens(gold_t)),
        &BleuConfig::bleu4(),
    )
    .expect("fixed BLEU-4 config");
    let mut m = BTreeMap::from([
        ("bleu".to_string(), b),
        ("levenshtein".to_string(), levenshtein(pred_t, gold_t) as f64),
    ]);
    let (em, key, path, morgan, valid) = match parse_pred(pred_t) {
        None => (0.0, 0.0, 0.0, 0.0, 0.0),
        Some(p) => {
            let em = f64::from(u8::from(canon(&p, stereo) == canon(&g, stereo)));
            let key = tanimoto(&structural_keys(&p), &structural_keys(&g))?;
            let path_kind = FingerprintKind::Path { max_len: 7, nbits: 2048 };
            let path = tanimoto(&fingerprint(&p, path_kind)?, &fingerprint(&g, path_kind)?)?;
            let mk = FingerprintKind::default();
            let morgan = tanimoto(&fingerprint(&p, mk)?, &fingerprint(&g, mk)?)?;
            (em, key, path, morgan, 1.0)
        }
    };
    m.insert("exact_match".into(), em);
    m.insert("key_sim".into(), key);
    m.insert("path_sim".into(), path);
    m.insert("morgan_sim".into(), morgan);
    m.insert("validity".into(), valid);
    Ok(m)
}

fn meta_options(record: &DatasetRecord) -> Result<Option<Vec<String>>, TaskError> {
    let Some(v) = record.meta.get("options") else {
        return Ok(None);
    };
    let bad = || TaskError::BadRecord {
        question_id: record.question_id.clone(),
        message: "meta.options must be an array of strings".into(),
    };
    let arr = v.as_array().ok_or_else(bad)?;
    arr.iter()
        .map(|x| x.as_str().map(str::to_string).ok_or_else(bad))
        .collect::<Result<Vec<_>, _>>()
        .map(Some)
}

/// The Yes/No gold of a record: the target itself, or a numeric target or
/// `meta.yield` binarized against the record's or the task's threshold
/// (strictly greater means Yes).
pub fn yes_no_gold(spec: &TaskSpec, record: &DatasetRecord) -> Result<String, TaskError> {
    if yes_no(&record.target).is_some() {
        return Ok(record.target.trim().to_string());
    }
    let value = record
        .target
        .trim()
        .trim_end_matches('%')
        .parse::<f64>()
        .ok()
        .or_else(|| record.meta.get("yield").and_then(|v| v.as_f64()));
    let threshold = record
        .meta
        .get("yield_threshold")
        .and_then(|v| v.as_f64())
        .or(spec.params.yield_threshold);
    match (value, threshold) {
        (Some(v), Some(t)) => Ok(if v > t { "Yes" } else { "No" }.to_string()),
        _ => Err(TaskError::InvalidYesNoGold(record.target.clone())),
    }
}

/// Scores one answer against its gold record. `answer` is `None` when
/// extraction failed; that scores 0 on every metric.
pub fn score_answer(
    spec: &TaskSpec,
    record: &DatasetRecord,
    answer: Option<&str>,
    ctx: &ScoringContext,
) -> Result<QuestionScore, TaskError> {
    let pred = answer.unwrap_or("");
    let gold = record.target.as_str();
    let with_id = |e: TaskError| match e {
        TaskError::BadRecord { message, .. } => TaskError::BadRecord {
            question_id: record.question_id.clone(),
            message,
        },
        other => other,
    };
    if let Some(kind) = spec.params.tomg {
        return score_tomg_question(kind, record, pred, ctx).map_err(with_id);
    }
    let score = match spec.answer_schema {
        AnswerSchema::Smiles if spec.metric_bundle.len() > 1 => {
            let metrics = score_molecule_design(pred, gold, ctx.stereo)?;
            let em = metrics["exact_match"];
            QuestionScore {
                primary: em,
                correct: em == 1.0,
                metrics,
                tomg: None,
            }
        }
        AnswerSchema::Smiles => QuestionScore::binary("exact_match", score_smiles_exact(pred, gold, ctx.stereo)? == 1.0),
        AnswerSchema::SmilesSet => QuestionScore::binary("exact_match", score_smiles_set(pred, gold, ctx.stereo)? == 1.0),
        AnswerSchema::YesNo => {
            let g = yes_no_gold(spec, record)?;
            QuestionScore::binary("accuracy", score_yes_no(pred, &g)? == 1.0)
        }
        AnswerSchema::Choice | AnswerSchema::RankedChoices => {
            let options = meta_options(record)?;
            let k = spec.params.top_k.unwrap_or(1);
            QuestionScore::binary("accuracy", score_choice(pred, gold, options.as_deref(), k, ctx.stereo)? == 1.0)
        }
        AnswerSchema::Text => match spec.params.text_match {
            Some(TextMatch::Caption) => {
                let metrics = score_captioning(pred, gold).map_err(with_id)?;
                QuestionScore {
                    primary: metrics["bleu4"],
                    correct: tokenize(pred).tokens == tokenize(gold).tokens,
                    metrics,
                    tomg: None,
                }
            }
            Some(TextMatch::Iupac) | None => {
                QuestionScore::binary("exact_match", exact_match_text(pred, gold, Normalizer::Iupac) == 1)
            }
        },
    };
    Ok(score)
}

fn score_tomg_question(
    kind: super::TomgKind,
    record: &DatasetRecord,
    pred: &str,
    ctx: &ScoringContext,
) -> Result<QuestionScore, TaskError> {
    let t = score_tomg(kind, record, pred, ctx)?;
    let correct = match (parse_pred(pred), parse_pred(&record.target)) {
        (Some(p), Some(g)) => canon(&p, ctx.stereo) == canon(&g, ctx.stereo),
        _ => false,
    };
    let success = f64::from(u8::from(t.success));
    let metrics = BTreeMap::from([
        ("wsr".to_string(), success * t.quality),
        ("success_rate".to_string(), success),
        ("quality".to_string(), t.quality),
        ("validity".to_string(), f64::from(u8::from(t.validity))),
    ]);
    Ok(QuestionScore {
        primary: success * t.quality,
        correct,
        metrics,
        tomg: Some(t),
    })
}
