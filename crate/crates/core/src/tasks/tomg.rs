//! Open molecule generation: per-question verifiers and the weighted
//! success rate.
//!
//! Constraint payloads live in the record's `meta`:
//!
//! | subtask | keys |
//! |---|---|
//! | moledit add/del | `source`, `group` |
//! | moledit sub | `source`, `from_group`, `to_group` |
//! | molopt | `source`, `direction` (`increase`/`decrease`) |
//! | molcustom atomnum | `atom_counts` (element to count) and/or `total_atoms` |
//! | molcustom bondnum | `bond_counts` (`single`/`double`/`triple`/`aromatic` to count) |
//! | molcustom fg | `group_counts` (group name to count) |
//!
//! Group names accept the functional-group table names plus the aliases
//! in [`GROUP_ALIASES`].

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use super::scoring::{parse_pred, ScoringContext};
use super::{registry, Family, TaskError, TomgKind};
use crate::chemsim::{fingerprint, novelty, tanimoto};
use crate::datakit::DatasetRecord;
use crate::molgraph::{detect_functional_groups, functional_group_table, BondOrder, MolGraph};

/// Benchmark group names that stand for several table groups.
pub const GROUP_ALIASES: &[(&str, &[&str])] = &[
    ("hydroxyl", &["alcohol", "phenol", "carboxylic_acid"]),
    ("amine", &["primary_amine", "secondary_amine", "tertiary_amine"]),
    ("halo", &["fluoride", "chloride", "bromide", "iodide"]),
    ("halogen", &["fluoride", "chloride", "bromide", "iodide"]),
    ("carboxyl", &["carboxylic_acid"]),
    ("benzene_ring", &["aromatic_ring"]),
];

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TomgScore {
    pub success: bool,
    /// Similarity to the source (edit, opt) or novelty (custom); 0 for an
    /// invalid prediction.
    pub quality: f64,
    pub validity: bool,
}

impl TomgScore {
    fn invalid() -> TomgScore {
        TomgScore {
            success: false,
            quality: 0.0,
            validity: false,
        }
    }
}

/// How a subtask's success and quality combine.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WsrForm {
    /// `SR_t * mean quality`, the quality mean taken over valid predictions.
    #[default]
    ProductOfMeans,
    /// `mean(success * quality)` over all predictions.
    MeanOfProducts,
}

fn normalize_group_name(name: &str) -> String {
    name.trim().to_ascii_lowercase().replace([' ', '-'], "_")
}

/// Number of functional-group hits for a table group or alias.
pub fn tomg_group_count(mol: &MolGraph, name: &str) -> Result<usize, TaskError> {
    let key = normalize_group_name(name);
    let members: Vec<&str> = match GROUP_ALIASES.iter().find(|(a, _)| *a == key) {
        Some((_, m)) => m.to_vec(),
        None if functional_group_table().iter().any(|g| g.name == key) => vec![key.as_str()],
        None => {
            return Err(TaskError::BadRecord {
                question_id: String::new(),
                message: format!("unknown functional group {name:?}"),
            })
        }
    };
    Ok(detect_functional_groups(mol)
        .iter()
        .filter(|h| members.contains(&h.group_name.as_str()))
        .count())
}

fn bad(message: impl Into<String>) -> TaskError {
    TaskError::BadRecord {
        question_id: String::new(),
        message: message.into(),
    }
}

fn meta_string<'a>(record: &'a DatasetRecord, key: &str) -> Result<&'a str, TaskError> {
    record
        .meta_str(key)
        .ok_or_else(|| bad(format!("meta.{key} missing or not a string")))
}

fn meta_counts(record: &DatasetRecord, key: &str) -> Result<Option<BTreeMap<String, usize>>, TaskError> {
    let Some(v) = record.meta.get(key) else {
        return Ok(None);
    };
    let obj = v.as_object().ok_or_else(|| bad(format!("meta.{key} must be an object")))?;
    obj.iter()
        .map(|(k, v)| {
            v.as_u64()
                .map(|n| (k.clone(), n as usize))
                .ok_or_else(|| bad(format!("meta.{key}.{k} must be a non-negative integer")))
        })
        .collect::<Result<_, _>>()
        .map(Some)
}

fn source_molecule(record: &DatasetRecord) -> Result<MolGraph, TaskError> {
    let s = meta_string(record, "source")?;
    parse_pred(s).ok_or_else(|| bad(format!("meta.source {s:?} does not parse")))
}

fn element_count(mol: &MolGraph, symbol: &str, include_hydrogens: bool) -> usize {
    if symbol == "H" {
        if !include_hydrogens {
            return 0;
        }
        let explicit = mol.atoms().iter().filter(|a| a.element.is_hydrogen()).count();
        let implicit: usize = mol.atoms().iter().map(|a| a.total_h() as usize).sum();
        return explicit + implicit;
    }
    mol.atoms().iter().filter(|a| a.element.symbol() == symbol).count()
}

fn total_atoms(mol: &MolGraph, include_hydrogens: bool) -> usize {
    mol.heavy_atom_count() + element_count(mol, "H", include_hydrogens)
}

/// Bond counts by order among heavy atoms.
fn bond_counts(mol: &MolGraph) -> BTreeMap<&'static str, usize> {
    let mut out = BTreeMap::from([("single", 0), ("double", 0), ("triple", 0), ("aromatic", 0)]);
    for b in mol.bonds() {
        if mol.atom(b.a).element.is_hydrogen() || mol.atom(b.b).element.is_hydrogen() {
            continue;
        }
        let key = match b.order {
            BondOrder::Single => "single",
            BondOrder::Double => "double",
            BondOrder::Triple => "triple",
            BondOrder::Aromatic => "aromatic",
        };
        *out.get_mut(key).unwrap() += 1;
    }
    out
}

fn custom_success(kind: TomgKind, record: &DatasetRecord, pred: &MolGraph, ctx: &ScoringContext) -> Result<bool, TaskError> {
    match kind {
        TomgKind::CustomAtomNum => {
            let counts = meta_counts(record, "atom_counts")?;
            let total = record.meta.get("total_atoms").map(Value::as_u64);
            if counts.is_none() && total.is_none() {
                return Err(bad("atomnum needs meta.atom_counts or meta.total_atoms"));
            }
            let mut ok = true;
            if let Some(t) = total {
                let t = t.ok_or_else(|| bad("meta.total_atoms must be a non-negative integer"))?;
                ok &= total_atoms(pred, ctx.include_hydrogens) == t as usize;
            }
            for (el, n) in counts.unwrap_or_default() {
                ok &= element_count(pred, &el, ctx.include_hydrogens) == n;
            }
            Ok(ok)
        }
        TomgKind::CustomBondNum => {
            let want = meta_counts(record, "bond_counts")?.ok_or_else(|| bad("bondnum needs meta.bond_counts"))?;
            let have = bond_counts(pred);
            want.iter().try_fold(true, |ok, (k, n)| {
                let h = have
                    .get(k.to_ascii_lowercase().as_str())
                    .ok_or_else(|| bad(format!("unknown bond type {k:?}")))?;
                Ok(ok && h == n)
            })
        }
        TomgKind::CustomFunctionalGroup => {
            let want = meta_counts(record, "group_counts")?.ok_or_else(|| bad("fg needs meta.group_counts"))?;
            want.iter()
                .try_fold(true, |ok, (g, n)| Ok(ok && tomg_group_count(pred, g)? == *n))
        }
        _ => unreachable!("custom kinds only"),
    }
}

fn direction(record: &DatasetRecord) -> Result<bool, TaskError> {
    match meta_string(record, "direction")?.trim().to_ascii_lowercase().as_str() {
        "increase" | "higher" | "raise" | "up" => Ok(true),
        "decrease" | "lower" | "reduce" | "down" => Ok(false),
        other => Err(bad(format!("unknown direction {other:?}"))),
    }
}

/// Verifies one TOMG answer against its record's constraint payload.
pub fn score_tomg(kind: TomgKind, record: &DatasetRecord, pred: &str, ctx: &ScoringContext) -> Result<TomgScore, TaskError> {
    if kind.uses_novelty() {
        let reference = ctx.reference.as_ref().ok_or(TaskError::MissingReferenceSet)?;
        let Some(p) = parse_pred(pred) else {
            // Validate the payload even when the answer is unusable.
            custom_success(kind, record, &crate::molgraph::parse_smiles("C").unwrap(), ctx)?;
            return Ok(TomgScore::invalid());
        };
        let success = custom_success(kind, record, &p, ctx)?;
        let quality = novelty(&p, reference, ctx.quality_fingerprint)?;
        return Ok(TomgScore {
            success,
            quality,
            validity: true,
        });
    }

    let source = source_molecule(record)?;
    let counts = |m: &MolGraph, key: &str| -> Result<usize, TaskError> { tomg_group_count(m, meta_string(record, key)?) };
    let opt_dir = if kind.property().is_some() { Some(direction(record)?) } else { None };
    let oracle = match kind.property() {
        Some(p) => Some(ctx.oracles.get(p).ok_or_else(|| TaskError::MissingOracle(p.to_string()))?),
        None => None,
    };
    let Some(p) = parse_pred(pred) else {
        match kind {
            TomgKind::EditAdd | TomgKind::EditDel => {
                counts(&source, "group")?;
            }
            TomgKind::EditSub => {
                counts(&source, "from_group")?;
                counts(&source, "to_group")?;
            }
            _ => {}
        }
        return Ok(TomgScore::invalid());
    };
    let success = match kind {
        TomgKind::EditAdd => counts(&p, "group")? == counts(&source, "group")? + 1,
        TomgKind::EditDel => counts(&p, "group")? + 1 == counts(&source, "group")?,
        TomgKind::EditSub => {
            counts(&p, "from_group")? + 1 == counts(&source, "from_group")?
                && counts(&p, "to_group")? == counts(&source, "to_group")? + 1
        }
        TomgKind::OptLogP | TomgKind::OptMr | TomgKind::OptQed => {
            let o = oracle.expect("property kinds carry an oracle");
            let (before, after) = (o.evaluate(&source)?, o.evaluate(&p)?);
            if opt_dir == Some(true) {
                after > before
            } else {
                after < before
            }
        }
        _ => unreachable!("custom kinds handled above"),
    };
    let fp = ctx.quality_fingerprint;
    let quality = tanimoto(&fingerprint(&source, fp)?, &fingerprint(&p, fp)?)?;
    Ok(TomgScore {
        success,
        quality,
        validity: true,
    })
}

/// Success rate, mean quality (weighted per the form) and WSR of one
/// subtask. An empty list yields zeros.
pub fn subtask_wsr(scores: &[TomgScore], form: WsrForm) -> (f64, f64, f64) {
    if scores.is_empty() {
        return (0.0, 0.0, 0.0);
    }
    let n = scores.len() as f64;
    let sr = scores.iter().filter(|s| s.success).count() as f64 / n;
    match form {
        WsrForm::ProductOfMeans => {
            let valid: Vec<f64> = scores.iter().filter(|s| s.validity).map(|s| s.quality).collect();
            let q = if valid.is_empty() {
                0.0
            } else {
                valid.iter().sum::<f64>() / valid.len() as f64
            };
            (sr, q, sr * q)
        }
        WsrForm::MeanOfProducts => {
            let q = scores.iter().map(|s| s.quality).sum::<f64>() / n;
            let w = scores
                .iter()
                .map(|s| if s.success { s.quality } else { 0.0 })
                .sum::<f64>()
                / n;
            (sr, q, w)
        }
    }
}

/// Per-subtask WSR and their mean over all nine TOMG subtasks, keyed by
/// task id. Every TOMG subtask must be present.
pub fn aggregate_wsr(
    per_subtask: &BTreeMap<String, Vec<TomgScore>>,
    form: WsrForm,
) -> Result<(BTreeMap<String, f64>, f64), TaskError> {
    let ids: Vec<&str> = registry().family(Family::Tomg).map(|t| t.task_id).collect();
    if let Some(extra) = per_subtask.keys().find(|k| !ids.contains(&k.as_str())) {
        return Err(TaskError::UnknownSubtask(extra.clone()));
    }
    let missing: Vec<String> = ids
        .iter()
        .filter(|id| !per_subtask.contains_key(**id))
        .map(|s| s.to_string())
        .collect();
    if !missing.is_empty() {
        return Err(TaskError::MissingSubtask(missing));
    }
    let per: BTreeMap<String, f64> = per_subtask
        .iter()
        .map(|(k, v)| (k.clone(), subtask_wsr(v, form).2))
        .collect();
    let total = per.values().sum::<f64>() / ids.len() as f64;
    Ok((per, total))
}
