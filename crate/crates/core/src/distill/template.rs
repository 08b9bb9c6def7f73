//! Prompt templates and protocol instantiation.
//!
//! Slots are written `{name}` with `name` made of ASCII letters, digits and
//! underscores; any other brace is literal text.

use std::collections::BTreeMap;
use std::path::Path;

use super::protocol::format_protocol;
use super::{CorrectInfo, DistillError, InstantiatedPrompt, ReasoningProtocol};
use crate::datakit::DatasetRecord;
use crate::molgraph::{detect_functional_groups, parse_smiles, FunctionalGroupHit, MolGraph};
use crate::tasks::{Family, FgSource, TaskSpec};

pub const TEMPLATE_VERSION: &str = "v1";
pub const PROMPT_VERSION: &str = "v1";

macro_rules! bundled {
    ($($name:literal),* $(,)?) => {
        &[$(($name, include_str!(concat!("../../assets/templates/v1/", $name, ".txt")))),*]
    };
}

const BUNDLED_TEMPLATES: &[(&str, &str)] = bundled!(
    "smiles2iupac",
    "iupac2smiles",
    "bace",
    "bbbp",
    "clintox",
    "hiv",
    "tox21",
    "molecule_design",
    "molecule_captioning",
    "moledit",
    "molopt",
    "molcustom",
    "yield_prediction",
    "reagent_selection",
    "reaction_prediction",
    "retrosynthesis",
);

/// Task prompt templates by file stem.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct TemplateSet {
    templates: BTreeMap<String, String>,
}

impl TemplateSet {
    pub fn bundled() -> TemplateSet {
        TemplateSet {
            templates: BUNDLED_TEMPLATES
                .iter()
                .map(|(n, t)| (n.to_string(), t.to_string()))
                .collect(),
        }
    }

    /// Every `*.txt` file of `dir`, keyed by stem.
    pub fn load_dir(dir: &Path) -> Result<TemplateSet, DistillError> {
        let mut templates = BTreeMap::new();
        for entry in std::fs::read_dir(dir).map_err(|e| DistillError::io(dir, e))? {
            let path = entry.map_err(|e| DistillError::io(dir, e))?.path();
            if path.extension().and_then(|e| e.to_str()) != Some("txt") {
                continue;
            }
            let stem = path.file_stem().and_then(|s| s.to_str()).unwrap_or_default().to_string();
            let text = std::fs::read_to_string(&path).map_err(|e| DistillError::io(&path, e))?;
            templates.insert(stem, text);
        }
        Ok(TemplateSet { templates })
    }

    pub fn get(&self, name: &str) -> Result<&str, DistillError> {
        self.templates
            .get(name)
            .map(String::as_str)
            .ok_or_else(|| DistillError::TemplateNotFound(name.to_string()))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.templates.keys().map(String::as_str)
    }
}

/// The distillation prompts (trace solving, protocol steps, protocol
/// cautions, answer regeneration).
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PromptAssets {
    pub solve: String,
    pub protocol_steps: String,
    pub protocol_cautions: String,
    pub regenerate: String,
}

impl Default for PromptAssets {
    fn default() -> Self {
        PromptAssets {
            solve: include_str!("../../assets/prompts/v1/solve.txt").to_string(),
            protocol_steps: include_str!("../../assets/prompts/v1/protocol_steps.txt").to_string(),
            protocol_cautions: include_str!("../../assets/prompts/v1/protocol_cautions.txt").to_string(),
            regenerate: include_str!("../../assets/prompts/v1/regenerate.txt").to_string(),
        }
    }
}

fn is_slot_char(c: char) -> bool {
    c.is_ascii_alphanumeric() || c == '_'
}

/// Slot names in order of first appearance.
pub fn template_slots(text: &str) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        let after = &rest[open + 1..];
        let len = after.find(|c: char| !is_slot_char(c)).unwrap_or(after.len());
        if len > 0 && after[len..].starts_with('}') {
            let name = &after[..len];
            if !out.iter().any(|s| s == name) {
                out.push(name.to_string());
            }
            rest = &after[len + 1..];
        } else {
            rest = after;
        }
    }
    out
}

/// Fills every `{slot}`; an unfilled slot is an error.
pub fn render_template(name: &str, text: &str, slots: &BTreeMap<String, String>) -> Result<String, DistillError> {
    let mut out = String::with_capacity(text.len());
    let mut rest = text;
    while let Some(open) = rest.find('{') {
        out.push_str(&rest[..open]);
        let after = &rest[open + 1..];
        let len = after.find(|c: char| !is_slot_char(c)).unwrap_or(after.len());
        if len > 0 && after[len..].starts_with('}') {
            let slot = &after[..len];
            let value = slots.get(slot).ok_or_else(|| DistillError::TemplateSlotMissing {
                template: name.to_string(),
                slot: slot.to_string(),
            })?;
            out.push_str(value);
            rest = &after[len + 1..];
        } else {
            out.push('{');
            rest = after;
        }
    }
    out.push_str(rest);
    Ok(out)
}

/// `name (pattern) xN` entries joined by "; ", or "none".
pub fn functional_groups_str(hits: &[FunctionalGroupHit]) -> String {
    let mut counts: Vec<(&str, &str, usize)> = Vec::new();
    for h in hits {
        match counts.iter_mut().find(|(n, _, _)| *n == h.group_name) {
            Some(e) => e.2 += 1,
            None => counts.push((&h.group_name, &h.pattern_smiles, 1)),
        }
    }
    if counts.is_empty() {
        return "none".to_string();
    }
    counts
        .iter()
        .map(|(n, p, c)| format!("{n} ({p}) x{c}"))
        .collect::<Vec<_>>()
        .join("; ")
}

/// Molecules in a text: the whole string, else every '>'- or
/// whitespace-separated piece that parses.
fn molecules_in(text: &str) -> Vec<MolGraph> {
    if let Ok(m) = parse_smiles(text.trim()) {
        if !text.trim().is_empty() {
            return vec![m];
        }
    }
    text.split(|c: char| c == '>' || c.is_whitespace())
        .filter(|p| !p.is_empty())
        .filter_map(|p| parse_smiles(p).ok())
        .collect()
}

/// Whether the functional-group source of a task must be a molecule.
fn molecule_required(spec: &TaskSpec) -> bool {
    match spec.params.fg_source {
        FgSource::Target | FgSource::SourceMolecule => true,
        FgSource::Input => !matches!(spec.family, Family::Yield | Family::Reagent),
        FgSource::None => false,
    }
}

fn meta_value_str(v: &serde_json::Value) -> String {
    match v {
        serde_json::Value::String(s) => s.clone(),
        other => other.to_string(),
    }
}

/// Renders the task template for one question with the protocol inserted
/// and the correct information filled in. The protocol goes into a
/// `{protocol}` slot when the template has one, otherwise as a section
/// before the `Input:` line.
pub fn instantiate_protocol(
    protocol: &ReasoningProtocol,
    spec: &TaskSpec,
    record: &DatasetRecord,
    templates: &TemplateSet,
) -> Result<InstantiatedPrompt, DistillError> {
    let source_text = match spec.params.fg_source {
        FgSource::Input => Some(record.input.clone()),
        FgSource::Target => Some(record.target.clone()),
        FgSource::SourceMolecule => Some(record.meta_str("source").unwrap_or_default().to_string()),
        FgSource::None => None,
    };
    let mut omitted = false;
    let mut hits = Vec::new();
    if let Some(text) = source_text {
        let mols = molecules_in(&text);
        if mols.is_empty() {
            if molecule_required(spec) {
                return Err(DistillError::UnparseableMolecule {
                    task_id: spec.task_id.to_string(),
                    question_id: record.question_id.clone(),
                    text,
                });
            }
            log::warn!(
                "{}/{}: no molecule found, functional groups omitted",
                spec.task_id,
                record.question_id
            );
            omitted = true;
        }
        for m in &mols {
            hits.extend(detect_functional_groups(m));
        }
    }
    let fg_str = functional_groups_str(&hits);

    let mut slots: BTreeMap<String, String> = record
        .meta
        .iter()
        .map(|(k, v)| (k.clone(), meta_value_str(v)))
        .collect();
    for key in ["instruction", "problem", "reactants", "products"] {
        slots.insert(key.to_string(), record.input.clone());
    }
    slots.insert("functional_groups_str".into(), fg_str.clone());
    slots.insert("target".into(), record.target.clone());
    let block = format!("Reasoning protocol:\n{}", format_protocol(&protocol.steps, true));
    slots.insert("protocol".into(), block.clone());

    let name = spec.params.template;
    let raw = templates.get(name)?;
    let rendered = render_with_protocol(name, raw, &block, &slots)?;

    Ok(InstantiatedPrompt {
        task_id: spec.task_id.to_string(),
        question_id: record.question_id.clone(),
        protocol_version: protocol.version,
        step_titles: protocol.steps.iter().map(|s| s.title.clone()).collect(),
        question: record.input.clone(),
        correct_info: CorrectInfo {
            functional_groups: hits,
            functional_groups_str: fg_str,
            answer: record.target.clone(),
        },
        rendered_text: rendered,
        functional_groups_omitted: omitted,
    })
}

/// Renders the template with a placeholder for the protocol and splices
/// the block in afterwards, so braces in the protocol stay literal.
fn render_with_protocol(
    name: &str,
    raw: &str,
    block: &str,
    slots: &BTreeMap<String, String>,
) -> Result<String, DistillError> {
    const MARKER: &str = "\u{1}protocol\u{1}";
    let template = if template_slots(raw).iter().any(|s| s == "protocol") {
        raw.to_string()
    } else {
        let pos = raw
            .match_indices("Input:")
            .map(|(i, _)| i)
            .find(|&i| i == 0 || raw[..i].ends_with('\n'))
            .ok_or_else(|| DistillError::TemplateSlotMissing {
                template: name.to_string(),
                slot: "protocol".to_string(),
            })?;
        format!("{}{{protocol}}\n----\n{}", &raw[..pos], &raw[pos..])
    };
    let mut s = slots.clone();
    s.insert("protocol".into(), MARKER.to_string());
    Ok(render_template(name, &template, &s)?.replace(MARKER, block))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distill::{Provenance, ProtocolStep};
    use crate::tasks::registry;

    fn protocol(task: &str) -> ReasoningProtocol {
        ReasoningProtocol {
            task_id: task.into(),
            version: 1,
            steps: vec![
                ProtocolStep {
                    title: "Product Analysis".into(),
                    instruction: "Inspect the product.".into(),
                    cautions: vec!["Check ring closures.".into()],
                },
                ProtocolStep {
                    title: "Reactant Prediction".into(),
                    instruction: "Disconnect.".into(),
                    cautions: vec![],
                },
            ],
            provenance: Provenance::default(),
        }
    }

    fn record(task: &str, input: &str, target: &str) -> DatasetRecord {
        DatasetRecord {
            task_id: task.into(),
            question_id: "q1".into(),
            input: input.into(),
            target: target.into(),
            meta: Default::default(),
        }
    }

    #[test]
    fn slots_and_rendering() {
        assert_eq!(template_slots("a {x} {y} {x} {not a slot} {}"), ["x", "y"]);
        let slots = BTreeMap::from([("x".to_string(), "1".to_string())]);
        assert_eq!(render_template("t", "{x}+{x} {a b}", &slots).unwrap(), "1+1 {a b}");
        assert!(matches!(
            render_template("t", "{y}", &slots),
            Err(DistillError::TemplateSlotMissing { slot, .. }) if slot == "y"
        ));
    }

    #[test]
    fn every_bundled_template_has_an_input_line() {
        let t = TemplateSet::bundled();
        assert_eq!(t.names().count(), 16);
        for spec in registry().tasks() {
            let text = t.get(spec.params.template).unwrap();
            assert!(text.lines().any(|l| l == "Input:"), "{}", spec.params.template);
            assert!(template_slots(text).contains(&"target".to_string()));
        }
    }

    #[test]
    fn retrosynthesis_instantiation() {
        let spec = registry().get("retro.uspto_50k").unwrap();
        let r = record("retro.uspto_50k", "CC(=O)Nc1ccccc1", "CC(=O)Cl.Nc1ccccc1");
        let p = instantiate_protocol(&protocol(spec.task_id), spec, &r, &TemplateSet::bundled()).unwrap();
        assert!(p.rendered_text.contains("Ground-truth Reactants: CC(=O)Cl.Nc1ccccc1"));
        assert!(p.rendered_text.contains("Product SMILES: CC(=O)Nc1ccccc1"));
        assert!(p.rendered_text.contains("Product Analysis") && p.rendered_text.contains("Reactant Prediction"));
        assert!(p.rendered_text.contains(&p.correct_info.functional_groups_str));
        assert!(p.correct_info.functional_groups_str.contains("amide"));
        let again = instantiate_protocol(&protocol(spec.task_id), spec, &r, &TemplateSet::bundled()).unwrap();
        assert_eq!(p, again);
    }

    #[test]
    fn meta_slots_and_missing() {
        let spec = registry().get("prop.hiv").unwrap();
        let mut r = record("prop.hiv", "CCO", "No");
        let t = TemplateSet::bundled();
        assert!(matches!(
            instantiate_protocol(&protocol(spec.task_id), spec, &r, &t),
            Err(DistillError::TemplateSlotMissing { slot, .. }) if slot == "activity"
        ));
        r.meta.insert("activity".into(), "HIV replication inhibition".into());
        assert!(instantiate_protocol(&protocol(spec.task_id), spec, &r, &t).is_ok());
    }

    #[test]
    fn unparseable_molecule_rules() {
        let t = TemplateSet::bundled();
        let spec = registry().get("prop.bace").unwrap();
        let r = record("prop.bace", "not a molecule", "Yes");
        assert!(matches!(
            instantiate_protocol(&protocol(spec.task_id), spec, &r, &t),
            Err(DistillError::UnparseableMolecule { .. })
        ));
        let spec = registry().get("reagent.solvent").unwrap();
        let r = record("reagent.solvent", "what solvent?", "CCO");
        let p = instantiate_protocol(&protocol(spec.task_id), spec, &r, &t).unwrap();
        assert!(p.functional_groups_omitted);
    }

    #[test]
    fn braces_in_protocol_text_are_literal() {
        let spec = registry().get("retro.uspto_50k").unwrap();
        let mut p = protocol(spec.task_id);
        p.steps[0].instruction = "Use {hint} sets.".into();
        let r = record("retro.uspto_50k", "CCO", "CC=O");
        let out = instantiate_protocol(&p, spec, &r, &TemplateSet::bundled()).unwrap();
        assert!(out.rendered_text.contains("Use {hint} sets."));
    }
}
