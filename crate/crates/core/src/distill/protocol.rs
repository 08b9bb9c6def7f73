//! Protocol generation from labeled traces, the protocol text format, and
//! caution merging across aligned steps.
//!
//! Protocol text, as emitted by the teacher and as shown back to it:
//!
//! ````text
//! ```protocol
//! 1. Title: instruction
//!    - caution
//! 2. Title: instruction
//! ```
//! ````

use std::collections::BTreeMap;
use std::hash::Hasher;
use std::path::Path;

use fnv::FnvHasher;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::pipeline::{call_teacher, AuditLog, AuditStage, DistillConfig};
use super::template::{render_template, PromptAssets};
use super::{DistillError, ProtocolStep, Provenance, ReasoningProtocol, TraceSample};
use crate::llmclient::LlmClient;

const ALIGNMENT_TSV: &str = include_str!("../../assets/alignment.v1.tsv");

/// Parses the first fenced ```` ```protocol ```` block. Steps must be
/// numbered 1, 2, ... and there must be at least two; `-` or `*` lines are
/// cautions of the preceding step.
pub fn parse_protocol_block(text: &str) -> Result<Vec<ProtocolStep>, String> {
    let open = text.find("```protocol").ok_or("no ```protocol block")?;
    let body_start = open + "```protocol".len();
    let close = text[body_start..].find("```").ok_or("unterminated ```protocol block")?;
    let body = &text[body_start..body_start + close];
    let mut steps: Vec<ProtocolStep> = Vec::new();
    for raw in body.lines() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        if let Some(c) = line.strip_prefix('-').or_else(|| line.strip_prefix('*')) {
            let c = c.trim();
            let step = steps.last_mut().ok_or("caution before the first step")?;
            if c.is_empty() {
                return Err("empty caution".into());
            }
            step.cautions.push(c.to_string());
            continue;
        }
        let digits = line.find(|ch: char| !ch.is_ascii_digit()).unwrap_or(line.len());
        let rest = &line[digits..];
        let rest = rest
            .strip_prefix('.')
            .or_else(|| rest.strip_prefix(')'))
            .filter(|_| digits > 0)
            .ok_or_else(|| format!("unexpected line {line:?}"))?;
        let n: usize = line[..digits].parse().map_err(|_| format!("bad step number in {line:?}"))?;
        if n != steps.len() + 1 {
            return Err(format!("step {n} out of sequence"));
        }
        let (title, instruction) = rest.split_once(':').ok_or_else(|| format!("step {n} lacks 'Title:'"))?;
        let (title, instruction) = (title.trim(), instruction.trim());
        if title.is_empty() || instruction.is_empty() {
            return Err(format!("step {n} has an empty title or instruction"));
        }
        steps.push(ProtocolStep {
            title: title.to_string(),
            instruction: instruction.to_string(),
            cautions: Vec::new(),
        });
    }
    if steps.len() < 2 {
        return Err(format!("{} step(s); at least 2 required", steps.len()));
    }
    Ok(steps)
}

/// Numbered step lines, optionally with caution bullets.
pub fn format_protocol(steps: &[ProtocolStep], with_cautions: bool) -> String {
    let mut out = String::new();
    for (i, s) in steps.iter().enumerate() {
        out.push_str(&format!("{}. {}: {}\n", i + 1, s.title, s.instruction));
        if with_cautions {
            for c in &s.cautions {
                out.push_str(&format!("   - {c}\n"));
            }
        }
    }
    out
}

fn task_seed(seed: u64, task_id: &str) -> u64 {
    let mut h = FnvHasher::default();
    h.write(task_id.as_bytes());
    seed ^ h.finish()
}

/// Up to `k` positives and `k` negatives, drawn by a seeded shuffle of the
/// traces sorted by (question_id, slot).
pub fn select_examples(
    task_id: &str,
    traces: &[TraceSample],
    k: usize,
    seed: u64,
) -> (Vec<TraceSample>, Vec<TraceSample>) {
    let mut sorted: Vec<&TraceSample> = traces.iter().filter(|t| t.task_id == task_id).collect();
    sorted.sort_by(|a, b| (&a.question_id, a.slot).cmp(&(&b.question_id, b.slot)));
    let mut rng = ChaCha8Rng::seed_from_u64(task_seed(seed, task_id));
    let mut pos: Vec<TraceSample> = sorted.iter().filter(|t| t.is_positive).map(|t| (*t).clone()).collect();
    let mut neg: Vec<TraceSample> = sorted.iter().filter(|t| !t.is_positive).map(|t| (*t).clone()).collect();
    pos.shuffle(&mut rng);
    neg.shuffle(&mut rng);
    pos.truncate(k);
    neg.truncate(k);
    (pos, neg)
}

fn format_examples(samples: &[TraceSample], with_gold: bool) -> String {
    let mut out = String::new();
    for (i, t) in samples.iter().enumerate() {
        out.push_str(&format!("### Example {}\nQuestion:\n{}\n\nSolution:\n{}\n", i + 1, t.question, t.response.trim()));
        if with_gold {
            out.push_str(&format!("\nCorrect answer: {}\n", t.gold));
        }
        out.push('\n');
    }
    out.trim_end().to_string()
}

fn sample_id(t: &TraceSample) -> String {
    format!("{}#{}", t.question_id, t.slot)
}

/// Prompts the teacher with `k` positives for the step template and with up
/// to `k` negatives for per-step cautions. Unparseable output is retried
/// with a fresh sample slot up to `cfg.protocol_retries` times.
pub fn generate_protocol(
    task_id: &str,
    traces: &[TraceSample],
    cfg: &DistillConfig,
    prompts: &PromptAssets,
    client: &LlmClient,
    audit: &AuditLog,
) -> Result<ReasoningProtocol, DistillError> {
    let k = cfg.k.max(1);
    let (pos, neg) = select_examples(task_id, traces, k, cfg.seed);
    if pos.len() < k {
        return Err(DistillError::InsufficientPositives {
            task_id: task_id.to_string(),
            needed: k,
            found: pos.len(),
        });
    }
    let attempts = cfg.protocol_retries + 1;
    let slots = BTreeMap::from([
        ("task_id".to_string(), task_id.to_string()),
        ("k".to_string(), k.to_string()),
        ("examples".to_string(), format_examples(&pos, false)),
    ]);
    let prompt = render_template("protocol_steps", &prompts.protocol_steps, &slots)?;
    let mut steps = None;
    let mut last_err = String::new();
    for attempt in 0..attempts {
        let out = call_teacher(client, audit, AuditStage::ProtocolSteps, task_id, None, attempt, &prompt, cfg.protocol_temperature)?;
        match parse_protocol_block(&out) {
            Ok(mut s) => {
                s.iter_mut().for_each(|st| st.cautions.clear());
                steps = Some(s);
                break;
            }
            Err(e) => last_err = e,
        }
    }
    let mut steps = steps.ok_or_else(|| DistillError::ProtocolParseFailure {
        task_id: task_id.to_string(),
        attempts,
        reason: last_err.clone(),
    })?;

    if !neg.is_empty() {
        let slots = BTreeMap::from([
            ("task_id".to_string(), task_id.to_string()),
            ("k".to_string(), neg.len().to_string()),
            ("protocol".to_string(), format_protocol(&steps, false).trim_end().to_string()),
            ("examples".to_string(), format_examples(&neg, true)),
        ]);
        let prompt = render_template("protocol_cautions", &prompts.protocol_cautions, &slots)?;
        let mut merged = None;
        for attempt in 0..attempts {
            let out =
                call_teacher(client, audit, AuditStage::ProtocolCautions, task_id, None, attempt, &prompt, cfg.protocol_temperature)?;
            match parse_protocol_block(&out) {
                Ok(with) if with.len() == steps.len() && with.iter().zip(&steps).all(|(a, b)| a.title == b.title) => {
                    merged = Some(with);
                    break;
                }
                Ok(_) => last_err = "caution block does not repeat the protocol steps".into(),
                Err(e) => last_err = e,
            }
        }
        let with = merged.ok_or_else(|| DistillError::ProtocolParseFailure {
            task_id: task_id.to_string(),
            attempts,
            reason: last_err,
        })?;
        for (s, w) in steps.iter_mut().zip(with) {
            s.cautions = dedup(w.cautions);
        }
    }
    Ok(ReasoningProtocol {
        task_id: task_id.to_string(),
        version: 1,
        steps,
        provenance: Provenance {
            k,
            positives: pos.iter().map(sample_id).collect(),
            negatives: neg.iter().map(sample_id).collect(),
        },
    })
}

fn dedup(items: Vec<String>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for i in items {
        if !out.contains(&i) {
            out.push(i);
        }
    }
    out
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct AlignmentMember {
    pub task_id: String,
    /// 1-based step index.
    pub step: usize,
}

/// Groups of analogous steps across task protocols.
#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct Alignment {
    /// Group name to members, in file order.
    pub groups: Vec<(String, Vec<AlignmentMember>)>,
}

impl Alignment {
    /// Parses `group<TAB>task_id<TAB>step` rows after a header row; `#`
    /// lines are comments.
    pub fn parse(text: &str) -> Result<Alignment, DistillError> {
        let mut groups: Vec<(String, Vec<AlignmentMember>)> = Vec::new();
        let mut header_seen = false;
        for (i, line) in text.lines().enumerate() {
            let t = line.trim();
            if t.is_empty() || t.starts_with('#') {
                continue;
            }
            if !header_seen {
                header_seen = true;
                if t.split('\t').next() == Some("group") {
                    continue;
                }
            }
            let err = |m: &str| DistillError::AlignmentSyntax {
                line: i + 1,
                message: m.to_string(),
            };
            let cols: Vec<&str> = t.split('\t').collect();
            if cols.len() != 3 {
                return Err(err("expected three tab-separated columns"));
            }
            let step: usize = cols[2].trim().parse().map_err(|_| err("step must be a positive integer"))?;
            if step == 0 {
                return Err(err("steps are 1-based"));
            }
            let member = AlignmentMember {
                task_id: cols[1].trim().to_string(),
                step,
            };
            match groups.iter_mut().find(|(g, _)| g == cols[0]) {
                Some((_, m)) => m.push(member),
                None => groups.push((cols[0].to_string(), vec![member])),
            }
        }
        Ok(Alignment { groups })
    }

    pub fn bundled() -> Alignment {
        Alignment::parse(ALIGNMENT_TSV).expect("bundled alignment parses")
    }

    pub fn load(path: &Path) -> Result<Alignment, DistillError> {
        let text = std::fs::read_to_string(path).map_err(|e| DistillError::io(path, e))?;
        Alignment::parse(&text)
    }
}

/// Shares cautions among aligned steps: every member step's cautions become
/// its own cautions followed by the other members' cautions in group order,
/// without duplicates. Members whose task has no protocol are skipped. A
/// protocol's version is bumped only when its cautions changed, so merging
/// twice equals merging once.
pub fn merge_cautions(
    protocols: &[ReasoningProtocol],
    alignment: &Alignment,
) -> Result<Vec<ReasoningProtocol>, DistillError> {
    let mut out: Vec<ReasoningProtocol> = protocols.to_vec();
    let index: BTreeMap<String, usize> = out.iter().enumerate().map(|(i, p)| (p.task_id.clone(), i)).collect();
    for (group, members) in &alignment.groups {
        let present: Vec<(usize, usize)> = members
            .iter()
            .filter_map(|m| index.get(&m.task_id).map(|&pi| (pi, m)))
            .map(|(pi, m)| {
                let steps = out[pi].steps.len();
                if m.step > steps {
                    Err(DistillError::AlignmentOutOfRange {
                        group: group.clone(),
                        task_id: m.task_id.clone(),
                        step: m.step,
                        steps,
                    })
                } else {
                    Ok((pi, m.step - 1))
                }
            })
            .collect::<Result<_, _>>()?;
        let pooled: Vec<String> = dedup(present.iter().flat_map(|&(p, s)| out[p].steps[s].cautions.clone()).collect());
        for &(p, s) in &present {
            let mut c = out[p].steps[s].cautions.clone();
            c.extend(pooled.iter().cloned());
            out[p].steps[s].cautions = dedup(c);
        }
    }
    for (new, old) in out.iter_mut().zip(protocols) {
        if new.steps != old.steps {
            new.version = old.version + 1;
        }
    }
    Ok(out)
}
