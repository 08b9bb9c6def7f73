//! Dataset records, seeded splits, the train/test leakage check and
//! foundation-corpus formatting.
//!
//! Record files are line-delimited JSON. The first line may be a header
//! object `{"schema": "protochem.records/v1"}`; [`write_records`] always
//! emits it.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::io::Write;
use std::path::{Path, PathBuf};

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::molgraph::{canonicalize, parse_smiles};

pub const RECORD_SCHEMA: &str = "protochem.records/v1";

#[derive(Debug, Error)]
pub enum DataError {
    #[error("{path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error("line {line}: {message}")]
    SchemaViolation { line: usize, message: String },
    #[error("unsupported record schema {0:?}")]
    UnsupportedSchema(String),
    #[error("duplicate question_id {question_id:?} for task {task_id:?} on lines {first_line} and {second_line}")]
    DuplicateQuestionId {
        task_id: String,
        question_id: String,
        first_line: usize,
        second_line: usize,
    },
    #[error("split ratios must be non-negative and sum to 1, got {0:?}")]
    InvalidRatios([f64; 3]),
}

impl DataError {
    fn io(path: &Path, e: impl fmt::Display) -> DataError {
        DataError::Io {
            path: path.to_path_buf(),
            message: e.to_string(),
        }
    }
}

/// One question with its reference answer. `question` and `gold` are
/// accepted as aliases of `input` and `target`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetRecord {
    pub task_id: String,
    pub question_id: String,
    #[serde(alias = "question")]
    pub input: String,
    #[serde(alias = "gold")]
    pub target: String,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub meta: BTreeMap<String, Value>,
}

impl DatasetRecord {
    pub fn meta_str(&self, key: &str) -> Option<&str> {
        self.meta.get(key).and_then(Value::as_str)
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Header {
    schema: String,
}

/// Parses record lines; any malformed line fails the whole load.
pub fn parse_records(text: &str) -> Result<Vec<DatasetRecord>, DataError> {
    let mut out = Vec::new();
    let mut seen: HashMap<(String, String), usize> = HashMap::new();
    for (k, line) in text.lines().enumerate() {
        let line_no = k + 1;
        if line.trim().is_empty() {
            continue;
        }
        if out.is_empty() && line.contains("\"schema\"") {
            let h: Header = serde_json::from_str(line).map_err(|e| DataError::SchemaViolation {
                line: line_no,
                message: e.to_string(),
            })?;
            if h.schema != RECORD_SCHEMA {
                return Err(DataError::UnsupportedSchema(h.schema));
            }
            continue;
        }
        let r: DatasetRecord = serde_json::from_str(line).map_err(|e| DataError::SchemaViolation {
            line: line_no,
            message: e.to_string(),
        })?;
        for (field, v) in [("task_id", &r.task_id), ("question_id", &r.question_id)] {
            if v.trim().is_empty() {
                return Err(DataError::SchemaViolation {
                    line: line_no,
                    message: format!("{field} is empty"),
                });
            }
        }
        let key = (r.task_id.clone(), r.question_id.clone());
        if let Some(&first_line) = seen.get(&key) {
            return Err(DataError::DuplicateQuestionId {
                task_id: key.0,
                question_id: key.1,
                first_line,
                second_line: line_no,
            });
        }
        seen.insert(key, line_no);
        out.push(r);
    }
    Ok(out)
}

pub fn load_records(path: &Path) -> Result<Vec<DatasetRecord>, DataError> {
    let text = std::fs::read_to_string(path).map_err(|e| DataError::io(path, e))?;
    parse_records(&text)
}

/// Loads several files in parallel; results keep the argument order.
pub fn load_many(paths: &[PathBuf]) -> Result<Vec<Vec<DatasetRecord>>, DataError> {
    paths.par_iter().map(|p| load_records(p)).collect()
}

pub fn records_to_string(records: &[DatasetRecord]) -> String {
    let mut s = serde_json::json!({ "schema": RECORD_SCHEMA }).to_string();
    s.push('\n');
    for r in records {
        s.push_str(&serde_json::to_string(r).expect("records serialize"));
        s.push('\n');
    }
    s
}

pub fn write_records(path: &Path, records: &[DatasetRecord]) -> Result<(), DataError> {
    write_file(path, records_to_string(records).as_bytes())
}

pub(crate) fn write_file(path: &Path, bytes: &[u8]) -> Result<(), DataError> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(dir).map_err(|e| DataError::io(dir, e))?;
    }
    let mut f = std::fs::File::create(path).map_err(|e| DataError::io(path, e))?;
    f.write_all(bytes).map_err(|e| DataError::io(path, e))
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum KeyPolicy {
    /// Canonical SMILES of the target; falls back to `meta.smiles`, then to
    /// the input, then to the question text.
    #[default]
    CanonicalSmilesOfTarget,
    /// Canonical SMILES of every field or whitespace-separated word that
    /// parses as a molecule.
    CanonicalSmilesAnyField,
    QuestionText,
}

impl std::str::FromStr for KeyPolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "canonical_smiles_of_target" | "target" => Ok(KeyPolicy::CanonicalSmilesOfTarget),
            "canonical_smiles_any_field" | "any" => Ok(KeyPolicy::CanonicalSmilesAnyField),
            "question_text" | "text" => Ok(KeyPolicy::QuestionText),
            _ => Err(format!("unknown key policy {s:?}")),
        }
    }
}

/// Canonical form of a '.'-separated SMILES string with sorted components.
pub fn canonical_key(text: &str) -> Option<String> {
    let text = text.trim();
    if text.is_empty() {
        return None;
    }
    let mut parts = Vec::new();
    for c in text.split('.') {
        parts.push(canonicalize(&parse_smiles(c).ok()?).text);
    }
    parts.sort();
    Some(parts.join("."))
}

fn smiles_like_words(text: &str) -> impl Iterator<Item = String> + '_ {
    text.split_whitespace()
        .map(|w| w.trim_end_matches(['.', ',', ';', ':']).trim_start_matches(['(', '[']))
        .filter(|w| w.len() >= 2 && w.chars().any(|c| "BCNOPSFIcnops[".contains(c)))
        .filter_map(canonical_key)
}

/// A record's leakage keys; the flag is set when the policy had to fall
/// back to question text.
pub fn record_keys(r: &DatasetRecord, policy: KeyPolicy) -> (BTreeSet<String>, bool) {
    let text_key = || format!("text:{}", r.input.split_whitespace().collect::<Vec<_>>().join(" "));
    let mut keys = BTreeSet::new();
    match policy {
        KeyPolicy::QuestionText => {
            keys.insert(text_key());
            (keys, false)
        }
        KeyPolicy::CanonicalSmilesOfTarget => {
            let found = canonical_key(&r.target)
                .or_else(|| r.meta_str("smiles").and_then(canonical_key))
                .or_else(|| canonical_key(&r.input));
            match found {
                Some(k) => {
                    keys.insert(k);
                    (keys, false)
                }
                None => {
                    keys.insert(text_key());
                    (keys, true)
                }
            }
        }
        KeyPolicy::CanonicalSmilesAnyField => {
            let mut fields: Vec<&str> = vec![&r.input, &r.target];
            fields.extend(r.meta.values().filter_map(Value::as_str));
            for f in fields {
                match canonical_key(f) {
                    Some(k) => {
                        keys.insert(k);
                    }
                    None => keys.extend(smiles_like_words(f)),
                }
            }
            if keys.is_empty() {
                keys.insert(text_key());
                (keys, true)
            } else {
                (keys, false)
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SplitSet {
    pub train: Vec<DatasetRecord>,
    pub valid: Vec<DatasetRecord>,
    pub test: Vec<DatasetRecord>,
    pub seed: u64,
    pub ratios: [f64; 3],
}

impl SplitSet {
    pub fn parts(&self) -> [(&'static str, &[DatasetRecord]); 3] {
        [("train", &self.train), ("valid", &self.valid), ("test", &self.test)]
    }
}

/// Largest-remainder apportionment of `n` items by `ratios`.
pub fn target_sizes(n: usize, ratios: [f64; 3]) -> [usize; 3] {
    let exact: Vec<f64> = ratios.iter().map(|r| r * n as f64).collect();
    let mut sizes: [usize; 3] = [0; 3];
    for i in 0..3 {
        sizes[i] = exact[i].floor() as usize;
    }
    let mut order: Vec<usize> = (0..3).collect();
    order.sort_by(|&a, &b| {
        let fa = exact[a] - exact[a].floor();
        let fb = exact[b] - exact[b].floor();
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - sizes.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        if ratios[i] > 0.0 {
            sizes[i] += 1;
            left -= 1;
        }
    }
    sizes
}

fn check_ratios(ratios: [f64; 3]) -> Result<(), DataError> {
    if ratios.iter().any(|r| r.is_nan() || *r < 0.0) || (ratios.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
        return Err(DataError::InvalidRatios(ratios));
    }
    Ok(())
}

/// Seeded split. With `enforce_leakage` set, records sharing any key under
/// `policy` are kept together, so the split is leakage-free by construction;
/// sizes then track the ratios as closely as the groups allow.
pub fn split(
    records: &[DatasetRecord],
    ratios: [f64; 3],
    seed: u64,
    enforce_leakage: Option<KeyPolicy>,
) -> Result<SplitSet, DataError> {
    check_ratios(ratios)?;
    let n = records.len();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let groups: Vec<Vec<usize>> = match enforce_leakage {
        None => (0..n).map(|i| vec![i]).collect(),
        Some(policy) => leakage_groups(records, policy),
    };
    let mut order: Vec<usize> = (0..groups.len()).collect();
    order.shuffle(&mut rng);
    let sizes = target_sizes(n, ratios);
    let mut assigned: [Vec<usize>; 3] = Default::default();
    for g in order {
        let members = &groups[g];
        let slot = (0..3)
            .filter(|&s| ratios[s] > 0.0)
            .max_by_key(|&s| (sizes[s] as i64 - assigned[s].len() as i64, std::cmp::Reverse(s)))
            .expect("some ratio is positive");
        assigned[slot].extend(members.iter().copied());
    }
    let take = |idx: &mut Vec<usize>| {
        idx.sort_unstable();
        idx.iter().map(|&i| records[i].clone()).collect::<Vec<_>>()
    };
    let [mut a, mut b, mut c] = assigned;
    Ok(SplitSet {
        train: take(&mut a),
        valid: take(&mut b),
        test: take(&mut c),
        seed,
        ratios,
    })
}

/// Connected components of records linked by shared keys.
fn leakage_groups(records: &[DatasetRecord], policy: KeyPolicy) -> Vec<Vec<usize>> {
    let mut parent: Vec<usize> = (0..records.len()).collect();
    fn find(p: &mut [usize], mut x: usize) -> usize {
        while p[x] != x {
            p[x] = p[p[x]];
            x = p[x];
        }
        x
    }
    let mut owner: HashMap<String, usize> = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        for k in record_keys(r, policy).0 {
            match owner.get(&k) {
                Some(&j) => {
                    let (a, b) = (find(&mut parent, i), find(&mut parent, j));
                    parent[a.max(b)] = a.min(b);
                }
                None => {
                    owner.insert(k, i);
                }
            }
        }
    }
    let mut groups: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..records.len() {
        let root = find(&mut parent, i);
        groups.entry(root).or_default().push(i);
    }
    groups.into_values().collect()
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct RecordRef {
    pub task_id: String,
    pub question_id: String,
}

impl From<&DatasetRecord> for RecordRef {
    fn from(r: &DatasetRecord) -> Self {
        RecordRef {
            task_id: r.task_id.clone(),
            question_id: r.question_id.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageViolation {
    pub key: String,
    pub train: RecordRef,
    pub test: RecordRef,
}

#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LeakageReport {
    pub policy: KeyPolicy,
    pub violations: Vec<LeakageViolation>,
    /// Records whose SMILES key field did not parse; keyed by question text.
    pub unparseable_key_field: Vec<RecordRef>,
}

impl LeakageReport {
    pub fn is_clean(&self) -> bool {
        self.violations.is_empty()
    }
}

/// Every (train, test) pair that shares a key, ordered by key then record.
pub fn leakage_check(train: &[DatasetRecord], test: &[DatasetRecord], policy: KeyPolicy) -> LeakageReport {
    let mut report = LeakageReport {
        policy,
        ..Default::default()
    };
    let mut by_key: BTreeMap<String, Vec<usize>> = BTreeMap::new();
    for (i, r) in train.iter().enumerate() {
        let (keys, fallback) = record_keys(r, policy);
        if fallback {
            report.unparseable_key_field.push(r.into());
        }
        for k in keys {
            by_key.entry(k).or_default().push(i);
        }
    }
    let mut found: BTreeSet<(String, usize, usize)> = BTreeSet::new();
    for (j, r) in test.iter().enumerate() {
        let (keys, fallback) = record_keys(r, policy);
        if fallback {
            report.unparseable_key_field.push(r.into());
        }
        for k in keys {
            for &i in by_key.get(&k).into_iter().flatten() {
                found.insert((k.clone(), i, j));
            }
        }
    }
    report.violations = found
        .into_iter()
        .map(|(key, i, j)| LeakageViolation {
            key,
            train: (&train[i]).into(),
            test: (&test[j]).into(),
        })
        .collect();
    report
}

/// Input rows for the foundation corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Phase1Entry {
    Molecule {
        smiles: String,
        #[serde(default)]
        iupac: Option<String>,
        #[serde(default)]
        description: Option<String>,
    },
    Reaction {
        reactants: String,
        products: String,
        #[serde(default)]
        bidirectional: bool,
    },
}

/// Question phrasings; `{smiles}`, `{iupac}`, `{reactants}` and
/// `{products}` are substituted.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Phase1Format {
    pub smiles_to_iupac: String,
    pub iupac_to_smiles: String,
    pub smiles_to_description: String,
    pub forward_reaction: String,
    pub retrosynthesis: String,
}

impl Default for Phase1Format {
    fn default() -> Self {
        Phase1Format {
            smiles_to_iupac: "Provide the IUPAC name for the following molecule. SMILES: {smiles}.".into(),
            iupac_to_smiles: "Provide the SMILES string for the following molecule. IUPAC name: {iupac}.".into(),
            smiles_to_description: "Provide a chemical description for the following molecule. SMILES: {smiles}."
                .into(),
            forward_reaction: "Predict the main product(s) for the following reaction. Reactants: {reactants}".into(),
            retrosynthesis: "Predict the necessary reactant(s) for the following product. Product: {products}".into(),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct SftPair {
    pub task_id: String,
    pub prompt: String,
    pub completion: String,
}

/// Direct question/answer pairs with no reasoning text, in input order.
pub fn build_phase1_corpus(entries: &[Phase1Entry], format: &Phase1Format) -> Vec<SftPair> {
    let pair = |task: &str, template: &str, subs: &[(&str, &str)], answer: &str| {
        let mut prompt = template.to_string();
        for (k, v) in subs {
            prompt = prompt.replace(&format!("{{{k}}}"), v);
        }
        SftPair {
            task_id: task.to_string(),
            prompt,
            completion: answer.to_string(),
        }
    };
    let mut out = Vec::new();
    for e in entries {
        match e {
            Phase1Entry::Molecule {
                smiles,
                iupac,
                description,
            } => {
                if let Some(name) = iupac {
                    let subs = [("smiles", smiles.as_str()), ("iupac", name.as_str())];
                    out.push(pair("name.smiles2iupac", &format.smiles_to_iupac, &subs, name));
                    out.push(pair("name.iupac2smiles", &format.iupac_to_smiles, &subs, smiles));
                }
                if let Some(d) = description {
                    let subs = [("smiles", smiles.as_str())];
                    out.push(pair("caption.chebi20", &format.smiles_to_description, &subs, d));
                }
            }
            Phase1Entry::Reaction {
                reactants,
                products,
                bidirectional,
            } => {
                let subs = [("reactants", reactants.as_str()), ("products", products.as_str())];
                out.push(pair("reaction.uspto_mixed", &format.forward_reaction, &subs, products));
                if *bidirectional {
                    out.push(pair("retro.uspto_50k", &format.retrosynthesis, &subs, reactants));
                }
            }
        }
    }
    out
}

pub fn parse_phase1_entries(text: &str) -> Result<Vec<Phase1Entry>, DataError> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(k, l)| {
            serde_json::from_str(l).map_err(|e| DataError::SchemaViolation {
                line: k + 1,
                message: e.to_string(),
            })
        })
        .collect()
}
