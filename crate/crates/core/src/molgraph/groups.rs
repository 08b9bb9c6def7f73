//! Functional-group detection against the bundled pattern table
//! (`assets/functional_groups.v1.tsv`).

use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::pattern::{parse_pattern, Pattern};
use super::substructure::substructure_match_pattern;
use super::MolGraph;

pub const TABLE_VERSION: &str = "v1";
const TABLE_TSV: &str = include_str!("../../assets/functional_groups.v1.tsv");

#[derive(Clone, Debug)]
pub struct FunctionalGroup {
    pub name: String,
    pub pattern_text: String,
    pub priority: u32,
    pub pattern: Pattern,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct FunctionalGroupHit {
    pub group_name: String,
    /// Entry `k` is the atom matched by pattern atom `k`.
    pub atom_indices: Vec<usize>,
    pub pattern_smiles: String,
}

fn parse_table(text: &str) -> Vec<FunctionalGroup> {
    let mut out: Vec<FunctionalGroup> = text
        .lines()
        .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
        .skip(1)
        .map(|line| {
            let cols: Vec<&str> = line.split('\t').collect();
            assert_eq!(cols.len(), 3, "group table row {line:?}");
            FunctionalGroup {
                name: cols[0].to_string(),
                pattern_text: cols[1].to_string(),
                priority: cols[2].parse().expect("priority column"),
                pattern: parse_pattern(cols[1]).unwrap_or_else(|e| panic!("group pattern {}: {e}", cols[1])),
            }
        })
        .collect();
    out.sort_by_key(|g| g.priority);
    out
}

/// The bundled table, ordered by priority.
pub fn functional_group_table() -> &'static [FunctionalGroup] {
    static TABLE: OnceLock<Vec<FunctionalGroup>> = OnceLock::new();
    TABLE.get_or_init(|| parse_table(TABLE_TSV))
}

/// One hit per distinct matched atom set of every table group, ordered by
/// group priority, then by lowest matched atom index.
pub fn detect_functional_groups(mol: &MolGraph) -> Vec<FunctionalGroupHit> {
    let mut hits = Vec::new();
    for g in functional_group_table() {
        let mut matches = substructure_match_pattern(&g.pattern, mol);
        matches.sort_by_key(|m| {
            let mut s = m.clone();
            s.sort_unstable();
            s
        });
        for m in matches {
            hits.push(FunctionalGroupHit {
                group_name: g.name.clone(),
                atom_indices: m,
                pattern_smiles: g.pattern_text.clone(),
            });
        }
    }
    hits
}
