//! Property oracles for the MolOpt subtasks.
//!
//! The built-in oracle sums per-atom-class LogP and MR contributions from
//! `assets/atom_contributions.v1.tsv`. Other properties (QED in particular)
//! come from a [`TableOracle`] or any external [`PropertyOracle`].

use std::collections::{BTreeMap, HashMap};
use std::path::Path;
use std::sync::OnceLock;

use thiserror::Error;

use crate::molgraph::{canonicalize, parse_smiles, BondOrder, MolGraph};

const CONTRIBUTIONS_TSV: &str = include_str!("../../assets/atom_contributions.v1.tsv");

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OracleError {
    #[error("oracle {oracle} has no value for {smiles}")]
    UnknownMolecule { oracle: String, smiles: String },
    #[error("property table line {line}: {message}")]
    Table { line: usize, message: String },
    #[error("cannot read {path}: {message}")]
    Io { path: String, message: String },
    #[error("unsupported property {0:?}")]
    UnsupportedProperty(String),
}

/// A scalar molecular property.
pub trait PropertyOracle: Send + Sync {
    fn name(&self) -> &str;
    fn evaluate(&self, mol: &MolGraph) -> Result<f64, OracleError>;
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Contribution {
    LogP,
    Mr,
}

/// Atom-class additive LogP or molar refractivity.
#[derive(Clone, Debug)]
pub struct AtomContributionOracle {
    property: Contribution,
}

fn contribution_table() -> &'static HashMap<String, (f64, f64)> {
    static TABLE: OnceLock<HashMap<String, (f64, f64)>> = OnceLock::new();
    TABLE.get_or_init(|| {
        CONTRIBUTIONS_TSV
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .skip(1)
            .map(|l| {
                let cols: Vec<&str> = l.split('\t').collect();
                assert_eq!(cols.len(), 3, "contribution row {l:?}");
                let logp = cols[1].parse().expect("logp column");
                let mr = cols[2].parse().expect("mr column");
                (cols[0].to_string(), (logp, mr))
            })
            .collect()
    })
}

fn has_multiple_bond(mol: &MolGraph, i: usize) -> bool {
    mol.neighbors(i)
        .iter()
        .any(|&(_, b)| matches!(mol.bonds()[b].order, BondOrder::Double | BondOrder::Triple))
}

/// Atom class label of heavy atom `i` in the contribution table.
fn atom_class(mol: &MolGraph, i: usize) -> &'static str {
    let a = mol.atom(i);
    let polar = mol
        .neighbors(i)
        .iter()
        .any(|&(n, _)| matches!(mol.atom(n).element.symbol(), "N" | "O"));
    match a.element.symbol() {
        "C" => match (a.aromatic, has_multiple_bond(mol, i), polar) {
            (true, _, false) => "C.aromatic",
            (true, _, true) => "C.aromatic.polar",
            (false, true, false) => "C.unsaturated",
            (false, true, true) => "C.unsaturated.polar",
            (false, false, false) => "C.sp3",
            (false, false, true) => "C.sp3.polar",
        },
        "N" if a.formal_charge != 0 => "N.charged",
        "N" if a.aromatic => "N.aromatic",
        "N" if has_multiple_bond(mol, i) => "N.unsaturated",
        "N" => "N.amine",
        "O" if a.formal_charge != 0 => "O.charged",
        "O" if a.aromatic => "O.aromatic",
        "O" if has_multiple_bond(mol, i) => "O.carbonyl",
        "O" => "O.single",
        "S" if a.aromatic => "S.aromatic",
        "S" => "S",
        "F" => "F",
        "Cl" => "Cl",
        "Br" => "Br",
        "I" => "I",
        "P" => "P",
        "B" => "B",
        "Si" => "Si",
        _ => "other",
    }
}

impl AtomContributionOracle {
    pub fn logp() -> AtomContributionOracle {
        AtomContributionOracle {
            property: Contribution::LogP,
        }
    }

    pub fn mr() -> AtomContributionOracle {
        AtomContributionOracle {
            property: Contribution::Mr,
        }
    }

    fn pick(&self, class: &str) -> f64 {
        let (logp, mr) = contribution_table()[class];
        match self.property {
            Contribution::LogP => logp,
            Contribution::Mr => mr,
        }
    }

    /// Per-class atom counts, hydrogens included. Exposed for tests.
    pub fn class_counts(mol: &MolGraph) -> BTreeMap<&'static str, usize> {
        let mut counts = BTreeMap::new();
        for (i, atom) in mol.atoms().iter().enumerate() {
            if atom.element.is_hydrogen() {
                let on_carbon = mol.neighbors(i).iter().any(|&(n, _)| mol.atom(n).element.symbol() == "C");
                *counts.entry(if on_carbon { "H.carbon" } else { "H.hetero" }).or_insert(0) += 1;
                continue;
            }
            *counts.entry(atom_class(mol, i)).or_insert(0) += 1;
            let h = atom.total_h() as usize;
            if h > 0 {
                let key = if atom.element.symbol() == "C" { "H.carbon" } else { "H.hetero" };
                *counts.entry(key).or_insert(0) += h;
            }
        }
        counts
    }
}

impl PropertyOracle for AtomContributionOracle {
    fn name(&self) -> &str {
        match self.property {
            Contribution::LogP => "logp",
            Contribution::Mr => "mr",
        }
    }

    fn evaluate(&self, mol: &MolGraph) -> Result<f64, OracleError> {
        Ok(Self::class_counts(mol)
            .into_iter()
            .map(|(class, n)| self.pick(class) * n as f64)
            .sum())
    }
}

/// Property values looked up by canonical SMILES from a two-column TSV
/// (`smiles<TAB>value`, `#` comments allowed).
#[derive(Clone, Debug)]
pub struct TableOracle {
    name: String,
    values: HashMap<String, f64>,
}

impl TableOracle {
    pub fn parse(name: impl Into<String>, text: &str) -> Result<TableOracle, OracleError> {
        let mut values = HashMap::new();
        for (idx, line) in text.lines().enumerate() {
            let line_no = idx + 1;
            let trimmed = line.trim();
            if trimmed.is_empty() || trimmed.starts_with('#') {
                continue;
            }
            let mut cols = trimmed.split('\t');
            let (Some(smiles), Some(value), None) = (cols.next(), cols.next(), cols.next()) else {
                return Err(OracleError::Table {
                    line: line_no,
                    message: "expected two tab-separated columns".into(),
                });
            };
            let value: f64 = value.trim().parse().map_err(|_| OracleError::Table {
                line: line_no,
                message: format!("bad value {value:?}"),
            })?;
            let mol = parse_smiles(smiles.trim()).map_err(|e| OracleError::Table {
                line: line_no,
                message: e.to_string(),
            })?;
            values.insert(canonicalize(&mol).text, value);
        }
        Ok(TableOracle {
            name: name.into(),
            values,
        })
    }

    pub fn load(name: impl Into<String>, path: &Path) -> Result<TableOracle, OracleError> {
        let text = std::fs::read_to_string(path).map_err(|e| OracleError::Io {
            path: path.display().to_string(),
            message: e.to_string(),
        })?;
        Self::parse(name, &text)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl PropertyOracle for TableOracle {
    fn name(&self) -> &str {
        &self.name
    }

    fn evaluate(&self, mol: &MolGraph) -> Result<f64, OracleError> {
        let key = canonicalize(mol).text;
        self.values.get(&key).copied().ok_or(OracleError::UnknownMolecule {
            oracle: self.name.clone(),
            smiles: key,
        })
    }
}
