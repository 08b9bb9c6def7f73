//! Fingerprints, Tanimoto similarity and novelty against a reference set.
//!
//! All hashing is 64-bit FNV-1a over a fixed byte serialization, folded
//! modulo the vector length, so bit positions are stable across platforms.
//! These fingerprints are analogues of the common toolkit ones and are not
//! bit-compatible with them.

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt;
use std::hash::Hasher;
use std::path::Path;
use std::sync::{Arc, OnceLock};

use fnv::FnvHasher;
use parking_lot::Mutex;
use thiserror::Error;

use crate::molgraph::{
    canonicalize, parse_pattern, parse_smiles, substructure_match_pattern, BondOrder, CanonicalSmiles, MolGraph,
    ParseError, Pattern,
};

pub const ALLOWED_NBITS: [usize; 4] = [512, 1024, 2048, 4096];
pub const MAX_MORGAN_RADIUS: u32 = 8;
pub const MAX_PATH_LEN: usize = 7;
pub const KEY_COUNT: usize = 64;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ChemSimError {
    #[error("fingerprint length {0} is not one of 512, 1024, 2048, 4096")]
    UnsupportedLength(usize),
    #[error("morgan radius {0} exceeds {MAX_MORGAN_RADIUS}")]
    RadiusTooLarge(u32),
    #[error("path length {0} exceeds {MAX_PATH_LEN}")]
    PathTooLong(usize),
    #[error("bit vectors differ in length ({0} vs {1})")]
    LengthMismatch(usize, usize),
    #[error("reference set is empty")]
    EmptyReferenceSet,
    #[error("reference set line {line}: {error}")]
    InvalidReference { line: usize, error: ParseError },
    #[error("reading reference set: {0}")]
    Io(String),
}

/// Fixed-length binary fingerprint.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct BitVector {
    words: Vec<u64>,
    nbits: usize,
}

impl BitVector {
    pub fn zeros(nbits: usize) -> BitVector {
        BitVector {
            words: vec![0; nbits.div_ceil(64)],
            nbits,
        }
    }

    /// Builds a vector from '0'/'1' characters, bit 0 first.
    pub fn from_bit_str(s: &str) -> BitVector {
        let mut v = BitVector::zeros(s.len());
        for (i, c) in s.chars().enumerate() {
            if c == '1' {
                v.set(i);
            }
        }
        v
    }

    pub fn nbits(&self) -> usize {
        self.nbits
    }

    pub fn set(&mut self, i: usize) {
        assert!(i < self.nbits, "bit {i} out of range");
        self.words[i / 64] |= 1 << (i % 64);
    }

    pub fn get(&self, i: usize) -> bool {
        i < self.nbits && self.words[i / 64] >> (i % 64) & 1 == 1
    }

    pub fn count_ones(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn ones(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.nbits).filter(|&i| self.get(i))
    }
}

impl fmt::Debug for BitVector {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "BitVector({} bits, on: {:?})", self.nbits, self.ones().collect::<Vec<_>>())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum FingerprintKind {
    Morgan { radius: u32, nbits: usize },
    Path { max_len: usize, nbits: usize },
    StructuralKeys,
}

impl Default for FingerprintKind {
    fn default() -> Self {
        FingerprintKind::Morgan { radius: 2, nbits: 2048 }
    }
}

pub fn fingerprint(mol: &MolGraph, kind: FingerprintKind) -> Result<BitVector, ChemSimError> {
    match kind {
        FingerprintKind::Morgan { radius, nbits } => morgan_fingerprint(mol, radius, nbits),
        FingerprintKind::Path { max_len, nbits } => path_fingerprint(mol, max_len, nbits),
        FingerprintKind::StructuralKeys => Ok(structural_keys(mol)),
    }
}

struct Fnv(FnvHasher);

impl Fnv {
    fn new() -> Fnv {
        Fnv(FnvHasher::default())
    }
    fn u64(&mut self, x: u64) -> &mut Fnv {
        self.0.write(&x.to_le_bytes());
        self
    }
    fn bytes(&mut self, b: &[u8]) -> &mut Fnv {
        self.0.write(b);
        self
    }
    fn finish(&self) -> u64 {
        self.0.finish()
    }
}

fn check_nbits(nbits: usize) -> Result<(), ChemSimError> {
    if ALLOWED_NBITS.contains(&nbits) {
        Ok(())
    } else {
        Err(ChemSimError::UnsupportedLength(nbits))
    }
}

/// Radius-0 atom identifier from the atom's own invariants.
fn atom_invariant_id(mol: &MolGraph, i: usize) -> u64 {
    let a = mol.atom(i);
    Fnv::new()
        .u64(a.element.atomic_number() as u64)
        .u64(mol.heavy_degree(i) as u64)
        .u64(a.total_h() as u64)
        .u64(a.formal_charge as i64 as u64)
        .u64(a.isotope.unwrap_or(0) as u64)
        .u64(a.aromatic as u64)
        .u64(mol.is_in_ring(i) as u64)
        .finish()
}

/// Identifiers of all unique circular environments up to `radius`.
///
/// Iteration `r` hashes `(r, own id, sorted (bond code, neighbour id))`. An
/// environment is dropped when its bond set equals one already recorded at
/// a lower radius; within one radius, atoms sharing a bond set keep only the
/// smallest identifier. Radius-0 environments are all kept.
pub fn morgan_environment_ids(mol: &MolGraph, radius: u32) -> BTreeSet<u64> {
    let n = mol.atom_count();
    let mut ids: Vec<u64> = (0..n).map(|i| atom_invariant_id(mol, i)).collect();
    let mut out: BTreeSet<u64> = ids.iter().copied().collect();
    let mut seen_sets: BTreeSet<Vec<usize>> = BTreeSet::new();
    let mut envs: Vec<BTreeSet<usize>> = vec![BTreeSet::new(); n];
    for r in 1..=radius {
        let mut next_ids = vec![0u64; n];
        let mut next_envs = vec![BTreeSet::new(); n];
        for i in 0..n {
            let mut nb: Vec<(u8, u64)> = mol
                .neighbors(i)
                .iter()
                .map(|&(w, bi)| (mol.bonds()[bi].order.code(), ids[w]))
                .collect();
            nb.sort_unstable();
            let mut h = Fnv::new();
            h.u64(r as u64).u64(ids[i]);
            for (code, id) in &nb {
                h.u64(*code as u64).u64(*id);
            }
            next_ids[i] = h.finish();
            let mut env = envs[i].clone();
            for &(w, bi) in mol.neighbors(i) {
                env.insert(bi);
                env.extend(envs[w].iter().copied());
            }
            next_envs[i] = env;
        }
        let mut this_round: BTreeMap<Vec<usize>, u64> = BTreeMap::new();
        for i in 0..n {
            let key: Vec<usize> = next_envs[i].iter().copied().collect();
            if key.is_empty() || seen_sets.contains(&key) {
                continue;
            }
            this_round
                .entry(key)
                .and_modify(|id| *id = (*id).min(next_ids[i]))
                .or_insert(next_ids[i]);
        }
        for (key, id) in this_round {
            out.insert(id);
            seen_sets.insert(key);
        }
        ids = next_ids;
        envs = next_envs;
    }
    out
}

pub fn morgan_fingerprint(mol: &MolGraph, radius: u32, nbits: usize) -> Result<BitVector, ChemSimError> {
    check_nbits(nbits)?;
    if radius > MAX_MORGAN_RADIUS {
        return Err(ChemSimError::RadiusTooLarge(radius));
    }
    let mut v = BitVector::zeros(nbits);
    for id in morgan_environment_ids(mol, radius) {
        v.set((id % nbits as u64) as usize);
    }
    Ok(v)
}

fn atom_label(mol: &MolGraph, i: usize) -> String {
    let a = mol.atom(i);
    let mut s = if a.aromatic {
        a.element.symbol().to_ascii_lowercase()
    } else {
        a.element.symbol().to_string()
    };
    if a.formal_charge != 0 {
        s = format!("[{s}{:+}]", a.formal_charge);
    }
    s
}

fn bond_label(order: BondOrder) -> &'static str {
    match order {
        BondOrder::Single => "-",
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => ":",
    }
}

/// Distinct direction-normalized strings of all simple paths with at most
/// `max_len` bonds, including single atoms.
pub fn path_strings(mol: &MolGraph, max_len: usize) -> BTreeSet<String> {
    let labels: Vec<String> = (0..mol.atom_count()).map(|i| atom_label(mol, i)).collect();
    let mut out = BTreeSet::new();
    let mut path = Vec::new();
    for start in 0..mol.atom_count() {
        path.push(start);
        walk_paths(mol, &labels, max_len, &mut path, &mut out);
        path.pop();
    }
    out
}

fn walk_paths(mol: &MolGraph, labels: &[String], max_len: usize, path: &mut Vec<usize>, out: &mut BTreeSet<String>) {
    let render = |atoms: &mut dyn Iterator<Item = usize>| {
        let atoms: Vec<usize> = atoms.collect();
        let mut s = labels[atoms[0]].clone();
        for w in atoms.windows(2) {
            s.push_str(bond_label(mol.bond_between(w[0], w[1]).unwrap().order));
            s.push_str(&labels[w[1]]);
        }
        s
    };
    let fwd = render(&mut path.iter().copied());
    let rev = render(&mut path.iter().rev().copied());
    out.insert(fwd.min(rev));
    if path.len() > max_len {
        return;
    }
    let last = *path.last().unwrap();
    for &(w, _) in mol.neighbors(last) {
        if !path.contains(&w) {
            path.push(w);
            walk_paths(mol, labels, max_len, path, out);
            path.pop();
        }
    }
}

pub fn path_fingerprint(mol: &MolGraph, max_len: usize, nbits: usize) -> Result<BitVector, ChemSimError> {
    check_nbits(nbits)?;
    if max_len > MAX_PATH_LEN {
        return Err(ChemSimError::PathTooLong(max_len));
    }
    let mut v = BitVector::zeros(nbits);
    for s in path_strings(mol, max_len) {
        let h = Fnv::new().bytes(s.as_bytes()).finish();
        v.set((h % nbits as u64) as usize);
    }
    Ok(v)
}

pub struct StructuralKey {
    pub index: usize,
    pub name: String,
    pub pattern_text: String,
    pub pattern: Pattern,
}

const KEYS_TSV: &str = include_str!("../assets/structural_keys.v1.tsv");

/// The bundled 64-key table (`assets/structural_keys.v1.tsv`).
pub fn structural_key_table() -> &'static [StructuralKey] {
    static TABLE: OnceLock<Vec<StructuralKey>> = OnceLock::new();
    TABLE.get_or_init(|| {
        let keys: Vec<StructuralKey> = KEYS_TSV
            .lines()
            .filter(|l| !l.trim().is_empty() && !l.starts_with('#'))
            .skip(1)
            .map(|line| {
                let cols: Vec<&str> = line.split('\t').collect();
                assert_eq!(cols.len(), 3, "key table row {line:?}");
                StructuralKey {
                    index: cols[0].parse().expect("key index"),
                    name: cols[1].to_string(),
                    pattern_text: cols[2].to_string(),
                    pattern: parse_pattern(cols[2]).unwrap_or_else(|e| panic!("key pattern {}: {e}", cols[2])),
                }
            })
            .collect();
        assert!(keys.iter().enumerate().all(|(i, k)| k.index == i), "key indices must be 0..n in order");
        assert_eq!(keys.len(), KEY_COUNT);
        keys
    })
}

pub fn structural_keys(mol: &MolGraph) -> BitVector {
    let mut v = BitVector::zeros(KEY_COUNT);
    for key in structural_key_table() {
        if !substructure_match_pattern(&key.pattern, mol).is_empty() {
            v.set(key.index);
        }
    }
    v
}

/// |a ∧ b| / |a ∨ b|; two all-zero vectors have similarity 1.
pub fn tanimoto(a: &BitVector, b: &BitVector) -> Result<f64, ChemSimError> {
    if a.nbits != b.nbits {
        return Err(ChemSimError::LengthMismatch(a.nbits, b.nbits));
    }
    let (mut and, mut or) = (0u32, 0u32);
    for (x, y) in a.words.iter().zip(&b.words) {
        and += (x & y).count_ones();
        or += (x | y).count_ones();
    }
    Ok(if or == 0 { 1.0 } else { and as f64 / or as f64 })
}

/// Molecules to measure novelty against. Fingerprints are computed once per
/// kind on first use and shared afterwards.
pub struct ReferenceSet {
    pub name: String,
    members: Vec<CanonicalSmiles>,
    graphs: Vec<MolGraph>,
    cache: Mutex<HashMap<FingerprintKind, Arc<Vec<BitVector>>>>,
}

impl fmt::Debug for ReferenceSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ReferenceSet")
            .field("name", &self.name)
            .field("members", &self.members.len())
            .finish()
    }
}

impl ReferenceSet {
    pub fn new(name: impl Into<String>, graphs: Vec<MolGraph>) -> ReferenceSet {
        ReferenceSet {
            name: name.into(),
            members: graphs.iter().map(canonicalize).collect(),
            graphs,
            cache: Mutex::new(HashMap::new()),
        }
    }

    /// Parses one SMILES per line; blank lines and `#` comments are skipped.
    /// Any invalid line fails the whole load, naming its 1-based line number.
    pub fn from_smiles_lines(name: impl Into<String>, text: &str) -> Result<ReferenceSet, ChemSimError> {
        let mut graphs = Vec::new();
        for (k, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let g = parse_smiles(line).map_err(|error| ChemSimError::InvalidReference { line: k + 1, error })?;
            graphs.push(g);
        }
        Ok(ReferenceSet::new(name, graphs))
    }

    pub fn load(path: &Path) -> Result<ReferenceSet, ChemSimError> {
        let text = std::fs::read_to_string(path).map_err(|e| ChemSimError::Io(format!("{}: {e}", path.display())))?;
        let name = path
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        ReferenceSet::from_smiles_lines(name, &text)
    }

    pub fn members(&self) -> &[CanonicalSmiles] {
        &self.members
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn fingerprints(&self, kind: FingerprintKind) -> Result<Arc<Vec<BitVector>>, ChemSimError> {
        if let Some(fps) = self.cache.lock().get(&kind) {
            return Ok(fps.clone());
        }
        let fps = Arc::new(
            self.graphs
                .iter()
                .map(|g| fingerprint(g, kind))
                .collect::<Result<Vec<_>, _>>()?,
        );
        self.cache.lock().insert(kind, fps.clone());
        Ok(fps)
    }
}

/// 1 − mean Tanimoto similarity of `mol` to the reference members.
pub fn novelty(mol: &MolGraph, reference: &ReferenceSet, kind: FingerprintKind) -> Result<f64, ChemSimError> {
    if reference.is_empty() {
        return Err(ChemSimError::EmptyReferenceSet);
    }
    let fp = fingerprint(mol, kind)?;
    let fps = reference.fingerprints(kind)?;
    let mut total = 0.0;
    for r in fps.iter() {
        total += tanimoto(&fp, r)?;
    }
    Ok(1.0 - total / fps.len() as f64)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn mol(s: &str) -> MolGraph {
        parse_smiles(s).unwrap()
    }

    #[test]
    fn single_atom_fingerprints() {
        assert_eq!(morgan_fingerprint(&mol("C"), 0, 2048).unwrap().count_ones(), 1);
        assert_eq!(path_fingerprint(&mol("C"), 7, 2048).unwrap().count_ones(), 1);
    }

    #[test]
    fn ethane_vs_ethanol_by_hand() {
        // Ethane: CH3 at r0, one C-C environment at r1; r2 adds nothing.
        // Ethanol: three atoms at r0, three distinct bond sets at r1; every
        // r2 set repeats the full molecule seen at r1. Shared: CH3 at r0.
        let a = morgan_environment_ids(&mol("CC"), 2);
        let b = morgan_environment_ids(&mol("CCO"), 2);
        assert_eq!((a.len(), b.len(), a.intersection(&b).count()), (2, 6, 1));
        let fa = morgan_fingerprint(&mol("CC"), 2, 2048).unwrap();
        let fb = morgan_fingerprint(&mol("CCO"), 2, 2048).unwrap();
        assert_eq!((fa.count_ones(), fb.count_ones()), (2, 6), "no folding collisions");
        assert_eq!(tanimoto(&fa, &fb).unwrap(), 1.0 / 7.0);
    }

    #[test]
    fn oxygen_and_nitrogen_environments_differ() {
        let o = morgan_fingerprint(&mol("CCO"), 1, 2048).unwrap();
        let n = morgan_fingerprint(&mol("CCN"), 1, 2048).unwrap();
        assert_ne!(o, n);
    }

    #[test]
    fn propane_paths() {
        let s = path_strings(&mol("CCC"), 2);
        let want: BTreeSet<String> = ["C", "C-C", "C-C-C"].into_iter().map(String::from).collect();
        assert_eq!(s, want);
        assert_eq!(path_fingerprint(&mol("CCC"), 2, 2048).unwrap().count_ones(), 3);
    }

    #[test]
    fn parameter_checks() {
        assert_eq!(morgan_fingerprint(&mol("C"), 2, 1000), Err(ChemSimError::UnsupportedLength(1000)));
        assert_eq!(morgan_fingerprint(&mol("C"), 9, 2048), Err(ChemSimError::RadiusTooLarge(9)));
        assert_eq!(path_fingerprint(&mol("C"), 8, 2048), Err(ChemSimError::PathTooLong(8)));
    }

    #[test]
    fn tanimoto_cases() {
        let x = BitVector::from_bit_str("110");
        let y = BitVector::from_bit_str("011");
        assert_eq!(tanimoto(&x, &y).unwrap(), 1.0 / 3.0);
        assert_eq!(tanimoto(&x, &x).unwrap(), 1.0);
        assert_eq!(tanimoto(&BitVector::from_bit_str("100"), &BitVector::from_bit_str("001")).unwrap(), 0.0);
        assert_eq!(tanimoto(&BitVector::zeros(8), &BitVector::zeros(8)).unwrap(), 1.0);
        assert_eq!(tanimoto(&x, &BitVector::zeros(4)), Err(ChemSimError::LengthMismatch(3, 4)));
    }

    #[test]
    fn key_table_basics() {
        let table = structural_key_table();
        let acid = table.iter().find(|k| k.name == "carboxylic_acid").unwrap().index;
        assert!(structural_keys(&mol("CC(=O)O")).get(acid));
        let ethane = structural_keys(&mol("CC"));
        let hetero = ["fluorine", "chlorine", "bromine", "iodine", "nitrogen", "oxygen", "sulfur", "phosphorus", "boron", "silicon"];
        for k in table.iter().filter(|k| hetero.contains(&k.name.as_str())) {
            assert!(!ethane.get(k.index), "{}", k.name);
        }
    }

    #[test]
    fn novelty_cases() {
        let kind = FingerprintKind::default();
        let m = mol("CCO");
        let same = ReferenceSet::new("self", vec![m.clone()]);
        assert_eq!(novelty(&m, &same, kind).unwrap(), 0.0);
        let empty = ReferenceSet::new("empty", vec![]);
        assert_eq!(novelty(&m, &empty, kind), Err(ChemSimError::EmptyReferenceSet));
        let bad = ReferenceSet::from_smiles_lines("bad", "CCO\n\nC1CC\n");
        assert!(matches!(bad, Err(ChemSimError::InvalidReference { line: 3, .. })));
    }
}
