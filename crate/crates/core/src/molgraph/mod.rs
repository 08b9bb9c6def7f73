//! Molecular graphs parsed from SMILES: parsing, validation, canonical
//! output, substructure matching and functional-group detection.

mod canon;
mod element;
mod groups;
mod isomorphism;
mod parse;
mod pattern;
mod rings;
mod substructure;
mod valence;

pub use canon::{canonicalize, canonicalize_with, write_smiles, CanonOptions, CanonicalSmiles};
pub use element::Element;
pub use groups::{
    detect_functional_groups, functional_group_table, FunctionalGroup, FunctionalGroupHit,
    TABLE_VERSION as FUNCTIONAL_GROUP_TABLE_VERSION,
};
pub use isomorphism::is_isomorphic;
pub use parse::{parse_smiles, ParseError, ParseErrorKind};
pub use pattern::{parse_pattern, AtomQuery, BondQuery, Pattern};
pub use substructure::{substructure_match, substructure_match_pattern};
pub use valence::{is_valid, Validity};

use std::fmt;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer code used in invariants and hashes.
    pub fn code(self) -> u8 {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }

    /// Contribution to valence. Aromatic bonds count as 1; see `valence`.
    pub fn valence_contribution(self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }
}

/// Directional single-bond marker, read from atom `a` towards atom `b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum BondStereo {
    /// `/`
    Up,
    /// `\`
    Down,
}

impl BondStereo {
    pub fn flipped(self) -> BondStereo {
        match self {
            BondStereo::Up => BondStereo::Down,
            BondStereo::Down => BondStereo::Up,
        }
    }
}

/// Tetrahedral tag. `@` is counterclockwise, `@@` clockwise, looking from the
/// first neighbour in the reference order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Chirality {
    CounterClockwise,
    Clockwise,
}

impl Chirality {
    pub fn inverted(self) -> Chirality {
        match self {
            Chirality::CounterClockwise => Chirality::Clockwise,
            Chirality::Clockwise => Chirality::CounterClockwise,
        }
    }
}

/// One entry of a chiral atom's neighbour reference order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum NeighborSlot {
    Atom(usize),
    /// The bracket hydrogen(s) of the centre itself.
    Hydrogen,
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub aromatic: bool,
    pub formal_charge: i8,
    pub isotope: Option<u16>,
    /// Hydrogen count written inside brackets. `Some` exactly for bracket atoms.
    pub explicit_h: Option<u8>,
    pub chirality: Option<Chirality>,
    pub(crate) implicit_h: u8,
    /// Reference order for `chirality`; empty when there is no tag.
    pub(crate) chiral_ref: Vec<NeighborSlot>,
}

impl Atom {
    pub fn total_h(&self) -> u8 {
        self.explicit_h.unwrap_or(self.implicit_h)
    }

    pub fn is_bracket(&self) -> bool {
        self.explicit_h.is_some()
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub stereo: Option<BondStereo>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if self.a == atom {
            self.b
        } else {
            self.a
        }
    }

    /// Stereo marker as seen when walking from `from` across the bond.
    pub fn stereo_from(&self, from: usize) -> Option<BondStereo> {
        self.stereo
            .map(|s| if from == self.a { s } else { s.flipped() })
    }
}

/// An attributed molecular graph. Construct through [`parse_smiles`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MolGraph {
    atoms: Vec<Atom>,
    bonds: Vec<Bond>,
    ring_membership: Vec<bool>,
    adjacency: Vec<Vec<(usize, usize)>>,
    offsets: Vec<usize>,
}

impl MolGraph {
    pub(crate) fn from_parts(atoms: Vec<Atom>, bonds: Vec<Bond>, offsets: Vec<usize>) -> MolGraph {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            adjacency[b.a].push((b.b, i));
            adjacency[b.b].push((b.a, i));
        }
        let ring_bonds = rings::ring_bonds(atoms.len(), &bonds, &adjacency);
        let mut ring_membership = vec![false; atoms.len()];
        for (i, b) in bonds.iter().enumerate() {
            if ring_bonds[i] {
                ring_membership[b.a] = true;
                ring_membership[b.b] = true;
            }
        }
        MolGraph {
            atoms,
            bonds,
            ring_membership,
            adjacency,
            offsets,
        }
    }

    pub fn atoms(&self) -> &[Atom] {
        &self.atoms
    }

    pub fn atom(&self, i: usize) -> &Atom {
        &self.atoms[i]
    }

    pub fn bonds(&self) -> &[Bond] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Atoms other than hydrogen (written `[H]` atoms are excluded).
    pub fn heavy_atom_count(&self) -> usize {
        self.atoms.iter().filter(|a| !a.element.is_hydrogen()).count()
    }

    pub fn is_empty(&self) -> bool {
        self.atoms.is_empty()
    }

    /// `(neighbour, bond index)` pairs in bond-creation order.
    pub fn neighbors(&self, i: usize) -> &[(usize, usize)] {
        &self.adjacency[i]
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<&Bond> {
        self.adjacency[a]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, bi)| &self.bonds[*bi])
    }

    pub fn degree(&self, i: usize) -> usize {
        self.adjacency[i].len()
    }

    /// Number of neighbours that are not hydrogen atoms.
    pub fn heavy_degree(&self, i: usize) -> usize {
        self.adjacency[i]
            .iter()
            .filter(|(n, _)| !self.atoms[*n].element.is_hydrogen())
            .count()
    }

    /// Graph neighbours plus implicit and bracket hydrogens.
    pub fn total_connections(&self, i: usize) -> usize {
        self.degree(i) + self.atoms[i].total_h() as usize
    }

    pub fn is_in_ring(&self, i: usize) -> bool {
        self.ring_membership[i]
    }

    pub fn ring_membership(&self) -> &[bool] {
        &self.ring_membership
    }

    /// Character offset of the token that produced atom `i`.
    pub fn source_offset(&self, i: usize) -> usize {
        self.offsets.get(i).copied().unwrap_or(0)
    }

    /// Atom indices of each connected component, each sorted ascending.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let mut seen = vec![false; self.atoms.len()];
        let mut out = Vec::new();
        for start in 0..self.atoms.len() {
            if seen[start] {
                continue;
            }
            let mut comp = vec![start];
            seen[start] = true;
            let mut k = 0;
            while k < comp.len() {
                let v = comp[k];
                k += 1;
                for &(n, _) in &self.adjacency[v] {
                    if !seen[n] {
                        seen[n] = true;
                        comp.push(n);
                    }
                }
            }
            comp.sort_unstable();
            out.push(comp);
        }
        out
    }

    /// Relabels atoms so that old atom `i` becomes atom `perm[i]`. Bonds keep
    /// their list position; stereo references follow the relabelling.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.atoms.len(), "permutation length");
        let mut atoms = vec![None; self.atoms.len()];
        let mut offsets = vec![0; self.atoms.len()];
        for (old, atom) in self.atoms.iter().enumerate() {
            let mut a = atom.clone();
            for slot in a.chiral_ref.iter_mut() {
                if let NeighborSlot::Atom(n) = slot {
                    *n = perm[*n];
                }
            }
            atoms[perm[old]] = Some(a);
            offsets[perm[old]] = self.source_offset(old);
        }
        let atoms = atoms
            .into_iter()
            .map(|a| a.expect("perm is a bijection"))
            .collect();
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond {
                a: perm[b.a],
                b: perm[b.b],
                ..*b
            })
            .collect();
        MolGraph::from_parts(atoms, bonds, offsets)
    }

    /// Same graph with the bond list reordered; `order[k]` is the old index
    /// of the bond placed at position `k`.
    pub fn with_bond_order(&self, order: &[usize]) -> MolGraph {
        let bonds = order.iter().map(|&k| self.bonds[k]).collect();
        MolGraph::from_parts(self.atoms.clone(), bonds, self.offsets.clone())
    }

    /// Copy with chirality tags and directional bond markers removed.
    pub fn without_stereo(&self) -> MolGraph {
        let mut atoms = self.atoms.clone();
        for a in atoms.iter_mut() {
            a.chirality = None;
            a.chiral_ref.clear();
        }
        let bonds = self
            .bonds
            .iter()
            .map(|b| Bond { stereo: None, ..*b })
            .collect();
        MolGraph::from_parts(atoms, bonds, self.offsets.clone())
    }

    pub fn has_stereo(&self) -> bool {
        self.atoms.iter().any(|a| a.chirality.is_some())
            || self.bonds.iter().any(|b| b.stereo.is_some())
    }

    /// Count of atoms per element symbol (hydrogen atoms written as `[H]`
    /// included under "H").
    pub fn element_counts(&self) -> std::collections::BTreeMap<String, usize> {
        let mut m = std::collections::BTreeMap::new();
        for a in &self.atoms {
            *m.entry(a.element.symbol().to_string()).or_insert(0) += 1;
        }
        m
    }
}

impl fmt::Display for MolGraph {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&canonicalize(self).text)
    }
}
