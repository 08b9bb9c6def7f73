//! Implicit hydrogens, valence checks and the aromatic ring-size rule.
//!
//! Valence of an atom is the sum of its bond contributions plus its
//! hydrogens. Aromatic bonds contribute 1, so aromatic atoms are checked
//! against a lower bound; there is no kekulization.

use super::parse::{parse_unchecked, ParseError, ParseErrorKind};
use super::rings::on_cycle_of_size;
use super::{BondOrder, MolGraph};

/// Aromatic atoms must sit on an all-aromatic ring of this many atoms.
pub const AROMATIC_RING_SIZES: std::ops::RangeInclusive<usize> = 5..=7;

fn bond_sum(g: &MolGraph, i: usize) -> (u8, bool) {
    let mut s = 0u8;
    let mut aromatic = false;
    for &(_, bi) in g.neighbors(i) {
        let order = g.bonds()[bi].order;
        aromatic |= order == BondOrder::Aromatic;
        s = s.saturating_add(order.valence_contribution());
    }
    (s, aromatic)
}

/// Hydrogens implied on a bare (organic-subset) atom given its bonds.
pub(crate) fn implicit_hydrogens(g: &MolGraph, i: usize) -> u8 {
    let atom = g.atom(i);
    let valences = atom.element.normal_valences();
    let (s, has_aromatic_bond) = bond_sum(g, i);
    let Some(&v) = valences.iter().find(|&&v| v >= s) else {
        return 0;
    };
    let h = v - s;
    if atom.aromatic && has_aromatic_bond && h >= 1 {
        h - 1
    } else {
        h
    }
}

pub(crate) fn atom_valence(g: &MolGraph, i: usize) -> u8 {
    bond_sum(g, i).0.saturating_add(g.atom(i).total_h())
}

/// Every valence and aromaticity violation, ordered by atom index
/// (valence before aromaticity for the same atom).
pub(crate) fn diagnostics(g: &MolGraph) -> Vec<ParseError> {
    let mut out = Vec::new();
    let mut on_good_ring = vec![false; g.atom_count()];
    let adjacency: Vec<Vec<(usize, usize)>> = (0..g.atom_count()).map(|i| g.neighbors(i).to_vec()).collect();
    for i in 0..g.atom_count() {
        let atom = g.atom(i);
        let allowed = atom.element.allowed_valences(atom.formal_charge);
        let valence = atom_valence(g, i);
        if let Some(&max) = allowed.last() {
            if valence > max {
                out.push(ParseError {
                    kind: ParseErrorKind::ValenceViolation {
                        atom: i,
                        valence,
                        allowed: allowed.to_vec(),
                    },
                    offset: g.source_offset(i),
                });
            }
        }
        if atom.aromatic && !on_good_ring[i] {
            let edge_ok = |_bi: usize, w: usize| g.atom(w).aromatic;
            match on_cycle_of_size(
                i,
                &adjacency,
                *AROMATIC_RING_SIZES.start(),
                *AROMATIC_RING_SIZES.end(),
                &edge_ok,
            ) {
                Some(cycle) => {
                    for v in cycle {
                        on_good_ring[v] = true;
                    }
                }
                None => out.push(ParseError {
                    kind: ParseErrorKind::AromaticOutsideRing { atom: i },
                    offset: g.source_offset(i),
                }),
            }
        }
    }
    out
}

/// Verdict of [`is_valid`]: `valid` is true iff `diagnostics` is empty.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Validity {
    pub valid: bool,
    pub diagnostics: Vec<ParseError>,
}

/// Checks syntax, valences and the aromatic ring rule, collecting every
/// violation rather than stopping at the first.
pub fn is_valid(text: &str) -> Validity {
    let diagnostics = match parse_unchecked(text) {
        Ok(g) => diagnostics(&g),
        Err(e) => vec![e],
    };
    Validity {
        valid: diagnostics.is_empty(),
        diagnostics,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn simple_verdicts() {
        assert!(is_valid("CCO").valid);
        let v = is_valid("C(C)(C)(C)(C)C");
        assert!(!v.valid);
        assert!(matches!(
            v.diagnostics[0].kind,
            ParseErrorKind::ValenceViolation { atom: 0, valence: 5, .. }
        ));
        let v = is_valid("c1ccc1");
        assert!(!v.valid);
        assert_eq!(v.diagnostics.len(), 4);
        assert!(v
            .diagnostics
            .iter()
            .all(|d| matches!(d.kind, ParseErrorKind::AromaticOutsideRing { .. })));
    }

    #[test]
    fn ring_size_window() {
        assert!(is_valid("c1cc[nH]c1").valid);
        assert!(is_valid("c1ccccc1").valid);
        assert!(is_valid("c1cccccc1").valid);
        assert!(!is_valid("c1ccccccc1").valid);
        assert!(!is_valid("cC").valid);
        // Naphthalene and azulene: every atom on some 5-7 ring.
        assert!(is_valid("c1ccc2ccccc2c1").valid);
        assert!(is_valid("c1cc2cccccc2c1").valid);
    }

    #[test]
    fn collects_every_violation() {
        let v = is_valid("FC(F)(F)(F)F.O(C)(C)C");
        assert_eq!(v.diagnostics.len(), 2);
    }

    #[test]
    fn charged_valences() {
        assert!(is_valid("C[N+](C)(C)C").valid);
        assert!(is_valid("[O-]C").valid);
        assert!(is_valid("C[N+](=O)[O-]").valid);
        assert!(!is_valid("C[N+](C)(C)(C)C").valid);
        assert!(is_valid("[NH4+]").valid);
        assert!(is_valid("[Pd+2]").valid);
        assert!(is_valid("CN(=O)=O").valid);
        assert!(is_valid("OS(=O)(=O)O").valid);
    }

    #[test]
    fn syntax_error_is_a_diagnostic() {
        let v = is_valid("C(");
        assert_eq!(v.diagnostics.len(), 1);
        assert_eq!(v.diagnostics[0].offset, 1);
    }
}
