//! Query patterns for substructure search.
//!
//! Patterns are written in SMILES with a few extensions:
//!
//! | syntax      | meaning                                         |
//! |-------------|-------------------------------------------------|
//! | `*`         | any non-hydrogen atom, any charge               |
//! | `[#6]`      | element by atomic number, aromatic or not       |
//! | `[C;X4]`    | total connections (neighbours + hydrogens)      |
//! | `[S;D2]`    | heavy-atom degree                               |
//! | `~`         | any bond order                                  |
//!
//! Bare atoms constrain element, aromaticity and a zero charge. Bracket atoms
//! constrain aromaticity and charge exactly, and hydrogens only when an `H`
//! count is written. An unmarked bond is aromatic between two lowercase
//! atoms and single otherwise.

use super::element::Element;
use super::parse::{scan, BondSym, ParseError};
use super::{BondOrder, MolGraph};

#[derive(Clone, Debug, Default, PartialEq, Eq)]
pub struct AtomQuery {
    /// `None` matches any non-hydrogen atom.
    pub element: Option<Element>,
    pub aromatic: Option<bool>,
    pub charge: Option<i8>,
    pub isotope: Option<u16>,
    pub total_h: Option<u8>,
    pub total_connections: Option<u8>,
    pub heavy_degree: Option<u8>,
}

impl AtomQuery {
    pub fn matches(&self, mol: &MolGraph, i: usize) -> bool {
        let a = mol.atom(i);
        let element_ok = match self.element {
            None => !a.element.is_hydrogen(),
            Some(e) => a.element == e,
        };
        element_ok
            && self.aromatic.is_none_or(|x| x == a.aromatic)
            && self.charge.is_none_or(|c| c == a.formal_charge)
            && self.isotope.is_none_or(|iso| a.isotope == Some(iso))
            && self.total_h.is_none_or(|h| h == a.total_h())
            && self.total_connections.is_none_or(|x| x as usize == mol.total_connections(i))
            && self.heavy_degree.is_none_or(|d| d as usize == mol.heavy_degree(i))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BondQuery {
    Order(BondOrder),
    Any,
}

impl BondQuery {
    pub fn matches(self, order: BondOrder) -> bool {
        match self {
            BondQuery::Any => true,
            BondQuery::Order(o) => o == order,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Pattern {
    text: String,
    atoms: Vec<AtomQuery>,
    bonds: Vec<(usize, usize, BondQuery)>,
    adjacency: Vec<Vec<(usize, BondQuery)>>,
}

impl Pattern {
    fn new(text: String, atoms: Vec<AtomQuery>, bonds: Vec<(usize, usize, BondQuery)>) -> Pattern {
        let mut adjacency = vec![Vec::new(); atoms.len()];
        for &(a, b, q) in &bonds {
            adjacency[a].push((b, q));
            adjacency[b].push((a, q));
        }
        Pattern {
            text,
            atoms,
            bonds,
            adjacency,
        }
    }

    /// A pattern that requires element, aromaticity, charge and bond order
    /// to agree with `mol`. Hydrogen counts are left open.
    pub fn from_molecule(mol: &MolGraph) -> Pattern {
        let atoms = mol
            .atoms()
            .iter()
            .map(|a| AtomQuery {
                element: (!a.element.is_wildcard()).then_some(a.element),
                aromatic: Some(a.aromatic),
                charge: Some(a.formal_charge),
                ..AtomQuery::default()
            })
            .collect();
        let bonds = mol
            .bonds()
            .iter()
            .map(|b| (b.a, b.b, BondQuery::Order(b.order)))
            .collect();
        Pattern::new(mol.to_string(), atoms, bonds)
    }

    pub fn text(&self) -> &str {
        &self.text
    }

    pub fn atoms(&self) -> &[AtomQuery] {
        &self.atoms
    }

    pub fn bonds(&self) -> &[(usize, usize, BondQuery)] {
        &self.bonds
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    pub(crate) fn neighbors(&self, i: usize) -> &[(usize, BondQuery)] {
        &self.adjacency[i]
    }
}

pub fn parse_pattern(text: &str) -> Result<Pattern, ParseError> {
    let raw = scan(text, true)?;
    let atoms: Vec<AtomQuery> = raw
        .atoms
        .iter()
        .map(|ra| {
            let el = ra.element.expect("scanner always sets an element");
            let any = el.is_wildcard();
            AtomQuery {
                element: (!any).then_some(el),
                aromatic: (!any && !ra.by_number).then_some(ra.aromatic),
                charge: if any && !ra.bracket { None } else { Some(ra.charge) },
                isotope: ra.isotope,
                total_h: if ra.bracket { ra.hcount } else { None },
                total_connections: ra.total_connections,
                heavy_degree: ra.heavy_degree,
            }
        })
        .collect();
    let bonds = raw
        .bonds
        .iter()
        .map(|rb| {
            let q = match rb.sym {
                None if atoms[rb.a].aromatic == Some(true) && atoms[rb.b].aromatic == Some(true) => {
                    BondQuery::Order(BondOrder::Aromatic)
                }
                None | Some(BondSym::Single | BondSym::Up | BondSym::Down) => BondQuery::Order(BondOrder::Single),
                Some(BondSym::Double) => BondQuery::Order(BondOrder::Double),
                Some(BondSym::Triple) => BondQuery::Order(BondOrder::Triple),
                Some(BondSym::Aromatic) => BondQuery::Order(BondOrder::Aromatic),
                Some(BondSym::Any) => BondQuery::Any,
            };
            (rb.a, rb.b, q)
        })
        .collect();
    Ok(Pattern::new(text.to_string(), atoms, bonds))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn primitives() {
        let p = parse_pattern("[C;X4][OH]").unwrap();
        assert_eq!(p.atoms()[0].total_connections, Some(4));
        assert_eq!(p.atoms()[0].aromatic, Some(false));
        assert_eq!(p.atoms()[1].total_h, Some(1));
        let p = parse_pattern("[#6]~*").unwrap();
        assert_eq!(p.atoms()[0].aromatic, None);
        assert_eq!(p.atoms()[1].element, None);
        assert_eq!(p.bonds()[0].2, BondQuery::Any);
        let p = parse_pattern("*1:*:*:*:*:*:1").unwrap();
        assert_eq!(p.bonds().len(), 6);
        assert!(p.bonds().iter().all(|b| b.2 == BondQuery::Order(BondOrder::Aromatic)));
    }
}
