//! SMILES reader. One scanner serves both molecules and the query patterns
//! used by the functional-group table; pattern-only syntax is rejected when
//! reading molecules.

use std::collections::BTreeMap;

use thiserror::Error;

use super::element::Element;
use super::{valence, Atom, Bond, BondOrder, BondStereo, Chirality, MolGraph, NeighborSlot};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ParseErrorKind {
    #[error("empty input")]
    Empty,
    #[error("unbalanced parenthesis")]
    UnbalancedParenthesis,
    #[error("ring bond {0} is never closed")]
    UnpairedRingBond(u32),
    #[error("unknown element")]
    UnknownElement,
    #[error("unexpected character {0:?}")]
    UnexpectedChar(char),
    #[error("unexpected end of input")]
    UnexpectedEnd,
    #[error("bond symbol not followed by an atom")]
    DanglingBond,
    #[error("ring closure bond symbols disagree")]
    RingBondMismatch,
    #[error("atom bonded to itself")]
    SelfLoop,
    #[error("two bonds between the same pair of atoms")]
    ParallelBond,
    #[error("atom {atom} has valence {valence}, allowed {allowed:?}")]
    ValenceViolation {
        atom: usize,
        valence: u8,
        allowed: Vec<u8>,
    },
    #[error("aromatic atom {atom} is not in a 5-7 membered aromatic ring")]
    AromaticOutsideRing { atom: usize },
    #[error("unsupported syntax: {0}")]
    Unsupported(&'static str),
}

/// A parse or validation failure with the character offset of the token at fault.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("{kind} at offset {offset}")]
pub struct ParseError {
    pub kind: ParseErrorKind,
    pub offset: usize,
}

impl ParseError {
    fn new(kind: ParseErrorKind, offset: usize) -> ParseError {
        ParseError { kind, offset }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub(crate) enum BondSym {
    Single,
    Double,
    Triple,
    Aromatic,
    Up,
    Down,
    Any,
}

#[derive(Clone, Debug, Default)]
pub(crate) struct RawAtom {
    pub offset: usize,
    pub element: Option<Element>,
    /// `[#n]`: element given by number, aromaticity unconstrained.
    pub by_number: bool,
    pub aromatic: bool,
    pub bracket: bool,
    pub isotope: Option<u16>,
    pub hcount: Option<u8>,
    pub charge: i8,
    pub chirality: Option<Chirality>,
    pub total_connections: Option<u8>,
    pub heavy_degree: Option<u8>,
    pub slots: Vec<NeighborSlot>,
}

#[derive(Clone, Copy, Debug)]
pub(crate) struct RawBond {
    pub a: usize,
    pub b: usize,
    pub sym: Option<BondSym>,
}

#[derive(Debug, Default)]
pub(crate) struct RawGraph {
    pub atoms: Vec<RawAtom>,
    pub bonds: Vec<RawBond>,
}

struct RingOpen {
    atom: usize,
    sym: Option<BondSym>,
    offset: usize,
    slot: usize,
}

struct Scanner<'a> {
    s: &'a [u8],
    i: usize,
    pattern: bool,
}

impl<'a> Scanner<'a> {
    fn peek(&self) -> Option<u8> {
        self.s.get(self.i).copied()
    }

    fn peek_at(&self, k: usize) -> Option<u8> {
        self.s.get(self.i + k).copied()
    }

    fn err<T>(&self, kind: ParseErrorKind) -> Result<T, ParseError> {
        Err(ParseError::new(kind, self.i))
    }

    fn number(&mut self) -> Option<u32> {
        let start = self.i;
        while matches!(self.peek(), Some(b'0'..=b'9')) {
            self.i += 1;
        }
        if self.i == start {
            return None;
        }
        std::str::from_utf8(&self.s[start..self.i]).ok()?.parse().ok()
    }

    fn bracket_atom(&mut self) -> Result<RawAtom, ParseError> {
        let open = self.i;
        self.i += 1;
        let mut atom = RawAtom {
            offset: open,
            bracket: true,
            ..RawAtom::default()
        };
        if let Some(n) = self.number() {
            if n == 0 || n > u16::MAX as u32 {
                return Err(ParseError::new(ParseErrorKind::Unsupported("isotope out of range"), open + 1));
            }
            atom.isotope = Some(n as u16);
        }
        self.bracket_symbol(&mut atom)?;
        if self.peek() == Some(b'@') {
            self.i += 1;
            atom.chirality = Some(if self.peek() == Some(b'@') {
                self.i += 1;
                Chirality::Clockwise
            } else {
                Chirality::CounterClockwise
            });
            let class = [self.peek(), self.peek_at(1)];
            if matches!(
                class,
                [Some(b'T'), Some(b'H' | b'B')] | [Some(b'A'), Some(b'L')] | [Some(b'S'), Some(b'P')] | [Some(b'O'), Some(b'H')]
            ) {
                return self.err(ParseErrorKind::Unsupported("extended chirality class"));
            }
        }
        if self.peek() == Some(b'H') {
            self.i += 1;
            let n = self.single_digit().unwrap_or(1);
            atom.hcount = Some(n);
        }
        if let Some(sign @ (b'+' | b'-')) = self.peek() {
            self.i += 1;
            let unit: i32 = if sign == b'+' { 1 } else { -1 };
            let mut magnitude = 1i32;
            if let Some(n) = self.number() {
                magnitude = n as i32;
            } else {
                while self.peek() == Some(sign) {
                    self.i += 1;
                    magnitude += 1;
                }
            }
            if magnitude > 15 {
                return self.err(ParseErrorKind::Unsupported("charge magnitude above 15"));
            }
            atom.charge = (unit * magnitude) as i8;
        }
        if self.peek() == Some(b':') {
            // Atom-map class: accepted and discarded.
            self.i += 1;
            if self.number().is_none() {
                return self.err(ParseErrorKind::UnexpectedChar(':'));
            }
        }
        while self.pattern && self.peek() == Some(b';') {
            self.i += 1;
            let which = self.peek();
            self.i += 1;
            let n = self.number().ok_or(ParseError::new(ParseErrorKind::UnexpectedEnd, self.i))?;
            let n = u8::try_from(n).map_err(|_| ParseError::new(ParseErrorKind::Unsupported("count too large"), self.i))?;
            match which {
                Some(b'X') => atom.total_connections = Some(n),
                Some(b'D') => atom.heavy_degree = Some(n),
                _ => return Err(ParseError::new(ParseErrorKind::Unsupported("pattern primitive"), self.i - 1)),
            }
        }
        match self.peek() {
            Some(b']') => {
                self.i += 1;
                Ok(atom)
            }
            Some(c) => self.err(ParseErrorKind::UnexpectedChar(c as char)),
            None => Err(ParseError::new(ParseErrorKind::UnexpectedEnd, self.i)),
        }
    }

    fn single_digit(&mut self) -> Option<u8> {
        match self.peek() {
            Some(d @ b'0'..=b'9') => {
                self.i += 1;
                Some(d - b'0')
            }
            _ => None,
        }
    }

    fn bracket_symbol(&mut self, atom: &mut RawAtom) -> Result<(), ParseError> {
        let start = self.i;
        match self.peek() {
            Some(b'*') => {
                self.i += 1;
                atom.element = Some(Element::WILDCARD);
            }
            Some(b'#') if self.pattern => {
                self.i += 1;
                let z = self.number().ok_or(ParseError::new(ParseErrorKind::UnknownElement, start))?;
                let e = u8::try_from(z)
                    .ok()
                    .and_then(Element::from_atomic_number)
                    .filter(|e| !e.is_wildcard())
                    .ok_or(ParseError::new(ParseErrorKind::UnknownElement, start))?;
                atom.element = Some(e);
                atom.by_number = true;
            }
            Some(c) if c.is_ascii_uppercase() => {
                let two = self
                    .peek_at(1)
                    .filter(|n| n.is_ascii_lowercase())
                    .and_then(|n| {
                        let sym = [c, n];
                        Element::from_symbol(std::str::from_utf8(&sym).ok()?)
                    });
                if let Some(e) = two {
                    self.i += 2;
                    atom.element = Some(e);
                } else if let Some(e) = Element::from_symbol(std::str::from_utf8(&[c]).unwrap()) {
                    self.i += 1;
                    atom.element = Some(e);
                } else {
                    return self.err(ParseErrorKind::UnknownElement);
                }
            }
            Some(c) if c.is_ascii_lowercase() => {
                let two = self.peek_at(1).and_then(|n| match [c, n] {
                    [b's', b'e'] => Element::from_symbol("Se"),
                    [b'a', b's'] => Element::from_symbol("As"),
                    [b't', b'e'] => Element::from_symbol("Te"),
                    _ => None,
                });
                if let Some(e) = two {
                    self.i += 2;
                    atom.element = Some(e);
                } else {
                    let upper = (c as char).to_ascii_uppercase().to_string();
                    match Element::from_symbol(&upper).filter(|e| e.can_be_aromatic()) {
                        Some(e) => {
                            self.i += 1;
                            atom.element = Some(e);
                        }
                        None => return self.err(ParseErrorKind::UnknownElement),
                    }
                }
                atom.aromatic = true;
            }
            Some(_) => return self.err(ParseErrorKind::UnknownElement),
            None => return self.err(ParseErrorKind::UnexpectedEnd),
        }
        Ok(())
    }

    fn organic_atom(&mut self) -> Result<RawAtom, ParseError> {
        let offset = self.i;
        let c = self.peek().unwrap();
        let (element, aromatic, len) = match c {
            b'C' if self.peek_at(1) == Some(b'l') => (Element::CL, false, 2),
            b'B' if self.peek_at(1) == Some(b'r') => (Element::BR, false, 2),
            b'B' => (Element::B, false, 1),
            b'C' => (Element::C, false, 1),
            b'N' => (Element::N, false, 1),
            b'O' => (Element::O, false, 1),
            b'P' => (Element::P, false, 1),
            b'S' => (Element::S, false, 1),
            b'F' => (Element::F, false, 1),
            b'I' => (Element::I, false, 1),
            b'b' => (Element::B, true, 1),
            b'c' => (Element::C, true, 1),
            b'n' => (Element::N, true, 1),
            b'o' => (Element::O, true, 1),
            b'p' => (Element::P, true, 1),
            b's' => (Element::S, true, 1),
            b'*' => (Element::WILDCARD, false, 1),
            _ => return self.err(ParseErrorKind::UnknownElement),
        };
        self.i += len;
        Ok(RawAtom {
            offset,
            element: Some(element),
            aromatic,
            ..RawAtom::default()
        })
    }
}

fn bond_sym(c: u8, pattern: bool) -> Option<BondSym> {
    Some(match c {
        b'-' => BondSym::Single,
        b'=' => BondSym::Double,
        b'#' => BondSym::Triple,
        b':' => BondSym::Aromatic,
        b'/' => BondSym::Up,
        b'\\' => BondSym::Down,
        b'~' if pattern => BondSym::Any,
        _ => return None,
    })
}

/// Tokenizes and assembles the raw graph. Structural checks that need the
/// whole graph (valence, rings) happen later.
pub(crate) fn scan(text: &str, pattern: bool) -> Result<RawGraph, ParseError> {
    let mut sc = Scanner {
        s: text.as_bytes(),
        i: 0,
        pattern,
    };
    if sc.s.is_empty() {
        return Err(ParseError::new(ParseErrorKind::Empty, 0));
    }
    let mut g = RawGraph::default();
    let mut prev: Option<usize> = None;
    let mut branches: Vec<(usize, usize)> = Vec::new();
    let mut pending: Option<(BondSym, usize)> = None;
    let mut rings: BTreeMap<u32, RingOpen> = BTreeMap::new();
    let mut pairs: BTreeMap<(usize, usize), ()> = BTreeMap::new();
    // Set after '(' or '.', cleared when an atom arrives.
    let mut need_atom: Option<usize> = None;

    let mut add_bond = |g: &mut RawGraph, a: usize, b: usize, sym: Option<BondSym>, at: usize| -> Result<(), ParseError> {
        if a == b {
            return Err(ParseError::new(ParseErrorKind::SelfLoop, at));
        }
        let key = (a.min(b), a.max(b));
        if pairs.insert(key, ()).is_some() {
            return Err(ParseError::new(ParseErrorKind::ParallelBond, at));
        }
        g.bonds.push(RawBond { a, b, sym });
        Ok(())
    };

    while let Some(c) = sc.peek() {
        match c {
            b'(' => {
                let Some(p) = prev else {
                    return sc.err(ParseErrorKind::UnexpectedChar('('));
                };
                if pending.is_some() || need_atom.is_some() {
                    return sc.err(ParseErrorKind::UnexpectedChar('('));
                }
                branches.push((p, sc.i));
                need_atom = Some(sc.i);
                sc.i += 1;
            }
            b')' => {
                if need_atom.is_some() {
                    return sc.err(ParseErrorKind::UnexpectedChar(')'));
                }
                if let Some((_, at)) = pending {
                    return Err(ParseError::new(ParseErrorKind::DanglingBond, at));
                }
                let Some((p, _)) = branches.pop() else {
                    return sc.err(ParseErrorKind::UnbalancedParenthesis);
                };
                prev = Some(p);
                sc.i += 1;
            }
            b'.' => {
                if let Some((_, at)) = pending {
                    return Err(ParseError::new(ParseErrorKind::DanglingBond, at));
                }
                if prev.is_none() || need_atom.is_some() {
                    return sc.err(ParseErrorKind::UnexpectedChar('.'));
                }
                prev = None;
                need_atom = Some(sc.i);
                sc.i += 1;
            }
            b'0'..=b'9' | b'%' => {
                let at = sc.i;
                let Some(cur) = prev else {
                    return sc.err(ParseErrorKind::UnexpectedChar(c as char));
                };
                if need_atom.is_some() {
                    return sc.err(ParseErrorKind::UnexpectedChar(c as char));
                }
                let digit = if c == b'%' {
                    sc.i += 1;
                    let d1 = sc.single_digit();
                    let d2 = sc.single_digit();
                    match (d1, d2) {
                        (Some(a), Some(b)) => (a * 10 + b) as u32,
                        _ => return Err(ParseError::new(ParseErrorKind::UnexpectedChar('%'), at)),
                    }
                } else {
                    sc.i += 1;
                    (c - b'0') as u32
                };
                let sym = pending.take().map(|(s, _)| s);
                if let Some(open) = rings.remove(&digit) {
                    let (a, b, sym) = match (open.sym, sym) {
                        (Some(x), Some(y)) if x != y && !is_directional_pair(x, y) => {
                            return Err(ParseError::new(ParseErrorKind::RingBondMismatch, at));
                        }
                        (Some(x), _) => (open.atom, cur, Some(x)),
                        (None, Some(y)) => (cur, open.atom, Some(y)),
                        (None, None) => (open.atom, cur, None),
                    };
                    add_bond(&mut g, a, b, sym, at)?;
                    g.atoms[open.atom].slots[open.slot] = NeighborSlot::Atom(cur);
                    g.atoms[cur].slots.push(NeighborSlot::Atom(open.atom));
                } else {
                    let slot = g.atoms[cur].slots.len();
                    // Placeholder until the closing digit names the partner.
                    g.atoms[cur].slots.push(NeighborSlot::Atom(usize::MAX));
                    rings.insert(
                        digit,
                        RingOpen {
                            atom: cur,
                            sym,
                            offset: at,
                            slot,
                        },
                    );
                }
            }
            b'[' | b'A'..=b'Z' | b'a'..=b'z' | b'*' => {
                let mut atom = if c == b'[' { sc.bracket_atom()? } else { sc.organic_atom()? };
                let idx = g.atoms.len();
                if let Some(p) = prev {
                    atom.slots.push(NeighborSlot::Atom(p));
                }
                if atom.hcount.unwrap_or(0) > 0 {
                    atom.slots.push(NeighborSlot::Hydrogen);
                }
                let at = atom.offset;
                g.atoms.push(atom);
                if let Some(p) = prev {
                    let sym = pending.take().map(|(s, _)| s);
                    add_bond(&mut g, p, idx, sym, at)?;
                    g.atoms[p].slots.push(NeighborSlot::Atom(idx));
                }
                prev = Some(idx);
                need_atom = None;
            }
            _ => {
                if let Some(sym) = bond_sym(c, sc.pattern) {
                    if pending.is_some() || prev.is_none() {
                        return sc.err(ParseErrorKind::UnexpectedChar(c as char));
                    }
                    pending = Some((sym, sc.i));
                    sc.i += 1;
                } else {
                    return sc.err(ParseErrorKind::UnexpectedChar(c as char));
                }
            }
        }
    }
    if let Some((_, at)) = pending {
        return Err(ParseError::new(ParseErrorKind::DanglingBond, at));
    }
    if let Some(&(_, at)) = branches.first() {
        return Err(ParseError::new(ParseErrorKind::UnbalancedParenthesis, at));
    }
    if let Some(at) = need_atom {
        return Err(ParseError::new(ParseErrorKind::UnexpectedEnd, at));
    }
    if let Some((digit, open)) = rings.iter().min_by_key(|(_, o)| o.offset) {
        return Err(ParseError::new(ParseErrorKind::UnpairedRingBond(*digit), open.offset));
    }
    Ok(g)
}

fn is_directional_pair(x: BondSym, y: BondSym) -> bool {
    matches!(x, BondSym::Up | BondSym::Down) && matches!(y, BondSym::Up | BondSym::Down)
}

/// Builds a molecule from the raw graph without valence or aromaticity checks.
pub(crate) fn build_molecule(raw: RawGraph) -> Result<MolGraph, ParseError> {
    let mut bonds = Vec::with_capacity(raw.bonds.len());
    for rb in &raw.bonds {
        let (aa, ab) = (&raw.atoms[rb.a], &raw.atoms[rb.b]);
        let (order, stereo) = match rb.sym {
            None if aa.aromatic && ab.aromatic => (BondOrder::Aromatic, None),
            None | Some(BondSym::Single) => (BondOrder::Single, None),
            Some(BondSym::Double) => (BondOrder::Double, None),
            Some(BondSym::Triple) => (BondOrder::Triple, None),
            Some(BondSym::Aromatic) => (BondOrder::Aromatic, None),
            Some(BondSym::Up) => (BondOrder::Single, Some(BondStereo::Up)),
            Some(BondSym::Down) => (BondOrder::Single, Some(BondStereo::Down)),
            Some(BondSym::Any) => unreachable!("'~' is rejected outside patterns"),
        };
        bonds.push(Bond {
            a: rb.a,
            b: rb.b,
            order,
            stereo,
        });
    }
    let offsets: Vec<usize> = raw.atoms.iter().map(|a| a.offset).collect();
    let atoms: Vec<Atom> = raw
        .atoms
        .into_iter()
        .map(|ra| Atom {
            element: ra.element.expect("scanner always sets an element"),
            aromatic: ra.aromatic,
            formal_charge: ra.charge,
            isotope: ra.isotope,
            explicit_h: ra.bracket.then(|| ra.hcount.unwrap_or(0)),
            chirality: ra.chirality,
            implicit_h: 0,
            chiral_ref: if ra.chirality.is_some() { ra.slots } else { Vec::new() },
        })
        .collect();
    // Aromatic bonds that are bridges (e.g. the biphenyl link written without
    // a bond symbol) are single bonds.
    let probe = MolGraph::from_parts(atoms, bonds, offsets);
    let ring = super::rings::ring_bonds(probe.atoms.len(), &probe.bonds, &probe.adjacency);
    let MolGraph {
        mut atoms,
        mut bonds,
        offsets,
        ..
    } = probe;
    for (i, b) in bonds.iter_mut().enumerate() {
        if b.order == BondOrder::Aromatic && !ring[i] {
            b.order = BondOrder::Single;
        }
    }
    let mut g = MolGraph::from_parts(std::mem::take(&mut atoms), bonds, offsets);
    for i in 0..g.atoms.len() {
        if !g.atoms[i].is_bracket() {
            g.atoms[i].implicit_h = valence::implicit_hydrogens(&g, i);
        }
    }
    Ok(g)
}

/// Syntax-only parse: a graph is returned even if valence or aromaticity
/// rules are broken.
pub(crate) fn parse_unchecked(text: &str) -> Result<MolGraph, ParseError> {
    build_molecule(scan(text, false)?)
}

/// Parses a SMILES string and enforces the valence and aromaticity rules.
/// The first violation (in atom order) is returned as the error.
pub fn parse_smiles(text: &str) -> Result<MolGraph, ParseError> {
    let g = parse_unchecked(text)?;
    if let Some(first) = valence::diagnostics(&g).into_iter().next() {
        return Err(first);
    }
    Ok(g)
}
