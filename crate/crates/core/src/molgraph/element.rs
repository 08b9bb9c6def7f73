//! Element symbols, atomic numbers, and the valence table.

use std::fmt;

const SYMBOLS: [&str; 119] = [
    "*", "H", "He", "Li", "Be", "B", "C", "N", "O", "F", "Ne", "Na", "Mg", "Al", "Si", "P", "S",
    "Cl", "Ar", "K", "Ca", "Sc", "Ti", "V", "Cr", "Mn", "Fe", "Co", "Ni", "Cu", "Zn", "Ga", "Ge",
    "As", "Se", "Br", "Kr", "Rb", "Sr", "Y", "Zr", "Nb", "Mo", "Tc", "Ru", "Rh", "Pd", "Ag", "Cd",
    "In", "Sn", "Sb", "Te", "I", "Xe", "Cs", "Ba", "La", "Ce", "Pr", "Nd", "Pm", "Sm", "Eu", "Gd",
    "Tb", "Dy", "Ho", "Er", "Tm", "Yb", "Lu", "Hf", "Ta", "W", "Re", "Os", "Ir", "Pt", "Au", "Hg",
    "Tl", "Pb", "Bi", "Po", "At", "Rn", "Fr", "Ra", "Ac", "Th", "Pa", "U", "Np", "Pu", "Am", "Cm",
    "Bk", "Cf", "Es", "Fm", "Md", "No", "Lr", "Rf", "Db", "Sg", "Bh", "Hs", "Mt", "Ds", "Rg", "Cn",
    "Nh", "Fl", "Mc", "Lv", "Ts", "Og",
];

/// A chemical element identified by atomic number. Atomic number 0 is the
/// SMILES wildcard atom `*`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Element(u8);

impl Element {
    pub const WILDCARD: Element = Element(0);
    pub const H: Element = Element(1);
    pub const B: Element = Element(5);
    pub const C: Element = Element(6);
    pub const N: Element = Element(7);
    pub const O: Element = Element(8);
    pub const F: Element = Element(9);
    pub const P: Element = Element(15);
    pub const S: Element = Element(16);
    pub const CL: Element = Element(17);
    pub const BR: Element = Element(35);
    pub const I: Element = Element(53);

    pub fn from_atomic_number(z: u8) -> Option<Element> {
        ((z as usize) < SYMBOLS.len()).then_some(Element(z))
    }

    /// Looks up a symbol written with conventional capitalization ("Cl", not "CL").
    pub fn from_symbol(symbol: &str) -> Option<Element> {
        SYMBOLS
            .iter()
            .position(|s| *s == symbol)
            .map(|z| Element(z as u8))
    }

    pub fn atomic_number(self) -> u8 {
        self.0
    }

    pub fn symbol(self) -> &'static str {
        SYMBOLS[self.0 as usize]
    }

    pub fn is_wildcard(self) -> bool {
        self.0 == 0
    }

    pub fn is_hydrogen(self) -> bool {
        self.0 == 1
    }

    /// Elements that may be written without brackets.
    pub fn is_organic_subset(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 9 | 15 | 16 | 17 | 35 | 53)
    }

    /// Elements that may be written as bare lowercase aromatic atoms.
    pub fn is_bare_aromatic(self) -> bool {
        matches!(self.0, 5 | 6 | 7 | 8 | 15 | 16)
    }

    /// Elements accepted as lowercase aromatic symbols inside brackets.
    pub fn can_be_aromatic(self) -> bool {
        self.is_bare_aromatic() || matches!(self.0, 33 | 34 | 52)
    }

    /// Normal valences of the neutral element, ascending. Empty for elements
    /// outside the table (metals, noble gases), which are not valence-checked.
    pub fn normal_valences(self) -> &'static [u8] {
        match self.0 {
            1 => &[1],
            5 => &[3],
            6 => &[4],
            7 => &[3, 5],
            8 => &[2],
            9 | 17 | 35 | 53 => &[1],
            14 => &[4],
            15 => &[3, 5],
            16 => &[2, 4, 6],
            33 => &[3, 5],
            34 => &[2, 4, 6],
            _ => &[],
        }
    }

    /// Allowed valences once formal charge is taken into account. A charged
    /// atom takes the valences of its isoelectronic neighbour in the table
    /// (N+ behaves like C, O- like F, B- like C).
    pub fn allowed_valences(self, charge: i8) -> &'static [u8] {
        if charge == 0 {
            return self.normal_valences();
        }
        let shifted = self.0 as i16 - charge as i16;
        if !(1..=118).contains(&shifted) {
            return &[];
        }
        // Shifting across a period boundary (e.g. F- to O-like) is meaningless;
        // keep the lookup within the same row as the real element.
        if period(self.0) != period(shifted as u8) {
            return &[];
        }
        Element(shifted as u8).normal_valences()
    }
}

fn period(z: u8) -> u8 {
    match z {
        0..=2 => 1,
        3..=10 => 2,
        11..=18 => 3,
        19..=36 => 4,
        37..=54 => 5,
        55..=86 => 6,
        _ => 7,
    }
}

impl fmt::Display for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn symbol_roundtrip() {
        for z in 0..=118u8 {
            let e = Element::from_atomic_number(z).unwrap();
            assert_eq!(Element::from_symbol(e.symbol()), Some(e));
        }
        assert_eq!(Element::from_symbol("Xx"), None);
    }

    #[test]
    fn charge_adjusted_valences() {
        assert_eq!(Element::N.allowed_valences(1), &[4]);
        assert_eq!(Element::O.allowed_valences(-1), &[1]);
        assert_eq!(Element::O.allowed_valences(1), &[3, 5]);
        assert_eq!(Element::B.allowed_valences(-1), &[4]);
        assert_eq!(Element::C.allowed_valences(1), &[3]);
        // Pd carries no valence table at all.
        assert!(Element::from_symbol("Pd").unwrap().allowed_valences(2).is_empty());
    }
}
