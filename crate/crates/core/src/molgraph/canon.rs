//! Canonical SMILES.
//!
//! Atoms are ranked by iterative invariant refinement. Remaining ties are
//! broken by an individualization-refinement search that keeps the
//! lexicographically smallest emitted string; leaves that emit identical
//! strings reveal automorphisms, which prune sibling branches.
//!
//! Emission is a depth-first walk from the lowest-ranked atom of each
//! component, visiting neighbours in rank order. The last child continues
//! the main chain, earlier children become branches. Ring-closure digits use
//! the lowest free number; the bond symbol is written at the opening digit.
//! At an atom, closing digits come before opening digits.
//!
//! Stereo: a tetrahedral tag is re-expressed relative to the output
//! neighbour order (previous atom, hydrogen, ring digits in written order,
//! then branches and chain); an odd permutation of the input reference
//! order flips `@` and `@@`. Directional bond markers are flipped when the
//! bond is written from its other end. Stereo marks take part in the string
//! comparison, so equivalent spellings of the same marks pick one form.

use std::cmp::Ordering;
use std::hash::Hasher;

use fnv::FnvHasher;

use super::valence::implicit_hydrogens;
use super::{BondOrder, BondStereo, Chirality, MolGraph, NeighborSlot};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct CanonOptions {
    /// Keep `@`/`@@` and `/`/`\` marks. When false they are stripped first.
    pub stereo: bool,
}

impl Default for CanonOptions {
    fn default() -> Self {
        CanonOptions { stereo: true }
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct CanonicalSmiles {
    pub text: String,
    /// FNV-1a 64 of `text`.
    pub source_hash: u64,
}

impl CanonicalSmiles {
    fn new(text: String) -> CanonicalSmiles {
        let mut h = FnvHasher::default();
        h.write(text.as_bytes());
        CanonicalSmiles {
            source_hash: h.finish(),
            text,
        }
    }
}

pub fn canonicalize(mol: &MolGraph) -> CanonicalSmiles {
    canonicalize_with(mol, CanonOptions::default())
}

pub fn canonicalize_with(mol: &MolGraph, opts: CanonOptions) -> CanonicalSmiles {
    if mol.is_empty() {
        return CanonicalSmiles::new(String::new());
    }
    if !opts.stereo && mol.has_stereo() {
        return canonicalize_with(&mol.without_stereo(), opts);
    }
    let mut search = Search {
        mol,
        best: None,
        first: None,
        autos: Vec::new(),
    };
    let mut ranks = initial_ranks(mol);
    refine(mol, &mut ranks);
    search.visit(ranks, &mut Vec::new());
    CanonicalSmiles::new(search.best.expect("at least one leaf").0)
}

/// Writes SMILES for an explicit atom ranking (lower rank is visited first).
/// Equal ranks are broken by atom index. Useful for producing alternative
/// spellings of a molecule.
pub fn write_smiles(mol: &MolGraph, ranks: &[u32]) -> String {
    assert_eq!(ranks.len(), mol.atom_count(), "one rank per atom");
    let mut idx: Vec<usize> = (0..ranks.len()).collect();
    idx.sort_by_key(|&i| (ranks[i], i));
    let mut total = vec![0u32; ranks.len()];
    for (r, &i) in idx.iter().enumerate() {
        total[i] = r as u32;
    }
    emit(mol, &total).0
}

fn initial_ranks(mol: &MolGraph) -> Vec<u32> {
    let keys: Vec<_> = (0..mol.atom_count())
        .map(|i| {
            let a = mol.atom(i);
            (
                a.element.atomic_number(),
                a.isotope.unwrap_or(0),
                a.formal_charge,
                mol.heavy_degree(i),
                a.total_h(),
                a.aromatic,
                mol.degree(i),
                a.chirality.is_some(),
            )
        })
        .collect();
    dense_ranks(&keys)
}

fn dense_ranks<K: Ord>(keys: &[K]) -> Vec<u32> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0u32; keys.len()];
    let mut r = 0u32;
    for k in 0..idx.len() {
        if k > 0 && keys[idx[k]] != keys[idx[k - 1]] {
            r += 1;
        }
        ranks[idx[k]] = r;
    }
    ranks
}

fn cell_count(ranks: &[u32]) -> usize {
    ranks.iter().max().map_or(0, |m| *m as usize + 1)
}

/// Splits cells by sorted neighbour (rank, bond) lists until stable. Cells
/// keep their relative order, so refinement only ever splits.
fn refine(mol: &MolGraph, ranks: &mut Vec<u32>) {
    let mut cells = cell_count(ranks);
    loop {
        if cells == ranks.len() {
            return;
        }
        let keys: Vec<(u32, Vec<(u32, u8)>)> = (0..mol.atom_count())
            .map(|i| {
                let mut nb: Vec<(u32, u8)> = mol
                    .neighbors(i)
                    .iter()
                    .map(|&(n, bi)| (ranks[n], mol.bonds()[bi].order.code()))
                    .collect();
                nb.sort_unstable();
                (ranks[i], nb)
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_cells = cell_count(&next);
        *ranks = next;
        if next_cells == cells {
            return;
        }
        cells = next_cells;
    }
}

fn individualize(ranks: &[u32], v: usize) -> Vec<u32> {
    let keys: Vec<(u32, bool)> = ranks.iter().enumerate().map(|(i, &r)| (r, i != v)).collect();
    dense_ranks(&keys)
}

struct Leaf {
    text: String,
    order: Vec<usize>,
}

struct Search<'a> {
    mol: &'a MolGraph,
    best: Option<(String, Vec<usize>)>,
    first: Option<(String, Vec<usize>)>,
    autos: Vec<Vec<usize>>,
}

impl Search<'_> {
    fn visit(&mut self, mut ranks: Vec<u32>, prefix: &mut Vec<usize>) {
        refine(self.mol, &mut ranks);
        let n = ranks.len();
        if cell_count(&ranks) == n {
            let (text, order) = emit(self.mol, &ranks);
            self.leaf(Leaf { text, order });
            return;
        }
        let mut sizes = vec![0usize; cell_count(&ranks)];
        for &r in &ranks {
            sizes[r as usize] += 1;
        }
        let target = sizes.iter().position(|&s| s > 1).expect("non-discrete partition") as u32;
        let cell: Vec<usize> = (0..n).filter(|&i| ranks[i] == target).collect();
        let mut tried: Vec<usize> = Vec::new();
        for &v in &cell {
            if !tried.is_empty() {
                let orbit = self.orbits(prefix, n);
                let ov = find(&orbit, v);
                if tried.iter().any(|&u| find(&orbit, u) == ov) {
                    continue;
                }
            }
            tried.push(v);
            let child = individualize(&ranks, v);
            prefix.push(v);
            self.visit(child, prefix);
            prefix.pop();
        }
    }

    /// Union-find parents of the orbit partition generated by the known
    /// automorphisms that fix every atom of `prefix`.
    fn orbits(&self, prefix: &[usize], n: usize) -> Vec<usize> {
        let mut parent: Vec<usize> = (0..n).collect();
        for g in &self.autos {
            if prefix.iter().all(|&p| g[p] == p) {
                for (i, &j) in g.iter().enumerate() {
                    let (a, b) = (find(&parent, i), find(&parent, j));
                    if a != b {
                        parent[a.max(b)] = a.min(b);
                    }
                }
            }
        }
        parent
    }

    fn leaf(&mut self, leaf: Leaf) {
        for known in [&self.first, &self.best].into_iter().flatten() {
            if known.0 == leaf.text {
                let mut g = vec![0usize; leaf.order.len()];
                for (k, &atom) in known.1.iter().enumerate() {
                    g[atom] = leaf.order[k];
                }
                if g.iter().enumerate().any(|(i, &j)| i != j) && !self.autos.contains(&g) {
                    self.autos.push(g);
                }
            }
        }
        if self.first.is_none() {
            self.first = Some((leaf.text.clone(), leaf.order.clone()));
        }
        let better = match &self.best {
            None => true,
            Some((t, _)) => leaf.text.cmp(t) == Ordering::Less,
        };
        if better {
            self.best = Some((leaf.text, leaf.order));
        }
    }
}

fn find(parent: &[usize], mut x: usize) -> usize {
    while parent[x] != x {
        x = parent[x];
    }
    x
}

struct Walk {
    visited: Vec<bool>,
    children: Vec<Vec<(usize, usize)>>,
    /// Ring bonds opened at an atom: (partner, bond).
    opens: Vec<Vec<(usize, usize)>>,
    /// Ring bonds closed at an atom: (partner, bond).
    closes: Vec<Vec<(usize, usize)>>,
    bond_used: Vec<bool>,
    visit_pos: Vec<usize>,
    counter: usize,
}

/// Emits SMILES for a total ranking, returning the text and the atom order
/// in which atoms were written.
fn emit(mol: &MolGraph, ranks: &[u32]) -> (String, Vec<usize>) {
    let n = mol.atom_count();
    let sorted_nbrs: Vec<Vec<(usize, usize)>> = (0..n)
        .map(|i| {
            let mut v = mol.neighbors(i).to_vec();
            v.sort_by_key(|&(nb, _)| ranks[nb]);
            v
        })
        .collect();
    let mut walk = Walk {
        visited: vec![false; n],
        children: vec![Vec::new(); n],
        opens: vec![Vec::new(); n],
        closes: vec![Vec::new(); n],
        bond_used: vec![false; mol.bonds().len()],
        visit_pos: vec![0; n],
        counter: 0,
    };
    let mut by_rank: Vec<usize> = (0..n).collect();
    by_rank.sort_by_key(|&i| ranks[i]);
    let mut roots = Vec::new();
    for &r in &by_rank {
        if !walk.visited[r] {
            roots.push(r);
            plan(r, &sorted_nbrs, &mut walk);
        }
    }
    for list in walk.opens.iter_mut() {
        list.sort_by_key(|&(p, _)| ranks[p]);
    }
    for list in walk.closes.iter_mut() {
        list.sort_by_key(|&(p, _)| walk.visit_pos[p]);
    }
    let mut out = Writer {
        mol,
        walk: &walk,
        text: String::with_capacity(n * 2),
        order: Vec::with_capacity(n),
        // Ring number 0 is never handed out.
        digits: vec![true],
        bond_digit: vec![0; mol.bonds().len()],
    };
    for (k, &root) in roots.iter().enumerate() {
        if k > 0 {
            out.text.push('.');
        }
        out.atom(root, None);
    }
    (out.text, out.order)
}

fn plan(root: usize, nbrs: &[Vec<(usize, usize)>], walk: &mut Walk) {
    // Iterative DFS: (atom, bond used to reach it, next neighbour index).
    let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
    walk.visited[root] = true;
    walk.visit_pos[root] = walk.counter;
    walk.counter += 1;
    while let Some(top) = stack.last_mut() {
        let (u, via, next) = *top;
        if next == nbrs[u].len() {
            stack.pop();
            continue;
        }
        top.2 += 1;
        let (w, bi) = nbrs[u][next];
        if bi == via || walk.bond_used[bi] {
            continue;
        }
        walk.bond_used[bi] = true;
        if walk.visited[w] {
            walk.opens[w].push((u, bi));
            walk.closes[u].push((w, bi));
        } else {
            walk.visited[w] = true;
            walk.visit_pos[w] = walk.counter;
            walk.counter += 1;
            walk.children[u].push((w, bi));
            stack.push((w, bi, 0));
        }
    }
}

struct Writer<'a> {
    mol: &'a MolGraph,
    walk: &'a Walk,
    text: String,
    order: Vec<usize>,
    /// digits[d] is true while ring number d is in use.
    digits: Vec<bool>,
    bond_digit: Vec<usize>,
}

impl Writer<'_> {
    fn atom(&mut self, u: usize, from: Option<(usize, usize)>) {
        let walk = self.walk;
        let mut out_ref: Vec<NeighborSlot> = Vec::new();
        if let Some((p, _)) = from {
            out_ref.push(NeighborSlot::Atom(p));
        }
        let atom = self.mol.atom(u);
        if atom.total_h() > 0 {
            out_ref.push(NeighborSlot::Hydrogen);
        }
        for &(p, _) in &walk.closes[u] {
            out_ref.push(NeighborSlot::Atom(p));
        }
        for &(p, _) in &walk.opens[u] {
            out_ref.push(NeighborSlot::Atom(p));
        }
        for &(c, _) in &walk.children[u] {
            out_ref.push(NeighborSlot::Atom(c));
        }
        let chirality = atom.chirality.map(|c| {
            if permutation_is_odd(&atom.chiral_ref, &out_ref) {
                c.inverted()
            } else {
                c
            }
        });
        self.order.push(u);
        write_atom(self.mol, u, chirality, &mut self.text);

        for &(_, bi) in &walk.closes[u] {
            let d = self.bond_digit[bi];
            self.digits[d] = false;
            push_digit(&mut self.text, d);
        }
        for &(_, bi) in &walk.opens[u] {
            let d = match self.digits.iter().position(|open| !open) {
                Some(k) => k,
                None => {
                    self.digits.push(false);
                    self.digits.len() - 1
                }
            };
            self.digits[d] = true;
            self.bond_digit[bi] = d;
            self.text.push_str(bond_symbol(self.mol, bi, u));
            push_digit(&mut self.text, d);
        }
        let kids = &walk.children[u];
        for (k, &(c, bi)) in kids.iter().enumerate() {
            let last = k + 1 == kids.len();
            if !last {
                self.text.push('(');
            }
            self.text.push_str(bond_symbol(self.mol, bi, u));
            self.atom(c, Some((u, bi)));
            if !last {
                self.text.push(')');
            }
        }
    }
}

fn push_digit(text: &mut String, d: usize) {
    if d < 10 {
        text.push(char::from(b'0' + d as u8));
    } else {
        text.push('%');
        text.push_str(&format!("{d:02}"));
    }
}

fn permutation_is_odd(reference: &[NeighborSlot], out: &[NeighborSlot]) -> bool {
    if reference.len() != out.len() {
        return false;
    }
    let pos: Vec<usize> = out
        .iter()
        .map(|s| reference.iter().position(|r| r == s).unwrap_or(0))
        .collect();
    let mut inversions = 0;
    for i in 0..pos.len() {
        for j in i + 1..pos.len() {
            if pos[i] > pos[j] {
                inversions += 1;
            }
        }
    }
    inversions % 2 == 1
}

fn bond_symbol(mol: &MolGraph, bi: usize, from: usize) -> &'static str {
    let b = &mol.bonds()[bi];
    let both_aromatic = mol.atom(b.a).aromatic && mol.atom(b.b).aromatic;
    match b.order {
        BondOrder::Single => match b.stereo_from(from) {
            Some(BondStereo::Up) => "/",
            Some(BondStereo::Down) => "\\",
            None if both_aromatic => "-",
            None => "",
        },
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic if both_aromatic => "",
        BondOrder::Aromatic => ":",
    }
}

fn write_atom(mol: &MolGraph, i: usize, chirality: Option<Chirality>, out: &mut String) {
    let a = mol.atom(i);
    let el = a.element;
    let bare_ok = chirality.is_none()
        && a.isotope.is_none()
        && a.formal_charge == 0
        && (el.is_organic_subset() || el.is_wildcard())
        && (!a.aromatic || el.is_bare_aromatic())
        && implicit_hydrogens(mol, i) == a.total_h();
    let symbol = if a.aromatic {
        el.symbol().to_ascii_lowercase()
    } else {
        el.symbol().to_string()
    };
    if bare_ok {
        out.push_str(&symbol);
        return;
    }
    out.push('[');
    if let Some(iso) = a.isotope {
        out.push_str(&iso.to_string());
    }
    out.push_str(&symbol);
    match chirality {
        Some(Chirality::CounterClockwise) => out.push('@'),
        Some(Chirality::Clockwise) => out.push_str("@@"),
        None => {}
    }
    match a.total_h() {
        0 => {}
        1 => out.push('H'),
        h => {
            out.push('H');
            out.push_str(&h.to_string());
        }
    }
    match a.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("-{}", -c)),
    }
    out.push(']');
}
