//! Subgraph monomorphism search (VF2-style backtracking).

use std::collections::BTreeSet;

use super::pattern::{BondQuery, Pattern};
use super::MolGraph;

/// All matches of a plain molecule used as a pattern. See
/// [`Pattern::from_molecule`] for what has to agree.
pub fn substructure_match(pattern: &MolGraph, target: &MolGraph) -> Vec<Vec<usize>> {
    substructure_match_pattern(&Pattern::from_molecule(pattern), target)
}

/// Every match of `pattern` in `target`, one per distinct matched atom set.
/// Entry `k` of a mapping is the target atom matched to pattern atom `k`.
/// Results are ordered by their sorted atom sets.
pub fn substructure_match_pattern(pattern: &Pattern, target: &MolGraph) -> Vec<Vec<usize>> {
    let n = pattern.atom_count();
    if n == 0 || n > target.atom_count() {
        return Vec::new();
    }
    let order = match_order(pattern);
    let mut state = State {
        pattern,
        target,
        order: &order,
        map: vec![usize::MAX; n],
        used: vec![false; target.atom_count()],
        seen: BTreeSet::new(),
        out: Vec::new(),
    };
    state.extend(0);
    let mut out = state.out;
    out.sort_by_cached_key(|m| {
        let mut s = m.clone();
        s.sort_unstable();
        s
    });
    out
}

/// Pattern atoms in breadth-first order, each paired with an earlier
/// neighbour to anchor its candidate set (None starts a new component).
fn match_order(p: &Pattern) -> Vec<(usize, Option<usize>)> {
    let n = p.atom_count();
    let mut seen = vec![false; n];
    let mut order = Vec::with_capacity(n);
    for start in 0..n {
        if seen[start] {
            continue;
        }
        seen[start] = true;
        order.push((start, None));
        let mut k = order.len() - 1;
        while k < order.len() {
            let v = order[k].0;
            k += 1;
            for &(w, _) in p.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    order.push((w, Some(v)));
                }
            }
        }
    }
    order
}

struct State<'a> {
    pattern: &'a Pattern,
    target: &'a MolGraph,
    order: &'a [(usize, Option<usize>)],
    map: Vec<usize>,
    used: Vec<bool>,
    seen: BTreeSet<Vec<usize>>,
    out: Vec<Vec<usize>>,
}

impl State<'_> {
    fn extend(&mut self, depth: usize) {
        if depth == self.order.len() {
            let mut key = self.map.clone();
            key.sort_unstable();
            if self.seen.insert(key) {
                self.out.push(self.map.clone());
            }
            return;
        }
        let (q, anchor) = self.order[depth];
        let candidates: Vec<usize> = match anchor {
            Some(a) => self.target.neighbors(self.map[a]).iter().map(|&(t, _)| t).collect(),
            None => (0..self.target.atom_count()).collect(),
        };
        for t in candidates {
            if self.used[t] || !self.feasible(q, t) {
                continue;
            }
            self.map[q] = t;
            self.used[t] = true;
            self.extend(depth + 1);
            self.used[t] = false;
            self.map[q] = usize::MAX;
        }
    }

    fn feasible(&self, q: usize, t: usize) -> bool {
        if !self.pattern.atoms()[q].matches(self.target, t) {
            return false;
        }
        self.pattern.neighbors(q).iter().all(|&(qn, bq): &(usize, BondQuery)| {
            let tn = self.map[qn];
            tn == usize::MAX
                || self
                    .target
                    .bond_between(t, tn)
                    .is_some_and(|b| bq.matches(b.order))
        })
    }
}
