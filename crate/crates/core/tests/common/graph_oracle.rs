//! Exhaustive substructure enumeration: injective assignments of target
//! atoms to pattern atoms in pattern order, rejecting a partial assignment
//! as soon as a bond between two placed pattern atoms is missing.

use std::collections::BTreeSet;

use protochem::molgraph::{BondQuery, MolGraph, Pattern};

/// All matches deduplicated by sorted atom set.
pub fn brute_force_matches(pattern: &Pattern, target: &MolGraph) -> BTreeSet<Vec<usize>> {
    fn rec(k: usize, p: &Pattern, t: &MolGraph, cur: &mut Vec<usize>, out: &mut BTreeSet<Vec<usize>>) {
        if k == p.atom_count() {
            let ok = p.bonds().iter().all(|&(a, b, q): &(usize, usize, BondQuery)| {
                t.bond_between(cur[a], cur[b]).is_some_and(|bd| q.matches(bd.order))
            });
            if ok {
                let mut s = cur.clone();
                s.sort_unstable();
                out.insert(s);
            }
            return;
        }
        for i in 0..t.atom_count() {
            if !cur.contains(&i) && p.atoms()[k].matches(t, i) {
                cur.push(i);
                let consistent = p.bonds().iter().all(|&(a, b, q)| {
                    a.max(b) != k || t.bond_between(cur[a], cur[b]).is_some_and(|bd| q.matches(bd.order))
                });
                if !consistent {
                    cur.pop();
                    continue;
                }
                rec(k + 1, p, t, cur, out);
                cur.pop();
            }
        }
    }
    let mut out = BTreeSet::new();
    rec(0, pattern, target, &mut Vec::new(), &mut out);
    out
}
