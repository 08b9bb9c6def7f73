//! Labelled graph isomorphism, kept independent of the canonicalizer so it
//! can serve as a check on it. Colour refinement over the disjoint union of
//! both graphs, then backtracking within colour classes.
//!
//! Labels compared: element, aromaticity, charge, isotope, hydrogen count,
//! presence of a tetrahedral tag; bond order and presence of a directional
//! marker.

use std::collections::BTreeMap;

use super::MolGraph;

pub fn is_isomorphic(a: &MolGraph, b: &MolGraph) -> bool {
    let n = a.atom_count();
    if n != b.atom_count() || a.bonds().len() != b.bonds().len() {
        return false;
    }
    if n == 0 {
        return true;
    }
    let colors = refine_union(a, b);
    let (ca, cb) = colors.split_at(n);
    let hist = |c: &[u32]| {
        let mut h = BTreeMap::new();
        for &x in c {
            *h.entry(x).or_insert(0usize) += 1;
        }
        h
    };
    if hist(ca) != hist(cb) {
        return false;
    }
    let mut map = vec![usize::MAX; n];
    let mut used = vec![false; n];
    let order = bfs_order(a);
    backtrack(a, b, ca, cb, &order, 0, &mut map, &mut used)
}

fn bond_label(g: &MolGraph, bi: usize) -> (u8, bool) {
    let b = g.bonds()[bi];
    (b.order.code(), b.stereo.is_some())
}

fn refine_union(a: &MolGraph, b: &MolGraph) -> Vec<u32> {
    let graphs = [a, b];
    let nodes: Vec<(usize, usize)> = (0..2)
        .flat_map(|g| (0..graphs[g].atom_count()).map(move |i| (g, i)))
        .collect();
    let label = |&(g, i): &(usize, usize)| {
        let at = graphs[g].atom(i);
        (
            at.element.atomic_number(),
            at.aromatic,
            at.formal_charge,
            at.isotope,
            at.total_h(),
            at.chirality.is_some(),
        )
    };
    let mut color = densify(&nodes.iter().map(label).collect::<Vec<_>>());
    let offset = a.atom_count();
    loop {
        let sig: Vec<(u32, Vec<(u32, (u8, bool))>)> = nodes
            .iter()
            .map(|&(g, i)| {
                let base = if g == 0 { 0 } else { offset };
                let mut nb: Vec<_> = graphs[g]
                    .neighbors(i)
                    .iter()
                    .map(|&(w, bi)| (color[base + w], bond_label(graphs[g], bi)))
                    .collect();
                nb.sort_unstable();
                (color[base + i], nb)
            })
            .collect();
        let next = densify(&sig);
        let stable = next.iter().max() == color.iter().max();
        color = next;
        if stable {
            return color;
        }
    }
}

fn densify<K: Ord + Clone>(keys: &[K]) -> Vec<u32> {
    let distinct: BTreeMap<K, u32> = keys
        .iter()
        .cloned()
        .collect::<std::collections::BTreeSet<_>>()
        .into_iter()
        .enumerate()
        .map(|(k, v)| (v, k as u32))
        .collect();
    keys.iter().map(|k| distinct[k]).collect()
}

fn bfs_order(g: &MolGraph) -> Vec<usize> {
    let mut seen = vec![false; g.atom_count()];
    let mut order = Vec::new();
    for s in 0..g.atom_count() {
        if seen[s] {
            continue;
        }
        seen[s] = true;
        order.push(s);
        let mut k = order.len() - 1;
        while k < order.len() {
            let v = order[k];
            k += 1;
            for &(w, _) in g.neighbors(v) {
                if !seen[w] {
                    seen[w] = true;
                    order.push(w);
                }
            }
        }
    }
    order
}

#[allow(clippy::too_many_arguments)]
fn backtrack(
    a: &MolGraph,
    b: &MolGraph,
    ca: &[u32],
    cb: &[u32],
    order: &[usize],
    depth: usize,
    map: &mut [usize],
    used: &mut [bool],
) -> bool {
    if depth == order.len() {
        return true;
    }
    let u = order[depth];
    for v in 0..b.atom_count() {
        if used[v] || ca[u] != cb[v] {
            continue;
        }
        // Every already-mapped neighbour relation must be mirrored exactly.
        let ok = a.neighbors(u).iter().all(|&(w, bi)| {
            map[w] == usize::MAX
                || b.neighbors(v)
                    .iter()
                    .any(|&(x, bj)| x == map[w] && bond_label(a, bi) == bond_label(b, bj))
        }) && b.neighbors(v).iter().all(|&(x, _)| {
            !used[x] || a.neighbors(u).iter().any(|&(w, _)| map[w] == x)
        });
        if !ok {
            continue;
        }
        map[u] = v;
        used[v] = true;
        if backtrack(a, b, ca, cb, order, depth + 1, map, used) {
            return true;
        }
        map[u] = usize::MAX;
        used[v] = false;
    }
    false
}
