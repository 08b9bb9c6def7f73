//! Ring perception: bridge detection and small-cycle membership.

use super::Bond;

/// Marks every bond that lies on at least one cycle (i.e. is not a bridge).
/// Iterative Tarjan lowlink so long chains cannot overflow the stack.
pub(crate) fn ring_bonds(n: usize, bonds: &[Bond], adjacency: &[Vec<(usize, usize)>]) -> Vec<bool> {
    let mut in_ring = vec![true; bonds.len()];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![0usize; n];
    let mut time = 0usize;
    // (vertex, bond used to enter it, next adjacency index)
    let mut stack: Vec<(usize, usize, usize)> = Vec::new();
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        disc[root] = time;
        low[root] = time;
        time += 1;
        stack.push((root, usize::MAX, 0));
        while let Some(&mut (v, via, ref mut next)) = stack.last_mut() {
            if *next < adjacency[v].len() {
                let (w, bi) = adjacency[v][*next];
                *next += 1;
                if bi == via {
                    continue;
                }
                if disc[w] == usize::MAX {
                    disc[w] = time;
                    low[w] = time;
                    time += 1;
                    stack.push((w, bi, 0));
                } else {
                    low[v] = low[v].min(disc[w]);
                }
            } else {
                stack.pop();
                if let Some(&(parent, _, _)) = stack.last() {
                    low[parent] = low[parent].min(low[v]);
                    if low[v] > disc[parent] {
                        in_ring[via] = false;
                    }
                }
            }
        }
    }
    in_ring
}

/// True when `start` lies on a simple cycle of `min..=max` atoms using only
/// edges accepted by `edge_ok`. Depth-bounded DFS; molecules are small.
pub(crate) fn on_cycle_of_size(
    start: usize,
    adjacency: &[Vec<(usize, usize)>],
    min: usize,
    max: usize,
    edge_ok: &dyn Fn(usize, usize) -> bool,
) -> Option<Vec<usize>> {
    fn dfs(
        path: &mut Vec<usize>,
        start: usize,
        adjacency: &[Vec<(usize, usize)>],
        min: usize,
        max: usize,
        edge_ok: &dyn Fn(usize, usize) -> bool,
    ) -> bool {
        let v = *path.last().unwrap();
        for &(w, bi) in &adjacency[v] {
            if !edge_ok(bi, w) {
                continue;
            }
            if w == start && path.len() >= min {
                return true;
            }
            if path.len() < max && !path.contains(&w) {
                path.push(w);
                if dfs(path, start, adjacency, min, max, edge_ok) {
                    return true;
                }
                path.pop();
            }
        }
        false
    }
    let mut path = vec![start];
    dfs(&mut path, start, adjacency, min, max, edge_ok).then_some(path)
}
