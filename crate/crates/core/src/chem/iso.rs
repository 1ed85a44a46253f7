//! VF2-style graph isomorphism over molecular graphs, used as the
//! independent oracle for canonicalization round trips and for replay
//! soundness checks.

use alloc::vec;
use alloc::vec::Vec;

use super::graph::{BondOrder, MolGraph};

fn atom_key(g: &MolGraph, i: usize) -> (usize, i8, u8, bool, usize) {
    let a = &g.atoms[i];
    (
        a.element.index(),
        a.formal_charge,
        a.explicit_h,
        a.aromatic,
        g.degree(i),
    )
}

fn bond_compat(a: BondOrder, b: BondOrder) -> bool {
    a == b
}

/// True when the two graphs are isomorphic respecting element, charge,
/// hydrogen count, aromaticity and bond order (aromatic matches aromatic;
/// kekule shadows are ignored).
pub fn isomorphic(g1: &MolGraph, g2: &MolGraph) -> bool {
    if g1.n_atoms() != g2.n_atoms() || g1.n_bonds() != g2.n_bonds() {
        return false;
    }
    let n = g1.n_atoms();
    if n == 0 {
        return true;
    }
    // quick reject on sorted invariant multisets
    let mut k1: Vec<_> = (0..n).map(|i| atom_key(g1, i)).collect();
    let mut k2: Vec<_> = (0..n).map(|i| atom_key(g2, i)).collect();
    k1.sort_unstable();
    k2.sort_unstable();
    if k1 != k2 {
        return false;
    }

    // Match order: BFS from the rarest-key atom, so the search stays tight.
    let order = match_order(g1);
    let mut mapping = vec![usize::MAX; n]; // g1 -> g2
    let mut used = vec![false; n];
    extend(&order, 0, g1, g2, &mut mapping, &mut used)
}

fn match_order(g: &MolGraph) -> Vec<usize> {
    let n = g.n_atoms();
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    // deterministic: loop components, start at highest degree
    loop {
        let mut start = None;
        for (i, &s) in seen.iter().enumerate() {
            if !s {
                start = match start {
                    None => Some(i),
                    Some(s) if g.degree(i) > g.degree(s) => Some(i),
                    s => s,
                };
            }
        }
        let Some(s) = start else { break };
        let mut queue = alloc::collections::VecDeque::new();
        queue.push_back(s);
        seen[s] = true;
        while let Some(u) = queue.pop_front() {
            order.push(u);
            let mut nbrs: Vec<usize> = g
                .neighbors(u)
                .iter()
                .filter(|&&(v, _)| !seen[v])
                .map(|&(v, _)| v)
                .collect();
            nbrs.sort_unstable();
            for v in nbrs {
                if !seen[v] {
                    seen[v] = true;
                    queue.push_back(v);
                }
            }
        }
    }
    order
}

fn extend(
    order: &[usize],
    depth: usize,
    g1: &MolGraph,
    g2: &MolGraph,
    mapping: &mut Vec<usize>,
    used: &mut Vec<bool>,
) -> bool {
    if depth == order.len() {
        return true;
    }
    let u = order[depth];
    let key = atom_key(g1, u);
    // candidates: if u has a mapped neighbor, restrict to that neighbor's
    // image's neighborhood; otherwise any unused atom with the same key.
    let anchor = g1
        .neighbors(u)
        .iter()
        .find(|&&(v, _)| mapping[v] != usize::MAX)
        .map(|&(v, bi)| (mapping[v], g1.bonds[bi].order));

    let candidates: Vec<usize> = match anchor {
        Some((img, ord)) => g2
            .neighbors(img)
            .iter()
            .filter(|&&(w, bi2)| !used[w] && bond_compat(ord, g2.bonds[bi2].order))
            .map(|&(w, _)| w)
            .collect(),
        None => (0..g2.n_atoms()).filter(|&w| !used[w]).collect(),
    };

    'cand: for w in candidates {
        if atom_key(g2, w) != key {
            continue;
        }
        // full adjacency consistency against all already-mapped atoms
        for &(v, bi) in g1.neighbors(u) {
            if mapping[v] == usize::MAX {
                continue;
            }
            match g2.bond_between(w, mapping[v]) {
                Some(bi2) if bond_compat(g1.bonds[bi].order, g2.bonds[bi2].order) => {}
                _ => continue 'cand,
            }
        }
        // reverse direction: mapped g2 neighbors of w must be images of
        // g1 neighbors of u (bond counts are equal, so implied by above)
        mapping[u] = w;
        used[w] = true;
        if extend(order, depth + 1, g1, g2, mapping, used) {
            return true;
        }
        mapping[u] = usize::MAX;
        used[w] = false;
    }
    false
}
