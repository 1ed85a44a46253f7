//! Canonical atom ranking by iterative neighborhood refinement and the
//! deterministic SMILES writer built on it.
//!
//! Ranks refine an initial invariant (element, charge, degree, H count,
//! aromaticity, ring membership) until stable; residual ties are resolved by
//! tentatively promoting each member of the first tied class and keeping the
//! lexicographically smallest emitted string.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use super::graph::{bare_atom_h, BondOrder, MolGraph};

/// Canonical rank per atom (0 = first emitted). Invariant under input atom
/// order for graphs without symmetry-breaking ties, and resolved by minimal
/// output string otherwise.
pub fn canonical_ranks(g: &MolGraph) -> Vec<usize> {
    canonicalize(g).0
}

/// Canonical SMILES. Components are emitted separately and joined by '.' in
/// sorted order.
pub fn write_smiles(g: &MolGraph) -> String {
    canonicalize(g).1
}

fn canonicalize(g: &MolGraph) -> (Vec<usize>, String) {
    let n = g.n_atoms();
    if n == 0 {
        return (Vec::new(), String::new());
    }
    let init: Vec<Vec<u64>> = (0..n)
        .map(|i| {
            let a = &g.atoms[i];
            vec![
                a.element.index() as u64,
                (a.formal_charge as i64 + 8) as u64,
                g.degree(i) as u64,
                a.explicit_h as u64,
                a.aromatic as u64,
                g.atom_in_ring(i) as u64,
            ]
        })
        .collect();
    let ranks = refine(g, dense_ranks(&init));
    search(g, ranks)
}

/// Dense 0-based ranks from arbitrary comparable keys.
fn dense_ranks(keys: &[Vec<u64>]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..keys.len()).collect();
    idx.sort_by(|&a, &b| keys[a].cmp(&keys[b]));
    let mut ranks = vec![0usize; keys.len()];
    let mut r = 0usize;
    for w in 0..idx.len() {
        if w > 0 && keys[idx[w]] != keys[idx[w - 1]] {
            r = w;
        }
        ranks[idx[w]] = r;
    }
    ranks
}

fn distinct(ranks: &[usize]) -> usize {
    let mut sorted = ranks.to_vec();
    sorted.sort_unstable();
    sorted.dedup();
    sorted.len()
}

/// Iterates neighborhood refinement until the partition stops splitting.
fn refine(g: &MolGraph, mut ranks: Vec<usize>) -> Vec<usize> {
    let n = g.n_atoms();
    let mut count = distinct(&ranks);
    loop {
        let keys: Vec<Vec<u64>> = (0..n)
            .map(|i| {
                let mut nbrs: Vec<u64> = g
                    .neighbors(i)
                    .iter()
                    .map(|&(v, bi)| {
                        (g.bonds[bi].order.class() as u64) << 32 | ranks[v] as u64
                    })
                    .collect();
                nbrs.sort_unstable();
                let mut key = Vec::with_capacity(nbrs.len() + 1);
                key.push(ranks[i] as u64);
                key.extend(nbrs);
                key
            })
            .collect();
        let next = dense_ranks(&keys);
        let next_count = distinct(&next);
        ranks = next;
        if next_count == count || next_count == n {
            return ranks;
        }
        count = next_count;
    }
}

/// Resolves residual ties: each member of the lowest tied class is promoted
/// in turn, the refinement re-run, and the smallest resulting string kept.
fn search(g: &MolGraph, ranks: Vec<usize>) -> (Vec<usize>, String) {
    let n = g.n_atoms();
    if distinct(&ranks) == n {
        let s = emit(g, &ranks);
        return (ranks, s);
    }
    let mut tied_rank = usize::MAX;
    for i in 0..n {
        let r = ranks[i];
        if ranks.iter().filter(|&&x| x == r).count() > 1 {
            tied_rank = tied_rank.min(r);
        }
    }
    let members: Vec<usize> = (0..n).filter(|&i| ranks[i] == tied_rank).collect();
    let mut best: Option<(Vec<usize>, String)> = None;
    for &m in &members {
        let keys: Vec<Vec<u64>> = (0..n)
            .map(|i| vec![ranks[i] as u64 * 2 + if i == m { 0 } else { 1 }])
            .collect();
        let refined = refine(g, dense_ranks(&keys));
        let cand = search(g, refined);
        best = match best {
            None => Some(cand),
            Some(b) => {
                if cand.1 < b.1 {
                    Some(cand)
                } else {
                    Some(b)
                }
            }
        };
    }
    best.expect("tied class is non-empty")
}

fn bond_symbol(g: &MolGraph, bi: usize) -> &'static str {
    let b = &g.bonds[bi];
    match b.order {
        BondOrder::Single => {
            if g.atoms[b.a].aromatic && g.atoms[b.b].aromatic {
                "-"
            } else {
                ""
            }
        }
        BondOrder::Double => "=",
        BondOrder::Triple => "#",
        BondOrder::Aromatic => "",
    }
}

fn atom_token(g: &MolGraph, i: usize) -> String {
    let a = &g.atoms[i];
    let mut sym = String::from(a.element.symbol());
    if a.aromatic {
        sym = sym.to_ascii_lowercase();
    }
    let bare_ok = a.map_num.is_none()
        && a.formal_charge == 0
        && bare_atom_h(g, i) == Some(a.explicit_h);
    if bare_ok {
        return sym;
    }
    let mut out = String::from("[");
    out.push_str(&sym);
    match a.explicit_h {
        0 => {}
        1 => out.push('H'),
        h => out.push_str(&format!("H{h}")),
    }
    match a.formal_charge {
        0 => {}
        1 => out.push('+'),
        -1 => out.push('-'),
        c if c > 0 => out.push_str(&format!("+{c}")),
        c => out.push_str(&format!("{c}")),
    }
    if let Some(m) = a.map_num {
        out.push_str(&format!(":{m}"));
    }
    out.push(']');
    out
}

/// Emits the SMILES for the whole graph under the given ranks.
fn emit(g: &MolGraph, ranks: &[usize]) -> String {
    let mut parts: Vec<String> = g
        .components()
        .iter()
        .map(|comp| emit_component(g, ranks, comp))
        .collect();
    parts.sort();
    parts.join(".")
}

fn emit_component(g: &MolGraph, ranks: &[usize], comp: &[usize]) -> String {
    let root = *comp
        .iter()
        .min_by_key(|&&i| ranks[i])
        .expect("component non-empty");

    // Pass 1: DFS (children ordered by rank) to find tree edges and ring
    // closure bonds, recorded at both endpoints in discovery order.
    let n = g.n_atoms();
    let mut visited = vec![false; n];
    let mut children: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
    let mut ring_at: Vec<Vec<usize>> = vec![Vec::new(); n];
    let mut bond_seen = vec![false; g.n_bonds()];

    // (atom, parent bond)
    let mut stack = vec![(root, usize::MAX)];
    visited[root] = true;
    while let Some((u, pb)) = stack.pop() {
        let mut nbrs: Vec<(usize, usize)> = g.neighbors(u).to_vec();
        nbrs.sort_by_key(|&(v, _)| ranks[v]);
        for &(v, bi) in &nbrs {
            if bi == pb || bond_seen[bi] {
                continue;
            }
            if visited[v] {
                bond_seen[bi] = true;
                ring_at[v].push(bi);
                ring_at[u].push(bi);
            } else {
                bond_seen[bi] = true;
                visited[v] = true;
                children[u].push((v, bi));
                stack.push((v, bi));
            }
        }
    }
    // The stack-based discovery above visits children in reverse; rebuild
    // children lists in rank order for emission.
    for list in children.iter_mut() {
        list.sort_by_key(|&(v, _)| ranks[v]);
    }

    // Pass 2: emit recursively with digit bookkeeping.
    let mut digit_of_bond: Vec<Option<u32>> = vec![None; g.n_bonds()];
    let mut in_use = [false; 100];
    let mut out = String::new();
    emit_atom(
        g,
        root,
        &children,
        &ring_at,
        &mut digit_of_bond,
        &mut in_use,
        &mut out,
    );
    out
}

fn emit_atom(
    g: &MolGraph,
    u: usize,
    children: &[Vec<(usize, usize)>],
    ring_at: &[Vec<usize>],
    digit_of_bond: &mut Vec<Option<u32>>,
    in_use: &mut [bool; 100],
    out: &mut String,
) {
    out.push_str(&atom_token(g, u));
    for &bi in &ring_at[u] {
        let sym = bond_symbol(g, bi);
        match digit_of_bond[bi] {
            None => {
                let d = (1..100)
                    .find(|&d| !in_use[d as usize])
                    .expect("ring closure digits exhausted") as u32;
                in_use[d as usize] = true;
                digit_of_bond[bi] = Some(d);
                out.push_str(sym);
                push_digit(out, d);
            }
            Some(d) => {
                in_use[d as usize] = false;
                out.push_str(sym);
                push_digit(out, d);
            }
        }
    }
    let kids = &children[u];
    for (w, &(v, bi)) in kids.iter().enumerate() {
        let last = w + 1 == kids.len();
        if !last {
            out.push('(');
        }
        out.push_str(bond_symbol(g, bi));
        emit_atom(g, v, children, ring_at, digit_of_bond, in_use, out);
        if !last {
            out.push(')');
        }
    }
}

fn push_digit(out: &mut String, d: u32) {
    if d < 10 {
        out.push_str(&format!("{d}"));
    } else {
        out.push_str(&format!("%{d:02}"));
    }
}
