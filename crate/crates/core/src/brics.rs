//! BRICS fragmentation: cleaves synthetically accessible acyclic bonds whose
//! two environments match a compatible pair from the 16-environment rule
//! table, then partitions the molecule into fragments connected by the
//! cleaved bonds.

use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

use crate::chem::{BondOrder, MolGraph};

/// Fragment-level graph over a molecule: nodes partition the atoms, each
/// edge is a cleaved bond crossing two fragments.
#[derive(Clone, Debug)]
pub struct BricsGraph {
    pub nodes: Vec<BricsNode>,
    /// (node u, node v, underlying bond index)
    pub edges: Vec<(usize, usize, usize)>,
    node_of_atom: Vec<usize>,
}

#[derive(Clone, Debug)]
pub struct BricsNode {
    /// Sorted member atom indices.
    pub atoms: Vec<usize>,
    /// Bond indices fully inside the fragment.
    pub bonds: Vec<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BricsError {
    OutOfRange(usize),
}

impl fmt::Display for BricsError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BricsError::OutOfRange(i) => write!(f, "atom index {i} out of range"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for BricsError {}

impl BricsGraph {
    pub fn n_nodes(&self) -> usize {
        self.nodes.len()
    }

    /// The unique fragment containing an atom.
    pub fn fragment_of(&self, atom: usize) -> Result<usize, BricsError> {
        self.node_of_atom
            .get(atom)
            .copied()
            .ok_or(BricsError::OutOfRange(atom))
    }

    /// Neighbor fragments of `u` with the connecting edge index.
    pub fn node_neighbors(&self, u: usize) -> Vec<(usize, usize)> {
        let mut out = Vec::new();
        for (ei, &(a, b, _)) in self.edges.iter().enumerate() {
            if a == u {
                out.push((b, ei));
            } else if b == u {
                out.push((a, ei));
            }
        }
        out
    }
}

/// Environment labels from the published fragmentation rule table.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Env {
    L1,
    L3,
    L4,
    L5,
    L6,
    L7,
    L8,
    L9,
    L10,
    L11,
    L12,
    L13,
    L14,
    L15,
    L16,
}

use Env::*;

/// Compatible environment pairs; all cleave single bonds except (L7, L7)
/// which cleaves an acyclic double bond.
const PAIRS: &[(Env, Env)] = &[
    (L1, L3),
    (L1, L5),
    (L1, L10),
    (L3, L4),
    (L3, L13),
    (L3, L14),
    (L3, L15),
    (L3, L16),
    (L4, L5),
    (L4, L11),
    (L5, L12),
    (L5, L13),
    (L5, L14),
    (L5, L15),
    (L5, L16),
    (L6, L13),
    (L6, L14),
    (L6, L15),
    (L6, L16),
    (L7, L7),
    (L8, L9),
    (L8, L10),
    (L8, L13),
    (L8, L14),
    (L8, L15),
    (L8, L16),
    (L9, L13),
    (L9, L14),
    (L9, L15),
    (L9, L16),
    (L10, L13),
    (L10, L14),
    (L10, L15),
    (L10, L16),
    (L11, L13),
    (L11, L14),
    (L11, L15),
    (L11, L16),
    (L12, L13),
    (L12, L14),
    (L12, L15),
    (L12, L16),
    (L13, L14),
    (L13, L15),
    (L13, L16),
    (L14, L14),
    (L14, L15),
    (L14, L16),
    (L15, L16),
    (L16, L16),
];

fn sym(g: &MolGraph, i: usize) -> &'static str {
    g.atoms[i].element.symbol()
}

fn has_double_to_o(g: &MolGraph, i: usize) -> bool {
    g.neighbors(i).iter().any(|&(v, bi)| {
        g.bonds[bi].order == BondOrder::Double && sym(g, v) == "O"
    })
}

fn count_multiple(g: &MolGraph, i: usize) -> usize {
    g.neighbors(i)
        .iter()
        .filter(|&&(_, bi)| {
            matches!(
                g.bonds[bi].order,
                BondOrder::Double | BondOrder::Triple | BondOrder::Aromatic
            )
        })
        .count()
}

/// Does atom `a` of the candidate bond (a, partner) match environment `env`?
fn env_match(g: &MolGraph, env: Env, a: usize, partner: usize) -> bool {
    let atom = &g.atoms[a];
    let arom = atom.aromatic;
    let deg = g.degree(a);
    match env {
        // acyl carbon of esters/amides/ketones
        L1 => sym(g, a) == "C" && !arom && deg == 3 && has_double_to_o(g, a),
        // ether/ester oxygen
        L3 => sym(g, a) == "O" && !arom && deg == 2,
        // aliphatic linker carbon: saturated, bonded to at least two carbons
        L4 => {
            sym(g, a) == "C"
                && !arom
                && count_multiple(g, a) == 0
                && g.neighbors(a)
                    .iter()
                    .filter(|&&(v, _)| sym(g, v) == "C")
                    .count()
                    >= 2
        }
        // amine nitrogen: saturated, only C/S neighbors, not a lactam
        L5 => {
            sym(g, a) == "N"
                && !arom
                && deg >= 2
                && count_multiple(g, a) == 0
                && g.neighbors(a)
                    .iter()
                    .all(|&(v, _)| matches!(sym(g, v), "C" | "S"))
                && !is_lactam_n(g, a)
        }
        // acyclic acyl carbon
        L6 => sym(g, a) == "C" && !arom && !g.atom_in_ring(a) && deg == 3 && has_double_to_o(g, a),
        // alkene carbon (the candidate bond itself is the double bond)
        L7 => {
            sym(g, a) == "C"
                && !arom
                && (2..=3).contains(&deg)
                && g.bond_between(a, partner)
                    .map(|bi| g.bonds[bi].order == BondOrder::Double)
                    .unwrap_or(false)
        }
        // acyclic saturated carbon
        L8 => {
            sym(g, a) == "C"
                && !arom
                && !g.atom_in_ring(a)
                && deg >= 2
                && count_multiple(g, a) == 0
        }
        // aromatic nitrogen flanked by aromatic C/N/O/S
        L9 => {
            sym(g, a) == "N"
                && arom
                && atom.formal_charge == 0
                && g.neighbors(a).iter().all(|&(v, bi)| {
                    g.bonds[bi].order != BondOrder::Aromatic
                        || matches!(sym(g, v), "C" | "N" | "O" | "S")
                })
        }
        // lactam nitrogen
        L10 => sym(g, a) == "N" && !arom && is_lactam_n(g, a),
        // thioether sulfur
        L11 => sym(g, a) == "S" && !arom && deg == 2 && count_multiple(g, a) == 0,
        // sulfonyl sulfur
        L12 => {
            sym(g, a) == "S"
                && deg == 4
                && g.neighbors(a)
                    .iter()
                    .filter(|&&(v, bi)| {
                        g.bonds[bi].order == BondOrder::Double && sym(g, v) == "O"
                    })
                    .count()
                    == 2
        }
        // ring carbon adjacent in the ring to a heteroatom
        L13 => {
            sym(g, a) == "C"
                && !arom
                && g.atom_in_ring(a)
                && ring_neighbor_count(g, a, &["C", "N", "O", "S"]) >= 2
                && ring_neighbor_count(g, a, &["N", "O", "S"]) >= 1
        }
        // aromatic carbon in a heteroarene
        L14 => {
            sym(g, a) == "C"
                && arom
                && aromatic_neighbor_count(g, a, &["N", "O", "S"]) >= 1
        }
        // ring carbon in a carbocycle
        L15 => {
            sym(g, a) == "C" && !arom && g.atom_in_ring(a) && ring_neighbor_count(g, a, &["C"]) >= 2
        }
        // benzene-like aromatic carbon
        L16 => sym(g, a) == "C" && arom && aromatic_neighbor_count(g, a, &["C"]) >= 2,
    }
}

fn ring_neighbor_count(g: &MolGraph, a: usize, elems: &[&str]) -> usize {
    g.neighbors(a)
        .iter()
        .filter(|&&(v, bi)| g.bonds[bi].in_ring && elems.contains(&sym(g, v)))
        .count()
}

fn aromatic_neighbor_count(g: &MolGraph, a: usize, elems: &[&str]) -> usize {
    g.neighbors(a)
        .iter()
        .filter(|&&(v, bi)| {
            g.bonds[bi].order == BondOrder::Aromatic && elems.contains(&sym(g, v))
        })
        .count()
}

/// N in a ring, adjacent through ring bonds to a ring carbonyl carbon.
fn is_lactam_n(g: &MolGraph, a: usize) -> bool {
    sym(g, a) == "N"
        && g.atom_in_ring(a)
        && g.neighbors(a).iter().any(|&(v, bi)| {
            g.bonds[bi].in_ring && sym(g, v) == "C" && has_double_to_o(g, v)
        })
}

/// Bond indices that BRICS would cleave. Ring bonds and bonds touching a
/// charged atom never cleave; a bond matching several rules cleaves once.
pub fn brics_bonds(g: &MolGraph) -> Vec<usize> {
    let mut out = Vec::new();
    for (bi, bond) in g.bonds.iter().enumerate() {
        if bond.in_ring {
            continue;
        }
        if g.atoms[bond.a].formal_charge != 0 || g.atoms[bond.b].formal_charge != 0 {
            continue;
        }
        let want_double = matches!(bond.order, BondOrder::Double);
        if !matches!(bond.order, BondOrder::Single | BondOrder::Double) {
            continue;
        }
        let hit = PAIRS.iter().any(|&(x, y)| {
            let double_rule = x == L7 && y == L7;
            if double_rule != want_double {
                return false;
            }
            (env_match(g, x, bond.a, bond.b) && env_match(g, y, bond.b, bond.a))
                || (env_match(g, x, bond.b, bond.a) && env_match(g, y, bond.a, bond.b))
        });
        if hit {
            out.push(bi);
        }
    }
    out
}

/// Fragments the molecule. A molecule with no cleavable bond yields a
/// single-node graph.
pub fn fragment(g: &MolGraph) -> BricsGraph {
    let cut: alloc::collections::BTreeSet<usize> = brics_bonds(g).into_iter().collect();
    let n = g.n_atoms();
    let mut node_of_atom = vec![usize::MAX; n];
    let mut nodes: Vec<BricsNode> = Vec::new();
    for start in 0..n {
        if node_of_atom[start] != usize::MAX {
            continue;
        }
        let id = nodes.len();
        let mut stack = vec![start];
        node_of_atom[start] = id;
        let mut atoms = Vec::new();
        while let Some(u) = stack.pop() {
            atoms.push(u);
            for &(v, bi) in g.neighbors(u) {
                if cut.contains(&bi) || node_of_atom[v] != usize::MAX {
                    continue;
                }
                node_of_atom[v] = id;
                stack.push(v);
            }
        }
        atoms.sort_unstable();
        nodes.push(BricsNode {
            atoms,
            bonds: Vec::new(),
        });
    }
    for (bi, bond) in g.bonds.iter().enumerate() {
        if !cut.contains(&bi) {
            nodes[node_of_atom[bond.a]].bonds.push(bi);
        }
    }
    let edges = cut
        .into_iter()
        .map(|bi| {
            let b = &g.bonds[bi];
            (node_of_atom[b.a], node_of_atom[b.b], bi)
        })
        .collect();
    BricsGraph {
        nodes,
        edges,
        node_of_atom,
    }
}
