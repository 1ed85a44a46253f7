//! Atoms, bonds and the molecular graph, plus the perception passes that run
//! on construction: cycle detection, kekulization, aromaticity, conjugation,
//! implicit-hydrogen resolution and valence checking.

use alloc::collections::BTreeSet;
use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

/// Element alphabet: the ~30 elements seen in USPTO-50K-style data.
/// Anything outside this list is rejected at parse time.
pub const ELEMENTS: &[&str] = &[
    "C", "N", "O", "S", "P", "F", "Cl", "Br", "I", "B", "Si", "Se", "Sn", "Li", "Na", "K", "Mg",
    "Ca", "Fe", "Al", "Cu", "Zn", "Mn", "Cr", "Ni", "Co", "Hg", "Pd", "Pt", "As", "H",
];

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct Element(pub(crate) u8);

impl Element {
    pub fn from_symbol(sym: &str) -> Option<Element> {
        ELEMENTS
            .iter()
            .position(|s| *s == sym)
            .map(|i| Element(i as u8))
    }

    pub fn symbol(&self) -> &'static str {
        ELEMENTS[self.0 as usize]
    }

    pub fn index(&self) -> usize {
        self.0 as usize
    }

    /// Organic-subset elements may be written bare in SMILES and get
    /// implicit hydrogens.
    pub fn organic_subset(&self) -> bool {
        matches!(self.symbol(), "B" | "C" | "N" | "O" | "P" | "S" | "F" | "Cl" | "Br" | "I")
    }

    /// Elements that can sit in an aromatic ring.
    pub fn aromatic_capable(&self) -> bool {
        matches!(self.symbol(), "B" | "C" | "N" | "O" | "P" | "S" | "Se")
    }

    /// Default valence list (smallest first); None for metals and others we
    /// do not valence-check.
    pub fn valences(&self) -> Option<&'static [u8]> {
        Some(match self.symbol() {
            "B" => &[3],
            "C" => &[4],
            "N" => &[3, 5],
            "O" => &[2],
            "P" => &[3, 5],
            "S" => &[2, 4, 6],
            "F" => &[1],
            "Cl" | "Br" | "I" => &[1, 3, 5, 7],
            "Si" => &[4],
            "Se" => &[2, 4, 6],
            "Sn" => &[2, 4],
            "As" => &[3, 5],
            "H" => &[1],
            _ => return None,
        })
    }
}

impl fmt::Debug for Element {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.symbol())
    }
}

#[derive(Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Debug, Hash)]
pub enum BondOrder {
    Single,
    Double,
    Triple,
    Aromatic,
}

impl BondOrder {
    /// Integer order; aromatic reports 1 here, use `Bond::kekule_value` when
    /// the resolved alternation matters.
    pub fn value(&self) -> u8 {
        match self {
            BondOrder::Single | BondOrder::Aromatic => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
        }
    }

    /// Slot used by order one-hots and change codes: single=1, double=2,
    /// triple=3.
    pub fn class(&self) -> usize {
        match self {
            BondOrder::Single => 1,
            BondOrder::Double => 2,
            BondOrder::Triple => 3,
            BondOrder::Aromatic => 4,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Atom {
    pub element: Element,
    pub formal_charge: i8,
    pub explicit_h: u8,
    pub aromatic: bool,
    pub map_num: Option<u32>,
}

impl Atom {
    pub fn new(element: Element) -> Atom {
        Atom {
            element,
            formal_charge: 0,
            explicit_h: 0,
            aromatic: false,
            map_num: None,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Bond {
    pub a: usize,
    pub b: usize,
    pub order: BondOrder,
    pub in_ring: bool,
    pub conjugated: bool,
    /// Resolved alternation order for aromatic bonds.
    pub kekule: Option<BondOrder>,
}

impl Bond {
    pub fn other(&self, atom: usize) -> usize {
        if atom == self.a {
            self.b
        } else {
            self.a
        }
    }

    /// Order with aromatic bonds resolved to their kekule assignment.
    pub fn kekule_value(&self) -> u8 {
        match self.order {
            BondOrder::Aromatic => self.kekule.map(|k| k.value()).unwrap_or(1),
            o => o.value(),
        }
    }

    pub fn kekule_order(&self) -> BondOrder {
        match self.order {
            BondOrder::Aromatic => self.kekule.unwrap_or(BondOrder::Single),
            o => o,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum ChemError {
    Syntax(String),
    Valence(String),
    Kekulization(String),
}

impl fmt::Display for ChemError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ChemError::Syntax(m) => write!(f, "SMILES syntax error: {m}"),
            ChemError::Valence(m) => write!(f, "valence error: {m}"),
            ChemError::Kekulization(m) => write!(f, "kekulization failed: {m}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for ChemError {}

/// Hydrogen-count disposition of an atom handed to the builder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum HCount {
    /// Fill from standard organic-subset valences (bare SMILES atoms).
    Implicit,
    /// Take literally (bracket atoms, rebuilt graphs).
    Explicit(u8),
}

/// Bond order disposition handed to the builder.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum OrderSpec {
    Explicit(BondOrder),
    /// No symbol in the input: single, or aromatic when both endpoints are
    /// aromatic-input atoms and the bond closes a cycle.
    Implicit,
}

#[derive(Clone, Debug)]
pub struct MolGraph {
    pub atoms: Vec<Atom>,
    pub bonds: Vec<Bond>,
    adj: Vec<Vec<(usize, usize)>>,
    /// Smallest set of smallest rings, as atom cycles.
    sssr: Vec<Vec<usize>>,
}

impl MolGraph {
    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    pub fn n_bonds(&self) -> usize {
        self.bonds.len()
    }

    /// Neighbor list of `(atom index, bond index)` pairs.
    pub fn neighbors(&self, atom: usize) -> &[(usize, usize)] {
        &self.adj[atom]
    }

    pub fn degree(&self, atom: usize) -> usize {
        self.adj[atom].len()
    }

    pub fn bond_between(&self, a: usize, b: usize) -> Option<usize> {
        self.adj[a]
            .iter()
            .find(|(n, _)| *n == b)
            .map(|(_, bond)| *bond)
    }

    pub fn rings(&self) -> &[Vec<usize>] {
        &self.sssr
    }

    /// Sum of bond orders at an atom (kekule values for aromatic bonds).
    pub fn order_sum(&self, atom: usize) -> u8 {
        self.adj[atom]
            .iter()
            .map(|&(_, b)| self.bonds[b].kekule_value())
            .sum()
    }

    /// Total valence (heavy bond orders plus hydrogens); used as an atom
    /// feature.
    pub fn valence(&self, atom: usize) -> u8 {
        self.order_sum(atom) + self.atoms[atom].explicit_h
    }

    pub fn atom_in_ring(&self, atom: usize) -> bool {
        self.adj[atom].iter().any(|&(_, b)| self.bonds[b].in_ring)
    }

    /// Connected components as sorted atom-index lists, ordered by their
    /// smallest member.
    pub fn components(&self) -> Vec<Vec<usize>> {
        let n = self.n_atoms();
        let mut comp = vec![usize::MAX; n];
        let mut out = Vec::new();
        for start in 0..n {
            if comp[start] != usize::MAX {
                continue;
            }
            let id = out.len();
            let mut stack = vec![start];
            let mut members = Vec::new();
            comp[start] = id;
            while let Some(u) = stack.pop() {
                members.push(u);
                for &(v, _) in &self.adj[u] {
                    if comp[v] == usize::MAX {
                        comp[v] = id;
                        stack.push(v);
                    }
                }
            }
            members.sort_unstable();
            out.push(members);
        }
        out
    }

    /// Extracts the induced subgraph over `keep` (sorted atom indices).
    /// Returns the subgraph and the map from old to new indices.
    pub fn induced_subgraph(&self, keep: &[usize]) -> (MolGraph, Vec<Option<usize>>) {
        let mut old_to_new = vec![None; self.n_atoms()];
        for (new, &old) in keep.iter().enumerate() {
            old_to_new[old] = Some(new);
        }
        let mut b = GraphBuilder::new();
        for &old in keep {
            let a = self.atoms[old].clone();
            b.add_atom_raw(a);
        }
        for bond in &self.bonds {
            if let (Some(x), Some(y)) = (old_to_new[bond.a], old_to_new[bond.b]) {
                b.add_bond(x, y, OrderSpec::Explicit(bond.kekule_order()));
            }
        }
        let g = b
            .finish()
            .expect("induced subgraph of a valid graph is valid");
        (g, old_to_new)
    }

    /// Copy with all atom map numbers removed.
    pub fn without_maps(&self) -> MolGraph {
        let mut g = self.clone();
        for a in &mut g.atoms {
            a.map_num = None;
        }
        g
    }

    /// Copy with atoms renumbered so that new index `i` is old `perm[i]`.
    pub fn permuted(&self, perm: &[usize]) -> MolGraph {
        assert_eq!(perm.len(), self.n_atoms());
        let mut inv = vec![0usize; perm.len()];
        for (new, &old) in perm.iter().enumerate() {
            inv[old] = new;
        }
        let mut b = GraphBuilder::new();
        for &old in perm {
            b.add_atom_raw(self.atoms[old].clone());
        }
        for bond in &self.bonds {
            b.add_bond(inv[bond.a], inv[bond.b], OrderSpec::Explicit(bond.kekule_order()));
        }
        b.finish().expect("permutation of a valid graph is valid")
    }

    /// Atom-index sets of fused/spiro ring systems: connected components of
    /// the subgraph restricted to ring bonds.
    pub fn ring_systems(&self) -> Vec<BTreeSet<usize>> {
        let mut seen = vec![false; self.n_atoms()];
        let mut out = Vec::new();
        for start in 0..self.n_atoms() {
            if seen[start] || !self.atom_in_ring(start) {
                continue;
            }
            let mut set = BTreeSet::new();
            let mut stack = vec![start];
            seen[start] = true;
            while let Some(u) = stack.pop() {
                set.insert(u);
                for &(v, bi) in &self.adj[u] {
                    if self.bonds[bi].in_ring && !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
            out.push(set);
        }
        out
    }
}

pub struct GraphBuilder {
    atoms: Vec<Atom>,
    h_mode: Vec<HCount>,
    /// Atom was written lowercase / flagged aromatic by the producer.
    input_aromatic: Vec<bool>,
    bonds: Vec<(usize, usize, OrderSpec)>,
}

impl Default for GraphBuilder {
    fn default() -> Self {
        Self::new()
    }
}

impl GraphBuilder {
    pub fn new() -> GraphBuilder {
        GraphBuilder {
            atoms: Vec::new(),
            h_mode: Vec::new(),
            input_aromatic: Vec::new(),
            bonds: Vec::new(),
        }
    }

    pub fn add_atom(
        &mut self,
        element: Element,
        charge: i8,
        h: HCount,
        input_aromatic: bool,
        map_num: Option<u32>,
    ) -> usize {
        let idx = self.atoms.len();
        self.atoms.push(Atom {
            element,
            formal_charge: charge,
            explicit_h: match h {
                HCount::Explicit(n) => n,
                HCount::Implicit => 0,
            },
            aromatic: false,
            map_num,
        });
        self.h_mode.push(h);
        self.input_aromatic.push(input_aromatic);
        idx
    }

    /// Adds a fully specified atom (explicit hydrogens, aromatic flag kept
    /// as an input hint).
    pub fn add_atom_raw(&mut self, atom: Atom) -> usize {
        let arom = atom.aromatic;
        let h = atom.explicit_h;
        
        self.add_atom(
            atom.element,
            atom.formal_charge,
            HCount::Explicit(h),
            arom,
            atom.map_num,
        )
    }

    pub fn add_bond(&mut self, a: usize, b: usize, order: OrderSpec) {
        self.bonds.push((a, b, order));
    }

    pub fn n_atoms(&self) -> usize {
        self.atoms.len()
    }

    /// Runs perception and produces the immutable graph.
    pub fn finish(self) -> Result<MolGraph, ChemError> {
        let n = self.atoms.len();
        let mut adj: Vec<Vec<(usize, usize)>> = vec![Vec::new(); n];
        for (bi, &(a, b, _)) in self.bonds.iter().enumerate() {
            if a >= n || b >= n {
                return Err(ChemError::Syntax(format!("bond endpoint out of range ({a},{b})")));
            }
            if a == b {
                return Err(ChemError::Syntax(format!("self-bond at atom {a}")));
            }
            if adj[a].iter().any(|&(x, _)| x == b) {
                return Err(ChemError::Syntax(format!("duplicate bond between {a} and {b}")));
            }
            adj[a].push((b, bi));
            adj[b].push((a, bi));
        }

        let ring_bond = find_cycle_bonds(n, &self.bonds, &adj);

        // Resolve implicit bond orders.
        let mut orders: Vec<BondOrder> = Vec::with_capacity(self.bonds.len());
        for (bi, &(a, b, spec)) in self.bonds.iter().enumerate() {
            let o = match spec {
                OrderSpec::Explicit(o) => o,
                OrderSpec::Implicit => {
                    if self.input_aromatic[a] && self.input_aromatic[b] && ring_bond[bi] {
                        BondOrder::Aromatic
                    } else {
                        BondOrder::Single
                    }
                }
            };
            if o == BondOrder::Aromatic && !(self.input_aromatic[a] && self.input_aromatic[b]) {
                return Err(ChemError::Syntax(format!(
                    "aromatic bond between non-aromatic atoms {a} and {b}"
                )));
            }
            orders.push(o);
        }

        // Classify which aromatic-input atoms must take a double bond in the
        // kekule structure, then fill implicit hydrogens.
        let mut atoms = self.atoms;
        let mut needs_double = vec![false; n];
        for i in 0..n {
            if !self.input_aromatic[i] {
                continue;
            }
            let has_exo_double = adj[i].iter().any(|&(_, bi)| {
                matches!(orders[bi], BondOrder::Double | BondOrder::Triple)
            });
            needs_double[i] =
                aromatic_needs_double(&atoms[i], adj[i].len(), has_exo_double, self.h_mode[i]);
        }
        for i in 0..n {
            if let HCount::Implicit = self.h_mode[i] {
                let elem = atoms[i].element;
                if !elem.organic_subset() {
                    return Err(ChemError::Syntax(format!(
                        "element {} requires a bracket atom",
                        elem.symbol()
                    )));
                }
                let h = if self.input_aromatic[i] {
                    let base = elem.valences().unwrap()[0] as i32;
                    let sigma = adj[i].len() as i32;
                    let pi = if needs_double[i] { 1 } else { 0 };
                    (base - sigma - pi).max(0) as u8
                } else {
                    let sum: u8 = adj[i].iter().map(|&(_, bi)| orders[bi].value()).sum();
                    let vals = elem.valences().unwrap();
                    match vals.iter().find(|&&v| v >= sum) {
                        Some(&v) => v - sum,
                        None => {
                            return Err(ChemError::Valence(format!(
                                "{} with bond order sum {} exceeds standard valences",
                                elem.symbol(),
                                sum
                            )))
                        }
                    }
                };
                atoms[i].explicit_h = h;
            }
        }

        // Kekulize the aromatic-input subsystem so every bond has a concrete
        // order before perception.
        kekulize(&mut orders, &needs_double, &self.bonds, &adj, n)?;

        let sssr = smallest_rings(n, &self.bonds, &adj, &ring_bond);

        // Perceive aromaticity from the kekule structure.
        for a in &mut atoms {
            a.aromatic = false;
        }
        let mut bond_aromatic = vec![false; self.bonds.len()];
        let small_cycles = candidate_cycles(n, &self.bonds, &adj, &ring_bond);
        for cyc in &small_cycles {
            if is_aromatic_ring(cyc, &atoms, &orders, &self.bonds, &adj, &ring_bond) {
                for w in 0..cyc.len() {
                    let a = cyc[w];
                    let b = cyc[(w + 1) % cyc.len()];
                    atoms[a].aromatic = true;
                    let bi = adj[a]
                        .iter()
                        .find(|&&(x, _)| x == b)
                        .map(|&(_, bi)| bi)
                        .expect("cycle edge exists");
                    bond_aromatic[bi] = true;
                }
            }
        }

        let mut bonds = Vec::with_capacity(self.bonds.len());
        for (bi, &(a, b, _)) in self.bonds.iter().enumerate() {
            let (order, kekule) = if bond_aromatic[bi] {
                (BondOrder::Aromatic, Some(orders[bi]))
            } else {
                (orders[bi], None)
            };
            bonds.push(Bond {
                a,
                b,
                order,
                in_ring: ring_bond[bi],
                conjugated: false,
                kekule,
            });
        }

        let mut g = MolGraph {
            atoms,
            bonds,
            adj,
            sssr,
        };
        perceive_conjugation(&mut g);
        valence_check(&g)?;
        Ok(g)
    }
}

/// True when an aromatic-input atom must carry one double bond in the kekule
/// structure (as opposed to contributing a lone pair / empty orbital).
fn aromatic_needs_double(atom: &Atom, degree: usize, has_exo_double: bool, h: HCount) -> bool {
    if has_exo_double {
        return false;
    }
    let h_given = match h {
        HCount::Explicit(n) => n > 0,
        HCount::Implicit => false,
    };
    match atom.element.symbol() {
        "C" => atom.formal_charge == 0,
        "N" | "P" => {
            if atom.formal_charge > 0 {
                true
            } else if atom.formal_charge < 0 {
                false
            } else {
                // pyrrole-type when the valence is already used up
                !(h_given || degree == 3)
            }
        }
        "O" | "S" | "Se" => atom.formal_charge > 0,
        _ => false,
    }
}

/// Marks bonds that lie on some cycle: every bond except bridges. Iterative
/// DFS with lowlink; non-tree edges are always cycle edges.
fn find_cycle_bonds(
    n: usize,
    bonds: &[(usize, usize, OrderSpec)],
    adj: &[Vec<(usize, usize)>],
) -> Vec<bool> {
    let mut ring = vec![true; bonds.len()];
    let mut disc = vec![usize::MAX; n];
    let mut low = vec![usize::MAX; n];
    let mut is_tree = vec![false; bonds.len()];
    let mut timer = 0usize;
    for root in 0..n {
        if disc[root] != usize::MAX {
            continue;
        }
        // (node, bond to parent, neighbor cursor)
        let mut stack: Vec<(usize, usize, usize)> = vec![(root, usize::MAX, 0)];
        disc[root] = timer;
        low[root] = timer;
        timer += 1;
        while !stack.is_empty() {
            let top = stack.len() - 1;
            let (u, pb, cursor) = stack[top];
            if cursor < adj[u].len() {
                stack[top].2 += 1;
                let (v, bi) = adj[u][cursor];
                if bi == pb {
                    continue;
                }
                if disc[v] == usize::MAX {
                    is_tree[bi] = true;
                    disc[v] = timer;
                    low[v] = timer;
                    timer += 1;
                    stack.push((v, bi, 0));
                } else {
                    low[u] = low[u].min(disc[v]);
                }
            } else {
                stack.pop();
                if let Some(&(p, _, _)) = stack.last() {
                    low[p] = low[p].min(low[u]);
                    if low[u] > disc[p] {
                        ring[pb] = false; // bridge
                    }
                }
            }
        }
    }
    // Back edges and non-bridge tree edges remain marked; bridges cleared.
    let _ = is_tree;
    ring
}

/// Shortest cycle through each ring bond; used both as SSSR candidates and
/// as the ring set scanned by aromaticity perception.
fn candidate_cycles(
    n: usize,
    bonds: &[(usize, usize, OrderSpec)],
    adj: &[Vec<(usize, usize)>],
    ring_bond: &[bool],
) -> Vec<Vec<usize>> {
    let mut out: Vec<Vec<usize>> = Vec::new();
    let mut seen_keys: BTreeSet<Vec<usize>> = BTreeSet::new();
    for (bi, &(a, b, _)) in bonds.iter().enumerate() {
        if !ring_bond[bi] {
            continue;
        }
        // BFS from a to b avoiding bond bi.
        let mut prev = vec![usize::MAX; n];
        let mut q = alloc::collections::VecDeque::new();
        q.push_back(a);
        prev[a] = a;
        'bfs: while let Some(u) = q.pop_front() {
            for &(v, e) in &adj[u] {
                if e == bi || prev[v] != usize::MAX {
                    continue;
                }
                prev[v] = u;
                if v == b {
                    break 'bfs;
                }
                q.push_back(v);
            }
        }
        if prev[b] == usize::MAX {
            continue;
        }
        let mut cyc = vec![b];
        let mut cur = b;
        while cur != a {
            cur = prev[cur];
            cyc.push(cur);
        }
        let mut key = cyc.clone();
        key.sort_unstable();
        if seen_keys.insert(key) {
            out.push(cyc);
        }
    }
    out
}

/// Greedy SSSR: smallest candidate cycles that are linearly independent over
/// GF(2) of bond incidence vectors, up to the cyclomatic number.
fn smallest_rings(
    n: usize,
    bonds: &[(usize, usize, OrderSpec)],
    adj: &[Vec<(usize, usize)>],
    ring_bond: &[bool],
) -> Vec<Vec<usize>> {
    let n_components = {
        let mut seen = vec![false; n];
        let mut c = 0;
        for s in 0..n {
            if seen[s] {
                continue;
            }
            c += 1;
            let mut stack = vec![s];
            seen[s] = true;
            while let Some(u) = stack.pop() {
                for &(v, _) in &adj[u] {
                    if !seen[v] {
                        seen[v] = true;
                        stack.push(v);
                    }
                }
            }
        }
        c
    };
    let mu = bonds.len() + n_components - n;
    if mu == 0 {
        return Vec::new();
    }
    let mut cands = candidate_cycles(n, bonds, adj, ring_bond);
    cands.sort_by_key(|c| c.len());

    let words = bonds.len().div_ceil(64);
    let bond_vec = |cyc: &[usize]| -> Vec<u64> {
        let mut v = vec![0u64; words];
        for w in 0..cyc.len() {
            let a = cyc[w];
            let b = cyc[(w + 1) % cyc.len()];
            let bi = adj[a]
                .iter()
                .find(|&&(x, _)| x == b)
                .map(|&(_, e)| e)
                .unwrap();
            v[bi / 64] ^= 1 << (bi % 64);
        }
        v
    };

    let mut basis: Vec<Vec<u64>> = Vec::new();
    let mut chosen = Vec::new();
    for cyc in cands {
        if chosen.len() == mu {
            break;
        }
        let mut v = bond_vec(&cyc);
        for b in &basis {
            let pivot = b.iter().rposition(|&w| w != 0).unwrap();
            let bit = 63 - b[pivot].leading_zeros() as usize;
            if v[pivot] >> bit & 1 == 1 {
                for (x, y) in v.iter_mut().zip(b.iter()) {
                    *x ^= *y;
                }
            }
        }
        if v.iter().any(|&w| w != 0) {
            basis.push(v);
            basis.sort_by_key(|b| {
                let pivot = b.iter().rposition(|&w| w != 0).unwrap();
                core::cmp::Reverse(pivot * 64 + (63 - b[pivot].leading_zeros() as usize))
            });
            chosen.push(cyc);
        }
    }
    chosen
}

/// Assigns single/double orders to aromatic bonds so every atom flagged as
/// needing a double bond is matched exactly once.
fn kekulize(
    orders: &mut [BondOrder],
    needs_double: &[bool],
    bonds: &[(usize, usize, OrderSpec)],
    adj: &[Vec<(usize, usize)>],
    n: usize,
) -> Result<(), ChemError> {
    let arom_bonds: Vec<usize> = (0..bonds.len())
        .filter(|&bi| orders[bi] == BondOrder::Aromatic)
        .collect();
    if arom_bonds.is_empty() {
        // aromatic input hints without aromatic bonds (e.g. subgraphs cut
        // out of a ring) just do not participate
        return Ok(());
    }

    // Matching over "needy" atoms restricted to aromatic bonds.
    let mut matched: Vec<Option<usize>> = vec![None; n]; // atom -> bond
    let needy: Vec<usize> = (0..n)
        .filter(|&i| needs_double[i] && adj[i].iter().any(|&(_, bi)| orders[bi] == BondOrder::Aromatic))
        .collect();

    fn solve(
        pos: usize,
        needy: &[usize],
        matched: &mut Vec<Option<usize>>,
        orders: &[BondOrder],
        adj: &[Vec<(usize, usize)>],
        needs: &[bool],
        budget: &mut u32,
    ) -> bool {
        if *budget == 0 {
            return false;
        }
        *budget -= 1;
        let mut i = pos;
        while i < needy.len() && matched[needy[i]].is_some() {
            i += 1;
        }
        if i == needy.len() {
            return true;
        }
        let u = needy[i];
        for &(v, bi) in &adj[u] {
            if orders[bi] != BondOrder::Aromatic || !needs[v] || matched[v].is_some() {
                continue;
            }
            matched[u] = Some(bi);
            matched[v] = Some(bi);
            if solve(i + 1, needy, matched, orders, adj, needs, budget) {
                return true;
            }
            matched[u] = None;
            matched[v] = None;
        }
        false
    }

    let mut budget = 2_000_000u32;
    if !solve(0, &needy, &mut matched, orders, adj, needs_double, &mut budget) {
        return Err(ChemError::Kekulization(format!(
            "no alternating assignment for {} aromatic atoms",
            needy.len()
        )));
    }
    for bi in arom_bonds {
        let (a, b, _) = bonds[bi];
        let double = matched[a] == Some(bi) && matched[b] == Some(bi);
        orders[bi] = if double { BondOrder::Double } else { BondOrder::Single };
    }
    Ok(())
}

/// Ring aromaticity from the kekule structure: 6-rings where every atom has
/// exactly one in-cycle double bond, 5-rings with one lone-pair pivot and
/// four such atoms.
fn is_aromatic_ring(
    cyc: &[usize],
    atoms: &[Atom],
    orders: &[BondOrder],
    bonds: &[(usize, usize, OrderSpec)],
    adj: &[Vec<(usize, usize)>],
    ring_bond: &[bool],
) -> bool {
    if cyc.len() != 5 && cyc.len() != 6 {
        return false;
    }
    let mut pivots = 0usize;
    for &i in cyc {
        let a = &atoms[i];
        if !a.element.aromatic_capable() || a.formal_charge.abs() > 1 {
            return false;
        }
        let mut doubles_in_cycle = 0usize;
        let mut doubles_total = 0usize;
        for &(_, bi) in &adj[i] {
            match orders[bi] {
                BondOrder::Double => {
                    doubles_total += 1;
                    if ring_bond[bi] {
                        doubles_in_cycle += 1;
                    }
                }
                BondOrder::Triple => return false,
                _ => {}
            }
            let _ = bonds;
        }
        if doubles_total == 1 && doubles_in_cycle == 1 {
            continue; // sp2 contributor
        }
        if doubles_total == 0 && lone_pair_pivot(a) {
            pivots += 1;
            continue;
        }
        return false;
    }
    match cyc.len() {
        6 => pivots == 0,
        5 => pivots == 1,
        _ => false,
    }
}

fn lone_pair_pivot(a: &Atom) -> bool {
    match a.element.symbol() {
        "N" | "P" => a.formal_charge <= 0,
        "O" | "S" | "Se" => a.formal_charge == 0,
        "C" => a.formal_charge == -1,
        _ => false,
    }
}

/// Conjugation: a bond is conjugated when both endpoints sit in a pi system
/// of at least three atoms (multiple-bond atoms plus lone-pair donors
/// adjacent to them).
fn perceive_conjugation(g: &mut MolGraph) {
    let n = g.n_atoms();
    let has_multiple = |i: usize| {
        g.adj[i].iter().any(|&(_, bi)| {
            matches!(g.bonds[bi].order, BondOrder::Double | BondOrder::Triple | BondOrder::Aromatic)
        })
    };
    let lone_pair_donor = |i: usize| {
        let a = &g.atoms[i];
        match a.element.symbol() {
            "N" | "P" => a.formal_charge <= 0,
            "O" | "S" | "Se" => a.formal_charge <= 0,
            "F" | "Cl" | "Br" | "I" => a.formal_charge == 0,
            "C" => a.formal_charge == -1,
            _ => false,
        }
    };
    let mut pi = vec![false; n];
    for (i, slot) in pi.iter_mut().enumerate() {
        *slot = has_multiple(i)
            || (lone_pair_donor(i) && g.adj[i].iter().any(|&(v, _)| has_multiple(v)));
    }
    // components over bonds with both endpoints pi-capable
    let mut comp = vec![usize::MAX; n];
    let mut sizes = Vec::new();
    for s in 0..n {
        if !pi[s] || comp[s] != usize::MAX {
            continue;
        }
        let id = sizes.len();
        let mut size = 0usize;
        let mut stack = vec![s];
        comp[s] = id;
        while let Some(u) = stack.pop() {
            size += 1;
            for &(v, _) in &g.adj[u] {
                if pi[v] && comp[v] == usize::MAX {
                    comp[v] = id;
                    stack.push(v);
                }
            }
        }
        sizes.push(size);
    }
    for bi in 0..g.bonds.len() {
        let (a, b) = (g.bonds[bi].a, g.bonds[bi].b);
        g.bonds[bi].conjugated =
            pi[a] && pi[b] && comp[a] == comp[b] && sizes[comp[a]] >= 3;
    }
}

/// Allowed total valence (bond orders + hydrogens) per element/charge;
/// returns None when the element is not checked.
pub fn allowed_valences(element: Element, charge: i8) -> Option<Vec<u8>> {
    let base = element.valences()?;
    let shift: i16 = match element.symbol() {
        "C" => -(charge.abs() as i16),
        "N" | "P" | "O" | "S" | "Se" => charge as i16,
        "B" => -(charge as i16),
        "F" | "Cl" | "Br" | "I" => charge as i16,
        _ => 0,
    };
    Some(
        base.iter()
            .filter_map(|&v| {
                let adj = v as i16 + shift;
                (0..=8).contains(&adj).then_some(adj as u8)
            })
            .collect(),
    )
}

fn valence_check(g: &MolGraph) -> Result<(), ChemError> {
    for i in 0..g.n_atoms() {
        let a = &g.atoms[i];
        let Some(allowed) = allowed_valences(a.element, a.formal_charge) else {
            continue;
        };
        if allowed.is_empty() {
            continue;
        }
        let total = g.valence(i);
        if total > *allowed.iter().max().unwrap() {
            return Err(ChemError::Valence(format!(
                "atom {i} ({}) has valence {total}, allowed up to {}",
                a.element.symbol(),
                allowed.iter().max().unwrap()
            )));
        }
    }
    Ok(())
}

/// Implicit hydrogen count the SMILES writer may omit: what the parser would
/// reconstruct for a bare organic-subset atom in this environment.
pub(crate) fn bare_atom_h(g: &MolGraph, i: usize) -> Option<u8> {
    let a = &g.atoms[i];
    if !a.element.organic_subset() || a.formal_charge != 0 {
        return None;
    }
    if a.aromatic {
        let has_exo_double = g.adj[i]
            .iter()
            .any(|&(_, bi)| matches!(g.bonds[bi].order, BondOrder::Double | BondOrder::Triple));
        let needs = aromatic_needs_double(a, g.degree(i), has_exo_double, HCount::Implicit);
        let base = a.element.valences().unwrap()[0] as i32;
        Some((base - g.degree(i) as i32 - if needs { 1 } else { 0 }).max(0) as u8)
    } else {
        let sum: u8 = g.adj[i]
            .iter()
            .map(|&(_, bi)| g.bonds[bi].order.value())
            .sum();
        let vals = a.element.valences().unwrap();
        vals.iter().find(|&&v| v >= sum).map(|&v| v - sum)
    }
}
