//! Deterministic corpus generators used by integration tests and the
//! bundled data files: random valid molecules, and synthetic atom-mapped
//! reactions built by inverting center edits and re-attaching leaving
//! groups through the library's own primitives.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::chem::{
    parse_smiles, write_smiles, Element, GraphBuilder, HCount, MolGraph, OrderSpec,
};
use crate::chem::BondOrder;
use crate::reaction::{
    apply_unit, derive_synthons, extract_center_label, extract_trace, parse_reaction,
    CenterKind, CenterLabel, Unit, UnitKind,
};
use crate::rng::Rng;

fn elem(sym: &str) -> Element {
    Element::from_symbol(sym).expect("known element")
}

/// Maximum hydrogen budget we allow the generator to spend at an atom.
fn free_valence(g: &GraphState, idx: usize) -> u8 {
    let (sym, used) = (g.elems[idx].symbol(), g.used[idx]);
    let cap: u8 = match sym {
        "C" => 4,
        "N" | "P" | "B" => 3,
        "O" | "S" => 2,
        _ => 1,
    };
    cap.saturating_sub(used)
}

struct GraphState {
    elems: Vec<Element>,
    used: Vec<u8>,
    bonds: Vec<(usize, usize, BondOrder)>,
}

/// Random connected molecule with occasional rings and aromatic rings.
pub fn gen_molecule(rng: &mut Rng, min_atoms: usize, max_atoms: usize) -> MolGraph {
    loop {
        if let Some(g) = try_gen_molecule(rng, min_atoms, max_atoms) {
            return g;
        }
    }
}

fn pick_element(rng: &mut Rng) -> Element {
    let r = rng.below(100);
    elem(match r {
        0..=59 => "C",
        60..=71 => "N",
        72..=83 => "O",
        84..=87 => "S",
        88..=91 => "F",
        92..=95 => "Cl",
        96..=97 => "Br",
        _ => "C",
    })
}

fn try_gen_molecule(rng: &mut Rng, min_atoms: usize, max_atoms: usize) -> Option<MolGraph> {
    let target = min_atoms + rng.below(max_atoms - min_atoms + 1);
    let mut st = GraphState {
        elems: vec![elem("C")],
        used: vec![0],
        bonds: Vec::new(),
    };

    while st.elems.len() < target {
        // occasionally bolt on a whole aromatic ring
        if st.elems.len() + 6 <= target && rng.below(100) < 18 {
            let hetero = rng.below(100) < 30;
            let base = st.elems.len();
            for i in 0..6 {
                let e = if hetero && i == 0 { elem("N") } else { elem("C") };
                st.elems.push(e);
                st.used.push(2); // two ring bonds, kekule avg
            }
            for i in 0..6 {
                let order = if i % 2 == 0 {
                    BondOrder::Double
                } else {
                    BondOrder::Single
                };
                st.bonds.push((base + i, base + (i + 1) % 6, order));
            }
            // fix used valence for the kekule doubles
            for i in 0..6 {
                st.used[base + i] = if i % 2 == 0 || (i + 5) % 6 % 2 == 0 { 3 } else { 2 };
            }
            for i in 0..6 {
                let mut u = 0u8;
                for &(a, b, o) in &st.bonds {
                    if a == base + i || b == base + i {
                        u += o.value();
                    }
                }
                st.used[base + i] = u;
            }
            // link the ring to the existing graph
            let candidates: Vec<usize> = (0..base).filter(|&i| free_valence(&st, i) >= 1).collect();
            if candidates.is_empty() {
                return None;
            }
            let from = candidates[rng.below(candidates.len())];
            let ring_at = base + rng.below(6);
            if free_valence(&st, ring_at) < 1 {
                continue;
            }
            st.bonds.push((from, ring_at, BondOrder::Single));
            st.used[from] += 1;
            st.used[ring_at] += 1;
            continue;
        }

        let candidates: Vec<usize> = (0..st.elems.len())
            .filter(|&i| free_valence(&st, i) >= 1)
            .collect();
        if candidates.is_empty() {
            break;
        }
        let from = candidates[rng.below(candidates.len())];
        let new_elem = pick_element(rng);
        let new_cap = match new_elem.symbol() {
            "C" => 4,
            "N" => 3,
            "O" | "S" => 2,
            _ => 1,
        };
        // mostly single bonds, sometimes double
        let from_free = free_valence(&st, from);
        let order = if from_free >= 2 && new_cap >= 2 && rng.below(100) < 15 {
            BondOrder::Double
        } else {
            BondOrder::Single
        };
        let idx = st.elems.len();
        st.elems.push(new_elem);
        st.used.push(order.value());
        st.bonds.push((from, idx, order));
        st.used[from] += order.value();
    }

    // occasional saturated ring closure
    if rng.below(100) < 25 && st.elems.len() >= 5 {
        let open: Vec<usize> = (0..st.elems.len())
            .filter(|&i| free_valence(&st, i) >= 1 && st.elems[i].symbol() == "C")
            .collect();
        if open.len() >= 2 {
            let a = open[rng.below(open.len())];
            let b = open[rng.below(open.len())];
            let adjacent = st.bonds.iter().any(|&(x, y, _)| (x, y) == (a, b) || (y, x) == (a, b));
            if a != b && !adjacent {
                st.bonds.push((a, b, BondOrder::Single));
                st.used[a] += 1;
                st.used[b] += 1;
            }
        }
    }

    let mut b = GraphBuilder::new();
    for e in &st.elems {
        b.add_atom(*e, 0, HCount::Implicit, false, None);
    }
    for &(x, y, o) in &st.bonds {
        b.add_bond(x, y, OrderSpec::Explicit(o));
    }
    let g = b.finish().ok()?;
    if g.n_atoms() < min_atoms {
        return None;
    }
    // the canonical writer must round-trip it (guards generator bugs)
    let s = write_smiles(&g);
    parse_smiles(&s).ok()?;
    Some(g)
}

/// Deterministic corpus of distinct molecules.
pub fn gen_corpus(n: usize, seed: u64, min_atoms: usize, max_atoms: usize) -> Vec<MolGraph> {
    let mut rng = Rng::new(seed);
    let mut seen = alloc::collections::BTreeSet::new();
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let g = gen_molecule(&mut rng, min_atoms, max_atoms);
        let key = write_smiles(&g);
        if seen.insert(key) {
            out.push(g);
        }
    }
    out
}

/// Leaving-group pool: anchored unit encodings per anchor element.
fn leaving_pool(anchor: &str) -> Vec<String> {
    let frags: &[&str] = match anchor {
        "C" => &[
            "Cl", "Br", "I", "O", "OC", "N", "OCC", "OC(C)=O", "c1ccccc1",
        ],
        "N" => &["C(=O)OC(C)(C)C", "Cc1ccccc1", "C"],
        "O" => &["C", "CC", "C(C)=O"],
        "S" => &["C"],
        _ => &[],
    };
    frags
        .iter()
        .map(|f| format!("[{anchor}:1]{f}"))
        .collect()
}

/// Attaches a random leaving unit at `atom` when one fits.
fn attach_random_leaving(
    rng: &mut Rng,
    graph: &MolGraph,
    atom: usize,
) -> Option<MolGraph> {
    let sym = graph.atoms[atom].element.symbol();
    let pool = leaving_pool(sym);
    if pool.is_empty() {
        return None;
    }
    let enc = &pool[rng.below(pool.len())];
    let unit = Unit::from_encoding(enc, UnitKind::Bond).ok()?;
    if graph.atoms[atom].explicit_h < unit.anchor_order_sum {
        return None;
    }
    apply_unit(graph, atom, &unit).ok().map(|(g, _)| g)
}

/// One synthetic atom-mapped reaction line built by inverting a center edit
/// on the product. Returns None when the draw is infeasible.
fn try_gen_reaction(rng: &mut Rng, product: &MolGraph) -> Option<String> {
    // map the product atoms 1..=n
    let mut p = product.clone();
    for (i, a) in p.atoms.iter_mut().enumerate() {
        a.map_num = Some(i as u32 + 1);
    }

    let kind = match rng.below(10) {
        0..=4 => CenterKind::BondFormation,
        5..=7 => CenterKind::BondChange,
        _ => CenterKind::Atom,
    };

    let label = match kind {
        CenterKind::BondFormation => {
            // acyclic bonds only: deleting one must split or terminate cleanly
            let cands: Vec<usize> = (0..p.n_bonds())
                .filter(|&bi| !p.bonds[bi].in_ring && p.bonds[bi].order == BondOrder::Single)
                .collect();
            if cands.is_empty() {
                return None;
            }
            CenterLabel {
                kind,
                bond: Some(cands[rng.below(cands.len())]),
                atom: None,
                original_order: None,
                induced_changes: Vec::new(),
                charge_changes: Vec::new(),
                unsupported_reason: None,
            }
        }
        CenterKind::BondChange => {
            // product double -> reactant single (retro of an oxidation)
            let cands: Vec<usize> = (0..p.n_bonds())
                .filter(|&bi| {
                    let b = &p.bonds[bi];
                    b.order == BondOrder::Double && !b.in_ring
                })
                .collect();
            if cands.is_empty() {
                return None;
            }
            CenterLabel {
                kind,
                bond: Some(cands[rng.below(cands.len())]),
                atom: None,
                original_order: Some(BondOrder::Single),
                induced_changes: Vec::new(),
                charge_changes: Vec::new(),
                unsupported_reason: None,
            }
        }
        CenterKind::Atom => {
            let cands: Vec<usize> = (0..p.n_atoms())
                .filter(|&i| p.atoms[i].explicit_h >= 1 && !leaving_pool(p.atoms[i].element.symbol()).is_empty())
                .collect();
            if cands.is_empty() {
                return None;
            }
            CenterLabel {
                kind,
                bond: None,
                atom: Some(cands[rng.below(cands.len())]),
                original_order: None,
                induced_changes: Vec::new(),
                charge_changes: Vec::new(),
                unsupported_reason: None,
            }
        }
        CenterKind::Unsupported => unreachable!(),
    };

    // reactants = synthons + leaving groups at the center atoms
    let synthon = derive_synthons(&p, &label).ok()?;
    let mut reactants = synthon.clone();
    let centers = label.center_atoms(&p);
    let mut attached_any = false;
    for &c in &centers {
        // atom centers must attach something, bond centers optionally
        let must = label.kind == CenterKind::Atom;
        if must || rng.below(100) < 60 {
            if let Some(g) = attach_random_leaving(rng, &reactants, c) {
                reactants = g;
                attached_any = true;
            } else if must {
                return None;
            }
        }
    }
    let _ = attached_any;

    let line = format!("{}>>{}", write_smiles(&reactants), write_smiles(&p));

    // the record must parse, label as intended, and extract a sound trace
    let rec = parse_reaction(&line).ok()?;
    let got = extract_center_label(&rec);
    if got.kind != label.kind {
        return None;
    }
    extract_trace(&rec, &got).ok()?;
    Some(line)
}

/// Deterministic corpus of synthetic reactions with distinct products.
/// Every line parses, labels as a supported center, and extracts a replay-
/// sound trace.
pub fn gen_reaction_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut rng = Rng::new(seed);
    let mut out = Vec::with_capacity(n);
    let mut seen_products = alloc::collections::BTreeSet::new();
    let mut guard = 0usize;
    while out.len() < n {
        guard += 1;
        assert!(guard < n * 4000, "reaction generator stalled");
        let product = gen_molecule(&mut rng, 5, 14);
        let key = write_smiles(&product);
        if seen_products.contains(&key) {
            continue;
        }
        if let Some(line) = try_gen_reaction(&mut rng, &product) {
            seen_products.insert(key);
            out.push(line);
        }
    }
    out
}

/// Hand-picked drug-like molecules that exercise rings, aromatics, charges
/// and multi-component salts.
pub fn curated_molecules() -> Vec<&'static str> {
    vec![
        "CC(=O)OC1=CC=CC=C1C(=O)O",             // aspirin (kekule form)
        "CC(=O)Oc1ccccc1C(=O)O",                // aspirin (aromatic form)
        "CN1C=NC2=C1C(=O)N(C)C(=O)N2C",         // caffeine
        "CC(C)Cc1ccc(cc1)C(C)C(=O)O",           // ibuprofen
        "CC(=O)Nc1ccc(O)cc1",                   // paracetamol
        "Clc1ccccc1",                            // chlorobenzene
        "c1ccc2ccccc2c1",                        // naphthalene
        "c1ccc2c(c1)cccc2O",                     // naphthol
        "C1CCC2(CC1)CCCCC2",                     // spiro
        "C1CC2CCC1CC2",                          // bicyclic bridged
        "c1ccoc1",                               // furan
        "c1ccsc1",                               // thiophene
        "c1cc[nH]c1",                            // pyrrole
        "c1ccncc1",                              // pyridine
        "c1cnc2[nH]ccc2c1",                      // azaindole
        "OC(=O)C(N)Cc1ccccc1",                   // phenylalanine
        "NC(=O)c1ccccc1",                        // benzamide
        "O=[N+]([O-])c1ccccc1",                  // nitrobenzene
        "[NH4+].[Cl-]",                          // ammonium chloride
        "C[N+](C)(C)C.[Br-]",                    // tetramethylammonium bromide
        "OCC(O)CO",                              // glycerol
        "C#N",                                   // hydrogen cyanide
        "CC#CC",                                 // butyne
        "N#Cc1ccccc1",                           // benzonitrile
        "FC(F)(F)c1ccccc1",                      // trifluorotoluene
        "CS(=O)(=O)O",                           // methanesulfonic acid
        "CS(=O)(=O)Cl",                          // mesyl chloride
        "COP(=O)(OC)OC",                         // trimethyl phosphate
        "CC(C)(C)OC(=O)NC",                      // boc-methylamine
        "O=C1CCCCC1",                            // cyclohexanone
        "O=C1CCCN1",                             // pyrrolidinone
        "C1COCCN1",                              // morpholine
        "c1ccc(-c2ccccc2)cc1",                   // biphenyl
        "Cc1ccc(S(=O)(=O)O)cc1",                 // tosylate acid
        "ClCCl",                                 // dichloromethane
        "C(Cl)(Cl)(Cl)Cl",                       // tetrachloromethane
        "CCOC(=O)c1csc(-c2ccc(F)cc2)c1",        // aryl thiophene ester
        "CCOC(=O)Cn1ccc(NC(=O)c2ccc(Cl)s2)n1",  // amide-linked heterocycles
        "CO/C=C/C(=O)OC",                        // stereo marks (dropped)
        "N[C@@H](C)C(=O)O",                      // alanine with stereo (dropped)
    ]
}

/// Molecule corpus: curated entries plus generated fill, all distinct.
pub fn molecule_corpus(n: usize, seed: u64) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    let mut seen = alloc::collections::BTreeSet::new();
    for s in curated_molecules() {
        let g = parse_smiles(s).expect("curated molecule parses");
        let key = write_smiles(&g);
        if seen.insert(key) {
            out.push(String::from(s));
        }
    }
    let mut rng = Rng::new(seed);
    while out.len() < n {
        let g = gen_molecule(&mut rng, 4, 22);
        let key = write_smiles(&g);
        if seen.insert(key.clone()) {
            out.push(key);
        }
    }
    out.truncate(n);
    out
}

/// Curated atom-mapped reactions covering all three center kinds, induced
/// changes and charge edits.
pub fn curated_reactions() -> Vec<&'static str> {
    vec![
        // amide coupling (BF)
        "[CH3:3][C:4](=[O:5])O.[NH2:1][CH3:2]>>[CH3:3][C:4](=[O:5])[NH:1][CH3:2]",
        // ester hydrolysis retro (BF at C-O)
        "[CH3:1][C:2](=[O:3])O.[OH:4][CH2:5][CH3:6]>>[CH3:1][C:2](=[O:3])[O:4][CH2:5][CH3:6]",
        // alkylation (BF with halide leaving)
        "Cl[CH2:1][CH3:2].[NH2:3][CH3:4]>>[CH2:1]([CH3:2])[NH:3][CH3:4]",
        "Br[CH2:1][c:2]1[cH:3][cH:4][cH:5][cH:6][cH:7]1.[OH:8][CH3:9]>>[CH2:1]([c:2]1[cH:3][cH:4][cH:5][cH:6][cH:7]1)[O:8][CH3:9]",
        // oxidation retro (BC double->single)
        "[CH3:1][CH:2]([OH:3])[CH3:4]>>[CH3:1][C:2](=[O:3])[CH3:4]",
        // reduction retro (BC single->double)
        "[CH2:1]=[CH:2][CH2:3][CH3:4]>>[CH3:1][CH2:2][CH2:3][CH3:4]",
        // boc deprotection (A at N)
        "CC(C)(C)OC(=O)[N:1]([CH3:2])[CH3:3]>>[NH:1]([CH3:2])[CH3:3]",
        // debenzylation (A at O)
        "c1ccccc1C[O:1][CH3:2]>>[OH:1][CH3:2]",
        // etherification with charge change at the nucleophile
        "[CH3:1][O-:2].Cl[CH3:3]>>[CH3:1][O:2][CH3:3]",
        // aryl amination (BF on aromatic carbon)
        "Br[c:1]1[cH:2][cH:3][cH:4][cH:5][cH:6]1.[NH2:7][CH3:8]>>[c:1]1([cH:2][cH:3][cH:4][cH:5][cH:6]1)[NH:7][CH3:8]",
    ]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::isomorphic;

    #[test]
    fn generated_molecules_round_trip() {
        let corpus = gen_corpus(40, 11, 4, 18);
        for g in &corpus {
            let s = write_smiles(g);
            let back = parse_smiles(&s).unwrap();
            assert!(isomorphic(&g.without_maps(), &back), "round trip failed: {s}");
        }
    }

    #[test]
    fn generated_reactions_extract_and_replay() {
        let lines = gen_reaction_corpus(30, 5);
        assert_eq!(lines.len(), 30);
        for line in &lines {
            let rec = parse_reaction(line).unwrap();
            let label = extract_center_label(&rec);
            assert_ne!(label.kind, CenterKind::Unsupported, "{line}");
            let trace = extract_trace(&rec, &label).unwrap();
            let rebuilt = crate::reaction::replay_trace(&trace).unwrap();
            assert!(isomorphic(
                &rebuilt.without_maps(),
                &rec.reactants.without_maps()
            ));
        }
    }

    #[test]
    fn curated_reactions_all_supported() {
        for line in curated_reactions() {
            let rec = parse_reaction(line).unwrap();
            let label = extract_center_label(&rec);
            assert_ne!(label.kind, CenterKind::Unsupported, "{line}");
            extract_trace(&rec, &label).unwrap_or_else(|e| panic!("{line}: {e}"));
        }
    }

    #[test]
    fn corpus_is_deterministic() {
        let a = gen_reaction_corpus(10, 99);
        let b = gen_reaction_corpus(10, 99);
        assert_eq!(a, b);
        let c = molecule_corpus(60, 3);
        let d = molecule_corpus(60, 3);
        assert_eq!(c, d);
        assert_eq!(c.len(), 60);
    }
}
