//! SMILES reader for the organic subset plus bracket atoms, ring closures,
//! branches and dot-separated components. Stereo marks and isotopes are
//! accepted and dropped with a warning.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use super::graph::{BondOrder, ChemError, Element, GraphBuilder, HCount, MolGraph, OrderSpec};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ParseWarning {
    StereoIgnored,
    IsotopeIgnored,
}

pub fn parse_smiles(text: &str) -> Result<MolGraph, ChemError> {
    parse_smiles_with_warnings(text).map(|(g, _)| g)
}

pub fn parse_smiles_with_warnings(
    text: &str,
) -> Result<(MolGraph, Vec<ParseWarning>), ChemError> {
    if text.is_empty() {
        return Err(ChemError::Syntax("empty SMILES".into()));
    }
    let bytes = text.as_bytes();
    let mut pos = 0usize;
    let mut builder = GraphBuilder::new();
    let mut warnings = Vec::new();

    let mut prev: Option<usize> = None;
    let mut branch_stack: Vec<Option<usize>> = Vec::new();
    let mut pending_bond: Option<OrderSpec> = None;
    // ring-closure digit -> (atom, bond spec at opening)
    let mut ring_open: BTreeMap<u32, (usize, Option<OrderSpec>)> = BTreeMap::new();
    let mut seen_maps: BTreeMap<u32, usize> = BTreeMap::new();

    while pos < bytes.len() {
        let ch = bytes[pos] as char;
        match ch {
            '(' => {
                if prev.is_none() {
                    return Err(ChemError::Syntax("branch before any atom".into()));
                }
                branch_stack.push(prev);
                pos += 1;
            }
            ')' => {
                prev = branch_stack
                    .pop()
                    .ok_or_else(|| ChemError::Syntax("unbalanced ')'".into()))?;
                pos += 1;
            }
            '.' => {
                if !branch_stack.is_empty() {
                    return Err(ChemError::Syntax("'.' inside a branch".into()));
                }
                if pending_bond.is_some() {
                    return Err(ChemError::Syntax("bond symbol before '.'".into()));
                }
                if prev.is_none() {
                    return Err(ChemError::Syntax("'.' without a preceding atom".into()));
                }
                prev = None;
                pos += 1;
            }
            '-' => {
                pending_bond = Some(OrderSpec::Explicit(BondOrder::Single));
                pos += 1;
            }
            '=' => {
                pending_bond = Some(OrderSpec::Explicit(BondOrder::Double));
                pos += 1;
            }
            '#' => {
                pending_bond = Some(OrderSpec::Explicit(BondOrder::Triple));
                pos += 1;
            }
            ':' => {
                pending_bond = Some(OrderSpec::Explicit(BondOrder::Aromatic));
                pos += 1;
            }
            '/' | '\\' => {
                warnings.push(ParseWarning::StereoIgnored);
                pending_bond = Some(OrderSpec::Explicit(BondOrder::Single));
                pos += 1;
            }
            '%' => {
                if pos + 2 >= bytes.len()
                    || !bytes[pos + 1].is_ascii_digit()
                    || !bytes[pos + 2].is_ascii_digit()
                {
                    return Err(ChemError::Syntax("'%' needs two digits".into()));
                }
                let num = (bytes[pos + 1] - b'0') as u32 * 10 + (bytes[pos + 2] - b'0') as u32;
                close_ring(
                    &mut builder,
                    &mut ring_open,
                    num,
                    prev,
                    &mut pending_bond,
                )?;
                pos += 3;
            }
            '0'..='9' => {
                let num = (bytes[pos] - b'0') as u32;
                close_ring(
                    &mut builder,
                    &mut ring_open,
                    num,
                    prev,
                    &mut pending_bond,
                )?;
                pos += 1;
            }
            '[' => {
                let end = text[pos..]
                    .find(']')
                    .map(|e| pos + e)
                    .ok_or_else(|| ChemError::Syntax("unclosed '['".into()))?;
                let atom =
                    parse_bracket(&text[pos + 1..end], &mut warnings).map_err(ChemError::Syntax)?;
                let idx = builder.add_atom(
                    atom.element,
                    atom.charge,
                    HCount::Explicit(atom.h),
                    atom.aromatic,
                    atom.map,
                );
                if let Some(m) = atom.map {
                    if seen_maps.insert(m, idx).is_some() {
                        return Err(ChemError::Syntax(format!("duplicate atom map {m}")));
                    }
                }
                link(&mut builder, prev, idx, &mut pending_bond)?;
                prev = Some(idx);
                pos = end + 1;
            }
            _ => {
                // bare organic-subset atom, one or two letters
                let (sym, aromatic, len) = read_bare_symbol(&text[pos..])
                    .ok_or_else(|| ChemError::Syntax(format!("unexpected '{ch}' at {pos}")))?;
                let element = Element::from_symbol(sym)
                    .ok_or_else(|| ChemError::Syntax(format!("unknown element '{sym}'")))?;
                let idx = builder.add_atom(element, 0, HCount::Implicit, aromatic, None);
                link(&mut builder, prev, idx, &mut pending_bond)?;
                prev = Some(idx);
                pos += len;
            }
        }
    }

    if !branch_stack.is_empty() {
        return Err(ChemError::Syntax("unbalanced '('".into()));
    }
    if let Some((&d, _)) = ring_open.iter().next() {
        return Err(ChemError::Syntax(format!("unclosed ring bond {d}")));
    }
    if pending_bond.is_some() {
        return Err(ChemError::Syntax("dangling bond symbol".into()));
    }

    let g = builder.finish()?;
    Ok((g, warnings))
}

fn link(
    builder: &mut GraphBuilder,
    prev: Option<usize>,
    new: usize,
    pending: &mut Option<OrderSpec>,
) -> Result<(), ChemError> {
    let spec = pending.take();
    if let Some(p) = prev {
        builder.add_bond(p, new, spec.unwrap_or(OrderSpec::Implicit));
    } else if spec.is_some() {
        return Err(ChemError::Syntax("bond symbol with no preceding atom".into()));
    }
    Ok(())
}

fn close_ring(
    builder: &mut GraphBuilder,
    ring_open: &mut BTreeMap<u32, (usize, Option<OrderSpec>)>,
    num: u32,
    prev: Option<usize>,
    pending: &mut Option<OrderSpec>,
) -> Result<(), ChemError> {
    let here = prev.ok_or_else(|| ChemError::Syntax("ring digit before any atom".into()))?;
    let spec_here = pending.take();
    match ring_open.remove(&num) {
        None => {
            ring_open.insert(num, (here, spec_here));
        }
        Some((there, spec_there)) => {
            if there == here {
                return Err(ChemError::Syntax(format!("ring bond {num} closes on itself")));
            }
            let spec = match (spec_here, spec_there) {
                (Some(a), Some(b)) if a != b => {
                    return Err(ChemError::Syntax(format!(
                        "conflicting bond symbols on ring closure {num}"
                    )))
                }
                (Some(a), _) => Some(a),
                (None, b) => b,
            };
            builder.add_bond(there, here, spec.unwrap_or(OrderSpec::Implicit));
        }
    }
    Ok(())
}

/// Reads a bare atom symbol; two-letter Cl/Br first, then single letters.
fn read_bare_symbol(s: &str) -> Option<(&'static str, bool, usize)> {
    if s.starts_with("Cl") {
        return Some(("Cl", false, 2));
    }
    if s.starts_with("Br") {
        return Some(("Br", false, 2));
    }
    let c = s.chars().next()?;
    let (sym, aromatic) = match c {
        'B' => ("B", false),
        'C' => ("C", false),
        'N' => ("N", false),
        'O' => ("O", false),
        'P' => ("P", false),
        'S' => ("S", false),
        'F' => ("F", false),
        'I' => ("I", false),
        'b' => ("B", true),
        'c' => ("C", true),
        'n' => ("N", true),
        'o' => ("O", true),
        'p' => ("P", true),
        's' => ("S", true),
        _ => return None,
    };
    Some((sym, aromatic, 1))
}

struct BracketAtom {
    element: Element,
    aromatic: bool,
    charge: i8,
    h: u8,
    map: Option<u32>,
}

fn parse_bracket(body: &str, warnings: &mut Vec<ParseWarning>) -> Result<BracketAtom, String> {
    let b = body.as_bytes();
    let mut i = 0usize;

    // isotope
    let iso_start = i;
    while i < b.len() && b[i].is_ascii_digit() {
        i += 1;
    }
    if i > iso_start {
        warnings.push(ParseWarning::IsotopeIgnored);
    }

    // element symbol: uppercase+lowercase?, or lowercase aromatic
    if i >= b.len() {
        return Err("empty bracket atom".into());
    }
    let (sym, aromatic) = if b[i].is_ascii_uppercase() {
        let mut end = i + 1;
        if end < b.len() && b[end].is_ascii_lowercase() && !matches!(b[end], b'h') {
            // only treat the next char as part of the symbol if it forms one
            let two = &body[i..end + 1];
            if Element::from_symbol(two).is_some() {
                end += 1;
            }
        }
        (String::from(&body[i..end]), false)
    } else if b[i].is_ascii_lowercase() {
        let mut end = i + 1;
        if end < b.len() && b[end] == b'e' && (b[i] == b's' || b[i] == b'a') {
            end += 1; // se / as
        }
        let mut s = String::from(&body[i..end]);
        let first = s.remove(0).to_ascii_uppercase();
        let mut cap = String::new();
        cap.push(first);
        cap.push_str(&s);
        (cap, true)
    } else {
        return Err(format!("bad element start '{}'", b[i] as char));
    };
    i += sym.len();
    let element =
        Element::from_symbol(&sym).ok_or_else(|| format!("unknown element '{sym}'"))?;
    if aromatic && !element.aromatic_capable() {
        return Err(format!("element '{sym}' cannot be aromatic"));
    }

    // chirality: @ or @@ (+ named classes not supported)
    while i < b.len() && b[i] == b'@' {
        warnings.push(ParseWarning::StereoIgnored);
        i += 1;
    }

    // hydrogen count
    let mut h = 0u8;
    if i < b.len() && b[i] == b'H' {
        i += 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        h = if i > start {
            body[start..i].parse::<u8>().map_err(|_| "bad H count")?
        } else {
            1
        };
    }

    // charge
    let mut charge: i8 = 0;
    if i < b.len() && (b[i] == b'+' || b[i] == b'-') {
        let sign: i8 = if b[i] == b'+' { 1 } else { -1 };
        let symbol = b[i];
        i += 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i > start {
            let n: i8 = body[start..i].parse().map_err(|_| "bad charge")?;
            charge = sign * n;
        } else {
            charge = sign;
            while i < b.len() && b[i] == symbol {
                charge += sign;
                i += 1;
            }
        }
    }
    if !(-4..=4).contains(&charge) {
        return Err(format!("charge {charge} out of range"));
    }

    // atom map
    let mut map = None;
    if i < b.len() && b[i] == b':' {
        i += 1;
        let start = i;
        while i < b.len() && b[i].is_ascii_digit() {
            i += 1;
        }
        if i == start {
            return Err("':' without map number".into());
        }
        let m: u32 = body[start..i].parse().map_err(|_| "bad map number")?;
        if m == 0 {
            return Err("map number must be positive".into());
        }
        map = Some(m);
    }

    if i != b.len() {
        return Err(format!("trailing '{}' in bracket atom", &body[i..]));
    }

    Ok(BracketAtom {
        element,
        aromatic,
        charge,
        h,
        map,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::graph::BondOrder;

    #[test]
    fn ethane() {
        let g = parse_smiles("CC").unwrap();
        assert_eq!(g.n_atoms(), 2);
        assert_eq!(g.n_bonds(), 1);
        assert_eq!(g.bonds[0].order, BondOrder::Single);
        assert_eq!(g.atoms[0].explicit_h, 3);
        assert_eq!(g.atoms[1].explicit_h, 3);
    }

    #[test]
    fn benzene_lowercase() {
        let g = parse_smiles("c1ccccc1").unwrap();
        assert_eq!(g.n_atoms(), 6);
        assert_eq!(g.n_bonds(), 6);
        assert!(g.atoms.iter().all(|a| a.aromatic));
        assert!(g
            .bonds
            .iter()
            .all(|b| b.order == BondOrder::Aromatic && b.in_ring));
        assert!(g.atoms.iter().all(|a| a.explicit_h == 1));
    }

    #[test]
    fn benzene_kekule_matches_aromatic_form() {
        let g = parse_smiles("C1=CC=CC=C1").unwrap();
        assert!(g.atoms.iter().all(|a| a.aromatic));
        assert!(g.bonds.iter().all(|b| b.order == BondOrder::Aromatic));
    }

    #[test]
    fn bracket_atoms_with_maps() {
        let g = parse_smiles("[CH3:1][NH2:2]").unwrap();
        assert_eq!(g.atoms[0].map_num, Some(1));
        assert_eq!(g.atoms[1].map_num, Some(2));
        assert_eq!(g.atoms[1].explicit_h, 2);
        assert_eq!(g.atoms[1].element.symbol(), "N");
    }

    #[test]
    fn charges() {
        let g = parse_smiles("[NH4+]").unwrap();
        assert_eq!(g.atoms[0].formal_charge, 1);
        assert_eq!(g.atoms[0].explicit_h, 4);
        let g = parse_smiles("[O-]C").unwrap();
        assert_eq!(g.atoms[0].formal_charge, -1);
        let g = parse_smiles("[Fe+2]").unwrap();
        assert_eq!(g.atoms[0].formal_charge, 2);
    }

    #[test]
    fn components_and_branches() {
        let g = parse_smiles("CC(C)(C)O.CN").unwrap();
        assert_eq!(g.components().len(), 2);
        assert_eq!(g.n_atoms(), 7);
    }

    #[test]
    fn pyrrole_vs_pyridine_h() {
        let g = parse_smiles("c1cc[nH]c1").unwrap();
        let n = g
            .atoms
            .iter()
            .position(|a| a.element.symbol() == "N")
            .unwrap();
        assert_eq!(g.atoms[n].explicit_h, 1);
        assert!(g.atoms[n].aromatic);
        let g = parse_smiles("c1ccncc1").unwrap();
        let n = g
            .atoms
            .iter()
            .position(|a| a.element.symbol() == "N")
            .unwrap();
        assert_eq!(g.atoms[n].explicit_h, 0);
    }

    #[test]
    fn stereo_dropped_with_warning() {
        let (g, w) = parse_smiles_with_warnings("F/C=C/F").unwrap();
        assert_eq!(g.n_atoms(), 4);
        assert!(w.contains(&ParseWarning::StereoIgnored));
        let (_, w) = parse_smiles_with_warnings("[C@@H](N)(C)O").unwrap();
        assert!(w.contains(&ParseWarning::StereoIgnored));
    }

    #[test]
    fn ring_closure_with_bond_symbol() {
        let g = parse_smiles("C=1CCCCC=1").unwrap();
        assert_eq!(g.n_bonds(), 6);
        assert!(g.bonds.iter().any(|b| b.order == BondOrder::Double));
        assert!(parse_smiles("C=1CCCCC#1").is_err());
    }

    #[test]
    fn percent_ring_closure() {
        let g = parse_smiles("C%12CCCCC%12").unwrap();
        assert_eq!(g.n_bonds(), 6);
    }

    #[test]
    fn error_cases() {
        assert!(parse_smiles("").is_err());
        assert!(parse_smiles("C(").is_err());
        assert!(parse_smiles("C)").is_err());
        assert!(parse_smiles("C1CC").is_err());
        assert!(parse_smiles("C=").is_err());
        assert!(parse_smiles("[Xx]").is_err());
        assert!(parse_smiles("C..C").is_err());
        assert!(parse_smiles("[CH3:1][CH3:1]").is_err());
        // valence: pentavalent carbon
        assert!(parse_smiles("C(C)(C)(C)(C)C").is_err());
    }

    #[test]
    fn aromatic_ring_five_membered() {
        for s in ["c1ccoc1", "c1ccsc1", "c1cc[nH]c1"] {
            let g = parse_smiles(s).unwrap();
            assert!(g.atoms.iter().all(|a| a.aromatic), "{s}");
        }
    }

    #[test]
    fn biphenyl_single_linker() {
        let g = parse_smiles("c1ccccc1-c1ccccc1").unwrap();
        let linker = g
            .bonds
            .iter()
            .find(|b| !b.in_ring)
            .expect("linker bond");
        assert_eq!(linker.order, BondOrder::Single);
        // implicit bond between aromatic atoms outside a ring is single too
        let g2 = parse_smiles("c1ccccc1c1ccccc1").unwrap();
        let linker2 = g2.bonds.iter().find(|b| !b.in_ring).unwrap();
        assert_eq!(linker2.order, BondOrder::Single);
    }
}
