//! Circular (Morgan-style) fingerprints and Tanimoto similarity.
//!
//! An atom's environment hash at radius r mixes its radius r-1 hash with the
//! sorted (bond class, neighbor hash) list; every (atom, radius) hash sets
//! one bit. Sorting makes the bitset invariant to atom order.

use alloc::vec;
use alloc::vec::Vec;

use core::fmt;

use super::graph::MolGraph;
use crate::rng::mix;
use crate::Float;

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct MorganFingerprint {
    width: usize,
    words: Vec<u64>,
}

impl MorganFingerprint {
    pub fn empty(width: usize) -> Self {
        MorganFingerprint {
            width,
            words: vec![0; width.div_ceil(64)],
        }
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn set(&mut self, bit: usize) {
        debug_assert!(bit < self.width);
        self.words[bit / 64] |= 1 << (bit % 64);
    }

    pub fn get(&self, bit: usize) -> bool {
        self.words[bit / 64] >> (bit % 64) & 1 == 1
    }

    pub fn popcount(&self) -> usize {
        self.words.iter().map(|w| w.count_ones() as usize).sum()
    }

    pub fn bits(&self) -> impl Iterator<Item = usize> + '_ {
        (0..self.width).filter(|&b| self.get(b))
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FingerprintError {
    WidthMismatch { a: usize, b: usize },
}

impl fmt::Display for FingerprintError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FingerprintError::WidthMismatch { a, b } => {
                write!(f, "fingerprint widths differ: {a} vs {b}")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FingerprintError {}

pub(crate) fn atom_seed_hash(g: &MolGraph, i: usize) -> u64 {
    let a = &g.atoms[i];
    let mut h = 0x9d5c_f0aa_u64;
    h = mix(h, a.element.index() as u64);
    h = mix(h, (a.formal_charge as i64 + 8) as u64);
    h = mix(h, g.degree(i) as u64);
    h = mix(h, a.explicit_h as u64);
    h = mix(h, a.aromatic as u64);
    h = mix(h, g.atom_in_ring(i) as u64);
    h
}

pub(crate) fn expand_hash(g: &MolGraph, prev: &[u64], i: usize) -> u64 {
    let mut nbrs: Vec<u64> = g
        .neighbors(i)
        .iter()
        .map(|&(v, bi)| mix(g.bonds[bi].order.class() as u64, prev[v]))
        .collect();
    nbrs.sort_unstable();
    let mut h = mix(0x51ed_2701, prev[i]);
    for v in nbrs {
        h = mix(h, v);
    }
    h
}

/// Morgan fingerprint of the given radius and bit width.
pub fn morgan_fingerprint(g: &MolGraph, radius: usize, width: usize) -> MorganFingerprint {
    assert!(width >= 1, "fingerprint width must be positive");
    let mut fp = MorganFingerprint::empty(width);
    let mut cur: Vec<u64> = (0..g.n_atoms()).map(|i| atom_seed_hash(g, i)).collect();
    for h in &cur {
        fp.set((h % width as u64) as usize);
    }
    for _ in 0..radius {
        let next: Vec<u64> = (0..g.n_atoms()).map(|i| expand_hash(g, &cur, i)).collect();
        for h in &next {
            fp.set((h % width as u64) as usize);
        }
        cur = next;
    }
    fp
}

/// |a AND b| / |a OR b|; 1.0 when both are empty.
pub fn tanimoto(a: &MorganFingerprint, b: &MorganFingerprint) -> Result<Float, FingerprintError> {
    if a.width != b.width {
        return Err(FingerprintError::WidthMismatch {
            a: a.width,
            b: b.width,
        });
    }
    let mut inter = 0usize;
    let mut union = 0usize;
    for (x, y) in a.words.iter().zip(b.words.iter()) {
        inter += (x & y).count_ones() as usize;
        union += (x | y).count_ones() as usize;
    }
    if union == 0 {
        Ok(1.0)
    } else {
        Ok(inter as Float / union as Float)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn radius_zero_is_atom_hashes() {
        let g = parse_smiles("CO").unwrap();
        let fp = morgan_fingerprint(&g, 0, 2048);
        let expected: alloc::collections::BTreeSet<usize> = (0..g.n_atoms())
            .map(|i| (atom_seed_hash(&g, i) % 2048) as usize)
            .collect();
        let got: alloc::collections::BTreeSet<usize> = fp.bits().collect();
        assert_eq!(got, expected);
    }

    #[test]
    fn permutation_invariant() {
        let g = parse_smiles("CC(=O)Oc1ccccc1C(=O)O").unwrap();
        let perm: Vec<usize> = (0..g.n_atoms()).rev().collect();
        let gp = g.permuted(&perm);
        assert_eq!(morgan_fingerprint(&g, 2, 2048), morgan_fingerprint(&gp, 2, 2048));
    }

    #[test]
    fn different_molecules_differ() {
        let a = morgan_fingerprint(&parse_smiles("CC").unwrap(), 1, 2048);
        let b = morgan_fingerprint(&parse_smiles("CCCC").unwrap(), 1, 2048);
        assert_ne!(a, b);
    }

    #[test]
    fn tanimoto_basics() {
        let a = morgan_fingerprint(&parse_smiles("c1ccccc1O").unwrap(), 2, 2048);
        assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        let mut x = MorganFingerprint::empty(64);
        let mut y = MorganFingerprint::empty(64);
        x.set(1);
        x.set(2);
        x.set(3);
        y.set(2);
        y.set(3);
        y.set(4);
        assert!((tanimoto(&x, &y).unwrap() - 0.5).abs() < 1e-12);
        let z = MorganFingerprint::empty(64);
        assert_eq!(tanimoto(&z, &z).unwrap(), 1.0);
        let w = MorganFingerprint::empty(128);
        assert!(tanimoto(&x, &w).is_err());
        // disjoint
        let mut d = MorganFingerprint::empty(64);
        d.set(10);
        assert_eq!(tanimoto(&x, &d).unwrap(), 0.0);
    }

    #[test]
    fn popcount_bounded_by_width() {
        let g = parse_smiles("CC(C)Cc1ccc(cc1)C(C)C(=O)O").unwrap();
        let fp = morgan_fingerprint(&g, 2, 64);
        assert!(fp.popcount() <= 64);
    }
}
