//! Dense feature vectors for atoms and bonds, fed to the message passing
//! encoders.

use alloc::string::String;
use alloc::vec::Vec;

use core::fmt;

use super::graph::{BondOrder, Element, MolGraph, ELEMENTS};
use crate::Float;

#[derive(Clone, Debug)]
pub struct FeatureConfig {
    /// One-hot element alphabet; parsed elements outside it are rejected.
    pub alphabet: Vec<Element>,
    /// Number of reaction classes appended as a one-hot when known.
    pub n_reaction_types: usize,
}

impl Default for FeatureConfig {
    fn default() -> Self {
        FeatureConfig {
            alphabet: (0..ELEMENTS.len()).map(|i| Element(i as u8)).collect(),
            n_reaction_types: 10,
        }
    }
}

impl FeatureConfig {
    /// Atom feature width: element one-hot + valence + charge + H count +
    /// ring flag + aromatic flag, plus the reaction-type one-hot when
    /// `type_known`.
    pub fn atom_dim(&self, type_known: bool) -> usize {
        self.alphabet.len() + 5 + if type_known { self.n_reaction_types } else { 0 }
    }

    /// Bond feature width: order one-hot (single/double/triple/aromatic) +
    /// conjugated + aromatic + ring flags.
    pub fn bond_dim(&self) -> usize {
        4 + 3
    }
}

pub type AtomFeatures = Vec<Float>;
pub type BondFeatures = Vec<Float>;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum FeatureError {
    UnknownElement(String),
    BadReactionType(usize),
}

impl fmt::Display for FeatureError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            FeatureError::UnknownElement(e) => write!(f, "element '{e}' outside alphabet"),
            FeatureError::BadReactionType(t) => write!(f, "reaction type {t} outside 1..=10"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for FeatureError {}

/// Per-atom and per-bond features. `reaction_type` (1-based) appends its
/// one-hot to every atom vector.
pub fn featurize(
    g: &MolGraph,
    cfg: &FeatureConfig,
    reaction_type: Option<usize>,
) -> Result<(Vec<AtomFeatures>, Vec<BondFeatures>), FeatureError> {
    if let Some(t) = reaction_type {
        if t == 0 || t > cfg.n_reaction_types {
            return Err(FeatureError::BadReactionType(t));
        }
    }
    let mut atoms = Vec::with_capacity(g.n_atoms());
    for i in 0..g.n_atoms() {
        let a = &g.atoms[i];
        let slot = cfg
            .alphabet
            .iter()
            .position(|e| *e == a.element)
            .ok_or_else(|| FeatureError::UnknownElement(String::from(a.element.symbol())))?;
        let mut v = alloc::vec![0.0; cfg.atom_dim(reaction_type.is_some())];
        v[slot] = 1.0;
        let base = cfg.alphabet.len();
        v[base] = g.valence(i) as Float;
        v[base + 1] = a.formal_charge as Float;
        v[base + 2] = a.explicit_h as Float;
        v[base + 3] = if g.atom_in_ring(i) { 1.0 } else { 0.0 };
        v[base + 4] = if a.aromatic { 1.0 } else { 0.0 };
        if let Some(t) = reaction_type {
            v[base + 5 + (t - 1)] = 1.0;
        }
        atoms.push(v);
    }
    let mut bonds = Vec::with_capacity(g.n_bonds());
    for b in &g.bonds {
        let mut v = alloc::vec![0.0; cfg.bond_dim()];
        let slot = match b.order {
            BondOrder::Single => 0,
            BondOrder::Double => 1,
            BondOrder::Triple => 2,
            BondOrder::Aromatic => 3,
        };
        v[slot] = 1.0;
        v[4] = if b.conjugated { 1.0 } else { 0.0 };
        v[5] = if b.order == BondOrder::Aromatic { 1.0 } else { 0.0 };
        v[6] = if b.in_ring { 1.0 } else { 0.0 };
        bonds.push(v);
    }
    Ok((atoms, bonds))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::chem::parse_smiles;

    #[test]
    fn sp3_carbon_slots() {
        let g = parse_smiles("CC").unwrap();
        let cfg = FeatureConfig::default();
        let (atoms, bonds) = featurize(&g, &cfg, None).unwrap();
        let base = cfg.alphabet.len();
        assert_eq!(atoms[0][base + 1], 0.0); // charge
        assert_eq!(atoms[0][base + 2], 3.0); // H count
        assert_eq!(atoms[0][base + 3], 0.0); // ring
        assert_eq!(atoms[0][base], 4.0); // valence
        assert_eq!(bonds.len(), 1);
        assert_eq!(bonds[0][0], 1.0);
    }

    #[test]
    fn aromatic_carbon_flags() {
        let g = parse_smiles("c1ccccc1").unwrap();
        let cfg = FeatureConfig::default();
        let (atoms, bonds) = featurize(&g, &cfg, None).unwrap();
        let base = cfg.alphabet.len();
        assert_eq!(atoms[0][base + 3], 1.0);
        assert_eq!(atoms[0][base + 4], 1.0);
        assert_eq!(bonds[0][3], 1.0);
        assert_eq!(bonds[0][5], 1.0);
        assert_eq!(bonds[0][6], 1.0);
    }

    #[test]
    fn reaction_type_one_hot() {
        let g = parse_smiles("C").unwrap();
        let cfg = FeatureConfig::default();
        let (atoms, _) = featurize(&g, &cfg, Some(2)).unwrap();
        let base_len = cfg.atom_dim(false);
        assert_eq!(atoms[0].len(), base_len + 10);
        assert_eq!(atoms[0][base_len + 1], 1.0);
        assert_eq!(atoms[0].iter().filter(|&&x| x != 0.0).count(), 4); // elem, valence, H, type
        assert!(featurize(&g, &cfg, Some(11)).is_err());
        assert!(featurize(&g, &cfg, Some(0)).is_err());
    }

    #[test]
    fn unknown_element_rejected() {
        let g = parse_smiles("[Fe+2]").unwrap();
        let mut cfg = FeatureConfig::default();
        cfg.alphabet.truncate(10); // C..B only
        assert!(matches!(
            featurize(&g, &cfg, None),
            Err(FeatureError::UnknownElement(_))
        ));
    }

    #[test]
    fn equivariance_under_permutation() {
        let g = parse_smiles("CC(=O)Oc1ccccc1").unwrap();
        let cfg = FeatureConfig::default();
        let (atoms, _) = featurize(&g, &cfg, None).unwrap();
        let perm: Vec<usize> = (0..g.n_atoms()).rev().collect();
        let gp = g.permuted(&perm);
        let (atoms_p, _) = featurize(&gp, &cfg, None).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            assert_eq!(atoms_p[new], atoms[old]);
        }
    }
}
