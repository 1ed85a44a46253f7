//! Molecular graph data model, SMILES parsing/writing, feature vectors and
//! fingerprints.

mod canon;
mod features;
mod fingerprint;
mod graph;
mod iso;
mod smiles;

pub use canon::{canonical_ranks, write_smiles};
pub use features::{featurize, AtomFeatures, BondFeatures, FeatureConfig, FeatureError};
pub use fingerprint::{morgan_fingerprint, tanimoto, FingerprintError, MorganFingerprint};
pub use graph::{
    allowed_valences, Atom, Bond, BondOrder, ChemError, Element, GraphBuilder, HCount, MolGraph,
    OrderSpec, ELEMENTS,
};
pub use iso::isomorphic;
pub use smiles::{parse_smiles, parse_smiles_with_warnings, ParseWarning};
