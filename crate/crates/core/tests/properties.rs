//! Property tests over the spec's cross-cutting invariants.

use proptest::prelude::*;

use retrograph_core::brics::fragment;
use retrograph_core::chem::{
    isomorphic, morgan_fingerprint, parse_smiles, tanimoto, write_smiles, Element, GraphBuilder,
    HCount, MolGraph, MorganFingerprint, OrderSpec,
};
use retrograph_core::eval::topk_from_ranks;

const CORPUS: &[&str] = &[
    "CC(=O)Oc1ccccc1C(=O)O",
    "CN1C=NC2=C1C(=O)N(C)C(=O)N2C",
    "CC(C)Cc1ccc(cc1)C(C)C(=O)O",
    "CC(=O)Nc1ccc(O)cc1",
    "c1ccc2ccccc2c1",
    "OCC(O)CO",
    "CS(=O)(=O)Cl",
    "C1COCCN1",
    "O=[N+]([O-])c1ccccc1",
    "FC(F)(F)c1ccccc1",
    "CCOC(=O)c1csc(-c2ccc(F)cc2)c1",
];

/// Random tree-shaped molecules over a small heteroatom alphabet; parents
/// always have spare valence because the tree is built leaf-by-leaf with
/// single bonds and capped degrees.
fn arb_molecule() -> impl Strategy<Value = MolGraph> {
    let elem = prop::sample::select(vec!["C", "C", "C", "N", "O", "S", "F", "Cl"]);
    proptest::collection::vec((elem, any::<u32>()), 1..13).prop_map(|choices| {
        let mut b = GraphBuilder::new();
        let mut capacity: Vec<u8> = Vec::new();
        let first = Element::from_symbol("C").unwrap();
        b.add_atom(first, 0, HCount::Implicit, false, None);
        capacity.push(4);
        for (sym, pick) in choices {
            let open: Vec<usize> = capacity
                .iter()
                .enumerate()
                .filter(|&(_, &c)| c >= 1)
                .map(|(i, _)| i)
                .collect();
            if open.is_empty() {
                break;
            }
            let parent = open[pick as usize % open.len()];
            let e = Element::from_symbol(sym).unwrap();
            let idx = b.add_atom(e, 0, HCount::Implicit, false, None);
            b.add_bond(
                parent,
                idx,
                OrderSpec::Explicit(retrograph_core::chem::BondOrder::Single),
            );
            capacity[parent] -= 1;
            capacity.push(match sym {
                "C" => 3,
                "N" => 2,
                "O" | "S" => 1,
                _ => 0,
            });
        }
        b.finish().expect("tree molecules are valid")
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    /// Canonical SMILES and fingerprints are invariant under atom
    /// relabeling; fragmentation yields the same partition.
    #[test]
    fn corpus_invariance_under_permutation(
        idx in 0usize..CORPUS.len(),
        seed in any::<u64>(),
    ) {
        let g = parse_smiles(CORPUS[idx]).unwrap();
        let mut rng = retrograph_core::rng::Rng::new(seed);
        let mut perm: Vec<usize> = (0..g.n_atoms()).collect();
        rng.shuffle(&mut perm);
        let gp = g.permuted(&perm);
        prop_assert_eq!(write_smiles(&g), write_smiles(&gp));
        prop_assert_eq!(
            morgan_fingerprint(&g, 2, 1024),
            morgan_fingerprint(&gp, 2, 1024)
        );
        let parts = |m: &MolGraph, back: Option<&[usize]>| {
            let bg = fragment(m);
            let mut sets: Vec<Vec<usize>> = bg
                .nodes
                .iter()
                .map(|n| {
                    let mut v: Vec<usize> = n
                        .atoms
                        .iter()
                        .map(|&a| back.map(|p| p[a]).unwrap_or(a))
                        .collect();
                    v.sort_unstable();
                    v
                })
                .collect();
            sets.sort();
            sets
        };
        prop_assert_eq!(parts(&g, None), parts(&gp, Some(&perm)));
    }

    /// Round trip through the writer preserves the graph up to isomorphism,
    /// for arbitrary generated molecules.
    #[test]
    fn generated_molecule_round_trip(g in arb_molecule()) {
        let s = write_smiles(&g);
        let back = parse_smiles(&s).unwrap();
        prop_assert!(isomorphic(&g, &back), "round trip failed for {}", s);
        prop_assert_eq!(write_smiles(&back), s);
    }

    /// Tanimoto is symmetric, bounded, and 1 on itself.
    #[test]
    fn tanimoto_properties(
        bits_a in proptest::collection::btree_set(0usize..256, 0..40),
        bits_b in proptest::collection::btree_set(0usize..256, 0..40),
    ) {
        let mut a = MorganFingerprint::empty(256);
        let mut b = MorganFingerprint::empty(256);
        for &x in &bits_a { a.set(x); }
        for &x in &bits_b { b.set(x); }
        let ab = tanimoto(&a, &b).unwrap();
        let ba = tanimoto(&b, &a).unwrap();
        prop_assert!((ab - ba).abs() < 1e-15);
        prop_assert!((0.0..=1.0).contains(&ab));
        prop_assert_eq!(tanimoto(&a, &a).unwrap(), 1.0);
        prop_assert!(a.popcount() <= 256);
    }

    /// Top-k accuracy is monotone in k and within [0, 1].
    #[test]
    fn topk_monotone(
        ranks in proptest::collection::vec(proptest::option::of(1usize..20), 1..50),
    ) {
        let f = topk_from_ranks(&ranks, &[1, 3, 5, 10]);
        for w in f.windows(2) {
            prop_assert!(w[0] <= w[1]);
        }
        for x in f {
            prop_assert!((0.0..=1.0).contains(&x));
        }
    }

    /// Permuted atoms keep their feature rows (equivariance).
    #[test]
    fn featurize_equivariant(idx in 0usize..CORPUS.len(), seed in any::<u64>()) {
        use retrograph_core::chem::{featurize, FeatureConfig};
        let g = parse_smiles(CORPUS[idx]).unwrap();
        let mut rng = retrograph_core::rng::Rng::new(seed);
        let mut perm: Vec<usize> = (0..g.n_atoms()).collect();
        rng.shuffle(&mut perm);
        let gp = g.permuted(&perm);
        let cfg = FeatureConfig::default();
        let (fa, _) = featurize(&g, &cfg, None).unwrap();
        let (fp, _) = featurize(&gp, &cfg, None).unwrap();
        for (new, &old) in perm.iter().enumerate() {
            prop_assert_eq!(&fp[new], &fa[old]);
        }
    }
}
