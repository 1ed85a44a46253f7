//! Molecule representation learning: message passing over the molecular
//! graph for atom embeddings, optional message passing over the BRICS
//! fragment graph to enrich them, and bond embeddings derived from atom
//! pairs. Graphs are batched as disjoint unions.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::brics::{fragment, BricsGraph};
use crate::chem::{featurize, FeatureConfig, FeatureError, MolGraph};
use crate::rng::Rng;
use crate::tensor::{ParamStore, Tape, Tensor, TensorError, Tid};
use crate::Float;

#[derive(Clone, Debug)]
pub struct EncoderConfig {
    pub hidden_dim: usize,
    /// Message iterations over the molecular graph.
    pub t_atom: usize,
    /// Message iterations over the fragment graph.
    pub t_frag: usize,
    pub use_brics: bool,
    pub type_known: bool,
    pub features: FeatureConfig,
}

impl EncoderConfig {
    pub fn new(hidden_dim: usize, t_atom: usize) -> EncoderConfig {
        EncoderConfig {
            hidden_dim,
            t_atom,
            t_frag: 1,
            use_brics: false,
            type_known: false,
            features: FeatureConfig::default(),
        }
    }

    pub fn atom_dim(&self) -> usize {
        self.features.atom_dim(self.type_known)
    }

    pub fn bond_dim(&self) -> usize {
        self.features.bond_dim()
    }
}

/// Disjoint union of graphs with the index arrays the encoder needs.
pub struct GraphBatch {
    pub n_graphs: usize,
    pub n_atoms: usize,
    pub n_bonds: usize,
    pub atom_feats: Tensor,
    pub bond_feats: Tensor,
    /// Directed bonds: source/target atom rows, the reverse direction's
    /// index, and the underlying undirected bond row.
    pub dir_src: Vec<usize>,
    pub dir_dst: Vec<usize>,
    pub dir_rev: Vec<usize>,
    pub dir_bond: Vec<usize>,
    /// Undirected bond endpoints as atom rows.
    pub bond_i: Vec<usize>,
    pub bond_j: Vec<usize>,
    pub atom_graph: Vec<usize>,
    pub bond_graph: Vec<usize>,
    /// Per-graph offset of its first atom/bond row.
    pub atom_offset: Vec<usize>,
    pub bond_offset: Vec<usize>,
    pub frag: Option<FragBatch>,
}

/// Fragment-graph side of a batch (one BRICS graph per molecule).
pub struct FragBatch {
    pub n_frags: usize,
    pub frag_of_atom: Vec<usize>,
    pub fedge_src: Vec<usize>,
    pub fedge_dst: Vec<usize>,
    pub fedge_rev: Vec<usize>,
    /// Atom row on the source side of each directed fragment edge.
    pub fedge_src_atom: Vec<usize>,
}

impl GraphBatch {
    /// Builds a batch; `reaction_type` per graph is appended to atom
    /// features when the config says types are known.
    pub fn new(
        graphs: &[(&MolGraph, Option<usize>)],
        cfg: &EncoderConfig,
    ) -> Result<GraphBatch, FeatureError> {
        let mut atom_rows: Vec<Vec<Float>> = Vec::new();
        let mut bond_rows: Vec<Vec<Float>> = Vec::new();
        let mut dir_src = Vec::new();
        let mut dir_dst = Vec::new();
        let mut dir_rev = Vec::new();
        let mut dir_bond = Vec::new();
        let mut bond_i = Vec::new();
        let mut bond_j = Vec::new();
        let mut atom_graph = Vec::new();
        let mut bond_graph = Vec::new();
        let mut atom_offset = Vec::new();
        let mut bond_offset = Vec::new();

        let mut frag_of_atom = Vec::new();
        let mut fedge_src = Vec::new();
        let mut fedge_dst = Vec::new();
        let mut fedge_rev = Vec::new();
        let mut fedge_src_atom = Vec::new();
        let mut n_frags = 0usize;

        for (gi, (g, rtype)) in graphs.iter().enumerate() {
            let ty = if cfg.type_known { *rtype } else { None };
            let (af, bf) = featurize(g, &cfg.features, ty)?;
            // type-known mode with an unknown type still needs fixed width
            let af = if cfg.type_known && ty.is_none() {
                af.into_iter()
                    .map(|mut v| {
                        v.extend(core::iter::repeat_n(0.0, cfg.features.n_reaction_types));
                        v
                    })
                    .collect()
            } else {
                af
            };
            let a0 = atom_rows.len();
            let b0 = bond_rows.len();
            atom_offset.push(a0);
            bond_offset.push(b0);
            atom_rows.extend(af);
            bond_rows.extend(bf);
            for _ in 0..g.n_atoms() {
                atom_graph.push(gi);
            }
            for (bi, b) in g.bonds.iter().enumerate() {
                bond_graph.push(gi);
                bond_i.push(a0 + b.a);
                bond_j.push(a0 + b.b);
                let d0 = dir_src.len();
                // two directions per bond, back to back
                dir_src.push(a0 + b.a);
                dir_dst.push(a0 + b.b);
                dir_rev.push(d0 + 1);
                dir_bond.push(b0 + bi);
                dir_src.push(a0 + b.b);
                dir_dst.push(a0 + b.a);
                dir_rev.push(d0);
                dir_bond.push(b0 + bi);
            }
            if cfg.use_brics {
                let bg: BricsGraph = fragment(g);
                let f0 = n_frags;
                for ai in 0..g.n_atoms() {
                    frag_of_atom.push(f0 + bg.fragment_of(ai).expect("atom in range"));
                }
                for &(u, v, bi) in &bg.edges {
                    let e0 = fedge_src.len();
                    let bond = &g.bonds[bi];
                    // atom of the bond inside the source fragment
                    let (au, av) = if bg.fragment_of(bond.a).unwrap() == u {
                        (bond.a, bond.b)
                    } else {
                        (bond.b, bond.a)
                    };
                    fedge_src.push(f0 + u);
                    fedge_dst.push(f0 + v);
                    fedge_rev.push(e0 + 1);
                    fedge_src_atom.push(a0 + au);
                    fedge_src.push(f0 + v);
                    fedge_dst.push(f0 + u);
                    fedge_rev.push(e0);
                    fedge_src_atom.push(a0 + av);
                }
                n_frags += bg.n_nodes();
            }
        }

        let n_atoms = atom_rows.len();
        let n_bonds = bond_rows.len();
        let atom_feats = if n_atoms == 0 {
            Tensor::zeros(0, cfg.atom_dim())
        } else {
            Tensor::from_rows(&atom_rows)
        };
        let bond_feats = if n_bonds == 0 {
            Tensor::zeros(0, cfg.bond_dim())
        } else {
            Tensor::from_rows(&bond_rows)
        };
        Ok(GraphBatch {
            n_graphs: graphs.len(),
            n_atoms,
            n_bonds,
            atom_feats,
            bond_feats,
            dir_src,
            dir_dst,
            dir_rev,
            dir_bond,
            bond_i,
            bond_j,
            atom_graph,
            bond_graph,
            atom_offset,
            bond_offset,
            frag: cfg.use_brics.then_some(FragBatch {
                n_frags,
                frag_of_atom,
                fedge_src,
                fedge_dst,
                fedge_rev,
                fedge_src_atom,
            }),
        })
    }

    pub fn atom_row(&self, graph: usize, atom: usize) -> usize {
        self.atom_offset[graph] + atom
    }

    pub fn bond_row(&self, graph: usize, bond: usize) -> usize {
        self.bond_offset[graph] + bond
    }
}

/// Encoder outputs on the tape.
pub struct Encoded {
    /// Atom embeddings before enrichment.
    pub atom_raw: Tid,
    /// Atom embeddings used downstream (enriched when BRICS is on).
    pub atom: Tid,
    /// One row per graph (sum of raw atom embeddings).
    pub graph: Tid,
    /// Bond embeddings, when requested.
    pub bond: Option<Tid>,
}

/// Parameter shapes of the encoder under `prefix`.
pub fn encoder_param_specs(prefix: &str, cfg: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let dh = cfg.hidden_dim;
    let da = cfg.atom_dim();
    let db = cfg.bond_dim();
    let mut v = vec![
        (format!("{prefix}enc/msg/w_out"), dh, dh),
        (format!("{prefix}enc/msg/w_atom"), da, dh),
        (format!("{prefix}enc/msg/w_bond"), db, dh),
        (format!("{prefix}enc/msg/w_nbr"), dh, dh),
        (format!("{prefix}enc/out/w_out"), dh, dh),
        (format!("{prefix}enc/out/w_atom"), da, dh),
        (format!("{prefix}enc/out/w_msgs"), dh * cfg.t_atom, dh),
    ];
    if cfg.use_brics {
        v.extend([
            (format!("{prefix}enc/fmsg/w_out"), dh, dh),
            (format!("{prefix}enc/fmsg/w_frag"), dh, dh),
            (format!("{prefix}enc/fmsg/w_edge"), dh, dh),
            (format!("{prefix}enc/fmsg/w_nbr"), dh, dh),
            (format!("{prefix}enc/fout/w_out"), dh, dh),
            (format!("{prefix}enc/fout/w_frag"), dh, dh),
            (format!("{prefix}enc/fout/w_msgs"), dh * cfg.t_frag, dh),
            (format!("{prefix}enc/enrich/w"), 2 * dh, dh),
        ]);
    }
    v
}

/// Bond-embedding head shapes (used by the center-identification module).
pub fn bond_param_specs(prefix: &str, cfg: &EncoderConfig) -> Vec<(String, usize, usize)> {
    let dh = cfg.hidden_dim;
    let db = cfg.bond_dim();
    vec![
        (format!("{prefix}enc/bond/w_out"), dh, dh),
        (format!("{prefix}enc/bond/w_feat"), db, dh),
        (format!("{prefix}enc/bond/w_sum"), dh, dh),
        (format!("{prefix}enc/bond/w_diff"), dh, dh),
    ]
}

pub fn init_params(store: &mut ParamStore, specs: &[(String, usize, usize)], rng: &mut Rng) {
    for (name, r, c) in specs {
        store.insert_init(name, *r, *c, rng);
    }
}

/// Atom embeddings by iterated message passing along bonds, pooled per
/// graph. Messages start at zero; the readout consumes the concatenation of
/// every iteration's incoming messages.
pub fn gmpn(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    batch: &GraphBatch,
    cfg: &EncoderConfig,
) -> Result<(Tid, Tid), TensorError> {
    let dh = cfg.hidden_dim;
    let d = batch.dir_src.len();
    let x_atom = tape.constant(batch.atom_feats.clone())?;
    let x_bond = tape.constant(batch.bond_feats.clone())?;

    let w_atom = tape.param(store, &format!("{prefix}enc/msg/w_atom"))?;
    let w_bond = tape.param(store, &format!("{prefix}enc/msg/w_bond"))?;
    let w_nbr = tape.param(store, &format!("{prefix}enc/msg/w_nbr"))?;
    let w_out = tape.param(store, &format!("{prefix}enc/msg/w_out"))?;

    let atom_pre = tape.matmul(x_atom, w_atom)?; // [A, dh]
    let src_pre = tape.gather_rows(atom_pre, &batch.dir_src)?; // [D, dh]
    let bond_dir = tape.gather_rows(x_bond, &batch.dir_bond)?; // [D, db]
    let bond_pre = tape.matmul(bond_dir, w_bond)?;
    let static_pre = tape.add(src_pre, bond_pre)?; // W2 x_i + W3 x_ij

    let mut msgs: Vec<Tid> = Vec::with_capacity(cfg.t_atom);
    let mut m = tape.constant(Tensor::zeros(d, dh))?;
    for _ in 0..cfg.t_atom {
        let in_sum = tape.scatter_add_rows(m, &batch.dir_dst, batch.n_atoms)?; // [A, dh]
        let at_src = tape.gather_rows(in_sum, &batch.dir_src)?; // [D, dh]
        let rev = tape.gather_rows(m, &batch.dir_rev)?;
        let nbr = tape.sub(at_src, rev)?; // exclude the reverse message
        let nbr_pre = tape.matmul(nbr, w_nbr)?;
        let pre = tape.add(static_pre, nbr_pre)?;
        let act = tape.relu(pre)?;
        m = tape.matmul(act, w_out)?;
        msgs.push(m);
    }

    let u_atom = tape.param(store, &format!("{prefix}enc/out/w_atom"))?;
    let u_msgs = tape.param(store, &format!("{prefix}enc/out/w_msgs"))?;
    let u_out = tape.param(store, &format!("{prefix}enc/out/w_out"))?;

    // with zero iterations the readout degenerates to a per-atom MLP
    let in_msgs = if msgs.is_empty() {
        tape.constant(Tensor::zeros(batch.n_atoms, 0))?
    } else {
        let cat = tape.concat_cols(&msgs)?; // [D, dh*t]
        tape.scatter_add_rows(cat, &batch.dir_dst, batch.n_atoms)? // [A, dh*t]
    };
    let a_pre1 = tape.matmul(x_atom, u_atom)?;
    let a_pre2 = tape.matmul(in_msgs, u_msgs)?;
    let a_pre = tape.add(a_pre1, a_pre2)?;
    let a_act = tape.relu(a_pre)?;
    let atom_emb = tape.matmul(a_act, u_out)?; // [A, dh]

    let graph_emb = tape.scatter_add_rows(atom_emb, &batch.atom_graph, batch.n_graphs)?;
    Ok((atom_emb, graph_emb))
}

/// Fragment embeddings by message passing over the BRICS graph; fragment
/// state is the sum of its member atoms' embeddings.
pub fn fmpn(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    batch: &GraphBatch,
    atom_emb: Tid,
    cfg: &EncoderConfig,
) -> Result<Tid, TensorError> {
    let frag = batch.frag.as_ref().expect("fragment batch");
    let dh = cfg.hidden_dim;
    let e = frag.fedge_src.len();

    let w_frag = tape.param(store, &format!("{prefix}enc/fmsg/w_frag"))?;
    let w_edge = tape.param(store, &format!("{prefix}enc/fmsg/w_edge"))?;
    let w_nbr = tape.param(store, &format!("{prefix}enc/fmsg/w_nbr"))?;
    let w_out = tape.param(store, &format!("{prefix}enc/fmsg/w_out"))?;

    let s = tape.scatter_add_rows(atom_emb, &frag.frag_of_atom, frag.n_frags)?; // [F, dh]
    let s_src = tape.gather_rows(s, &frag.fedge_src)?;
    let s_src_pre = tape.matmul(s_src, w_frag)?;
    let edge_atom = tape.gather_rows(atom_emb, &frag.fedge_src_atom)?;
    let edge_pre = tape.matmul(edge_atom, w_edge)?;
    let static_pre = tape.add(s_src_pre, edge_pre)?;

    let mut msgs = Vec::with_capacity(cfg.t_frag);
    let mut m = tape.constant(Tensor::zeros(e, dh))?;
    for _ in 0..cfg.t_frag {
        let in_sum = tape.scatter_add_rows(m, &frag.fedge_dst, frag.n_frags)?;
        let at_src = tape.gather_rows(in_sum, &frag.fedge_src)?;
        let rev = tape.gather_rows(m, &frag.fedge_rev)?;
        let nbr = tape.sub(at_src, rev)?;
        let nbr_pre = tape.matmul(nbr, w_nbr)?;
        let pre = tape.add(static_pre, nbr_pre)?;
        let act = tape.relu(pre)?;
        m = tape.matmul(act, w_out)?;
        msgs.push(m);
    }

    let u_frag = tape.param(store, &format!("{prefix}enc/fout/w_frag"))?;
    let u_msgs = tape.param(store, &format!("{prefix}enc/fout/w_msgs"))?;
    let u_out = tape.param(store, &format!("{prefix}enc/fout/w_out"))?;

    let cat = tape.concat_cols(&msgs)?;
    let in_msgs = tape.scatter_add_rows(cat, &frag.fedge_dst, frag.n_frags)?;
    let pre1 = tape.matmul(s, u_frag)?;
    let pre2 = tape.matmul(in_msgs, u_msgs)?;
    let pre = tape.add(pre1, pre2)?;
    let act = tape.relu(pre)?;
    tape.matmul(act, u_out) // [F, dh]
}

/// a' = V (a (+) n_frag(a)).
pub fn enrich(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    batch: &GraphBatch,
    atom_emb: Tid,
    frag_emb: Tid,
) -> Result<Tid, TensorError> {
    let frag = batch.frag.as_ref().expect("fragment batch");
    let v = tape.param(store, &format!("{prefix}enc/enrich/w"))?;
    let n_of_atom = tape.gather_rows(frag_emb, &frag.frag_of_atom)?;
    let cat = tape.concat_cols(&[atom_emb, n_of_atom])?;
    tape.matmul(cat, v)
}

/// Bond embeddings from endpoint sums and absolute differences.
pub fn bond_embed(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    batch: &GraphBatch,
    atom_emb: Tid,
) -> Result<Tid, TensorError> {
    let w_feat = tape.param(store, &format!("{prefix}enc/bond/w_feat"))?;
    let w_sum = tape.param(store, &format!("{prefix}enc/bond/w_sum"))?;
    let w_diff = tape.param(store, &format!("{prefix}enc/bond/w_diff"))?;
    let w_out = tape.param(store, &format!("{prefix}enc/bond/w_out"))?;

    let x_bond = tape.constant(batch.bond_feats.clone())?;
    let ai = tape.gather_rows(atom_emb, &batch.bond_i)?;
    let aj = tape.gather_rows(atom_emb, &batch.bond_j)?;
    let sum = tape.add(ai, aj)?;
    let diff = tape.abs_diff(ai, aj)?;
    let p1 = tape.matmul(x_bond, w_feat)?;
    let p2 = tape.matmul(sum, w_sum)?;
    let p3 = tape.matmul(diff, w_diff)?;
    let pre = tape.add(p1, p2)?;
    let pre = tape.add(pre, p3)?;
    let act = tape.relu(pre)?;
    tape.matmul(act, w_out) // [B, dh]
}

/// Full encoder pass: atom embeddings, optional BRICS enrichment, graph
/// pooling, and bond embeddings when `with_bonds`.
pub fn encode(
    tape: &mut Tape,
    store: &ParamStore,
    prefix: &str,
    batch: &GraphBatch,
    cfg: &EncoderConfig,
    with_bonds: bool,
) -> Result<Encoded, TensorError> {
    let (atom_raw, graph) = gmpn(tape, store, prefix, batch, cfg)?;
    let atom = if cfg.use_brics {
        let frag_emb = fmpn(tape, store, prefix, batch, atom_raw, cfg)?;
        enrich(tape, store, prefix, batch, atom_raw, frag_emb)?
    } else {
        atom_raw
    };
    let bond = if with_bonds {
        Some(bond_embed(tape, store, prefix, batch, atom)?)
    } else {
        None
    };
    Ok(Encoded {
        atom_raw,
        atom,
        graph,
        bond,
    })
}
