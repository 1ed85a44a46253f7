//! Synthon completion: sequential substructure attachment driven by a
//! continuity predictor (attach more at this atom, or stop) and a
//! vocabulary-wide type predictor, trained with teacher forcing.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::chem::MolGraph;
use crate::encoder::{encode, encoder_param_specs, init_params, EncoderConfig, GraphBatch};
use crate::num;
use crate::reaction::{apply_unit, AttachmentTrace, SubstructureVocab, SynthonError, TraceStep};

use crate::rng::Rng;
use crate::tensor::{AdamState, ParamStore, Tape, Tensor, TensorError, Tid};
use crate::Float;

pub const PREFIX: &str = "synthon/";

#[derive(Clone, Debug)]
pub enum CompletionError {
    Tensor(TensorError),
    Feature(crate::chem::FeatureError),
    Chem(SynthonError),
    EmptyBatch,
    /// Every vocabulary entry is masked at this attachment point.
    AllMasked,
}

impl core::fmt::Display for CompletionError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            CompletionError::Tensor(e) => write!(f, "{e}"),
            CompletionError::Feature(e) => write!(f, "{e}"),
            CompletionError::Chem(e) => write!(f, "{e}"),
            CompletionError::EmptyBatch => write!(f, "empty batch"),
            CompletionError::AllMasked => write!(f, "no vocabulary entry fits this atom"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for CompletionError {}

impl From<TensorError> for CompletionError {
    fn from(e: TensorError) -> Self {
        CompletionError::Tensor(e)
    }
}

impl From<crate::chem::FeatureError> for CompletionError {
    fn from(e: crate::chem::FeatureError) -> Self {
        CompletionError::Feature(e)
    }
}

impl From<SynthonError> for CompletionError {
    fn from(e: SynthonError) -> Self {
        CompletionError::Chem(e)
    }
}

/// Parameter shapes: a private encoder plus the two attachment heads.
pub fn synthon_param_specs(
    cfg: &EncoderConfig,
    vocab_size: usize,
) -> Vec<(String, usize, usize)> {
    let dh = cfg.hidden_dim;
    let mut specs = encoder_param_specs(PREFIX, cfg);
    specs.extend([
        (format!("{PREFIX}cont/w_atom"), dh, 1),
        (format!("{PREFIX}cont/w_syn"), dh, 1),
        (format!("{PREFIX}cont/w_prod"), dh, 1),
        (format!("{PREFIX}attach/w_atom"), dh, vocab_size),
        (format!("{PREFIX}attach/w_syn"), dh, vocab_size),
        (format!("{PREFIX}attach/w_prod"), dh, vocab_size),
    ]);
    specs
}

pub fn init_synthon_params(cfg: &EncoderConfig, vocab_size: usize, seed: u64) -> ParamStore {
    let mut store = ParamStore::new(seed);
    let mut rng = Rng::new(seed);
    init_params(&mut store, &synthon_param_specs(cfg, vocab_size), &mut rng);
    store
}

/// A graph in mid-completion: the frontier stack holds atoms that may still
/// take attachments (top of stack is the active atom).
#[derive(Clone, Debug)]
pub struct IntermediateGraph {
    pub graph: MolGraph,
    /// Which top-K synthon this descends from (indexes the cached synthon
    /// embeddings during search).
    pub synthon_index: usize,
    pub frontier: Vec<usize>,
    /// Accumulated log-likelihood over every decision on this path.
    pub score: Float,
    /// Number of actions taken.
    pub steps: usize,
}

impl IntermediateGraph {
    pub fn new(graph: MolGraph, synthon_index: usize, frontier: Vec<usize>, score: Float) -> Self {
        IntermediateGraph {
            graph,
            synthon_index,
            frontier,
            score,
            steps: 0,
        }
    }

    pub fn is_complete(&self) -> bool {
        self.frontier.is_empty()
    }

    pub fn active_atom(&self) -> Option<usize> {
        self.frontier.last().copied()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum AttachmentAction {
    Stop,
    Attach(usize),
}

/// Applies an action: Stop pops the active atom, Attach merges the unit and
/// pushes its new atoms depth-first. The caller adds the decision's
/// log-probability to `score`.
pub fn attach(
    ig: &IntermediateGraph,
    action: &AttachmentAction,
    vocab: &SubstructureVocab,
) -> Result<IntermediateGraph, CompletionError> {
    let mut next = ig.clone();
    let at = next
        .frontier
        .last()
        .copied()
        .ok_or(CompletionError::EmptyBatch)?;
    match action {
        AttachmentAction::Stop => {
            next.frontier.pop();
        }
        AttachmentAction::Attach(id) => {
            let unit = vocab.unit(*id);
            let (grown, new_atoms) = apply_unit(&next.graph, at, unit)?;
            next.graph = grown;
            for &a in new_atoms.iter().rev() {
                next.frontier.push(a);
            }
        }
    }
    next.steps += 1;
    Ok(next)
}

/// Vocabulary mask at an attachment atom: anchor element must match and the
/// atom must have the hydrogens the merge consumes.
pub fn aatp_mask(graph: &MolGraph, at: usize, vocab: &SubstructureVocab) -> Vec<Float> {
    let atom = &graph.atoms[at];
    vocab
        .entries
        .iter()
        .map(|e| {
            let u = &e.unit;
            if u.anchor_element() == atom.element && atom.explicit_h >= u.anchor_order_sum {
                1.0
            } else {
                0.0
            }
        })
        .collect()
}

/// Continuity + type logits for a set of steps sharing one tape.
/// Rows: (atom row, synthon graph row, product graph row).
fn head_logits(
    tape: &mut Tape,
    store: &ParamStore,
    atom_emb: Tid,
    graph_emb: Tid,
    rows: &[(usize, usize, usize)],
    which: &str, // "cont" or "attach"
) -> Result<Tid, TensorError> {
    let w_atom = tape.param(store, &format!("{PREFIX}{which}/w_atom"))?;
    let w_syn = tape.param(store, &format!("{PREFIX}{which}/w_syn"))?;
    let w_prod = tape.param(store, &format!("{PREFIX}{which}/w_prod"))?;
    let a_rows: Vec<usize> = rows.iter().map(|r| r.0).collect();
    let s_rows: Vec<usize> = rows.iter().map(|r| r.1).collect();
    let p_rows: Vec<usize> = rows.iter().map(|r| r.2).collect();
    let a = tape.gather_rows(atom_emb, &a_rows)?;
    let s = tape.gather_rows(graph_emb, &s_rows)?;
    let p = tape.gather_rows(graph_emb, &p_rows)?;
    let t1 = tape.matmul(a, w_atom)?;
    let t2 = tape.matmul(s, w_syn)?;
    let t3 = tape.matmul(p, w_prod)?;
    let sum = tape.add(t1, t2)?;
    tape.add(sum, t3)
}

/// One training record for the completion module.
pub struct CompletionItem {
    pub product: MolGraph,
    pub reaction_type: Option<usize>,
    pub trace: AttachmentTrace,
    /// Vocabulary id per Attach step, in step order.
    pub unit_ids: Vec<usize>,
}

impl CompletionItem {
    /// Resolves trace units against a vocabulary. Panics if the vocabulary
    /// does not cover a unit (vocabulary closure is an invariant of the
    /// builder).
    pub fn new(
        product: MolGraph,
        reaction_type: Option<usize>,
        trace: AttachmentTrace,
        vocab: &SubstructureVocab,
    ) -> CompletionItem {
        let unit_ids = trace
            .steps
            .iter()
            .filter_map(|s| match s {
                TraceStep::Attach { unit, .. } => Some(
                    vocab
                        .id_of(&trace.units[*unit].encoding)
                        .expect("vocabulary covers every training unit"),
                ),
                TraceStep::Stop { .. } => None,
            })
            .collect();
        CompletionItem {
            product,
            reaction_type,
            trace,
            unit_ids,
        }
    }
}

/// Replays a trace, returning the graph before every step and the final
/// graph (teacher forcing needs the intermediate snapshots).
fn snapshots(item: &CompletionItem) -> Result<Vec<MolGraph>, CompletionError> {
    let mut snaps = Vec::with_capacity(item.trace.steps.len());
    let mut g = item.trace.synthon.clone();
    for step in &item.trace.steps {
        snaps.push(g.clone());
        if let TraceStep::Attach { at, unit } = step {
            let (grown, _) = apply_unit(&g, *at, &item.trace.units[*unit])?;
            g = grown;
        }
    }
    Ok(snaps)
}

/// Teacher-forced loss: binary cross-entropy on continue-vs-stop plus
/// masked categorical cross-entropy on the unit choice, averaged per record.
pub fn completion_loss(
    tape: &mut Tape,
    store: &ParamStore,
    items: &[&CompletionItem],
    cfg: &EncoderConfig,
    vocab: &SubstructureVocab,
) -> Result<Tid, TensorError> {
    if items.is_empty() {
        return Err(TensorError::EmptyBatch);
    }
    // batch layout: [product_0..product_n | synthon_0..synthon_n | snapshots...]
    let mut graphs: Vec<(&MolGraph, Option<usize>)> = Vec::new();
    for it in items {
        graphs.push((&it.product, it.reaction_type));
    }
    for it in items {
        graphs.push((&it.trace.synthon, it.reaction_type));
    }
    let mut snaps_per_item: Vec<Vec<MolGraph>> = Vec::new();
    for it in items {
        let snaps = snapshots(it).map_err(|_| TensorError::EmptyBatch)?;
        snaps_per_item.push(snaps);
    }
    let snap_base = graphs.len();
    let snap_refs: Vec<(usize, usize)> = {
        let mut v = Vec::new();
        for (i, snaps) in snaps_per_item.iter().enumerate() {
            for s in 0..snaps.len() {
                v.push((i, s));
            }
        }
        v
    };
    for (i, s) in &snap_refs {
        graphs.push((&snaps_per_item[*i][*s], items[*i].reaction_type));
    }

    let batch = GraphBatch::new(&graphs, cfg).map_err(|_| TensorError::EmptyBatch)?;
    let enc = encode(tape, store, PREFIX, &batch, cfg, false)?;

    // continuity rows for every step; type rows for attach steps
    let mut cont_rows: Vec<(usize, usize, usize)> = Vec::new();
    let mut cont_targets: Vec<Float> = Vec::new();
    let mut attach_rows: Vec<(usize, usize, usize)> = Vec::new();
    let mut attach_targets: Vec<usize> = Vec::new();
    let mut attach_masks: Vec<Float> = Vec::new();

    let mut snap_graph_idx = snap_base;
    for (i, it) in items.iter().enumerate() {
        let prod_graph = i;
        let syn_graph = items.len() + i;
        let mut attach_no = 0usize;
        for (s, step) in it.trace.steps.iter().enumerate() {
            let snap = &snaps_per_item[i][s];
            let gidx = snap_graph_idx + s;
            let (at, is_attach) = match step {
                TraceStep::Attach { at, .. } => (*at, true),
                TraceStep::Stop { at } => (*at, false),
            };
            let a_row = batch.atom_row(gidx, at);
            cont_rows.push((a_row, syn_graph, prod_graph));
            cont_targets.push(if is_attach { 1.0 } else { 0.0 });
            if is_attach {
                attach_rows.push((a_row, syn_graph, prod_graph));
                attach_targets.push(it.unit_ids[attach_no]);
                attach_masks.extend(aatp_mask(snap, at, vocab));
                attach_no += 1;
            }
        }
        snap_graph_idx += it.trace.steps.len();
    }

    let cont_logits = head_logits(tape, store, enc.atom, enc.graph, &cont_rows, "cont")?;
    let l_cont = tape.bce_with_logits(cont_logits, &cont_targets)?;
    let mut total = l_cont;
    if !attach_rows.is_empty() {
        let att_logits = head_logits(tape, store, enc.atom, enc.graph, &attach_rows, "attach")?;
        let l_att = tape.cross_entropy(att_logits, &attach_targets, Some(&attach_masks))?;
        total = tape.add(total, l_att)?;
    }
    tape.scale(total, 1.0 / items.len() as Float)
}

/// Cached graph-level embeddings used during search: the synthon-module
/// encoder applied once to the product and once to each synthon set.
#[derive(Clone, Debug)]
pub struct SearchContext {
    /// One row per top-K synthon: graph embedding of the synthon set.
    pub synthon_emb: Vec<Vec<Float>>,
    /// Product graph embedding.
    pub product_emb: Vec<Float>,
}

pub fn search_context(
    store: &ParamStore,
    cfg: &EncoderConfig,
    product: &MolGraph,
    reaction_type: Option<usize>,
    synthons: &[MolGraph],
) -> Result<SearchContext, CompletionError> {
    let mut graphs: Vec<(&MolGraph, Option<usize>)> = vec![(product, reaction_type)];
    for s in synthons {
        graphs.push((s, reaction_type));
    }
    let batch = GraphBatch::new(&graphs, cfg)?;
    let mut tape = Tape::new();
    let enc = encode(&mut tape, store, PREFIX, &batch, cfg, false)?;
    let g = tape.value(enc.graph);
    let product_emb = g.row(0).to_vec();
    let synthon_emb = (0..synthons.len()).map(|i| g.row(i + 1).to_vec()).collect();
    Ok(SearchContext {
        synthon_emb,
        product_emb,
    })
}

/// Scores of the two continuation branches at the active atom of an
/// intermediate graph.
#[derive(Clone, Debug)]
pub struct StepScores {
    pub log_stop: Float,
    pub log_attach: Float,
    /// Masked vocabulary log-probabilities, (vocab id, log prob).
    pub unit_log_probs: Vec<(usize, Float)>,
}

/// Evaluates the attachment heads for one intermediate graph. The graph is
/// re-encoded; synthon/product embeddings come from the cached context.
pub fn step_scores(
    store: &ParamStore,
    cfg: &EncoderConfig,
    ctx: &SearchContext,
    ig: &IntermediateGraph,
    reaction_type: Option<usize>,
    vocab: &SubstructureVocab,
) -> Result<StepScores, CompletionError> {
    let at = ig.active_atom().ok_or(CompletionError::EmptyBatch)?;
    let batch = GraphBatch::new(&[(&ig.graph, reaction_type)], cfg)?;
    let mut tape = Tape::new();
    let enc = encode(&mut tape, store, PREFIX, &batch, cfg, false)?;
    let h_s = tape.constant(Tensor::from_rows(&[ctx.synthon_emb[ig.synthon_index].clone()]))?;
    let h_p = tape.constant(Tensor::from_rows(core::slice::from_ref(&ctx.product_emb)))?;

    let a_row = tape.gather_rows(enc.atom, &[batch.atom_row(0, at)])?;
    let compute = |tape: &mut Tape, which: &str| -> Result<Tid, TensorError> {
        let w_atom = tape.param(store, &format!("{PREFIX}{which}/w_atom"))?;
        let w_syn = tape.param(store, &format!("{PREFIX}{which}/w_syn"))?;
        let w_prod = tape.param(store, &format!("{PREFIX}{which}/w_prod"))?;
        let t1 = tape.matmul(a_row, w_atom)?;
        let t2 = tape.matmul(h_s, w_syn)?;
        let t3 = tape.matmul(h_p, w_prod)?;
        let sum = tape.add(t1, t2)?;
        tape.add(sum, t3)
    };

    let cont = compute(&mut tape, "cont")?;
    let z = tape.value(cont).item();
    // numerically stable log sigmoid / log(1 - sigmoid)
    let log_attach = -num::ln_1p(num::exp(-z));
    let log_stop = -z - num::ln_1p(num::exp(-z));

    let mask = aatp_mask(&ig.graph, at, vocab);
    let unit_log_probs = if mask.iter().any(|&m| m != 0.0) {
        let logits = compute(&mut tape, "attach")?;
        let sm = tape.softmax_rows(logits, Some(&mask))?;
        let probs = tape.value(sm).data.clone();
        probs
            .iter()
            .enumerate()
            .filter(|&(i, _)| mask[i] != 0.0)
            .map(|(i, &p)| (i, num::ln(p.max(1e-300))))
            .collect()
    } else {
        Vec::new()
    };
    Ok(StepScores {
        log_stop,
        log_attach,
        unit_log_probs,
    })
}

/// Greedy teacher-forced decoding check: every decision along the
/// ground-truth trace must match (continuity at 0.5 with ties stopping,
/// argmax unit). Returns true when the whole trace is reproduced.
pub fn trace_exact_match(
    store: &ParamStore,
    cfg: &EncoderConfig,
    item: &CompletionItem,
    vocab: &SubstructureVocab,
) -> Result<bool, CompletionError> {
    let ctx = search_context(
        store,
        cfg,
        &item.product,
        item.reaction_type,
        core::slice::from_ref(&item.trace.synthon),
    )?;
    let mut ig = IntermediateGraph::new(
        item.trace.synthon.clone(),
        0,
        item.trace.initial_frontier.iter().rev().copied().collect(),
        0.0,
    );
    let mut attach_no = 0usize;
    for step in &item.trace.steps {
        let scores = step_scores(store, cfg, &ctx, &ig, item.reaction_type, vocab)?;
        let wants_attach = scores.log_attach > scores.log_stop; // p > 0.5
        match step {
            TraceStep::Attach { .. } => {
                if !wants_attach {
                    return Ok(false);
                }
                let best = scores
                    .unit_log_probs
                    .iter()
                    .max_by(|a, b| {
                        a.1.partial_cmp(&b.1)
                            .unwrap_or(core::cmp::Ordering::Equal)
                            .then(b.0.cmp(&a.0))
                    })
                    .map(|&(id, _)| id);
                if best != Some(item.unit_ids[attach_no]) {
                    return Ok(false);
                }
                ig = attach(&ig, &AttachmentAction::Attach(item.unit_ids[attach_no]), vocab)?;
                attach_no += 1;
            }
            TraceStep::Stop { .. } => {
                if wants_attach {
                    return Ok(false);
                }
                ig = attach(&ig, &AttachmentAction::Stop, vocab)?;
            }
        }
    }
    Ok(true)
}

pub use crate::center::{EpochLog, TrainConfig};

/// Fraction of items whose full trace is reproduced greedily.
pub fn completion_accuracy(
    items: &[&CompletionItem],
    store: &ParamStore,
    cfg: &EncoderConfig,
    vocab: &SubstructureVocab,
) -> Result<Float, CompletionError> {
    if items.is_empty() {
        return Ok(0.0);
    }
    let mut hit = 0usize;
    for it in items {
        if trace_exact_match(store, cfg, it, vocab)? {
            hit += 1;
        }
    }
    Ok(hit as Float / items.len() as Float)
}

/// Trains the completion module with teacher forcing; returns the best
/// checkpoint by validation exact-trace accuracy.
pub fn train_synthon(
    train: &[CompletionItem],
    val: &[CompletionItem],
    cfg: &EncoderConfig,
    vocab: &SubstructureVocab,
    tc: &TrainConfig,
) -> Result<(ParamStore, Vec<EpochLog>), CompletionError> {
    if train.is_empty() {
        return Err(CompletionError::EmptyBatch);
    }
    let mut store = init_synthon_params(cfg, vocab.len(), tc.seed);
    let mut adam = AdamState::new(tc.adam);
    let mut rng = Rng::new(tc.seed ^ 0xc0ffee);
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut log = Vec::new();
    let mut best: Option<(Float, ParamStore)> = None;
    let mut stale = 0usize;

    let val_items: Vec<&CompletionItem> = if val.is_empty() {
        train.iter().collect()
    } else {
        val.iter().collect()
    };

    for epoch in 0..tc.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        let mut n_batches = 0usize;
        for chunk in order.chunks(tc.batch_size.max(1)) {
            let items: Vec<&CompletionItem> = chunk.iter().map(|&i| &train[i]).collect();
            let mut tape = Tape::new();
            let loss = completion_loss(&mut tape, &store, &items, cfg, vocab)?;
            epoch_loss += tape.value(loss).item();
            n_batches += 1;
            tape.backward(loss, &mut store)?;
            adam.step(&mut store);
        }
        let val_metric = completion_accuracy(&val_items, &store, cfg, vocab)?;
        log.push(EpochLog {
            epoch,
            loss: epoch_loss / n_batches.max(1) as Float,
            val_metric,
            lr: adam.lr,
        });
        let improved = best
            .as_ref()
            .map(|(b, _)| val_metric > *b + tc.min_delta)
            .unwrap_or(true);
        if improved {
            best = Some((val_metric, store.clone()));
            stale = 0;
        } else {
            if best.as_ref().map(|(b, _)| val_metric > *b).unwrap_or(false) {
                best = Some((val_metric, store.clone()));
            }
            stale += 1;
            if stale >= tc.patience {
                adam.decay_lr();
                stale = 0;
            }
        }
        if let Some(t) = tc.target_metric {
            if val_metric >= t {
                break;
            }
        }
    }
    let (_, best_store) = best.expect("at least one epoch ran");
    Ok((best_store, log))
}
