//! End-to-end prediction: top-K reaction centers, product-to-synthon
//! transformation, and top-N reactant generation under a score-сomplete
//! beam search.

use alloc::string::String;
use alloc::vec::Vec;

use crate::center::{select_top_k_centers, CenterError, ScoredCenter};
use crate::chem::{canonical_ranks, MolGraph};
use crate::encoder::EncoderConfig;
use crate::reaction::{reactant_set_key, CenterLabel, SubstructureVocab};
use crate::synthon::{
    attach, search_context, step_scores, AttachmentAction, CompletionError, IntermediateGraph,
    SearchContext,
};
use crate::tensor::ParamStore;
use crate::Float;

#[derive(Clone, Copy, Debug)]
pub struct InferenceConfig {
    /// Synthon (reaction-center) beam width.
    pub k: usize,
    /// Reactant beam width.
    pub n: usize,
    /// Per-graph action budget.
    pub max_steps: usize,
}

impl Default for InferenceConfig {
    fn default() -> Self {
        InferenceConfig {
            k: 5,
            n: 10,
            max_steps: 30,
        }
    }
}

#[derive(Clone, Debug)]
pub struct RankedReaction {
    pub reactants: MolGraph,
    /// Total accumulated log-likelihood (center + completion decisions).
    pub score: Float,
    /// The center candidate this reaction descends from.
    pub center: CenterLabel,
    /// Canonical reactant-set key (dot-joined canonical SMILES).
    pub key: String,
}

#[derive(Clone, Debug)]
pub enum InferError {
    Center(CenterError),
    Completion(CompletionError),
}

impl core::fmt::Display for InferError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            InferError::Center(e) => write!(f, "{e}"),
            InferError::Completion(e) => write!(f, "{e}"),
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for InferError {}

impl From<CenterError> for InferError {
    fn from(e: CenterError) -> Self {
        InferError::Center(e)
    }
}

impl From<CompletionError> for InferError {
    fn from(e: CompletionError) -> Self {
        InferError::Completion(e)
    }
}

/// Completion stack for a fresh synthon: reaction-center atoms, lowest
/// canonical rank popped first.
pub fn initial_frontier(product: &MolGraph, synthon: &MolGraph, label: &CenterLabel) -> Vec<usize> {
    let ranks = canonical_ranks(synthon);
    let mut atoms = label.center_atoms(product);
    atoms.sort_by_key(|&a| ranks[a]);
    atoms.reverse(); // stack: last element pops first
    atoms
}

/// A beam entry plus bookkeeping for deterministic tie-breaks.
#[derive(Clone, Debug)]
struct PoolEntry {
    ig: IntermediateGraph,
    serial: u64,
}

/// Beam search over attachment actions. Each round forwards the top-N pool
/// entries; every forwarded graph expands into the stop branch plus the
/// top-N unit attachments; candidates that fall outside the beam stay in
/// the pool and may resume once completed scores stop dominating them.
/// Terminates when the pool drains or the N-th completed score strictly
/// exceeds the best pool score. Scores only decrease along a path, so the
/// returned list is exactly the top-N completions of the (top-N-restricted)
/// action tree within the step budget.
#[allow(clippy::too_many_arguments)]
pub fn beam_search(
    store: &ParamStore,
    cfg: &EncoderConfig,
    ctx: &SearchContext,
    entries: Vec<(IntermediateGraph, CenterLabel)>,
    reaction_type: Option<usize>,
    vocab: &SubstructureVocab,
    n: usize,
    max_steps: usize,
) -> Result<Vec<RankedReaction>, InferError> {
    let mut serial = 0u64;
    let mut labels: Vec<CenterLabel> = Vec::new();
    let mut pool: Vec<PoolEntry> = Vec::new();
    let mut done: Vec<(IntermediateGraph, usize, u64)> = Vec::new(); // (graph, label idx, serial)

    for (ig, label) in entries {
        let li = labels.len();
        labels.push(label);
        if ig.is_complete() {
            done.push((ig, li, serial));
        } else {
            pool.push(PoolEntry { ig, serial });
        }
        serial += 1;
    }
    let label_of_serial: Vec<usize> = (0..labels.len()).collect();
    let mut origin: alloc::collections::BTreeMap<u64, usize> = Default::default();
    for (s, &li) in label_of_serial.iter().enumerate() {
        origin.insert(s as u64, li);
    }

    let sort_pool = |pool: &mut Vec<PoolEntry>| {
        pool.sort_by(|a, b| {
            b.ig.score
                .partial_cmp(&a.ig.score)
                .unwrap_or(core::cmp::Ordering::Equal)
                .then(a.serial.cmp(&b.serial))
        });
    };
    let nth_done_score = |done: &[(IntermediateGraph, usize, u64)]| -> Option<Float> {
        if done.len() < n {
            return None;
        }
        let mut scores: Vec<Float> = done.iter().map(|d| d.0.score).collect();
        scores.sort_by(|a, b| b.partial_cmp(a).unwrap_or(core::cmp::Ordering::Equal));
        Some(scores[n - 1])
    };

    loop {
        pool.retain(|e| e.ig.steps < max_steps);
        if pool.is_empty() {
            break;
        }
        sort_pool(&mut pool);
        if let Some(nth) = nth_done_score(&done) {
            if nth > pool[0].ig.score {
                break;
            }
        }
        let take = n.min(pool.len());
        let active: Vec<PoolEntry> = pool.drain(..take).collect();
        for entry in active {
            let li = origin[&entry.serial];
            let scores = step_scores(store, cfg, ctx, &entry.ig, reaction_type, vocab)?;

            // stop branch
            let mut stopped = attach(&entry.ig, &AttachmentAction::Stop, vocab)?;
            stopped.score += scores.log_stop;
            let s_serial = serial;
            serial += 1;
            origin.insert(s_serial, li);
            if stopped.is_complete() {
                done.push((stopped, li, s_serial));
            } else {
                pool.push(PoolEntry {
                    ig: stopped,
                    serial: s_serial,
                });
            }

            // top-N attachment branches
            let mut units = scores.unit_log_probs.clone();
            units.sort_by(|a, b| {
                b.1.partial_cmp(&a.1)
                    .unwrap_or(core::cmp::Ordering::Equal)
                    .then(a.0.cmp(&b.0))
            });
            for &(unit_id, lp) in units.iter().take(n) {
                let mut grown = attach(&entry.ig, &AttachmentAction::Attach(unit_id), vocab)?;
                grown.score += scores.log_attach + lp;
                let g_serial = serial;
                serial += 1;
                origin.insert(g_serial, li);
                pool.push(PoolEntry {
                    ig: grown,
                    serial: g_serial,
                });
            }
        }
    }

    let mut out: Vec<RankedReaction> = done
        .into_iter()
        .map(|(ig, li, _)| {
            let key = reactant_set_key(&ig.graph);
            RankedReaction {
                reactants: ig.graph,
                score: ig.score,
                center: labels[li].clone(),
                key,
            }
        })
        .collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.key.cmp(&b.key))
    });
    out.truncate(n);
    Ok(out)
}

/// Initial beam entries from scored centers.
pub fn entries_from_centers(
    product: &MolGraph,
    centers: &[ScoredCenter],
) -> Vec<(IntermediateGraph, CenterLabel)> {
    centers
        .iter()
        .enumerate()
        .map(|(i, sc)| {
            let frontier = initial_frontier(product, &sc.synthon, &sc.label);
            (
                IntermediateGraph::new(sc.synthon.clone(), i, frontier, sc.score),
                sc.label.clone(),
            )
        })
        .collect()
}

/// Full pipeline: top-K centers, completion beam search, deduplicated
/// ranked reactions (duplicates keep their best score).
#[allow(clippy::too_many_arguments)]
pub fn predict(
    product: &MolGraph,
    reaction_type: Option<usize>,
    center_store: &ParamStore,
    center_cfg: &EncoderConfig,
    synthon_store: &ParamStore,
    synthon_cfg: &EncoderConfig,
    vocab: &SubstructureVocab,
    cfg: &InferenceConfig,
) -> Result<Vec<RankedReaction>, InferError> {
    let centers = select_top_k_centers(product, reaction_type, center_store, center_cfg, cfg.k)?;
    predict_from_centers(
        product,
        reaction_type,
        &centers,
        synthon_store,
        synthon_cfg,
        vocab,
        cfg,
    )
}

/// Completion stage only (centers already chosen); also used for
/// module-level evaluation with ground-truth centers.
pub fn predict_from_centers(
    product: &MolGraph,
    reaction_type: Option<usize>,
    centers: &[ScoredCenter],
    synthon_store: &ParamStore,
    synthon_cfg: &EncoderConfig,
    vocab: &SubstructureVocab,
    cfg: &InferenceConfig,
) -> Result<Vec<RankedReaction>, InferError> {
    let synthons: Vec<MolGraph> = centers.iter().map(|c| c.synthon.clone()).collect();
    let ctx = search_context(synthon_store, synthon_cfg, product, reaction_type, &synthons)?;
    let entries = entries_from_centers(product, centers);
    let ranked = beam_search(
        synthon_store,
        synthon_cfg,
        &ctx,
        entries,
        reaction_type,
        vocab,
        cfg.n,
        cfg.max_steps,
    )?;
    Ok(dedup_ranked(ranked, cfg.n))
}

/// Merges duplicate reactant sets keeping the best score; deterministic
/// (score, then key) order.
pub fn dedup_ranked(ranked: Vec<RankedReaction>, n: usize) -> Vec<RankedReaction> {
    let mut best: alloc::collections::BTreeMap<String, RankedReaction> = Default::default();
    for r in ranked {
        let keep = match best.get(&r.key) {
            Some(prev) => r.score > prev.score,
            None => true,
        };
        if keep {
            best.insert(r.key.clone(), r);
        }
    }
    let mut out: Vec<RankedReaction> = best.into_values().collect();
    out.sort_by(|a, b| {
        b.score
            .partial_cmp(&a.score)
            .unwrap_or(core::cmp::Ordering::Equal)
            .then(a.key.cmp(&b.key))
    });
    out.truncate(n);
    out
}
