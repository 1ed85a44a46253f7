//! High-level operations behind the subcommands: dataset preparation,
//! training, batch prediction and evaluation.

use std::collections::BTreeMap;
use std::path::Path;

use anyhow::{bail, Context, Result};

use retrograph_core::center::{train_center, LabeledProduct, TrainConfig};
use retrograph_core::chem::MolGraph;
use retrograph_core::encoder::EncoderConfig;
use retrograph_core::eval::{topk_from_ranks, hit_rank};
use retrograph_core::infer::{predict, InferenceConfig, RankedReaction};
use retrograph_core::reaction::{
    build_vocab, coverage_stats, extract_center_label, extract_trace, reactant_set_key,
    CenterKind, CoverageStats, ReactionRecord, SubstructureVocab,
};
use retrograph_core::synthon::{train_synthon, CompletionItem};
use retrograph_core::tensor::ParamStore;
use retrograph_core::Float;

use crate::checkpoint::Hyperparams;
use crate::jsonlog::JsonLog;

/// Labels every record; returns supported items, traces, coverage and the
/// exclusion counter.
pub struct PreparedData {
    pub labeled: Vec<LabeledProduct>,
    pub completion: Vec<(ReactionRecord, retrograph_core::reaction::AttachmentTrace)>,
    pub coverage: CoverageStats,
    pub trace_failures: usize,
}

pub fn prepare(records: Vec<ReactionRecord>, log: &mut JsonLog) -> PreparedData {
    let mut labeled = Vec::new();
    let mut completion = Vec::new();
    let mut labels = Vec::new();
    let mut trace_failures = 0usize;
    for rec in records {
        let label = extract_center_label(&rec);
        labels.push(label.clone());
        if label.kind == CenterKind::Unsupported {
            continue;
        }
        match extract_trace(&rec, &label) {
            Ok(trace) => {
                labeled.push(LabeledProduct {
                    product: rec.product.clone(),
                    reaction_type: rec.reaction_type,
                    label,
                });
                completion.push((rec, trace));
            }
            Err(_) => {
                trace_failures += 1;
            }
        }
    }
    let coverage = coverage_stats(labels.iter());
    log.counter("unsupported_records", coverage.unsupported);
    log.counter("trace_failures", trace_failures);
    PreparedData {
        labeled,
        completion,
        coverage,
        trace_failures,
    }
}

pub fn build_vocabulary(data: &PreparedData) -> SubstructureVocab {
    let traces: Vec<retrograph_core::reaction::AttachmentTrace> = data
        .completion
        .iter()
        .map(|(_, t)| t.clone())
        .collect();
    build_vocab(&traces)
}

pub struct TrainedCenter {
    pub store: ParamStore,
    pub log: Vec<retrograph_core::center::EpochLog>,
    pub hyperparams: Hyperparams,
}

pub fn run_train_center(
    train_records: Vec<ReactionRecord>,
    val_records: Vec<ReactionRecord>,
    enc: &EncoderConfig,
    tc: &TrainConfig,
    jlog: &mut JsonLog,
) -> Result<TrainedCenter> {
    let train = prepare(train_records, jlog);
    let val = prepare(val_records, jlog);
    if train.labeled.is_empty() {
        bail!("no supported training records");
    }
    let (store, log) =
        train_center(&train.labeled, &val.labeled, enc, tc).map_err(|e| anyhow::anyhow!("{e}"))?;
    for e in &log {
        jlog.epoch("center", e);
    }
    Ok(TrainedCenter {
        store,
        log,
        hyperparams: Hyperparams {
            module: "center".into(),
            hidden_dim: enc.hidden_dim,
            t_atom: enc.t_atom,
            t_frag: enc.t_frag,
            use_brics: enc.use_brics,
            type_known: enc.type_known,
            vocab_size: 0,
        },
    })
}

pub struct TrainedSynthon {
    pub store: ParamStore,
    pub log: Vec<retrograph_core::center::EpochLog>,
    pub hyperparams: Hyperparams,
}

pub fn run_train_synthon(
    train_records: Vec<ReactionRecord>,
    val_records: Vec<ReactionRecord>,
    vocab: &SubstructureVocab,
    enc: &EncoderConfig,
    tc: &TrainConfig,
    jlog: &mut JsonLog,
) -> Result<TrainedSynthon> {
    let train = prepare(train_records, jlog);
    let val = prepare(val_records, jlog);
    let to_items = |data: &PreparedData| -> Vec<CompletionItem> {
        data.completion
            .iter()
            .filter(|(_, trace)| {
                // the vocabulary must cover every unit (true for the split
                // the vocabulary was built from; validation may differ)
                trace
                    .units
                    .iter()
                    .all(|u| vocab.id_of(&u.encoding).is_some())
            })
            .map(|(rec, trace)| {
                CompletionItem::new(
                    rec.product.clone(),
                    rec.reaction_type,
                    trace.clone(),
                    vocab,
                )
            })
            .collect()
    };
    let train_items = to_items(&train);
    let val_items = to_items(&val);
    if train_items.is_empty() {
        bail!("no trainable completion records");
    }
    let (store, log) = train_synthon(&train_items, &val_items, enc, vocab, tc)
        .map_err(|e| anyhow::anyhow!("{e}"))?;
    for e in &log {
        jlog.epoch("synthon", e);
    }
    Ok(TrainedSynthon {
        store,
        log,
        hyperparams: Hyperparams {
            module: "synthon".into(),
            hidden_dim: enc.hidden_dim,
            t_atom: enc.t_atom,
            t_frag: enc.t_frag,
            use_brics: enc.use_brics,
            type_known: enc.type_known,
            vocab_size: vocab.len(),
        },
    })
}

/// Predicts for many products, optionally across threads; output order
/// follows the input order regardless of thread count.
#[allow(clippy::too_many_arguments)]
pub fn predict_many(
    products: &[(MolGraph, Option<usize>)],
    center_store: &ParamStore,
    center_cfg: &EncoderConfig,
    synthon_store: &ParamStore,
    synthon_cfg: &EncoderConfig,
    vocab: &SubstructureVocab,
    icfg: &InferenceConfig,
    threads: usize,
) -> Vec<Result<Vec<RankedReaction>, String>> {
    let run_one = |(g, t): &(MolGraph, Option<usize>)| {
        predict(
            g,
            *t,
            center_store,
            center_cfg,
            synthon_store,
            synthon_cfg,
            vocab,
            icfg,
        )
        .map_err(|e| e.to_string())
    };
    if threads <= 1 || products.len() <= 1 {
        return products.iter().map(run_one).collect();
    }
    let chunk = products.len().div_ceil(threads);
    let mut out: Vec<Result<Vec<RankedReaction>, String>> = Vec::with_capacity(products.len());
    std::thread::scope(|scope| {
        let mut handles = Vec::new();
        for part in products.chunks(chunk) {
            handles.push(scope.spawn(move || part.iter().map(run_one).collect::<Vec<_>>()));
        }
        for h in handles {
            out.extend(h.join().expect("prediction worker panicked"));
        }
    });
    out
}

/// Evaluation of a prediction file against gold reactions: overall and
/// per-class top-k fractions.
pub struct Evaluation {
    pub ks: Vec<usize>,
    pub overall: Vec<Float>,
    /// (class, count, fractions)
    pub per_class: Vec<(usize, usize, Vec<Float>)>,
    pub n_records: usize,
}

pub fn evaluate(
    predictions: &[crate::io::ProductPredictions],
    gold: &[ReactionRecord],
    ks: &[usize],
) -> Result<Evaluation> {
    let mut by_product: BTreeMap<&str, Vec<String>> = BTreeMap::new();
    for (p, list) in predictions {
        by_product.insert(p.as_str(), list.iter().map(|(r, _)| r.clone()).collect());
    }
    let empty: Vec<String> = Vec::new();
    let mut ranks: Vec<Option<usize>> = Vec::with_capacity(gold.len());
    let mut class_ranks: BTreeMap<usize, Vec<Option<usize>>> = BTreeMap::new();
    for rec in gold {
        let pkey = retrograph_core::chem::write_smiles(&rec.product.without_maps());
        let gkey = reactant_set_key(&rec.reactants);
        let list = by_product.get(pkey.as_str()).unwrap_or(&empty);
        let rank = hit_rank(list, &gkey);
        ranks.push(rank);
        if let Some(c) = rec.reaction_type {
            class_ranks.entry(c).or_default().push(rank);
        }
    }
    let overall = topk_from_ranks(&ranks, ks);
    let per_class = class_ranks
        .into_iter()
        .map(|(c, r)| (c, r.len(), topk_from_ranks(&r, ks)))
        .collect();
    Ok(Evaluation {
        ks: ks.to_vec(),
        overall,
        per_class,
        n_records: gold.len(),
    })
}

/// Per-product reaction-diversity summaries from a prediction file: the
/// pairwise-similarity histogram over the top predictions, the mean
/// similarity, and the number of distinct reaction centers.
pub fn diversity_points(
    predictions: &[crate::io::ProductPredictions],
    top: usize,
    bins: usize,
) -> Vec<retrograph_core::eval::DiversityPoint> {
    use retrograph_core::eval::{reaction_similarity, similarity_histogram, DiversityPoint};
    let mut points = Vec::new();
    for (_, rows) in predictions {
        let rows = &rows[..rows.len().min(top)];
        if rows.len() < 2 {
            continue;
        }
        let graphs: Vec<Option<MolGraph>> = rows
            .iter()
            .map(|(r, _)| retrograph_core::chem::parse_smiles(r).ok())
            .collect();
        let mut sims = Vec::new();
        for i in 0..graphs.len() {
            for j in i + 1..graphs.len() {
                if let (Some(a), Some(b)) = (&graphs[i], &graphs[j]) {
                    sims.push(reaction_similarity(a, b));
                }
            }
        }
        if sims.is_empty() {
            continue;
        }
        let mean = sims.iter().sum::<Float>() / sims.len() as Float;
        let centers: std::collections::BTreeSet<&str> =
            rows.iter().map(|(_, c)| c.as_str()).collect();
        points.push(DiversityPoint {
            histogram: similarity_histogram(&sims, bins),
            mean_similarity: mean,
            n_centers: centers.len(),
        });
    }
    points
}

/// Loads a reactions file and aborts with context when every line fails.
pub fn load_records(path: &Path, jlog: &mut JsonLog) -> Result<Vec<ReactionRecord>> {
    let (records, failures) = crate::io::read_reactions(path)?;
    if !failures.is_empty() {
        jlog.counter("parse_failures", failures.len());
    }
    if records.is_empty() {
        bail!(
            "no parseable reactions in {} ({} failures)",
            path.display(),
            failures.len()
        );
    }
    Ok(records)
}

/// Resolves the seed: flag, then config file, then RETROGRAPH_SEED.
pub fn resolve_seed(flag: Option<u64>, file: Option<u64>) -> Result<u64> {
    if let Some(s) = flag.or(file) {
        return Ok(s);
    }
    if let Ok(v) = std::env::var("RETROGRAPH_SEED") {
        return v
            .parse()
            .context("RETROGRAPH_SEED must be an unsigned integer");
    }
    bail!("a seed is required: pass --seed, set seed= in the config file, or export RETROGRAPH_SEED")
}
