//! Evaluation: top-k accuracy (overall and per module), reaction similarity
//! with maximum-weight reactant matching, and k-means diversity clustering.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::center::{
    candidate_matches_label_up_to_symmetry, scored_center_from_label, top_center_candidates,
    CenterError, LabeledProduct,
};
use crate::chem::{morgan_fingerprint, tanimoto, MolGraph, MorganFingerprint};
use crate::encoder::EncoderConfig;
use crate::infer::{predict_from_centers, InferError, InferenceConfig};
use crate::num;
use crate::reaction::{reactant_set_key, SubstructureVocab};
use crate::rng::Rng;
use crate::tensor::ParamStore;
use crate::Float;

#[derive(Clone, Debug, PartialEq, Eq)]
pub enum EvalError {
    MissingGroundTruth(usize),
    LengthMismatch,
    FewerPointsThanClusters { points: usize, clusters: usize },
}

impl core::fmt::Display for EvalError {
    fn fmt(&self, f: &mut core::fmt::Formatter<'_>) -> core::fmt::Result {
        match self {
            EvalError::MissingGroundTruth(i) => write!(f, "record {i} has no ground truth"),
            EvalError::LengthMismatch => write!(f, "predictions and gold differ in length"),
            EvalError::FewerPointsThanClusters { points, clusters } => {
                write!(f, "{points} points for {clusters} clusters")
            }
        }
    }
}

#[cfg(feature = "std")]
impl std::error::Error for EvalError {}

/// 1-based rank of the gold key in a ranked prediction list.
pub fn hit_rank(predictions: &[String], gold: &str) -> Option<usize> {
    predictions.iter().position(|p| p == gold).map(|i| i + 1)
}

/// Top-k fractions from per-record hit ranks (None = never hit).
pub fn topk_from_ranks(ranks: &[Option<usize>], ks: &[usize]) -> Vec<Float> {
    if ranks.is_empty() {
        return vec![0.0; ks.len()];
    }
    ks.iter()
        .map(|&k| {
            let hits = ranks.iter().filter(|r| matches!(r, Some(x) if *x <= k)).count();
            hits as Float / ranks.len() as Float
        })
        .collect()
}

/// Overall top-k accuracy over ranked canonical reactant-set keys.
pub fn topk_accuracy(
    predictions: &[Vec<String>],
    gold: &[Option<String>],
    ks: &[usize],
) -> Result<Vec<Float>, EvalError> {
    if predictions.len() != gold.len() {
        return Err(EvalError::LengthMismatch);
    }
    let mut ranks = Vec::with_capacity(gold.len());
    for (i, g) in gold.iter().enumerate() {
        let g = g.as_ref().ok_or(EvalError::MissingGroundTruth(i))?;
        ranks.push(hit_rank(&predictions[i], g));
    }
    Ok(topk_from_ranks(&ranks, ks))
}

/// Module-level accuracy of reaction-center identification: the labeled
/// center must appear (up to product automorphism) among the top-k joint
/// candidates.
pub fn center_module_topk(
    items: &[&LabeledProduct],
    store: &ParamStore,
    cfg: &EncoderConfig,
    ks: &[usize],
) -> Result<Vec<Float>, CenterError> {
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let mut ranks = Vec::with_capacity(items.len());
    for it in items {
        let cands = top_center_candidates(&it.product, it.reaction_type, store, cfg, kmax)?;
        let rank = cands
            .iter()
            .position(|c| candidate_matches_label_up_to_symmetry(&it.product, c, &it.label))
            .map(|i| i + 1);
        ranks.push(rank);
    }
    Ok(topk_from_ranks(&ranks, ks))
}

/// Module-level accuracy of synthon completion: ground-truth centers are
/// given, and the gold reactant set must appear among the top-k completed
/// reactions.
#[allow(clippy::too_many_arguments)]
pub fn synthon_module_topk(
    items: &[(&MolGraph, Option<usize>, &crate::reaction::CenterLabel, &MolGraph)],
    synthon_store: &ParamStore,
    synthon_cfg: &EncoderConfig,
    vocab: &SubstructureVocab,
    ks: &[usize],
    max_steps: usize,
) -> Result<Vec<Float>, InferError> {
    let kmax = ks.iter().copied().max().unwrap_or(1);
    let icfg = InferenceConfig {
        k: 1,
        n: kmax,
        max_steps,
    };
    let mut ranks = Vec::with_capacity(items.len());
    for (product, rtype, label, reactants) in items {
        let gold = reactant_set_key(reactants);
        let center = scored_center_from_label(product, label).map_err(InferError::Center)?;
        let ranked = predict_from_centers(
            product,
            *rtype,
            core::slice::from_ref(&center),
            synthon_store,
            synthon_cfg,
            vocab,
            &icfg,
        )?;
        ranks.push(ranked.iter().position(|r| r.key == gold).map(|i| i + 1));
    }
    Ok(topk_from_ranks(&ranks, ks))
}

/// Similarity of two reactions sharing a product: maximum-weight matching
/// of pairwise fingerprint Tanimoto scores over the reactant components,
/// normalized by the larger component count.
pub fn reaction_similarity(r1: &MolGraph, r2: &MolGraph) -> Float {
    let comps1 = component_fingerprints(r1);
    let comps2 = component_fingerprints(r2);
    if comps1.is_empty() && comps2.is_empty() {
        return 1.0;
    }
    if comps1.is_empty() || comps2.is_empty() {
        return 0.0;
    }
    let (small, large) = if comps1.len() <= comps2.len() {
        (&comps1, &comps2)
    } else {
        (&comps2, &comps1)
    };
    let n_small = small.len();
    let n_large = large.len();
    let mut sim = vec![0.0; n_small * n_large];
    for (i, a) in small.iter().enumerate() {
        for (j, b) in large.iter().enumerate() {
            sim[i * n_large + j] = tanimoto(a, b).expect("equal widths");
        }
    }
    // assignment DP over subsets of the larger side
    let full = 1usize << n_large;
    let mut dp = vec![Float::NEG_INFINITY; full];
    dp[0] = 0.0;
    let mut best = 0.0;
    for i in 0..n_small {
        let mut next = vec![Float::NEG_INFINITY; full];
        for (mask, &score) in dp.iter().enumerate() {
            if score == Float::NEG_INFINITY || (mask.count_ones() as usize) != i {
                continue;
            }
            for j in 0..n_large {
                if mask >> j & 1 == 1 {
                    continue;
                }
                let m2 = mask | 1 << j;
                let cand = score + sim[i * n_large + j];
                if cand > next[m2] {
                    next[m2] = cand;
                }
            }
        }
        dp = next;
    }
    for &score in &dp {
        if score > best {
            best = score;
        }
    }
    best / n_large as Float
}

fn component_fingerprints(g: &MolGraph) -> Vec<MorganFingerprint> {
    g.components()
        .iter()
        .map(|comp| {
            let (sub, _) = g.induced_subgraph(comp);
            morgan_fingerprint(&sub.without_maps(), 2, 2048)
        })
        .collect()
}

/// Histogram of pairwise similarities, `bins` equal-width buckets on [0,1],
/// normalized to sum to 1 (all-zero when there are no pairs).
pub fn similarity_histogram(sims: &[Float], bins: usize) -> Vec<Float> {
    let mut h = vec![0.0; bins];
    if sims.is_empty() {
        return h;
    }
    for &s in sims {
        let b = ((s * bins as Float) as usize).min(bins - 1);
        h[b] += 1.0;
    }
    let total: Float = h.iter().sum();
    for x in h.iter_mut() {
        *x /= total;
    }
    h
}

/// One product's diversity summary.
#[derive(Clone, Debug)]
pub struct DiversityPoint {
    /// Fixed-length histogram of pairwise reaction similarities among the
    /// product's top predictions.
    pub histogram: Vec<Float>,
    pub mean_similarity: Float,
    /// Distinct reaction centers among the product's top predictions.
    pub n_centers: usize,
}

#[derive(Clone, Debug)]
pub struct DiversityReport {
    pub assignment: Vec<usize>,
    pub cluster_sizes: Vec<usize>,
    pub cluster_mean_similarity: Vec<Float>,
    pub cluster_mean_centers: Vec<Float>,
    /// Pearson correlation between per-cluster mean similarity and mean
    /// center count.
    pub correlation: Float,
}

/// Seeded k-means (k-means++ init, Lloyd iterations) over the histogram
/// vectors in Euclidean distance.
pub fn diversity_cluster(
    points: &[DiversityPoint],
    n_clusters: usize,
    seed: u64,
) -> Result<DiversityReport, EvalError> {
    if points.len() < n_clusters || n_clusters == 0 {
        return Err(EvalError::FewerPointsThanClusters {
            points: points.len(),
            clusters: n_clusters,
        });
    }
    let data: Vec<&[Float]> = points.iter().map(|p| p.histogram.as_slice()).collect();
    let assignment = kmeans(&data, n_clusters, seed);

    let mut cluster_sizes = vec![0usize; n_clusters];
    let mut sim_sum = vec![0.0; n_clusters];
    let mut ctr_sum = vec![0.0; n_clusters];
    for (i, &c) in assignment.iter().enumerate() {
        cluster_sizes[c] += 1;
        sim_sum[c] += points[i].mean_similarity;
        ctr_sum[c] += points[i].n_centers as Float;
    }
    let cluster_mean_similarity: Vec<Float> = sim_sum
        .iter()
        .zip(&cluster_sizes)
        .map(|(s, &n)| if n > 0 { s / n as Float } else { 0.0 })
        .collect();
    let cluster_mean_centers: Vec<Float> = ctr_sum
        .iter()
        .zip(&cluster_sizes)
        .map(|(s, &n)| if n > 0 { s / n as Float } else { 0.0 })
        .collect();
    let correlation = pearson(&cluster_mean_similarity, &cluster_mean_centers);
    Ok(DiversityReport {
        assignment,
        cluster_sizes,
        cluster_mean_similarity,
        cluster_mean_centers,
        correlation,
    })
}

fn dist2(a: &[Float], b: &[Float]) -> Float {
    a.iter().zip(b.iter()).map(|(x, y)| (x - y) * (x - y)).sum()
}

pub(crate) fn kmeans(data: &[&[Float]], k: usize, seed: u64) -> Vec<usize> {
    let n = data.len();
    let dim = data[0].len();
    let mut rng = Rng::new(seed);

    // k-means++ seeding
    let mut centers: Vec<Vec<Float>> = Vec::with_capacity(k);
    centers.push(data[rng.below(n)].to_vec());
    while centers.len() < k {
        let d2: Vec<Float> = data
            .iter()
            .map(|p| {
                centers
                    .iter()
                    .map(|c| dist2(p, c))
                    .fold(Float::INFINITY, Float::min)
            })
            .collect();
        let total: Float = d2.iter().sum();
        let next = if total <= 0.0 {
            rng.below(n)
        } else {
            let mut target = rng.next_float() * total;
            let mut pick = n - 1;
            for (i, &d) in d2.iter().enumerate() {
                if target < d {
                    pick = i;
                    break;
                }
                target -= d;
            }
            pick
        };
        centers.push(data[next].to_vec());
    }

    let mut assignment = vec![0usize; n];
    for _ in 0..200 {
        let mut changed = false;
        for (i, p) in data.iter().enumerate() {
            let mut best = 0usize;
            let mut best_d = Float::INFINITY;
            for (c, center) in centers.iter().enumerate() {
                let d = dist2(p, center);
                if d < best_d {
                    best_d = d;
                    best = c;
                }
            }
            if assignment[i] != best {
                assignment[i] = best;
                changed = true;
            }
        }
        if !changed {
            break;
        }
        let mut sums = vec![vec![0.0; dim]; k];
        let mut counts = vec![0usize; k];
        for (i, p) in data.iter().enumerate() {
            counts[assignment[i]] += 1;
            for (s, &x) in sums[assignment[i]].iter_mut().zip(p.iter()) {
                *s += x;
            }
        }
        for c in 0..k {
            if counts[c] > 0 {
                for s in sums[c].iter_mut() {
                    *s /= counts[c] as Float;
                }
                centers[c] = sums[c].clone();
            }
        }
    }
    assignment
}

/// Pearson correlation; 0 when either side is constant.
pub fn pearson(xs: &[Float], ys: &[Float]) -> Float {
    let n = xs.len().min(ys.len());
    if n < 2 {
        return 0.0;
    }
    let mx: Float = xs[..n].iter().sum::<Float>() / n as Float;
    let my: Float = ys[..n].iter().sum::<Float>() / n as Float;
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for i in 0..n {
        let dx = xs[i] - mx;
        let dy = ys[i] - my;
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx <= 0.0 || syy <= 0.0 {
        return 0.0;
    }
    sxy / (num::sqrt(sxx) * num::sqrt(syy))
}

/// k-means objective (sum of squared distances to the assigned mean).
pub fn kmeans_objective(data: &[&[Float]], assignment: &[usize], k: usize) -> Float {
    let dim = data[0].len();
    let mut sums = vec![vec![0.0; dim]; k];
    let mut counts = vec![0usize; k];
    for (i, p) in data.iter().enumerate() {
        counts[assignment[i]] += 1;
        for (s, &x) in sums[assignment[i]].iter_mut().zip(p.iter()) {
            *s += x;
        }
    }
    for c in 0..k {
        if counts[c] > 0 {
            for s in sums[c].iter_mut() {
                *s /= counts[c] as Float;
            }
        }
    }
    data.iter()
        .enumerate()
        .map(|(i, p)| dist2(p, &sums[assignment[i]]))
        .sum()
}
