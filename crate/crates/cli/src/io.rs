//! Text file formats: reaction datasets, vocabulary TSV, prediction TSV,
//! evaluation and coverage CSV.

use std::fs;
use std::io::Write;
use std::path::Path;

use anyhow::{bail, Context, Result};

use retrograph_core::chem::{parse_smiles, write_smiles, MolGraph};
use retrograph_core::infer::RankedReaction;
use retrograph_core::reaction::{
    parse_reaction, CenterKind, CenterLabel, CoverageStats, ReactionRecord, SubstructureVocab,
    Unit, UnitKind, VocabEntry,
};
use retrograph_core::Float;

/// Line-number/message pairs for inputs that failed to parse.
pub type ParseFailures = Vec<(usize, String)>;

/// Reads a reaction dataset; returns parsed records and per-line failures.
pub fn read_reactions(path: &Path) -> Result<(Vec<ReactionRecord>, ParseFailures)> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading reactions from {}", path.display()))?;
    let mut records = Vec::new();
    let mut failures = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        match parse_reaction(line) {
            Ok(r) => records.push(r),
            Err(e) => failures.push((lineno + 1, e.to_string())),
        }
    }
    Ok((records, failures))
}

/// Reads newline-delimited molecules (either bare SMILES or full reaction
/// lines, in which case the product side is taken).
pub fn read_products(path: &Path) -> Result<Vec<(MolGraph, Option<usize>)>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading products from {}", path.display()))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        if line.contains(">>") {
            let rec = parse_reaction(line)
                .with_context(|| format!("line {}", lineno + 1))?;
            out.push((rec.product.without_maps(), rec.reaction_type));
        } else {
            let g = parse_smiles(line)
                .map_err(|e| anyhow::anyhow!("line {}: {e}", lineno + 1))?;
            out.push((g.without_maps(), None));
        }
    }
    Ok(out)
}

pub fn write_vocab(path: &Path, vocab: &SubstructureVocab) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "encoding\tanchor_kind\tfrequency")?;
    for e in &vocab.entries {
        writeln!(f, "{}\t{}\t{}", e.unit.encoding, e.unit.kind.as_str(), e.frequency)?;
    }
    Ok(())
}

pub fn read_vocab(path: &Path) -> Result<SubstructureVocab> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading vocabulary from {}", path.display()))?;
    let mut entries = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue; // header
        }
        let mut cols = line.split('\t');
        let (enc, kind, freq) = match (cols.next(), cols.next(), cols.next()) {
            (Some(a), Some(b), Some(c)) => (a, b, c),
            _ => bail!("vocab line {} malformed", lineno + 1),
        };
        let kind = UnitKind::parse(kind)
            .with_context(|| format!("vocab line {}: bad kind", lineno + 1))?;
        let unit = Unit::from_encoding(enc, kind)
            .map_err(|e| anyhow::anyhow!("vocab line {}: {e}", lineno + 1))?;
        let frequency: usize = freq
            .trim()
            .parse()
            .with_context(|| format!("vocab line {}: bad frequency", lineno + 1))?;
        entries.push(VocabEntry { unit, frequency });
    }
    Ok(SubstructureVocab::from_entries(entries))
}

/// Compact center description for prediction rows, e.g. `bf:2-7`,
/// `bc:1-4:double`, `a:5`, with `;chg:i:+1` suffixes for charge edits.
pub fn describe_center(product: &MolGraph, label: &CenterLabel) -> String {
    let mut s = match label.kind {
        CenterKind::BondFormation => {
            let b = &product.bonds[label.bond.unwrap()];
            format!("bf:{}-{}", b.a, b.b)
        }
        CenterKind::BondChange => {
            let b = &product.bonds[label.bond.unwrap()];
            let o = match label.original_order.unwrap() {
                retrograph_core::chem::BondOrder::Single => "single",
                retrograph_core::chem::BondOrder::Double => "double",
                retrograph_core::chem::BondOrder::Triple => "triple",
                retrograph_core::chem::BondOrder::Aromatic => "aromatic",
            };
            format!("bc:{}-{}:{}", b.a, b.b, o)
        }
        CenterKind::Atom => format!("a:{}", label.atom.unwrap()),
        CenterKind::Unsupported => "unsupported".to_string(),
    };
    for &(bi, o) in &label.induced_changes {
        let b = &product.bonds[bi];
        s.push_str(&format!(";nb:{}-{}:{}", b.a, b.b, o.class()));
    }
    for &(a, d) in &label.charge_changes {
        s.push_str(&format!(";chg:{a}:{d:+}"));
    }
    s
}

/// Prediction rows for one product.
pub fn write_predictions(
    f: &mut impl Write,
    product: &MolGraph,
    ranked: &[RankedReaction],
) -> Result<()> {
    let pkey = write_smiles(&product.without_maps());
    for (rank, r) in ranked.iter().enumerate() {
        writeln!(
            f,
            "{}\t{}\t{:.9}\t{}\t{}",
            pkey,
            rank + 1,
            r.score,
            r.key,
            describe_center(product, &r.center)
        )?;
    }
    Ok(())
}

pub fn prediction_header(f: &mut impl Write) -> Result<()> {
    writeln!(f, "product\trank\tscore\treactants\tcenter")?;
    Ok(())
}

/// Ranked (reactant key, center description) rows for one product.
pub type ProductPredictions = (String, Vec<(String, String)>);

/// Parsed prediction file: per product key, ranked (reactant key, center
/// description) pairs.
pub fn read_predictions(path: &Path) -> Result<Vec<ProductPredictions>> {
    let text = fs::read_to_string(path)
        .with_context(|| format!("reading predictions from {}", path.display()))?;
    let mut out: Vec<ProductPredictions> = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if lineno == 0 || line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() < 4 {
            bail!("prediction line {} malformed", lineno + 1);
        }
        let product = cols[0].to_string();
        let reactants = cols[3].to_string();
        let center = cols.get(4).unwrap_or(&"").to_string();
        match out.last_mut() {
            Some((p, list)) if *p == product => list.push((reactants, center)),
            _ => out.push((product, vec![(reactants, center)])),
        }
    }
    Ok(out)
}

/// Diversity clustering report CSV: one row per cluster plus a correlation
/// footer.
pub fn write_diversity_csv(
    path: &Path,
    report: &retrograph_core::eval::DiversityReport,
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "cluster,size,mean_similarity,mean_centers")?;
    for c in 0..report.cluster_sizes.len() {
        writeln!(
            f,
            "{c},{},{:.6},{:.6}",
            report.cluster_sizes[c],
            report.cluster_mean_similarity[c],
            report.cluster_mean_centers[c]
        )?;
    }
    writeln!(f, "correlation,,{:.6},", report.correlation)?;
    Ok(())
}

pub fn write_coverage_csv(path: &Path, stats: &CoverageStats) -> Result<()> {
    let mut f = fs::File::create(path)?;
    writeln!(f, "kind,count,fraction")?;
    let fr = stats.fractions();
    writeln!(f, "bond_formation,{},{:.6}", stats.bond_formation, fr[0])?;
    writeln!(f, "bond_change,{},{:.6}", stats.bond_change, fr[1])?;
    writeln!(f, "atom,{},{:.6}", stats.atom, fr[2])?;
    writeln!(f, "unsupported,{},{:.6}", stats.unsupported, fr[3])?;
    writeln!(f, "supported,{},{:.6}", stats.total - stats.unsupported, stats.supported_fraction())?;
    writeln!(f, "total,{},1.000000", stats.total)?;
    Ok(())
}

/// Overall + per-class evaluation CSV.
pub fn write_eval_csv(
    path: &Path,
    ks: &[usize],
    n_records: usize,
    overall: &[Float],
    per_class: &[(usize, usize, Vec<Float>)],
) -> Result<()> {
    let mut f = fs::File::create(path)?;
    let header: Vec<String> = ks.iter().map(|k| format!("top{k}")).collect();
    writeln!(f, "class,count,{}", header.join(","))?;
    let fmt = |v: &[Float]| {
        v.iter()
            .map(|x| format!("{x:.6}"))
            .collect::<Vec<_>>()
            .join(",")
    };
    writeln!(f, "overall,{n_records},{}", fmt(overall))?;
    for (class, count, fracs) in per_class {
        writeln!(f, "{class},{count},{}", fmt(fracs))?;
    }
    Ok(())
}
