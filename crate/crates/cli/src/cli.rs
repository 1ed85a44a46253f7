//! Command-line surface: argument definitions, config-file merging and the
//! subcommand implementations.

use std::collections::BTreeMap;
use std::fmt;
use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand};

use retrograph_core::center::TrainConfig;
use retrograph_core::encoder::EncoderConfig;
use retrograph_core::infer::InferenceConfig;
use retrograph_core::tensor::AdamConfig;

use crate::checkpoint;
use crate::io;
use crate::jsonlog::JsonLog;
use crate::pipeline;

/// Errors that should exit with status 2 (bad configuration) rather than 1.
#[derive(Debug)]
pub struct UsageError(pub String);

impl fmt::Display for UsageError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

impl std::error::Error for UsageError {}

pub fn usage_err(msg: impl Into<String>) -> anyhow::Error {
    anyhow::Error::new(UsageError(msg.into()))
}

#[derive(Parser)]
#[command(
    name = "retrograph",
    version,
    about = "Two-step retrosynthesis: rank reaction centers, then complete synthons into reactants"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the substructure vocabulary (and coverage stats) from reactions
    Vocab(VocabArgs),
    /// Center-kind coverage statistics over a dataset
    Stats(StatsArgs),
    /// Train the reaction-center identification module
    TrainCenter(TrainArgs),
    /// Train the synthon completion module
    TrainSynthon(TrainSynthonArgs),
    /// Predict ranked reactant sets for products
    Predict(PredictArgs),
    /// Evaluate a prediction file against gold reactions
    Evaluate(EvaluateArgs),
}

/// `key=value` config file; flags always win over file values.
pub struct FileConfig(BTreeMap<String, String>);

impl FileConfig {
    pub fn load(path: Option<&Path>) -> Result<FileConfig> {
        let mut map = BTreeMap::new();
        if let Some(p) = path {
            let text = fs::read_to_string(p)
                .with_context(|| format!("reading config {}", p.display()))?;
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let Some((k, v)) = line.split_once('=') else {
                    return Err(usage_err(format!(
                        "config line {}: expected key=value",
                        lineno + 1
                    )));
                };
                map.insert(k.trim().to_string(), v.trim().to_string());
            }
        }
        Ok(FileConfig(map))
    }

    pub fn get<T: FromStr>(&self, key: &str) -> Result<Option<T>> {
        match self.0.get(key) {
            None => Ok(None),
            Some(v) => v
                .parse::<T>()
                .map(Some)
                .map_err(|_| usage_err(format!("config key '{key}': bad value '{v}'"))),
        }
    }
}

#[derive(Args)]
pub struct VocabArgs {
    /// Reactions file (one `[type,]reactants>>product` per line)
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Vocabulary TSV output
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Optional coverage CSV output
    #[arg(long)]
    pub stats: Option<PathBuf>,
    /// JSON-lines log file
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct StatsArgs {
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Coverage CSV output
    #[arg(long = "out")]
    pub output: PathBuf,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainArgs {
    /// Training reactions file
    #[arg(long = "in")]
    pub input: PathBuf,
    /// Validation reactions file
    #[arg(long)]
    pub val: Option<PathBuf>,
    /// Checkpoint output directory
    #[arg(long = "out")]
    pub output: PathBuf,
    /// key=value config file (flags take precedence)
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// RNG seed (required: flag, config file, or RETROGRAPH_SEED)
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub epochs: Option<usize>,
    /// Hidden dimension
    #[arg(long)]
    pub hidden: Option<usize>,
    /// Message-passing iterations over the molecular graph
    #[arg(long = "t-atom")]
    pub t_atom: Option<usize>,
    /// Message-passing iterations over the fragment graph
    #[arg(long = "t-frag")]
    pub t_frag: Option<usize>,
    #[arg(long)]
    pub batch: Option<usize>,
    #[arg(long)]
    pub lr: Option<f64>,
    /// Feed the reaction class as an extra atom feature
    #[arg(long = "type-known", num_args = 0..=1, default_missing_value = "true")]
    pub type_known: Option<bool>,
    /// Enrich atom embeddings with BRICS fragment embeddings
    #[arg(long = "use-brics", num_args = 0..=1, default_missing_value = "true")]
    pub use_brics: Option<bool>,
    /// Plateau patience before decaying the learning rate
    #[arg(long)]
    pub patience: Option<usize>,
    /// Stop early at this validation metric
    #[arg(long = "target-acc")]
    pub target_acc: Option<f64>,
    /// Worker threads (1 forces fully deterministic mode)
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct TrainSynthonArgs {
    #[command(flatten)]
    pub train: TrainArgs,
    /// Substructure vocabulary TSV (from `vocab`)
    #[arg(long)]
    pub vocab: PathBuf,
}

#[derive(Args)]
pub struct PredictArgs {
    /// Center-module checkpoint directory
    #[arg(long)]
    pub center: PathBuf,
    /// Synthon-module checkpoint directory
    #[arg(long)]
    pub synthon: PathBuf,
    /// Substructure vocabulary TSV
    #[arg(long)]
    pub vocab: PathBuf,
    /// Single product SMILES
    #[arg(long)]
    pub product: Option<String>,
    /// File of products (SMILES per line, or reaction lines whose product
    /// side is used)
    #[arg(long = "in")]
    pub input: Option<PathBuf>,
    /// Reaction class of the product(s) in type-known mode
    #[arg(long = "type")]
    pub reaction_type: Option<usize>,
    /// Output TSV (stdout when omitted)
    #[arg(long = "out")]
    pub output: Option<PathBuf>,
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Reaction-center beam width
    #[arg(long)]
    pub k: Option<usize>,
    /// Reactant beam width
    #[arg(long)]
    pub n: Option<usize>,
    #[arg(long = "max-steps")]
    pub max_steps: Option<usize>,
    #[arg(long)]
    pub threads: Option<usize>,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

#[derive(Args)]
pub struct EvaluateArgs {
    /// Prediction TSV from `predict`
    #[arg(long)]
    pub pred: PathBuf,
    /// Gold reactions file
    #[arg(long)]
    pub gold: PathBuf,
    /// Output CSV
    #[arg(long = "out")]
    pub output: PathBuf,
    /// Comma-separated k values
    #[arg(long, default_value = "1,3,5,10")]
    pub ks: String,
    /// Also write a reaction-diversity clustering CSV here
    #[arg(long)]
    pub diversity: Option<PathBuf>,
    /// Cluster count for the diversity report
    #[arg(long, default_value_t = 10)]
    pub clusters: usize,
    #[arg(long)]
    pub log: Option<PathBuf>,
}

fn open_log(path: &Option<PathBuf>) -> Result<JsonLog> {
    match path {
        Some(p) => JsonLog::append(p),
        None => Ok(JsonLog::disabled()),
    }
}

pub fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Vocab(a) => cmd_vocab(a),
        Command::Stats(a) => cmd_stats(a),
        Command::TrainCenter(a) => cmd_train_center(a),
        Command::TrainSynthon(a) => cmd_train_synthon(a),
        Command::Predict(a) => cmd_predict(a),
        Command::Evaluate(a) => cmd_evaluate(a),
    }
}

fn cmd_vocab(a: VocabArgs) -> Result<()> {
    let mut jlog = open_log(&a.log)?;
    let records = pipeline::load_records(&a.input, &mut jlog)?;
    let data = pipeline::prepare(records, &mut jlog);
    let vocab = pipeline::build_vocabulary(&data);
    io::write_vocab(&a.output, &vocab)?;
    jlog.event(serde_json::json!({"event": "vocab", "size": vocab.len()}));
    if let Some(stats) = &a.stats {
        io::write_coverage_csv(stats, &data.coverage)?;
    }
    println!(
        "vocabulary: {} entries from {} extractable records ({} unsupported, {} trace failures)",
        vocab.len(),
        data.completion.len(),
        data.coverage.unsupported,
        data.trace_failures
    );
    Ok(())
}

fn cmd_stats(a: StatsArgs) -> Result<()> {
    let mut jlog = open_log(&a.log)?;
    let records = pipeline::load_records(&a.input, &mut jlog)?;
    let data = pipeline::prepare(records, &mut jlog);
    io::write_coverage_csv(&a.output, &data.coverage)?;
    let f = data.coverage.fractions();
    println!(
        "{} records: bf {:.4}, bc {:.4}, atom {:.4}, unsupported {:.4} (supported {:.4})",
        data.coverage.total,
        f[0],
        f[1],
        f[2],
        f[3],
        data.coverage.supported_fraction()
    );
    Ok(())
}

/// Shared flag/config/default resolution for the two training commands.
struct ResolvedTrain {
    enc: EncoderConfig,
    tc: TrainConfig,
}

fn resolve_train(a: &TrainArgs, module: &str) -> Result<ResolvedTrain> {
    let file = FileConfig::load(a.config.as_deref())?;
    let seed = pipeline::resolve_seed(a.seed, file.get("seed")?)
        .map_err(|e| usage_err(e.to_string()))?;
    let type_known = a
        .type_known
        .or(file.get("type-known")?)
        .unwrap_or(false);
    let use_brics = a.use_brics.or(file.get("use-brics")?).unwrap_or(false);
    // optimal iteration counts differ per module and per type mode
    let default_t_atom = match (module, type_known) {
        ("center", true) => 7,
        ("center", false) => 5,
        (_, true) => 5,
        (_, false) => 7,
    };
    let hidden = a.hidden.or(file.get("hidden")?).unwrap_or(512);
    let t_atom = a.t_atom.or(file.get("t-atom")?).unwrap_or(default_t_atom);
    let t_frag = a.t_frag.or(file.get("t-frag")?).unwrap_or(7);
    if hidden == 0 || t_atom == 0 {
        return Err(usage_err("hidden and t-atom must be positive"));
    }
    let enc = EncoderConfig {
        hidden_dim: hidden,
        t_atom,
        t_frag,
        use_brics,
        type_known,
        features: Default::default(),
    };
    let epochs_default = if module == "center" { 150 } else { 100 };
    let patience_default = if module == "center" { 10 } else { 5 };
    let tc = TrainConfig {
        epochs: a.epochs.or(file.get("epochs")?).unwrap_or(epochs_default),
        batch_size: a.batch.or(file.get("batch")?).unwrap_or(256),
        seed,
        adam: AdamConfig {
            lr: a.lr.or(file.get("lr")?).unwrap_or(1e-3),
            ..AdamConfig::default()
        },
        patience: a.patience.or(file.get("patience")?).unwrap_or(patience_default),
        min_delta: 0.01,
        target_metric: a.target_acc.or(file.get("target-acc")?),
    };
    Ok(ResolvedTrain { enc, tc })
}

fn cmd_train_center(a: TrainArgs) -> Result<()> {
    let r = resolve_train(&a, "center")?;
    let mut jlog = open_log(&a.log)?;
    let train = pipeline::load_records(&a.input, &mut jlog)?;
    let val = match &a.val {
        Some(p) => pipeline::load_records(p, &mut jlog)?,
        None => Vec::new(),
    };
    let trained = pipeline::run_train_center(train, val, &r.enc, &r.tc, &mut jlog)?;
    checkpoint::save(&a.output, &trained.store, &trained.hyperparams)?;
    let last = trained.log.last().expect("training ran");
    println!(
        "center module: {} epochs, final loss {:.4}, best val top-1 {:.4} -> {}",
        trained.log.len(),
        last.loss,
        trained
            .log
            .iter()
            .map(|e| e.val_metric)
            .fold(f64::NEG_INFINITY, f64::max),
        a.output.display()
    );
    Ok(())
}

fn cmd_train_synthon(a: TrainSynthonArgs) -> Result<()> {
    let r = resolve_train(&a.train, "synthon")?;
    let mut jlog = open_log(&a.train.log)?;
    let vocab = io::read_vocab(&a.vocab)?;
    if vocab.is_empty() {
        return Err(usage_err("vocabulary is empty"));
    }
    let train = pipeline::load_records(&a.train.input, &mut jlog)?;
    let val = match &a.train.val {
        Some(p) => pipeline::load_records(p, &mut jlog)?,
        None => Vec::new(),
    };
    let trained = pipeline::run_train_synthon(train, val, &vocab, &r.enc, &r.tc, &mut jlog)?;
    checkpoint::save(&a.train.output, &trained.store, &trained.hyperparams)?;
    let last = trained.log.last().expect("training ran");
    println!(
        "synthon module: {} epochs, final loss {:.4}, best val exact-trace {:.4} -> {}",
        trained.log.len(),
        last.loss,
        trained
            .log
            .iter()
            .map(|e| e.val_metric)
            .fold(f64::NEG_INFINITY, f64::max),
        a.train.output.display()
    );
    Ok(())
}

fn cmd_predict(a: PredictArgs) -> Result<()> {
    let file = FileConfig::load(a.config.as_deref())?;
    let mut jlog = open_log(&a.log)?;
    let (center_store, center_hp) = checkpoint::load(&a.center)?;
    let (synthon_store, synthon_hp) = checkpoint::load(&a.synthon)?;
    if center_hp.module != "center" || synthon_hp.module != "synthon" {
        return Err(usage_err("checkpoint directories are swapped or wrong"));
    }
    let vocab = io::read_vocab(&a.vocab)?;
    if synthon_hp.vocab_size != 0 && synthon_hp.vocab_size != vocab.len() {
        return Err(usage_err(format!(
            "vocabulary size {} does not match the checkpoint ({})",
            vocab.len(),
            synthon_hp.vocab_size
        )));
    }
    let icfg = InferenceConfig {
        k: a.k.or(file.get("k")?).unwrap_or(5),
        n: a.n.or(file.get("n")?).unwrap_or(10),
        max_steps: a.max_steps.or(file.get("max-steps")?).unwrap_or(30),
    };
    if icfg.k == 0 || icfg.n == 0 || icfg.max_steps == 0 {
        return Err(usage_err("k, n and max-steps must be positive"));
    }
    let threads = a
        .threads
        .or(file.get("threads")?)
        .unwrap_or_else(|| std::thread::available_parallelism().map(|n| n.get()).unwrap_or(1));

    let mut products: Vec<(retrograph_core::chem::MolGraph, Option<usize>)> = Vec::new();
    match (&a.product, &a.input) {
        (Some(s), None) => {
            let g = retrograph_core::chem::parse_smiles(s)
                .map_err(|e| usage_err(format!("--product: {e}")))?;
            products.push((g.without_maps(), a.reaction_type));
        }
        (None, Some(path)) => {
            products = io::read_products(path)?;
            if let Some(t) = a.reaction_type {
                for p in products.iter_mut() {
                    p.1 = Some(t);
                }
            }
        }
        _ => {
            return Err(usage_err(
                "exactly one of --product or --in must be given",
            ))
        }
    }

    let results = pipeline::predict_many(
        &products,
        &center_store,
        &center_hp.encoder_config(),
        &synthon_store,
        &synthon_hp.encoder_config(),
        &vocab,
        &icfg,
        threads,
    );

    let mut out: Box<dyn Write> = match &a.output {
        Some(p) => Box::new(fs::File::create(p)?),
        None => Box::new(std::io::stdout()),
    };
    io::prediction_header(&mut out)?;
    let mut failures = 0usize;
    for ((g, _), res) in products.iter().zip(results.iter()) {
        match res {
            Ok(ranked) => io::write_predictions(&mut out, g, ranked)?,
            Err(e) => {
                failures += 1;
                eprintln!(
                    "warning: prediction failed for {}: {e}",
                    retrograph_core::chem::write_smiles(g)
                );
            }
        }
    }
    jlog.counter("prediction_failures", failures);
    Ok(())
}

fn cmd_evaluate(a: EvaluateArgs) -> Result<()> {
    let mut jlog = open_log(&a.log)?;
    let ks: Vec<usize> = a
        .ks
        .split(',')
        .map(|s| s.trim().parse::<usize>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|_| usage_err("--ks must be comma-separated integers"))?;
    if ks.is_empty() || ks.contains(&0) {
        return Err(usage_err("--ks must contain positive integers"));
    }
    let preds = io::read_predictions(&a.pred)?;
    let gold = pipeline::load_records(&a.gold, &mut jlog)?;
    let eval = pipeline::evaluate(&preds, &gold, &ks)?;
    io::write_eval_csv(&a.output, &ks, eval.n_records, &eval.overall, &eval.per_class)?;
    if let Some(div_path) = &a.diversity {
        let points = pipeline::diversity_points(&preds, 10, 10);
        let k = a.clusters.min(points.len()).max(1);
        if points.is_empty() {
            return Err(usage_err(
                "diversity report needs products with at least two predictions",
            ));
        }
        let report = retrograph_core::eval::diversity_cluster(&points, k, 7)
            .map_err(|e| anyhow::anyhow!("{e}"))?;
        io::write_diversity_csv(div_path, &report)?;
        jlog.event(serde_json::json!({
            "event": "diversity",
            "products": points.len(),
            "clusters": k,
            "correlation": report.correlation,
        }));
    }
    let pretty: Vec<String> = ks
        .iter()
        .zip(eval.overall.iter())
        .map(|(k, f)| format!("top-{k} {f:.4}"))
        .collect();
    println!("{} records: {}", eval.n_records, pretty.join(", "));
    Ok(())
}
