//! Integration tests for the command-line surface: exit codes, file format
//! contracts, and an end-to-end run over the bundled toy data.

mod common;

use std::fs;
use std::path::Path;
use std::process::Command;

use common::{data_path, read_lines};

fn exe() -> &'static str {
    env!("CARGO_BIN_EXE_retrograph")
}

fn run(args: &[&str]) -> std::process::Output {
    Command::new(exe()).args(args).output().expect("spawn")
}

#[test]
fn help_exits_zero() {
    let out = run(&["--help"]);
    assert!(out.status.success());
    let text = String::from_utf8_lossy(&out.stdout);
    for sub in ["vocab", "train-center", "train-synthon", "predict", "evaluate", "stats"] {
        assert!(text.contains(sub), "--help must document {sub}");
    }
    for sub in ["vocab", "train-center", "predict", "evaluate", "stats"] {
        assert!(run(&[sub, "--help"]).status.success());
    }
}

#[test]
fn unknown_flag_exits_two() {
    let out = run(&["vocab", "--definitely-not-a-flag"]);
    assert_eq!(out.status.code(), Some(2));
    let out = run(&["no-such-subcommand"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn train_without_seed_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    let out = Command::new(exe())
        .env_remove("RETROGRAPH_SEED")
        .args([
            "train-center",
            "--in",
            data_path("toy_64.txt").to_str().unwrap(),
            "--out",
            tmp.path().join("ck").to_str().unwrap(),
        ])
        .output()
        .unwrap();
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("seed"));
}

#[test]
fn seed_from_environment_accepted() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("train.txt");
    let lines = read_lines("toy_64.txt");
    fs::write(&train, lines[..4].join("\n") + "\n").unwrap();
    let out = Command::new(exe())
        .env("RETROGRAPH_SEED", "11")
        .args([
            "train-center",
            "--in",
            train.to_str().unwrap(),
            "--out",
            tmp.path().join("ck").to_str().unwrap(),
            "--hidden",
            "8",
            "--t-atom",
            "1",
            "--epochs",
            "1",
            "--batch",
            "4",
        ])
        .output()
        .unwrap();
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

#[test]
fn bad_product_smiles_exits_two() {
    let tmp = tempfile::tempdir().unwrap();
    // invalid checkpoint paths are checked after argument validation, so
    // give the parser a bad SMILES with valid-looking paths
    let out = run(&[
        "predict",
        "--center",
        tmp.path().to_str().unwrap(),
        "--synthon",
        tmp.path().to_str().unwrap(),
        "--vocab",
        tmp.path().join("v.tsv").to_str().unwrap(),
        "--product",
        "C1CC", // unclosed ring
    ]);
    assert_ne!(out.status.code(), Some(0));
}

#[test]
fn vocab_stats_format_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let vocab = tmp.path().join("vocab.tsv");
    let stats = tmp.path().join("stats.csv");
    let out = run(&[
        "vocab",
        "--in",
        data_path("toy_64.txt").to_str().unwrap(),
        "--out",
        vocab.to_str().unwrap(),
        "--stats",
        stats.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    let text = fs::read_to_string(&vocab).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("encoding\tanchor_kind\tfrequency"));
    let n_entries = lines
        .filter(|l| {
            let cols: Vec<&str> = l.split('\t').collect();
            assert_eq!(cols.len(), 3, "vocab row arity: {l}");
            assert!(cols[0].contains(":1]"), "anchor map in encoding: {l}");
            cols[2].parse::<usize>().expect("frequency number");
            true
        })
        .count();
    assert!(n_entries >= 3, "toy vocabulary too small: {n_entries}");

    let stats_text = fs::read_to_string(&stats).unwrap();
    assert!(stats_text.starts_with("kind,count,fraction"));
    for key in ["bond_formation", "bond_change", "atom", "unsupported", "supported", "total"] {
        assert!(stats_text.contains(key), "stats must list {key}");
    }

    // stats subcommand writes the same format
    let stats2 = tmp.path().join("stats2.csv");
    let out = run(&[
        "stats",
        "--in",
        data_path("toy_64.txt").to_str().unwrap(),
        "--out",
        stats2.to_str().unwrap(),
    ]);
    assert!(out.status.success());
    assert!(fs::read_to_string(&stats2).unwrap().starts_with("kind,count,fraction"));
}

/// End to end over the toy data: vocab, both trainings, prediction on the
/// documented example product, evaluation file contract.
#[test]
fn full_pipeline_contract() {
    let tmp = tempfile::tempdir().unwrap();
    let train = data_path("toy_64.txt");
    let vocab = tmp.path().join("vocab.tsv");
    let ck_center = tmp.path().join("center");
    let ck_synthon = tmp.path().join("synthon");

    let ok = |args: &[&str]| {
        let out = run(args);
        assert!(
            out.status.success(),
            "command {args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
        out
    };

    ok(&[
        "vocab",
        "--in",
        train.to_str().unwrap(),
        "--out",
        vocab.to_str().unwrap(),
    ]);
    ok(&[
        "train-center",
        "--in",
        train.to_str().unwrap(),
        "--out",
        ck_center.to_str().unwrap(),
        "--seed",
        "7",
        "--hidden",
        "24",
        "--t-atom",
        "2",
        "--epochs",
        "40",
        "--batch",
        "16",
        "--lr",
        "0.005",
        "--target-acc",
        "0.9",
        "--threads",
        "1",
    ]);
    ok(&[
        "train-synthon",
        "--in",
        train.to_str().unwrap(),
        "--out",
        ck_synthon.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--seed",
        "7",
        "--hidden",
        "24",
        "--t-atom",
        "2",
        "--epochs",
        "40",
        "--batch",
        "16",
        "--lr",
        "0.005",
        "--target-acc",
        "0.9",
        "--threads",
        "1",
    ]);

    // the documented single-product example
    let preds = tmp.path().join("preds.tsv");
    ok(&[
        "predict",
        "--center",
        ck_center.to_str().unwrap(),
        "--synthon",
        ck_synthon.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--product",
        "CCOC(=O)c1csc(-c2ccc(F)cc2)c1",
        "--k",
        "5",
        "--n",
        "10",
        "--out",
        preds.to_str().unwrap(),
    ]);
    let text = fs::read_to_string(&preds).unwrap();
    let mut lines = text.lines();
    assert_eq!(lines.next(), Some("product\trank\tscore\treactants\tcenter"));
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 10, "expected 10 ranked rows, got {}", rows.len());
    let mut prev_score = f64::INFINITY;
    for (i, row) in rows.iter().enumerate() {
        let cols: Vec<&str> = row.split('\t').collect();
        assert_eq!(cols.len(), 5, "row arity: {row}");
        assert_eq!(cols[1].parse::<usize>().unwrap(), i + 1, "rank column");
        let score: f64 = cols[2].parse().unwrap();
        assert!(score <= prev_score, "scores must be non-increasing");
        prev_score = score;
        // every reactant set is parseable, valid chemistry
        retrograph_core::chem::parse_smiles(cols[3])
            .unwrap_or_else(|e| panic!("invalid reactants {}: {e}", cols[3]));
    }

    // batch prediction over the training products, then evaluation
    let batch_preds = tmp.path().join("train_preds.tsv");
    ok(&[
        "predict",
        "--center",
        ck_center.to_str().unwrap(),
        "--synthon",
        ck_synthon.to_str().unwrap(),
        "--vocab",
        vocab.to_str().unwrap(),
        "--in",
        train.to_str().unwrap(),
        "--k",
        "3",
        "--n",
        "5",
        "--out",
        batch_preds.to_str().unwrap(),
        "--threads",
        "2",
    ]);
    let eval_csv = tmp.path().join("eval.csv");
    let diversity_csv = tmp.path().join("diversity.csv");
    ok(&[
        "evaluate",
        "--pred",
        batch_preds.to_str().unwrap(),
        "--gold",
        train.to_str().unwrap(),
        "--out",
        eval_csv.to_str().unwrap(),
        "--diversity",
        diversity_csv.to_str().unwrap(),
        "--clusters",
        "4",
    ]);
    let div = fs::read_to_string(&diversity_csv).unwrap();
    assert!(div.starts_with("cluster,size,mean_similarity,mean_centers"));
    assert!(div.lines().any(|l| l.starts_with("correlation")));
    let text = fs::read_to_string(&eval_csv).unwrap();
    let mut lines = text.lines();
    assert_eq!(
        lines.next(),
        Some("class,count,top1,top3,top5,top10"),
        "evaluate CSV header contract"
    );
    let overall = lines.next().expect("overall row");
    assert!(overall.starts_with("overall,64,"), "{overall}");
    let fields: Vec<f64> = overall
        .split(',')
        .skip(2)
        .map(|x| x.parse().unwrap())
        .collect();
    // top-k monotone in k
    for w in fields.windows(2) {
        assert!(w[0] <= w[1] + 1e-12);
    }
}

#[test]
fn config_file_precedence() {
    let tmp = tempfile::tempdir().unwrap();
    let train = tmp.path().join("train.txt");
    let lines = read_lines("toy_64.txt");
    fs::write(&train, lines[..4].join("\n") + "\n").unwrap();
    let cfg = tmp.path().join("run.cfg");
    fs::write(&cfg, "seed=3\nhidden=8\nepochs=1\nbatch=4\nt-atom=1\n").unwrap();
    // config file supplies everything
    let out = run(&[
        "train-center",
        "--in",
        train.to_str().unwrap(),
        "--out",
        tmp.path().join("ck1").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
    ]);
    assert!(
        out.status.success(),
        "stderr: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    // flag overrides the file
    let out = run(&[
        "train-center",
        "--in",
        train.to_str().unwrap(),
        "--out",
        tmp.path().join("ck2").to_str().unwrap(),
        "--config",
        cfg.to_str().unwrap(),
        "--hidden",
        "12",
    ]);
    assert!(out.status.success());
    let manifest = fs::read_to_string(Path::new(tmp.path()).join("ck2/manifest.json")).unwrap();
    assert!(manifest.contains("\"hidden_dim\": 12"), "flag must beat config file");
    let manifest1 = fs::read_to_string(Path::new(tmp.path()).join("ck1/manifest.json")).unwrap();
    assert!(manifest1.contains("\"hidden_dim\": 8"));
}

#[test]
fn predict_rejects_vocab_mismatch() {
    // checkpoint trained against one vocab must refuse a different-size one
    let tmp = tempfile::tempdir().unwrap();
    let lines = read_lines("toy_64.txt");
    let train = tmp.path().join("train.txt");
    fs::write(&train, lines[..6].join("\n") + "\n").unwrap();
    let vocab = tmp.path().join("vocab.tsv");
    let ck_c = tmp.path().join("c");
    let ck_s = tmp.path().join("s");
    for args in [
        vec![
            "vocab",
            "--in",
            train.to_str().unwrap(),
            "--out",
            vocab.to_str().unwrap(),
        ],
        vec![
            "train-center",
            "--in",
            train.to_str().unwrap(),
            "--out",
            ck_c.to_str().unwrap(),
            "--seed",
            "1",
            "--hidden",
            "8",
            "--t-atom",
            "1",
            "--epochs",
            "1",
            "--batch",
            "6",
        ],
        vec![
            "train-synthon",
            "--in",
            train.to_str().unwrap(),
            "--out",
            ck_s.to_str().unwrap(),
            "--vocab",
            vocab.to_str().unwrap(),
            "--seed",
            "1",
            "--hidden",
            "8",
            "--t-atom",
            "1",
            "--epochs",
            "1",
            "--batch",
            "6",
        ],
    ] {
        let out = run(&args);
        assert!(
            out.status.success(),
            "{args:?}: {}",
            String::from_utf8_lossy(&out.stderr)
        );
    }
    // truncated vocabulary: size mismatch must exit 2
    let small = tmp.path().join("small.tsv");
    let text = fs::read_to_string(&vocab).unwrap();
    let keep: Vec<&str> = text.lines().take(2).collect();
    fs::write(&small, keep.join("\n") + "\n").unwrap();
    let out = run(&[
        "predict",
        "--center",
        ck_c.to_str().unwrap(),
        "--synthon",
        ck_s.to_str().unwrap(),
        "--vocab",
        small.to_str().unwrap(),
        "--product",
        "CCO",
    ]);
    assert_eq!(out.status.code(), Some(2));
}
