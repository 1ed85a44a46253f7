//! Regenerates the bundled corpora under data/. Run manually:
//! `cargo test -p retrograph --test datagen -- --ignored`

use std::fs;
use std::path::PathBuf;

use retrograph_core::gen::{curated_reactions, gen_reaction_corpus, molecule_corpus};

fn data_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("data")
}

#[test]
#[ignore = "regenerates committed data files"]
fn regenerate_corpora() {
    let dir = data_dir();
    fs::create_dir_all(&dir).unwrap();

    let molecules = molecule_corpus(500, 0x5eed_0001);
    fs::write(dir.join("molecules_500.smi"), molecules.join("\n") + "\n").unwrap();

    let reactions = gen_reaction_corpus(1000, 0x5eed_0002);
    fs::write(dir.join("reactions_1000.txt"), reactions.join("\n") + "\n").unwrap();

    // toy training set: every curated reaction plus generated fill
    let mut toy: Vec<String> = curated_reactions().iter().map(|s| s.to_string()).collect();
    let fill = gen_reaction_corpus(64 - toy.len(), 0x5eed_0003);
    toy.extend(fill);
    assert_eq!(toy.len(), 64);
    fs::write(dir.join("toy_64.txt"), toy.join("\n") + "\n").unwrap();
}
