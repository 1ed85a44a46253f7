//! Checkpoint format: a JSON manifest plus one little-endian f64 blob per
//! tensor, referenced by name. Reload is bit-exact.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use anyhow::{bail, Context, Result};
use serde::{Deserialize, Serialize};

use retrograph_core::chem::FeatureConfig;
use retrograph_core::encoder::EncoderConfig;
use retrograph_core::tensor::{ParamStore, Tensor};

#[derive(Clone, Debug, Serialize, Deserialize, PartialEq)]
pub struct Hyperparams {
    pub module: String,
    pub hidden_dim: usize,
    pub t_atom: usize,
    pub t_frag: usize,
    pub use_brics: bool,
    pub type_known: bool,
    /// Substructure vocabulary size (synthon module only).
    #[serde(default)]
    pub vocab_size: usize,
}

impl Hyperparams {
    pub fn encoder_config(&self) -> EncoderConfig {
        EncoderConfig {
            hidden_dim: self.hidden_dim,
            t_atom: self.t_atom,
            t_frag: self.t_frag,
            use_brics: self.use_brics,
            type_known: self.type_known,
            features: FeatureConfig::default(),
        }
    }
}

#[derive(Serialize, Deserialize)]
struct Manifest {
    version: u32,
    dtype: String,
    seed: u64,
    names: Vec<String>,
    shapes: BTreeMap<String, [usize; 2]>,
    blobs: BTreeMap<String, String>,
    hyperparams: Hyperparams,
}

fn blob_name(param: &str) -> String {
    let safe: String = param
        .chars()
        .map(|c| if c.is_ascii_alphanumeric() { c } else { '_' })
        .collect();
    format!("blobs/{safe}.bin")
}

/// Writes the store and its hyperparameters under `dir`.
pub fn save(dir: &Path, store: &ParamStore, hp: &Hyperparams) -> Result<()> {
    fs::create_dir_all(dir.join("blobs"))?;
    let mut names = Vec::new();
    let mut shapes = BTreeMap::new();
    let mut blobs = BTreeMap::new();
    for (name, p) in store.iter() {
        names.push(name.clone());
        shapes.insert(name.clone(), [p.value.rows, p.value.cols]);
        let rel = blob_name(name);
        let mut bytes = Vec::with_capacity(p.value.data.len() * 8);
        for x in &p.value.data {
            bytes.extend_from_slice(&x.to_le_bytes());
        }
        fs::write(dir.join(&rel), bytes).with_context(|| format!("writing {rel}"))?;
        blobs.insert(name.clone(), rel);
    }
    let manifest = Manifest {
        version: 1,
        dtype: "f64".into(),
        seed: store.seed,
        names,
        shapes,
        blobs,
        hyperparams: hp.clone(),
    };
    fs::write(
        dir.join("manifest.json"),
        serde_json::to_string_pretty(&manifest)?,
    )?;
    Ok(())
}

/// Loads a checkpoint saved by `save`.
pub fn load(dir: &Path) -> Result<(ParamStore, Hyperparams)> {
    let manifest: Manifest = serde_json::from_str(
        &fs::read_to_string(dir.join("manifest.json"))
            .with_context(|| format!("reading manifest in {}", dir.display()))?,
    )?;
    if manifest.version != 1 {
        bail!("unsupported checkpoint version {}", manifest.version);
    }
    if manifest.dtype != "f64" {
        bail!("unsupported dtype {}", manifest.dtype);
    }
    let mut store = ParamStore::new(manifest.seed);
    for name in &manifest.names {
        let shape = manifest
            .shapes
            .get(name)
            .with_context(|| format!("missing shape for {name}"))?;
        let rel = manifest
            .blobs
            .get(name)
            .with_context(|| format!("missing blob for {name}"))?;
        let bytes = fs::read(dir.join(rel)).with_context(|| format!("reading {rel}"))?;
        if bytes.len() != shape[0] * shape[1] * 8 {
            bail!("blob size mismatch for {name}");
        }
        let data: Vec<f64> = bytes
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        store.insert_tensor(name, Tensor::from_vec(shape[0], shape[1], data));
    }
    Ok((store, manifest.hyperparams))
}

#[cfg(test)]
mod tests {
    use super::*;
    use retrograph_core::rng::Rng;

    #[test]
    fn save_load_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let mut store = ParamStore::new(42);
        let mut rng = Rng::new(42);
        store.insert_init("center/enc/msg/w_out", 8, 8, &mut rng);
        store.insert_init("center/bf/w_score", 8, 1, &mut rng);
        let hp = Hyperparams {
            module: "center".into(),
            hidden_dim: 8,
            t_atom: 3,
            t_frag: 1,
            use_brics: false,
            type_known: false,
            vocab_size: 0,
        };
        save(dir.path(), &store, &hp).unwrap();
        let (loaded, hp2) = load(dir.path()).unwrap();
        assert_eq!(hp, hp2);
        assert_eq!(loaded.len(), store.len());
        for (name, p) in store.iter() {
            let q = loaded.get(name).unwrap();
            assert_eq!(p.value.data, q.value.data);
            for (a, b) in p.value.data.iter().zip(q.value.data.iter()) {
                assert_eq!(a.to_bits(), b.to_bits());
            }
        }
    }
}
