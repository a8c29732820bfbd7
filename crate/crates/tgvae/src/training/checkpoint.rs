//! Checkpoint directory layout:
//!
//! ```text
//! <dir>/manifest.json       config echo, dims, step, shapes, metrics digest
//! <dir>/params/<name>.bin   one raw little-endian f32 file per array
//! <dir>/lm_vocab.txt        one token per line
//! <dir>/tm_vocab.txt
//! <dir>/metrics.jsonl       one object per epoch
//! ```
//!
//! Parameters are stored as 32-bit floats; loading widens back to 64-bit.
//! Writing is byte-deterministic for a fixed store and manifest.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{ModelDims, Result, TrainConfig, TrainError};
use crate::corpus::Vocab;
use crate::diffcore::{ParamStore, Tensor};

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Manifest {
    pub config: TrainConfig,
    pub dims: ModelDims,
    pub step: u64,
    pub best_epoch: usize,
    pub param_shapes: BTreeMap<String, Vec<usize>>,
    /// SHA-256 of the metrics log content.
    pub metrics_digest: String,
}

/// A loaded checkpoint: parameters plus everything needed to run them.
pub struct Checkpoint {
    pub store: ParamStore,
    pub manifest: Manifest,
    pub lm: Vocab,
    pub tm: Vocab,
}

fn digest_of(text: &str) -> String {
    let mut hasher = Sha256::new();
    hasher.update(text.as_bytes());
    let out = hasher.finalize();
    out.iter().map(|b| format!("{b:02x}")).collect()
}

pub fn save_checkpoint(
    dir: &Path,
    store: &ParamStore,
    config: &TrainConfig,
    dims: &ModelDims,
    step: u64,
    best_epoch: usize,
    lm: &Vocab,
    tm: &Vocab,
    metrics_jsonl: &str,
) -> Result<()> {
    fs::create_dir_all(dir.join("params"))?;
    let mut param_shapes = BTreeMap::new();
    for (name, tensor) in store.iter() {
        param_shapes.insert(name.to_string(), tensor.shape().to_vec());
        let mut bytes = Vec::with_capacity(tensor.numel() * 4);
        for &x in tensor.data() {
            bytes.extend_from_slice(&(x as f32).to_le_bytes());
        }
        fs::write(dir.join("params").join(format!("{name}.bin")), bytes)?;
    }
    let manifest = Manifest {
        config: config.clone(),
        dims: *dims,
        step,
        best_epoch,
        param_shapes,
        metrics_digest: digest_of(metrics_jsonl),
    };
    let json = serde_json::to_string_pretty(&manifest)?;
    fs::write(dir.join("manifest.json"), json)?;
    lm.write_to(&dir.join("lm_vocab.txt")).map_err(|e| TrainError::Config(e.to_string()))?;
    tm.write_to(&dir.join("tm_vocab.txt")).map_err(|e| TrainError::Config(e.to_string()))?;
    fs::write(dir.join("metrics.jsonl"), metrics_jsonl)?;
    Ok(())
}

pub fn load_checkpoint(dir: &Path) -> Result<Checkpoint> {
    let manifest: Manifest =
        serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut store = ParamStore::new();
    for (name, shape) in &manifest.param_shapes {
        let bytes = fs::read(dir.join("params").join(format!("{name}.bin")))?;
        let numel: usize = shape.iter().product();
        if bytes.len() != numel * 4 {
            return Err(TrainError::Config(format!(
                "parameter '{name}': expected {} bytes, found {}",
                numel * 4,
                bytes.len()
            )));
        }
        let data: Vec<f64> = bytes
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        store.insert(
            name.clone(),
            Tensor::new(shape.clone(), data).map_err(TrainError::Diff)?,
        );
    }
    let lm = Vocab::read_from(&dir.join("lm_vocab.txt"), true)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    let tm = Vocab::read_from(&dir.join("tm_vocab.txt"), false)
        .map_err(|e| TrainError::Config(e.to_string()))?;
    Ok(Checkpoint { store, manifest, lm, tm })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::training::{init_params, Mode, PriorMode};

    fn dims() -> ModelDims {
        ModelDims {
            lm_vocab: 8,
            tm_vocab: 5,
            num_topics: 2,
            flow_depth: 1,
            latent: 3,
            hidden: 4,
            embed: 3,
            ntm_hidden: 4,
            prior_hidden: 4,
            mode: Mode::Generation,
            prior_mode: PriorMode::TopicGmm,
        }
    }

    fn vocabs() -> (Vocab, Vocab) {
        let dir = tempfile::tempdir().unwrap();
        let lm_path = dir.path().join("lm.txt");
        let tm_path = dir.path().join("tm.txt");
        std::fs::write(&lm_path, "<pad>\n<unk>\n<bos>\n<eos>\na\nb\nc\nd\n").unwrap();
        std::fs::write(&tm_path, "a\nb\nc\nd\ne\n").unwrap();
        (Vocab::read_from(&lm_path, true).unwrap(), Vocab::read_from(&tm_path, false).unwrap())
    }

    #[test]
    fn round_trip_preserves_f32_values() {
        let d = dims();
        let store = init_params(&d, 3);
        let (lm, tm) = vocabs();
        let config = TrainConfig::with_corpus("unused.jsonl");
        let dir = tempfile::tempdir().unwrap();
        save_checkpoint(dir.path(), &store, &config, &d, 42, 1, &lm, &tm, "{}\n").unwrap();
        let loaded = load_checkpoint(dir.path()).unwrap();
        assert_eq!(loaded.manifest.step, 42);
        for (name, tensor) in store.iter() {
            let got = loaded.store.get(name).unwrap();
            assert_eq!(got.shape(), tensor.shape());
            for (a, b) in got.data().iter().zip(tensor.data()) {
                assert_eq!(*a, *b as f32 as f64, "{name} altered beyond f32 rounding");
            }
        }
    }

    #[test]
    fn writes_are_byte_deterministic() {
        let d = dims();
        let store = init_params(&d, 9);
        let (lm, tm) = vocabs();
        let config = TrainConfig::with_corpus("unused.jsonl");
        let dir_a = tempfile::tempdir().unwrap();
        let dir_b = tempfile::tempdir().unwrap();
        save_checkpoint(dir_a.path(), &store, &config, &d, 7, 0, &lm, &tm, "x\n").unwrap();
        save_checkpoint(dir_b.path(), &store, &config, &d, 7, 0, &lm, &tm, "x\n").unwrap();
        for entry in std::fs::read_dir(dir_a.path().join("params")).unwrap() {
            let entry = entry.unwrap();
            let a = std::fs::read(entry.path()).unwrap();
            let b = std::fs::read(dir_b.path().join("params").join(entry.file_name())).unwrap();
            assert_eq!(a, b);
        }
        let ma = std::fs::read(dir_a.path().join("manifest.json")).unwrap();
        let mb = std::fs::read(dir_b.path().join("manifest.json")).unwrap();
        assert_eq!(ma, mb);
    }
}
