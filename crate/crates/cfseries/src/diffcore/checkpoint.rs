//! Checkpoint persistence: a JSON map of parameter paths to shapes and
//! values plus the optimizer state. serde_json writes f64 values with
//! shortest round-trippable decimals, so the round trip is bit-exact.

use super::optim::ParamStore;
use crate::error::Result;
use serde::{Deserialize, Serialize};
use std::path::Path;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Checkpoint {
    /// Model kind tag, e.g. "cepae".
    pub model_kind: String,
    /// Architecture description, opaque to this layer.
    pub arch_json: serde_json::Value,
    pub store: ParamStore,
}

impl Checkpoint {
    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(dir) = path.parent() {
            std::fs::create_dir_all(dir)?;
        }
        let file = std::fs::File::create(path)?;
        serde_json::to_writer(std::io::BufWriter::new(file), self)?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Ok(serde_json::from_reader(std::io::BufReader::new(file))?)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::diffcore::optim::Param;
    use crate::diffcore::tensor::Tensor;

    #[test]
    fn round_trip_is_bit_exact() {
        let mut store = ParamStore::new();
        store.init_glorot("w", &[3, 2], 2, 3, 42);
        store.params.insert(
            "odd".into(),
            Param {
                value: Tensor::vector(vec![0.1 + 0.2, 1e-300, -std::f64::consts::PI]),
                m: Tensor::vector(vec![0.0; 3]),
                v: Tensor::vector(vec![0.0; 3]),
            },
        );
        store.step = 17;
        let ckpt = Checkpoint {
            model_kind: "test".into(),
            arch_json: serde_json::json!({"latent": 8}),
            store,
        };
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ckpt.json");
        ckpt.save(&path).unwrap();
        let loaded = Checkpoint::load(&path).unwrap();
        assert_eq!(loaded.store.step, 17);
        for (k, p) in &ckpt.store.params {
            let q = &loaded.store.params[k];
            assert_eq!(p.value.data, q.value.data);
            assert_eq!(p.value.shape, q.value.shape);
        }
    }
}
