//! Versioned JSON checkpoints.
//!
//! Weights go through `serde_json` with `float_roundtrip`, so a write then
//! read gives back the same bits. Encoder runtime state is not stored; it is
//! rebuilt by `reset` on load.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::trainer::VdibModel;

pub const CHECKPOINT_FORMAT: &str = "vdib-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// SHA-256 (hex) of the canonical JSON form of `config`. Object keys are
/// sorted, so the hash does not depend on field order in the source file.
pub fn config_hash<C: Serialize>(config: &C) -> Result<String> {
    let value = serde_json::to_value(config)?;
    let bytes = serde_json::to_vec(&value)?;
    let digest = Sha256::digest(&bytes);
    Ok(digest.iter().map(|b| format!("{b:02x}")).collect())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    /// Resolved configuration the model was trained with.
    pub config: serde_json::Value,
    /// Training examples consumed so far.
    pub iterations: u64,
    pub model: VdibModel,
}

impl Checkpoint {
    pub fn new<C: Serialize>(model: VdibModel, config: &C, iterations: u64) -> Result<Self> {
        let config = serde_json::to_value(config)?;
        Ok(Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            config_hash: config_hash(&config)?,
            config,
            iterations,
            model,
        })
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string(self)?)
    }

    /// Parses and validates a checkpoint document.
    pub fn from_json(text: &str) -> Result<Self> {
        let mut ck: Checkpoint = serde_json::from_str(text)?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!("not a checkpoint (format `{}`)", ck.format)));
        }
        if ck.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {} (expected {CHECKPOINT_VERSION})",
                ck.version
            )));
        }
        let hash = config_hash(&ck.config)?;
        if hash != ck.config_hash {
            return Err(Error::config("checkpoint config hash does not match its config"));
        }
        ck.model.encoder.validate()?;
        ck.model.decoder.validate()?;
        ck.model = VdibModel::new(ck.model.encoder, ck.model.decoder)?;
        ck.model.encoder.reset();
        Ok(ck)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = self.to_json()?;
        fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gradcheck::tiny_instance;
    use crate::mathcore::Rng;

    fn sample_checkpoint() -> Checkpoint {
        let mut rng = Rng::new(5, 0);
        let (model, _) = tiny_instance(&mut rng).unwrap();
        let config = serde_json::json!({"beta": 0.5, "eta": 0.01, "nested": {"b": 1, "a": 2}});
        Checkpoint::new(model, &config, 17).unwrap()
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let ck = sample_checkpoint();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("model.json");
        ck.save(&path).unwrap();
        let back = Checkpoint::load(&path).unwrap();
        assert_eq!(back, ck);
        let a = ck.model.decoder.flat_params();
        let b = back.model.decoder.flat_params();
        assert!(a.iter().zip(&b).all(|(x, y)| x.to_bits() == y.to_bits()));
        assert_eq!(back.iterations, 17);
    }

    #[test]
    fn hash_ignores_key_order() {
        let a: serde_json::Value = serde_json::from_str(r#"{"x":1,"y":[1,2]}"#).unwrap();
        let b: serde_json::Value = serde_json::from_str(r#"{"y":[1,2],"x":1}"#).unwrap();
        assert_eq!(config_hash(&a).unwrap(), config_hash(&b).unwrap());
        assert_eq!(config_hash(&a).unwrap().len(), 64);
    }

    #[test]
    fn tampered_documents_are_rejected() {
        let ck = sample_checkpoint();
        let mut wrong_version = ck.clone();
        wrong_version.version = 99;
        assert!(Checkpoint::from_json(&wrong_version.to_json().unwrap()).is_err());
        let mut wrong_hash = ck.clone();
        wrong_hash.config["beta"] = serde_json::json!(2.0);
        assert!(Checkpoint::from_json(&wrong_hash.to_json().unwrap()).is_err());
        let mut bad_shape = ck;
        bad_shape.model.decoder.layers[0].biases.pop();
        assert!(Checkpoint::from_json(&bad_shape.to_json().unwrap()).is_err());
        assert!(Checkpoint::from_json("{}").is_err());
    }
}
