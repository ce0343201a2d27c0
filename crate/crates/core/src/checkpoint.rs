//! JSON checkpoint: every parameter as `{shape, data}` keyed by name, plus
//! the hash of the configuration that produced it.
//!
//! ```json
//! {"format": "etgpssm-checkpoint", "version": 1, "config_hash": "…",
//!  "variant": "etgpssm-dnn",
//!  "params": {"noise.log_q": {"shape": [1, 1], "data": [-2.3]}, …}}
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::model::SsmModel;

pub const FORMAT: &str = "etgpssm-checkpoint";
pub const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StoredTensor {
    pub shape: [usize; 2],
    pub data: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config_hash: String,
    pub variant: String,
    pub params: BTreeMap<String, StoredTensor>,
}

impl Checkpoint {
    pub fn of(model: &SsmModel, config_hash: &str) -> Self {
        Checkpoint {
            format: FORMAT.into(),
            version: VERSION,
            config_hash: config_hash.into(),
            variant: model.config.variant.name().into(),
            params: model
                .params
                .iter()
                .map(|(k, t)| {
                    (
                        k.clone(),
                        StoredTensor {
                            shape: t.shape(),
                            data: t.data().to_vec(),
                        },
                    )
                })
                .collect(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let c: Checkpoint = serde_json::from_str(text)?;
        if c.format != FORMAT || c.version != VERSION {
            return Err(Error::Config(format!("unsupported checkpoint {} v{}", c.format, c.version)));
        }
        Ok(c)
    }

    pub fn load(path: &Path) -> Result<Self> {
        if !path.exists() {
            return Err(Error::MissingPath(path.to_path_buf()));
        }
        Self::from_json(&std::fs::read_to_string(path)?)
    }

    /// Copies every stored parameter into `model`; names and shapes must
    /// match exactly.
    pub fn restore(&self, model: &mut SsmModel) -> Result<()> {
        if self.variant != model.config.variant.name() {
            return Err(Error::Config(format!(
                "checkpoint holds {}, model is {}",
                self.variant, model.config.variant
            )));
        }
        if self.params.len() != model.params.len() || self.params.keys().any(|k| !model.params.contains_key(k)) {
            return Err(Error::Config("checkpoint parameter names do not match the model".into()));
        }
        for (k, s) in &self.params {
            model.set_param(k, Tensor::from_vec(s.shape[0], s.shape[1], s.data.clone())?)?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::{ModelConfig, Variant};
    use crate::rng::{stream, Stream};

    #[test]
    fn round_trip() {
        let mut cfg = ModelConfig::new(Variant::EtgpssmBnn, 2, 2);
        cfg.hidden = vec![3];
        cfg.inducing = 2;
        let a = SsmModel::new(cfg.clone(), &mut stream(1, Stream::Init)).unwrap();
        let mut b = SsmModel::new(cfg, &mut stream(2, Stream::Init)).unwrap();
        assert_ne!(a, b);
        let text = Checkpoint::of(&a, "abc").to_json().unwrap();
        let c = Checkpoint::from_json(&text).unwrap();
        assert_eq!(c.config_hash, "abc");
        c.restore(&mut b).unwrap();
        assert_eq!(a, b);
    }
}
