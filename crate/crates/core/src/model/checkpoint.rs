//! Parameter checkpoints in the safetensors container.
//!
//! Weights are stored as little-endian `f32`; the model configuration, the
//! training step and a format tag travel in the header metadata, so a
//! checkpoint is self-describing.

use std::borrow::Cow;
use std::collections::HashMap;
use std::path::Path;

use safetensors::{Dtype, SafeTensors, View};

use super::config::ModelConfig;
use super::params::{parameter_shapes, NetworkParameters};
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Value of the `format` metadata key.
pub const CHECKPOINT_FORMAT: &str = "zxyseg-checkpoint-v1";

/// A trained (or freshly initialised) network.
#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub config: ModelConfig,
    /// Optimiser steps taken so far.
    pub step: u64,
    pub params: NetworkParameters<f32>,
}

struct F32View<'a> {
    shape: &'a [usize],
    bytes: Vec<u8>,
}

impl View for F32View<'_> {
    fn dtype(&self) -> Dtype {
        Dtype::F32
    }
    fn shape(&self) -> &[usize] {
        self.shape
    }
    fn data(&self) -> Cow<'_, [u8]> {
        Cow::Borrowed(&self.bytes)
    }
    fn data_len(&self) -> usize {
        self.bytes.len()
    }
}

fn ckpt_err(e: impl std::fmt::Display) -> Error {
    Error::Checkpoint(e.to_string())
}

impl Checkpoint {
    pub fn new(config: ModelConfig, step: u64, params: NetworkParameters<f32>) -> Result<Self> {
        params.check_schema(&config)?;
        Ok(Checkpoint { config, step, params })
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let views = self.params.iter().map(|(name, t)| {
            let bytes = t.data().iter().flat_map(|v| v.to_le_bytes()).collect();
            (name.to_string(), F32View { shape: t.shape(), bytes })
        });
        let mut meta = HashMap::new();
        meta.insert("format".to_string(), CHECKPOINT_FORMAT.to_string());
        meta.insert("model_config".to_string(), serde_json::to_string(&self.config)?);
        meta.insert("step".to_string(), self.step.to_string());
        safetensors::serialize(views, Some(meta)).map_err(ckpt_err)
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let (_, header) = SafeTensors::read_metadata(buf).map_err(ckpt_err)?;
        let meta = header
            .metadata()
            .as_ref()
            .ok_or_else(|| Error::Checkpoint("no metadata".into()))?;
        let field = |k: &str| {
            meta.get(k)
                .ok_or_else(|| Error::Checkpoint(format!("metadata lacks {k:?}")))
        };
        if field("format")? != CHECKPOINT_FORMAT {
            return Err(Error::Checkpoint(format!("unknown format {:?}", field("format")?)));
        }
        let config: ModelConfig = serde_json::from_str(field("model_config")?)?;
        config.validate()?;
        let step = field("step")?
            .parse()
            .map_err(|e| Error::Checkpoint(format!("bad step: {e}")))?;

        let st = SafeTensors::deserialize(buf).map_err(ckpt_err)?;
        let shapes = parameter_shapes(&config);
        if st.len() != shapes.len() {
            return Err(Error::Checkpoint(format!(
                "{} tensors stored, config expects {}",
                st.len(),
                shapes.len()
            )));
        }
        let mut params = NetworkParameters::new();
        for (name, shape) in shapes {
            let view = st.tensor(&name).map_err(|e| Error::Checkpoint(format!("{name}: {e}")))?;
            if view.dtype() != Dtype::F32 || view.shape() != shape.as_slice() {
                return Err(Error::Checkpoint(format!(
                    "{name}: stored {:?} {:?}, expected F32 {shape:?}",
                    view.dtype(),
                    view.shape()
                )));
            }
            let data = view
                .data()
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.insert(name, Tensor::from_vec(&shape, data)?);
        }
        Ok(Checkpoint { config, step, params })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
            std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let buf = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&buf)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::init_parameters;

    #[test]
    fn round_trip_is_bit_exact() {
        let cfg = ModelConfig {
            base_channels: 2,
            n_levels: 3,
            heads: 2,
            ..Default::default()
        };
        let ck = Checkpoint::new(cfg.clone(), 17, init_parameters(&cfg, 3).unwrap()).unwrap();
        let back = Checkpoint::from_bytes(&ck.to_bytes().unwrap()).unwrap();
        assert_eq!(back, ck);
    }

    #[test]
    fn rejects_garbage() {
        assert!(matches!(Checkpoint::from_bytes(b"not a checkpoint"), Err(Error::Checkpoint(_))));
    }
}
