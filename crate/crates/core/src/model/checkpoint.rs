//! The INSE-CKPT-1 container.
//!
//! Layout: the line `INSE-CKPT-1\n`, a little-endian `u64` header length, a
//! JSON header (model spec, normalisation statistics, frontend settings,
//! training metadata and a tensor index), then every tensor as
//! little-endian `f32` in index order.

use std::io::{Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::network::Model;
use super::spec::ModelSpec;
use crate::error::{Error, Result};
use crate::frontend::GammatoneConfig;
use crate::nn::Parameterized;
use crate::training::NormStats;

pub const CHECKPOINT_FORMAT: &str = "INSE-CKPT-1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingMetadata {
    pub seed: u64,
    pub epochs: usize,
    pub fold: Option<usize>,
    pub learning_rate: f64,
    pub batch_size: usize,
    pub smooth_l1_beta: f64,
    pub steps: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct NamedTensor {
    pub name: String,
    pub shape: Vec<usize>,
    #[serde(skip)]
    pub data: Vec<f32>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub model_spec: ModelSpec,
    pub norm_stats: NormStats,
    pub gammatone: GammatoneConfig,
    pub metadata: TrainingMetadata,
    pub tensors: Vec<NamedTensor>,
}

impl Checkpoint {
    pub fn from_model(
        model: &Model<f32>,
        norm_stats: NormStats,
        gammatone: GammatoneConfig,
        metadata: TrainingMetadata,
    ) -> Self {
        let tensors = model
            .params()
            .into_iter()
            .map(|(name, p)| NamedTensor {
                name,
                shape: p.shape.clone(),
                data: p.value.clone(),
            })
            .collect();
        Self {
            format: CHECKPOINT_FORMAT.into(),
            model_spec: model.spec().clone(),
            norm_stats,
            gammatone,
            metadata,
            tensors,
        }
    }

    /// Rebuilds the model and loads every stored tensor into it.
    pub fn model(&self) -> Result<Model<f32>> {
        let mut model = Model::<f32>::new(&self.model_spec, self.metadata.seed)?;
        let mut params = model.params_mut();
        if params.len() != self.tensors.len() {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "{} tensors stored, model has {}",
                    self.tensors.len(),
                    params.len()
                ),
            ));
        }
        for ((name, param), stored) in params.iter_mut().zip(&self.tensors) {
            if *name != stored.name || param.shape != stored.shape {
                return Err(Error::format(
                    "checkpoint",
                    format!(
                        "tensor {} {:?} does not match model slot {name} {:?}",
                        stored.name, stored.shape, param.shape
                    ),
                ));
            }
            param.value.copy_from_slice(&stored.data);
        }
        Ok(model)
    }

    pub fn write_to(&self, mut w: impl Write) -> std::io::Result<()> {
        let header = serde_json::to_vec(self).map_err(std::io::Error::other)?;
        w.write_all(CHECKPOINT_FORMAT.as_bytes())?;
        w.write_all(b"\n")?;
        w.write_all(&(header.len() as u64).to_le_bytes())?;
        w.write_all(&header)?;
        for t in &self.tensors {
            for v in &t.data {
                w.write_all(&v.to_le_bytes())?;
            }
        }
        Ok(())
    }

    pub fn read_from(mut r: impl Read) -> Result<Self> {
        let bad = |reason: String| Error::format("checkpoint", reason);
        let mut magic = vec![0u8; CHECKPOINT_FORMAT.len() + 1];
        r.read_exact(&mut magic).map_err(|e| bad(e.to_string()))?;
        if &magic[..CHECKPOINT_FORMAT.len()] != CHECKPOINT_FORMAT.as_bytes()
            || magic[CHECKPOINT_FORMAT.len()] != b'\n'
        {
            return Err(bad("not an INSE-CKPT-1 file".into()));
        }
        let mut len = [0u8; 8];
        r.read_exact(&mut len).map_err(|e| bad(e.to_string()))?;
        let len = usize::try_from(u64::from_le_bytes(len)).map_err(|e| bad(e.to_string()))?;
        let mut header = vec![0u8; len];
        r.read_exact(&mut header).map_err(|e| bad(e.to_string()))?;
        let mut ckpt: Checkpoint =
            serde_json::from_slice(&header).map_err(|e| bad(e.to_string()))?;
        if ckpt.format != CHECKPOINT_FORMAT {
            return Err(bad(format!("unsupported format {}", ckpt.format)));
        }
        let mut word = [0u8; 4];
        for t in &mut ckpt.tensors {
            let n: usize = t.shape.iter().product();
            t.data = Vec::with_capacity(n);
            for _ in 0..n {
                r.read_exact(&mut word)
                    .map_err(|_| bad(format!("truncated tensor {}", t.name)))?;
                t.data.push(f32::from_le_bytes(word));
            }
        }
        if r.read(&mut word).map_err(|e| bad(e.to_string()))? != 0 {
            return Err(bad("trailing bytes after tensor data".into()));
        }
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        let mut w = std::io::BufWriter::new(file);
        self.write_to(&mut w)
            .and_then(|_| w.flush())
            .map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
        Self::read_from(std::io::BufReader::new(file))
    }
}
