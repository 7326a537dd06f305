//! Binary checkpoint, little-endian throughout:
//!
//! ```text
//! "ARTC" | u16 version | u32 len | config JSON (len bytes)
//! repeated until EOF:
//!   u16 name_len | name | u8 rank | rank × u32 extent | numel × f32
//! ```

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::{Real, Tensor};
use crate::vit::{Artran, ModelConfig, ParamStore};

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"ARTC";
pub const CHECKPOINT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrainingSummary {
    pub epoch: usize,
    pub steps: usize,
    pub seed: u64,
}

#[derive(Debug, Serialize, Deserialize)]
struct ConfigBlock {
    model: ModelConfig,
    summary: TrainingSummary,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub version: u16,
    pub config: ModelConfig,
    pub params: ParamStore<f32>,
    pub summary: TrainingSummary,
}

impl Checkpoint {
    pub fn from_model<T: Real>(model: &Artran<T>, summary: TrainingSummary) -> Self {
        Self {
            version: CHECKPOINT_VERSION,
            config: model.config().clone(),
            params: model.params().cast(),
            summary,
        }
    }

    pub fn into_model<T: Real>(self) -> Result<Artran<T>> {
        Artran::from_params(self.config, self.params.cast())
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(CHECKPOINT_MAGIC);
        out.extend_from_slice(&self.version.to_le_bytes());
        let config = serde_json::to_vec(&ConfigBlock {
            model: self.config.clone(),
            summary: self.summary,
        })?;
        out.extend_from_slice(&(config.len() as u32).to_le_bytes());
        out.extend_from_slice(&config);
        for (name, value) in self.params.iter() {
            let name_len = u16::try_from(name.len())
                .map_err(|_| Error::Checkpoint(format!("parameter name too long: {name}")))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.push(value.rank() as u8);
            for &d in value.shape() {
                out.extend_from_slice(&(d as u32).to_le_bytes());
            }
            for v in value.data() {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        Ok(out)
    }

    /// Strict parse: the parameter set must match the stored config exactly.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4)? != CHECKPOINT_MAGIC {
            return Err(Error::Checkpoint("bad magic, not an ARTC checkpoint".into()));
        }
        let version = r.u16()?;
        if version != CHECKPOINT_VERSION {
            return Err(Error::CheckpointVersion(version));
        }
        let len = r.u32()? as usize;
        let block: ConfigBlock = serde_json::from_slice(r.take(len)?)?;
        let specs = block.model.param_specs();

        let mut params = ParamStore::new();
        while !r.at_end() {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?)
                .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?
                .to_string();
            let rank = r.u8()? as usize;
            let shape = (0..rank)
                .map(|_| r.u32().map(|d| d as usize))
                .collect::<Result<Vec<_>>>()?;
            let Some((_, expected)) = specs.iter().find(|(n, _)| *n == name) else {
                return Err(Error::UnknownBlock(name));
            };
            if params.get(&name).is_some() {
                return Err(Error::DuplicateBlock(name));
            }
            if shape != *expected {
                return Err(Error::BlockShape {
                    name,
                    expected: expected.clone(),
                    found: shape,
                });
            }
            let numel: usize = shape.iter().product();
            let raw = r.take(numel * 4)?;
            let data = raw
                .chunks_exact(4)
                .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
                .collect();
            params.insert(name, Tensor::new(shape, data)?);
        }
        for (name, _) in &specs {
            if params.get(name).is_none() {
                return Err(Error::MissingBlock(name.clone()));
            }
        }
        Ok(Self {
            version,
            config: block.model,
            params,
            summary: block.summary,
        })
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).ok_or(Error::CheckpointTruncated)?;
        let s = self.bytes.get(self.pos..end).ok_or(Error::CheckpointTruncated)?;
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16> {
        let b = self.take(2)?;
        Ok(u16::from_le_bytes([b[0], b[1]]))
    }

    fn u32(&mut self) -> Result<u32> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes([b[0], b[1], b[2], b[3]]))
    }

    fn at_end(&self) -> bool {
        self.pos >= self.bytes.len()
    }
}

pub fn save_checkpoint<T: Real>(
    path: impl AsRef<Path>,
    model: &Artran<T>,
    summary: TrainingSummary,
) -> Result<()> {
    let bytes = Checkpoint::from_model(model, summary).to_bytes()?;
    fs::write(path, bytes)?;
    Ok(())
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<Checkpoint> {
    Checkpoint::from_bytes(&fs::read(path)?)
}
