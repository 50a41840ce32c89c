//! Flat binary model checkpoints.
//!
//! Layout (little-endian): magic `SDEHGNN1`, `u32` config length, the model
//! config as JSON, `u32` block count, then per block `u32` name length, the
//! UTF-8 name, `u32` rank, `rank × u64` dims and the `f64` values.

use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelConfig, SpatioTemporalModel};
use crate::nn::Params;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 8] = b"SDEHGNN1";

pub fn encode(config: &ModelConfig, params: &Params) -> Vec<u8> {
    let mut out = Vec::with_capacity(64 + 8 * params.num_scalars());
    out.extend_from_slice(MAGIC);
    let json = serde_json::to_vec(config).expect("serializable config");
    out.extend_from_slice(&(json.len() as u32).to_le_bytes());
    out.extend_from_slice(&json);
    out.extend_from_slice(&(params.len() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.rank() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for &v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Checkpoint(format!("truncated at byte {}", self.pos)));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")) as usize)
    }

    fn u64(&mut self) -> Result<usize> {
        let v = u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes"));
        usize::try_from(v).map_err(|_| Error::Checkpoint(format!("dimension {v} too large")))
    }
}

pub fn decode(bytes: &[u8]) -> Result<(ModelConfig, Vec<(String, Tensor)>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(8)? != MAGIC {
        return Err(Error::Checkpoint("bad magic; not a model checkpoint".into()));
    }
    let n = r.u32()?;
    let config: ModelConfig =
        serde_json::from_slice(r.take(n)?).map_err(|e| Error::Checkpoint(format!("config header: {e}")))?;
    let blocks = r.u32()?;
    let mut out = Vec::with_capacity(blocks);
    for _ in 0..blocks {
        let n = r.u32()?;
        let name = String::from_utf8(r.take(n)?.to_vec()).map_err(|_| Error::Checkpoint("non-UTF-8 block name".into()))?;
        let rank = r.u32()?;
        let shape = (0..rank).map(|_| r.u64()).collect::<Result<Vec<_>>>()?;
        let numel = shape.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        let numel = numel
            .filter(|&m| m <= (bytes.len() - r.pos) / 8)
            .ok_or_else(|| Error::Checkpoint(format!("block {name} larger than the file")))?;
        let data = r
            .take(numel * 8)?
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
            .collect();
        out.push((name, Tensor::new(shape, data)?));
    }
    if r.pos != bytes.len() {
        return Err(Error::Checkpoint(format!("{} trailing bytes", bytes.len() - r.pos)));
    }
    Ok((config, out))
}

/// Rebuilds the model described by the header and fills its parameters.
pub fn restore(bytes: &[u8]) -> Result<(SpatioTemporalModel, Params)> {
    let (config, blocks) = decode(bytes)?;
    let mut params = Params::new();
    let model = SpatioTemporalModel::new(config, &mut params)?;
    if blocks.len() != params.len() {
        return Err(Error::Mismatch(format!(
            "checkpoint has {} parameter blocks, model expects {}",
            blocks.len(),
            params.len()
        )));
    }
    let mut stored = Params::new();
    for (name, t) in blocks {
        if stored.id(&name).is_some() {
            return Err(Error::Checkpoint(format!("duplicate block {name}")));
        }
        stored.add(name, t);
    }
    params.load_from(&stored)?;
    Ok((model, params))
}

pub fn save(path: &Path, config: &ModelConfig, params: &Params) -> Result<()> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    std::fs::write(path, encode(config, params)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path) -> Result<(SpatioTemporalModel, Params)> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    restore(&bytes)
}
