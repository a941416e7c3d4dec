//! Checkpoint files.
//!
//! Little-endian layout:
//!
//! ```text
//! "PTYC" | u32 version = 1 | u64 len | JSON metadata (len bytes, UTF-8)
//! u32 count | count × tensor            model parameters
//! u32 count | count × tensor            optimizer moments
//! u32 CRC32 of every preceding byte
//!
//! tensor = u16 name_len | name | u8 dtype (0 = f32, 1 = f64) | u8 rank
//!        | rank × u64 extent | raw little-endian data
//! ```
//!
//! Optimizer moments are named `adamw.m.<param>` and `adamw.v.<param>`.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::backbone::Pointy;
use crate::error::{Error, Result};
use crate::numerics::{AdamW, RngState, Scalar, Tensor};

use super::{EpochMetrics, RunConfig};

const MAGIC: &[u8; 4] = b"PTYC";
pub const VERSION: u32 = 1;

/// JSON section of a checkpoint.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointMeta {
    pub run: RunConfig,
    /// Completed epochs.
    pub epoch: usize,
    pub optimizer_step: u64,
    /// Generator position for the next epoch.
    pub rng: RngState,
    pub history: Vec<EpochMetrics>,
    /// Test accuracy of the weights in this file, when evaluated.
    pub test_oa: Option<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint<T> {
    pub meta: CheckpointMeta,
    pub params: Vec<(String, Tensor<T>)>,
    pub optimizer: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Checkpoint<T> {
    pub fn capture(model: &Pointy<T>, opt: &AdamW<T>, meta: CheckpointMeta) -> Self {
        let params: Vec<_> = model.params().iter().map(|(_, n, t)| (n.to_string(), strip(t))).collect();
        let mut optimizer = Vec::with_capacity(2 * params.len());
        for (moments, tag) in [(opt.first_moments(), "m"), (opt.second_moments(), "v")] {
            for ((name, p), data) in params.iter().zip(moments) {
                let t = Tensor::new(p.shape().to_vec(), data.clone()).expect("moment matches parameter");
                optimizer.push((format!("adamw.{tag}.{name}"), t));
            }
        }
        Self { meta, params, optimizer }
    }

    /// Rebuilds the model, checking every tensor against the embedded config.
    pub fn model(&self) -> Result<Pointy<T>> {
        Pointy::from_tensors(self.meta.run.model.clone(), self.params.clone())
    }

    pub fn optimizer(&self) -> Result<AdamW<T>> {
        let n = self.params.len();
        if self.optimizer.len() != 2 * n {
            return Err(Error::Config(format!(
                "expected {} optimizer tensors, found {}",
                2 * n,
                self.optimizer.len()
            )));
        }
        let mut m = Vec::with_capacity(n);
        let mut v = Vec::with_capacity(n);
        for (i, (name, p)) in self.params.iter().enumerate() {
            for (tag, slot, out) in [("m", i, &mut m), ("v", n + i, &mut v)] {
                let (oname, t) = &self.optimizer[slot];
                if *oname != format!("adamw.{tag}.{name}") || t.shape() != p.shape() {
                    return Err(Error::Config(format!("optimizer tensor `{oname}` does not match `{name}`")));
                }
                out.push(t.data().to_vec());
            }
        }
        AdamW::from_state(self.meta.run.train.adamw(), self.meta.optimizer_step, m, v)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let json = serde_json::to_vec(&self.meta)?;
        out.extend_from_slice(&(json.len() as u64).to_le_bytes());
        out.extend_from_slice(&json);
        for group in [&self.params, &self.optimizer] {
            out.extend_from_slice(&(group.len() as u32).to_le_bytes());
            for (name, t) in group {
                write_tensor(&mut out, name, t)?;
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    /// Parses and validates a checkpoint: magic, version, framing, checksum,
    /// and every parameter shape against the embedded model config.
    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { bytes, pos: 0 };
        if r.take(4, "magic")? != MAGIC {
            return Err(Error::format(0, "bad magic, expected PTYC"));
        }
        let version = r.u32("version")?;
        if version != VERSION {
            return Err(Error::format(4, format!("unsupported version {version}")));
        }
        let json_len = r.u64("metadata length")? as usize;
        let json_at = r.pos as u64;
        let meta: CheckpointMeta = serde_json::from_slice(r.take(json_len, "metadata")?)
            .map_err(|e| Error::format(json_at, format!("invalid metadata: {e}")))?;
        let params = r.tensor_group::<T>()?;
        let optimizer = r.tensor_group::<T>()?;
        let body_end = r.pos;
        let stored = r.u32("checksum")?;
        if r.pos != bytes.len() {
            return Err(Error::format(r.pos as u64, "trailing bytes after checksum"));
        }
        let actual = crc32fast::hash(&bytes[..body_end]);
        if stored != actual {
            return Err(Error::format(
                body_end as u64,
                format!("checksum mismatch: stored {stored:#010x}, computed {actual:#010x}"),
            ));
        }
        let ckpt = Self { meta, params, optimizer };
        ckpt.model()?;
        Ok(ckpt)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let bytes = self.to_bytes()?;
        fs::write(path.as_ref(), bytes).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let bytes = fs::read(path.as_ref()).map_err(|e| Error::io(path.as_ref(), e))?;
        Self::from_bytes(&bytes)
    }
}

fn strip<T: Scalar>(t: &Tensor<T>) -> Tensor<T> {
    Tensor::new(t.shape().to_vec(), t.data().to_vec()).expect("valid tensor")
}

fn write_tensor<T: Scalar>(out: &mut Vec<u8>, name: &str, t: &Tensor<T>) -> Result<()> {
    let len = u16::try_from(name.len()).map_err(|_| Error::Config(format!("tensor name too long: {name}")))?;
    let rank = u8::try_from(t.shape().len()).map_err(|_| Error::Config(format!("rank too large: {name}")))?;
    out.extend_from_slice(&len.to_le_bytes());
    out.extend_from_slice(name.as_bytes());
    out.push(T::DTYPE);
    out.push(rank);
    for &e in t.shape() {
        out.extend_from_slice(&(e as u64).to_le_bytes());
    }
    for &v in t.data() {
        v.write_le(out);
    }
    Ok(())
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        match end {
            Some(end) => {
                let s = &self.bytes[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(Error::format(
                self.bytes.len() as u64,
                format!("truncated while reading {what} at byte {}", self.pos),
            )),
        }
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn u64(&mut self, what: &str) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8, what)?.try_into().unwrap()))
    }

    fn tensor_group<T: Scalar>(&mut self) -> Result<Vec<(String, Tensor<T>)>> {
        let count = self.u32("tensor count")? as usize;
        (0..count).map(|_| self.tensor()).collect()
    }

    fn tensor<T: Scalar>(&mut self) -> Result<(String, Tensor<T>)> {
        let start = self.pos as u64;
        let name_len = self.u16("tensor name length")? as usize;
        let name = std::str::from_utf8(self.take(name_len, "tensor name")?)
            .map_err(|_| Error::format(start + 2, "tensor name is not UTF-8"))?
            .to_string();
        let dtype_at = self.pos as u64;
        let dtype = self.u8("dtype")?;
        let width = match dtype {
            0 => 4,
            1 => 8,
            d => return Err(Error::format(dtype_at, format!("unknown dtype {d} for `{name}`"))),
        };
        let rank = self.u8("rank")? as usize;
        let shape = (0..rank)
            .map(|_| self.u64("extent").map(|e| e as usize))
            .collect::<Result<Vec<_>>>()?;
        let n = shape.iter().try_fold(1usize, |acc, &e| acc.checked_mul(e));
        let n = n.ok_or_else(|| Error::format(start, format!("extents of `{name}` overflow")))?;
        let data_at = self.pos as u64;
        let raw = self.take(n.saturating_mul(width), "tensor data")?;
        let data: Vec<T> = raw
            .chunks_exact(width)
            .map(|c| {
                if width == 4 {
                    T::lit(f32::read_le(c) as f64)
                } else {
                    T::lit(f64::read_le(c))
                }
            })
            .collect();
        let t = Tensor::new(shape, data).map_err(|e| Error::format(data_at, format!("tensor `{name}`: {e}")))?;
        Ok((name, t))
    }
}
