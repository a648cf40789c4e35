//! Binary checkpoint.
//!
//! ```text
//! "WBAN" | u32 version
//! u32 patch | u32 dim | u32 heads | u32 blocks | u32 reduction
//! f64 lr | u32 epochs | u32 batch | u64 seed | u32 n_per_class
//! u32 count, then per tensor:
//!   u32 name length | name bytes | u32 rank | u32 extents… | f64 values…
//! ```
//!
//! All integers and floats are little-endian.

use std::path::Path;

use super::{ModelConfig, WbaNetParams};
use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const MAGIC: &[u8; 4] = b"WBAN";
pub const CHECKPOINT_VERSION: u32 = 1;

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::config(format!("{v} does not fit the checkpoint format")))?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode_checkpoint<T: Scalar>(cfg: &ModelConfig, params: &WbaNetParams<Tensor<T>>) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    for v in [cfg.patch_size, cfg.embed_dim, cfg.n_heads, cfg.n_blocks, cfg.reduction] {
        put_u32(&mut out, v)?;
    }
    out.extend_from_slice(&cfg.lr.to_le_bytes());
    put_u32(&mut out, cfg.epochs)?;
    put_u32(&mut out, cfg.batch_size)?;
    out.extend_from_slice(&cfg.seed.to_le_bytes());
    put_u32(&mut out, cfg.n_per_class)?;
    let named = params.named();
    put_u32(&mut out, named.len())?;
    for (name, t) in named {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.rank())?;
        for &e in t.shape() {
            put_u32(&mut out, e)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format { offset: self.pos, message: format!("truncated: need {n} more bytes") });
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()) as usize)
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    fn fail(&self, at: usize, message: String) -> Error {
        Error::Format { offset: at, message }
    }
}

pub fn decode_checkpoint<T: Scalar>(bytes: &[u8]) -> Result<(ModelConfig, WbaNetParams<Tensor<T>>)> {
    let mut r = Reader { bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(r.fail(0, "bad magic".into()));
    }
    let version = r.u32()?;
    if version != CHECKPOINT_VERSION as usize {
        return Err(r.fail(4, format!("unsupported version {version}")));
    }
    let cfg = ModelConfig {
        patch_size: r.u32()?,
        embed_dim: r.u32()?,
        n_heads: r.u32()?,
        n_blocks: r.u32()?,
        reduction: r.u32()?,
        lr: r.f64()?,
        epochs: r.u32()?,
        batch_size: r.u32()?,
        seed: r.u64()?,
        n_per_class: r.u32()?,
    };
    let cfg_end = r.pos;
    cfg.validate().map_err(|e| r.fail(cfg_end, e.to_string()))?;
    let mut params = WbaNetParams::<Tensor<T>>::init(&cfg)?;
    let expected: Vec<(String, Vec<usize>)> =
        params.named().into_iter().map(|(n, t)| (n, t.shape().to_vec())).collect();
    let count_at = r.pos;
    let count = r.u32()?;
    if count != expected.len() {
        return Err(r.fail(count_at, format!("{count} tensors, expected {}", expected.len())));
    }
    for ((name, shape), slot) in expected.iter().zip(params.tensors_mut()) {
        let at = r.pos;
        let len = r.u32()?;
        let got = r.take(len)?;
        if got != name.as_bytes() {
            return Err(r.fail(at, format!("expected tensor {name}, found {}", String::from_utf8_lossy(got))));
        }
        let at = r.pos;
        let rank = r.u32()?;
        let dims = (0..rank).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        if &dims != shape {
            return Err(r.fail(at, format!("{name} has shape {dims:?}, expected {shape:?}")));
        }
        for v in slot.data_mut() {
            *v = T::of(r.f64()?);
        }
    }
    if r.pos != bytes.len() {
        return Err(r.fail(r.pos, "trailing bytes".into()));
    }
    Ok((cfg, params))
}

pub fn save_checkpoint<T: Scalar>(path: impl AsRef<Path>, cfg: &ModelConfig, params: &WbaNetParams<Tensor<T>>) -> Result<()> {
    std::fs::write(path, encode_checkpoint(cfg, params)?)?;
    Ok(())
}

pub fn load_checkpoint<T: Scalar>(path: impl AsRef<Path>) -> Result<(ModelConfig, WbaNetParams<Tensor<T>>)> {
    decode_checkpoint(&std::fs::read(path)?)
}
