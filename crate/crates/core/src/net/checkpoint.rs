//! Binary checkpoint container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic        8 bytes  "TSECKPT\0"
//! version      u32
//! config_len   u32, then config_len bytes of JSON (NetConfig)
//! n_params     u32
//! per parameter:
//!   name_len u32, name (UTF-8)
//!   ndim u32, ndim × u64 dims
//!   product(dims) × f64 values
//! ```

use std::io::{Read, Write};
use std::path::Path;

use super::{ModelParams, NetConfig};
use crate::autodiff::{ParamRegistry, Tensor};
use crate::error::{Error, Result};

pub const CHECKPOINT_MAGIC: &[u8; 8] = b"TSECKPT\0";
pub const CHECKPOINT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn encode_checkpoint(params: &ModelParams) -> Result<Vec<u8>> {
    let mut out = Vec::new();
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&CHECKPOINT_VERSION.to_le_bytes());
    let cfg = serde_json::to_vec(&params.config).map_err(|e| bad(e.to_string()))?;
    out.extend_from_slice(&(cfg.len() as u32).to_le_bytes());
    out.extend_from_slice(&cfg);
    out.extend_from_slice(&(params.registry.len() as u32).to_le_bytes());
    for (name, t) in params.registry.iter() {
        out.extend_from_slice(&(name.len() as u32).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.extend_from_slice(&(t.shape().len() as u32).to_le_bytes());
        for &d in t.shape() {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

pub fn save_checkpoint(params: &ModelParams, path: impl AsRef<Path>) -> Result<()> {
    let bytes = encode_checkpoint(params)?;
    let mut f = std::fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

struct Cursor<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| bad("truncated file"))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

pub fn decode_checkpoint(bytes: &[u8]) -> Result<ModelParams> {
    let mut c = Cursor { buf: bytes, pos: 0 };
    if c.take(8)? != CHECKPOINT_MAGIC {
        return Err(bad("not a checkpoint (bad magic)"));
    }
    let version = c.u32()?;
    if version != CHECKPOINT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}")));
    }
    let cfg_len = c.u32()? as usize;
    let config: NetConfig = serde_json::from_slice(c.take(cfg_len)?).map_err(|e| bad(format!("config: {e}")))?;
    config.validate()?;
    // shapes the config implies; values are overwritten below
    let template = ModelParams::init(config, 0)?;
    let n = c.u32()? as usize;
    if n != template.registry.len() {
        return Err(bad(format!("config expects {} parameters, file has {n}", template.registry.len())));
    }
    let mut registry = ParamRegistry::new();
    for (want_name, want) in template.registry.iter() {
        let name_len = c.u32()? as usize;
        let name = std::str::from_utf8(c.take(name_len)?).map_err(|_| bad("parameter name is not UTF-8"))?;
        if name != want_name {
            return Err(bad(format!("expected parameter {want_name}, found {name}")));
        }
        let ndim = c.u32()? as usize;
        let shape = (0..ndim).map(|_| c.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        if shape != want.shape() {
            return Err(bad(format!("{name}: shape {shape:?} does not match config shape {:?}", want.shape())));
        }
        let count: usize = shape.iter().product();
        let raw = c.take(count * 8)?;
        let data = raw.chunks_exact(8).map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes"))).collect();
        registry.insert(name, Tensor::new(&shape, data)?)?;
    }
    if c.pos != bytes.len() {
        return Err(bad("trailing bytes after last parameter"));
    }
    Ok(ModelParams { config, registry })
}

pub fn load_checkpoint(path: impl AsRef<Path>) -> Result<ModelParams> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_checkpoint(&bytes)
}
