//! Binary parameter checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! b"UDACKPT1"
//! u32 record count
//! per record:
//!   u32 name length, UTF-8 name
//!   u32 rank, rank × u32 dims
//!   product(dims) × f64 values (IEEE 754, little-endian)
//! ```
//!
//! Records keep the parameter set's order, so a write/read cycle is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use anyhow::{bail, ensure, Context, Result};
use uda_core::nn::ParamSet;
use uda_core::Tensor;

pub const MAGIC: &[u8; 8] = b"UDACKPT1";

fn put_u32(out: &mut Vec<u8>, v: usize) -> Result<()> {
    let v = u32::try_from(v).context("value does not fit the u32 checkpoint field")?;
    out.extend_from_slice(&v.to_le_bytes());
    Ok(())
}

pub fn encode(params: &ParamSet) -> Result<Vec<u8>> {
    let mut out = MAGIC.to_vec();
    put_u32(&mut out, params.len())?;
    for (name, t) in params.iter() {
        put_u32(&mut out, name.len())?;
        out.extend_from_slice(name.as_bytes());
        put_u32(&mut out, t.shape().len())?;
        for &d in t.shape() {
            put_u32(&mut out, d)?;
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.bytes.len());
        let Some(end) = end else {
            bail!("checkpoint truncated at byte {}", self.pos);
        };
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<usize> {
        let b = self.take(4)?;
        Ok(u32::from_le_bytes(b.try_into().expect("4 bytes")) as usize)
    }
}

pub fn decode(bytes: &[u8]) -> Result<ParamSet> {
    let mut c = Cursor { bytes, pos: 0 };
    ensure!(c.take(8)? == MAGIC, "not a checkpoint: bad magic");
    let count = c.u32()?;
    let mut params = ParamSet::new();
    for _ in 0..count {
        let len = c.u32()?;
        let name = std::str::from_utf8(c.take(len)?).context("parameter name is not UTF-8")?;
        let rank = c.u32()?;
        let shape = (0..rank).map(|_| c.u32()).collect::<Result<Vec<_>>>()?;
        let numel = shape
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .context("shape overflows")?;
        let raw = c.take(numel.checked_mul(8).context("shape overflows")?)?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().expect("8 bytes")))
            .collect();
        params.insert(name, Tensor::new(shape, data)?)?;
    }
    ensure!(c.pos == bytes.len(), "{} trailing bytes after the last record", bytes.len() - c.pos);
    Ok(params)
}

pub fn save(path: &Path, params: &ParamSet) -> Result<()> {
    let bytes = encode(params)?;
    let mut f = std::fs::File::create(path).with_context(|| format!("creating {}", path.display()))?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn load(path: &Path) -> Result<ParamSet> {
    let mut bytes = Vec::new();
    std::fs::File::open(path)
        .and_then(|mut f| f.read_to_end(&mut bytes))
        .with_context(|| format!("reading {}", path.display()))?;
    decode(&bytes).with_context(|| format!("decoding {}", path.display()))
}
