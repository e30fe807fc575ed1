//! Flat binary checkpoints: a magic header, a kind tag, dimension sizes, then
//! raw little-endian f64 parameters. Bit-exact by construction.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{ModelDims, ModelParams};

const MAGIC: &[u8; 8] = b"RPGCKPT1";

pub const KIND_MODEL: u8 = 1;
pub const KIND_ESTIMATOR: u8 = 2;

pub(crate) fn write_flat(path: &Path, kind: u8, dims: &[u64], data: &[f64]) -> Result<()> {
    let mut buf = Vec::with_capacity(16 + dims.len() * 8 + data.len() * 8);
    buf.extend_from_slice(MAGIC);
    buf.push(kind);
    buf.push(dims.len() as u8);
    for &d in dims {
        buf.extend_from_slice(&d.to_le_bytes());
    }
    buf.extend_from_slice(&(data.len() as u64).to_le_bytes());
    for &x in data {
        buf.extend_from_slice(&x.to_le_bytes());
    }
    fs::write(path, buf).map_err(|e| Error::io(path, e))
}

pub(crate) fn read_flat(path: &Path, expect_kind: u8) -> Result<(Vec<u64>, Vec<f64>)> {
    let buf = fs::read(path).map_err(|e| Error::io(path, e))?;
    let bad = |msg: &str| {
        Error::Validation(format!("checkpoint {}: {msg}", path.display()))
    };
    if buf.len() < 10 || &buf[..8] != MAGIC {
        return Err(bad("bad magic"));
    }
    if buf[8] != expect_kind {
        return Err(bad(&format!(
            "kind {} where {expect_kind} expected",
            buf[8]
        )));
    }
    let n_dims = buf[9] as usize;
    let mut off = 10;
    let take_u64 = |off: &mut usize| -> Result<u64> {
        let end = *off + 8;
        if end > buf.len() {
            return Err(bad("truncated header"));
        }
        let v = u64::from_le_bytes(buf[*off..end].try_into().expect("8 bytes"));
        *off = end;
        Ok(v)
    };
    let mut dims = Vec::with_capacity(n_dims);
    for _ in 0..n_dims {
        dims.push(take_u64(&mut off)?);
    }
    let len = take_u64(&mut off)? as usize;
    if buf.len() != off + len * 8 {
        return Err(bad(&format!(
            "payload length {} != declared {len} f64s",
            buf.len() - off
        )));
    }
    let mut data = Vec::with_capacity(len);
    for i in 0..len {
        let start = off + i * 8;
        let x = f64::from_le_bytes(buf[start..start + 8].try_into().expect("8 bytes"));
        if !x.is_finite() {
            return Err(bad(&format!("non-finite parameter at index {i}")));
        }
        data.push(x);
    }
    Ok((dims, data))
}

pub fn save_model(path: &Path, params: &ModelParams) -> Result<()> {
    let d = params.dims();
    write_flat(
        path,
        KIND_MODEL,
        &[d.vocab as u64, d.embed as u64, d.hidden as u64, d.ctx as u64],
        params.theta(),
    )
}

pub fn load_model(path: &Path) -> Result<ModelParams> {
    let (dims, data) = read_flat(path, KIND_MODEL)?;
    if dims.len() != 4 {
        return Err(Error::Validation(format!(
            "checkpoint {}: expected 4 dims, got {}",
            path.display(),
            dims.len()
        )));
    }
    let dims = ModelDims {
        vocab: dims[0] as usize,
        embed: dims[1] as usize,
        hidden: dims[2] as usize,
        ctx: dims[3] as usize,
    };
    ModelParams::new(dims, data)
}
