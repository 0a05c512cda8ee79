//! Versioned binary parameter container: magic `PSTM`, version byte, tensor
//! count, then per tensor a length-prefixed name, the shape, and the f64
//! little-endian payload. The model config rides alongside as JSON.

use std::path::Path;

use crate::nn::{Mat, ParamStore};
use crate::{Error, Result};

pub const CKPT_MAGIC: &[u8; 4] = b"PSTM";
pub const CKPT_VERSION: u8 = 1;

pub fn params_to_bytes(params: &ParamStore) -> Vec<u8> {
    let mut buf = Vec::new();
    buf.extend_from_slice(CKPT_MAGIC);
    buf.push(CKPT_VERSION);
    buf.extend_from_slice(&(params.tensor_count() as u32).to_le_bytes());
    for (name, t) in params.iter() {
        buf.extend_from_slice(&(name.len() as u16).to_le_bytes());
        buf.extend_from_slice(name.as_bytes());
        buf.extend_from_slice(&(t.rows as u32).to_le_bytes());
        buf.extend_from_slice(&(t.cols as u32).to_le_bytes());
        for v in &t.data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
    }
    buf
}

pub fn params_from_bytes(data: &[u8]) -> Result<ParamStore> {
    let take = |pos: &mut usize, n: usize| -> Result<&[u8]> {
        if *pos + n > data.len() {
            return Err(Error::Data("truncated checkpoint".into()));
        }
        let s = &data[*pos..*pos + n];
        *pos += n;
        Ok(s)
    };
    let mut pos = 0usize;
    if take(&mut pos, 4)? != CKPT_MAGIC {
        return Err(Error::Data("bad magic: not a parameter checkpoint".into()));
    }
    let version = take(&mut pos, 1)?[0];
    if version != CKPT_VERSION {
        return Err(Error::Data(format!("unsupported checkpoint version {version}")));
    }
    let count = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
    let mut store = ParamStore::new();
    for _ in 0..count {
        let name_len = u16::from_le_bytes(take(&mut pos, 2)?.try_into().unwrap()) as usize;
        let name = String::from_utf8(take(&mut pos, name_len)?.to_vec())
            .map_err(|e| Error::Data(format!("tensor name not utf-8: {e}")))?;
        let rows = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let cols = u32::from_le_bytes(take(&mut pos, 4)?.try_into().unwrap()) as usize;
        let mut values = Vec::with_capacity(rows * cols);
        for _ in 0..rows * cols {
            values.push(f64::from_le_bytes(take(&mut pos, 8)?.try_into().unwrap()));
        }
        store.add(name, Mat::from_vec(rows, cols, values));
    }
    if pos != data.len() {
        return Err(Error::Data("trailing bytes after checkpoint payload".into()));
    }
    Ok(store)
}

pub fn save_params(path: &Path, params: &ParamStore) -> Result<()> {
    Ok(std::fs::write(path, params_to_bytes(params))?)
}

pub fn load_params(path: &Path) -> Result<ParamStore> {
    params_from_bytes(&std::fs::read(path)?)
}
