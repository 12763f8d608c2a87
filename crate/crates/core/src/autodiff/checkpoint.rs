//! Flat binary parameter checkpoints.
//!
//! Layout, all integers little-endian `u32`:
//!
//! ```text
//! magic "PPRO" | version | count
//! per parameter: name_len | name (UTF-8) | rows | cols | rows*cols f32 LE
//! ```

use std::io::{Read, Write};

use crate::error::{Error, Result};
use crate::tensor::Matrix;

const MAGIC: &[u8; 4] = b"PPRO";
const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct NamedParam {
    pub name: String,
    pub value: Matrix,
}

impl NamedParam {
    pub fn new(name: impl Into<String>, value: Matrix) -> Self {
        NamedParam {
            name: name.into(),
            value,
        }
    }
}

fn put_u32(out: &mut impl Write, v: usize) -> Result<()> {
    let v = u32::try_from(v).map_err(|_| Error::Checkpoint(format!("{v} does not fit in u32")))?;
    out.write_all(&v.to_le_bytes())?;
    Ok(())
}

pub fn write_checkpoint(mut out: impl Write, params: &[NamedParam]) -> Result<()> {
    out.write_all(MAGIC)?;
    put_u32(&mut out, VERSION as usize)?;
    put_u32(&mut out, params.len())?;
    for p in params {
        put_u32(&mut out, p.name.len())?;
        out.write_all(p.name.as_bytes())?;
        put_u32(&mut out, p.value.rows())?;
        put_u32(&mut out, p.value.cols())?;
        for &v in p.value.as_slice() {
            out.write_all(&(v as f32).to_le_bytes())?;
        }
    }
    out.flush()?;
    Ok(())
}

fn get_u32(input: &mut impl Read) -> Result<usize> {
    let mut buf = [0u8; 4];
    input
        .read_exact(&mut buf)
        .map_err(|e| Error::Checkpoint(format!("truncated file: {e}")))?;
    Ok(u32::from_le_bytes(buf) as usize)
}

pub fn read_checkpoint(mut input: impl Read) -> Result<Vec<NamedParam>> {
    let mut magic = [0u8; 4];
    input
        .read_exact(&mut magic)
        .map_err(|e| Error::Checkpoint(format!("truncated header: {e}")))?;
    if &magic != MAGIC {
        return Err(Error::Checkpoint("bad magic".into()));
    }
    let version = get_u32(&mut input)?;
    if version != VERSION as usize {
        return Err(Error::Checkpoint(format!("unsupported version {version}")));
    }
    let count = get_u32(&mut input)?;
    let mut params = Vec::with_capacity(count.min(1024));
    for _ in 0..count {
        let name_len = get_u32(&mut input)?;
        let mut name = vec![0u8; name_len];
        input
            .read_exact(&mut name)
            .map_err(|e| Error::Checkpoint(format!("truncated name: {e}")))?;
        let name = String::from_utf8(name)
            .map_err(|_| Error::Checkpoint("parameter name is not UTF-8".into()))?;
        let rows = get_u32(&mut input)?;
        let cols = get_u32(&mut input)?;
        let mut raw = vec![0u8; rows * cols * 4];
        input
            .read_exact(&mut raw)
            .map_err(|e| Error::Checkpoint(format!("truncated entries of `{name}`: {e}")))?;
        let data = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]) as f64)
            .collect();
        params.push(NamedParam::new(name, Matrix::from_vec(rows, cols, data)));
    }
    Ok(params)
}
