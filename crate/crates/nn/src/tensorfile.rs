//! Binary tensor files.
//!
//! Layout: magic `RFDT`, version byte `1`, dtype byte (`1` = f32, `2` = f64),
//! `ndim` as u32 LE, `ndim` u32 LE extents, then the row-major LE payload.

use std::fs;
use std::path::Path;

use crate::error::{NnError, Result};

pub const MAGIC: &[u8; 4] = b"RFDT";
pub const VERSION: u8 = 1;
pub const DTYPE_F32: u8 = 1;
pub const DTYPE_F64: u8 = 2;

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            TensorData::F32(v) => v.len(),
            TensorData::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn encode(dims: &[usize], data: &TensorData) -> Result<Vec<u8>> {
    let n: usize = dims.iter().product();
    if n != data.len() {
        return Err(NnError::Contract(format!(
            "payload of {} values does not match dims {:?}",
            data.len(),
            dims
        )));
    }
    let mut out = Vec::with_capacity(10 + 4 * dims.len() + 8 * n);
    out.extend_from_slice(MAGIC);
    out.push(VERSION);
    out.push(match data {
        TensorData::F32(_) => DTYPE_F32,
        TensorData::F64(_) => DTYPE_F64,
    });
    out.extend_from_slice(&(dims.len() as u32).to_le_bytes());
    for &d in dims {
        let d = u32::try_from(d)
            .map_err(|_| NnError::Contract(format!("extent {d} does not fit in u32")))?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    match data {
        TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
        TensorData::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
    }
    Ok(out)
}

pub fn decode(bytes: &[u8], path: &Path) -> Result<(Vec<usize>, TensorData)> {
    let fail = |reason: String| NnError::Format {
        path: path.to_path_buf(),
        reason,
    };
    if bytes.len() < 10 {
        return Err(fail(format!("header truncated ({} bytes)", bytes.len())));
    }
    if &bytes[..4] != MAGIC {
        return Err(fail(format!("bad magic {:?}", &bytes[..4])));
    }
    if bytes[4] != VERSION {
        return Err(fail(format!("unsupported version {}", bytes[4])));
    }
    let dtype = bytes[5];
    let width = match dtype {
        DTYPE_F32 => 4,
        DTYPE_F64 => 8,
        other => return Err(fail(format!("unsupported dtype {other}"))),
    };
    let ndim = u32::from_le_bytes(bytes[6..10].try_into().unwrap()) as usize;
    let header = 10usize
        .checked_add(ndim.checked_mul(4).ok_or_else(|| fail("ndim overflow".into()))?)
        .ok_or_else(|| fail("ndim overflow".into()))?;
    if bytes.len() < header {
        return Err(fail(format!("dims truncated: need {header} header bytes")));
    }
    let mut dims = Vec::with_capacity(ndim);
    let mut count: usize = 1;
    for i in 0..ndim {
        let o = 10 + 4 * i;
        let d = u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap()) as usize;
        count = count
            .checked_mul(d)
            .ok_or_else(|| fail(format!("dimension overflow at axis {i}")))?;
        dims.push(d);
    }
    let payload = count
        .checked_mul(width)
        .ok_or_else(|| fail("payload size overflow".into()))?;
    let body = &bytes[header..];
    if body.len() != payload {
        return Err(fail(format!(
            "length mismatch: header promises {payload} payload bytes, found {}",
            body.len()
        )));
    }
    let data = match dtype {
        DTYPE_F32 => TensorData::F32(
            body.chunks_exact(4)
                .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
        _ => TensorData::F64(
            body.chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
                .collect(),
        ),
    };
    Ok((dims, data))
}

pub fn write(path: &Path, dims: &[usize], data: &TensorData) -> Result<()> {
    let bytes = encode(dims, data)?;
    fs::write(path, bytes).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn read(path: &Path) -> Result<(Vec<usize>, TensorData)> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode(&bytes, path)
}

pub fn read_f32(path: &Path) -> Result<(Vec<usize>, Vec<f32>)> {
    match read(path)? {
        (dims, TensorData::F32(v)) => Ok((dims, v)),
        _ => Err(NnError::Format {
            path: path.to_path_buf(),
            reason: "expected f32 payload".into(),
        }),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn header_layout_is_fixed() {
        let bytes = encode(&[2, 1], &TensorData::F32(vec![1.0, -2.0])).unwrap();
        assert_eq!(&bytes[..4], b"RFDT");
        assert_eq!(bytes[4], 1);
        assert_eq!(bytes[5], 1);
        assert_eq!(&bytes[6..10], &2u32.to_le_bytes());
        assert_eq!(&bytes[10..14], &2u32.to_le_bytes());
        assert_eq!(&bytes[14..18], &1u32.to_le_bytes());
        assert_eq!(&bytes[18..22], &1.0f32.to_le_bytes());
        assert_eq!(bytes.len(), 26);
    }

    #[test]
    fn rejects_bad_magic_and_truncation() {
        let p = Path::new("x.rft");
        let mut bytes = encode(&[3], &TensorData::F32(vec![1.0, 2.0, 3.0])).unwrap();
        let short = &bytes[..bytes.len() - 1];
        let err = decode(short, p).unwrap_err().to_string();
        assert!(err.contains("length mismatch"), "{err}");
        assert!(err.contains("x.rft"));
        bytes[0] = b'X';
        assert!(decode(&bytes, p).unwrap_err().to_string().contains("magic"));
    }

    #[test]
    fn rejects_dimension_overflow() {
        let mut bytes = Vec::new();
        bytes.extend_from_slice(MAGIC);
        bytes.push(VERSION);
        bytes.push(DTYPE_F64);
        bytes.extend_from_slice(&4u32.to_le_bytes());
        for _ in 0..4 {
            bytes.extend_from_slice(&u32::MAX.to_le_bytes());
        }
        let err = decode(&bytes, Path::new("big.rft")).unwrap_err().to_string();
        assert!(err.contains("overflow"), "{err}");
    }
}
