//! MRT1 tensor files.
//!
//! Layout: magic `MRT1`, one dtype byte (0 = f32, 1 = f64, 2 = complex64 as
//! interleaved f32 pairs), one rank byte, `rank` little-endian `u32` extents,
//! then the raw little-endian values in row-major order. For complex64 the
//! extents describe the complex array; the trailing re/im pair is implicit.
//! Several records may follow one another in a single file.

use std::fs::File;
use std::io::{BufReader, BufWriter, ErrorKind, Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::scalar::{DType, Scalar};
use crate::tensor::{numel, Tensor};

pub const MAGIC: &[u8; 4] = b"MRT1";

/// A decoded record. Complex data carries a trailing extent of 2.
#[derive(Debug, Clone, PartialEq)]
pub struct StoredTensor {
    pub dtype: DType,
    pub tensor: Tensor<f64>,
}

impl StoredTensor {
    pub fn to<T: Scalar>(&self) -> Tensor<T> {
        self.tensor.cast()
    }
}

fn header(out: &mut Vec<u8>, dtype: DType, shape: &[usize]) -> Result<()> {
    if shape.len() > u8::MAX as usize {
        return Err(Error::Shape(format!("rank {} too large for MRT1", shape.len())));
    }
    out.extend_from_slice(MAGIC);
    out.push(dtype.code());
    out.push(shape.len() as u8);
    for &e in shape {
        let e = u32::try_from(e).map_err(|_| Error::Shape(format!("extent {e} exceeds u32")))?;
        out.extend_from_slice(&e.to_le_bytes());
    }
    Ok(())
}

fn push_values<T: Scalar>(out: &mut Vec<u8>, dtype: DType, data: &[T]) {
    match dtype {
        DType::Real64 => data.iter().for_each(|v| out.extend_from_slice(&v.to_f64_lossy().to_le_bytes())),
        DType::Real32 | DType::Complex64 => {
            data.iter().for_each(|v| out.extend_from_slice(&(v.to_f64_lossy() as f32).to_le_bytes()))
        }
    }
}

/// Encodes a real tensor with its native precision.
pub fn encode_real<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    encode_real_as(t, T::DTYPE)
}

/// Encodes a real tensor as `Real32` or `Real64`.
pub fn encode_real_as<T: Scalar>(t: &Tensor<T>, dtype: DType) -> Result<Vec<u8>> {
    if dtype == DType::Complex64 {
        return Err(Error::Parameter("use encode_complex for complex data".into()));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.ndim() + t.len() * dtype.value_bytes());
    header(&mut out, dtype, t.shape())?;
    push_values(&mut out, dtype, t.data());
    Ok(out)
}

/// Encodes a complex tensor `[..., 2]` as complex64.
pub fn encode_complex<T: Scalar>(t: &Tensor<T>) -> Result<Vec<u8>> {
    let shape = t.shape();
    if shape.last() != Some(&2) {
        return Err(Error::Shape(format!("complex tensor needs trailing extent 2, got {shape:?}")));
    }
    let mut out = Vec::with_capacity(6 + 4 * t.ndim() + t.len() * 4);
    header(&mut out, DType::Complex64, &shape[..shape.len() - 1])?;
    push_values(&mut out, DType::Complex64, t.data());
    Ok(out)
}

fn read_exact_or_eof<R: Read>(r: &mut R, buf: &mut [u8]) -> std::io::Result<bool> {
    let mut filled = 0;
    while filled < buf.len() {
        match r.read(&mut buf[filled..]) {
            Ok(0) if filled == 0 => return Ok(false),
            Ok(0) => return Err(ErrorKind::UnexpectedEof.into()),
            Ok(n) => filled += n,
            Err(e) if e.kind() == ErrorKind::Interrupted => {}
            Err(e) => return Err(e),
        }
    }
    Ok(true)
}

/// Reads the next record; `Ok(None)` at a clean end of stream.
pub fn read_record<R: Read>(r: &mut R, path: &Path) -> Result<Option<StoredTensor>> {
    let io = |e: std::io::Error| Error::io(path, e);
    let mut head = [0u8; 6];
    if !read_exact_or_eof(r, &mut head).map_err(io)? {
        return Ok(None);
    }
    if &head[..4] != MAGIC {
        return Err(Error::format(path, "bad magic, expected MRT1"));
    }
    let dtype = DType::from_code(head[4]).ok_or_else(|| Error::format(path, format!("unknown dtype code {}", head[4])))?;
    let rank = head[5] as usize;
    let mut ext = vec![0u8; rank * 4];
    r.read_exact(&mut ext).map_err(io)?;
    let mut shape: Vec<usize> = ext.chunks_exact(4).map(|c| u32::from_le_bytes([c[0], c[1], c[2], c[3]]) as usize).collect();
    if dtype == DType::Complex64 {
        shape.push(2);
    }
    let count = numel(&shape);
    let mut raw = vec![0u8; count * dtype.value_bytes()];
    r.read_exact(&mut raw).map_err(io)?;
    let data: Vec<f64> = match dtype {
        DType::Real64 => raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect(),
        _ => raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap()) as f64).collect(),
    };
    Ok(Some(StoredTensor { dtype, tensor: Tensor::new(&shape, data)? }))
}

pub fn read_all<R: Read>(r: &mut R, path: &Path) -> Result<Vec<StoredTensor>> {
    let mut out = Vec::new();
    while let Some(t) = read_record(r, path)? {
        out.push(t);
    }
    Ok(out)
}

pub fn write_file(path: &Path, bytes: &[u8]) -> Result<()> {
    let f = File::create(path).map_err(|e| Error::io(path, e))?;
    let mut w = BufWriter::new(f);
    w.write_all(bytes).and_then(|_| w.flush()).map_err(|e| Error::io(path, e))
}

pub fn save_real<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_file(path, &encode_real(t)?)
}

pub fn save_complex<T: Scalar>(path: &Path, t: &Tensor<T>) -> Result<()> {
    write_file(path, &encode_complex(t)?)
}

pub fn load_all(path: &Path) -> Result<Vec<StoredTensor>> {
    let f = File::open(path).map_err(|e| Error::io(path, e))?;
    read_all(&mut BufReader::new(f), path)
}

/// Loads a file that must hold exactly one record.
pub fn load_one(path: &Path) -> Result<StoredTensor> {
    let mut v = load_all(path)?;
    if v.len() != 1 {
        return Err(Error::format(path, format!("expected one tensor, found {}", v.len())));
    }
    Ok(v.pop().unwrap())
}
