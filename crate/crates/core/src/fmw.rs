//! FMW tensor container.
//!
//! Little-endian layout:
//!
//! ```text
//! magic    b"FMW1"
//! version  u16            (= 1)
//! count    u32
//! count × {
//!     name_len u16, name [u8; name_len]  (UTF-8)
//!     dtype    u8     0 = f32, 1 = f16, 2 = i8, 3 = i16
//!     frac     i8     fixed-point fraction bits (0 for float tensors)
//!     ndim     u8
//!     dims     [u32; ndim]
//!     data     product(dims) elements
//! }
//! crc32    u32            IEEE CRC-32 of every preceding byte
//! ```

use std::collections::HashSet;
use std::path::Path;

use half::f16;
use thiserror::Error;

use crate::fixpoint::{FixFormat, FixTensor};

pub const MAGIC: &[u8; 4] = b"FMW1";
pub const VERSION: u16 = 1;
/// Header plus trailing checksum of an empty container.
pub const MIN_FILE_LEN: usize = 4 + 2 + 4 + 4;

#[derive(Debug, Error)]
pub enum FmwError {
    #[error("bad magic")]
    BadMagic,
    #[error("unsupported version {0}")]
    UnsupportedVersion(u16),
    #[error("checksum mismatch")]
    ChecksumMismatch,
    #[error("truncated file")]
    Truncated,
    #[error("unknown dtype code {0}")]
    UnknownDtype(u8),
    #[error("size mismatch: {0}")]
    SizeMismatch(String),
    #[error("duplicate tensor name {0}")]
    DuplicateName(String),
    #[error("invalid tensor name")]
    BadName,
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl FmwError {
    /// Stable numeric code per failure kind.
    pub fn code(&self) -> u8 {
        match self {
            Self::BadMagic => 1,
            Self::UnsupportedVersion(_) => 2,
            Self::ChecksumMismatch => 3,
            Self::Truncated => 4,
            Self::UnknownDtype(_) => 5,
            Self::SizeMismatch(_) => 6,
            Self::DuplicateName(_) => 7,
            Self::BadName => 8,
            Self::Io(_) => 9,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F16(Vec<f16>),
    I8(Vec<i8>),
    I16(Vec<i16>),
}

impl TensorData {
    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F16(v) => v.len(),
            Self::I8(v) => v.len(),
            Self::I16(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn dtype_code(&self) -> u8 {
        match self {
            Self::F32(_) => 0,
            Self::F16(_) => 1,
            Self::I8(_) => 2,
            Self::I16(_) => 3,
        }
    }

    fn elem_size(code: u8) -> Result<usize, FmwError> {
        match code {
            0 => Ok(4),
            1 | 3 => Ok(2),
            2 => Ok(1),
            c => Err(FmwError::UnknownDtype(c)),
        }
    }

    /// Values widened to `f64` (integer codes are returned as-is, unscaled).
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Self::F32(v) => v.iter().map(|&x| x as f64).collect(),
            Self::F16(v) => v.iter().map(|x| x.to_f64()).collect(),
            Self::I8(v) => v.iter().map(|&x| x as f64).collect(),
            Self::I16(v) => v.iter().map(|&x| x as f64).collect(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub name: String,
    pub dims: Vec<usize>,
    pub frac: i8,
    pub data: TensorData,
}

impl Tensor {
    pub fn f32(name: impl Into<String>, dims: Vec<usize>, data: Vec<f32>) -> Self {
        Self { name: name.into(), dims, frac: 0, data: TensorData::F32(data) }
    }

    pub fn i8(name: impl Into<String>, dims: Vec<usize>, frac: i8, data: Vec<i8>) -> Self {
        Self { name: name.into(), dims, frac, data: TensorData::I8(data) }
    }

    pub fn i16(name: impl Into<String>, dims: Vec<usize>, frac: i8, data: Vec<i16>) -> Self {
        Self { name: name.into(), dims, frac, data: TensorData::I16(data) }
    }

    /// An `f64` scalar stored losslessly as its IEEE bit pattern in four
    /// little-endian `i16` words.
    pub fn f64_scalar(name: impl Into<String>, v: f64) -> Self {
        let bits = v.to_bits();
        let words = (0..4).map(|i| (bits >> (16 * i)) as u16 as i16).collect();
        Self::i16(name, vec![4], 0, words)
    }

    pub fn as_f64_scalar(&self) -> Option<f64> {
        match &self.data {
            TensorData::I16(w) if w.len() == 4 => {
                let bits = w.iter().enumerate().fold(0u64, |acc, (i, &x)| acc | ((x as u16 as u64) << (16 * i)));
                Some(f64::from_bits(bits))
            }
            _ => None,
        }
    }

    pub fn numel(&self) -> usize {
        self.dims.iter().product()
    }

    /// Stores an 8- or 16-bit fixed-point tensor; `frac` carries the format.
    pub fn fix(name: impl Into<String>, t: &FixTensor) -> Result<Self, crate::Error> {
        let name = name.into();
        let frac = i8::try_from(t.fmt().frac())
            .map_err(|_| crate::Error::BadTensor { name: name.clone(), msg: "frac does not fit in i8".into() })?;
        let dims = t.shape().to_vec();
        match t.fmt().width() {
            8 => Ok(Self::i8(name, dims, frac, t.codes().iter().map(|&c| c as i8).collect())),
            16 => Ok(Self::i16(name, dims, frac, t.codes().iter().map(|&c| c as i16).collect())),
            w => Err(crate::Error::BadTensor { name, msg: format!("no {w}-bit integer dtype") }),
        }
    }

    /// Reads an integer tensor back as fixed point.
    pub fn to_fix(&self) -> Result<FixTensor, crate::Error> {
        let (width, codes): (u8, Vec<i32>) = match &self.data {
            TensorData::I8(v) => (8, v.iter().map(|&c| c as i32).collect()),
            TensorData::I16(v) => (16, v.iter().map(|&c| c as i32).collect()),
            _ => return Err(crate::Error::BadTensor { name: self.name.clone(), msg: "expected an integer dtype".into() }),
        };
        FixTensor::new(self.dims.clone(), codes, FixFormat::new(width, self.frac as i32)?)
    }
}

/// An ordered collection of named tensors.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Fmw {
    pub tensors: Vec<Tensor>,
}

impl Fmw {
    pub fn new(tensors: Vec<Tensor>) -> Self {
        Self { tensors }
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|t| t.name == name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.get(name).is_some()
    }

    pub fn push(&mut self, t: Tensor) {
        self.tensors.push(t);
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>, FmwError> {
        let mut seen = HashSet::new();
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.tensors.len() as u32).to_le_bytes());
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(FmwError::DuplicateName(t.name.clone()));
            }
            if t.numel() != t.data.len() {
                return Err(FmwError::SizeMismatch(format!(
                    "{}: dims {:?} but {} elements",
                    t.name,
                    t.dims,
                    t.data.len()
                )));
            }
            let name = t.name.as_bytes();
            let name_len = u16::try_from(name.len()).map_err(|_| FmwError::BadName)?;
            let ndim = u8::try_from(t.dims.len())
                .map_err(|_| FmwError::SizeMismatch(format!("{}: too many dims", t.name)))?;
            out.extend_from_slice(&name_len.to_le_bytes());
            out.extend_from_slice(name);
            out.push(t.data.dtype_code());
            out.push(t.frac as u8);
            out.push(ndim);
            for &d in &t.dims {
                let d = u32::try_from(d).map_err(|_| FmwError::SizeMismatch(t.name.clone()))?;
                out.extend_from_slice(&d.to_le_bytes());
            }
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::F16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
                TensorData::I8(v) => out.extend(v.iter().map(|&x| x as u8)),
                TensorData::I16(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self, FmwError> {
        if bytes.len() >= 4 && &bytes[..4] != MAGIC {
            return Err(FmwError::BadMagic);
        }
        if bytes.len() < MIN_FILE_LEN {
            return Err(FmwError::Truncated);
        }
        let body_end = bytes.len() - 4;
        let mut r = Reader { buf: &bytes[..body_end], pos: 4 };
        let version = r.u16()?;
        if version != VERSION {
            return Err(FmwError::UnsupportedVersion(version));
        }
        let count = r.u32()? as usize;
        let mut tensors = Vec::with_capacity(count.min(1 << 16));
        let mut seen = HashSet::new();
        for _ in 0..count {
            let name_len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(name_len)?).map_err(|_| FmwError::BadName)?.to_owned();
            let dtype = r.u8()?;
            let frac = r.u8()? as i8;
            let ndim = r.u8()? as usize;
            let dims = (0..ndim).map(|_| r.u32().map(|d| d as usize)).collect::<Result<Vec<_>, _>>()?;
            let numel = dims
                .iter()
                .try_fold(1usize, |acc, &d| acc.checked_mul(d))
                .ok_or_else(|| FmwError::SizeMismatch(format!("{name}: dims overflow")))?;
            let size = TensorData::elem_size(dtype)?;
            let nbytes = numel.checked_mul(size).ok_or(FmwError::Truncated)?;
            let raw = r.take(nbytes)?;
            let data = match dtype {
                0 => TensorData::F32(raw.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().unwrap())).collect()),
                1 => TensorData::F16(raw.chunks_exact(2).map(|c| f16::from_le_bytes(c.try_into().unwrap())).collect()),
                2 => TensorData::I8(raw.iter().map(|&b| b as i8).collect()),
                _ => TensorData::I16(raw.chunks_exact(2).map(|c| i16::from_le_bytes(c.try_into().unwrap())).collect()),
            };
            if !seen.insert(name.clone()) {
                return Err(FmwError::DuplicateName(name));
            }
            tensors.push(Tensor { name, dims, frac, data });
        }
        if r.pos != body_end {
            return Err(FmwError::SizeMismatch(format!("{} trailing bytes", body_end - r.pos)));
        }
        let stored = u32::from_le_bytes(bytes[body_end..].try_into().unwrap());
        if crc32fast::hash(&bytes[..body_end]) != stored {
            return Err(FmwError::ChecksumMismatch);
        }
        Ok(Self { tensors })
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<(), FmwError> {
        std::fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self, FmwError> {
        Self::from_bytes(&std::fs::read(path)?)
    }
}

pub fn save_fmw(tensors: &[Tensor], path: impl AsRef<Path>) -> Result<(), FmwError> {
    Fmw::new(tensors.to_vec()).save(path)
}

pub fn load_fmw(path: impl AsRef<Path>) -> Result<Vec<Tensor>, FmwError> {
    Ok(Fmw::load(path)?.tensors)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8], FmwError> {
        let end = self.pos.checked_add(n).ok_or(FmwError::Truncated)?;
        if end > self.buf.len() {
            return Err(FmwError::Truncated);
        }
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u8(&mut self) -> Result<u8, FmwError> {
        Ok(self.take(1)?[0])
    }

    fn u16(&mut self) -> Result<u16, FmwError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    fn u32(&mut self) -> Result<u32, FmwError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
}
