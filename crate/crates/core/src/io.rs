//! Binary field files and their key=value sidecars.
//!
//! Layout (little endian): magic `MIGRFLD1`, u32 rank (= 3), three u64 dims, u8 dtype
//! (0 = f64, 1 = complex f64 as re/im pairs), three f64 origin, three f64 spacing, then
//! the row-major payload with the last axis fastest.

use std::collections::BTreeMap;
use std::fs;
use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::grid::{ComplexField, Grid3, ScalarField};

pub const MAGIC: &[u8; 8] = b"MIGRFLD1";
pub const HEADER_LEN: usize = 8 + 4 + 24 + 1 + 24 + 24;

#[derive(Debug, Clone, PartialEq)]
pub enum Payload {
    Real(Vec<f64>),
    Complex(Vec<Complex64>),
}

impl Payload {
    pub fn len(&self) -> usize {
        match self {
            Payload::Real(v) => v.len(),
            Payload::Complex(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    fn dtype(&self) -> u8 {
        match self {
            Payload::Real(_) => 0,
            Payload::Complex(_) => 1,
        }
    }
}

/// A rank-3 array with optional grid geometry.
#[derive(Debug, Clone, PartialEq)]
pub struct RawArray {
    pub dims: [usize; 3],
    pub origin: [f64; 3],
    pub spacing: [f64; 3],
    pub payload: Payload,
}

impl RawArray {
    pub fn encode(&self) -> Result<Vec<u8>> {
        if self.payload.len() != self.dims.iter().product::<usize>() {
            return Err(Error::ShapeMismatch("payload length does not match dims".into()));
        }
        let width = if self.payload.dtype() == 0 { 8 } else { 16 };
        let mut out = Vec::with_capacity(HEADER_LEN + width * self.payload.len());
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&3u32.to_le_bytes());
        for d in self.dims {
            out.extend_from_slice(&(d as u64).to_le_bytes());
        }
        out.push(self.payload.dtype());
        for v in self.origin.iter().chain(&self.spacing) {
            out.extend_from_slice(&v.to_le_bytes());
        }
        match &self.payload {
            Payload::Real(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Payload::Complex(v) => v.iter().for_each(|z| {
                out.extend_from_slice(&z.re.to_le_bytes());
                out.extend_from_slice(&z.im.to_le_bytes());
            }),
        }
        Ok(out)
    }

    pub fn decode(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 8 {
            return Err(Error::Truncated("shorter than the magic".into()));
        }
        if &bytes[..8] != MAGIC {
            return Err(Error::BadMagic);
        }
        if bytes.len() < HEADER_LEN {
            return Err(Error::Truncated(format!("header needs {HEADER_LEN} bytes, got {}", bytes.len())));
        }
        let rank = u32::from_le_bytes(bytes[8..12].try_into().unwrap());
        if rank != 3 {
            return Err(Error::Metadata(format!("unsupported rank {rank}")));
        }
        let u64_at = |o: usize| u64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let f64_at = |o: usize| f64::from_le_bytes(bytes[o..o + 8].try_into().unwrap());
        let dims = [u64_at(12) as usize, u64_at(20) as usize, u64_at(28) as usize];
        let dtype = bytes[36];
        let origin = [f64_at(37), f64_at(45), f64_at(53)];
        let spacing = [f64_at(61), f64_at(69), f64_at(77)];
        let width = match dtype {
            0 => 8,
            1 => 16,
            t => return Err(Error::UnknownDtype(t)),
        };
        let count = dims
            .iter()
            .try_fold(1usize, |acc, &d| acc.checked_mul(d))
            .ok_or_else(|| Error::Metadata("dims overflow".into()))?;
        let need = count
            .checked_mul(width)
            .and_then(|n| n.checked_add(HEADER_LEN))
            .ok_or_else(|| Error::Metadata("dims overflow".into()))?;
        if bytes.len() < need {
            return Err(Error::Truncated(format!("payload needs {need} bytes, got {}", bytes.len())));
        }
        let body = &bytes[HEADER_LEN..need];
        let payload = if dtype == 0 {
            Payload::Real(body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect())
        } else {
            Payload::Complex(
                body.chunks_exact(16)
                    .map(|c| {
                        Complex64::new(
                            f64::from_le_bytes(c[..8].try_into().unwrap()),
                            f64::from_le_bytes(c[8..].try_into().unwrap()),
                        )
                    })
                    .collect(),
            )
        };
        Ok(Self { dims, origin, spacing, payload })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        let bytes = self.encode()?;
        let mut f = fs::File::create(path)?;
        f.write_all(&bytes)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        let mut bytes = Vec::new();
        fs::File::open(path)?.read_to_end(&mut bytes)?;
        Self::decode(&bytes)
    }

    fn grid(&self) -> Result<Grid3> {
        Grid3::new(self.origin, self.spacing, self.dims)
    }
}

impl From<&ScalarField> for RawArray {
    fn from(f: &ScalarField) -> Self {
        let g = f.grid();
        Self {
            dims: g.counts(),
            origin: g.origin(),
            spacing: g.spacing(),
            payload: Payload::Real(f.values().to_vec()),
        }
    }
}

impl From<&ComplexField> for RawArray {
    fn from(f: &ComplexField) -> Self {
        let g = f.grid();
        Self {
            dims: g.counts(),
            origin: g.origin(),
            spacing: g.spacing(),
            payload: Payload::Complex(f.values().to_vec()),
        }
    }
}

pub fn write_scalar_field(path: &Path, field: &ScalarField) -> Result<()> {
    RawArray::from(field).write(path)
}

pub fn read_scalar_field(path: &Path) -> Result<ScalarField> {
    let raw = RawArray::read(path)?;
    let grid = raw.grid()?;
    match raw.payload {
        Payload::Real(v) => ScalarField::new(grid, v),
        Payload::Complex(_) => Err(Error::Metadata("expected a real field, found complex".into())),
    }
}

pub fn write_complex_field(path: &Path, field: &ComplexField) -> Result<()> {
    RawArray::from(field).write(path)
}

pub fn read_complex_field(path: &Path) -> Result<ComplexField> {
    let raw = RawArray::read(path)?;
    let grid = raw.grid()?;
    match raw.payload {
        Payload::Complex(v) => ComplexField::new(grid, v),
        Payload::Real(v) => ComplexField::new(grid, v.into_iter().map(|x| Complex64::new(x, 0.0)).collect()),
    }
}

/// Ordered key=value sidecar.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Metadata(pub BTreeMap<String, String>);

impl Metadata {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn set(&mut self, key: &str, value: impl ToString) -> &mut Self {
        self.0.insert(key.to_string(), value.to_string());
        self
    }

    pub fn get(&self, key: &str) -> Option<&str> {
        self.0.get(key).map(String::as_str)
    }

    pub fn require(&self, key: &str) -> Result<&str> {
        self.get(key).ok_or_else(|| Error::Metadata(format!("missing key `{key}`")))
    }

    pub fn require_f64(&self, key: &str) -> Result<f64> {
        let s = self.require(key)?;
        s.parse().map_err(|_| Error::Metadata(format!("`{key}` is not a number: {s}")))
    }

    pub fn render(&self) -> Result<String> {
        let mut s = String::new();
        for (k, v) in &self.0 {
            if k.is_empty() || k.contains(['=', '\n']) || v.contains('\n') {
                return Err(Error::Metadata(format!("unrepresentable entry `{k}`")));
            }
            s.push_str(k);
            s.push('=');
            s.push_str(v);
            s.push('\n');
        }
        Ok(s)
    }

    pub fn parse(text: &str) -> Result<Self> {
        let mut map = BTreeMap::new();
        for (n, line) in text.lines().enumerate() {
            if line.trim().is_empty() || line.starts_with('#') {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::Metadata(format!("line {} has no `=`", n + 1)))?;
            map.insert(k.trim().to_string(), v.trim().to_string());
        }
        Ok(Self(map))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.render()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }
}

/// Sidecar path: same stem, `.meta` extension.
pub fn sidecar_path(path: &Path) -> PathBuf {
    path.with_extension("meta")
}
