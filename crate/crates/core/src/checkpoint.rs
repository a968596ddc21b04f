//! Binary checkpoint container.
//!
//! Little-endian layout:
//!
//! ```text
//! "SDSP" | version: u32 | config digest: [u8; 32]
//! record*  where record = name_len: u32 | name: [u8] | rank: u32
//!                         | extents: [u32; rank] | payload: [f64; Π extents]
//! ```
//!
//! Records run to end of file. Model parameters come first, then optimizer
//! moments and counters, then RNG state, all in the same record format.

use std::path::Path;

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 4] = b"SDSP";
pub const VERSION: u32 = 1;

#[derive(Clone, Debug, PartialEq)]
pub struct Record {
    pub name: String,
    pub shape: Vec<usize>,
    pub data: Vec<f64>,
}

impl Record {
    pub fn new(name: impl Into<String>, shape: Vec<usize>, data: Vec<f64>) -> Self {
        debug_assert_eq!(shape.iter().product::<usize>(), data.len());
        Self {
            name: name.into(),
            shape,
            data,
        }
    }

    pub fn scalar(name: impl Into<String>, v: f64) -> Self {
        Self::new(name, Vec::new(), vec![v])
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Checkpoint {
    pub digest: [u8; 32],
    pub records: Vec<Record>,
}

impl Checkpoint {
    pub fn get(&self, name: &str) -> Result<&Record> {
        self.records
            .iter()
            .find(|r| r.name == name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing record `{name}`")))
    }

    pub fn scalar(&self, name: &str) -> Result<f64> {
        let r = self.get(name)?;
        match r.data[..] {
            [v] => Ok(v),
            _ => Err(Error::format("checkpoint", format!("`{name}` is not a scalar"))),
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.digest);
        for r in &self.records {
            out.extend_from_slice(&(r.name.len() as u32).to_le_bytes());
            out.extend_from_slice(r.name.as_bytes());
            out.extend_from_slice(&(r.shape.len() as u32).to_le_bytes());
            for &e in &r.shape {
                out.extend_from_slice(&(e as u32).to_le_bytes());
            }
            for v in &r.data {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut rd = Reader { bytes, pos: 0 };
        if rd.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = rd.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let digest: [u8; 32] = rd.take(32)?.try_into().unwrap();
        let mut records = Vec::new();
        while rd.pos < bytes.len() {
            let name_len = rd.u32()? as usize;
            let name = std::str::from_utf8(rd.take(name_len)?)
                .map_err(|e| Error::format("checkpoint", format!("record name: {e}")))?
                .to_string();
            let rank = rd.u32()? as usize;
            let shape = (0..rank)
                .map(|_| rd.u32().map(|e| e as usize))
                .collect::<Result<Vec<_>>>()?;
            let n: usize = shape.iter().product();
            let data = (0..n).map(|_| rd.f64()).collect::<Result<Vec<_>>>()?;
            records.push(Record { name, shape, data });
        }
        Ok(Self { digest, records })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.bytes.len())
            .ok_or_else(|| Error::format("checkpoint", format!("truncated at byte {}", self.pos)))?;
        let s = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
}
