//! Versioned chunked binary container shared by every on-disk artifact.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! offset  size  field
//! 0       8     magic  b"LDIFCNTR"
//! 8       2     version (u16, currently 1)
//! 10      4     artifact kind tag, ASCII (e.g. b"TGTS", b"CKPT")
//! 14      4     chunk count n (u32)
//! 18      ...   n chunks: tag [u8; 4], payload length (u64), payload
//! ```
//!
//! Chunk payloads are built with [`ChunkWriter`]; numeric arrays carry a
//! one-byte dtype tag (4 = f32, 8 = f64) followed by a u64 length.

use std::path::Path;

use crate::error::{Error, Result};
use crate::num::Real;

pub const MAGIC: &[u8; 8] = b"LDIFCNTR";
pub const VERSION: u16 = 1;

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub kind: [u8; 4],
    pub chunks: Vec<([u8; 4], Vec<u8>)>,
}

impl Container {
    pub fn new(kind: &[u8; 4]) -> Self {
        Self {
            kind: *kind,
            chunks: Vec::new(),
        }
    }

    pub fn push(&mut self, tag: &[u8; 4], payload: Vec<u8>) {
        self.chunks.push((*tag, payload));
    }

    pub fn chunk(&self, tag: &[u8; 4]) -> Result<&[u8]> {
        self.chunks
            .iter()
            .find(|(t, _)| t == tag)
            .map(|(_, p)| p.as_slice())
            .ok_or_else(|| Error::Format(format!("missing chunk {}", String::from_utf8_lossy(tag))))
    }

    pub fn has_chunk(&self, tag: &[u8; 4]) -> bool {
        self.chunks.iter().any(|(t, _)| t == tag)
    }

    pub fn expect_kind(&self, kind: &[u8; 4]) -> Result<()> {
        if &self.kind != kind {
            return Err(Error::Format(format!(
                "expected a {} container, found {}",
                String::from_utf8_lossy(kind),
                String::from_utf8_lossy(&self.kind)
            )));
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&self.kind);
        out.extend_from_slice(&(self.chunks.len() as u32).to_le_bytes());
        for (tag, payload) in &self.chunks {
            out.extend_from_slice(tag);
            out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
            out.extend_from_slice(payload);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = ChunkReader::new(bytes);
        let magic = r.take(8)?;
        if magic != MAGIC {
            return Err(Error::Format("bad container magic".into()));
        }
        let version = r.u16()?;
        if version != VERSION {
            return Err(Error::Format(format!("unsupported container version {version}")));
        }
        let kind = r.tag()?;
        let n = r.u32()? as usize;
        let mut chunks = Vec::with_capacity(n);
        for _ in 0..n {
            let tag = r.tag()?;
            let len = r.u64()? as usize;
            chunks.push((tag, r.take(len)?.to_vec()));
        }
        if !r.is_empty() {
            return Err(Error::Format("trailing bytes after last chunk".into()));
        }
        Ok(Self { kind, chunks })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn read(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

#[derive(Debug, Default)]
pub struct ChunkWriter {
    buf: Vec<u8>,
}

impl ChunkWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn u8(&mut self, v: u8) -> &mut Self {
        self.buf.push(v);
        self
    }

    pub fn u32(&mut self, v: u32) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn u64(&mut self, v: u64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn i64(&mut self, v: i64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn f64(&mut self, v: f64) -> &mut Self {
        self.buf.extend_from_slice(&v.to_le_bytes());
        self
    }

    pub fn str(&mut self, s: &str) -> &mut Self {
        self.u64(s.len() as u64);
        self.buf.extend_from_slice(s.as_bytes());
        self
    }

    pub fn array<T: Real>(&mut self, values: &[T]) -> &mut Self {
        self.u8(T::DTYPE);
        self.u64(values.len() as u64);
        self.buf.reserve(values.len() * T::BYTES);
        for &v in values {
            v.write_le(&mut self.buf);
        }
        self
    }

    pub fn finish(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ChunkReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> ChunkReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::Format("truncated container payload".into()));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn tag(&mut self) -> Result<[u8; 4]> {
        let mut t = [0u8; 4];
        t.copy_from_slice(self.take(4)?);
        Ok(t)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn str(&mut self) -> Result<String> {
        let n = self.u64()? as usize;
        String::from_utf8(self.take(n)?.to_vec()).map_err(|_| Error::Format("invalid utf-8 string".into()))
    }

    pub fn array<T: Real>(&mut self) -> Result<Vec<T>> {
        let dtype = self.u8()?;
        if dtype != T::DTYPE {
            return Err(Error::Format(format!(
                "array dtype {dtype} does not match the requested scalar width {}",
                T::DTYPE
            )));
        }
        let n = self.u64()? as usize;
        let raw = self.take(n.checked_mul(T::BYTES).ok_or_else(|| Error::Format("array too large".into()))?)?;
        Ok(raw.chunks_exact(T::BYTES).map(T::read_le).collect())
    }
}
