//! Binary model container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic        8 bytes, identifies the model kind and version
//! header_len   u64
//! header       header_len bytes of UTF-8 JSON
//! sections     raw little-endian f32 or f64 arrays, in the order and with
//!              the lengths recorded in the header
//! ```
//!
//! Floats are stored as raw bits, so a save/load round trip is bit-exact.

use std::io::{Read, Write};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::Serialize;

use crate::error::{Error, Result};

pub(crate) struct Writer<W: Write> {
    inner: W,
}

impl<W: Write> Writer<W> {
    pub(crate) fn new(mut inner: W, magic: &[u8; 8], header: &impl Serialize) -> std::io::Result<Self> {
        let header = serde_json::to_vec(header).expect("headers always serialize");
        inner.write_all(magic)?;
        inner.write_all(&(header.len() as u64).to_le_bytes())?;
        inner.write_all(&header)?;
        Ok(Self { inner })
    }

    pub(crate) fn f32s(&mut self, values: &[f32]) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 4);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)
    }

    pub(crate) fn f64s(&mut self, values: &[f64]) -> std::io::Result<()> {
        let mut buf = Vec::with_capacity(values.len() * 8);
        for v in values {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        self.inner.write_all(&buf)
    }

    pub(crate) fn finish(mut self) -> std::io::Result<()> {
        self.inner.flush()
    }
}

pub(crate) struct Reader<R: Read> {
    inner: R,
}

impl<R: Read> Reader<R> {
    pub(crate) fn open<H: DeserializeOwned>(mut inner: R, magic: &[u8; 8]) -> Result<(Self, H)> {
        let mut got = [0u8; 8];
        inner
            .read_exact(&mut got)
            .map_err(|e| Error::BadModelFile(format!("missing magic: {e}")))?;
        if &got != magic {
            return Err(Error::BadModelFile(format!(
                "unexpected magic {:?}, expected {:?}",
                String::from_utf8_lossy(&got),
                String::from_utf8_lossy(magic)
            )));
        }
        let mut len = [0u8; 8];
        inner
            .read_exact(&mut len)
            .map_err(|e| Error::BadModelFile(format!("missing header length: {e}")))?;
        let len = u64::from_le_bytes(len) as usize;
        let mut header = vec![0u8; len];
        inner
            .read_exact(&mut header)
            .map_err(|e| Error::BadModelFile(format!("truncated header: {e}")))?;
        let header = serde_json::from_slice(&header)
            .map_err(|e| Error::BadModelFile(format!("bad header: {e}")))?;
        Ok((Self { inner }, header))
    }

    pub(crate) fn f32s(&mut self, len: usize) -> Result<Vec<f32>> {
        let mut buf = vec![0u8; len * 4];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::BadModelFile(format!("truncated f32 section: {e}")))?;
        Ok(buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }

    pub(crate) fn f64s(&mut self, len: usize) -> Result<Vec<f64>> {
        let mut buf = vec![0u8; len * 8];
        self.inner
            .read_exact(&mut buf)
            .map_err(|e| Error::BadModelFile(format!("truncated f64 section: {e}")))?;
        Ok(buf
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect())
    }
}

pub(crate) fn create(path: &Path) -> Result<std::io::BufWriter<std::fs::File>> {
    let file = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufWriter::new(file))
}

pub(crate) fn open(path: &Path) -> Result<std::io::BufReader<std::fs::File>> {
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    Ok(std::io::BufReader::new(file))
}
