//! Versioned binary model container.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic      6 bytes  "CENTLM"
//! version    u16
//! header     u32 length + UTF-8 JSON {format_version, kind, toolkit_version, metadata}
//! vocabulary u64 length + the vocabulary text form
//! payload    u64 length + model-specific records
//! ```
//!
//! JSON objects serialize with sorted keys, so identical models produce
//! identical bytes.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::corpus::Vocabulary;
use crate::error::{Error, Result};

pub const MAGIC: &[u8; 6] = b"CENTLM";
pub const FORMAT_VERSION: u16 = 1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ModelKind {
    Kn,
    Rnn,
    Srnn,
}

#[derive(Serialize, Deserialize)]
struct Header {
    format_version: u16,
    kind: ModelKind,
    toolkit_version: String,
    metadata: serde_json::Value,
}

#[derive(Clone, Debug, PartialEq)]
pub struct Container {
    pub kind: ModelKind,
    pub toolkit_version: String,
    pub metadata: serde_json::Value,
    pub vocab: Vocabulary,
    pub payload: Vec<u8>,
}

impl Container {
    pub fn new(kind: ModelKind, metadata: serde_json::Value, vocab: Vocabulary, payload: Vec<u8>) -> Self {
        Container {
            kind,
            toolkit_version: crate::VERSION.to_owned(),
            metadata,
            vocab,
            payload,
        }
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let header = Header {
            format_version: FORMAT_VERSION,
            kind: self.kind,
            toolkit_version: self.toolkit_version.clone(),
            metadata: self.metadata.clone(),
        };
        let header = serde_json::to_vec(&header).expect("header serializes");
        let vocab = self.vocab.to_text().into_bytes();

        let mut w = PayloadWriter::with_capacity(header.len() + vocab.len() + self.payload.len() + 32);
        w.buf.extend_from_slice(MAGIC);
        w.put_u16(FORMAT_VERSION);
        w.put_u32(header.len() as u32);
        w.buf.extend_from_slice(&header);
        w.put_u64(vocab.len() as u64);
        w.buf.extend_from_slice(&vocab);
        w.put_u64(self.payload.len() as u64);
        w.buf.extend_from_slice(&self.payload);
        w.into_inner()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = PayloadReader::new(bytes);
        if r.take(MAGIC.len())? != MAGIC {
            return Err(Error::format("model container", "bad magic bytes"));
        }
        let version = r.get_u16()?;
        if version != FORMAT_VERSION {
            return Err(Error::format("model container", format!("unsupported version {version}")));
        }
        let len = r.get_u32()? as usize;
        let header: Header = serde_json::from_slice(r.take(len)?)
            .map_err(|e| Error::format("model container", format!("header: {e}")))?;
        let len = r.get_u64()? as usize;
        let vocab_text = std::str::from_utf8(r.take(len)?)
            .map_err(|_| Error::format("model container", "vocabulary is not UTF-8"))?;
        let vocab = Vocabulary::parse(vocab_text)?;
        let len = r.get_u64()? as usize;
        let payload = r.take(len)?.to_vec();
        if !r.is_empty() {
            return Err(Error::format("model container", "trailing bytes"));
        }
        Ok(Container {
            kind: header.kind,
            toolkit_version: header.toolkit_version,
            metadata: header.metadata,
            vocab,
            payload,
        })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }

    pub fn expect_kind(&self, kind: ModelKind) -> Result<()> {
        if self.kind != kind {
            return Err(Error::format(
                "model container",
                format!("expected a {kind:?} model, found {:?}", self.kind),
            ));
        }
        Ok(())
    }

    pub fn metadata_as<T: for<'de> Deserialize<'de>>(&self) -> Result<T> {
        serde_json::from_value(self.metadata.clone())
            .map_err(|e| Error::format("model metadata", e.to_string()))
    }
}

#[derive(Default)]
pub struct PayloadWriter {
    buf: Vec<u8>,
}

impl PayloadWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        PayloadWriter {
            buf: Vec::with_capacity(n),
        }
    }

    pub fn put_u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }

    pub fn put_f64s(&mut self, values: &[f64]) {
        self.put_u64(values.len() as u64);
        for v in values {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct PayloadReader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> PayloadReader<'a> {
    pub fn new(bytes: &'a [u8]) -> Self {
        PayloadReader { bytes, pos: 0 }
    }

    pub fn is_empty(&self) -> bool {
        self.pos == self.bytes.len()
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&end| end <= self.bytes.len())
            .ok_or_else(|| Error::format("model payload", "unexpected end of data"))?;
        let out = &self.bytes[self.pos..end];
        self.pos = end;
        Ok(out)
    }

    fn array<const N: usize>(&mut self) -> Result<[u8; N]> {
        Ok(self.take(N)?.try_into().expect("length checked"))
    }

    pub fn get_u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.array()?))
    }

    pub fn get_u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.array()?))
    }

    pub fn get_u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.array()?))
    }

    pub fn get_f64s(&mut self) -> Result<Vec<f64>> {
        let n = self.get_u64()? as usize;
        let raw = self.take(n.checked_mul(8).ok_or_else(|| Error::format("model payload", "length overflow"))?)?;
        Ok(raw
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
            .collect())
    }
}
