//! Binary checkpoint container.
//!
//! Layout (all integers little-endian):
//!
//! ```text
//! magic      8 bytes  "SQRDCKPT"
//! version    u32
//! tag        4 bytes  section tag, e.g. "ENCD" (pretrained encoder) or "CPIM"
//! header     u64 length + UTF-8 JSON (configs, provenance, log tail)
//! sections   u32 count, then per section: u32 name length, name,
//!            u64 value count, values as f64
//! checksum   32 bytes SHA-256 of everything above
//! ```

use std::path::Path;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};

pub const MAGIC: &[u8; 8] = b"SQRDCKPT";
pub const FORMAT_VERSION: u32 = 1;
pub const TAG_ENCODER: [u8; 4] = *b"ENCD";
pub const TAG_CPI: [u8; 4] = *b"CPIM";

#[derive(Debug, Clone, PartialEq)]
pub struct Container {
    pub tag: [u8; 4],
    pub header: String,
    pub sections: Vec<(String, Vec<f64>)>,
}

impl Container {
    pub fn section(&self, name: &str) -> Result<&[f64]> {
        self.sections
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, v)| v.as_slice())
            .ok_or_else(|| Error::Checkpoint(format!("missing section {name:?}")))
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let payload: usize = self.sections.iter().map(|(n, v)| 12 + n.len() + 8 * v.len()).sum();
        let mut out = Vec::with_capacity(64 + self.header.len() + payload);
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&FORMAT_VERSION.to_le_bytes());
        out.extend_from_slice(&self.tag);
        out.extend_from_slice(&(self.header.len() as u64).to_le_bytes());
        out.extend_from_slice(self.header.as_bytes());
        out.extend_from_slice(&(self.sections.len() as u32).to_le_bytes());
        for (name, values) in &self.sections {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            out.extend_from_slice(&(values.len() as u64).to_le_bytes());
            for v in values {
                out.extend_from_slice(&v.to_le_bytes());
            }
        }
        let digest = Sha256::digest(&out);
        out.extend_from_slice(&digest);
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < MAGIC.len() + 32 || &bytes[..MAGIC.len()] != MAGIC {
            return Err(Error::Checkpoint("not a checkpoint file (bad magic)".into()));
        }
        let (body, digest) = bytes.split_at(bytes.len() - 32);
        if Sha256::digest(body).as_slice() != digest {
            return Err(Error::Checkpoint("checksum mismatch (truncated or corrupted file)".into()));
        }
        let mut r = Reader { buf: body, pos: MAGIC.len() };
        let version = r.u32()?;
        if version != FORMAT_VERSION {
            return Err(Error::Checkpoint(format!(
                "format version {version} is not supported (expected {FORMAT_VERSION})"
            )));
        }
        let tag: [u8; 4] = r.take(4)?.try_into().expect("4 bytes");
        let header_len = r.u64()? as usize;
        let header = String::from_utf8(r.take(header_len)?.to_vec())
            .map_err(|_| Error::Checkpoint("header is not UTF-8".into()))?;
        let count = r.u32()?;
        let mut sections = Vec::with_capacity(count as usize);
        for _ in 0..count {
            let name_len = r.u32()? as usize;
            let name = String::from_utf8(r.take(name_len)?.to_vec())
                .map_err(|_| Error::Checkpoint("section name is not UTF-8".into()))?;
            let n = r.u64()? as usize;
            let raw = r.take(n.checked_mul(8).ok_or_else(|| Error::Checkpoint("section too large".into()))?)?;
            let values = raw
                .chunks_exact(8)
                .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                .collect();
            sections.push((name, values));
        }
        if r.pos != body.len() {
            return Err(Error::Checkpoint("trailing bytes after last section".into()));
        }
        Ok(Self { tag, header, sections })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
            std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        }
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::Checkpoint("unexpected end of data".into()));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}
