//! Named-array archive with an embedded JSON document and a content hash.
//!
//! ```text
//! "NAVCARCH" | u32 version | u32 doc_len | doc (UTF-8 JSON) | u32 count
//!   count × ( u16 name_len | name | u8 ndim | ndim × u32 dim | f64 data... )
//! | u64 hash
//! ```
//! All integers and floats are little-endian. The hash is the first eight
//! bytes of the SHA-256 of everything before it, read as a little-endian u64.

use std::collections::BTreeMap;

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const MAGIC: [u8; 8] = *b"NAVCARCH";
pub const VERSION: u32 = 1;

const MAX_NAME: usize = 1024;
const MAX_DIMS: usize = 8;
const MAX_ARRAYS: usize = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct Archive {
    pub doc: String,
    pub arrays: BTreeMap<String, Tensor>,
    pub hash: u64,
}

fn digest(bytes: &[u8]) -> u64 {
    let d = Sha256::digest(bytes);
    u64::from_le_bytes(d[..8].try_into().expect("8 bytes"))
}

/// Serializes `doc` and `arrays` (in iteration order) and appends the hash.
pub fn write_archive<'a>(doc: &str, arrays: impl IntoIterator<Item = (&'a str, &'a Tensor)>) -> Result<Vec<u8>> {
    let arrays: Vec<_> = arrays.into_iter().collect();
    let mut out = Vec::new();
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    let doc_len = u32::try_from(doc.len()).map_err(|_| Error::OutOfBounds("archive document too large".into()))?;
    out.extend_from_slice(&doc_len.to_le_bytes());
    out.extend_from_slice(doc.as_bytes());
    if arrays.len() > MAX_ARRAYS {
        return Err(Error::OutOfBounds(format!("{} arrays", arrays.len())));
    }
    out.extend_from_slice(&(arrays.len() as u32).to_le_bytes());
    for (name, t) in arrays {
        if name.len() > MAX_NAME || t.shape().len() > MAX_DIMS {
            return Err(Error::OutOfBounds(format!("array {name} cannot be archived")));
        }
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(t.shape().len() as u8);
        for &d in t.shape() {
            let d = u32::try_from(d).map_err(|_| Error::OutOfBounds(format!("array {name} dimension {d}")))?;
            out.extend_from_slice(&d.to_le_bytes());
        }
        for v in t.data() {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    let hash = digest(&out);
    out.extend_from_slice(&hash.to_le_bytes());
    Ok(out)
}

struct Cursor<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Cursor<'a> {
    fn take(&mut self, n: usize, what: &str) -> Result<&'a [u8]> {
        if self.bytes.len() - self.pos < n {
            return Err(Error::CorruptCheckpoint(format!("truncated while reading {what}")));
        }
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    fn u8(&mut self, what: &str) -> Result<u8> {
        Ok(self.take(1, what)?[0])
    }

    fn u16(&mut self, what: &str) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2, what)?.try_into().unwrap()))
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn remaining(&self) -> usize {
        self.bytes.len() - self.pos
    }
}

pub fn read_archive(bytes: &[u8]) -> Result<Archive> {
    if bytes.len() < MAGIC.len() + 8 {
        return Err(Error::CorruptCheckpoint("file too short".into()));
    }
    let (body, tail) = bytes.split_at(bytes.len() - 8);
    let stored = u64::from_le_bytes(tail.try_into().unwrap());
    let hash = digest(body);
    if hash != stored {
        return Err(Error::CorruptCheckpoint("content hash mismatch".into()));
    }
    let mut c = Cursor { bytes: body, pos: 0 };
    if c.take(8, "magic")? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic".into()));
    }
    let version = c.u32("version")?;
    if version != VERSION {
        return Err(Error::CorruptCheckpoint(format!("unsupported version {version}")));
    }
    let doc_len = c.u32("document length")? as usize;
    let doc = std::str::from_utf8(c.take(doc_len, "document")?)
        .map_err(|_| Error::CorruptCheckpoint("document is not UTF-8".into()))?
        .to_owned();
    let count = c.u32("array count")? as usize;
    if count > MAX_ARRAYS {
        return Err(Error::CorruptCheckpoint(format!("{count} arrays")));
    }
    let mut arrays = BTreeMap::new();
    for _ in 0..count {
        let name_len = usize::from(c.u16("name length")?);
        if name_len > MAX_NAME {
            return Err(Error::CorruptCheckpoint(format!("name of {name_len} bytes")));
        }
        let name = std::str::from_utf8(c.take(name_len, "name")?)
            .map_err(|_| Error::CorruptCheckpoint("array name is not UTF-8".into()))?
            .to_owned();
        let ndim = usize::from(c.u8("rank")?);
        if ndim > MAX_DIMS {
            return Err(Error::CorruptCheckpoint(format!("array {name} has rank {ndim}")));
        }
        let mut shape = Vec::with_capacity(ndim);
        let mut n: usize = 1;
        for _ in 0..ndim {
            let d = c.u32("dimension")? as usize;
            n = n
                .checked_mul(d)
                .filter(|&n| n <= c.remaining() / 8)
                .ok_or_else(|| Error::CorruptCheckpoint(format!("array {name} is larger than the file")))?;
            shape.push(d);
        }
        let raw = c.take(n * 8, "array data")?;
        let data = raw
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect();
        if arrays.insert(name.clone(), Tensor::new(shape, data)?).is_some() {
            return Err(Error::CorruptCheckpoint(format!("duplicate array {name}")));
        }
    }
    if c.remaining() != 0 {
        return Err(Error::CorruptCheckpoint(format!("{} trailing bytes", c.remaining())));
    }
    Ok(Archive { doc, arrays, hash })
}
