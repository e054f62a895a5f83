//! `.navc` container: fixed little-endian header, range-coded payload, CRC32.
//!
//! ```text
//! "NAVC" | u8 version | u16 T H W | u8 C | u8 L | u16 t h w | u16 c
//!        | u64 model hash | u32 payload length | payload | u32 crc32
//! ```
//! The CRC covers the payload only; header fields are checked structurally.

use crate::error::{Error, Result};

pub const MAGIC: [u8; 4] = *b"NAVC";
pub const VERSION: u8 = 1;
pub const HEADER_LEN: usize = 33;
const CRC_LEN: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct StreamHeader {
    pub frames: u16,
    pub height: u16,
    pub width: u16,
    pub channels: u8,
    /// Largest latent symbol `L`.
    pub max_symbol: u8,
    pub latent: [u16; 3],
    pub latent_channels: u16,
    pub model_hash: u64,
}

impl StreamHeader {
    /// Latent grid dimensions `[t, h, w, c]`.
    pub fn latent_dims(&self) -> [usize; 4] {
        let [t, h, w] = self.latent.map(usize::from);
        [t, h, w, usize::from(self.latent_channels)]
    }
}

pub fn write_stream(header: &StreamHeader, payload: &[u8]) -> Result<Vec<u8>> {
    let payload_len = u32::try_from(payload.len())
        .map_err(|_| Error::OutOfBounds(format!("payload of {} bytes", payload.len())))?;
    let mut out = Vec::with_capacity(HEADER_LEN + payload.len() + CRC_LEN);
    out.extend_from_slice(&MAGIC);
    out.push(VERSION);
    for v in [header.frames, header.height, header.width] {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.push(header.channels);
    out.push(header.max_symbol);
    for v in header.latent {
        out.extend_from_slice(&v.to_le_bytes());
    }
    out.extend_from_slice(&header.latent_channels.to_le_bytes());
    out.extend_from_slice(&header.model_hash.to_le_bytes());
    out.extend_from_slice(&payload_len.to_le_bytes());
    out.extend_from_slice(payload);
    let crc = crc32fast::hash(payload);
    out.extend_from_slice(&crc.to_le_bytes());
    Ok(out)
}

struct Reader<'a> {
    bytes: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.bytes[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u8(&mut self) -> u8 {
        self.take(1)[0]
    }

    fn u16(&mut self) -> u16 {
        u16::from_le_bytes(self.take(2).try_into().unwrap())
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }
}

/// Validates framing and checksum and returns the header and payload.
pub fn read_stream(bytes: &[u8]) -> Result<(StreamHeader, &[u8])> {
    if bytes.len() < HEADER_LEN + CRC_LEN {
        return Err(Error::CorruptStream(format!("{} bytes is shorter than the header", bytes.len())));
    }
    if bytes[..4] != MAGIC {
        return Err(Error::CorruptStream("bad magic".into()));
    }
    let mut r = Reader { bytes, pos: 4 };
    let version = r.u8();
    if version != VERSION {
        return Err(Error::CorruptStream(format!("unsupported version {version}")));
    }
    let (frames, height, width) = (r.u16(), r.u16(), r.u16());
    let channels = r.u8();
    let max_symbol = r.u8();
    let latent = [r.u16(), r.u16(), r.u16()];
    let latent_channels = r.u16();
    let model_hash = r.u64();
    let payload_len = r.u32() as usize;
    if bytes.len() - HEADER_LEN - CRC_LEN != payload_len {
        return Err(Error::CorruptStream(format!(
            "header announces {payload_len} payload bytes, found {}",
            bytes.len() - HEADER_LEN - CRC_LEN
        )));
    }
    let payload = r.take(payload_len);
    let stored = r.u32();
    if crc32fast::hash(payload) != stored {
        return Err(Error::CorruptStream("checksum mismatch".into()));
    }
    let header = StreamHeader {
        frames,
        height,
        width,
        channels,
        max_symbol,
        latent,
        latent_channels,
        model_hash,
    };
    Ok((header, payload))
}
