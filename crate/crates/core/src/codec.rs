//! Little-endian byte cursors and the `{u32 len, u32 crc32, body}` frame
//! shared by `store.wal` and `db.wal`.

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
#[error("truncated or malformed input at byte {at}")]
pub struct DecodeError {
    pub at: usize,
}

#[derive(Default, Debug, Clone)]
pub struct ByteWriter {
    buf: Vec<u8>,
}

impl ByteWriter {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn with_capacity(n: usize) -> Self {
        ByteWriter {
            buf: Vec::with_capacity(n),
        }
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

    pub fn raw(&mut self, v: &[u8]) -> &mut Self {
        self.buf.extend_from_slice(v);
        self
    }

    /// u32 length prefix followed by the bytes.
    pub fn bytes(&mut self, v: &[u8]) -> &mut Self {
        self.u32(v.len() as u32);
        self.raw(v)
    }

    pub fn len(&self) -> usize {
        self.buf.len()
    }

    pub fn is_empty(&self) -> bool {
        self.buf.is_empty()
    }

    pub fn into_inner(self) -> Vec<u8> {
        self.buf
    }
}

pub struct ByteReader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> ByteReader<'a> {
    pub fn new(buf: &'a [u8]) -> Self {
        ByteReader { buf, pos: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        let end = self
            .pos
            .checked_add(n)
            .filter(|&e| e <= self.buf.len())
            .ok_or(DecodeError { at: self.pos })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8, DecodeError> {
        Ok(self.take(1)?[0])
    }

    pub fn u32(&mut self) -> Result<u32, DecodeError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }

    pub fn u64(&mut self) -> Result<u64, DecodeError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn i64(&mut self) -> Result<i64, DecodeError> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }

    pub fn array<const N: usize>(&mut self) -> Result<[u8; N], DecodeError> {
        Ok(self.take(N)?.try_into().unwrap())
    }

    pub fn raw(&mut self, n: usize) -> Result<&'a [u8], DecodeError> {
        self.take(n)
    }

    pub fn bytes(&mut self) -> Result<&'a [u8], DecodeError> {
        let n = self.u32()? as usize;
        self.take(n)
    }

    pub fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }

    pub fn position(&self) -> usize {
        self.pos
    }

    pub fn finish(&self) -> Result<(), DecodeError> {
        if self.remaining() == 0 {
            Ok(())
        } else {
            Err(DecodeError { at: self.pos })
        }
    }
}

pub const FRAME_HEADER: usize = 8;

/// Frame checksum: CRC-32C, hardware-accelerated where available.
#[inline]
pub fn checksum(bytes: &[u8]) -> u32 {
    checksum_append(0, bytes)
}

/// Extends a checksum of some prefix with the bytes that follow it.
#[inline]
pub fn checksum_append(crc: u32, bytes: &[u8]) -> u32 {
    #[cfg(target_arch = "x86_64")]
    if bytes.len() <= SHORT_FRAME && std::arch::is_x86_feature_detected!("sse4.2") {
        // SAFETY: the feature was just detected.
        return unsafe { crc32c_sse42(crc, bytes) };
    }
    crc32c::crc32c_append(crc, bytes)
}

/// Inputs up to this length skip the crate's interleaved kernel, whose setup
/// costs more than the whole checksum of a short record.
const SHORT_FRAME: usize = 256;

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "sse4.2")]
unsafe fn crc32c_sse42(crc: u32, bytes: &[u8]) -> u32 {
    !crc32c_sse42_raw(!crc, bytes)
}

/// CRC-32C update on the raw, uninverted register.
#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "sse4.2")]
pub(crate) unsafe fn crc32c_sse42_raw(crc: u32, bytes: &[u8]) -> u32 {
    use std::arch::x86_64::{_mm_crc32_u64, _mm_crc32_u8};
    let mut crc = u64::from(crc);
    let mut words = bytes.chunks_exact(8);
    for w in &mut words {
        crc = _mm_crc32_u64(crc, u64::from_le_bytes(w.try_into().unwrap()));
    }
    let mut crc = crc as u32;
    for &b in words.remainder() {
        crc = _mm_crc32_u8(crc, b);
    }
    crc
}

pub fn encode_frame(body: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(FRAME_HEADER + body.len());
    out.extend_from_slice(&(body.len() as u32).to_le_bytes());
    out.extend_from_slice(&checksum(body).to_le_bytes());
    out.extend_from_slice(body);
    out
}

/// How a frame scan ended.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TailState {
    /// Every byte belongs to a valid frame.
    Clean,
    /// The last frame is incomplete or fails its checksum and nothing follows
    /// it: an interrupted write.
    Torn,
    /// A checksum failure with more data after it.
    Corrupt { at: usize },
}

#[derive(Debug)]
pub struct FrameScan<'a> {
    pub bodies: Vec<&'a [u8]>,
    /// Byte length of the valid prefix.
    pub valid_len: usize,
    pub tail: TailState,
}

pub fn scan_frames(data: &[u8]) -> FrameScan<'_> {
    let mut bodies = Vec::new();
    let mut pos = 0usize;
    let tail = loop {
        if pos == data.len() {
            break TailState::Clean;
        }
        if data.len() - pos < FRAME_HEADER {
            break TailState::Torn;
        }
        let len = u32::from_le_bytes(data[pos..pos + 4].try_into().unwrap()) as usize;
        let crc = u32::from_le_bytes(data[pos + 4..pos + 8].try_into().unwrap());
        let end = match (pos + FRAME_HEADER).checked_add(len) {
            Some(e) if e <= data.len() => e,
            _ => break TailState::Torn,
        };
        let body = &data[pos + FRAME_HEADER..end];
        if checksum(body) != crc {
            if end == data.len() {
                break TailState::Torn;
            }
            break TailState::Corrupt { at: pos };
        }
        bodies.push(body);
        pos = end;
    };
    FrameScan {
        bodies,
        valid_len: pos,
        tail,
    }
}
