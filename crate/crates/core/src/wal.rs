//! Redo log for permanent-partition mutations.
//!
//! Records are framed `{u32 len, u32 crc32, body}` in `store.wal`; the body
//! is `{u64 lsn, u8 tag, payload}`. Appends are buffered in memory until
//! [`Wal::flush_log`]. A checksum failure in the last frame is a torn tail and
//! is discarded on open; one followed by more data is reported as corruption.

use std::io;

use thiserror::Error;

use crate::codec::{
    checksum, checksum_append, encode_frame, scan_frames, ByteReader, ByteWriter, DecodeError,
    TailState, FRAME_HEADER,
};
use crate::fid::Fid;
use crate::store::{PartitionKind, ValueLayout};
use crate::vfs::SharedDisk;

pub const WAL_FILE: &str = "store.wal";
pub const CKPT_FILE: &str = "store.ckpt";
pub const DEFAULT_SIZE_BOUND: u64 = 64 << 20;

const TAG_PUT: u8 = 1;
const TAG_DELETE: u8 = 2;
const TAG_CREATE: u8 = 3;
const TAG_CHECKPOINT: u8 = 4;

#[derive(Debug, Error)]
pub enum WalError {
    #[error("log is closed")]
    LogClosed,
    #[error("log i/o failure: {0}")]
    IoFailure(#[from] io::Error),
    #[error("log corrupt at byte {offset}")]
    CorruptLog { offset: usize },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum WalRecordKind {
    Put {
        fid: Fid,
        value: Vec<u8>,
    },
    Delete {
        fid: Fid,
    },
    CreatePartition {
        id: u32,
        kind: PartitionKind,
        layout: ValueLayout,
    },
    Checkpoint {
        durable_lsn: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WalRecord {
    pub lsn: u64,
    pub kind: WalRecordKind,
}

#[inline]
fn write_put(out: &mut Vec<u8>, lsn: u64, fid: Fid, value: &[u8]) {
    out.reserve(PUT_HEAD + value.len());
    out.extend_from_slice(&put_head(lsn, fid, value.len()));
    out.extend_from_slice(value);
}

#[inline]
fn put_head(lsn: u64, fid: Fid, len: usize) -> [u8; PUT_HEAD] {
    let mut head = [0u8; PUT_HEAD];
    head[..8].copy_from_slice(&lsn.to_le_bytes());
    head[8] = TAG_PUT;
    head[9..17].copy_from_slice(&fid.raw().to_le_bytes());
    head[17..].copy_from_slice(&(len as u32).to_le_bytes());
    head
}

/// Checksum of a put body, computed from its fields so that the frame just
/// written is never read back.
#[inline]
fn put_checksum(lsn: u64, fid: Fid, value: &[u8]) -> u32 {
    #[cfg(target_arch = "x86_64")]
    if std::arch::is_x86_feature_detected!("sse4.2") {
        // SAFETY: the feature was just detected.
        return unsafe { put_checksum_sse42(lsn, fid, value) };
    }
    checksum_append(checksum(&put_head(lsn, fid, value.len())), value)
}

#[cfg(target_arch = "x86_64")]
#[target_feature(enable = "sse4.2")]
unsafe fn put_checksum_sse42(lsn: u64, fid: Fid, value: &[u8]) -> u32 {
    use std::arch::x86_64::{_mm_crc32_u32, _mm_crc32_u64, _mm_crc32_u8};
    let crc = _mm_crc32_u64(u64::from(!0u32), lsn) as u32;
    let crc = _mm_crc32_u8(crc, TAG_PUT);
    let crc = _mm_crc32_u64(u64::from(crc), fid.raw()) as u32;
    let crc = _mm_crc32_u32(crc, value.len() as u32);
    !crate::codec::crc32c_sse42_raw(crc, value)
}

/// Put body bytes ahead of the value: lsn, tag, fid, value length.
const PUT_HEAD: usize = 21;

/// Appends one framed record built by `body` to `out`.
#[inline]
fn push_frame(out: &mut Vec<u8>, body: impl FnOnce(&mut Vec<u8>)) -> usize {
    let at = out.len();
    out.extend_from_slice(&[0; FRAME_HEADER]);
    body(out);
    let len = out.len() - at - FRAME_HEADER;
    let crc = checksum(&out[at + FRAME_HEADER..]);
    out[at..at + 4].copy_from_slice(&(len as u32).to_le_bytes());
    out[at + 4..at + FRAME_HEADER].copy_from_slice(&crc.to_le_bytes());
    FRAME_HEADER + len
}

impl WalRecord {
    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(32);
        match &self.kind {
            WalRecordKind::Put { fid, value } => {
                let mut out = Vec::with_capacity(PUT_HEAD + value.len());
                write_put(&mut out, self.lsn, *fid, value);
                return out;
            }
            WalRecordKind::Delete { fid } => {
                w.u64(self.lsn).u8(TAG_DELETE).u64(fid.raw());
            }
            WalRecordKind::CreatePartition { id, kind, layout } => {
                w.u64(self.lsn)
                    .u8(TAG_CREATE)
                    .u32(*id)
                    .u8(kind.code())
                    .u8(layout.code())
                    .u32(layout.width_or_zero());
            }
            WalRecordKind::Checkpoint { durable_lsn } => {
                w.u64(self.lsn).u8(TAG_CHECKPOINT).u64(*durable_lsn);
            }
        }
        w.into_inner()
    }

    pub fn decode_body(body: &[u8]) -> Result<Self, DecodeError> {
        let mut r = ByteReader::new(body);
        let lsn = r.u64()?;
        let at = r.position();
        let kind = match r.u8()? {
            TAG_PUT => {
                let fid = Fid(r.u64()?);
                let value = r.bytes()?.to_vec();
                WalRecordKind::Put { fid, value }
            }
            TAG_DELETE => WalRecordKind::Delete { fid: Fid(r.u64()?) },
            TAG_CREATE => {
                let id = r.u32()?;
                let kind = PartitionKind::from_code(r.u8()?).ok_or(DecodeError { at })?;
                let layout_code = r.u8()?;
                let width = r.u32()?;
                let layout =
                    ValueLayout::from_code(layout_code, width).ok_or(DecodeError { at })?;
                WalRecordKind::CreatePartition { id, kind, layout }
            }
            TAG_CHECKPOINT => WalRecordKind::Checkpoint {
                durable_lsn: r.u64()?,
            },
            _ => return Err(DecodeError { at }),
        };
        r.finish()?;
        Ok(WalRecord { lsn, kind })
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct WalStats {
    pub appended: u64,
    pub flushes: u64,
    pub bytes_flushed: u64,
    pub truncations: u64,
}

pub struct Wal {
    disk: SharedDisk,
    next_lsn: u64,
    durable_lsn: u64,
    unflushed_bytes: u64,
    bytes_since_checkpoint: u64,
    size_bound: u64,
    closed: bool,
    stats: WalStats,
    /// Frames appended since the last flush.
    pending: Vec<u8>,
}

/// What [`Wal::open`] found on disk.
#[derive(Debug)]
pub struct OpenedLog {
    pub records: Vec<WalRecord>,
    pub torn_bytes_discarded: usize,
}

impl Wal {
    /// Opens `store.wal`, discarding a torn tail. `floor_lsn` is the
    /// checkpoint's durable lsn; new lsns always exceed it.
    pub fn open(
        disk: SharedDisk,
        size_bound: u64,
        floor_lsn: u64,
    ) -> Result<(Wal, OpenedLog), WalError> {
        let data = disk.read(WAL_FILE)?.unwrap_or_default();
        let scan = scan_frames(&data);
        if let TailState::Corrupt { at } = scan.tail {
            return Err(WalError::CorruptLog { offset: at });
        }
        let mut records = Vec::with_capacity(scan.bodies.len());
        let mut offset = 0usize;
        let mut last = 0u64;
        for body in &scan.bodies {
            let rec = WalRecord::decode_body(body).map_err(|_| WalError::CorruptLog { offset })?;
            if rec.lsn <= last {
                return Err(WalError::CorruptLog { offset });
            }
            last = rec.lsn;
            offset += body.len() + crate::codec::FRAME_HEADER;
            records.push(rec);
        }
        let torn = data.len() - scan.valid_len;
        if torn > 0 {
            disk.write_atomic(WAL_FILE, &data[..scan.valid_len])?;
        }
        let top = last.max(floor_lsn);
        let wal = Wal {
            disk,
            next_lsn: top + 1,
            durable_lsn: top,
            unflushed_bytes: 0,
            bytes_since_checkpoint: scan.valid_len as u64,
            size_bound,
            closed: false,
            stats: WalStats::default(),
            pending: Vec::new(),
        };
        Ok((
            wal,
            OpenedLog {
                records,
                torn_bytes_discarded: torn,
            },
        ))
    }

    pub fn append(&mut self, kind: WalRecordKind) -> Result<u64, WalError> {
        if let WalRecordKind::Put { fid, value } = &kind {
            return self.append_put(*fid, value);
        }
        if self.closed {
            return Err(WalError::LogClosed);
        }
        let rec = WalRecord {
            lsn: self.next_lsn,
            kind,
        };
        let n = push_frame(&mut self.pending, |out| {
            out.extend_from_slice(&rec.encode_body())
        });
        Ok(self.appended(n))
    }

    /// [`Wal::append`] of a put without copying the value first.
    #[inline]
    pub fn append_put(&mut self, fid: Fid, value: &[u8]) -> Result<u64, WalError> {
        if self.closed {
            return Err(WalError::LogClosed);
        }
        let body_len = PUT_HEAD + value.len();
        let out = &mut self.pending;
        out.reserve(FRAME_HEADER + body_len);
        let at = out.len();
        out.extend_from_slice(&(body_len as u32).to_le_bytes());
        out.extend_from_slice(&[0; 4]);
        out.extend_from_slice(&put_head(self.next_lsn, fid, value.len()));
        out.extend_from_slice(value);
        let crc = put_checksum(self.next_lsn, fid, value);
        out[at + 4..at + FRAME_HEADER].copy_from_slice(&crc.to_le_bytes());
        Ok(self.appended(FRAME_HEADER + body_len))
    }

    #[inline]
    fn appended(&mut self, frame_len: usize) -> u64 {
        let lsn = self.next_lsn;
        self.next_lsn += 1;
        self.unflushed_bytes += frame_len as u64;
        self.bytes_since_checkpoint += frame_len as u64;
        self.stats.appended += 1;
        lsn
    }

    /// Makes every appended record durable. Returns the highest durable lsn.
    /// A failure closes the log; the owning zone must restart and recover.
    pub fn flush_log(&mut self) -> Result<u64, WalError> {
        if self.closed {
            return Err(WalError::LogClosed);
        }
        if self.unflushed_bytes == 0 {
            return Ok(self.durable_lsn);
        }
        let r = self
            .disk
            .append(WAL_FILE, &self.pending)
            .and_then(|()| self.disk.sync(WAL_FILE));
        self.pending.clear();
        if let Err(e) = r {
            self.closed = true;
            return Err(e.into());
        }
        self.stats.flushes += 1;
        self.stats.bytes_flushed += self.unflushed_bytes;
        self.unflushed_bytes = 0;
        self.durable_lsn = self.next_lsn - 1;
        Ok(self.durable_lsn)
    }

    /// Replaces the log with a single checkpoint marker for `ckpt_lsn`.
    /// Callers must have flushed and persisted the image first.
    pub(crate) fn restart_after_checkpoint(&mut self, ckpt_lsn: u64) -> Result<(), WalError> {
        if self.closed {
            return Err(WalError::LogClosed);
        }
        let rec = WalRecord {
            lsn: self.next_lsn,
            kind: WalRecordKind::Checkpoint {
                durable_lsn: ckpt_lsn,
            },
        };
        let frame = encode_frame(&rec.encode_body());
        self.pending.clear();
        self.disk.write_atomic(WAL_FILE, &frame)?;
        self.next_lsn += 1;
        self.durable_lsn = rec.lsn;
        self.unflushed_bytes = 0;
        self.bytes_since_checkpoint = frame.len() as u64;
        self.stats.truncations += 1;
        Ok(())
    }

    pub fn is_closed(&self) -> bool {
        self.closed
    }

    pub fn next_lsn(&self) -> u64 {
        self.next_lsn
    }

    pub fn durable_lsn(&self) -> u64 {
        self.durable_lsn
    }

    pub fn last_lsn(&self) -> u64 {
        self.next_lsn - 1
    }

    pub fn bytes_since_checkpoint(&self) -> u64 {
        self.bytes_since_checkpoint
    }

    pub fn size_bound(&self) -> u64 {
        self.size_bound
    }

    pub fn over_bound(&self) -> bool {
        self.bytes_since_checkpoint > self.size_bound
    }

    pub fn stats(&self) -> WalStats {
        self.stats
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vfs::{Disk, MemDisk};
    use std::sync::Arc;

    fn put(n: u64) -> WalRecordKind {
        WalRecordKind::Put {
            fid: Fid(n),
            value: vec![n as u8; 4],
        }
    }

    #[test]
    fn put_checksum_matches_the_encoded_body() {
        for len in [1, 4, 7, 8, 9, 100, 300] {
            let value: Vec<u8> = (0..len).map(|i| (i * 7 + len) as u8).collect();
            let rec = WalRecord {
                lsn: 42 + len as u64,
                kind: WalRecordKind::Put {
                    fid: Fid(0xdead_beef_0000 + len as u64),
                    value: value.clone(),
                },
            };
            let expected = checksum(&rec.encode_body());
            assert_eq!(
                put_checksum(rec.lsn, Fid(0xdead_beef_0000 + len as u64), &value),
                expected
            );
        }
    }

    #[test]
    fn lsns_start_at_one_and_increase() {
        let disk = MemDisk::new();
        let (mut wal, opened) = Wal::open(Arc::new(disk), DEFAULT_SIZE_BOUND, 0).unwrap();
        assert!(opened.records.is_empty());
        assert_eq!(wal.append(put(1)).unwrap(), 1);
        assert_eq!(wal.append(put(2)).unwrap(), 2);
        assert_eq!(wal.append(put(3)).unwrap(), 3);
    }

    #[test]
    fn empty_flush_is_free() {
        let disk = MemDisk::new();
        let (mut wal, _) = Wal::open(Arc::new(disk.clone()), DEFAULT_SIZE_BOUND, 0).unwrap();
        assert_eq!(wal.flush_log().unwrap(), 0);
        assert_eq!(disk.sync_count(), 0);
        wal.append(put(1)).unwrap();
        assert_eq!(wal.flush_log().unwrap(), 1);
        assert_eq!(wal.flush_log().unwrap(), 1);
        assert_eq!(disk.sync_count(), 1);
    }

    #[test]
    fn unflushed_records_do_not_survive_and_lsns_continue() {
        let disk = MemDisk::new();
        let (mut wal, _) = Wal::open(Arc::new(disk.clone()), DEFAULT_SIZE_BOUND, 0).unwrap();
        wal.append(put(1)).unwrap();
        wal.append(put(2)).unwrap();
        wal.flush_log().unwrap();
        wal.append(put(3)).unwrap();
        disk.crash();
        let (mut wal, opened) = Wal::open(Arc::new(disk), DEFAULT_SIZE_BOUND, 0).unwrap();
        assert_eq!(opened.records.len(), 2);
        assert_eq!(opened.records[1].kind, put(2));
        assert_eq!(wal.append(put(9)).unwrap(), 3);
    }

    #[test]
    fn torn_tail_is_dropped_and_rewritten() {
        let disk = MemDisk::new();
        let (mut wal, _) = Wal::open(Arc::new(disk.clone()), DEFAULT_SIZE_BOUND, 0).unwrap();
        for i in 0..3 {
            wal.append(put(i)).unwrap();
        }
        wal.flush_log().unwrap();
        let len = disk.durable_len(WAL_FILE).unwrap();
        disk.truncate_durable(WAL_FILE, len - 3);
        let (_, opened) = Wal::open(Arc::new(disk.clone()), DEFAULT_SIZE_BOUND, 0).unwrap();
        assert_eq!(opened.records.len(), 2);
        assert!(opened.torn_bytes_discarded > 0);
        let (_, again) = Wal::open(Arc::new(disk), DEFAULT_SIZE_BOUND, 0).unwrap();
        assert_eq!(again.torn_bytes_discarded, 0);
        assert_eq!(again.records.len(), 2);
    }

    #[test]
    fn interior_corruption_is_reported() {
        let disk = MemDisk::new();
        let (mut wal, _) = Wal::open(Arc::new(disk.clone()), DEFAULT_SIZE_BOUND, 0).unwrap();
        for i in 0..3 {
            wal.append(put(i)).unwrap();
        }
        wal.flush_log().unwrap();
        disk.corrupt_byte(WAL_FILE, 10, 0xff);
        assert!(matches!(
            Wal::open(Arc::new(disk), DEFAULT_SIZE_BOUND, 0),
            Err(WalError::CorruptLog { offset: 0 })
        ));
    }

    #[test]
    fn sync_failure_closes_the_log() {
        let disk = MemDisk::new();
        let (mut wal, _) = Wal::open(Arc::new(disk.clone()), DEFAULT_SIZE_BOUND, 0).unwrap();
        wal.append(put(1)).unwrap();
        disk.fail_next_sync();
        assert!(matches!(wal.flush_log(), Err(WalError::IoFailure(_))));
        assert!(matches!(wal.append(put(2)), Err(WalError::LogClosed)));
    }

    #[test]
    fn record_frame_sizes_match_layout() {
        let cases = [
            (put(1), 8 + 8 + 1 + 8 + 4 + 4),
            (WalRecordKind::Delete { fid: Fid(1) }, 8 + 8 + 1 + 8),
            (
                WalRecordKind::CreatePartition {
                    id: 1,
                    kind: PartitionKind::Permanent,
                    layout: ValueLayout::FixedWidth(8),
                },
                8 + 8 + 1 + 4 + 1 + 1 + 4,
            ),
            (WalRecordKind::Checkpoint { durable_lsn: 5 }, 8 + 8 + 1 + 8),
        ];
        for (kind, size) in cases {
            let rec = WalRecord { lsn: 1, kind };
            let body = rec.encode_body();
            assert_eq!(encode_frame(&body).len(), size);
            assert_eq!(WalRecord::decode_body(&body).unwrap(), rec);
        }
    }
}
