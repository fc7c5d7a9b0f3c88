//! 64-bit field identifiers.
//!
//! A FID packs a partition number into its high `prefix_bits` bits and a
//! per-partition allocation offset into the remaining low bits. The value is
//! a function of where and in what order a slot was allocated, never of the
//! bytes stored behind it.

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Width of a FID in bits. Shorter layouts are not supported.
pub const FID_BITS: u32 = 64;

/// Bytes a FID occupies in a database row.
pub const FID_BYTES: usize = (FID_BITS / 8) as usize;

/// Partition prefix used when nothing else is configured.
pub const DEFAULT_PREFIX_BITS: u8 = 16;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum FidError {
    #[error("prefix width {0} outside 1..=32")]
    BadPrefixWidth(u8),
    #[error("partition {partition} does not fit in {bits} prefix bits")]
    PartitionOutOfRange { partition: u64, bits: u32 },
    #[error("offset {offset} does not fit in {bits} offset bits")]
    OffsetOutOfRange { offset: u64, bits: u32 },
}

/// Layout parameters shared by every FID in a store.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct FidConfig {
    prefix_bits: u8,
}

impl Default for FidConfig {
    fn default() -> Self {
        FidConfig {
            prefix_bits: DEFAULT_PREFIX_BITS,
        }
    }
}

impl FidConfig {
    pub fn new(prefix_bits: u8) -> Result<Self, FidError> {
        if !(1..=32).contains(&prefix_bits) {
            return Err(FidError::BadPrefixWidth(prefix_bits));
        }
        Ok(FidConfig { prefix_bits })
    }

    pub fn prefix_bits(&self) -> u32 {
        self.prefix_bits as u32
    }

    pub fn offset_bits(&self) -> u32 {
        FID_BITS - self.prefix_bits as u32
    }

    /// Number of distinct partitions addressable under this layout.
    pub fn partition_capacity(&self) -> u64 {
        1u64 << self.prefix_bits()
    }

    /// Number of distinct offsets addressable inside one partition.
    pub fn offset_capacity(&self) -> u64 {
        1u64 << self.offset_bits()
    }

    /// [`Self::encode`] for a pair the caller already knows is in range.
    #[inline]
    pub(crate) fn compose(&self, partition: u64, offset: u64) -> Fid {
        debug_assert!(partition < self.partition_capacity() && offset < self.offset_capacity());
        Fid((partition << self.offset_bits()) | offset)
    }

    pub fn encode(&self, partition: u64, offset: u64) -> Result<Fid, FidError> {
        if partition >= self.partition_capacity() {
            return Err(FidError::PartitionOutOfRange {
                partition,
                bits: self.prefix_bits(),
            });
        }
        if offset >= self.offset_capacity() {
            return Err(FidError::OffsetOutOfRange {
                offset,
                bits: self.offset_bits(),
            });
        }
        Ok(Fid((partition << self.offset_bits()) | offset))
    }

    /// Splits any 64-bit value into `(partition, offset)`.
    pub fn decode(&self, fid: Fid) -> (u64, u64) {
        let shift = self.offset_bits();
        (fid.0 >> shift, fid.0 & (self.offset_capacity() - 1))
    }
}

/// Free-function form of [`FidConfig::encode`].
pub fn encode_fid(config: FidConfig, partition: u64, offset: u64) -> Result<Fid, FidError> {
    config.encode(partition, offset)
}

/// Free-function form of [`FidConfig::decode`].
pub fn decode_fid(config: FidConfig, fid: Fid) -> (u64, u64) {
    config.decode(fid)
}

/// A field identifier. Serialized as 8 little-endian bytes everywhere.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(transparent)]
pub struct Fid(pub u64);

impl Fid {
    pub fn raw(self) -> u64 {
        self.0
    }

    pub fn to_le_bytes(self) -> [u8; 8] {
        self.0.to_le_bytes()
    }

    pub fn from_le_bytes(bytes: [u8; 8]) -> Self {
        Fid(u64::from_le_bytes(bytes))
    }
}

impl fmt::Debug for Fid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Fid({:#018x})", self.0)
    }
}

impl fmt::Display for Fid {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:#018x}", self.0)
    }
}
