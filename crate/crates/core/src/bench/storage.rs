//! Storage accounting for `n` sensitive fields of `w` bytes under three
//! layouts: plaintext, per-field AEAD ciphertext, and FID references with
//! values held in sealed store blocks.

use std::sync::Arc;

use serde::Serialize;

use crate::atrest::{BLOCK_SIZE, SEALED_OVERHEAD};
use crate::fid::FID_BYTES;
use crate::proxy::ENVELOPE_OVERHEAD;
use crate::store::{CacheCapacity, MappingStore, PartitionKind, StoreConfig, ValueLayout};
use crate::vfs::MemDisk;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct StorageReport {
    pub fields: u64,
    pub width: u64,
    pub plaintext_bytes: u64,
    pub ciphertext_bytes: u64,
    /// FIDs stored in rows.
    pub fid_db_bytes: u64,
    /// Plaintext values inside the store.
    pub fid_store_bytes: u64,
    /// Per-block counter, nonce and tag of sealed store blocks.
    pub fid_seal_bytes: u64,
    pub fid_total_bytes: u64,
    pub fid_metadata_per_field: u64,
    pub aead_metadata_per_field: u64,
    pub aead_field_bytes: u64,
    /// Per-field row footprint saved by a FID relative to a ciphertext.
    pub metadata_reduction_pct: f64,
}

pub fn bench_storage(fields: u64, width: u64) -> StorageReport {
    let fid = FID_BYTES as u64;
    let aead = ENVELOPE_OVERHEAD as u64;
    let store = fields * width;
    let seal = SEALED_OVERHEAD as u64 * store.div_ceil(BLOCK_SIZE as u64);
    StorageReport {
        fields,
        width,
        plaintext_bytes: store,
        ciphertext_bytes: fields * (width + aead),
        fid_db_bytes: fields * fid,
        fid_store_bytes: store,
        fid_seal_bytes: seal,
        fid_total_bytes: fields * fid + store + seal,
        fid_metadata_per_field: fid,
        aead_metadata_per_field: aead,
        aead_field_bytes: width + aead,
        metadata_reduction_pct: 100.0 * (1.0 - fid as f64 / (width + aead) as f64),
    }
}

/// The same quantities read back from a real store after `fields` puts.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct MeasuredStorage {
    pub store_data_bytes: u64,
    pub sealed_blocks: u64,
    pub seal_overhead_bytes: u64,
    pub fid_metadata_bytes: u64,
}

pub fn measure_storage(fields: u64, width: u32) -> Result<MeasuredStorage, String> {
    let cfg = StoreConfig {
        cache: CacheCapacity::Unbounded,
        ..Default::default()
    };
    let (mut store, _) =
        MappingStore::open(Arc::new(MemDisk::new()), cfg).map_err(|e| e.to_string())?;
    let p = store
        .create_partition(PartitionKind::Permanent, ValueLayout::FixedWidth(width))
        .map_err(|e| e.to_string())?;
    let mut value = vec![0u8; width as usize];
    for i in 0..fields {
        let b = i.to_le_bytes();
        let n = b.len().min(value.len());
        value[..n].copy_from_slice(&b[..n]);
        store.put(p, &value).map_err(|e| e.to_string())?;
    }
    store.evict_all();
    let stats = store.stats();
    let sealed_blocks = store.untrusted().len() as u64;
    Ok(MeasuredStorage {
        store_data_bytes: stats.bytes_data,
        sealed_blocks,
        seal_overhead_bytes: sealed_blocks * SEALED_OVERHEAD as u64,
        fid_metadata_bytes: stats.bytes_metadata,
    })
}
