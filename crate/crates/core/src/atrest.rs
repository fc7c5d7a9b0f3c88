//! Authenticated encryption for blocks the mapping store evicts to untrusted
//! storage.
//!
//! Every seal binds `(partition, block_index, counter)` as associated data and
//! bumps the block's counter in a [`FreshnessTable`] kept in trusted memory.
//! Opening checks the tag first and the counter second, so corruption is
//! reported as [`AtRestError::AuthFailure`] and a replayed older block as
//! [`AtRestError::StaleBlock`].
//!
//! Counters carry the store's boot epoch in their high 32 bits. The epoch is
//! bumped durably on every open of the store, so blocks sealed before a crash
//! always compare lower than anything sealed afterwards.

use std::collections::HashMap;

use aes_gcm::aead::{AeadInPlace, KeyInit};
use aes_gcm::{Aes256Gcm, Nonce, Tag};
use rand::RngCore;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{ByteReader, ByteWriter, DecodeError};

pub const BLOCK_SIZE: usize = 4096;
pub const NONCE_LEN: usize = 12;
pub const TAG_LEN: usize = 16;
pub const COUNTER_LEN: usize = 8;
/// Bytes a sealed block adds on top of its 4096 bytes of data.
pub const SEALED_OVERHEAD: usize = COUNTER_LEN + NONCE_LEN + TAG_LEN;
pub const SEALED_BLOCK_LEN: usize = BLOCK_SIZE + SEALED_OVERHEAD;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum AtRestError {
    #[error("block {0:?} failed authentication")]
    AuthFailure(BlockId),
    #[error("block {id:?} is stale: counter {found} but {expected} expected")]
    StaleBlock {
        id: BlockId,
        found: u64,
        expected: u64,
    },
    #[error("block {0:?} was never sealed")]
    UnknownBlock(BlockId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct BlockId {
    pub partition: u32,
    pub index: u64,
}

impl BlockId {
    pub fn new(partition: u32, index: u64) -> Self {
        BlockId { partition, index }
    }

    fn aad(&self, counter: u64) -> [u8; 20] {
        let mut out = [0u8; 20];
        out[..4].copy_from_slice(&self.partition.to_le_bytes());
        out[4..12].copy_from_slice(&self.index.to_le_bytes());
        out[12..].copy_from_slice(&counter.to_le_bytes());
        out
    }
}

#[derive(Clone, PartialEq, Eq)]
pub struct SealedBlock {
    pub counter: u64,
    pub nonce: [u8; NONCE_LEN],
    pub tag: [u8; TAG_LEN],
    pub ciphertext: Vec<u8>,
}

impl std::fmt::Debug for SealedBlock {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("SealedBlock")
            .field("counter", &self.counter)
            .field("len", &self.ciphertext.len())
            .finish()
    }
}

impl SealedBlock {
    /// `{u64 counter, 12-byte nonce, 16-byte tag, 4096-byte ciphertext}`.
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(SEALED_BLOCK_LEN);
        w.u64(self.counter)
            .raw(&self.nonce)
            .raw(&self.tag)
            .raw(&self.ciphertext);
        w.into_inner()
    }

    pub fn decode(bytes: &[u8]) -> Result<Self, DecodeError> {
        let mut r = ByteReader::new(bytes);
        let counter = r.u64()?;
        let nonce = r.array::<NONCE_LEN>()?;
        let tag = r.array::<TAG_LEN>()?;
        let ciphertext = r.raw(BLOCK_SIZE)?.to_vec();
        r.finish()?;
        Ok(SealedBlock {
            counter,
            nonce,
            tag,
            ciphertext,
        })
    }
}

/// Serializes a partition's sealed blocks back to back, in the order given.
pub fn encode_block_file(blocks: &[SealedBlock]) -> Vec<u8> {
    blocks.iter().flat_map(|b| b.encode()).collect()
}

pub fn decode_block_file(bytes: &[u8]) -> Result<Vec<SealedBlock>, DecodeError> {
    if !bytes.len().is_multiple_of(SEALED_BLOCK_LEN) {
        return Err(DecodeError {
            at: bytes.len() - bytes.len() % SEALED_BLOCK_LEN,
        });
    }
    bytes
        .chunks(SEALED_BLOCK_LEN)
        .map(SealedBlock::decode)
        .collect()
}

/// Latest accepted counter per block.
#[derive(Debug, Clone, Default)]
pub struct FreshnessTable {
    epoch: u32,
    counters: HashMap<BlockId, u64>,
}

impl FreshnessTable {
    pub fn new(epoch: u32) -> Self {
        FreshnessTable {
            epoch,
            counters: HashMap::new(),
        }
    }

    pub fn epoch(&self) -> u32 {
        self.epoch
    }

    pub fn current(&self, id: BlockId) -> Option<u64> {
        self.counters.get(&id).copied()
    }

    fn advance(&mut self, id: BlockId) -> u64 {
        let floor = (self.epoch as u64) << 32;
        let next = match self.counters.get(&id) {
            Some(&c) if c >= floor => c + 1,
            _ => floor,
        };
        self.counters.insert(id, next);
        next
    }

    pub fn len(&self) -> usize {
        self.counters.len()
    }

    pub fn is_empty(&self) -> bool {
        self.counters.is_empty()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct SealStats {
    pub seals: u64,
    pub opens: u64,
}

impl SealStats {
    pub fn total(&self) -> u64 {
        self.seals + self.opens
    }
}

/// Untrusted-side I/O performed by the sealer's owner.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockEvent {
    Read(BlockId),
    Write(BlockId),
}

pub struct BlockSealer {
    cipher: Aes256Gcm,
    rng: ChaCha20Rng,
    table: FreshnessTable,
    stats: SealStats,
}

impl BlockSealer {
    pub fn new(key: &[u8; 32], epoch: u32, rng: ChaCha20Rng) -> Self {
        BlockSealer {
            cipher: Aes256Gcm::new(key.into()),
            rng,
            table: FreshnessTable::new(epoch),
            stats: SealStats::default(),
        }
    }

    pub fn seal_block(&mut self, id: BlockId, plaintext: &[u8; BLOCK_SIZE]) -> SealedBlock {
        let counter = self.table.advance(id);
        let mut nonce = [0u8; NONCE_LEN];
        self.rng.fill_bytes(&mut nonce);
        let mut ciphertext = plaintext.to_vec();
        let tag = self
            .cipher
            .encrypt_in_place_detached(Nonce::from_slice(&nonce), &id.aad(counter), &mut ciphertext)
            .expect("block length is within AES-GCM limits");
        self.stats.seals += 1;
        SealedBlock {
            counter,
            nonce,
            tag: tag.into(),
            ciphertext,
        }
    }

    /// Opens a block previously sealed under `id`.
    pub fn open_block(
        &mut self,
        id: BlockId,
        sealed: &SealedBlock,
    ) -> Result<Box<[u8; BLOCK_SIZE]>, AtRestError> {
        self.stats.opens += 1;
        if sealed.ciphertext.len() != BLOCK_SIZE {
            return Err(AtRestError::AuthFailure(id));
        }
        let mut buf = sealed.ciphertext.clone();
        self.cipher
            .decrypt_in_place_detached(
                Nonce::from_slice(&sealed.nonce),
                &id.aad(sealed.counter),
                &mut buf,
                Tag::from_slice(&sealed.tag),
            )
            .map_err(|_| AtRestError::AuthFailure(id))?;
        let expected = self
            .table
            .current(id)
            .ok_or(AtRestError::UnknownBlock(id))?;
        if sealed.counter < expected {
            return Err(AtRestError::StaleBlock {
                id,
                found: sealed.counter,
                expected,
            });
        }
        if sealed.counter != expected {
            // A valid tag over a counter the table never issued.
            return Err(AtRestError::AuthFailure(id));
        }
        Ok(buf.into_boxed_slice().try_into().unwrap())
    }

    pub fn table(&self) -> &FreshnessTable {
        &self.table
    }

    pub fn stats(&self) -> SealStats {
        self.stats
    }

    pub fn reset_stats(&mut self) {
        self.stats = SealStats::default();
    }

    /// Forgets every counter; used when the store discards all sealed copies.
    pub fn reset_table(&mut self) {
        self.table.counters.clear();
    }
}

/// Sealed copies of evicted blocks, as held by untrusted storage.
#[derive(Default)]
pub struct UntrustedBlocks {
    blocks: HashMap<BlockId, SealedBlock>,
    events: Vec<BlockEvent>,
    record: bool,
    bytes_written: u64,
}

impl UntrustedBlocks {
    pub fn new(record_events: bool) -> Self {
        UntrustedBlocks {
            record: record_events,
            ..Default::default()
        }
    }

    pub fn write(&mut self, id: BlockId, block: SealedBlock) {
        if self.record {
            self.events.push(BlockEvent::Write(id));
        }
        self.bytes_written += SEALED_BLOCK_LEN as u64;
        self.blocks.insert(id, block);
    }

    pub fn read(&mut self, id: BlockId) -> Option<&SealedBlock> {
        let b = self.blocks.get(&id);
        if b.is_some() && self.record {
            self.events.push(BlockEvent::Read(id));
        }
        b
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.blocks.contains_key(&id)
    }

    pub fn len(&self) -> usize {
        self.blocks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.blocks.is_empty()
    }

    pub fn clear(&mut self) {
        self.blocks.clear();
    }

    pub fn set_recording(&mut self, on: bool) {
        self.record = on;
    }

    pub fn drain_events(&mut self) -> Vec<BlockEvent> {
        std::mem::take(&mut self.events)
    }

    pub fn bytes_written(&self) -> u64 {
        self.bytes_written
    }

    /// The sealed blocks of one partition ordered by block index.
    pub fn partition_blocks(&self, partition: u32) -> Vec<(u64, SealedBlock)> {
        let mut v: Vec<_> = self
            .blocks
            .iter()
            .filter(|(id, _)| id.partition == partition)
            .map(|(id, b)| (id.index, b.clone()))
            .collect();
        v.sort_by_key(|(i, _)| *i);
        v
    }

    /// Every stored byte, for plaintext-leak scans.
    pub fn raw_bytes(&self) -> Vec<u8> {
        let mut ids: Vec<_> = self.blocks.keys().copied().collect();
        ids.sort();
        ids.iter().flat_map(|id| self.blocks[id].encode()).collect()
    }
}
