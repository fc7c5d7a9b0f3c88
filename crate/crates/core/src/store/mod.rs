//! Partitioned FID → secret storage.
//!
//! Each partition is a packed slot array (fixed width) or an offset index over
//! power-of-two slab buckets (variable length). Deleted slots go on a LIFO free
//! list and are overwritten by the next put into the same partition.
//! Permanent partitions are redo-logged and paged through an LRU cache whose
//! evictions are sealed with [`BlockSealer`]; temporary partitions live only in
//! memory and are never logged.

mod cache;
pub mod image;
pub mod partition;

use std::collections::BTreeMap;
use std::io;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use cache::CacheCapacity;
use cache::{Lookup, PageCache};
use image::{ImageError, ImageFiles};
use partition::{Blocks, Partition};

use crate::atrest::{
    AtRestError, BlockEvent, BlockId, BlockSealer, SealStats, UntrustedBlocks, BLOCK_SIZE,
};
use crate::fid::{Fid, FidConfig, FidError};
use crate::vfs::SharedDisk;
use crate::wal::{Wal, WalError, WalRecordKind, WalStats, CKPT_FILE, DEFAULT_SIZE_BOUND};

pub const META_FILE: &str = "store.meta";
pub const EPOCH_FILE: &str = "store.epoch";
const META_MAGIC: &[u8; 8] = b"FIDSMETA";
pub const DEFAULT_MAX_VALUE_LEN: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PartitionKind {
    Temporary,
    Permanent,
}

impl PartitionKind {
    pub fn code(self) -> u8 {
        match self {
            PartitionKind::Temporary => 0,
            PartitionKind::Permanent => 1,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(PartitionKind::Temporary),
            1 => Some(PartitionKind::Permanent),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum ValueLayout {
    FixedWidth(u32),
    VarLen,
}

impl ValueLayout {
    pub fn code(self) -> u8 {
        match self {
            ValueLayout::FixedWidth(_) => 0,
            ValueLayout::VarLen => 1,
        }
    }

    pub fn from_code(code: u8, width: u32) -> Option<Self> {
        match code {
            0 if width > 0 => Some(ValueLayout::FixedWidth(width)),
            1 => Some(ValueLayout::VarLen),
            _ => None,
        }
    }

    pub fn width_or_zero(self) -> u32 {
        match self {
            ValueLayout::FixedWidth(w) => w,
            ValueLayout::VarLen => 0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
#[repr(u8)]
pub enum SlotState {
    Unused = 0,
    Live = 1,
    LogicallyDeleted = 2,
}

impl SlotState {
    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(SlotState::Unused),
            1 => Some(SlotState::Live),
            2 => Some(SlotState::LogicallyDeleted),
            _ => None,
        }
    }
}

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("unknown partition {0}")]
    UnknownPartition(u32),
    #[error("value of {len} bytes exceeds the {max}-byte limit")]
    ValueTooLarge { len: usize, max: usize },
    #[error("empty values are not stored")]
    EmptyValue,
    #[error("value of {got} bytes in a {expected}-byte partition")]
    WidthMismatch { expected: u32, got: usize },
    #[error("partition {0} has no offsets left")]
    PartitionFull(u32),
    #[error("{0} is not live")]
    NotLive(Fid),
    #[error("partition {partition} is not {expected:?}")]
    WrongPartitionKind {
        partition: u32,
        expected: PartitionKind,
    },
    #[error("no partition ids left")]
    PartitionSpaceExhausted,
    #[error("invalid value layout {0:?}")]
    InvalidLayout(ValueLayout),
    #[error("store files were created with a different layout: {0}")]
    LayoutMismatch(String),
    #[error(transparent)]
    Fid(#[from] FidError),
    #[error(transparent)]
    Wal(#[from] WalError),
    #[error(transparent)]
    Io(#[from] io::Error),
    #[error(transparent)]
    AtRest(#[from] AtRestError),
    #[error(transparent)]
    Image(#[from] ImageError),
}

#[derive(Debug, Clone)]
pub struct StoreConfig {
    pub fid: FidConfig,
    pub max_value_len: usize,
    pub wal_size_bound: u64,
    pub cache: CacheCapacity,
    pub seal_key: [u8; 32],
    /// Seeds the nonce generator for sealed blocks.
    pub seed: u64,
    pub record_block_events: bool,
}

impl Default for StoreConfig {
    fn default() -> Self {
        StoreConfig {
            fid: FidConfig::default(),
            max_value_len: DEFAULT_MAX_VALUE_LEN,
            wal_size_bound: DEFAULT_SIZE_BOUND,
            cache: CacheCapacity::default(),
            seal_key: [0x5a; 32],
            seed: 0,
            record_block_events: false,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoreStats {
    pub live_count: u64,
    pub deleted_count: u64,
    pub fresh_allocations: u64,
    pub reused_slots: u64,
    /// Bytes of allocated slot storage across all partitions.
    pub bytes_data: u64,
    /// Eight bytes per live FID held outside the store.
    pub bytes_metadata: u64,
    pub page_faults_simulated: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub prefetched_blocks: u64,
    pub gets: u64,
    pub puts: u64,
    pub deletes: u64,
    pub promotes: u64,
}

impl StoreStats {
    pub fn hit_rate(&self) -> f64 {
        let total = self.cache_hits + self.cache_misses;
        if total == 0 {
            return 1.0;
        }
        self.cache_hits as f64 / total as f64
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpenReport {
    pub checkpoint_lsn: u64,
    pub partitions_loaded: usize,
    /// Records with lsn above the checkpoint that were re-applied.
    pub replayed: usize,
    pub torn_bytes_discarded: usize,
    pub epoch: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct PartitionInfo {
    pub id: u32,
    pub kind: PartitionKind,
    pub layout: ValueLayout,
    pub alloc_counter: u64,
    pub live: u64,
    pub free: u64,
}

pub struct MappingStore {
    disk: SharedDisk,
    config: StoreConfig,
    partitions: BTreeMap<u32, Partition>,
    wal: Wal,
    /// Lsn of the last checkpoint marker; equal to the log's last lsn when
    /// nothing has been appended since.
    marker_lsn: u64,
    checkpoint_lsn: u64,
    cache: PageCache,
    sealer: BlockSealer,
    untrusted: UntrustedBlocks,
    stats: StoreStats,
}

fn read_u64_file(disk: &SharedDisk, name: &str) -> Result<Option<u64>, StoreError> {
    match disk.read(name)? {
        None => Ok(None),
        Some(b) if b.len() == 8 => Ok(Some(u64::from_le_bytes(b.try_into().unwrap()))),
        Some(_) => Err(StoreError::LayoutMismatch(format!("{name} is not 8 bytes"))),
    }
}

#[inline]
fn check_value(max_value_len: usize, p: &Partition, value: &[u8]) -> Result<(), StoreError> {
    if value.is_empty() {
        return Err(StoreError::EmptyValue);
    }
    if value.len() > max_value_len {
        return Err(StoreError::ValueTooLarge {
            len: value.len(),
            max: max_value_len,
        });
    }
    if let ValueLayout::FixedWidth(w) = p.layout() {
        if value.len() != w as usize {
            return Err(StoreError::WidthMismatch {
                expected: w,
                got: value.len(),
            });
        }
    }
    Ok(())
}

/// Copies the opened sealed copy of block `id` into `p`.
fn fault_in(
    untrusted: &mut UntrustedBlocks,
    sealer: &mut BlockSealer,
    p: &mut Partition,
    id: BlockId,
) -> Result<(), StoreError> {
    let sealed = untrusted.read(id).ok_or(AtRestError::UnknownBlock(id))?;
    let plain = sealer.open_block(id, sealed)?;
    let dst = p.block_mut(id.index);
    let n = dst.len();
    dst.copy_from_slice(&plain[..n]);
    Ok(())
}

/// The store fields a block access needs, borrowed apart from the partition
/// map so one partition can be held mutably alongside them.
struct Residency<'a> {
    cache: &'a mut PageCache,
    untrusted: &'a mut UntrustedBlocks,
    sealer: &'a mut BlockSealer,
    stats: &'a mut StoreStats,
}

impl Residency<'_> {
    /// Marks `blocks` of `p` used, faulting sealed ones in. Returns true if
    /// the resident set grew.
    #[inline(always)]
    fn touch(
        &mut self,
        p: &mut Partition,
        blocks: Blocks,
        write: bool,
    ) -> Result<bool, StoreError> {
        if blocks.start() == blocks.end()
            && self
                .cache
                .is_mru(BlockId::new(p.id, *blocks.start()), write)
        {
            self.stats.cache_hits += 1;
            return Ok(false);
        }
        self.touch_each(p, blocks, write)
    }

    #[inline(never)]
    fn touch_each(
        &mut self,
        p: &mut Partition,
        blocks: Blocks,
        write: bool,
    ) -> Result<bool, StoreError> {
        let mut grew = false;
        for index in blocks {
            let id = BlockId::new(p.id, index);
            match self.cache.touch(id, write) {
                Lookup::Hit => self.stats.cache_hits += 1,
                Lookup::Miss => {
                    grew = true;
                    if self.untrusted.contains(id) {
                        self.stats.cache_misses += 1;
                        self.stats.page_faults_simulated += 1;
                        fault_in(self.untrusted, self.sealer, p, id)?;
                        self.cache.admit(id, write);
                    } else {
                        // A block that has never left memory.
                        self.cache.admit(id, true);
                    }
                }
            }
        }
        Ok(grew)
    }
}

impl MappingStore {
    /// Opens the store on `disk`, creating it if empty. Loads the last
    /// checkpoint image and replays every log record after it.
    pub fn open(disk: SharedDisk, config: StoreConfig) -> Result<(Self, OpenReport), StoreError> {
        let mut meta = Vec::with_capacity(13);
        meta.extend_from_slice(META_MAGIC);
        meta.push(config.fid.prefix_bits() as u8);
        meta.extend_from_slice(&(config.max_value_len as u32).to_le_bytes());
        match disk.read(META_FILE)? {
            Some(found) if found != meta => {
                return Err(StoreError::LayoutMismatch(
                    "prefix width or value limit differs".into(),
                ))
            }
            Some(_) => {}
            None => disk.write_atomic(META_FILE, &meta)?,
        }

        let epoch = match disk.read(EPOCH_FILE)? {
            Some(b) if b.len() == 4 => u32::from_le_bytes(b.try_into().unwrap()) + 1,
            _ => 1,
        };
        disk.write_atomic(EPOCH_FILE, &epoch.to_le_bytes())?;

        let checkpoint_lsn = read_u64_file(&disk, CKPT_FILE)?.unwrap_or(0);
        let prefix = config.fid.prefix_bits() as u8;
        let mut partitions = BTreeMap::new();
        for name in disk.list()? {
            let Some((id, lsn, ext)) = image::parse_image_name(&name) else {
                continue;
            };
            if lsn != checkpoint_lsn {
                disk.remove(&name)?;
                continue;
            }
            if ext != "fid" {
                continue;
            }
            let base = image::base_name(id, lsn);
            let load = |ext: &str| -> Result<Vec<u8>, StoreError> {
                disk.read(&format!("{base}.{ext}"))?
                    .ok_or_else(|| StoreError::LayoutMismatch(format!("{base}.{ext} missing")))
            };
            let files = ImageFiles {
                fid: load("fid")?,
                state: load("state")?,
                free: load("free")?,
            };
            partitions.insert(id, image::decode(&name, id, prefix, &files)?);
        }
        let partitions_loaded = partitions.len();

        let (wal, opened) = Wal::open(disk.clone(), config.wal_size_bound, checkpoint_lsn)?;
        let mut store = MappingStore {
            cache: PageCache::new(config.cache),
            sealer: BlockSealer::new(
                &config.seal_key,
                epoch,
                ChaCha20Rng::seed_from_u64(config.seed ^ ((epoch as u64) << 32)),
            ),
            untrusted: UntrustedBlocks::new(config.record_block_events),
            disk,
            partitions,
            marker_lsn: 0,
            checkpoint_lsn,
            wal,
            stats: StoreStats::default(),
            config,
        };
        let mut replayed = 0;
        for rec in opened
            .records
            .into_iter()
            .filter(|r| r.lsn > checkpoint_lsn)
        {
            match rec.kind {
                WalRecordKind::Checkpoint { .. } => continue,
                kind => store.replay(kind)?,
            }
            replayed += 1;
        }
        if replayed == 0 {
            store.marker_lsn = store.wal.last_lsn();
        }
        let ids: Vec<u32> = store.permanent_ids().collect();
        for id in ids {
            for index in store.partitions[&id].all_blocks() {
                store.cache.admit(BlockId::new(id, index), true);
            }
        }
        store.enforce_capacity();
        Ok((
            store,
            OpenReport {
                checkpoint_lsn,
                partitions_loaded,
                replayed,
                torn_bytes_discarded: opened.torn_bytes_discarded,
                epoch,
            },
        ))
    }

    fn replay(&mut self, kind: WalRecordKind) -> Result<(), StoreError> {
        match kind {
            WalRecordKind::CreatePartition { id, kind, layout } => {
                self.partitions
                    .entry(id)
                    .or_insert_with(|| Partition::new(id, kind, layout, self.config.max_value_len));
            }
            WalRecordKind::Put { fid, value } => {
                let (pid, offset) = self.config.fid.decode(fid);
                let p = self
                    .partitions
                    .get_mut(&(pid as u32))
                    .ok_or(StoreError::UnknownPartition(pid as u32))?;
                p.apply_put(offset, &value);
            }
            WalRecordKind::Delete { fid } => {
                let (pid, offset) = self.config.fid.decode(fid);
                if let Some(p) = self.partitions.get_mut(&(pid as u32)) {
                    p.apply_delete(offset);
                }
            }
            WalRecordKind::Checkpoint { .. } => {}
        }
        Ok(())
    }

    pub fn config(&self) -> &StoreConfig {
        &self.config
    }

    pub fn fid_config(&self) -> FidConfig {
        self.config.fid
    }

    fn permanent_ids(&self) -> impl Iterator<Item = u32> + '_ {
        self.partitions
            .values()
            .filter(|p| p.kind == PartitionKind::Permanent)
            .map(|p| p.id)
    }

    pub fn create_partition(
        &mut self,
        kind: PartitionKind,
        layout: ValueLayout,
    ) -> Result<u32, StoreError> {
        if let ValueLayout::FixedWidth(w) = layout {
            if w == 0 || w as usize > self.config.max_value_len {
                return Err(StoreError::InvalidLayout(layout));
            }
        }
        let cap = self.config.fid.partition_capacity();
        let id = (0..cap)
            .find(|i| !self.partitions.contains_key(&(*i as u32)))
            .ok_or(StoreError::PartitionSpaceExhausted)? as u32;
        if kind == PartitionKind::Permanent {
            self.wal
                .append(WalRecordKind::CreatePartition { id, kind, layout })?;
        }
        self.partitions.insert(
            id,
            Partition::new(id, kind, layout, self.config.max_value_len),
        );
        self.maintain()?;
        Ok(id)
    }

    pub fn put(&mut self, partition: u32, value: &[u8]) -> Result<Fid, StoreError> {
        let p = self
            .partitions
            .get_mut(&partition)
            .ok_or(StoreError::UnknownPartition(partition))?;
        check_value(self.config.max_value_len, p, value)?;
        let plan = p
            .plan_put(self.config.fid.offset_capacity())
            .ok_or(StoreError::PartitionFull(partition))?;
        // Partition ids and planned offsets are always in range.
        let fid = self.config.fid.compose(partition as u64, plan.offset);
        let permanent = p.kind == PartitionKind::Permanent;
        let blocks = p.prepare_put(plan.offset, value.len());
        let mut grew = false;
        if permanent {
            let mut r = Residency {
                cache: &mut self.cache,
                untrusted: &mut self.untrusted,
                sealer: &mut self.sealer,
                stats: &mut self.stats,
            };
            grew = r.touch(p, blocks, true)?;
            self.wal.append_put(fid, value)?;
        }
        p.apply_plan(plan, value);
        self.stats.puts += 1;
        if plan.reused {
            self.stats.reused_slots += 1;
        } else {
            self.stats.fresh_allocations += 1;
        }
        if grew {
            self.enforce_capacity();
        }
        if permanent {
            self.maintain()?;
        }
        Ok(fid)
    }

    /// The live value behind `fid`, or `None` if it is unused or deleted.
    pub fn get(&mut self, fid: Fid) -> Result<Option<Vec<u8>>, StoreError> {
        self.stats.gets += 1;
        self.read(fid)
    }

    /// [`MappingStore::get`] into a caller-owned buffer. Returns false, with
    /// `out` cleared, if `fid` is not live.
    pub fn get_into(&mut self, fid: Fid, out: &mut Vec<u8>) -> Result<bool, StoreError> {
        self.stats.gets += 1;
        out.clear();
        let Some((pid, offset)) = self.resident(fid)? else {
            return Ok(false);
        };
        out.extend_from_slice(self.partitions[&pid].value(offset).expect("checked live"));
        Ok(true)
    }

    fn read(&mut self, fid: Fid) -> Result<Option<Vec<u8>>, StoreError> {
        Ok(self
            .resident(fid)?
            .and_then(|(pid, offset)| self.partitions[&pid].read(offset)))
    }

    /// Decodes a live `fid` and faults its blocks in.
    fn resident(&mut self, fid: Fid) -> Result<Option<(u32, u64)>, StoreError> {
        let (pid, offset) = self.config.fid.decode(fid);
        let Ok(pid) = u32::try_from(pid) else {
            return Ok(None);
        };
        let Some(p) = self.partitions.get_mut(&pid) else {
            return Ok(None);
        };
        if !p.is_live(offset) {
            return Ok(None);
        }
        if p.kind == PartitionKind::Permanent {
            let blocks = p.blocks_of(offset);
            let mut r = Residency {
                cache: &mut self.cache,
                untrusted: &mut self.untrusted,
                sealer: &mut self.sealer,
                stats: &mut self.stats,
            };
            if r.touch(p, blocks, false)? {
                self.enforce_capacity();
            }
        }
        Ok(Some((pid, offset)))
    }

    pub fn is_live(&self, fid: Fid) -> bool {
        let (pid, offset) = self.config.fid.decode(fid);
        u32::try_from(pid)
            .ok()
            .and_then(|pid| self.partitions.get(&pid))
            .is_some_and(|p| p.is_live(offset))
    }

    pub fn delete(&mut self, fid: Fid) -> Result<(), StoreError> {
        if !self.is_live(fid) {
            return Err(StoreError::NotLive(fid));
        }
        let (pid, offset) = self.config.fid.decode(fid);
        let pid = pid as u32;
        if self.partitions[&pid].kind == PartitionKind::Permanent {
            self.wal.append(WalRecordKind::Delete { fid })?;
        }
        self.partitions.get_mut(&pid).unwrap().apply_delete(offset);
        self.stats.deletes += 1;
        self.maintain()?;
        Ok(())
    }

    /// Copies a live temporary value into a permanent partition.
    pub fn promote(&mut self, temp_fid: Fid, perm_partition: u32) -> Result<Fid, StoreError> {
        let (src, _) = self.config.fid.decode(temp_fid);
        let src = u32::try_from(src).map_err(|_| StoreError::NotLive(temp_fid))?;
        match self.partitions.get(&src) {
            None => return Err(StoreError::NotLive(temp_fid)),
            Some(p) if p.kind != PartitionKind::Temporary => {
                return Err(StoreError::WrongPartitionKind {
                    partition: src,
                    expected: PartitionKind::Temporary,
                })
            }
            Some(_) => {}
        }
        match self.partitions.get(&perm_partition) {
            None => return Err(StoreError::UnknownPartition(perm_partition)),
            Some(p) if p.kind != PartitionKind::Permanent => {
                return Err(StoreError::WrongPartitionKind {
                    partition: perm_partition,
                    expected: PartitionKind::Permanent,
                })
            }
            Some(_) => {}
        }
        let value = self.read(temp_fid)?.ok_or(StoreError::NotLive(temp_fid))?;
        let fid = self.put(perm_partition, &value)?;
        self.stats.promotes += 1;
        Ok(fid)
    }

    /// Empties a temporary partition and resets its allocator.
    pub fn drop_temporary(&mut self, partition: u32) -> Result<u64, StoreError> {
        let max = self.config.max_value_len;
        let p = self
            .partitions
            .get_mut(&partition)
            .ok_or(StoreError::UnknownPartition(partition))?;
        if p.kind != PartitionKind::Temporary {
            return Err(StoreError::WrongPartitionKind {
                partition,
                expected: PartitionKind::Temporary,
            });
        }
        Ok(p.clear(max))
    }

    /// Unregisters an empty temporary partition so its id can be reused.
    pub fn remove_temporary(&mut self, partition: u32) -> Result<u64, StoreError> {
        let n = self.drop_temporary(partition)?;
        self.partitions.remove(&partition);
        Ok(n)
    }

    /// Makes every logged mutation durable; truncates the log once it
    /// exceeds its size bound.
    pub fn flush_log(&mut self) -> Result<u64, StoreError> {
        let lsn = self.wal.flush_log()?;
        self.maintain()?;
        Ok(lsn)
    }

    #[inline]
    fn maintain(&mut self) -> Result<(), StoreError> {
        if self.wal.over_bound() {
            self.checkpoint_truncate()?;
        }
        Ok(())
    }

    /// Persists images of every permanent partition and restarts the log.
    pub fn checkpoint_truncate(&mut self) -> Result<(), StoreError> {
        if self.wal.last_lsn() == self.marker_lsn {
            return Ok(());
        }
        let lsn = self.wal.flush_log()?;
        let prefix = self.config.fid.prefix_bits() as u8;
        let ids: Vec<u32> = self.permanent_ids().collect();
        for id in &ids {
            let p = self.materialized(*id)?;
            let files = image::encode(prefix, &p);
            let base = image::base_name(*id, lsn);
            self.disk
                .write_atomic(&format!("{base}.state"), &files.state)?;
            self.disk
                .write_atomic(&format!("{base}.free"), &files.free)?;
            self.disk.write_atomic(&format!("{base}.fid"), &files.fid)?;
        }
        self.disk.write_atomic(CKPT_FILE, &lsn.to_le_bytes())?;
        self.checkpoint_lsn = lsn;
        self.wal.restart_after_checkpoint(lsn)?;
        self.marker_lsn = self.wal.last_lsn();
        for name in self.disk.list()? {
            if let Some((_, l, _)) = image::parse_image_name(&name) {
                if l != lsn {
                    self.disk.remove(&name)?;
                }
            }
        }
        Ok(())
    }

    fn data_blocks(&self) -> usize {
        self.partitions
            .values()
            .filter(|p| p.kind == PartitionKind::Permanent)
            .map(|p| p.page_count())
            .sum()
    }

    fn fault_in(&mut self, id: BlockId) -> Result<(), StoreError> {
        let p = self
            .partitions
            .get_mut(&id.partition)
            .ok_or(StoreError::UnknownPartition(id.partition))?;
        fault_in(&mut self.untrusted, &mut self.sealer, p, id)
    }

    fn enforce_capacity(&mut self) {
        if self.cache.capacity == CacheCapacity::Unbounded {
            return;
        }
        let limit = self.cache.capacity.blocks(self.data_blocks());
        if self.cache.len() <= limit {
            return;
        }
        for (id, dirty) in self.cache.overflow(limit) {
            self.evict(id, dirty);
        }
    }

    fn evict(&mut self, id: BlockId, dirty: bool) {
        let Some(p) = self.partitions.get_mut(&id.partition) else {
            return;
        };
        let mem = p.block_mut(id.index);
        if dirty || !self.untrusted.contains(id) {
            let mut plain = Box::new([0u8; BLOCK_SIZE]);
            plain[..mem.len()].copy_from_slice(mem);
            let sealed = self.sealer.seal_block(id, &plain);
            self.untrusted.write(id, sealed);
        }
        mem.fill(0);
    }

    /// Seals and drops every resident block.
    pub fn evict_all(&mut self) {
        for (id, dirty) in self.cache.drain() {
            self.evict(id, dirty);
        }
    }

    /// Loads a permanent partition's blocks into the cache, up to its
    /// capacity, without counting them as faults.
    pub fn prefetch_partition(&mut self, partition: u32) -> Result<usize, StoreError> {
        let p = self
            .partitions
            .get(&partition)
            .ok_or(StoreError::UnknownPartition(partition))?;
        if p.kind != PartitionKind::Permanent {
            return Ok(0);
        }
        let limit = self.cache.capacity.blocks(self.data_blocks());
        let blocks = p.all_blocks();
        let mut loaded = 0;
        for index in blocks.into_iter().take(limit) {
            let id = BlockId::new(partition, index);
            if self.cache.contains(id) {
                self.cache.touch(id, false);
                continue;
            }
            if self.untrusted.contains(id) {
                self.fault_in(id)?;
                self.cache.admit(id, false);
                self.stats.prefetched_blocks += 1;
                loaded += 1;
            } else {
                self.cache.admit(id, true);
            }
        }
        self.enforce_capacity();
        Ok(loaded)
    }

    /// A copy of partition `id` with evicted blocks filled in from their
    /// sealed copies.
    fn materialized(&mut self, id: u32) -> Result<Partition, StoreError> {
        let mut copy = self.partitions[&id].clone();
        if copy.kind == PartitionKind::Permanent {
            for index in copy.all_blocks() {
                let bid = BlockId::new(id, index);
                if self.cache.contains(bid) || !self.untrusted.contains(bid) {
                    continue;
                }
                let sealed = self.untrusted.read(bid).cloned().unwrap();
                let plain = self.sealer.open_block(bid, &sealed)?;
                let dst = copy.block_mut(index);
                let n = dst.len();
                dst.copy_from_slice(&plain[..n]);
            }
        }
        Ok(copy)
    }

    /// Every live value in permanent partitions.
    pub fn snapshot(&mut self) -> Result<BTreeMap<Fid, Vec<u8>>, StoreError> {
        let mut out = BTreeMap::new();
        let ids: Vec<u32> = self.permanent_ids().collect();
        for id in ids {
            let p = self.materialized(id)?;
            for o in p.live_offsets() {
                out.insert(self.config.fid.encode(id as u64, o)?, p.read(o).unwrap());
            }
        }
        Ok(out)
    }

    pub fn live_fids(&self, partition: u32) -> Result<Vec<Fid>, StoreError> {
        let p = self
            .partitions
            .get(&partition)
            .ok_or(StoreError::UnknownPartition(partition))?;
        p.live_offsets()
            .map(|o| Ok(self.config.fid.encode(partition as u64, o)?))
            .collect()
    }

    pub fn partitions(&self) -> Vec<PartitionInfo> {
        self.partitions
            .values()
            .map(|p| PartitionInfo {
                id: p.id,
                kind: p.kind,
                layout: p.layout(),
                alloc_counter: p.alloc_counter,
                live: p.live,
                free: p.deleted_count(),
            })
            .collect()
    }

    pub fn partition_info(&self, id: u32) -> Option<PartitionInfo> {
        self.partitions().into_iter().find(|p| p.id == id)
    }

    pub fn stats(&self) -> StoreStats {
        let mut s = self.stats;
        s.live_count = self.partitions.values().map(|p| p.live).sum();
        s.deleted_count = self.partitions.values().map(|p| p.deleted_count()).sum();
        s.bytes_data = self.partitions.values().map(|p| p.bytes_data()).sum();
        s.bytes_metadata = 8 * s.live_count;
        s
    }

    /// Zeroes operation, cache and seal counters.
    pub fn reset_counters(&mut self) {
        self.stats = StoreStats::default();
        self.sealer.reset_stats();
    }

    pub fn seal_stats(&self) -> SealStats {
        self.sealer.stats()
    }

    pub fn wal_stats(&self) -> WalStats {
        self.wal.stats()
    }

    pub fn wal_bytes_since_checkpoint(&self) -> u64 {
        self.wal.bytes_since_checkpoint()
    }

    pub fn checkpoint_lsn(&self) -> u64 {
        self.checkpoint_lsn
    }

    pub fn durable_lsn(&self) -> u64 {
        self.wal.durable_lsn()
    }

    pub fn log_closed(&self) -> bool {
        self.wal.is_closed()
    }

    pub fn resident_blocks(&self) -> usize {
        self.cache.len()
    }

    pub fn set_cache_capacity(&mut self, capacity: CacheCapacity) {
        self.cache.capacity = capacity;
        self.enforce_capacity();
    }

    pub fn set_record_block_events(&mut self, on: bool) {
        self.untrusted.set_recording(on);
    }

    pub fn drain_block_events(&mut self) -> Vec<BlockEvent> {
        self.untrusted.drain_events()
    }

    /// Sealed copies held by untrusted storage. Tests tamper with these.
    pub fn untrusted(&mut self) -> &mut UntrustedBlocks {
        &mut self.untrusted
    }

    /// Checks that bucket occupancy per class equals the live FIDs indexed
    /// into that class, for every varlen partition.
    pub fn varlen_consistent(&self) -> bool {
        self.partitions
            .values()
            .all(|p| p.class_occupancy() == p.class_live_counts())
    }
}
