//! One partition's slot arrays, free lists and slab buckets. No I/O and no
//! caching here; [`super::MappingStore`] wraps every access with block
//! residency checks.

use std::ops::RangeInclusive;

use super::{PartitionKind, SlotState, ValueLayout};

use crate::atrest::BLOCK_SIZE;

pub const MIN_CLASS: u32 = 16;

/// Block indices of varlen bucket pages live above this bit so they never
/// collide with fixed-width pages.
const CLASS_SHIFT: u32 = 40;
const PAGE_MASK: u64 = (1 << CLASS_SHIFT) - 1;

/// Size classes for a varlen arena: powers of two from 16 up to the first
/// power of two covering `max_value_len`.
pub fn class_sizes(max_value_len: usize) -> Vec<u32> {
    let mut out = vec![MIN_CLASS];
    while (*out.last().unwrap() as usize) < max_value_len {
        out.push(out.last().unwrap() * 2);
    }
    out
}

pub fn class_for(classes: &[u32], len: usize) -> Option<usize> {
    classes.iter().position(|&c| c as usize >= len)
}

/// Block indices a value touches; never more than two for values up to a
/// block in size.
pub type Blocks = RangeInclusive<u64>;

pub fn bucket_block(class: usize, page: u64) -> u64 {
    ((class as u64 + 1) << CLASS_SHIFT) | page
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct IndexEntry {
    pub class: u8,
    pub len: u32,
    pub slot: u64,
}

#[derive(Debug, Clone, Default)]
pub struct Bucket {
    pub data: Vec<u8>,
    pub slot_count: u64,
    /// Released bucket slots, reused LIFO.
    pub free: Vec<u64>,
    pub occupied: u64,
}

#[derive(Debug, Clone)]
pub struct VarLenArena {
    pub class_sizes: Vec<u32>,
    pub index: Vec<IndexEntry>,
    pub buckets: Vec<Bucket>,
}

impl VarLenArena {
    pub fn new(max_value_len: usize) -> Self {
        let class_sizes = class_sizes(max_value_len);
        let buckets = vec![Bucket::default(); class_sizes.len()];
        VarLenArena {
            class_sizes,
            index: Vec::new(),
            buckets,
        }
    }

    fn write(&mut self, offset: u64, value: &[u8]) {
        let class = class_for(&self.class_sizes, value.len()).expect("length checked");
        let cs = self.class_sizes[class] as usize;
        let b = &mut self.buckets[class];
        let slot = match b.free.pop() {
            Some(s) => s,
            None => {
                let s = b.slot_count;
                b.slot_count += 1;
                if b.data.len() < b.slot_count as usize * cs {
                    b.data.resize(b.slot_count as usize * cs, 0);
                }
                s
            }
        };
        b.occupied += 1;
        let range = self.slot_range(class, slot);
        let dst = &mut self.buckets[class].data[range];
        dst[..value.len()].copy_from_slice(value);
        dst[value.len()..].fill(0);
        if self.index.len() <= offset as usize {
            self.index
                .resize(offset as usize + 1, IndexEntry::default());
        }
        self.index[offset as usize] = IndexEntry {
            class: class as u8,
            len: value.len() as u32,
            slot,
        };
    }

    fn slot_range(&self, class: usize, slot: u64) -> std::ops::Range<usize> {
        let cs = self.class_sizes[class] as usize;
        let start = slot as usize * cs;
        start..start + cs
    }
}

#[derive(Debug, Clone)]
pub enum Slots {
    Fixed { width: u32, data: Vec<u8> },
    VarLen(VarLenArena),
}

#[derive(Debug, Clone)]
pub struct Partition {
    pub id: u32,
    pub kind: PartitionKind,
    pub alloc_counter: u64,
    /// Logically deleted offsets, reused LIFO.
    pub free_list: Vec<u64>,
    pub states: Vec<SlotState>,
    pub slots: Slots,
    pub live: u64,
}

/// Where a put will land, decided before anything is logged.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PutPlan {
    pub offset: u64,
    pub reused: bool,
}

impl Partition {
    pub fn new(id: u32, kind: PartitionKind, layout: ValueLayout, max_value_len: usize) -> Self {
        let slots = match layout {
            ValueLayout::FixedWidth(width) => Slots::Fixed {
                width,
                data: Vec::new(),
            },
            ValueLayout::VarLen => Slots::VarLen(VarLenArena::new(max_value_len)),
        };
        Partition {
            id,
            kind,
            alloc_counter: 0,
            free_list: Vec::new(),
            states: Vec::new(),
            slots,
            live: 0,
        }
    }

    pub fn layout(&self) -> ValueLayout {
        match &self.slots {
            Slots::Fixed { width, .. } => ValueLayout::FixedWidth(*width),
            Slots::VarLen(_) => ValueLayout::VarLen,
        }
    }

    #[inline]
    pub fn state(&self, offset: u64) -> SlotState {
        self.states
            .get(offset as usize)
            .copied()
            .unwrap_or(SlotState::Unused)
    }

    #[inline]
    pub fn is_live(&self, offset: u64) -> bool {
        self.state(offset) == SlotState::Live
    }

    pub fn deleted_count(&self) -> u64 {
        self.free_list.len() as u64
    }

    #[inline]
    pub fn plan_put(&self, offset_capacity: u64) -> Option<PutPlan> {
        if let Some(&offset) = self.free_list.last() {
            return Some(PutPlan {
                offset,
                reused: true,
            });
        }
        (self.alloc_counter < offset_capacity).then_some(PutPlan {
            offset: self.alloc_counter,
            reused: false,
        })
    }

    /// Grows backing arrays so that a put of `len` bytes at `offset` has
    /// somewhere to land. Returns the blocks the put will write.
    #[inline]
    pub fn prepare_put(&mut self, offset: u64, len: usize) -> Blocks {
        match &mut self.slots {
            Slots::Fixed { width, .. } => {
                let w = *width as usize;
                // Growth waits for the write; a fresh block has nothing to
                // fault in.
                byte_blocks(offset as usize * w, w)
            }
            Slots::VarLen(arena) => {
                let class = class_for(&arena.class_sizes, len).expect("length checked by caller");
                let b = &mut arena.buckets[class];
                let slot = match b.free.last() {
                    Some(&s) => s,
                    None => {
                        let cs = arena.class_sizes[class] as usize;
                        b.data.resize((b.slot_count as usize + 1) * cs, 0);
                        b.slot_count
                    }
                };
                let cs = arena.class_sizes[class] as usize;
                let b = byte_blocks(slot as usize * cs, cs);
                bucket_block(class, *b.start())..=bucket_block(class, *b.end())
            }
        }
    }

    /// Stores `value` where `plan` says, after [`Self::prepare_put`].
    #[inline]
    pub fn apply_plan(&mut self, plan: PutPlan, value: &[u8]) {
        if plan.reused {
            self.free_list.pop();
        } else {
            self.alloc_counter += 1;
            self.states.push(SlotState::Unused);
        }
        self.write_value(plan.offset, value);
    }

    /// Stores `value` at `offset` from a replayed record, which may target a
    /// slot that is already live.
    pub fn apply_put(&mut self, offset: u64, value: &[u8]) {
        if self.is_live(offset) {
            self.release_bucket_slot(offset);
            self.live -= 1;
        } else if let Some(pos) = self.free_list.iter().rposition(|&o| o == offset) {
            self.free_list.remove(pos);
        }
        if offset >= self.alloc_counter {
            self.alloc_counter = offset + 1;
            self.states
                .resize(self.alloc_counter as usize, SlotState::Unused);
        }
        self.write_value(offset, value);
    }

    /// Writes into a slot that is not live and marks it live.
    #[inline]
    fn write_value(&mut self, offset: u64, value: &[u8]) {
        match &mut self.slots {
            Slots::Fixed { width, data } => {
                let w = *width as usize;
                let start = offset as usize * w;
                grow_to(data, start + w);
                copy_value(&mut data[start..start + w], value);
            }
            Slots::VarLen(arena) => arena.write(offset, value),
        }
        self.states[offset as usize] = SlotState::Live;
        self.live += 1;
    }

    fn release_bucket_slot(&mut self, offset: u64) {
        if let Slots::VarLen(arena) = &mut self.slots {
            let e = arena.index[offset as usize];
            let b = &mut arena.buckets[e.class as usize];
            b.free.push(e.slot);
            b.occupied -= 1;
        }
    }

    /// Blocks holding the value at a live offset.
    #[inline]
    pub fn blocks_of(&self, offset: u64) -> Blocks {
        match &self.slots {
            Slots::Fixed { width, .. } => {
                let w = *width as usize;
                byte_blocks(offset as usize * w, w)
            }
            Slots::VarLen(arena) => {
                let e = arena.index[offset as usize];
                let cs = arena.class_sizes[e.class as usize] as usize;
                let b = byte_blocks(e.slot as usize * cs, cs);
                let class = e.class as usize;
                bucket_block(class, *b.start())..=bucket_block(class, *b.end())
            }
        }
    }

    pub fn read(&self, offset: u64) -> Option<Vec<u8>> {
        self.value(offset).map(<[u8]>::to_vec)
    }

    #[inline]
    pub fn value(&self, offset: u64) -> Option<&[u8]> {
        if !self.is_live(offset) {
            return None;
        }
        Some(match &self.slots {
            Slots::Fixed { width, data } => {
                let w = *width as usize;
                &data[offset as usize * w..(offset as usize + 1) * w]
            }
            Slots::VarLen(arena) => {
                let e = arena.index[offset as usize];
                let start = arena.slot_range(e.class as usize, e.slot).start;
                &arena.buckets[e.class as usize].data[start..start + e.len as usize]
            }
        })
    }

    pub fn apply_delete(&mut self, offset: u64) -> bool {
        if !self.is_live(offset) {
            return false;
        }
        self.release_bucket_slot(offset);
        self.states[offset as usize] = SlotState::LogicallyDeleted;
        self.free_list.push(offset);
        self.live -= 1;
        true
    }

    /// Discards every slot and resets the allocator. Returns the number of
    /// live values dropped.
    pub fn clear(&mut self, max_value_len: usize) -> u64 {
        let dropped = self.live;
        *self = Partition::new(self.id, self.kind, self.layout(), max_value_len);
        dropped
    }

    pub fn bytes_data(&self) -> u64 {
        match &self.slots {
            Slots::Fixed { width, .. } => self.alloc_counter * *width as u64,
            Slots::VarLen(arena) => arena
                .buckets
                .iter()
                .zip(&arena.class_sizes)
                .map(|(b, &cs)| b.slot_count * cs as u64)
                .sum(),
        }
    }

    pub fn live_offsets(&self) -> impl Iterator<Item = u64> + '_ {
        self.states
            .iter()
            .enumerate()
            .filter(|(_, s)| **s == SlotState::Live)
            .map(|(o, _)| o as u64)
    }

    pub fn page_count(&self) -> usize {
        match &self.slots {
            Slots::Fixed { data, .. } => pages(data.len()) as usize,
            Slots::VarLen(arena) => arena
                .buckets
                .iter()
                .map(|b| pages(b.data.len()) as usize)
                .sum(),
        }
    }

    /// Every block index currently backed by memory.
    pub fn all_blocks(&self) -> Vec<u64> {
        match &self.slots {
            Slots::Fixed { data, .. } => (0..pages(data.len())).collect(),
            Slots::VarLen(arena) => arena
                .buckets
                .iter()
                .enumerate()
                .flat_map(|(c, b)| (0..pages(b.data.len())).map(move |p| bucket_block(c, p)))
                .collect(),
        }
    }

    /// The bytes of one block; the last block of an array may be short.
    pub fn block_mut(&mut self, index: u64) -> &mut [u8] {
        let (data, page) = match &mut self.slots {
            Slots::Fixed { data, .. } => (data, index),
            Slots::VarLen(arena) => {
                let class = (index >> CLASS_SHIFT) as usize - 1;
                (&mut arena.buckets[class].data, index & PAGE_MASK)
            }
        };
        let start = page as usize * BLOCK_SIZE;
        let end = (start + BLOCK_SIZE).min(data.len());
        &mut data[start..end]
    }

    /// Per-class count of occupied bucket slots, or `None` for fixed layouts.
    pub fn class_occupancy(&self) -> Option<Vec<u64>> {
        match &self.slots {
            Slots::Fixed { .. } => None,
            Slots::VarLen(arena) => Some(arena.buckets.iter().map(|b| b.occupied).collect()),
        }
    }

    /// Per-class count of live FIDs according to the offset index.
    pub fn class_live_counts(&self) -> Option<Vec<u64>> {
        let Slots::VarLen(arena) = &self.slots else {
            return None;
        };
        let mut counts = vec![0u64; arena.class_sizes.len()];
        for o in self.live_offsets() {
            counts[arena.index[o as usize].class as usize] += 1;
        }
        Some(counts)
    }
}

/// `dst.copy_from_slice(src)` with the common integer widths unrolled.
#[inline]
fn copy_value(dst: &mut [u8], src: &[u8]) {
    match (dst.len(), src.len()) {
        (4, 4) => dst[..4].copy_from_slice(&src[..4]),
        (8, 8) => dst[..8].copy_from_slice(&src[..8]),
        _ => dst.copy_from_slice(src),
    }
}

/// Fixed-width arrays grow a whole block at a time.
#[inline]
fn grow_to(data: &mut Vec<u8>, end: usize) {
    if data.len() < end {
        data.resize(end.next_multiple_of(BLOCK_SIZE), 0);
    }
}

fn pages(len: usize) -> u64 {
    len.div_ceil(BLOCK_SIZE) as u64
}

#[inline]
fn byte_blocks(start: usize, len: usize) -> Blocks {
    let first = (start / BLOCK_SIZE) as u64;
    let last = ((start + len.max(1) - 1) / BLOCK_SIZE) as u64;
    first..=last
}
