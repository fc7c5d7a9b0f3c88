//! LRU residency for permanent-partition blocks.

use foldhash::fast::FixedState;
use lru::LruCache;

use crate::atrest::BlockId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CacheCapacity {
    Unbounded,
    Blocks(usize),
    /// Fraction of all permanent-partition blocks, recomputed as data grows.
    FractionOfData(f64),
}

impl Default for CacheCapacity {
    fn default() -> Self {
        CacheCapacity::FractionOfData(0.25)
    }
}

impl CacheCapacity {
    pub fn blocks(&self, data_blocks: usize) -> usize {
        match *self {
            CacheCapacity::Unbounded => usize::MAX,
            CacheCapacity::Blocks(n) => n.max(1),
            CacheCapacity::FractionOfData(f) => ((data_blocks as f64 * f).floor() as usize).max(1),
        }
    }
}

pub struct PageCache {
    /// Resident block → dirty since last seal.
    lru: LruCache<BlockId, bool, FixedState>,
    pub capacity: CacheCapacity,
    /// Head of `lru` and its dirty bit; re-touching it changes nothing.
    mru: Option<(BlockId, bool)>,
}

pub enum Lookup {
    Hit,
    Miss,
}

impl PageCache {
    pub fn new(capacity: CacheCapacity) -> Self {
        PageCache {
            lru: LruCache::unbounded_with_hasher(FixedState::default()),
            capacity,
            mru: None,
        }
    }

    /// True if touching `id` would change nothing.
    #[inline]
    pub fn is_mru(&self, id: BlockId, write: bool) -> bool {
        matches!(self.mru, Some((m, dirty)) if m == id && (dirty || !write))
    }

    pub fn touch(&mut self, id: BlockId, write: bool) -> Lookup {
        if self.is_mru(id, write) {
            return Lookup::Hit;
        }
        // Recency only matters once something can be evicted.
        let entry = if self.capacity == CacheCapacity::Unbounded {
            self.lru.peek_mut(&id)
        } else {
            self.lru.get_mut(&id)
        };
        match entry {
            Some(dirty) => {
                *dirty |= write;
                self.mru = Some((id, *dirty));
                Lookup::Hit
            }
            None => Lookup::Miss,
        }
    }

    pub fn admit(&mut self, id: BlockId, dirty: bool) {
        self.lru.put(id, dirty);
        self.mru = Some((id, dirty));
    }

    pub fn contains(&self, id: BlockId) -> bool {
        self.lru.contains(&id)
    }

    pub fn len(&self) -> usize {
        self.lru.len()
    }

    /// Pops least-recently-used blocks until at most `limit` remain.
    pub fn overflow(&mut self, limit: usize) -> Vec<(BlockId, bool)> {
        let mut out = Vec::new();
        while self.lru.len() > limit {
            out.extend(self.lru.pop_lru());
        }
        if self.lru.is_empty() {
            self.mru = None;
        }
        out
    }

    pub fn drain(&mut self) -> Vec<(BlockId, bool)> {
        self.overflow(0)
    }
}
