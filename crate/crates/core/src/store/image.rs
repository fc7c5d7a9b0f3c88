//! Checkpoint image of one permanent partition.
//!
//! `part-{id:08x}.{lsn:016x}.fid` holds a 32-byte superblock followed by the
//! slot data, `.state` holds 2-bit slot states packed four per byte, and
//! `.free` holds the free lists in reuse order.

use thiserror::Error;

use super::partition::{Bucket, IndexEntry, Partition, Slots, VarLenArena};
use super::{PartitionKind, SlotState, ValueLayout};
use crate::codec::{ByteReader, ByteWriter, DecodeError};

pub const MAGIC: &[u8; 8] = b"FIDSTOR1";
pub const SUPERBLOCK_LEN: usize = 32;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ImageError {
    #[error("bad superblock in {0}")]
    BadSuperblock(String),
    #[error("image {file} malformed: {source}")]
    Malformed { file: String, source: DecodeError },
    #[error("image {0} was written with a different FID layout")]
    PrefixMismatch(String),
}

pub fn base_name(id: u32, lsn: u64) -> String {
    format!("part-{id:08x}.{lsn:016x}")
}

/// Parses `part-{id}.{lsn}.fid` into `(id, lsn)`.
pub fn parse_image_name(name: &str) -> Option<(u32, u64, &str)> {
    let rest = name.strip_prefix("part-")?;
    let (id, rest) = rest.split_once('.')?;
    let (lsn, ext) = rest.split_once('.')?;
    if id.len() != 8 || lsn.len() != 16 {
        return None;
    }
    Some((
        u32::from_str_radix(id, 16).ok()?,
        u64::from_str_radix(lsn, 16).ok()?,
        ext,
    ))
}

pub struct ImageFiles {
    pub fid: Vec<u8>,
    pub state: Vec<u8>,
    pub free: Vec<u8>,
}

pub fn superblock(prefix_bits: u8, p: &Partition) -> [u8; SUPERBLOCK_LEN] {
    let mut sb = [0u8; SUPERBLOCK_LEN];
    sb[..8].copy_from_slice(MAGIC);
    sb[8] = prefix_bits;
    sb[9] = p.kind.code();
    let layout = p.layout();
    sb[10] = layout.code();
    sb[11..15].copy_from_slice(&layout.width_or_zero().to_le_bytes());
    sb[15..23].copy_from_slice(&p.alloc_counter.to_le_bytes());
    sb
}

pub fn pack_states(states: &[SlotState]) -> Vec<u8> {
    let mut out = vec![0u8; states.len().div_ceil(4)];
    for (i, s) in states.iter().enumerate() {
        out[i / 4] |= (*s as u8) << ((i % 4) * 2);
    }
    out
}

pub fn unpack_states(packed: &[u8], n: usize) -> Option<Vec<SlotState>> {
    if packed.len() != n.div_ceil(4) {
        return None;
    }
    (0..n)
        .map(|i| SlotState::from_code((packed[i / 4] >> ((i % 4) * 2)) & 0b11))
        .collect()
}

pub fn encode(prefix_bits: u8, p: &Partition) -> ImageFiles {
    let mut fid = ByteWriter::with_capacity(SUPERBLOCK_LEN + p.bytes_data() as usize);
    fid.raw(&superblock(prefix_bits, p));
    let mut free = ByteWriter::new();
    free.u64(p.free_list.len() as u64);
    for &o in &p.free_list {
        free.u64(o);
    }
    match &p.slots {
        Slots::Fixed { width, data } => {
            fid.raw(&data[..(p.alloc_counter * *width as u64) as usize]);
        }
        Slots::VarLen(arena) => {
            fid.u32(arena.class_sizes.len() as u32);
            for &c in &arena.class_sizes {
                fid.u32(c);
            }
            for o in 0..p.alloc_counter as usize {
                let e = arena.index.get(o).copied().unwrap_or_default();
                fid.u8(e.class).u32(e.len).u64(e.slot);
            }
            for (b, &cs) in arena.buckets.iter().zip(&arena.class_sizes) {
                fid.u64(b.slot_count);
                fid.raw(&b.data[..(b.slot_count * cs as u64) as usize]);
                free.u64(b.free.len() as u64);
                for &s in &b.free {
                    free.u64(s);
                }
            }
        }
    }
    ImageFiles {
        fid: fid.into_inner(),
        state: pack_states(&p.states[..p.alloc_counter as usize]),
        free: free.into_inner(),
    }
}

pub fn decode(
    name: &str,
    id: u32,
    prefix_bits: u8,
    files: &ImageFiles,
) -> Result<Partition, ImageError> {
    let bad = || ImageError::BadSuperblock(name.to_string());
    let malformed = |source| ImageError::Malformed {
        file: name.to_string(),
        source,
    };
    let sb = files.fid.get(..SUPERBLOCK_LEN).ok_or_else(bad)?;
    if &sb[..8] != MAGIC {
        return Err(bad());
    }
    if sb[8] != prefix_bits {
        return Err(ImageError::PrefixMismatch(name.to_string()));
    }
    let kind = PartitionKind::from_code(sb[9]).ok_or_else(bad)?;
    let width = u32::from_le_bytes(sb[11..15].try_into().unwrap());
    let layout = ValueLayout::from_code(sb[10], width).ok_or_else(bad)?;
    let alloc = u64::from_le_bytes(sb[15..23].try_into().unwrap());
    let states = unpack_states(&files.state, alloc as usize).ok_or_else(bad)?;

    let mut r = ByteReader::new(&files.fid[SUPERBLOCK_LEN..]);
    let mut fr = ByteReader::new(&files.free);
    let read_list = |fr: &mut ByteReader| -> Result<Vec<u64>, DecodeError> {
        let n = fr.u64()?;
        (0..n).map(|_| fr.u64()).collect()
    };
    let free_list = read_list(&mut fr).map_err(malformed)?;
    let slots = match layout {
        ValueLayout::FixedWidth(w) => {
            let data = r
                .raw((alloc * w as u64) as usize)
                .map_err(malformed)?
                .to_vec();
            Slots::Fixed { width: w, data }
        }
        ValueLayout::VarLen => {
            let n = r.u32().map_err(malformed)? as usize;
            let class_sizes = (0..n)
                .map(|_| r.u32())
                .collect::<Result<Vec<_>, _>>()
                .map_err(malformed)?;
            let index = (0..alloc)
                .map(|_| {
                    Ok(IndexEntry {
                        class: r.u8()?,
                        len: r.u32()?,
                        slot: r.u64()?,
                    })
                })
                .collect::<Result<Vec<_>, DecodeError>>()
                .map_err(malformed)?;
            let mut buckets = Vec::with_capacity(n);
            for &cs in &class_sizes {
                let slot_count = r.u64().map_err(malformed)?;
                let data = r
                    .raw((slot_count * cs as u64) as usize)
                    .map_err(malformed)?
                    .to_vec();
                let free = read_list(&mut fr).map_err(malformed)?;
                buckets.push(Bucket {
                    data,
                    slot_count,
                    occupied: slot_count - free.len() as u64,
                    free,
                });
            }
            Slots::VarLen(VarLenArena {
                class_sizes,
                index,
                buckets,
            })
        }
    };
    r.finish().map_err(malformed)?;
    fr.finish().map_err(malformed)?;
    let live = states.iter().filter(|s| **s == SlotState::Live).count() as u64;
    Ok(Partition {
        id,
        kind,
        alloc_counter: alloc,
        free_list,
        states,
        slots,
        live,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn superblock_layout() {
        let mut p = Partition::new(
            3,
            PartitionKind::Permanent,
            ValueLayout::FixedWidth(8),
            4096,
        );
        p.prepare_put(0, 8);
        p.apply_put(0, &[9; 8]);
        let sb = superblock(16, &p);
        assert_eq!(&sb[..8], b"FIDSTOR1");
        assert_eq!(sb[8], 16);
        assert_eq!(sb[9], 1);
        assert_eq!(sb[10], 0);
        assert_eq!(&sb[11..15], &8u32.to_le_bytes());
        assert_eq!(&sb[15..23], &1u64.to_le_bytes());
        assert!(sb[23..].iter().all(|&b| b == 0));
    }

    #[test]
    fn states_pack_four_per_byte() {
        let s = [
            SlotState::Live,
            SlotState::LogicallyDeleted,
            SlotState::Unused,
            SlotState::Live,
            SlotState::LogicallyDeleted,
        ];
        let packed = pack_states(&s);
        assert_eq!(packed, vec![0b01_00_10_01, 0b10]);
        assert_eq!(unpack_states(&packed, 5).unwrap(), s);
    }

    #[test]
    fn varlen_round_trip() {
        let mut p = Partition::new(1, PartitionKind::Permanent, ValueLayout::VarLen, 4096);
        for (o, len) in [(0u64, 5usize), (1, 40), (2, 17), (3, 300)] {
            p.prepare_put(o, len);
            p.apply_put(o, &vec![o as u8 + 1; len]);
        }
        p.apply_delete(1);
        let files = encode(16, &p);
        let q = decode("t", 1, 16, &files).unwrap();
        for o in 0..4 {
            assert_eq!(q.read(o), p.read(o));
        }
        assert_eq!(q.free_list, p.free_list);
        assert_eq!(q.class_occupancy(), p.class_occupancy());
        assert!(matches!(
            decode("t", 1, 12, &files),
            Err(ImageError::PrefixMismatch(_))
        ));
    }

    #[test]
    fn image_names() {
        let n = format!("{}.fid", base_name(2, 0x1f));
        assert_eq!(n, "part-00000002.000000000000001f.fid");
        assert_eq!(parse_image_name(&n), Some((2, 0x1f, "fid")));
        assert_eq!(parse_image_name("store.wal"), None);
    }
}
