//! `db.wal`: redo log of row-version mutations, framed like `store.wal`.
//!
//! A transaction's records are appended at prepare time and become effective
//! only when its `Commit` record is durable. Replay applies each committed
//! transaction's records at the position of its commit record.

use std::collections::HashMap;
use std::io;

use crate::codec::{encode_frame, scan_frames, ByteReader, ByteWriter, DecodeError, TailState};
use crate::fid::Fid;
use crate::vfs::SharedDisk;

use super::{Cell, RowId, TxnId};

pub const DB_WAL_FILE: &str = "db.wal";

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum DbRecord {
    NewVersion {
        txn: TxnId,
        table: u32,
        row: RowId,
        cells: Vec<Cell>,
    },
    EndVersion {
        txn: TxnId,
        table: u32,
        row: RowId,
    },
    Commit {
        txn: TxnId,
    },
    /// Versions removed by vacuum, as `(row, begin, end)`.
    Vacuum {
        table: u32,
        removed: Vec<(RowId, TxnId, Option<TxnId>)>,
    },
}

impl DbRecord {
    pub fn txn(&self) -> Option<TxnId> {
        match self {
            DbRecord::NewVersion { txn, .. }
            | DbRecord::EndVersion { txn, .. }
            | DbRecord::Commit { txn } => Some(*txn),
            DbRecord::Vacuum { .. } => None,
        }
    }
}

pub fn encode_cell(w: &mut ByteWriter, c: &Cell) {
    match c {
        Cell::Null => {
            w.u8(0);
        }
        Cell::Int(v) => {
            w.u8(1).i64(*v);
        }
        Cell::Bytes(b) => {
            w.u8(2).bytes(b);
        }
        Cell::Fid(f) => {
            w.u8(3).u64(f.raw());
        }
    }
}

pub fn decode_cell(r: &mut ByteReader) -> Result<Cell, DecodeError> {
    let at = r.position();
    Ok(match r.u8()? {
        0 => Cell::Null,
        1 => Cell::Int(r.i64()?),
        2 => Cell::Bytes(r.bytes()?.to_vec()),
        3 => Cell::Fid(Fid(r.u64()?)),
        _ => return Err(DecodeError { at }),
    })
}

impl DbRecord {
    pub fn encode(&self) -> Vec<u8> {
        let mut w = ByteWriter::with_capacity(64);
        match self {
            DbRecord::NewVersion {
                txn,
                table,
                row,
                cells,
            } => {
                w.u8(1)
                    .u64(*txn)
                    .u32(*table)
                    .u64(*row)
                    .u32(cells.len() as u32);
                for c in cells {
                    encode_cell(&mut w, c);
                }
            }
            DbRecord::EndVersion { txn, table, row } => {
                w.u8(2).u64(*txn).u32(*table).u64(*row);
            }
            DbRecord::Commit { txn } => {
                w.u8(3).u64(*txn);
            }
            DbRecord::Vacuum { table, removed } => {
                w.u8(4).u32(*table).u32(removed.len() as u32);
                for (row, begin, end) in removed {
                    w.u64(*row).u64(*begin).u64(end.unwrap_or(0));
                }
            }
        }
        w.into_inner()
    }

    pub fn decode(body: &[u8]) -> Result<Self, DecodeError> {
        let mut r = ByteReader::new(body);
        let rec = match r.u8()? {
            1 => {
                let txn = r.u64()?;
                let table = r.u32()?;
                let row = r.u64()?;
                let n = r.u32()?;
                let cells = (0..n)
                    .map(|_| decode_cell(&mut r))
                    .collect::<Result<_, _>>()?;
                DbRecord::NewVersion {
                    txn,
                    table,
                    row,
                    cells,
                }
            }
            2 => DbRecord::EndVersion {
                txn: r.u64()?,
                table: r.u32()?,
                row: r.u64()?,
            },
            3 => DbRecord::Commit { txn: r.u64()? },
            4 => {
                let table = r.u32()?;
                let n = r.u32()?;
                let removed = (0..n)
                    .map(|_| {
                        let row = r.u64()?;
                        let begin = r.u64()?;
                        let end = r.u64()?;
                        Ok((row, begin, (end != 0).then_some(end)))
                    })
                    .collect::<Result<_, DecodeError>>()?;
                DbRecord::Vacuum { table, removed }
            }
            _ => return Err(DecodeError { at: 0 }),
        };
        r.finish()?;
        Ok(rec)
    }
}

pub struct DbWal {
    disk: SharedDisk,
    pending: bool,
    syncs: u64,
}

/// Replay input: committed work in commit order.
#[derive(Debug, Default)]
pub struct Replayed {
    /// Each entry is a committed transaction's records or a vacuum record.
    pub effective: Vec<DbRecord>,
    pub committed: Vec<TxnId>,
    pub max_txn: TxnId,
    pub uncommitted_txns: usize,
    pub torn_bytes_discarded: usize,
}

#[derive(Debug, thiserror::Error)]
pub enum DbWalError {
    #[error("db.wal corrupt at byte {0}")]
    Corrupt(usize),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DbWal {
    pub fn open(disk: SharedDisk) -> Result<(DbWal, Replayed), DbWalError> {
        let data = disk.read(DB_WAL_FILE)?.unwrap_or_default();
        let scan = scan_frames(&data);
        if let TailState::Corrupt { at } = scan.tail {
            return Err(DbWalError::Corrupt(at));
        }
        let mut out = Replayed::default();
        let mut staged: HashMap<TxnId, Vec<DbRecord>> = HashMap::new();
        let mut offset = 0;
        for body in &scan.bodies {
            let rec = DbRecord::decode(body).map_err(|_| DbWalError::Corrupt(offset))?;
            offset += body.len() + crate::codec::FRAME_HEADER;
            if let Some(t) = rec.txn() {
                out.max_txn = out.max_txn.max(t);
            }
            match rec {
                DbRecord::Commit { txn } => {
                    out.effective
                        .extend(staged.remove(&txn).unwrap_or_default());
                    out.committed.push(txn);
                }
                DbRecord::Vacuum { .. } => out.effective.push(rec),
                rec => staged.entry(rec.txn().unwrap()).or_default().push(rec),
            }
        }
        out.uncommitted_txns = staged.len();
        out.torn_bytes_discarded = data.len() - scan.valid_len;
        if out.torn_bytes_discarded > 0 {
            disk.write_atomic(DB_WAL_FILE, &data[..scan.valid_len])?;
        }
        Ok((
            DbWal {
                disk,
                pending: false,
                syncs: 0,
            },
            out,
        ))
    }

    pub fn append(&mut self, rec: &DbRecord) -> io::Result<()> {
        self.disk
            .append(DB_WAL_FILE, &encode_frame(&rec.encode()))?;
        self.pending = true;
        Ok(())
    }

    pub fn sync(&mut self) -> io::Result<()> {
        if self.pending {
            self.disk.sync(DB_WAL_FILE)?;
            self.pending = false;
            self.syncs += 1;
        }
        Ok(())
    }

    pub fn syncs(&self) -> u64 {
        self.syncs
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::vfs::{Disk, MemDisk};
    use std::sync::Arc;

    #[test]
    fn only_committed_records_replay() {
        let disk = MemDisk::new();
        let (mut w, _) = DbWal::open(Arc::new(disk.clone())).unwrap();
        let nv = |txn, row| DbRecord::NewVersion {
            txn,
            table: 0,
            row,
            cells: vec![
                Cell::Int(-3),
                Cell::Fid(Fid(9)),
                Cell::Bytes(b"x".to_vec()),
                Cell::Null,
            ],
        };
        w.append(&nv(1, 0)).unwrap();
        w.append(&nv(2, 1)).unwrap();
        w.append(&DbRecord::Commit { txn: 2 }).unwrap();
        w.sync().unwrap();
        w.append(&DbRecord::Commit { txn: 1 }).unwrap();
        disk.crash();
        let (_, r) = DbWal::open(Arc::new(disk.clone())).unwrap();
        assert_eq!(r.committed, vec![2]);
        assert_eq!(r.effective, vec![nv(2, 1)]);
        assert_eq!(r.uncommitted_txns, 1);
        assert_eq!(r.max_txn, 2);
    }

    #[test]
    fn records_round_trip() {
        let recs = [
            DbRecord::EndVersion {
                txn: 4,
                table: 1,
                row: 2,
            },
            DbRecord::Vacuum {
                table: 3,
                removed: vec![(1, 2, None), (1, 2, Some(5))],
            },
        ];
        for r in recs {
            assert_eq!(DbRecord::decode(&r.encode()).unwrap(), r);
        }
    }
}
