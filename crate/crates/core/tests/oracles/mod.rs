//! Brute-force reference models. Nothing here imports `fidstore`; each model
//! restates the intended behaviour in the most direct form available, so a
//! disagreement with the implementation is a finding about one of the two.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet};

// ---- mapping store ----

/// Bits of a raw FID left for the offset under the default 16-bit prefix.
pub const OFFSET_BITS: u32 = 48;

pub fn raw_fid(partition: u32, offset: u64) -> u64 {
    ((partition as u64) << OFFSET_BITS) | offset
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelCall {
    Create { temporary: bool, width: Option<u32> },
    Put { partition: u32, value: Vec<u8> },
    Get { fid: u64 },
    Delete { fid: u64 },
    Promote { fid: u64, partition: u32 },
    DropTemporary { partition: u32 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ModelOutcome {
    Created(u32),
    Fid(u64),
    Value(Option<Vec<u8>>),
    Done,
    Rejected,
}

#[derive(Debug, Clone, Default)]
pub struct ModelPartition {
    pub temporary: bool,
    pub width: Option<u32>,
    pub next: u64,
    /// Deleted offsets; the most recent is reused first.
    pub free: Vec<u64>,
    pub values: BTreeMap<u64, Vec<u8>>,
}

/// Associative map from FID to value plus per-partition free lists.
#[derive(Debug, Clone, Default)]
pub struct ModelStore {
    pub partitions: BTreeMap<u32, ModelPartition>,
    pub max_value_len: usize,
}

impl ModelStore {
    pub fn new(max_value_len: usize) -> Self {
        ModelStore {
            partitions: BTreeMap::new(),
            max_value_len,
        }
    }

    fn split(fid: u64) -> (u32, u64) {
        ((fid >> OFFSET_BITS) as u32, fid & ((1 << OFFSET_BITS) - 1))
    }

    fn lookup(&self, fid: u64) -> Option<&Vec<u8>> {
        let (p, o) = Self::split(fid);
        self.partitions.get(&p)?.values.get(&o)
    }

    fn put(&mut self, partition: u32, value: Vec<u8>) -> ModelOutcome {
        let max = self.max_value_len;
        let Some(p) = self.partitions.get_mut(&partition) else {
            return ModelOutcome::Rejected;
        };
        if value.is_empty()
            || value.len() > max
            || p.width.is_some_and(|w| w as usize != value.len())
        {
            return ModelOutcome::Rejected;
        }
        let offset = match p.free.pop() {
            Some(o) => o,
            None => {
                p.next += 1;
                p.next - 1
            }
        };
        p.values.insert(offset, value);
        ModelOutcome::Fid(raw_fid(partition, offset))
    }

    pub fn apply(&mut self, call: ModelCall) -> ModelOutcome {
        match call {
            ModelCall::Create { temporary, width } => {
                if width == Some(0) || width.is_some_and(|w| w as usize > self.max_value_len) {
                    return ModelOutcome::Rejected;
                }
                let id = (0u32..).find(|i| !self.partitions.contains_key(i)).unwrap();
                self.partitions.insert(
                    id,
                    ModelPartition {
                        temporary,
                        width,
                        ..Default::default()
                    },
                );
                ModelOutcome::Created(id)
            }
            ModelCall::Put { partition, value } => self.put(partition, value),
            ModelCall::Get { fid } => ModelOutcome::Value(self.lookup(fid).cloned()),
            ModelCall::Delete { fid } => {
                let (p, o) = Self::split(fid);
                let Some(part) = self.partitions.get_mut(&p) else {
                    return ModelOutcome::Rejected;
                };
                if part.values.remove(&o).is_none() {
                    return ModelOutcome::Rejected;
                }
                part.free.push(o);
                ModelOutcome::Done
            }
            ModelCall::Promote { fid, partition } => {
                let (src, _) = Self::split(fid);
                let src_temp = self.partitions.get(&src).map(|p| p.temporary);
                let dst_perm = self.partitions.get(&partition).map(|p| !p.temporary);
                if src_temp != Some(true) || dst_perm != Some(true) {
                    return ModelOutcome::Rejected;
                }
                match self.lookup(fid).cloned() {
                    Some(v) => self.put(partition, v),
                    None => ModelOutcome::Rejected,
                }
            }
            ModelCall::DropTemporary { partition } => match self.partitions.get_mut(&partition) {
                Some(p) if p.temporary => {
                    p.values.clear();
                    p.free.clear();
                    p.next = 0;
                    ModelOutcome::Done
                }
                _ => ModelOutcome::Rejected,
            },
        }
    }

    /// Live values of permanent partitions, keyed by raw FID.
    pub fn permanent_view(&self) -> BTreeMap<u64, Vec<u8>> {
        self.partitions
            .iter()
            .filter(|(_, p)| !p.temporary)
            .flat_map(|(&id, p)| {
                p.values
                    .iter()
                    .map(move |(&o, v)| (raw_fid(id, o), v.clone()))
            })
            .collect()
    }

    pub fn permanent_ids(&self) -> BTreeSet<u32> {
        self.partitions
            .iter()
            .filter(|(_, p)| !p.temporary)
            .map(|(&id, _)| id)
            .collect()
    }
}

pub fn model_store_apply(
    max_value_len: usize,
    calls: impl IntoIterator<Item = ModelCall>,
) -> (ModelStore, Vec<ModelOutcome>) {
    let mut m = ModelStore::new(max_value_len);
    let out = calls.into_iter().map(|c| m.apply(c)).collect();
    (m, out)
}

// ---- write-ahead log ----

/// What a recovered store may hold: the permanent partitions and values
/// left by some prefix of the calls.
pub type DurableState = (BTreeSet<u32>, BTreeMap<u64, Vec<u8>>);

/// Permanent state after each prefix of `calls`: entry `k` is the state
/// after the first `k` calls.
pub fn prefix_states(max_value_len: usize, calls: &[ModelCall]) -> Vec<DurableState> {
    let mut m = ModelStore::new(max_value_len);
    let mut out = vec![(m.permanent_ids(), m.permanent_view())];
    for c in calls {
        m.apply(c.clone());
        out.push((m.permanent_ids(), m.permanent_view()));
    }
    out
}

/// The prefix lengths in `lo..=hi` whose state equals `got`.
pub fn matching_prefixes(
    states: &[DurableState],
    lo: usize,
    hi: usize,
    got: &DurableState,
) -> Vec<usize> {
    (lo..=hi.min(states.len() - 1))
        .filter(|&k| &states[k] == got)
        .collect()
}

// ---- plaintext tables ----

#[derive(Debug, Clone, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Val {
    Int(i64),
    Bytes(Vec<u8>),
}

impl Val {
    pub fn int(&self) -> i64 {
        match self {
            Val::Int(v) => *v,
            Val::Bytes(_) => panic!("not an integer"),
        }
    }
}

pub type ShadowTxn = u64;
pub type Key = (u32, u64);

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShadowOp {
    CreateTable,
    Begin,
    Insert {
        txn: ShadowTxn,
        table: u32,
        values: Vec<Val>,
    },
    Update {
        txn: ShadowTxn,
        table: u32,
        row: u64,
        col: usize,
        value: Val,
    },
    Delete {
        txn: ShadowTxn,
        table: u32,
        row: u64,
    },
    Read {
        txn: ShadowTxn,
        table: u32,
        row: u64,
    },
    Sum {
        txn: ShadowTxn,
        table: u32,
        col: usize,
    },
    SelectGt {
        txn: ShadowTxn,
        table: u32,
        col: usize,
        constant: i64,
    },
    Commit {
        txn: ShadowTxn,
    },
    Abort {
        txn: ShadowTxn,
    },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum ShadowResult {
    Table(u32),
    Began(ShadowTxn),
    Row(u64),
    Done,
    NotVisible,
    /// The write lost to a concurrent writer; the transaction is aborted.
    Conflict,
    NotActive,
    Value(Option<Vec<Val>>),
    Sum(i64),
    Rows(Vec<u64>),
}

#[derive(Debug, Clone, Default)]
struct ShadowTxnState {
    start: u64,
    writes: BTreeMap<Key, Option<Vec<Val>>>,
}

/// Plaintext tables under snapshot isolation with first-updater-wins,
/// kept as commit-timestamped histories.
/// `(commit time, row or tombstone)`.
type Version = (u64, Option<Vec<Val>>);

#[derive(Debug, Clone, Default)]
pub struct ShadowDb {
    clock: u64,
    next_txn: ShadowTxn,
    next_row: Vec<u64>,
    /// `(commit time, value or tombstone)`, oldest first.
    history: BTreeMap<Key, Vec<Version>>,
    active: BTreeMap<ShadowTxn, ShadowTxnState>,
}

impl ShadowDb {
    fn committed_at(&self, key: &Key, ts: u64) -> Option<&Vec<Val>> {
        self.history
            .get(key)?
            .iter()
            .rev()
            .find(|(t, _)| *t <= ts)
            .and_then(|(_, v)| v.as_ref())
    }

    fn sees(&self, txn: ShadowTxn, key: &Key) -> Option<Vec<Val>> {
        let t = &self.active[&txn];
        match t.writes.get(key) {
            Some(w) => w.clone(),
            None => self.committed_at(key, t.start).cloned(),
        }
    }

    fn visible_rows(&self, txn: ShadowTxn, table: u32) -> Vec<(u64, Vec<Val>)> {
        let keys: BTreeSet<Key> = self
            .history
            .keys()
            .chain(self.active[&txn].writes.keys())
            .filter(|k| k.0 == table)
            .copied()
            .collect();
        keys.into_iter()
            .filter_map(|k| self.sees(txn, &k).map(|v| (k.1, v)))
            .collect()
    }

    fn write(
        &mut self,
        txn: ShadowTxn,
        key: Key,
        f: impl FnOnce(Vec<Val>) -> Option<Vec<Val>>,
    ) -> ShadowResult {
        let Some(cur) = self.sees(txn, &key) else {
            return ShadowResult::NotVisible;
        };
        let mine = self.active[&txn].writes.contains_key(&key);
        let start = self.active[&txn].start;
        let newer_commit = self
            .history
            .get(&key)
            .is_some_and(|h| h.iter().any(|(t, _)| *t > start));
        let held = self
            .active
            .iter()
            .any(|(&o, s)| o != txn && s.writes.contains_key(&key));
        if !mine && (newer_commit || held) {
            self.active.remove(&txn);
            return ShadowResult::Conflict;
        }
        let next = f(cur);
        self.active.get_mut(&txn).unwrap().writes.insert(key, next);
        ShadowResult::Done
    }

    pub fn apply(&mut self, op: ShadowOp) -> ShadowResult {
        let txn = match &op {
            ShadowOp::CreateTable => {
                self.next_row.push(0);
                return ShadowResult::Table(self.next_row.len() as u32 - 1);
            }
            ShadowOp::Begin => {
                self.next_txn += 1;
                let state = ShadowTxnState {
                    start: self.clock,
                    writes: BTreeMap::new(),
                };
                self.active.insert(self.next_txn, state);
                return ShadowResult::Began(self.next_txn);
            }
            ShadowOp::Insert { txn, .. }
            | ShadowOp::Update { txn, .. }
            | ShadowOp::Delete { txn, .. }
            | ShadowOp::Read { txn, .. }
            | ShadowOp::Sum { txn, .. }
            | ShadowOp::SelectGt { txn, .. }
            | ShadowOp::Commit { txn }
            | ShadowOp::Abort { txn } => *txn,
        };
        if !self.active.contains_key(&txn) {
            return ShadowResult::NotActive;
        }
        match op {
            ShadowOp::Insert { table, values, .. } => {
                let row = self.next_row[table as usize];
                self.next_row[table as usize] += 1;
                self.active
                    .get_mut(&txn)
                    .unwrap()
                    .writes
                    .insert((table, row), Some(values));
                ShadowResult::Row(row)
            }
            ShadowOp::Update {
                table,
                row,
                col,
                value,
                ..
            } => self.write(txn, (table, row), |mut cur| {
                cur[col] = value;
                Some(cur)
            }),
            ShadowOp::Delete { table, row, .. } => self.write(txn, (table, row), |_| None),
            ShadowOp::Read { table, row, .. } => ShadowResult::Value(self.sees(txn, &(table, row))),
            ShadowOp::Sum { table, col, .. } => ShadowResult::Sum(
                self.visible_rows(txn, table)
                    .iter()
                    .fold(0i64, |acc, (_, v)| acc.wrapping_add(v[col].int())),
            ),
            ShadowOp::SelectGt {
                table,
                col,
                constant,
                ..
            } => ShadowResult::Rows(
                self.visible_rows(txn, table)
                    .into_iter()
                    .filter(|(_, v)| v[col].int() > constant)
                    .map(|(r, _)| r)
                    .collect(),
            ),
            ShadowOp::Commit { .. } => {
                let t = self.active.remove(&txn).unwrap();
                if !t.writes.is_empty() {
                    self.clock += 1;
                    for (k, v) in t.writes {
                        self.history.entry(k).or_default().push((self.clock, v));
                    }
                }
                ShadowResult::Done
            }
            ShadowOp::Abort { .. } => {
                self.active.remove(&txn);
                ShadowResult::Done
            }
            ShadowOp::CreateTable | ShadowOp::Begin => unreachable!(),
        }
    }

    /// Latest committed rows of `table`.
    pub fn committed(&self, table: u32) -> BTreeMap<u64, Vec<Val>> {
        self.history
            .iter()
            .filter(|(k, _)| k.0 == table)
            .filter_map(|(k, h)| h.last().and_then(|(_, v)| v.clone()).map(|v| (k.1, v)))
            .collect()
    }

    pub fn active_txns(&self) -> Vec<ShadowTxn> {
        self.active.keys().copied().collect()
    }
}

pub fn shadow_apply(ops: impl IntoIterator<Item = ShadowOp>) -> (ShadowDb, Vec<ShadowResult>) {
    let mut db = ShadowDb::default();
    let out = ops.into_iter().map(|op| db.apply(op)).collect();
    (db, out)
}
