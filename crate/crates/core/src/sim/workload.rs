//! Sysbench-style workloads.
//!
//! Simulated client sessions each run a short transaction program; a seeded
//! scheduler interleaves their statements. A client-side model tracks the
//! committed `(k, c)` of every row and is checked against revealed state at
//! the end of a run. The same runner drives [`FidBackend`] (the two-zone
//! topology) and [`CipherBackend`] (fields stored as AEAD ciphertext).

use std::collections::{BTreeMap, HashMap, VecDeque};
use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution as _, Zipf};
use serde::{Deserialize, Serialize};

use super::{
    AdversaryTrace, CrashPoint, InvariantReport, RecoveryReport, SimError, Topology, TopologyConfig,
};
use crate::dbms::{Cell, Column, ColumnType, Database, DbError, RowId, TableId, TxnState};
use crate::fid::Fid;
use crate::proxy::envelope::unpad;
use crate::proxy::{
    ClientEnvelope, EnvelopeCipher, OpKind, OperatorRequest, ProxyError, ValueType,
};
use crate::store::CacheCapacity;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Mode {
    ReadOnly,
    ReadWrite,
    WriteOnly,
    InsertOnly,
    PointSelect,
    RangeSelect,
}

impl Mode {
    pub const ALL: [Mode; 6] = [
        Mode::ReadOnly,
        Mode::ReadWrite,
        Mode::WriteOnly,
        Mode::InsertOnly,
        Mode::PointSelect,
        Mode::RangeSelect,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Mode::ReadOnly => "read-only",
            Mode::ReadWrite => "read-write",
            Mode::WriteOnly => "write-only",
            Mode::InsertOnly => "insert-only",
            Mode::PointSelect => "point-select",
            Mode::RangeSelect => "range-select",
        }
    }

    fn program(self) -> &'static [StmtKind] {
        use StmtKind::*;
        match self {
            Mode::ReadOnly => &[Point, Point, Point, Point, Range],
            Mode::ReadWrite => &[Point, Point, Range, UpdateK, UpdateC, Delete, Insert],
            Mode::WriteOnly => &[UpdateK, UpdateC, Delete, Insert],
            Mode::InsertOnly => &[Insert],
            Mode::PointSelect => &[Point],
            Mode::RangeSelect => &[Range],
        }
    }
}

impl fmt::Display for Mode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_alphanumeric())
            .collect::<String>()
            .to_lowercase();
        Mode::ALL
            .into_iter()
            .find(|m| m.name().replace('-', "") == norm)
            .ok_or_else(|| format!("unknown mode {s:?}"))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum Distribution {
    Uniform,
    Zipfian(f64),
}

impl Distribution {
    pub fn name(&self) -> String {
        match self {
            Distribution::Uniform => "uniform".into(),
            Distribution::Zipfian(t) => format!("zipfian({t})"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WorkloadSpec {
    pub mode: Mode,
    pub distribution: Distribution,
    pub tables: usize,
    pub rows_per_table: u64,
    /// Statements to execute after loading.
    pub duration_ops: u64,
    pub threads_simulated: usize,
    pub batch_size: usize,
    /// Store cache as a fraction of data blocks; 1.0 or more keeps all
    /// blocks resident.
    pub cache_fraction: f64,
    pub seed: u64,
    /// Quiesce, vacuum and collect orphans every this many statements.
    pub maintenance_every: u64,
    pub range_len: u64,
    /// Compare revealed final state against the client model.
    pub verify: bool,
}

impl Default for WorkloadSpec {
    fn default() -> Self {
        WorkloadSpec {
            mode: Mode::ReadWrite,
            distribution: Distribution::Uniform,
            tables: 1,
            rows_per_table: 1000,
            duration_ops: 10_000,
            threads_simulated: 4,
            batch_size: 256,
            cache_fraction: 1.0,
            seed: 0,
            maintenance_every: 1000,
            range_len: 10,
            verify: true,
        }
    }
}

impl WorkloadSpec {
    pub fn validate(&self) -> Result<(), String> {
        if let Distribution::Zipfian(t) = self.distribution {
            if !(t > 0.0 && t <= 1.0) {
                return Err(format!("theta {t} outside (0, 1]"));
            }
        }
        if self.rows_per_table < 1 || self.tables < 1 || self.threads_simulated < 1 {
            return Err("tables, rows_per_table and threads must be at least 1".into());
        }
        if self.batch_size < 1 {
            return Err("batch size must be at least 1".into());
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum StepError {
    /// The transaction is gone; the session starts over.
    Aborted,
    /// A zone crashed; recovery is pending.
    Crashed,
    Fatal(String),
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counters {
    /// Envelope and at-rest cryptographic operations inside the trusted side.
    pub crypto_invocations: u64,
    /// Sensitive fields returned to the client.
    pub revealed_fields: u64,
    pub round_trips: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
}

pub type Row = (i64, Vec<u8>);

/// Statement-level interface shared by both storage schemes. Tables hold
/// `(id, k, c)` with `k` an integer and `c` a byte string, both sensitive.
pub trait Backend {
    fn name(&self) -> &'static str;
    fn create_tables(&mut self, n: usize) -> Result<(), StepError>;
    fn begin(&mut self) -> Result<u64, StepError>;
    fn point(&mut self, txn: u64, table: usize, row: RowId) -> Result<Option<Row>, StepError>;
    fn range(
        &mut self,
        txn: u64,
        table: usize,
        lo: RowId,
        len: u64,
    ) -> Result<Vec<(RowId, Vec<u8>)>, StepError>;
    /// `k = k + 1`; false if the row is not visible.
    fn update_k(&mut self, txn: u64, table: usize, row: RowId) -> Result<bool, StepError>;
    fn update_c(&mut self, txn: u64, table: usize, row: RowId, c: &[u8])
        -> Result<bool, StepError>;
    fn delete(&mut self, txn: u64, table: usize, row: RowId) -> Result<bool, StepError>;
    fn insert(&mut self, txn: u64, table: usize, k: i64, c: &[u8]) -> Result<RowId, StepError>;
    fn commit(&mut self, txn: u64) -> Result<(), StepError>;
    fn abort(&mut self, txn: u64);
    /// Vacuum plus orphan collection; returns `(vacuumed, orphans)`.
    fn maintain(&mut self) -> Result<(u64, u64), StepError>;
    fn set_cache_fraction(&mut self, f: f64);
    fn counters(&self) -> Counters;
    fn reset_counters(&mut self);
    /// Latest committed state, revealed.
    fn dump(&mut self, table: usize) -> Result<BTreeMap<RowId, Row>, StepError>;

    fn arm(&mut self, _point: CrashPoint, _occurrence: u64) {}
    fn disarm(&mut self) {}
    fn recover(&mut self) -> Result<Option<RecoveryReport>, String> {
        Ok(None)
    }
    /// After recovery: did `txn` commit?
    fn committed(&mut self, _txn: u64) -> bool {
        false
    }
    fn invariant(&mut self) -> Option<InvariantReport> {
        None
    }
}

// ---- FID scheme ----

pub struct FidBackend {
    topo: Topology,
    client: EnvelopeCipher,
    rng: ChaCha20Rng,
    tables: Vec<TableId>,
    ones: HashMap<u64, Fid>,
    revealed: u64,
}

fn int_of(v: Vec<u8>) -> Result<i64, StepError> {
    v.try_into()
        .map(i64::from_le_bytes)
        .map_err(|_| StepError::Fatal("revealed integer has wrong width".into()))
}

impl FidBackend {
    pub fn new(cfg: TopologyConfig, seed: u64) -> Result<Self, SimError> {
        let client = EnvelopeCipher::new(&cfg.proxy.client_key);
        Ok(FidBackend {
            topo: Topology::new(cfg)?,
            client,
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0x00c1_1e17),
            tables: Vec::new(),
            ones: HashMap::new(),
            revealed: 0,
        })
    }

    pub fn topology(&mut self) -> &mut Topology {
        &mut self.topo
    }

    pub fn take_trace(&mut self) -> AdversaryTrace {
        self.topo.take_trace()
    }

    fn db(&mut self) -> Result<&mut Database, StepError> {
        if self.topo.poll() {
            return Err(StepError::Crashed);
        }
        self.topo.db().map_err(|_| StepError::Crashed)
    }

    fn fail(&mut self, e: DbError) -> StepError {
        if self.topo.poll() {
            return StepError::Crashed;
        }
        match e {
            DbError::WriteConflict(_) | DbError::TxnNotActive(_) => StepError::Aborted,
            DbError::Crashed(_) | DbError::PrivacyZoneUnavailable => StepError::Crashed,
            DbError::Proxy(ProxyError::LogClosed) => {
                self.topo.inject_crash(super::CrashTarget::PrivacyZone);
                StepError::Crashed
            }
            DbError::LogClosed | DbError::Io(_) => {
                self.topo.inject_crash(super::CrashTarget::IntegrityZone);
                StepError::Crashed
            }
            e => StepError::Fatal(e.to_string()),
        }
    }

    fn check<T>(&mut self, r: Result<T, DbError>) -> Result<T, StepError> {
        r.map_err(|e| self.fail(e))
    }

    fn reveal(&mut self, txn: u64, fids: Vec<Fid>) -> Result<Vec<Vec<u8>>, StepError> {
        let n = fids.len() as u64;
        let r = self.db()?.reveal(txn, fids);
        let envs = self.check(r)?;
        self.revealed += n;
        envs.iter()
            .map(|e| {
                self.client
                    .open(e)
                    .map_err(|_| StepError::Fatal("envelope from the privacy zone failed".into()))
            })
            .collect()
    }

    fn ingest(
        &mut self,
        txn: u64,
        ty: ColumnType,
        values: &[&[u8]],
    ) -> Result<Vec<Fid>, StepError> {
        let envs: Vec<ClientEnvelope> = values
            .iter()
            .map(|v| self.client.seal(v, &mut self.rng))
            .collect();
        let r = self.db()?.ingest(txn, ty, envs);
        self.check(r)
    }

    fn fids_of(
        &mut self,
        txn: u64,
        table: usize,
        row: RowId,
    ) -> Result<Option<Vec<Cell>>, StepError> {
        let t = self.tables[table];
        let r = self.db()?.read_row(txn, t, row);
        self.check(r)
    }

    fn update(
        &mut self,
        txn: u64,
        table: usize,
        row: RowId,
        col: usize,
        fid: Fid,
    ) -> Result<bool, StepError> {
        let t = self.tables[table];
        match self
            .db()?
            .update_row(txn, t, row, vec![(col, Cell::Fid(fid))])
        {
            Ok(()) => Ok(true),
            Err(DbError::RowNotVisible(_)) => Ok(false),
            Err(e) => Err(self.fail(e)),
        }
    }
}

fn c_bytes(plain: Vec<u8>) -> Vec<u8> {
    match unpad(&plain) {
        Some(u) => u.to_vec(),
        None => plain,
    }
}

impl Backend for FidBackend {
    fn name(&self) -> &'static str {
        "fid"
    }

    fn create_tables(&mut self, n: usize) -> Result<(), StepError> {
        for i in 0..n {
            let r = self.db()?.create_table(
                &format!("sbtest{}", i + 1),
                vec![
                    Column::new("id", ColumnType::PlainInt),
                    Column::new("k", ColumnType::SensitiveInt),
                    Column::new("c", ColumnType::SensitiveBytes),
                ],
            );
            let t = self.check(r)?;
            self.tables.push(t);
        }
        Ok(())
    }

    fn begin(&mut self) -> Result<u64, StepError> {
        let r = self.db()?.begin();
        self.check(r)
    }

    fn point(&mut self, txn: u64, table: usize, row: RowId) -> Result<Option<Row>, StepError> {
        let Some(cells) = self.fids_of(txn, table, row)? else {
            return Ok(None);
        };
        let (Some(k), Some(c)) = (cells[1].fid(), cells[2].fid()) else {
            return Err(StepError::Fatal("row without sensitive cells".into()));
        };
        let mut v = self.reveal(txn, vec![k, c])?;
        let c = c_bytes(v.pop().unwrap());
        Ok(Some((int_of(v.pop().unwrap())?, c)))
    }

    fn range(
        &mut self,
        txn: u64,
        table: usize,
        lo: RowId,
        len: u64,
    ) -> Result<Vec<(RowId, Vec<u8>)>, StepError> {
        let t = self.tables[table];
        let r = self.db()?.scan_range(txn, t, lo, len);
        let rows = self.check(r)?;
        let fids: Vec<Fid> = rows.iter().filter_map(|(_, c)| c[2].fid()).collect();
        if fids.is_empty() {
            return Ok(Vec::new());
        }
        let vals = self.reveal(txn, fids)?;
        Ok(rows
            .into_iter()
            .map(|r| r.0)
            .zip(vals.into_iter().map(c_bytes))
            .collect())
    }

    fn update_k(&mut self, txn: u64, table: usize, row: RowId) -> Result<bool, StepError> {
        let Some(cells) = self.fids_of(txn, table, row)? else {
            return Ok(false);
        };
        let k = cells[1]
            .fid()
            .ok_or_else(|| StepError::Fatal("row without k".into()))?;
        let one = match self.ones.get(&txn) {
            Some(f) => *f,
            None => {
                let f = self.ingest(txn, ColumnType::SensitiveInt, &[&1i64.to_le_bytes()])?[0];
                self.ones.insert(txn, f);
                f
            }
        };
        let req = OperatorRequest::binary(OpKind::Add, k, one, ValueType::Int64);
        let r = self.db()?.exec(txn, vec![req]);
        let out = self.check(r)?;
        let nk = out[0]
            .fid()
            .ok_or_else(|| StepError::Fatal("Add returned a boolean".into()))?;
        self.update(txn, table, row, 1, nk)
    }

    fn update_c(
        &mut self,
        txn: u64,
        table: usize,
        row: RowId,
        c: &[u8],
    ) -> Result<bool, StepError> {
        if self.fids_of(txn, table, row)?.is_none() {
            return Ok(false);
        }
        let f = self.ingest(txn, ColumnType::SensitiveBytes, &[c])?[0];
        self.update(txn, table, row, 2, f)
    }

    fn delete(&mut self, txn: u64, table: usize, row: RowId) -> Result<bool, StepError> {
        let t = self.tables[table];
        match self.db()?.delete_row(txn, t, row) {
            Ok(()) => Ok(true),
            Err(DbError::RowNotVisible(_)) => Ok(false),
            Err(e) => Err(self.fail(e)),
        }
    }

    fn insert(&mut self, txn: u64, table: usize, k: i64, c: &[u8]) -> Result<RowId, StepError> {
        let kf = self.ingest(txn, ColumnType::SensitiveInt, &[&k.to_le_bytes()])?[0];
        let cf = self.ingest(txn, ColumnType::SensitiveBytes, &[c])?[0];
        let t = self.tables[table];
        let r = self
            .db()?
            .insert_row(txn, t, vec![Cell::Int(k), Cell::Fid(kf), Cell::Fid(cf)]);
        self.check(r)
    }

    fn commit(&mut self, txn: u64) -> Result<(), StepError> {
        self.ones.remove(&txn);
        let r = self.db()?.commit(txn);
        self.check(r)
    }

    fn abort(&mut self, txn: u64) {
        self.ones.remove(&txn);
        if let Ok(db) = self.db() {
            db.abort(txn);
        }
    }

    fn maintain(&mut self) -> Result<(u64, u64), StepError> {
        let r = self.db()?.vacuum_all();
        let v = self.check(r)?;
        let r = self.db()?.orphan_gc();
        let o = self.check(r)?;
        Ok((v, o))
    }

    fn set_cache_fraction(&mut self, f: f64) {
        let cap = if f >= 1.0 {
            CacheCapacity::Unbounded
        } else {
            CacheCapacity::FractionOfData(f)
        };
        self.topo
            .with_proxy(|p| p.store_mut().set_cache_capacity(cap));
        if f >= 1.0 {
            for t in self.tables.clone() {
                if let Ok(db) = self.db() {
                    let _ = db.prefetch(t);
                }
            }
        }
    }

    fn counters(&self) -> Counters {
        let (crypto, hits, misses) = self
            .topo
            .with_proxy(|p| {
                let s = p.store().stats();
                (p.crypto_invocations(), s.cache_hits, s.cache_misses)
            })
            .unwrap_or_default();
        Counters {
            crypto_invocations: crypto,
            revealed_fields: self.revealed,
            round_trips: self.topo.channel_stats().round_trips,
            cache_hits: hits,
            cache_misses: misses,
        }
    }

    fn reset_counters(&mut self) {
        self.topo.with_proxy(|p| p.reset_stats());
        self.topo.reset_channel_stats();
        self.revealed = 0;
    }

    fn dump(&mut self, table: usize) -> Result<BTreeMap<RowId, Row>, StepError> {
        let t = self.tables[table];
        let r = self.db()?.committed_rows(t);
        let rows = self.check(r)?;
        let txn = self.begin()?;
        let mut fids = Vec::with_capacity(rows.len() * 2);
        for (_, cells) in &rows {
            fids.push(cells[1].fid().ok_or(StepError::Fatal("null k".into()))?);
            fids.push(cells[2].fid().ok_or(StepError::Fatal("null c".into()))?);
        }
        let vals = if fids.is_empty() {
            Vec::new()
        } else {
            self.reveal(txn, fids)?
        };
        self.commit(txn)?;
        let mut out = BTreeMap::new();
        let mut it = vals.into_iter();
        for (row, _) in rows {
            let k = int_of(it.next().unwrap())?;
            out.insert(row, (k, c_bytes(it.next().unwrap())));
        }
        Ok(out)
    }

    fn arm(&mut self, point: CrashPoint, occurrence: u64) {
        self.topo.arm(point, occurrence);
    }

    fn disarm(&mut self) {
        self.topo.disarm();
    }

    fn recover(&mut self) -> Result<Option<RecoveryReport>, String> {
        self.ones.clear();
        match self.topo.recover_all() {
            Ok(r) => Ok(Some(r)),
            Err(SimError::NoCrashPending) => Ok(None),
            Err(e) => Err(e.to_string()),
        }
    }

    fn committed(&mut self, txn: u64) -> bool {
        self.topo
            .db()
            .map(|db| db.txn_state(txn) == Some(TxnState::Committed))
            .unwrap_or(false)
    }

    fn invariant(&mut self) -> Option<InvariantReport> {
        self.topo.check_invariant().ok()
    }
}

// ---- ciphertext scheme ----

/// Baseline where the untrusted engine stores AEAD ciphertexts and every
/// computation decrypts its inputs and encrypts its output. It implements
/// no isolation; writes apply immediately.
pub struct CipherBackend {
    storage: EnvelopeCipher,
    client: EnvelopeCipher,
    rng: ChaCha20Rng,
    tables: Vec<BTreeMap<RowId, (ClientEnvelope, ClientEnvelope)>>,
    next_row: Vec<RowId>,
    next_txn: u64,
    counters: Counters,
}

impl CipherBackend {
    pub fn new(client_key: [u8; 32], seed: u64) -> Self {
        CipherBackend {
            storage: EnvelopeCipher::new(&[0x77; 32]),
            client: EnvelopeCipher::new(&client_key),
            rng: ChaCha20Rng::seed_from_u64(seed ^ 0xc1_9e4),
            tables: Vec::new(),
            next_row: Vec::new(),
            next_txn: 1,
            counters: Counters::default(),
        }
    }

    fn open_stored(&mut self, e: &ClientEnvelope) -> Vec<u8> {
        self.counters.crypto_invocations += 1;
        self.storage.open(e).expect("own storage ciphertext")
    }

    fn seal_stored(&mut self, v: &[u8]) -> ClientEnvelope {
        self.counters.crypto_invocations += 1;
        self.storage.seal(v, &mut self.rng)
    }

    /// Re-encrypts a stored value for the client.
    fn client_open(&mut self, e: &ClientEnvelope) -> Vec<u8> {
        let v = self.open_stored(e);
        self.counters.crypto_invocations += 1;
        self.counters.revealed_fields += 1;
        let env = self.client.seal(&v, &mut self.rng);
        self.client.open(&env).expect("own client envelope")
    }

    /// Client envelope in, stored ciphertext out.
    fn client_seal(&mut self, v: &[u8]) -> ClientEnvelope {
        let env = self.client.seal(v, &mut self.rng);
        self.counters.crypto_invocations += 1;
        let plain = self.client.open(&env).expect("own client envelope");
        self.seal_stored(&plain)
    }
}

impl Backend for CipherBackend {
    fn name(&self) -> &'static str {
        "cipher"
    }

    fn create_tables(&mut self, n: usize) -> Result<(), StepError> {
        self.tables = vec![BTreeMap::new(); n];
        self.next_row = vec![0; n];
        Ok(())
    }

    fn begin(&mut self) -> Result<u64, StepError> {
        self.next_txn += 1;
        Ok(self.next_txn)
    }

    fn point(&mut self, _txn: u64, table: usize, row: RowId) -> Result<Option<Row>, StepError> {
        let Some((k, c)) = self.tables[table].get(&row).cloned() else {
            return Ok(None);
        };
        self.counters.round_trips += 1;
        let k = int_of(self.client_open(&k))?;
        Ok(Some((k, self.client_open(&c))))
    }

    fn range(
        &mut self,
        _txn: u64,
        table: usize,
        lo: RowId,
        len: u64,
    ) -> Result<Vec<(RowId, Vec<u8>)>, StepError> {
        let rows: Vec<_> = self.tables[table]
            .range(lo..lo.saturating_add(len))
            .map(|(r, (_, c))| (*r, c.clone()))
            .collect();
        if !rows.is_empty() {
            self.counters.round_trips += 1;
        }
        Ok(rows
            .into_iter()
            .map(|(r, c)| (r, self.client_open(&c)))
            .collect())
    }

    fn update_k(&mut self, _txn: u64, table: usize, row: RowId) -> Result<bool, StepError> {
        let Some((k, _)) = self.tables[table].get(&row).cloned() else {
            return Ok(false);
        };
        self.counters.round_trips += 1;
        let v = int_of(self.open_stored(&k))?;
        let nk = self.seal_stored(&(v + 1).to_le_bytes());
        self.tables[table].get_mut(&row).unwrap().0 = nk;
        Ok(true)
    }

    fn update_c(
        &mut self,
        _txn: u64,
        table: usize,
        row: RowId,
        c: &[u8],
    ) -> Result<bool, StepError> {
        if !self.tables[table].contains_key(&row) {
            return Ok(false);
        }
        self.counters.round_trips += 1;
        let nc = self.client_seal(c);
        self.tables[table].get_mut(&row).unwrap().1 = nc;
        Ok(true)
    }

    fn delete(&mut self, _txn: u64, table: usize, row: RowId) -> Result<bool, StepError> {
        Ok(self.tables[table].remove(&row).is_some())
    }

    fn insert(&mut self, _txn: u64, table: usize, k: i64, c: &[u8]) -> Result<RowId, StepError> {
        self.counters.round_trips += 1;
        let ke = self.client_seal(&k.to_le_bytes());
        let ce = self.client_seal(c);
        let row = self.next_row[table];
        self.next_row[table] += 1;
        self.tables[table].insert(row, (ke, ce));
        Ok(row)
    }

    fn commit(&mut self, _txn: u64) -> Result<(), StepError> {
        Ok(())
    }

    fn abort(&mut self, _txn: u64) {}

    fn maintain(&mut self) -> Result<(u64, u64), StepError> {
        Ok((0, 0))
    }

    fn set_cache_fraction(&mut self, _f: f64) {}

    fn counters(&self) -> Counters {
        self.counters
    }

    fn reset_counters(&mut self) {
        self.counters = Counters::default();
    }

    fn dump(&mut self, table: usize) -> Result<BTreeMap<RowId, Row>, StepError> {
        let rows: Vec<_> = self.tables[table]
            .iter()
            .map(|(r, v)| (*r, v.clone()))
            .collect();
        let mut out = BTreeMap::new();
        for (r, (k, c)) in rows {
            let k = int_of(self.storage.open(&k).expect("own storage ciphertext"))?;
            out.insert(
                r,
                (k, self.storage.open(&c).expect("own storage ciphertext")),
            );
        }
        Ok(out)
    }
}

// ---- runner ----

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum StmtKind {
    Point,
    Range,
    UpdateK,
    UpdateC,
    Delete,
    Insert,
}

#[derive(Debug, Clone)]
enum Write {
    Insert(usize, RowId, Row),
    AddK(usize, RowId),
    SetC(usize, RowId, Vec<u8>),
    Delete(usize, RowId),
}

#[derive(Default)]
struct Session {
    txn: Option<u64>,
    program: VecDeque<StmtKind>,
    pending: Vec<Write>,
}

impl Session {
    fn reset(&mut self) {
        self.txn = None;
        self.program.clear();
        self.pending.clear();
    }
}

struct Model {
    tables: Vec<BTreeMap<RowId, Row>>,
}

impl Model {
    fn apply(&mut self, writes: Vec<Write>) {
        for w in writes {
            match w {
                Write::Insert(t, r, row) => {
                    self.tables[t].insert(r, row);
                }
                Write::AddK(t, r) => {
                    if let Some(v) = self.tables[t].get_mut(&r) {
                        v.0 += 1;
                    }
                }
                Write::SetC(t, r, c) => {
                    if let Some(v) = self.tables[t].get_mut(&r) {
                        v.1 = c;
                    }
                }
                Write::Delete(t, r) => {
                    self.tables[t].remove(&r);
                }
            }
        }
    }
}

struct Picker {
    dist: Distribution,
    cache: Option<(u64, Zipf<f64>)>,
}

impl Picker {
    fn pick(&mut self, rng: &mut ChaCha20Rng, n: u64) -> u64 {
        match self.dist {
            Distribution::Uniform => rng.gen_range(0..n),
            Distribution::Zipfian(theta) => {
                if self.cache.as_ref().map(|c| c.0) != Some(n) {
                    self.cache = Some((n, Zipf::new(n, theta).expect("valid zipf parameters")));
                }
                let z = &self.cache.as_ref().unwrap().1;
                (z.sample(rng) as u64).clamp(1, n) - 1
            }
        }
    }
}

/// Sysbench `c`: eleven dash-joined groups of digits, 119 bytes.
fn gen_c(rng: &mut ChaCha20Rng) -> Vec<u8> {
    let mut c = Vec::with_capacity(119);
    for g in 0..11 {
        if g > 0 {
            c.push(b'-');
        }
        for _ in 0..10 {
            c.push(b'0' + rng.gen_range(0..10u8));
        }
    }
    c
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub backend: String,
    pub mode: Mode,
    pub distribution: String,
    pub seed: u64,
    pub ops: u64,
    pub committed: u64,
    pub aborted: u64,
    pub errors: u64,
    pub first_error: Option<String>,
    pub counters: Counters,
    pub hit_rate: f64,
    pub crashed: Option<CrashPoint>,
    pub recoveries: Vec<RecoveryReport>,
    pub vacuumed: u64,
    pub orphans_reclaimed: u64,
    /// At the end of the run, before the final vacuum and orphan collection.
    pub final_invariant: Option<InvariantReport>,
    pub post_gc_invariant: Option<InvariantReport>,
    pub model_mismatches: u64,
}

impl RunReport {
    pub fn violations(&self) -> usize {
        self.recoveries
            .iter()
            .map(|r| r.invariant.violations.len())
            .chain(self.final_invariant.iter().map(|i| i.violations.len()))
            .chain(self.post_gc_invariant.iter().map(|i| i.violations.len()))
            .sum()
    }
}

struct Runner<'a> {
    spec: &'a WorkloadSpec,
    backend: &'a mut dyn Backend,
    rng: ChaCha20Rng,
    picker: Picker,
    model: Model,
    sessions: Vec<Session>,
    report: RunReport,
}

impl Runner<'_> {
    fn row_space(&self, t: usize) -> u64 {
        let hi = self.model.tables[t].keys().next_back().map_or(0, |r| r + 1);
        hi.max(self.spec.rows_per_table)
    }

    fn error(&mut self, msg: String) {
        self.report.errors += 1;
        self.report.first_error.get_or_insert(msg);
    }

    fn load(&mut self) -> Result<(), String> {
        let fatal = |e: StepError| format!("load failed: {e:?}");
        self.backend
            .create_tables(self.spec.tables)
            .map_err(fatal)?;
        for t in 0..self.spec.tables {
            let mut left = self.spec.rows_per_table;
            while left > 0 {
                let n = left.min(100);
                left -= n;
                let txn = self.backend.begin().map_err(fatal)?;
                let mut writes = Vec::new();
                for _ in 0..n {
                    let k = self.rng.gen_range(0..self.spec.rows_per_table as i64);
                    let c = gen_c(&mut self.rng);
                    let r = self.backend.insert(txn, t, k, &c).map_err(fatal)?;
                    writes.push(Write::Insert(t, r, (k, c)));
                }
                self.backend.commit(txn).map_err(fatal)?;
                self.model.apply(writes);
            }
        }
        Ok(())
    }

    fn exec(&mut self, txn: u64, kind: StmtKind) -> Result<Option<Write>, StepError> {
        let t = self.rng.gen_range(0..self.spec.tables);
        let n = self.row_space(t);
        let row = self.picker.pick(&mut self.rng, n);
        Ok(match kind {
            StmtKind::Point => {
                self.backend.point(txn, t, row)?;
                None
            }
            StmtKind::Range => {
                let lo = row.min(n.saturating_sub(self.spec.range_len));
                self.backend.range(txn, t, lo, self.spec.range_len)?;
                None
            }
            StmtKind::UpdateK => self
                .backend
                .update_k(txn, t, row)?
                .then_some(Write::AddK(t, row)),
            StmtKind::UpdateC => {
                let c = gen_c(&mut self.rng);
                self.backend
                    .update_c(txn, t, row, &c)?
                    .then_some(Write::SetC(t, row, c))
            }
            StmtKind::Delete => self
                .backend
                .delete(txn, t, row)?
                .then_some(Write::Delete(t, row)),
            StmtKind::Insert => {
                let k = self.rng.gen_range(0..self.spec.rows_per_table as i64);
                let c = gen_c(&mut self.rng);
                let r = self.backend.insert(txn, t, k, &c)?;
                Some(Write::Insert(t, r, (k, c)))
            }
        })
    }

    fn crashed(&mut self, in_doubt: Option<(u64, Vec<Write>)>) -> Result<(), String> {
        let rep = self.backend.recover()?;
        if let Some(r) = rep {
            self.report.crashed = self.report.crashed.or(r.fired);
            self.report.recoveries.push(r);
        }
        if let Some((txn, writes)) = in_doubt {
            if self.backend.committed(txn) {
                self.report.committed += 1;
                self.model.apply(writes);
            } else {
                self.report.aborted += 1;
            }
        }
        for s in &mut self.sessions {
            if s.txn.is_some() {
                self.report.aborted += 1;
            }
            s.reset();
        }
        Ok(())
    }

    fn commit(&mut self, i: usize) -> Result<(), String> {
        let Some(txn) = self.sessions[i].txn else {
            return Ok(());
        };
        let writes = std::mem::take(&mut self.sessions[i].pending);
        self.sessions[i].reset();
        match self.backend.commit(txn) {
            Ok(()) => {
                self.report.committed += 1;
                self.model.apply(writes);
            }
            Err(StepError::Aborted) => self.report.aborted += 1,
            Err(StepError::Crashed) => self.crashed(Some((txn, writes)))?,
            Err(StepError::Fatal(e)) => {
                self.report.aborted += 1;
                self.error(e);
            }
        }
        Ok(())
    }

    fn quiesce(&mut self) -> Result<(), String> {
        for i in 0..self.sessions.len() {
            self.commit(i)?;
        }
        Ok(())
    }

    fn maintain(&mut self) -> Result<(), String> {
        self.quiesce()?;
        match self.backend.maintain() {
            Ok((v, o)) => {
                self.report.vacuumed += v;
                self.report.orphans_reclaimed += o;
            }
            Err(StepError::Crashed) => self.crashed(None)?,
            Err(e) => self.error(format!("maintenance: {e:?}")),
        }
        Ok(())
    }

    fn step(&mut self) -> Result<(), String> {
        let i = self.rng.gen_range(0..self.sessions.len());
        if self.sessions[i].txn.is_none() {
            match self.backend.begin() {
                Ok(t) => {
                    let s = &mut self.sessions[i];
                    s.txn = Some(t);
                    s.program = self.spec.mode.program().iter().copied().collect();
                }
                Err(StepError::Crashed) => return self.crashed(None),
                Err(e) => {
                    self.error(format!("begin: {e:?}"));
                    return Ok(());
                }
            }
        }
        let txn = self.sessions[i].txn.unwrap();
        let kind = self.sessions[i]
            .program
            .pop_front()
            .expect("non-empty program");
        self.report.ops += 1;
        match self.exec(txn, kind) {
            Ok(w) => {
                self.sessions[i].pending.extend(w);
                if self.sessions[i].program.is_empty() {
                    self.commit(i)?;
                }
            }
            Err(StepError::Aborted) => {
                self.report.aborted += 1;
                self.backend.abort(txn);
                self.sessions[i].reset();
            }
            Err(StepError::Crashed) => self.crashed(None)?,
            Err(StepError::Fatal(e)) => {
                self.error(e);
                self.report.aborted += 1;
                self.backend.abort(txn);
                self.sessions[i].reset();
            }
        }
        Ok(())
    }

    fn verify(&mut self) -> Result<(), String> {
        for t in 0..self.spec.tables {
            let got = loop {
                match self.backend.dump(t) {
                    Ok(d) => break d,
                    Err(StepError::Crashed) => self.crashed(None)?,
                    Err(e) => return Err(format!("dump: {e:?}")),
                }
            };
            let want = &self.model.tables[t];
            let keys: std::collections::BTreeSet<_> = got.keys().chain(want.keys()).collect();
            self.report.model_mismatches += keys
                .into_iter()
                .filter(|k| got.get(k) != want.get(k))
                .count() as u64;
        }
        Ok(())
    }
}

/// Loads, runs `spec.duration_ops` statements, then checks the final state.
/// With `crash`, the point is armed after loading and fires on its
/// `occurrence`-th visit.
pub fn run_workload(
    spec: &WorkloadSpec,
    backend: &mut dyn Backend,
    crash: Option<(CrashPoint, u64)>,
) -> Result<RunReport, String> {
    spec.validate()?;
    let mut r = Runner {
        spec,
        report: RunReport {
            backend: backend.name().into(),
            mode: spec.mode,
            distribution: spec.distribution.name(),
            seed: spec.seed,
            ops: 0,
            committed: 0,
            aborted: 0,
            errors: 0,
            first_error: None,
            counters: Counters::default(),
            hit_rate: 1.0,
            crashed: None,
            recoveries: Vec::new(),
            vacuumed: 0,
            orphans_reclaimed: 0,
            final_invariant: None,
            post_gc_invariant: None,
            model_mismatches: 0,
        },
        backend,
        rng: ChaCha20Rng::seed_from_u64(spec.seed),
        picker: Picker {
            dist: spec.distribution,
            cache: None,
        },
        model: Model {
            tables: vec![BTreeMap::new(); spec.tables],
        },
        sessions: (0..spec.threads_simulated)
            .map(|_| Session::default())
            .collect(),
    };
    r.load()?;
    r.backend.set_cache_fraction(spec.cache_fraction);
    r.backend.reset_counters();
    if let Some((p, occ)) = crash {
        r.backend.arm(p, occ);
    }
    let mut since_maintenance = 0;
    while r.report.ops < spec.duration_ops {
        if spec.maintenance_every > 0 && since_maintenance >= spec.maintenance_every {
            since_maintenance = 0;
            r.maintain()?;
        }
        let before = r.report.ops;
        r.step()?;
        since_maintenance += r.report.ops - before;
    }
    r.quiesce()?;
    r.report.counters = r.backend.counters();
    let c = r.report.counters;
    if c.cache_hits + c.cache_misses > 0 {
        r.report.hit_rate = c.cache_hits as f64 / (c.cache_hits + c.cache_misses) as f64;
    }
    r.backend.disarm();
    if r.backend.recover()?.is_some() {
        return Err("a crash fired after the run was disarmed".into());
    }
    r.report.final_invariant = r.backend.invariant();
    r.maintain()?;
    r.report.post_gc_invariant = r.backend.invariant();
    if spec.verify {
        r.verify()?;
    }
    Ok(r.report)
}

/// Runs `spec` against a fresh backend of the given kind.
pub fn run_with(
    spec: &WorkloadSpec,
    backend: BackendKind,
    crash: Option<(CrashPoint, u64)>,
) -> Result<RunReport, String> {
    let mut cfg = TopologyConfig::default();
    cfg.db.batch_size = spec.batch_size;
    cfg.proxy.seed = spec.seed;
    cfg.proxy.store.seed = spec.seed;
    if spec.cache_fraction < 1.0 {
        cfg.proxy.store.cache = CacheCapacity::FractionOfData(spec.cache_fraction);
    }
    match backend {
        BackendKind::Fid => {
            let mut b = FidBackend::new(cfg, spec.seed).map_err(|e| e.to_string())?;
            run_workload(spec, &mut b, crash)
        }
        BackendKind::Cipher => {
            let mut b = CipherBackend::new(cfg.proxy.client_key, spec.seed);
            run_workload(spec, &mut b, crash)
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BackendKind {
    Fid,
    Cipher,
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s.to_ascii_lowercase().as_str() {
            "fid" => Ok(BackendKind::Fid),
            "cipher" => Ok(BackendKind::Cipher),
            _ => Err(format!("unknown backend {s:?}")),
        }
    }
}
