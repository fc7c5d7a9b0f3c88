//! Integrity-zone table engine.
//!
//! Rows are version chains; sensitive cells hold FIDs only. Isolation is
//! snapshot isolation with first-updater-wins. Commit runs prepare, then the
//! privacy zone's log flush, then the local commit record; an update never
//! touches the old secret, which stays live until vacuum removes the last
//! version referencing it.

pub mod catalog;
pub mod dbwal;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::io;
use std::sync::Arc;

use parking_lot::Mutex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use catalog::{Catalog, Column, ColumnType, TableDef, CATALOG_FILE};
pub use dbwal::{DbRecord, DbWal, DbWalError, DB_WAL_FILE};

use crate::fid::Fid;
use crate::proxy::{
    ClientEnvelope, OpKind, OperatorRequest, OperatorResponse, Proxy, ProxyError, Request, Response,
};
use crate::store::PartitionKind;
use crate::vfs::SharedDisk;

pub type TxnId = u64;
pub type RowId = u64;
pub type TableId = u32;

pub const TXN_LEASE_FILE: &str = "db.txnid";
const TXN_LEASE: u64 = 1024;

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Cell {
    Null,
    Int(i64),
    Bytes(Vec<u8>),
    Fid(Fid),
}

impl Cell {
    pub fn fid(&self) -> Option<Fid> {
        match self {
            Cell::Fid(f) => Some(*f),
            _ => None,
        }
    }

    fn fits(&self, ty: ColumnType) -> bool {
        matches!(
            (self, ty),
            (Cell::Null, _)
                | (Cell::Int(_), ColumnType::PlainInt)
                | (Cell::Bytes(_), ColumnType::PlainBytes)
                | (
                    Cell::Fid(_),
                    ColumnType::SensitiveInt | ColumnType::SensitiveBytes
                )
        )
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RowVersion {
    pub begin: TxnId,
    pub end: Option<TxnId>,
    pub cells: Vec<Cell>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum TxnState {
    Active,
    Preparing,
    Committed,
    Aborted,
}

/// Instrumented points in the commit and maintenance paths.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrashSite {
    BeforePrivacyFlush,
    AfterPrivacyFlushBeforeDbCommit,
    AfterDbCommit,
    DuringVacuum,
    DuringOrphanGc,
}

impl CrashSite {
    pub fn is_maintenance(self) -> bool {
        matches!(self, CrashSite::DuringVacuum | CrashSite::DuringOrphanGc)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observation {
    ResultSize(u64),
}

pub trait DbHooks {
    /// Returning true stops the engine with [`DbError::Crashed`].
    fn reached(&mut self, _site: CrashSite) -> bool {
        false
    }

    fn observe(&mut self, _obs: Observation) {}
}

pub struct NoHooks;

impl DbHooks for NoHooks {}

#[derive(Debug, Error, Clone, Copy, PartialEq, Eq)]
#[error("privacy zone unavailable")]
pub struct Unavailable;

/// Transport to the privacy zone.
pub trait PrivacyLink {
    fn call(&mut self, query_id: u64, req: Request) -> Result<Response, Unavailable>;
}

impl PrivacyLink for Proxy {
    fn call(&mut self, query_id: u64, req: Request) -> Result<Response, Unavailable> {
        Ok(self.handle(query_id, req))
    }
}

impl PrivacyLink for Arc<Mutex<Proxy>> {
    fn call(&mut self, query_id: u64, req: Request) -> Result<Response, Unavailable> {
        Ok(self.lock().handle(query_id, req))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ProtocolEvent {
    PrivacyFlushed(TxnId),
    DbCommitDurable(TxnId),
}

#[derive(Debug, Error)]
pub enum DbError {
    #[error("unknown table {0}")]
    UnknownTable(String),
    #[error("schema mismatch: {0}")]
    SchemaMismatch(String),
    #[error("row {0} is not visible")]
    RowNotVisible(RowId),
    #[error("write conflict on row {0}")]
    WriteConflict(RowId),
    #[error("transaction {0} is not active")]
    TxnNotActive(TxnId),
    #[error("privacy zone unavailable")]
    PrivacyZoneUnavailable,
    #[error("privacy zone: {0}")]
    Proxy(ProxyError),
    #[error("unexpected privacy-zone response")]
    Protocol,
    #[error("maintenance needs a quiescent engine")]
    NotQuiescent,
    #[error("db.wal is closed after a failed write; restart the integrity zone")]
    LogClosed,
    #[error("crash injected at {0:?}")]
    Crashed(CrashSite),
    #[error("catalog: {0}")]
    Catalog(String),
    #[error(transparent)]
    Wal(#[from] DbWalError),
    #[error(transparent)]
    Io(#[from] io::Error),
}

impl DbError {
    fn aborts_txn(&self) -> bool {
        matches!(
            self,
            DbError::WriteConflict(_)
                | DbError::PrivacyZoneUnavailable
                | DbError::Proxy(_)
                | DbError::Protocol
                | DbError::LogClosed
                | DbError::Io(_)
                | DbError::Wal(_)
        )
    }
}

impl From<Unavailable> for DbError {
    fn from(_: Unavailable) -> Self {
        DbError::PrivacyZoneUnavailable
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbConfig {
    pub pad_sensitive: bool,
    pub pad_width: u32,
    /// Fields per privacy-zone round trip.
    pub batch_size: usize,
}

impl Default for DbConfig {
    fn default() -> Self {
        DbConfig {
            pad_sensitive: true,
            pad_width: 128,
            batch_size: 256,
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct DbOpenReport {
    pub tables: usize,
    pub committed_txns: usize,
    pub uncommitted_txns: usize,
    pub torn_bytes_discarded: usize,
    pub next_txn: TxnId,
    pub privacy_reachable: bool,
}

#[derive(Debug, Clone, Default)]
struct Snapshot {
    xmax: TxnId,
    active: BTreeSet<TxnId>,
}

struct Txn {
    snapshot: Snapshot,
    state: TxnState,
    redo: Vec<DbRecord>,
    store_mutations: bool,
    touched_privacy: bool,
    write_set: BTreeSet<(TableId, RowId)>,
}

struct Table {
    def: TableDef,
    rows: BTreeMap<RowId, Vec<RowVersion>>,
    next_row: RowId,
}

pub struct Database {
    config: DbConfig,
    disk: SharedDisk,
    link: Box<dyn PrivacyLink>,
    hooks: Box<dyn DbHooks>,
    tables: Vec<Table>,
    status: HashMap<TxnId, TxnState>,
    txns: BTreeMap<TxnId, Txn>,
    next_txn: TxnId,
    lease_end: TxnId,
    wal: DbWal,
    closed: bool,
    events: Vec<ProtocolEvent>,
    link_calls: u64,
}

fn single_fids(resp: Response) -> Result<Vec<Fid>, DbError> {
    match resp {
        Response::Fids(v) => v.into_iter().map(|r| r.map_err(DbError::Proxy)).collect(),
        Response::Failed(e) => Err(DbError::Proxy(e)),
        _ => Err(DbError::Protocol),
    }
}

fn done(resp: Response) -> Result<(), DbError> {
    match resp {
        Response::Done(v) => v.into_iter().try_for_each(|r| r.map_err(DbError::Proxy)),
        Response::Lsn(_) | Response::Count(_) => Ok(()),
        Response::Failed(e) => Err(DbError::Proxy(e)),
        _ => Err(DbError::Protocol),
    }
}

fn ops(resp: Response) -> Result<Vec<OperatorResponse>, DbError> {
    match resp {
        Response::Ops(v) => v.into_iter().map(|r| r.map_err(DbError::Proxy)).collect(),
        Response::Failed(e) => Err(DbError::Proxy(e)),
        _ => Err(DbError::Protocol),
    }
}

impl Database {
    /// Opens the integrity zone on `disk`, replaying `db.wal`. Work without a
    /// durable commit record is discarded.
    pub fn open(
        disk: SharedDisk,
        link: Box<dyn PrivacyLink>,
        hooks: Box<dyn DbHooks>,
        config: DbConfig,
    ) -> Result<(Database, DbOpenReport), DbError> {
        let catalog: Catalog = match disk.read(CATALOG_FILE)? {
            Some(bytes) => {
                serde_json::from_slice(&bytes).map_err(|e| DbError::Catalog(e.to_string()))?
            }
            None => Catalog::default(),
        };
        let mut tables: Vec<Table> = catalog
            .tables
            .into_iter()
            .map(|def| Table {
                def,
                rows: BTreeMap::new(),
                next_row: 0,
            })
            .collect();
        let (wal, replayed) = DbWal::open(disk.clone())?;
        for rec in replayed.effective {
            apply_replayed(&mut tables, rec)?;
        }
        let lease = match disk.read(TXN_LEASE_FILE)? {
            Some(b) if b.len() == 8 => u64::from_le_bytes(b.try_into().unwrap()),
            Some(_) => return Err(DbError::Catalog("bad txn lease file".into())),
            None => 0,
        };
        let next_txn = lease.max(replayed.max_txn) + 1;
        let status = replayed
            .committed
            .iter()
            .map(|&t| (t, TxnState::Committed))
            .collect();
        let mut db = Database {
            config,
            disk,
            link,
            hooks,
            tables,
            status,
            txns: BTreeMap::new(),
            next_txn,
            lease_end: next_txn - 1,
            wal,
            closed: false,
            events: Vec::new(),
            link_calls: 0,
        };
        let privacy_reachable = db.call(0, Request::DropAllQueries).is_ok();
        let report = DbOpenReport {
            tables: db.tables.len(),
            committed_txns: replayed.committed.len(),
            uncommitted_txns: replayed.uncommitted_txns,
            torn_bytes_discarded: replayed.torn_bytes_discarded,
            next_txn,
            privacy_reachable,
        };
        Ok((db, report))
    }

    pub fn config(&self) -> DbConfig {
        self.config
    }

    pub fn set_batch_size(&mut self, batch: usize) {
        self.config.batch_size = batch.max(1);
    }

    pub fn hooks_mut(&mut self) -> &mut dyn DbHooks {
        self.hooks.as_mut()
    }

    pub fn link_calls(&self) -> u64 {
        self.link_calls
    }

    pub fn db_wal_syncs(&self) -> u64 {
        self.wal.syncs()
    }

    pub fn events(&self) -> &[ProtocolEvent] {
        &self.events
    }

    fn call(&mut self, query_id: u64, req: Request) -> Result<Response, DbError> {
        self.link_calls += 1;
        Ok(self.link.call(query_id, req)?)
    }

    fn txn_call(&mut self, txn: TxnId, req: Request) -> Result<Response, DbError> {
        if let Some(t) = self.txns.get_mut(&txn) {
            t.touched_privacy = true;
        }
        self.call(txn, req)
    }

    // ---- catalog ----

    pub fn create_table(&mut self, name: &str, columns: Vec<Column>) -> Result<TableId, DbError> {
        if self.table_id(name).is_some() {
            return Err(DbError::SchemaMismatch(format!("table {name} exists")));
        }
        let layout = catalog::layout_for(
            &columns,
            self.config.pad_sensitive.then_some(self.config.pad_width),
        );
        let partition = if columns.iter().any(|c| c.ty.is_sensitive()) {
            let id = match self.call(
                0,
                Request::CreatePartition {
                    kind: PartitionKind::Permanent,
                    layout,
                },
            )? {
                Response::Partition(id) => id,
                Response::Failed(e) => return Err(DbError::Proxy(e)),
                _ => return Err(DbError::Protocol),
            };
            done(self.call(0, Request::FlushLog)?)?;
            Some(id)
        } else {
            None
        };
        let id = self.tables.len() as TableId;
        self.tables.push(Table {
            def: TableDef {
                id,
                name: name.to_string(),
                columns,
                partition,
                layout,
            },
            rows: BTreeMap::new(),
            next_row: 0,
        });
        let catalog = Catalog {
            tables: self.tables.iter().map(|t| t.def.clone()).collect(),
        };
        let json =
            serde_json::to_vec_pretty(&catalog).map_err(|e| DbError::Catalog(e.to_string()))?;
        self.disk.write_atomic(CATALOG_FILE, &json)?;
        Ok(id)
    }

    pub fn table_id(&self, name: &str) -> Option<TableId> {
        self.tables
            .iter()
            .position(|t| t.def.name == name)
            .map(|i| i as TableId)
    }

    pub fn table_def(&self, table: TableId) -> Option<&TableDef> {
        self.tables.get(table as usize).map(|t| &t.def)
    }

    pub fn tables(&self) -> Vec<TableDef> {
        self.tables.iter().map(|t| t.def.clone()).collect()
    }

    fn table(&self, table: TableId) -> Result<&Table, DbError> {
        self.tables
            .get(table as usize)
            .ok_or_else(|| DbError::UnknownTable(table.to_string()))
    }

    // ---- transactions ----

    pub fn begin(&mut self) -> Result<TxnId, DbError> {
        if self.next_txn > self.lease_end {
            let end = self.next_txn + TXN_LEASE - 1;
            self.disk.write_atomic(TXN_LEASE_FILE, &end.to_le_bytes())?;
            self.lease_end = end;
        }
        let id = self.next_txn;
        self.next_txn += 1;
        let snapshot = Snapshot {
            xmax: id,
            active: self.txns.keys().copied().collect(),
        };
        self.txns.insert(
            id,
            Txn {
                snapshot,
                state: TxnState::Active,
                redo: Vec::new(),
                store_mutations: false,
                touched_privacy: false,
                write_set: BTreeSet::new(),
            },
        );
        self.status.insert(id, TxnState::Active);
        Ok(id)
    }

    pub fn txn_state(&self, txn: TxnId) -> Option<TxnState> {
        self.status.get(&txn).copied()
    }

    pub fn active_txns(&self) -> Vec<TxnId> {
        self.txns.keys().copied().collect()
    }

    fn state_of(&self, txn: TxnId) -> TxnState {
        self.status.get(&txn).copied().unwrap_or(TxnState::Aborted)
    }

    fn sees(&self, snap: &Snapshot, me: TxnId, t: TxnId) -> bool {
        t == me
            || (t < snap.xmax
                && !snap.active.contains(&t)
                && self.state_of(t) == TxnState::Committed)
    }

    fn visible(&self, snap: &Snapshot, me: TxnId, v: &RowVersion) -> bool {
        self.sees(snap, me, v.begin) && !v.end.is_some_and(|e| self.sees(snap, me, e))
    }

    fn active(&self, txn: TxnId) -> Result<&Txn, DbError> {
        match self.txns.get(&txn) {
            Some(t) if t.state == TxnState::Active => Ok(t),
            _ => Err(DbError::TxnNotActive(txn)),
        }
    }

    /// Runs `f` inside `txn`; errors that poison the transaction abort it.
    fn in_txn<T>(
        &mut self,
        txn: TxnId,
        f: impl FnOnce(&mut Self) -> Result<T, DbError>,
    ) -> Result<T, DbError> {
        self.active(txn)?;
        let r = f(self);
        if let Err(e) = &r {
            if e.aborts_txn() {
                self.abort(txn);
            }
        }
        r
    }

    fn validate(&self, table: TableId, col: usize, cell: &Cell) -> Result<(), DbError> {
        let def = &self.table(table)?.def;
        let c = def
            .columns
            .get(col)
            .ok_or_else(|| DbError::SchemaMismatch(format!("no column {col} in {}", def.name)))?;
        if cell.fits(c.ty) {
            Ok(())
        } else {
            Err(DbError::SchemaMismatch(format!(
                "{:?} does not fit {}.{} ({:?})",
                cell, def.name, c.name, c.ty
            )))
        }
    }

    fn promote_cells(
        &mut self,
        txn: TxnId,
        table: TableId,
        cells: &mut [(usize, Cell)],
    ) -> Result<(), DbError> {
        let temps: Vec<Fid> = cells.iter().filter_map(|(_, c)| c.fid()).collect();
        if temps.is_empty() {
            return Ok(());
        }
        let partition = self
            .table(table)?
            .def
            .partition
            .ok_or_else(|| DbError::SchemaMismatch("table has no partition".into()))?;
        if let Some(t) = self.txns.get_mut(&txn) {
            t.store_mutations = true;
        }
        let promoted = single_fids(self.txn_call(
            txn,
            Request::Promote {
                fids: temps,
                partition,
            },
        )?)?;
        let mut it = promoted.into_iter();
        for (_, c) in cells.iter_mut() {
            if let Cell::Fid(f) = c {
                *f = it.next().ok_or(DbError::Protocol)?;
            }
        }
        Ok(())
    }

    /// Inserts a row; sensitive values arrive as temporary FIDs and are
    /// promoted into the table's partition.
    pub fn insert_row(
        &mut self,
        txn: TxnId,
        table: TableId,
        values: Vec<Cell>,
    ) -> Result<RowId, DbError> {
        self.active(txn)?;
        let ncols = self.table(table)?.def.columns.len();
        if values.len() != ncols {
            return Err(DbError::SchemaMismatch(format!(
                "{} values for {ncols} columns",
                values.len()
            )));
        }
        for (i, v) in values.iter().enumerate() {
            self.validate(table, i, v)?;
        }
        self.in_txn(txn, |db| {
            let mut cells: Vec<(usize, Cell)> = values.into_iter().enumerate().collect();
            db.promote_cells(txn, table, &mut cells)?;
            let cells: Vec<Cell> = cells.into_iter().map(|(_, c)| c).collect();
            let t = &mut db.tables[table as usize];
            let row = t.next_row;
            t.next_row += 1;
            t.rows.insert(
                row,
                vec![RowVersion {
                    begin: txn,
                    end: None,
                    cells: cells.clone(),
                }],
            );
            let tx = db.txns.get_mut(&txn).unwrap();
            tx.redo.push(DbRecord::NewVersion {
                txn,
                table,
                row,
                cells,
            });
            tx.write_set.insert((table, row));
            Ok(row)
        })
    }

    /// Index of the version `txn` may supersede.
    fn writable_head(&self, txn: TxnId, table: TableId, row: RowId) -> Result<usize, DbError> {
        let snap = &self.txns[&txn].snapshot;
        let chain = self
            .table(table)?
            .rows
            .get(&row)
            .ok_or(DbError::RowNotVisible(row))?;
        let head = chain
            .iter()
            .rposition(|v| self.state_of(v.begin) != TxnState::Aborted)
            .ok_or(DbError::RowNotVisible(row))?;
        let v = &chain[head];
        if self.visible(snap, txn, v) {
            return match v.end {
                Some(_) => Err(DbError::WriteConflict(row)),
                None => Ok(head),
            };
        }
        if chain.iter().any(|x| self.visible(snap, txn, x)) {
            Err(DbError::WriteConflict(row))
        } else {
            Err(DbError::RowNotVisible(row))
        }
    }

    /// Supersedes the row's visible version with one carrying `assignments`
    /// as `(column, value)`. Unassigned sensitive cells keep their FIDs.
    pub fn update_row(
        &mut self,
        txn: TxnId,
        table: TableId,
        row: RowId,
        assignments: Vec<(usize, Cell)>,
    ) -> Result<(), DbError> {
        self.active(txn)?;
        for (col, v) in &assignments {
            self.validate(table, *col, v)?;
        }
        match self.writable_head(txn, table, row) {
            Err(e @ DbError::WriteConflict(_)) => {
                self.abort(txn);
                return Err(e);
            }
            r => r?,
        };
        self.in_txn(txn, |db| {
            let mut assignments = assignments;
            db.promote_cells(txn, table, &mut assignments)?;
            let head = db.writable_head(txn, table, row)?;
            let chain = db.tables[table as usize].rows.get_mut(&row).unwrap();
            let mut cells = chain[head].cells.clone();
            for (col, v) in assignments {
                cells[col] = v;
            }
            chain[head].end = Some(txn);
            chain.push(RowVersion {
                begin: txn,
                end: None,
                cells: cells.clone(),
            });
            let tx = db.txns.get_mut(&txn).unwrap();
            tx.redo.push(DbRecord::EndVersion { txn, table, row });
            tx.redo.push(DbRecord::NewVersion {
                txn,
                table,
                row,
                cells,
            });
            tx.write_set.insert((table, row));
            Ok(())
        })
    }

    pub fn delete_row(&mut self, txn: TxnId, table: TableId, row: RowId) -> Result<(), DbError> {
        self.active(txn)?;
        match self.writable_head(txn, table, row) {
            Ok(head) => {
                let chain = self.tables[table as usize].rows.get_mut(&row).unwrap();
                chain[head].end = Some(txn);
                let tx = self.txns.get_mut(&txn).unwrap();
                tx.redo.push(DbRecord::EndVersion { txn, table, row });
                tx.write_set.insert((table, row));
                Ok(())
            }
            Err(e) => {
                if e.aborts_txn() {
                    self.abort(txn);
                }
                Err(e)
            }
        }
    }

    /// Makes `txn` durable: prepare, privacy-zone log flush, then the local
    /// commit record. A crash hook firing stops the engine mid-protocol.
    pub fn commit(&mut self, txn: TxnId) -> Result<(), DbError> {
        self.active(txn)?;
        if self.closed {
            self.abort(txn);
            return Err(DbError::LogClosed);
        }
        let tx = self.txns.get_mut(&txn).unwrap();
        tx.state = TxnState::Preparing;
        self.status.insert(txn, TxnState::Preparing);
        let redo = std::mem::take(&mut tx.redo);
        let needs_flush = tx.store_mutations;
        if needs_flush && self.hooks.reached(CrashSite::BeforePrivacyFlush) {
            return Err(DbError::Crashed(CrashSite::BeforePrivacyFlush));
        }
        if needs_flush {
            if let Err(e) = self.call(txn, Request::FlushLog).and_then(done) {
                self.abort(txn);
                return Err(e);
            }
        }
        self.events.push(ProtocolEvent::PrivacyFlushed(txn));
        if needs_flush
            && self
                .hooks
                .reached(CrashSite::AfterPrivacyFlushBeforeDbCommit)
        {
            return Err(DbError::Crashed(CrashSite::AfterPrivacyFlushBeforeDbCommit));
        }
        if !redo.is_empty() {
            let written = redo
                .iter()
                .chain(std::iter::once(&DbRecord::Commit { txn }))
                .try_for_each(|r| self.wal.append(r))
                .and_then(|_| self.wal.sync());
            if let Err(e) = written {
                // A later sync could persist this commit record.
                self.closed = true;
                self.abort(txn);
                return Err(e.into());
            }
        }
        self.events.push(ProtocolEvent::DbCommitDurable(txn));
        let tx = self.txns.remove(&txn).unwrap();
        self.status.insert(txn, TxnState::Committed);
        if needs_flush && self.hooks.reached(CrashSite::AfterDbCommit) {
            return Err(DbError::Crashed(CrashSite::AfterDbCommit));
        }
        if tx.touched_privacy {
            let _ = self.call(txn, Request::EndQuery);
        }
        Ok(())
    }

    /// Rolls back by visibility alone: end marks set by `txn` are cleared and
    /// its versions become dead. No-op for unknown or finished transactions.
    pub fn abort(&mut self, txn: TxnId) {
        let Some(tx) = self.txns.remove(&txn) else {
            return;
        };
        self.status.insert(txn, TxnState::Aborted);
        for (table, row) in &tx.write_set {
            if let Some(chain) = self.tables[*table as usize].rows.get_mut(row) {
                for v in chain.iter_mut().filter(|v| v.end == Some(txn)) {
                    v.end = None;
                }
            }
        }
        if tx.touched_privacy {
            let _ = self.call(txn, Request::EndQuery);
        }
    }

    /// After the privacy zone restarts: aborts every open transaction and
    /// drops all aborted versions without store deletes, since their FIDs
    /// may have been lost and their offsets reissued.
    pub fn handle_privacy_restart(&mut self) -> usize {
        let open: Vec<TxnId> = self.txns.keys().copied().collect();
        for t in open {
            self.abort(t);
        }
        let mut dropped = 0;
        let status = &self.status;
        for t in &mut self.tables {
            t.rows.retain(|_, chain| {
                let before = chain.len();
                chain.retain(|v| status.get(&v.begin) == Some(&TxnState::Committed));
                dropped += before - chain.len();
                !chain.is_empty()
            });
        }
        dropped
    }

    // ---- reads ----

    pub fn read_row(
        &self,
        txn: TxnId,
        table: TableId,
        row: RowId,
    ) -> Result<Option<Vec<Cell>>, DbError> {
        let snap = &self.active(txn)?.snapshot;
        Ok(self
            .table(table)?
            .rows
            .get(&row)
            .and_then(|c| c.iter().rev().find(|v| self.visible(snap, txn, v)))
            .map(|v| v.cells.clone()))
    }

    pub fn scan(&self, txn: TxnId, table: TableId) -> Result<Vec<(RowId, Vec<Cell>)>, DbError> {
        let snap = &self.active(txn)?.snapshot;
        self.scan_with(snap, txn, table)
    }

    /// Visible rows with ids in `lo..lo + len`.
    pub fn scan_range(
        &self,
        txn: TxnId,
        table: TableId,
        lo: RowId,
        len: u64,
    ) -> Result<Vec<(RowId, Vec<Cell>)>, DbError> {
        let snap = &self.active(txn)?.snapshot;
        Ok(self
            .table(table)?
            .rows
            .range(lo..lo.saturating_add(len))
            .filter_map(|(r, c)| {
                c.iter()
                    .rev()
                    .find(|v| self.visible(snap, txn, v))
                    .map(|v| (*r, v.cells.clone()))
            })
            .collect())
    }

    fn scan_with(
        &self,
        snap: &Snapshot,
        me: TxnId,
        table: TableId,
    ) -> Result<Vec<(RowId, Vec<Cell>)>, DbError> {
        Ok(self
            .table(table)?
            .rows
            .iter()
            .filter_map(|(r, c)| {
                c.iter()
                    .rev()
                    .find(|v| self.visible(snap, me, v))
                    .map(|v| (*r, v.cells.clone()))
            })
            .collect())
    }

    /// Latest committed state of `table`.
    pub fn committed_rows(&self, table: TableId) -> Result<Vec<(RowId, Vec<Cell>)>, DbError> {
        let snap = Snapshot {
            xmax: TxnId::MAX,
            active: self.txns.keys().copied().collect(),
        };
        self.scan_with(&snap, 0, table)
    }

    /// Every sensitive FID in a committed version, as `(table, row, fid)`.
    pub fn committed_fids(&self) -> Vec<(TableId, RowId, Fid)> {
        let mut out = Vec::new();
        for t in &self.tables {
            for (r, chain) in &t.rows {
                for v in chain {
                    if self.state_of(v.begin) == TxnState::Committed {
                        out.extend(
                            v.cells
                                .iter()
                                .filter_map(Cell::fid)
                                .map(|f| (t.def.id, *r, f)),
                        );
                    }
                }
            }
        }
        out
    }

    pub fn version_count(&self, table: TableId) -> usize {
        self.tables
            .get(table as usize)
            .map_or(0, |t| t.rows.values().map(Vec::len).sum())
    }

    // ---- privacy-zone calls within a transaction ----

    /// Converts client envelopes to temporary FIDs. Values for
    /// `SensitiveBytes` columns are padded when padding is on.
    pub fn ingest(
        &mut self,
        txn: TxnId,
        ty: ColumnType,
        envelopes: Vec<ClientEnvelope>,
    ) -> Result<Vec<Fid>, DbError> {
        let pad_to = (self.config.pad_sensitive && ty == ColumnType::SensitiveBytes)
            .then_some(self.config.pad_width);
        let batch = self.config.batch_size.max(1);
        self.in_txn(txn, |db| {
            let mut out = Vec::with_capacity(envelopes.len());
            for chunk in envelopes.chunks(batch) {
                out.extend(single_fids(db.txn_call(
                    txn,
                    Request::Ingest {
                        pad_to,
                        envelopes: chunk.to_vec(),
                    },
                )?)?);
            }
            Ok(out)
        })
    }

    pub fn reveal(&mut self, txn: TxnId, fids: Vec<Fid>) -> Result<Vec<ClientEnvelope>, DbError> {
        let batch = self.config.batch_size.max(1);
        self.in_txn(txn, |db| {
            let mut out = Vec::with_capacity(fids.len());
            for chunk in fids.chunks(batch) {
                match db.txn_call(txn, Request::Reveal(chunk.to_vec()))? {
                    Response::Envelopes(v) => {
                        for e in v {
                            out.push(e.map_err(DbError::Proxy)?);
                        }
                    }
                    Response::Failed(e) => return Err(DbError::Proxy(e)),
                    _ => return Err(DbError::Protocol),
                }
            }
            Ok(out)
        })
    }

    /// Runs operator requests, `batch_size` per round trip.
    pub fn exec(
        &mut self,
        txn: TxnId,
        reqs: Vec<OperatorRequest>,
    ) -> Result<Vec<OperatorResponse>, DbError> {
        let batch = self.config.batch_size.max(1);
        self.in_txn(txn, |db| {
            let mut out = Vec::with_capacity(reqs.len());
            for chunk in reqs.chunks(batch) {
                out.extend(ops(db.txn_call(txn, Request::Exec(chunk.to_vec()))?)?);
            }
            Ok(out)
        })
    }

    fn sensitive_column(&self, table: TableId, col: usize) -> Result<ColumnType, DbError> {
        let def = &self.table(table)?.def;
        match def.columns.get(col) {
            Some(c) if c.ty.is_sensitive() => Ok(c.ty),
            _ => Err(DbError::SchemaMismatch(format!(
                "column {col} of {} is not sensitive",
                def.name
            ))),
        }
    }

    fn visible_fids(
        &self,
        txn: TxnId,
        table: TableId,
        col: usize,
    ) -> Result<Vec<(RowId, Fid)>, DbError> {
        Ok(self
            .scan(txn, table)?
            .into_iter()
            .filter_map(|(r, cells)| cells[col].fid().map(|f| (r, f)))
            .collect())
    }

    /// SUM over a sensitive integer column, returned as a temporary FID.
    /// With a batch size of 1 this is an `Add` chain; otherwise one `SumAgg`
    /// per batch plus one combining call.
    pub fn sum(&mut self, txn: TxnId, table: TableId, col: usize) -> Result<Fid, DbError> {
        self.active(txn)?;
        if self.sensitive_column(table, col)? != ColumnType::SensitiveInt {
            return Err(DbError::SchemaMismatch(
                "SUM needs an integer column".into(),
            ));
        }
        let fids: Vec<Fid> = self
            .visible_fids(txn, table, col)?
            .into_iter()
            .map(|(_, f)| f)
            .collect();
        let batch = self.config.batch_size.max(1);
        let ty = crate::proxy::ValueType::Int64;
        let one = |db: &mut Self, req: OperatorRequest| -> Result<Fid, DbError> {
            ops(db.txn_call(txn, Request::Exec(vec![req]))?)?
                .pop()
                .and_then(|r| r.fid())
                .ok_or(DbError::Protocol)
        };
        self.in_txn(txn, |db| {
            if batch == 1 && fids.len() > 1 {
                let mut acc = fids[0];
                for &f in &fids[1..] {
                    acc = one(db, OperatorRequest::binary(OpKind::Add, acc, f, ty))?;
                }
                return Ok(acc);
            }
            if fids.len() <= batch {
                return one(db, OperatorRequest::new(OpKind::SumAgg, fids, ty));
            }
            let mut partials = Vec::with_capacity(fids.len().div_ceil(batch));
            for chunk in fids.chunks(batch) {
                partials.push(one(
                    db,
                    OperatorRequest::new(OpKind::SumAgg, chunk.to_vec(), ty),
                )?);
            }
            one(db, OperatorRequest::new(OpKind::SumAgg, partials, ty))
        })
    }

    /// Rows whose `col` compares to `constant` under `op`. Comparison
    /// outcomes are returned in the clear.
    pub fn select_where(
        &mut self,
        txn: TxnId,
        table: TableId,
        col: usize,
        op: OpKind,
        constant: Fid,
    ) -> Result<Vec<RowId>, DbError> {
        self.active(txn)?;
        if !op.is_comparison() {
            return Err(DbError::SchemaMismatch(format!(
                "{op:?} is not a comparison"
            )));
        }
        let ty = self.sensitive_column(table, col)?.value_type();
        let rows = self.visible_fids(txn, table, col)?;
        let reqs = rows
            .iter()
            .map(|&(_, f)| OperatorRequest::binary(op, f, constant, ty))
            .collect();
        let out = self.exec(txn, reqs)?;
        let mut hits = Vec::new();
        for ((row, _), r) in rows.iter().zip(out) {
            if r.boolean().ok_or(DbError::Protocol)? {
                hits.push(*row);
            }
        }
        self.hooks
            .observe(Observation::ResultSize(hits.len() as u64));
        Ok(hits)
    }

    // ---- maintenance ----

    /// Removes dead versions and deletes FIDs no surviving version of the
    /// same row references. Returns the number of FIDs deleted.
    pub fn vacuum(&mut self, table: TableId) -> Result<u64, DbError> {
        let horizon: Vec<Snapshot> = self.txns.values().map(|t| t.snapshot.clone()).collect();
        let all_see = |db: &Self, e: TxnId| {
            db.state_of(e) == TxnState::Committed
                && horizon.iter().all(|s| e < s.xmax && !s.active.contains(&e))
        };
        let t = self.table(table)?;
        let mut removed = Vec::new();
        let mut logged = Vec::new();
        let mut doomed = BTreeSet::new();
        for (row, chain) in &t.rows {
            let dead: Vec<bool> = chain
                .iter()
                .map(|v| {
                    self.state_of(v.begin) == TxnState::Aborted
                        || v.end.is_some_and(|e| all_see(self, e))
                })
                .collect();
            if !dead.contains(&true) {
                continue;
            }
            let keep: BTreeSet<Fid> = chain
                .iter()
                .zip(&dead)
                .filter(|(_, d)| !**d)
                .flat_map(|(v, _)| v.cells.iter().filter_map(Cell::fid))
                .collect();
            for (v, _) in chain.iter().zip(&dead).filter(|(_, d)| **d) {
                doomed.extend(
                    v.cells
                        .iter()
                        .filter_map(Cell::fid)
                        .filter(|f| !keep.contains(f)),
                );
                if self.state_of(v.begin) == TxnState::Committed {
                    logged.push((*row, v.begin, v.end));
                }
                removed.push((*row, v.begin, v.end));
            }
        }
        if removed.is_empty() {
            return Ok(0);
        }
        if !logged.is_empty() {
            if self.closed {
                return Err(DbError::LogClosed);
            }
            let r = self
                .wal
                .append(&DbRecord::Vacuum {
                    table,
                    removed: logged,
                })
                .and_then(|_| self.wal.sync());
            if let Err(e) = r {
                self.closed = true;
                return Err(e.into());
            }
        }
        let t = &mut self.tables[table as usize];
        for (row, begin, end) in removed {
            let chain = t.rows.get_mut(&row).unwrap();
            if let Some(i) = chain.iter().position(|v| v.begin == begin && v.end == end) {
                chain.remove(i);
            }
            if chain.is_empty() {
                t.rows.remove(&row);
            }
        }
        let doomed: Vec<Fid> = doomed.into_iter().collect();
        self.delete_in_batches(&doomed, CrashSite::DuringVacuum)?;
        Ok(doomed.len() as u64)
    }

    pub fn vacuum_all(&mut self) -> Result<u64, DbError> {
        let mut n = 0;
        for t in 0..self.tables.len() {
            n += self.vacuum(t as TableId)?;
        }
        Ok(n)
    }

    fn delete_in_batches(&mut self, fids: &[Fid], site: CrashSite) -> Result<(), DbError> {
        let batch = self.config.batch_size.max(1);
        let chunks: Vec<&[Fid]> = fids.chunks(batch).collect();
        let mid = chunks.len() / 2;
        for i in 0..=chunks.len() {
            if i == mid && self.hooks.reached(site) {
                return Err(DbError::Crashed(site));
            }
            if let Some(c) = chunks.get(i) {
                done(self.call(0, Request::Delete(c.to_vec()))?)?;
            }
        }
        if !fids.is_empty() {
            done(self.call(0, Request::FlushLog)?)?;
        }
        Ok(())
    }

    /// Deletes store secrets in table partitions that no version references.
    pub fn orphan_gc(&mut self) -> Result<u64, DbError> {
        if !self.txns.is_empty() {
            return Err(DbError::NotQuiescent);
        }
        let mut orphans = Vec::new();
        for i in 0..self.tables.len() {
            let Some(p) = self.tables[i].def.partition else {
                continue;
            };
            let live = match self.call(0, Request::LiveFids(p))? {
                Response::FidList(f) => f,
                Response::Failed(e) => return Err(DbError::Proxy(e)),
                _ => return Err(DbError::Protocol),
            };
            let referenced: BTreeSet<Fid> = self.tables[i]
                .rows
                .values()
                .flatten()
                .flat_map(|v| v.cells.iter().filter_map(Cell::fid))
                .collect();
            orphans.extend(live.into_iter().filter(|f| !referenced.contains(f)));
        }
        self.delete_in_batches(&orphans, CrashSite::DuringOrphanGc)?;
        Ok(orphans.len() as u64)
    }

    pub fn prefetch(&mut self, table: TableId) -> Result<u64, DbError> {
        let Some(p) = self.table(table)?.def.partition else {
            return Ok(0);
        };
        match self.call(0, Request::Prefetch(p))? {
            Response::Count(n) => Ok(n),
            Response::Failed(e) => Err(DbError::Proxy(e)),
            _ => Err(DbError::Protocol),
        }
    }
}

fn apply_replayed(tables: &mut [Table], rec: DbRecord) -> Result<(), DbError> {
    let bad = || DbError::Catalog("db.wal names an unknown table".into());
    match rec {
        DbRecord::NewVersion {
            txn,
            table,
            row,
            cells,
        } => {
            let t = tables.get_mut(table as usize).ok_or_else(bad)?;
            t.next_row = t.next_row.max(row + 1);
            t.rows.entry(row).or_default().push(RowVersion {
                begin: txn,
                end: None,
                cells,
            });
        }
        DbRecord::EndVersion { txn, table, row } => {
            let t = tables.get_mut(table as usize).ok_or_else(bad)?;
            if let Some(v) = t
                .rows
                .get_mut(&row)
                .and_then(|c| c.iter_mut().rev().find(|v| v.end.is_none()))
            {
                v.end = Some(txn);
            }
        }
        DbRecord::Vacuum { table, removed } => {
            let t = tables.get_mut(table as usize).ok_or_else(bad)?;
            for (row, begin, end) in removed {
                if let Some(chain) = t.rows.get_mut(&row) {
                    if let Some(i) = chain.iter().position(|v| v.begin == begin && v.end == end) {
                        chain.remove(i);
                    }
                    if chain.is_empty() {
                        t.rows.remove(&row);
                    }
                }
            }
        }
        DbRecord::Commit { .. } => {}
    }
    Ok(())
}

#[cfg(test)]
mod tests;
