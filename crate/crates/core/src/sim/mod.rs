//! Two-zone harness.
//!
//! The integrity zone ([`Database`]) reaches the privacy zone ([`Proxy`])
//! only through [`Channel`], which serializes every request and response to
//! bytes, counts round trips, and feeds the [`AdversaryTrace`]. Crash points
//! are armed with an occurrence count; when one fires, the target zone's
//! volatile state is dropped and its disk keeps only synced bytes.

pub mod script;
pub mod trace;
pub mod workload;

use std::cell::RefCell;
use std::rc::Rc;
use std::sync::Arc;
use std::time::Instant;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::atrest::{BlockEvent, BlockId, BLOCK_SIZE};
use crate::dbms::{
    CrashSite, Database, DbConfig, DbError, DbHooks, DbOpenReport, Observation, PrivacyLink, RowId,
    TableId, Unavailable,
};
use crate::fid::Fid;
use crate::proxy::wire::{decode_request, decode_response, encode_request, encode_response};
use crate::proxy::{OperatorResponse, Proxy, ProxyConfig, Request, Response};
use crate::store::{OpenReport, StoreError};
use crate::vfs::{Disk, MemDisk};
pub use trace::{AdversaryTrace, TraceEvent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrashId {
    BeforePrivacyFlush,
    AfterPrivacyFlushBeforeDbCommit,
    AfterDbCommit,
    DuringVacuum,
    DuringOrphanGc,
    /// The target disk tears once this many more bytes have been synced.
    RandomByte(u64),
}

impl CrashId {
    pub fn site(self) -> Option<CrashSite> {
        Some(match self {
            CrashId::BeforePrivacyFlush => CrashSite::BeforePrivacyFlush,
            CrashId::AfterPrivacyFlushBeforeDbCommit => CrashSite::AfterPrivacyFlushBeforeDbCommit,
            CrashId::AfterDbCommit => CrashSite::AfterDbCommit,
            CrashId::DuringVacuum => CrashSite::DuringVacuum,
            CrashId::DuringOrphanGc => CrashSite::DuringOrphanGc,
            CrashId::RandomByte(_) => return None,
        })
    }

    pub fn name(self) -> &'static str {
        match self {
            CrashId::BeforePrivacyFlush => "BeforePrivacyFlush",
            CrashId::AfterPrivacyFlushBeforeDbCommit => "AfterPrivacyFlushBeforeDbCommit",
            CrashId::AfterDbCommit => "AfterDbCommit",
            CrashId::DuringVacuum => "DuringVacuum",
            CrashId::DuringOrphanGc => "DuringOrphanGc",
            CrashId::RandomByte(_) => "RandomByte",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum CrashTarget {
    PrivacyZone,
    IntegrityZone,
    Both,
}

impl CrashTarget {
    pub const ALL: [CrashTarget; 3] = [
        CrashTarget::PrivacyZone,
        CrashTarget::IntegrityZone,
        CrashTarget::Both,
    ];

    fn privacy(self) -> bool {
        self != CrashTarget::IntegrityZone
    }

    fn integrity(self) -> bool {
        self != CrashTarget::PrivacyZone
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct CrashPoint {
    pub id: CrashId,
    pub target: CrashTarget,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Zone {
    Privacy,
    Integrity,
}

#[derive(Debug, Error)]
pub enum SimError {
    #[error("no zone has crashed")]
    NoCrashPending,
    #[error("{0:?} zone is down")]
    ZoneDown(Zone),
    #[error("workloads differ in structure: {0}")]
    StructureMismatch(String),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error(transparent)]
    Db(#[from] DbError),
}

/// Modeled cost of one message: `fixed_ns + per_byte_ns * len`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LatencyModel {
    pub fixed_ns: u64,
    pub per_byte_ns: f64,
}

impl Default for LatencyModel {
    fn default() -> Self {
        LatencyModel {
            fixed_ns: 2_000,
            per_byte_ns: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub round_trips: u64,
    pub bytes_sent: u64,
    pub bytes_received: u64,
    pub unavailable: u64,
    pub modeled_ns: f64,
}

struct Armed {
    point: CrashPoint,
    occurrence: u64,
    seen: u64,
}

struct Zones {
    privacy: Option<Proxy>,
    priv_disk: MemDisk,
    db_disk: MemDisk,
    integrity_down: bool,
    trace: AdversaryTrace,
    stats: ChannelStats,
    latency: LatencyModel,
    armed: Option<Armed>,
    fired: Option<CrashPoint>,
}

/// Stable pseudo-partition for a named file, so file I/O shares the block
/// event vocabulary.
fn file_partition(name: &str) -> u32 {
    0xFFFF_0000 | (crate::codec::checksum(name.as_bytes()) & 0xFFFF)
}

impl Zones {
    fn crash_privacy(&mut self) {
        self.privacy = None;
        self.priv_disk.crash();
    }

    fn drain_io(&mut self) {
        if let Some(p) = self.privacy.as_mut() {
            for e in p.store_mut().drain_block_events() {
                self.trace.push(match e {
                    BlockEvent::Read(id) => TraceEvent::block_read(id),
                    BlockEvent::Write(id) => TraceEvent::block_write(id),
                });
            }
        }
        for disk in [&self.db_disk, &self.priv_disk] {
            for w in disk.drain_writes() {
                let partition = file_partition(&w.name);
                let first = w.offset / BLOCK_SIZE as u64;
                let last = (w.offset + w.len.max(1) - 1) / BLOCK_SIZE as u64;
                for index in first..=last {
                    self.trace
                        .push(TraceEvent::block_write(BlockId { partition, index }));
                }
            }
        }
    }

    fn message(&mut self, len: usize, sent: bool) {
        self.trace.push(TraceEvent::MsgBytes { len: len as u64 });
        if sent {
            self.stats.bytes_sent += len as u64;
        } else {
            self.stats.bytes_received += len as u64;
        }
        self.stats.modeled_ns +=
            self.latency.fixed_ns as f64 + self.latency.per_byte_ns * len as f64;
    }

    fn observe_request(&mut self, req: &Request) {
        let fid =
            |t: &mut AdversaryTrace, f: &Fid| t.push(TraceEvent::FidObserved { fid: f.raw() });
        match req {
            Request::Exec(ops) => {
                for op in ops {
                    self.trace
                        .push(TraceEvent::OpKindObserved { op: op.op.code() });
                    op.operands.iter().for_each(|f| fid(&mut self.trace, f));
                }
            }
            Request::Promote { fids, .. } | Request::Reveal(fids) | Request::Delete(fids) => {
                fids.iter().for_each(|f| fid(&mut self.trace, f))
            }
            _ => {}
        }
    }

    fn observe_response(&mut self, resp: &Response) {
        let t = &mut self.trace;
        match resp {
            Response::Fids(v) => {
                for f in v.iter().flatten() {
                    t.push(TraceEvent::FidObserved { fid: f.raw() });
                }
            }
            Response::Ops(v) => {
                for r in v.iter().flatten() {
                    t.push(match r {
                        OperatorResponse::NewFid(f) => TraceEvent::FidObserved { fid: f.raw() },
                        OperatorResponse::PlainBool(b) => TraceEvent::CmpBool { b: *b },
                    });
                }
            }
            Response::FidList(v) => {
                for f in v {
                    t.push(TraceEvent::FidObserved { fid: f.raw() });
                }
            }
            _ => {}
        }
    }
}

/// Byte-level link from the integrity zone to the privacy zone.
pub struct Channel {
    zones: Rc<RefCell<Zones>>,
}

impl PrivacyLink for Channel {
    fn call(&mut self, query_id: u64, req: Request) -> Result<Response, Unavailable> {
        let mut guard = self.zones.borrow_mut();
        let z = &mut *guard;
        z.drain_io();
        let bytes = encode_request(query_id, &req);
        drop(req);
        z.message(bytes.len(), true);
        if z.privacy.is_none() {
            z.stats.unavailable += 1;
            return Err(Unavailable);
        }
        let (q, req) = decode_request(&bytes).expect("channel request encoding");
        if z.trace.is_enabled() {
            z.observe_request(&req);
        }
        let resp = z.privacy.as_mut().unwrap().handle(q, req);
        z.drain_io();
        let bytes = encode_response(&resp);
        drop(resp);
        z.message(bytes.len(), false);
        z.stats.round_trips += 1;
        let resp = decode_response(&bytes).expect("channel response encoding");
        if z.trace.is_enabled() {
            z.observe_response(&resp);
        }
        Ok(resp)
    }
}

struct SimHooks {
    zones: Rc<RefCell<Zones>>,
}

impl DbHooks for SimHooks {
    fn reached(&mut self, site: CrashSite) -> bool {
        let mut z = self.zones.borrow_mut();
        let Some(a) = z.armed.as_mut() else {
            return false;
        };
        if a.point.id.site() != Some(site) {
            return false;
        }
        a.seen += 1;
        if a.seen < a.occurrence {
            return false;
        }
        let point = a.point;
        z.armed = None;
        z.fired = Some(point);
        if point.target.privacy() {
            z.crash_privacy();
        }
        if point.target.integrity() {
            z.integrity_down = true;
        }
        point.target.integrity()
    }

    fn observe(&mut self, obs: Observation) {
        let Observation::ResultSize(n) = obs;
        self.zones
            .borrow_mut()
            .trace
            .push(TraceEvent::ResultSize { n });
    }
}

#[derive(Debug, Clone, Default)]
pub struct TopologyConfig {
    pub proxy: ProxyConfig,
    pub db: DbConfig,
    pub latency: LatencyModel,
    pub trace: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DanglingFid {
    pub table: TableId,
    pub row: RowId,
    pub fid: Fid,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct InvariantReport {
    pub holds: bool,
    pub violations: Vec<DanglingFid>,
    /// Live secrets in table partitions that no row version references.
    pub orphans: u64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct RecoveryReport {
    pub privacy: Option<OpenReport>,
    pub integrity: Option<DbOpenReport>,
    /// Both zones replayed at once.
    pub parallel: bool,
    /// Time the surviving integrity zone waited for the privacy replay.
    pub integrity_paused_ns: u64,
    pub privacy_replay_ns: u64,
    pub integrity_replay_ns: u64,
    /// Uncommitted or aborted versions dropped after a privacy restart.
    pub discarded_versions: usize,
    pub fired: Option<CrashPoint>,
    pub invariant: InvariantReport,
}

pub struct Topology {
    zones: Rc<RefCell<Zones>>,
    db: Option<Database>,
    cfg: TopologyConfig,
}

impl Topology {
    pub fn new(cfg: TopologyConfig) -> Result<Topology, SimError> {
        Self::on_disks(cfg, MemDisk::new(), MemDisk::new())
    }

    /// Opens both zones over existing disks.
    pub fn on_disks(
        mut cfg: TopologyConfig,
        priv_disk: MemDisk,
        db_disk: MemDisk,
    ) -> Result<Topology, SimError> {
        cfg.proxy.store.record_block_events = cfg.trace;
        priv_disk.set_record_writes(cfg.trace);
        db_disk.set_record_writes(cfg.trace);
        let (proxy, _) = Proxy::open(Arc::new(priv_disk.clone()), cfg.proxy.clone())?;
        let zones = Rc::new(RefCell::new(Zones {
            privacy: Some(proxy),
            priv_disk,
            db_disk,
            integrity_down: false,
            trace: AdversaryTrace::new(cfg.trace),
            stats: ChannelStats::default(),
            latency: cfg.latency,
            armed: None,
            fired: None,
        }));
        let mut t = Topology {
            zones,
            db: None,
            cfg,
        };
        t.db = Some(t.open_db()?.0);
        Ok(t)
    }

    fn open_db(&self) -> Result<(Database, DbOpenReport), DbError> {
        let disk = self.zones.borrow().db_disk.clone();
        Database::open(
            Arc::new(disk),
            Box::new(Channel {
                zones: self.zones.clone(),
            }),
            Box::new(SimHooks {
                zones: self.zones.clone(),
            }),
            self.cfg.db,
        )
    }

    pub fn config(&self) -> &TopologyConfig {
        &self.cfg
    }

    pub fn db(&mut self) -> Result<&mut Database, SimError> {
        self.db.as_mut().ok_or(SimError::ZoneDown(Zone::Integrity))
    }

    /// Direct access to the privacy zone, bypassing the channel. For
    /// oracles and fault injection only.
    pub fn with_proxy<R>(&self, f: impl FnOnce(&mut Proxy) -> R) -> Option<R> {
        self.zones.borrow_mut().privacy.as_mut().map(f)
    }

    pub fn privacy_disk(&self) -> MemDisk {
        self.zones.borrow().priv_disk.clone()
    }

    pub fn db_disk(&self) -> MemDisk {
        self.zones.borrow().db_disk.clone()
    }

    /// Arms `point` to fire on its `occurrence`-th visit (1-based). Byte
    /// crashes arm the target disks immediately.
    pub fn arm(&mut self, point: CrashPoint, occurrence: u64) {
        let mut z = self.zones.borrow_mut();
        if let CrashId::RandomByte(n) = point.id {
            if point.target.privacy() {
                z.priv_disk.arm_torn_sync(n);
            }
            if point.target.integrity() {
                z.db_disk.arm_torn_sync(n);
            }
        }
        z.armed = Some(Armed {
            point,
            occurrence: occurrence.max(1),
            seen: 0,
        });
    }

    /// Cancels a pending crash point that has not fired yet.
    pub fn disarm(&mut self) {
        let mut z = self.zones.borrow_mut();
        z.armed = None;
        z.priv_disk.disarm();
        z.db_disk.disarm();
    }

    pub fn fired(&self) -> Option<CrashPoint> {
        self.zones.borrow().fired
    }

    /// Crashes `target` now.
    pub fn inject_crash(&mut self, target: CrashTarget) {
        let mut z = self.zones.borrow_mut();
        if target.privacy() {
            z.crash_privacy();
        }
        if target.integrity() {
            z.integrity_down = true;
        }
        drop(z);
        self.poll();
    }

    /// Turns torn disks and fired hooks into zone crashes. Returns true if
    /// any zone is down.
    pub fn poll(&mut self) -> bool {
        let mut z = self.zones.borrow_mut();
        let byte_point = |z: &Zones| match &z.armed {
            Some(a) if matches!(a.point.id, CrashId::RandomByte(_)) => Some(a.point),
            _ => None,
        };
        let priv_trip = z.privacy.is_some() && z.priv_disk.tripped();
        let db_trip = !z.integrity_down && z.db_disk.tripped();
        if priv_trip || db_trip {
            let point = byte_point(&z);
            z.fired = point.or(z.fired);
            // A torn write on either disk takes down every targeted zone.
            let both = point.is_some_and(|p| p.target == CrashTarget::Both);
            if priv_trip || both {
                z.crash_privacy();
            }
            if db_trip || both {
                z.integrity_down = true;
            }
            if point.is_some() {
                z.armed = None;
                z.priv_disk.disarm();
                z.db_disk.disarm();
            }
        }
        if z.integrity_down && self.db.is_some() {
            self.db = None;
            z.db_disk.crash();
        }
        z.privacy.is_none() || z.integrity_down
    }

    pub fn crash_pending(&mut self) -> bool {
        self.poll()
    }

    /// Restarts every crashed zone, replaying both logs concurrently when
    /// both are down, then checks the invariant.
    pub fn recover_all(&mut self) -> Result<RecoveryReport, SimError> {
        if !self.poll() {
            return Err(SimError::NoCrashPending);
        }
        let (privacy_down, integrity_down, priv_disk) = {
            let mut z = self.zones.borrow_mut();
            z.armed = None;
            z.priv_disk.disarm();
            z.db_disk.disarm();
            (z.privacy.is_none(), z.integrity_down, z.priv_disk.clone())
        };
        let mut report = RecoveryReport {
            parallel: privacy_down && integrity_down,
            fired: self.zones.borrow_mut().fired.take(),
            ..Default::default()
        };
        let proxy_cfg = self.cfg.proxy.clone();
        let (priv_result, db_result) = std::thread::scope(|s| {
            let h = privacy_down.then(|| {
                s.spawn(move || {
                    let t0 = Instant::now();
                    let r = Proxy::open(Arc::new(priv_disk), proxy_cfg);
                    (r, t0.elapsed().as_nanos() as u64)
                })
            });
            let db = integrity_down.then(|| {
                let t0 = Instant::now();
                let r = self.open_db();
                (r, t0.elapsed().as_nanos() as u64)
            });
            (h.map(|h| h.join().expect("privacy replay thread")), db)
        });
        if let Some((r, ns)) = priv_result {
            let (proxy, rep) = r?;
            report.privacy = Some(rep);
            report.privacy_replay_ns = ns;
            if !integrity_down {
                report.integrity_paused_ns = ns;
            }
            self.zones.borrow_mut().privacy = Some(proxy);
        }
        if let Some((r, ns)) = db_result {
            let (db, rep) = r?;
            report.integrity = Some(rep);
            report.integrity_replay_ns = ns;
            self.db = Some(db);
            self.zones.borrow_mut().integrity_down = false;
        }
        if privacy_down && !integrity_down {
            report.discarded_versions = self.db()?.handle_privacy_restart();
        }
        // Temp partitions of queries the old integrity zone had open.
        let _ = Channel {
            zones: self.zones.clone(),
        }
        .call(0, Request::DropAllQueries);
        report.invariant = self.check_invariant()?;
        Ok(report)
    }

    /// God-view scan: every FID in a committed version must be live in the
    /// store. Also counts orphan secrets.
    pub fn check_invariant(&mut self) -> Result<InvariantReport, SimError> {
        self.poll();
        let db = self
            .db
            .as_ref()
            .ok_or(SimError::ZoneDown(Zone::Integrity))?;
        let mut z = self.zones.borrow_mut();
        let proxy = z
            .privacy
            .as_mut()
            .ok_or(SimError::ZoneDown(Zone::Privacy))?;
        let store = proxy.store();
        let committed = db.committed_fids();
        let violations: Vec<DanglingFid> = committed
            .iter()
            .filter(|(_, _, f)| !store.is_live(*f))
            .map(|&(table, row, fid)| DanglingFid { table, row, fid })
            .collect();
        let referenced: std::collections::BTreeSet<Fid> = committed.iter().map(|x| x.2).collect();
        let mut orphans = 0;
        for def in db.tables() {
            if let Some(p) = def.partition {
                orphans += store
                    .live_fids(p)?
                    .into_iter()
                    .filter(|f| !referenced.contains(f))
                    .count() as u64;
            }
        }
        Ok(InvariantReport {
            holds: violations.is_empty(),
            violations,
            orphans,
        })
    }

    pub fn channel_stats(&self) -> ChannelStats {
        self.zones.borrow().stats
    }

    pub fn reset_channel_stats(&mut self) {
        self.zones.borrow_mut().stats = ChannelStats::default();
    }

    /// Pending block events are folded in before the trace is returned.
    pub fn take_trace(&mut self) -> AdversaryTrace {
        let mut z = self.zones.borrow_mut();
        z.drain_io();
        let enabled = z.trace.is_enabled();
        std::mem::replace(&mut z.trace, AdversaryTrace::new(enabled))
    }

    pub fn set_trace(&mut self, on: bool) {
        let mut z = self.zones.borrow_mut();
        z.drain_io();
        z.trace.set_enabled(on);
        z.priv_disk.set_record_writes(on);
        z.db_disk.set_record_writes(on);
        if let Some(p) = z.privacy.as_mut() {
            p.store_mut().set_record_block_events(on);
        }
        self.cfg.proxy.store.record_block_events = on;
    }
}

#[cfg(test)]
mod tests;
