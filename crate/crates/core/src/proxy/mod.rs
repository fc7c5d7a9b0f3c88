//! Privacy-zone entry point.
//!
//! Translates FIDs to plaintext, runs operators, stores results in a
//! per-query temporary partition, and converts between client envelopes and
//! stored secrets. Every operator call is `get` on each operand, compute,
//! then one `put` of the result; comparisons return a plain boolean instead.

pub mod envelope;
pub mod ops;
pub mod wire;

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use envelope::{ClientEnvelope, EnvelopeCipher, ENVELOPE_OVERHEAD};
pub use ops::{OpKind, OperatorRequest, OperatorResponse, ValueType};
pub use wire::{Request, Response};

use crate::fid::Fid;
use crate::store::{MappingStore, OpenReport, PartitionKind, StoreConfig, StoreError, ValueLayout};
use crate::vfs::SharedDisk;
use crate::wal::WalError;
use ops::Computed;

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum ProxyError {
    #[error("{0} is not live")]
    NotLive(Fid),
    #[error("operand type mismatch")]
    TypeMismatch,
    #[error("division by zero")]
    DivideByZero,
    #[error("integer overflow")]
    Overflow,
    #[error("{op:?} cannot take {got} operands")]
    Arity { op: OpKind, got: usize },
    #[error("client envelope failed authentication")]
    AuthFailure,
    #[error("unknown partition {0}")]
    UnknownPartition(u32),
    #[error("partition {0} has the wrong kind")]
    WrongPartitionKind(u32),
    #[error("value rejected: {0}")]
    BadValue(String),
    #[error("partition {0} is full")]
    PartitionFull(u32),
    #[error("no partition ids left")]
    PartitionSpaceExhausted,
    #[error("log closed; the privacy zone must restart")]
    LogClosed,
    #[error("storage failure: {0}")]
    Storage(String),
    #[error("malformed message")]
    Malformed,
}

impl From<StoreError> for ProxyError {
    fn from(e: StoreError) -> Self {
        match e {
            StoreError::NotLive(f) => ProxyError::NotLive(f),
            StoreError::UnknownPartition(p) => ProxyError::UnknownPartition(p),
            StoreError::WrongPartitionKind { partition, .. } => {
                ProxyError::WrongPartitionKind(partition)
            }
            StoreError::PartitionFull(p) => ProxyError::PartitionFull(p),
            StoreError::PartitionSpaceExhausted => ProxyError::PartitionSpaceExhausted,
            StoreError::Wal(WalError::LogClosed) => ProxyError::LogClosed,
            e @ (StoreError::ValueTooLarge { .. }
            | StoreError::EmptyValue
            | StoreError::WidthMismatch { .. }
            | StoreError::InvalidLayout(_)) => ProxyError::BadValue(e.to_string()),
            e => ProxyError::Storage(e.to_string()),
        }
    }
}

#[derive(Debug, Clone)]
pub struct ProxyConfig {
    pub store: StoreConfig,
    /// Session key shared with clients for envelopes.
    pub client_key: [u8; 32],
    pub seed: u64,
}

impl Default for ProxyConfig {
    fn default() -> Self {
        ProxyConfig {
            store: StoreConfig::default(),
            client_key: [0x3c; 32],
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ProxyStats {
    pub requests: u64,
    pub envelope_opens: u64,
    pub envelope_seals: u64,
    pub operator_calls: u64,
}

pub struct Proxy {
    store: MappingStore,
    cipher: EnvelopeCipher,
    rng: ChaCha20Rng,
    queries: HashMap<u64, u32>,
    idle_temps: Vec<u32>,
    stats: ProxyStats,
}

impl Proxy {
    /// Opens (and if needed recovers) the privacy zone's store on `disk`.
    pub fn open(disk: SharedDisk, config: ProxyConfig) -> Result<(Proxy, OpenReport), StoreError> {
        let (store, report) = MappingStore::open(disk, config.store)?;
        Ok((
            Proxy {
                store,
                cipher: EnvelopeCipher::new(&config.client_key),
                rng: ChaCha20Rng::seed_from_u64(config.seed ^ ((report.epoch as u64) << 40)),
                queries: HashMap::new(),
                idle_temps: Vec::new(),
                stats: ProxyStats::default(),
            },
            report,
        ))
    }

    pub fn store(&self) -> &MappingStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut MappingStore {
        &mut self.store
    }

    pub fn stats(&self) -> ProxyStats {
        self.stats
    }

    /// Zeroes proxy and store counters.
    pub fn reset_stats(&mut self) {
        self.stats = ProxyStats::default();
        self.store.reset_counters();
    }

    /// Envelope operations plus at-rest block seals and opens.
    pub fn crypto_invocations(&self) -> u64 {
        self.stats.envelope_opens + self.stats.envelope_seals + self.store.seal_stats().total()
    }

    fn temp_partition(&mut self, query_id: u64) -> Result<u32, ProxyError> {
        if let Some(&p) = self.queries.get(&query_id) {
            return Ok(p);
        }
        let p = match self.idle_temps.pop() {
            Some(p) => p,
            None => self
                .store
                .create_partition(PartitionKind::Temporary, ValueLayout::VarLen)?,
        };
        self.queries.insert(query_id, p);
        Ok(p)
    }

    /// Decrypts a client envelope and stores the plaintext in the query's
    /// temporary partition, padded to `pad_to` bytes if given.
    pub fn ingest(
        &mut self,
        query_id: u64,
        env: &ClientEnvelope,
        pad_to: Option<u32>,
    ) -> Result<Fid, ProxyError> {
        self.stats.envelope_opens += 1;
        let plain = self.cipher.open(env).map_err(|_| ProxyError::AuthFailure)?;
        let value = match pad_to {
            Some(w) => envelope::pad(&plain, w as usize).ok_or_else(|| {
                ProxyError::BadValue(format!("{} bytes do not pad to {w}", plain.len()))
            })?,
            None => plain,
        };
        let t = self.temp_partition(query_id)?;
        Ok(self.store.put(t, &value)?)
    }

    pub fn reveal(&mut self, fid: Fid) -> Result<ClientEnvelope, ProxyError> {
        let v = self.store.get(fid)?.ok_or(ProxyError::NotLive(fid))?;
        self.stats.envelope_seals += 1;
        Ok(self.cipher.seal(&v, &mut self.rng))
    }

    pub fn exec_operator(
        &mut self,
        query_id: u64,
        req: &OperatorRequest,
    ) -> Result<OperatorResponse, ProxyError> {
        self.stats.operator_calls += 1;
        let mut args = Vec::with_capacity(req.operands.len());
        for &f in &req.operands {
            args.push(self.store.get(f)?.ok_or(ProxyError::NotLive(f))?);
        }
        match ops::evaluate(req.op, req.value_type, &args)? {
            Computed::Bool(b) => Ok(OperatorResponse::PlainBool(b)),
            Computed::Value(v) => {
                let t = self.temp_partition(query_id)?;
                Ok(OperatorResponse::NewFid(self.store.put(t, &v)?))
            }
        }
    }

    /// Runs each request in order; a failing element does not stop the rest.
    pub fn exec_batch(
        &mut self,
        query_id: u64,
        reqs: &[OperatorRequest],
    ) -> Vec<Result<OperatorResponse, ProxyError>> {
        reqs.iter()
            .map(|r| self.exec_operator(query_id, r))
            .collect()
    }

    pub fn promote(&mut self, temp_fid: Fid, partition: u32) -> Result<Fid, ProxyError> {
        Ok(self.store.promote(temp_fid, partition)?)
    }

    pub fn delete(&mut self, fid: Fid) -> Result<(), ProxyError> {
        Ok(self.store.delete(fid)?)
    }

    pub fn flush_log(&mut self) -> Result<u64, ProxyError> {
        Ok(self.store.flush_log()?)
    }

    /// Drops the query's intermediates. Idempotent.
    pub fn end_query(&mut self, query_id: u64) -> u64 {
        let Some(p) = self.queries.remove(&query_id) else {
            return 0;
        };
        let n = self.store.drop_temporary(p).unwrap_or(0);
        self.idle_temps.push(p);
        n
    }

    pub fn drop_all_queries(&mut self) -> u64 {
        let mut ids: Vec<u64> = self.queries.keys().copied().collect();
        ids.sort_unstable();
        ids.into_iter().map(|q| self.end_query(q)).sum()
    }

    pub fn active_queries(&self) -> usize {
        self.queries.len()
    }

    pub fn handle(&mut self, query_id: u64, req: Request) -> Response {
        self.stats.requests += 1;
        match req {
            Request::Ingest { pad_to, envelopes } => Response::Fids(
                envelopes
                    .iter()
                    .map(|e| self.ingest(query_id, e, pad_to))
                    .collect(),
            ),
            Request::Exec(reqs) => Response::Ops(self.exec_batch(query_id, &reqs)),
            Request::Promote { fids, partition } => {
                Response::Fids(fids.iter().map(|f| self.promote(*f, partition)).collect())
            }
            Request::Reveal(fids) => {
                Response::Envelopes(fids.iter().map(|f| self.reveal(*f)).collect())
            }
            Request::FlushLog => match self.flush_log() {
                Ok(lsn) => Response::Lsn(lsn),
                Err(e) => Response::Failed(e),
            },
            Request::Delete(fids) => Response::Done(fids.iter().map(|f| self.delete(*f)).collect()),
            Request::EndQuery => Response::Count(self.end_query(query_id)),
            Request::DropAllQueries => Response::Count(self.drop_all_queries()),
            Request::CreatePartition { kind, layout } => {
                match self.store.create_partition(kind, layout) {
                    Ok(id) => Response::Partition(id),
                    Err(e) => Response::Failed(e.into()),
                }
            }
            Request::Prefetch(p) => match self.store.prefetch_partition(p) {
                Ok(n) => Response::Count(n as u64),
                Err(e) => Response::Failed(e.into()),
            },
            Request::LiveFids(p) => match self.store.live_fids(p) {
                Ok(f) => Response::FidList(f),
                Err(e) => Response::Failed(e.into()),
            },
        }
    }
}
