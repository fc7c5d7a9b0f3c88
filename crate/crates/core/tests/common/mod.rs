//! Glue between the reference models and the crate: drivers that feed the
//! same calls to both and report the first disagreement.

#![allow(dead_code)]

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::sync::Arc;

use fidstore::dbms::{Cell, Column, ColumnType, Database, DbError};
use fidstore::fid::Fid;
use fidstore::proxy::envelope::unpad;
use fidstore::proxy::{EnvelopeCipher, OpKind};
use fidstore::sim::{Topology, TopologyConfig};
use fidstore::store::{
    CacheCapacity, MappingStore, PartitionKind, StoreConfig, StoreError, ValueLayout,
    DEFAULT_MAX_VALUE_LEN,
};
use fidstore::vfs::MemDisk;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;

use crate::oracles::{
    ModelCall, ModelOutcome, ModelStore, ShadowDb, ShadowOp, ShadowResult, ShadowTxn, Val,
};

// ---- mapping store ----

pub const FIXED_WIDTH: u32 = 8;

pub fn store_config(cache: CacheCapacity) -> StoreConfig {
    StoreConfig {
        cache,
        ..Default::default()
    }
}

pub fn apply_store(store: &mut MappingStore, call: &ModelCall) -> ModelOutcome {
    let done = |r: Result<(), StoreError>| match r {
        Ok(()) => ModelOutcome::Done,
        Err(_) => ModelOutcome::Rejected,
    };
    let fid = |r: Result<Fid, StoreError>| match r {
        Ok(f) => ModelOutcome::Fid(f.0),
        Err(_) => ModelOutcome::Rejected,
    };
    match call {
        ModelCall::Create { temporary, width } => {
            let kind = if *temporary {
                PartitionKind::Temporary
            } else {
                PartitionKind::Permanent
            };
            let layout = width.map_or(ValueLayout::VarLen, ValueLayout::FixedWidth);
            match store.create_partition(kind, layout) {
                Ok(id) => ModelOutcome::Created(id),
                Err(_) => ModelOutcome::Rejected,
            }
        }
        ModelCall::Put { partition, value } => fid(store.put(*partition, value)),
        ModelCall::Get { fid } => ModelOutcome::Value(store.get(Fid(*fid)).expect("get")),
        ModelCall::Delete { fid } => done(store.delete(Fid(*fid))),
        ModelCall::Promote { fid: f, partition } => fid(store.promote(Fid(*f), *partition)),
        ModelCall::DropTemporary { partition } => {
            done(store.drop_temporary(*partition).map(|_| ()))
        }
    }
}

/// Two permanent and two temporary partitions, one of each layout.
pub fn setup_calls() -> Vec<ModelCall> {
    vec![
        ModelCall::Create {
            temporary: false,
            width: Some(FIXED_WIDTH),
        },
        ModelCall::Create {
            temporary: false,
            width: None,
        },
        ModelCall::Create {
            temporary: true,
            width: Some(FIXED_WIDTH),
        },
        ModelCall::Create {
            temporary: true,
            width: None,
        },
    ]
}

const PERMANENT: [u32; 2] = [0, 1];
const TEMPORARY: [u32; 2] = [2, 3];

/// Random calls biased towards ones that succeed. Tracks issued FIDs from
/// outcomes, never from the store.
pub struct CallGen {
    pub rng: ChaCha20Rng,
    live: Vec<u64>,
    dead: Vec<u64>,
    pub with_drops: bool,
}

impl CallGen {
    pub fn new(seed: u64) -> Self {
        CallGen {
            rng: ChaCha20Rng::seed_from_u64(seed),
            live: Vec::new(),
            dead: Vec::new(),
            with_drops: true,
        }
    }

    pub fn value_for(&mut self, partition: u32) -> Vec<u8> {
        let len = if partition.is_multiple_of(2) {
            FIXED_WIDTH as usize
        } else if self.rng.gen_bool(0.02) {
            self.rng.gen_range(257..=DEFAULT_MAX_VALUE_LEN)
        } else {
            self.rng.gen_range(1..=256)
        };
        (0..len).map(|_| self.rng.gen()).collect()
    }

    fn pick_live(&mut self) -> Option<u64> {
        (!self.live.is_empty()).then(|| self.live[self.rng.gen_range(0..self.live.len())])
    }

    pub fn next(&mut self) -> ModelCall {
        let roll = self.rng.gen_range(0..100);
        let any_partition = |r: &mut ChaCha20Rng| r.gen_range(0..4u32);
        match roll {
            0..=39 => {
                let partition = any_partition(&mut self.rng);
                ModelCall::Put {
                    partition,
                    value: self.value_for(partition),
                }
            }
            40..=64 => match self.pick_live() {
                Some(fid) => ModelCall::Get { fid },
                None => ModelCall::Get { fid: 0 },
            },
            65..=79 => match self.pick_live() {
                Some(fid) => ModelCall::Delete { fid },
                None => ModelCall::Delete { fid: 0 },
            },
            80..=89 => {
                let temps: Vec<u64> = self
                    .live
                    .iter()
                    .copied()
                    .filter(|f| TEMPORARY.contains(&((f >> 48) as u32)))
                    .take(64)
                    .collect();
                let fid = if temps.is_empty() {
                    crate::oracles::raw_fid(TEMPORARY[0], 0)
                } else {
                    temps[self.rng.gen_range(0..temps.len())]
                };
                let partition = PERMANENT[self.rng.gen_range(0..2)];
                ModelCall::Promote { fid, partition }
            }
            90 if self.with_drops => ModelCall::DropTemporary {
                partition: TEMPORARY[self.rng.gen_range(0..2)],
            },
            91..=94 if !self.dead.is_empty() => {
                let fid = self.dead[self.rng.gen_range(0..self.dead.len())];
                if self.rng.gen() {
                    ModelCall::Get { fid }
                } else {
                    ModelCall::Delete { fid }
                }
            }
            95..=96 => {
                let partition = PERMANENT[0];
                ModelCall::Put {
                    partition,
                    value: vec![1; FIXED_WIDTH as usize + 1],
                }
            }
            _ => {
                let fid = crate::oracles::raw_fid(
                    self.rng.gen_range(0..6),
                    self.rng.gen_range(0..1 << 20),
                );
                ModelCall::Get { fid }
            }
        }
    }

    pub fn observe(&mut self, call: &ModelCall, out: &ModelOutcome) {
        match (call, out) {
            (ModelCall::Put { .. } | ModelCall::Promote { .. }, ModelOutcome::Fid(f)) => {
                self.dead.retain(|d| d != f);
                self.live.push(*f);
            }
            (ModelCall::Delete { fid }, ModelOutcome::Done) => {
                if let Some(i) = self.live.iter().position(|f| f == fid) {
                    self.live.swap_remove(i);
                }
                if self.dead.len() < 4096 {
                    self.dead.push(*fid);
                }
            }
            (ModelCall::DropTemporary { partition }, ModelOutcome::Done) => {
                self.live.retain(|f| (f >> 48) as u32 != *partition);
            }
            _ => {}
        }
    }
}

#[derive(Debug, Default)]
pub struct EquivalenceSummary {
    pub calls: u64,
    pub gets_compared: u64,
    pub reuse_checks: u64,
    pub mismatches: Vec<String>,
    pub reuse_violations: Vec<String>,
}

fn class_of(len: usize) -> usize {
    len.max(16).next_power_of_two()
}

/// Feeds `n` random calls to a fresh store and to [`ModelStore`]. After
/// some deletes it immediately puts a value of the deleted one's size class
/// into the same partition and checks that data bytes did not grow.
pub fn run_store_equivalence(seed: u64, n: u64, cache: CacheCapacity) -> EquivalenceSummary {
    let (mut store, _) =
        MappingStore::open(Arc::new(MemDisk::new()), store_config(cache)).expect("open");
    let mut model = ModelStore::new(DEFAULT_MAX_VALUE_LEN);
    let mut gen = CallGen::new(seed);
    let mut sum = EquivalenceSummary::default();
    let mut sizes: HashMap<u64, usize> = HashMap::new();

    let step = |call: ModelCall,
                store: &mut MappingStore,
                model: &mut ModelStore,
                gen: &mut CallGen,
                sum: &mut EquivalenceSummary| {
        let want = model.apply(call.clone());
        let got = apply_store(store, &call);
        sum.calls += 1;
        if matches!(call, ModelCall::Get { .. }) {
            sum.gets_compared += 1;
        }
        if want != got && sum.mismatches.len() < 8 {
            sum.mismatches.push(format!(
                "call {} {call:?}: model {want:?}, store {got:?}",
                sum.calls
            ));
        }
        gen.observe(&call, &want);
        want
    };

    for c in setup_calls() {
        step(c, &mut store, &mut model, &mut gen, &mut sum);
    }
    while sum.calls < n {
        let call = gen.next();
        let before = store.stats().bytes_data;
        let out = step(call.clone(), &mut store, &mut model, &mut gen, &mut sum);
        match (&call, &out) {
            (ModelCall::Put { value, .. }, ModelOutcome::Fid(f)) => {
                sizes.insert(*f, value.len());
            }
            (ModelCall::Promote { fid, .. }, ModelOutcome::Fid(f)) => {
                let len = sizes.get(fid).copied().unwrap_or(FIXED_WIDTH as usize);
                sizes.insert(*f, len);
            }
            (ModelCall::Delete { fid }, ModelOutcome::Done) if gen.rng.gen_bool(0.5) => {
                let partition = (fid >> 48) as u32;
                let len = sizes[fid];
                let value: Vec<u8> = (0..len).map(|i| i as u8 ^ 0x5c).collect();
                debug_assert_eq!(class_of(len), class_of(value.len()));
                let put = ModelCall::Put { partition, value };
                if let ModelOutcome::Fid(f) = step(put, &mut store, &mut model, &mut gen, &mut sum)
                {
                    sizes.insert(f, len);
                }
                sum.reuse_checks += 1;
                let after = store.stats().bytes_data;
                if after > before && sum.reuse_violations.len() < 8 {
                    sum.reuse_violations.push(format!(
                        "delete+put of {len} B in partition {partition}: {before} -> {after}"
                    ));
                }
            }
            _ => {}
        }
    }
    sum
}

// ---- tables ----

pub const SALARY: usize = 1;
pub const NOTE: usize = 2;

#[derive(Debug, Default)]
pub struct ShadowSummary {
    pub ops: u64,
    pub compared: u64,
    pub reveals: u64,
    pub conflicts: u64,
    pub commits: u64,
    pub mismatches: Vec<String>,
    pub final_rows: usize,
    pub final_equal: bool,
}

struct Driver {
    topo: Topology,
    client: EnvelopeCipher,
    rng: ChaCha20Rng,
    table: u32,
    shadow: ShadowDb,
    txns: BTreeMap<ShadowTxn, u64>,
    sum: ShadowSummary,
}

fn shadow_of(r: &Result<(), DbError>) -> ShadowResult {
    match r {
        Ok(()) => ShadowResult::Done,
        Err(DbError::RowNotVisible(_)) => ShadowResult::NotVisible,
        Err(DbError::WriteConflict(_)) => ShadowResult::Conflict,
        Err(DbError::TxnNotActive(_)) => ShadowResult::NotActive,
        Err(e) => panic!("unexpected engine error: {e}"),
    }
}

impl Driver {
    fn db(&mut self) -> &mut Database {
        self.topo.db().expect("no crashes in this run")
    }

    fn check(&mut self, what: &str, want: &ShadowResult, got: &ShadowResult) {
        self.sum.compared += 1;
        if want != got && self.sum.mismatches.len() < 8 {
            self.sum.mismatches.push(format!(
                "op {} {what}: shadow {want:?}, engine {got:?}",
                self.sum.ops
            ));
        }
    }

    fn open(&self, env: &fidstore::proxy::ClientEnvelope) -> Vec<u8> {
        self.client
            .open(env)
            .expect("envelope from the privacy zone")
    }

    fn fid_of(&mut self, txn: u64, ty: ColumnType, v: &[u8]) -> Fid {
        let env = self.client.seal(v, &mut self.rng);
        self.db().ingest(txn, ty, vec![env]).expect("ingest")[0]
    }

    fn reveal_row(&mut self, txn: u64, cells: &[Cell]) -> Vec<Val> {
        let Cell::Int(id) = cells[0] else {
            panic!("id is plain")
        };
        let fids = vec![cells[SALARY].fid().unwrap(), cells[NOTE].fid().unwrap()];
        let envs = self.db().reveal(txn, fids).expect("reveal");
        self.sum.reveals += 1;
        let salary = i64::from_le_bytes(self.open(&envs[0]).try_into().unwrap());
        let note = self.open(&envs[1]);
        let note = unpad(&note).map_or(note.clone(), <[u8]>::to_vec);
        vec![Val::Int(id), Val::Int(salary), Val::Bytes(note)]
    }

    fn note(&mut self) -> Vec<u8> {
        let len = self.rng.gen_range(1..=40);
        (0..len).map(|_| self.rng.gen_range(b'a'..=b'z')).collect()
    }

    fn begin(&mut self) {
        let ShadowResult::Began(s) = self.shadow.apply(ShadowOp::Begin) else {
            unreachable!()
        };
        let t = self.db().begin().expect("begin");
        self.txns.insert(s, t);
    }

    fn step(&mut self) {
        self.sum.ops += 1;
        if self.txns.is_empty() || (self.txns.len() < 4 && self.rng.gen_bool(0.15)) {
            self.begin();
            return;
        }
        let keys: Vec<ShadowTxn> = self.txns.keys().copied().collect();
        let s = keys[self.rng.gen_range(0..keys.len())];
        let t = self.txns[&s];
        let table = self.table;
        let rows = self.shadow.committed(0).len() as u64 + 8;
        let row = self.rng.gen_range(0..rows + rows / 4);
        match self.rng.gen_range(0..100) {
            0..=14 => {
                let id = self.rng.gen_range(0..1000i64);
                let salary = self.rng.gen_range(0..10_000i64);
                let note = self.note();
                let want = self.shadow.apply(ShadowOp::Insert {
                    txn: s,
                    table: 0,
                    values: vec![Val::Int(id), Val::Int(salary), Val::Bytes(note.clone())],
                });
                let sf = self.fid_of(t, ColumnType::SensitiveInt, &salary.to_le_bytes());
                let nf = self.fid_of(t, ColumnType::SensitiveBytes, &note);
                let r = self
                    .db()
                    .insert_row(t, table, vec![Cell::Int(id), Cell::Fid(sf), Cell::Fid(nf)])
                    .expect("insert");
                self.check("insert", &want, &ShadowResult::Row(r));
            }
            15..=34 => {
                let (col, ty, bytes, val) = if self.rng.gen() {
                    let v = self.rng.gen_range(0..10_000i64);
                    (
                        SALARY,
                        ColumnType::SensitiveInt,
                        v.to_le_bytes().to_vec(),
                        Val::Int(v),
                    )
                } else {
                    let n = self.note();
                    (NOTE, ColumnType::SensitiveBytes, n.clone(), Val::Bytes(n))
                };
                let want = self.shadow.apply(ShadowOp::Update {
                    txn: s,
                    table: 0,
                    row,
                    col,
                    value: val,
                });
                let f = self.fid_of(t, ty, &bytes);
                let got = shadow_of(&self.db().update_row(
                    t,
                    table,
                    row,
                    vec![(col, Cell::Fid(f))],
                ));
                self.check("update", &want, &got);
                if want == ShadowResult::Conflict {
                    self.sum.conflicts += 1;
                    self.txns.remove(&s);
                }
            }
            35..=44 => {
                let want = self.shadow.apply(ShadowOp::Delete {
                    txn: s,
                    table: 0,
                    row,
                });
                let got = shadow_of(&self.db().delete_row(t, table, row));
                self.check("delete", &want, &got);
                if want == ShadowResult::Conflict {
                    self.sum.conflicts += 1;
                    self.txns.remove(&s);
                }
            }
            45..=64 => {
                let want = self.shadow.apply(ShadowOp::Read {
                    txn: s,
                    table: 0,
                    row,
                });
                let got = self
                    .db()
                    .read_row(t, table, row)
                    .expect("read")
                    .map(|cells| self.reveal_row(t, &cells));
                self.check("read", &want, &ShadowResult::Value(got));
            }
            65..=71 => {
                let want = self.shadow.apply(ShadowOp::Sum {
                    txn: s,
                    table: 0,
                    col: SALARY,
                });
                let f = self.db().sum(t, table, SALARY).expect("sum");
                let env = self.db().reveal(t, vec![f]).expect("reveal sum");
                self.sum.reveals += 1;
                let v = i64::from_le_bytes(self.open(&env[0]).try_into().unwrap());
                self.check("sum", &want, &ShadowResult::Sum(v));
            }
            72..=78 => {
                let constant = self.rng.gen_range(0..10_000i64);
                let want = self.shadow.apply(ShadowOp::SelectGt {
                    txn: s,
                    table: 0,
                    col: SALARY,
                    constant,
                });
                let c = self.fid_of(t, ColumnType::SensitiveInt, &constant.to_le_bytes());
                let got = self
                    .db()
                    .select_where(t, table, SALARY, OpKind::CmpGt, c)
                    .expect("select");
                self.check("select", &want, &ShadowResult::Rows(got));
            }
            79..=95 => {
                let want = self.shadow.apply(ShadowOp::Commit { txn: s });
                let got = shadow_of(&self.db().commit(t));
                self.check("commit", &want, &got);
                self.sum.commits += 1;
                self.txns.remove(&s);
            }
            _ => {
                self.shadow.apply(ShadowOp::Abort { txn: s });
                self.db().abort(t);
                self.txns.remove(&s);
            }
        }
    }

    fn maintain(&mut self) {
        let db = self.db();
        db.vacuum_all().expect("vacuum");
        db.orphan_gc().expect("orphan gc");
    }
}

/// Runs `n` random transactional statements over one `emp` table against
/// both the two-zone engine and [`ShadowDb`], then compares the final
/// committed tables.
pub fn run_shadow_equivalence(seed: u64, n: u64) -> ShadowSummary {
    let topo = Topology::new(TopologyConfig::default()).expect("topology");
    let client = EnvelopeCipher::new(&topo.config().proxy.client_key);
    let mut d = Driver {
        topo,
        client,
        rng: ChaCha20Rng::seed_from_u64(seed),
        table: 0,
        shadow: ShadowDb::default(),
        txns: BTreeMap::new(),
        sum: ShadowSummary::default(),
    };
    d.table = d
        .db()
        .create_table(
            "emp",
            vec![
                Column::new("id", ColumnType::PlainInt),
                Column::new("salary", ColumnType::SensitiveInt),
                Column::new("note", ColumnType::SensitiveBytes),
            ],
        )
        .expect("create");
    d.shadow.apply(ShadowOp::CreateTable);
    while d.sum.ops < n {
        d.step();
        if d.sum.ops.is_multiple_of(500) && d.txns.is_empty() {
            d.maintain();
        }
    }
    for (s, t) in std::mem::take(&mut d.txns) {
        d.shadow.apply(ShadowOp::Commit { txn: s });
        d.db().commit(t).expect("final commit");
    }
    d.maintain();

    let want = d.shadow.committed(0);
    let table = d.table;
    let rows = d.db().committed_rows(table).expect("committed rows");
    let t = d.db().begin().expect("begin");
    let mut got = BTreeMap::new();
    for (r, cells) in rows {
        got.insert(r, d.reveal_row(t, &cells));
    }
    d.db().commit(t).expect("commit");
    d.sum.final_rows = got.len();
    d.sum.final_equal = got == want;
    if !d.sum.final_equal {
        let keys: BTreeSet<_> = got.keys().chain(want.keys()).collect();
        let diff = keys
            .into_iter()
            .filter(|k| got.get(k) != want.get(k))
            .count();
        d.sum
            .mismatches
            .push(format!("final state differs on {diff} rows"));
    }
    d.sum
}

// ---- crash recovery ----

#[derive(Debug, Clone)]
pub enum Step {
    Call(ModelCall),
    Flush,
}

/// Setup calls followed by `n` random calls, with a log flush after every
/// few. FIDs are chosen from the model's outcomes.
pub fn crash_plan(seed: u64, n: usize) -> Vec<Step> {
    let mut model = ModelStore::new(DEFAULT_MAX_VALUE_LEN);
    let mut gen = CallGen::new(seed);
    let mut out = Vec::with_capacity(n + n / 4);
    for c in setup_calls() {
        model.apply(c.clone());
        out.push(Step::Call(c));
    }
    let mut until_flush = gen.rng.gen_range(1..20);
    for _ in 0..n {
        let c = gen.next();
        let o = model.apply(c.clone());
        gen.observe(&c, &o);
        out.push(Step::Call(c));
        until_flush -= 1;
        if until_flush == 0 {
            out.push(Step::Flush);
            until_flush = gen.rng.gen_range(1..20);
        }
    }
    out
}

pub fn plan_calls(plan: &[Step]) -> Vec<ModelCall> {
    plan.iter()
        .filter_map(|s| match s {
            Step::Call(c) => Some(c.clone()),
            Step::Flush => None,
        })
        .collect()
}

pub fn crash_store_config() -> StoreConfig {
    StoreConfig {
        cache: CacheCapacity::Blocks(4),
        wal_size_bound: 8 << 10,
        ..Default::default()
    }
}

#[derive(Debug, Default)]
pub struct Execution {
    /// Calls issued, including one cut short by the crash.
    pub issued: usize,
    /// Calls issued before the last flush that returned.
    pub acknowledged: usize,
    pub tripped: bool,
    pub divergence: Option<String>,
}

/// Runs `plan` until the disk trips, checking every outcome against the
/// model while the disk is healthy.
pub fn execute(store: &mut MappingStore, disk: &MemDisk, plan: &[Step]) -> Execution {
    let mut model = ModelStore::new(DEFAULT_MAX_VALUE_LEN);
    let mut ex = Execution::default();
    for step in plan {
        match step {
            Step::Call(c) => {
                ex.issued += 1;
                let got = apply_store(store, c);
                if disk.tripped() {
                    ex.tripped = true;
                    return ex;
                }
                let want = model.apply(c.clone());
                if want != got && ex.divergence.is_none() {
                    ex.divergence = Some(format!(
                        "call {}: {c:?}: model {want:?}, store {got:?}",
                        ex.issued
                    ));
                }
            }
            Step::Flush => {
                let r = store.flush_log();
                if disk.tripped() {
                    ex.tripped = true;
                    return ex;
                }
                r.expect("flush on a healthy disk");
                ex.acknowledged = ex.issued;
            }
        }
    }
    ex
}

pub fn durable_state(store: &mut MappingStore) -> crate::oracles::DurableState {
    let ids = store
        .partitions()
        .into_iter()
        .filter(|p| p.kind == PartitionKind::Permanent)
        .map(|p| p.id)
        .collect();
    let values = store
        .snapshot()
        .expect("snapshot")
        .into_iter()
        .map(|(f, v)| (f.0, v))
        .collect();
    (ids, values)
}

#[derive(Debug)]
pub struct CrashRun {
    pub seed: u64,
    pub budget: u64,
    pub fired: bool,
    pub lo: usize,
    pub hi: usize,
    /// Prefix lengths in `lo..=hi` whose model state equals the recovered one.
    pub matches: Vec<usize>,
    pub idempotent: bool,
    pub divergence: Option<String>,
}

impl CrashRun {
    pub fn ok(&self) -> bool {
        self.fired && !self.matches.is_empty() && self.idempotent && self.divergence.is_none()
    }
}

/// One randomized run: measure the bytes a clean run syncs, tear the sync
/// at a random byte inside that range, recover from what is durable, and
/// compare with every admissible prefix of the model.
pub fn run_crash_recovery(seed: u64, n: usize) -> CrashRun {
    let plan = crash_plan(seed, n);
    let calls = plan_calls(&plan);
    let states = crate::oracles::prefix_states(DEFAULT_MAX_VALUE_LEN, &calls);

    let dry = MemDisk::new();
    let (mut store, _) =
        MappingStore::open(Arc::new(dry.clone()), crash_store_config()).expect("open");
    let base = dry.synced_bytes();
    execute(&mut store, &dry, &plan);
    let total = dry.synced_bytes() - base;
    drop(store);

    let mut rng = ChaCha20Rng::seed_from_u64(seed ^ 0x70f7);
    let budget = rng.gen_range(1..total.max(2));
    let disk = MemDisk::new();
    let (mut store, _) =
        MappingStore::open(Arc::new(disk.clone()), crash_store_config()).expect("open");
    disk.arm_torn_sync(budget);
    let ex = execute(&mut store, &disk, &plan);
    drop(store);

    let after = disk.fork_durable();
    let (mut first, _) =
        MappingStore::open(Arc::new(after.clone()), crash_store_config()).expect("recover");
    let got = durable_state(&mut first);
    drop(first);
    let (mut second, rep) =
        MappingStore::open(Arc::new(after.clone()), crash_store_config()).expect("recover again");
    let again = durable_state(&mut second);

    CrashRun {
        seed,
        budget,
        fired: ex.tripped,
        lo: ex.acknowledged,
        hi: ex.issued,
        matches: crate::oracles::matching_prefixes(&states, ex.acknowledged, ex.issued, &got),
        idempotent: got == again && rep.torn_bytes_discarded == 0,
        divergence: ex.divergence,
    }
}
