use super::*;
use crate::proxy::{EnvelopeCipher, ProxyConfig};
use crate::vfs::{Disk, MemDisk};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

struct Fixture {
    db: Database,
    proxy: Arc<Mutex<Proxy>>,
    client: EnvelopeCipher,
    rng: ChaCha20Rng,
    db_disk: MemDisk,
    priv_disk: MemDisk,
}

fn fixture() -> Fixture {
    let priv_disk = MemDisk::new();
    let db_disk = MemDisk::new();
    let cfg = ProxyConfig::default();
    let client = EnvelopeCipher::new(&cfg.client_key);
    let (p, _) = Proxy::open(Arc::new(priv_disk.clone()), cfg).unwrap();
    let proxy = Arc::new(Mutex::new(p));
    let (db, _) = Database::open(
        Arc::new(db_disk.clone()),
        Box::new(proxy.clone()),
        Box::new(NoHooks),
        DbConfig::default(),
    )
    .unwrap();
    Fixture {
        db,
        proxy,
        client,
        rng: ChaCha20Rng::seed_from_u64(1),
        db_disk,
        priv_disk,
    }
}

impl Fixture {
    fn emp(&mut self) -> TableId {
        self.db
            .create_table(
                "emp",
                vec![
                    Column::new("id", ColumnType::PlainInt),
                    Column::new("salary", ColumnType::SensitiveInt),
                    Column::new("age", ColumnType::SensitiveInt),
                ],
            )
            .unwrap()
    }

    fn ints(&mut self, txn: TxnId, vals: &[i64]) -> Vec<Fid> {
        let envs = vals
            .iter()
            .map(|v| self.client.seal(&v.to_le_bytes(), &mut self.rng))
            .collect();
        self.db.ingest(txn, ColumnType::SensitiveInt, envs).unwrap()
    }

    fn insert(&mut self, txn: TxnId, t: TableId, id: i64, salary: i64, age: i64) -> RowId {
        let f = self.ints(txn, &[salary, age]);
        self.db
            .insert_row(
                txn,
                t,
                vec![Cell::Int(id), Cell::Fid(f[0]), Cell::Fid(f[1])],
            )
            .unwrap()
    }

    fn reveal_int(&mut self, txn: TxnId, f: Fid) -> i64 {
        let e = self.db.reveal(txn, vec![f]).unwrap();
        let v = self.client.open(&e[0]).unwrap();
        i64::from_le_bytes(v.try_into().unwrap())
    }

    fn salary(&mut self, txn: TxnId, t: TableId, row: RowId) -> Option<i64> {
        let cells = self.db.read_row(txn, t, row).unwrap()?;
        Some(self.reveal_int(txn, cells[1].fid().unwrap()))
    }

    fn live(&self, f: Fid) -> bool {
        self.proxy.lock().store().is_live(f)
    }

    fn reopen_db(&mut self) -> DbOpenReport {
        let (db, rep) = Database::open(
            Arc::new(self.db_disk.clone()),
            Box::new(self.proxy.clone()),
            Box::new(NoHooks),
            DbConfig::default(),
        )
        .unwrap();
        self.db = db;
        rep
    }
}

#[test]
fn begin_ids_and_snapshots() {
    let mut fx = fixture();
    let t = fx.emp();
    let a = fx.db.begin().unwrap();
    let b = fx.db.begin().unwrap();
    assert_ne!(a, b);
    let r = fx.insert(a, t, 1, 10, 20);
    assert_eq!(fx.db.read_row(b, t, r).unwrap(), None);
    assert!(fx.db.read_row(a, t, r).unwrap().is_some());
    fx.db.commit(a).unwrap();
    // b's snapshot predates a's commit.
    assert_eq!(fx.db.read_row(b, t, r).unwrap(), None);
    let c = fx.db.begin().unwrap();
    assert_eq!(fx.salary(c, t, r), Some(10));
}

#[test]
fn insert_promotes_each_sensitive_field() {
    let mut fx = fixture();
    let t = fx.emp();
    let txn = fx.db.begin().unwrap();
    let f = fx.ints(txn, &[1, 2]);
    let before = fx.proxy.lock().store().stats().promotes;
    fx.db
        .insert_row(txn, t, vec![Cell::Int(0), Cell::Fid(f[0]), Cell::Fid(f[1])])
        .unwrap();
    assert_eq!(fx.proxy.lock().store().stats().promotes - before, 2);
}

#[test]
fn plain_rows_never_reach_the_privacy_zone() {
    let mut fx = fixture();
    let t = fx
        .db
        .create_table("plain", vec![Column::new("x", ColumnType::PlainInt)])
        .unwrap();
    let before = fx.db.link_calls();
    let txn = fx.db.begin().unwrap();
    fx.db.insert_row(txn, t, vec![Cell::Int(5)]).unwrap();
    fx.db.commit(txn).unwrap();
    assert_eq!(fx.db.link_calls(), before);
}

#[test]
fn schema_is_enforced() {
    let mut fx = fixture();
    let t = fx.emp();
    let txn = fx.db.begin().unwrap();
    assert!(matches!(
        fx.db
            .insert_row(txn, t, vec![Cell::Int(1), Cell::Int(2), Cell::Null]),
        Err(DbError::SchemaMismatch(_))
    ));
    assert!(matches!(
        fx.db.insert_row(txn, t, vec![Cell::Int(1)]),
        Err(DbError::SchemaMismatch(_))
    ));
    // Validation errors leave the transaction usable.
    assert_eq!(fx.db.txn_state(txn), Some(TxnState::Active));
}

#[test]
fn update_abort_restores_and_commit_defers_reclaim() {
    let mut fx = fixture();
    let t = fx.emp();
    let t0 = fx.db.begin().unwrap();
    let r = fx.insert(t0, t, 1, 100, 30);
    fx.db.commit(t0).unwrap();
    let old = fx.db.committed_rows(t).unwrap()[0].1[1].fid().unwrap();

    let t1 = fx.db.begin().unwrap();
    let nf = fx.ints(t1, &[200]);
    fx.db
        .update_row(t1, t, r, vec![(1, Cell::Fid(nf[0]))])
        .unwrap();
    assert_eq!(fx.salary(t1, t, r), Some(200));
    fx.db.abort(t1);
    let t2 = fx.db.begin().unwrap();
    assert_eq!(fx.salary(t2, t, r), Some(100));
    fx.db.commit(t2).unwrap();

    let t3 = fx.db.begin().unwrap();
    let nf = fx.ints(t3, &[300]);
    fx.db
        .update_row(t3, t, r, vec![(1, Cell::Fid(nf[0]))])
        .unwrap();
    fx.db.commit(t3).unwrap();
    let t4 = fx.db.begin().unwrap();
    assert_eq!(fx.salary(t4, t, r), Some(300));
    fx.db.commit(t4).unwrap();
    assert!(fx.live(old));
    // The aborted update's FID and the superseded salary go; age is shared.
    assert_eq!(fx.db.vacuum(t).unwrap(), 2);
    assert!(!fx.live(old));
    assert_eq!(fx.db.version_count(t), 1);
}

#[test]
fn first_updater_wins() {
    let mut fx = fixture();
    let t = fx.emp();
    let t0 = fx.db.begin().unwrap();
    let r = fx.insert(t0, t, 1, 1, 1);
    fx.db.commit(t0).unwrap();
    let a = fx.db.begin().unwrap();
    let b = fx.db.begin().unwrap();
    fx.db.update_row(a, t, r, vec![(0, Cell::Int(7))]).unwrap();
    assert!(matches!(
        fx.db.update_row(b, t, r, vec![(0, Cell::Int(8))]),
        Err(DbError::WriteConflict(_))
    ));
    assert_eq!(fx.db.txn_state(b), Some(TxnState::Aborted));
    fx.db.commit(a).unwrap();
    // A snapshot older than a's commit also conflicts.
    let c = fx.db.begin().unwrap();
    let d = fx.db.begin().unwrap();
    fx.db.delete_row(c, t, r).unwrap();
    fx.db.commit(c).unwrap();
    assert!(matches!(
        fx.db.delete_row(d, t, r),
        Err(DbError::WriteConflict(_))
    ));
    let e = fx.db.begin().unwrap();
    assert!(matches!(
        fx.db.delete_row(e, t, r),
        Err(DbError::RowNotVisible(_))
    ));
}

#[test]
fn k_updates_then_vacuum_deletes_k_old_fids() {
    let mut fx = fixture();
    let t = fx
        .db
        .create_table("k", vec![Column::new("v", ColumnType::SensitiveInt)])
        .unwrap();
    let t0 = fx.db.begin().unwrap();
    let f = fx.ints(t0, &[0]);
    let r = fx.db.insert_row(t0, t, vec![Cell::Fid(f[0])]).unwrap();
    fx.db.commit(t0).unwrap();
    for k in 1..=5 {
        let tx = fx.db.begin().unwrap();
        let f = fx.ints(tx, &[k]);
        fx.db
            .update_row(tx, t, r, vec![(0, Cell::Fid(f[0]))])
            .unwrap();
        fx.db.commit(tx).unwrap();
    }
    assert_eq!(fx.db.vacuum(t).unwrap(), 5);
    let p = fx.db.table_def(t).unwrap().partition.unwrap();
    let live: BTreeSet<Fid> = fx
        .proxy
        .lock()
        .store()
        .live_fids(p)
        .unwrap()
        .into_iter()
        .collect();
    let referenced: BTreeSet<Fid> = fx.db.committed_fids().into_iter().map(|x| x.2).collect();
    assert_eq!(live, referenced);
}

#[test]
fn vacuum_respects_old_snapshots() {
    let mut fx = fixture();
    let t = fx.emp();
    let t0 = fx.db.begin().unwrap();
    let r = fx.insert(t0, t, 1, 5, 5);
    fx.db.commit(t0).unwrap();
    let reader = fx.db.begin().unwrap();
    let w = fx.db.begin().unwrap();
    let f = fx.ints(w, &[6]);
    fx.db
        .update_row(w, t, r, vec![(1, Cell::Fid(f[0]))])
        .unwrap();
    fx.db.commit(w).unwrap();
    assert_eq!(fx.db.vacuum(t).unwrap(), 0);
    assert_eq!(fx.salary(reader, t, r), Some(5));
    fx.db.commit(reader).unwrap();
    assert_eq!(fx.db.vacuum(t).unwrap(), 1);
}

#[test]
fn sum_matches_closed_form_sequential_and_batched() {
    let mut fx = fixture();
    let t = fx.emp();
    let tx = fx.db.begin().unwrap();
    let empty = fx.db.sum(tx, t, 1).unwrap();
    assert_eq!(fx.reveal_int(tx, empty), 0);
    for i in 1..=1000 {
        fx.insert(tx, t, i, i, 0);
    }
    fx.db.commit(tx).unwrap();
    for batch in [1, 7, 256, 5000] {
        fx.db.set_batch_size(batch);
        let tx = fx.db.begin().unwrap();
        let s = fx.db.sum(tx, t, 1).unwrap();
        assert_eq!(fx.reveal_int(tx, s), 500_500, "batch {batch}");
        fx.db.commit(tx).unwrap();
    }
}

#[test]
fn select_matches_plaintext_filter() {
    let mut fx = fixture();
    let t = fx.emp();
    let ages = [17, 42, 30, 65, 30, 8];
    let tx = fx.db.begin().unwrap();
    let rows: Vec<_> = ages.iter().map(|&a| fx.insert(tx, t, 0, 0, a)).collect();
    let c = fx.ints(tx, &[30])[0];
    let hits = fx.db.select_where(tx, t, 2, OpKind::CmpGt, c).unwrap();
    let want: Vec<_> = rows
        .iter()
        .zip(ages)
        .filter(|(_, a)| *a > 30)
        .map(|(r, _)| *r)
        .collect();
    assert_eq!(hits, want);
    let eq = fx.db.select_where(tx, t, 2, OpKind::CmpEq, c).unwrap();
    assert_eq!(eq, vec![rows[2], rows[4]]);
}

#[test]
fn recovery_keeps_committed_and_drops_uncommitted() {
    let mut fx = fixture();
    let t = fx.emp();
    let a = fx.db.begin().unwrap();
    let ra = fx.insert(a, t, 1, 11, 1);
    fx.db.commit(a).unwrap();
    let b = fx.db.begin().unwrap();
    fx.insert(b, t, 2, 22, 2);
    let max_before = b;
    fx.db_disk.crash();
    let rep = fx.reopen_db();
    assert_eq!(rep.committed_txns, 1);
    assert_eq!(rep.tables, 1);
    let c = fx.db.begin().unwrap();
    assert!(c > max_before);
    let rows = fx.db.scan(c, t).unwrap();
    assert_eq!(rows.len(), 1);
    assert_eq!(rows[0].0, ra);
    assert_eq!(fx.salary(c, t, ra), Some(11));
    fx.db.commit(c).unwrap();
    // b's promoted secrets are orphans.
    assert_eq!(fx.db.orphan_gc().unwrap(), 2);
    assert_eq!(fx.db.orphan_gc().unwrap(), 0);
}

#[test]
fn commit_orders_privacy_flush_before_db_commit() {
    let mut fx = fixture();
    let t = fx.emp();
    for i in 0..3 {
        let tx = fx.db.begin().unwrap();
        fx.insert(tx, t, i, i, i);
        fx.db.commit(tx).unwrap();
    }
    let ev = fx.db.events();
    for w in ev.chunks(2) {
        match w {
            [ProtocolEvent::PrivacyFlushed(a), ProtocolEvent::DbCommitDurable(b)] => {
                assert_eq!(a, b)
            }
            other => panic!("unexpected {other:?}"),
        }
    }
    assert!(fx.priv_disk.sync_count() > 0);
}

#[test]
fn orphan_gc_needs_quiescence() {
    let mut fx = fixture();
    fx.emp();
    let _tx = fx.db.begin().unwrap();
    assert!(matches!(fx.db.orphan_gc(), Err(DbError::NotQuiescent)));
}

#[test]
fn padded_bytes_column() {
    let mut fx = fixture();
    let t = fx
        .db
        .create_table("c", vec![Column::new("note", ColumnType::SensitiveBytes)])
        .unwrap();
    assert_eq!(
        fx.db.table_def(t).unwrap().layout,
        crate::store::ValueLayout::FixedWidth(128)
    );
    let tx = fx.db.begin().unwrap();
    let env = fx.client.seal(b"short", &mut fx.rng);
    let f = fx
        .db
        .ingest(tx, ColumnType::SensitiveBytes, vec![env])
        .unwrap();
    let r = fx.db.insert_row(tx, t, vec![Cell::Fid(f[0])]).unwrap();
    fx.db.commit(tx).unwrap();
    let tx = fx.db.begin().unwrap();
    let cell = fx.db.read_row(tx, t, r).unwrap().unwrap()[0].fid().unwrap();
    let v = fx
        .client
        .open(&fx.db.reveal(tx, vec![cell]).unwrap()[0])
        .unwrap();
    assert_eq!(v.len(), 128);
    assert_eq!(crate::proxy::envelope::unpad(&v).unwrap(), b"short");
}

#[test]
fn privacy_restart_purges_aborted_versions_without_deletes() {
    let mut fx = fixture();
    let t = fx.emp();
    let a = fx.db.begin().unwrap();
    fx.insert(a, t, 1, 1, 1);
    fx.db.abort(a);
    let b = fx.db.begin().unwrap();
    fx.insert(b, t, 2, 2, 2);
    assert_eq!(fx.db.version_count(t), 2);
    let deletes = fx.proxy.lock().store().stats().deletes;
    assert_eq!(fx.db.handle_privacy_restart(), 2);
    assert_eq!(fx.db.txn_state(b), Some(TxnState::Aborted));
    assert_eq!(fx.db.version_count(t), 0);
    assert_eq!(fx.proxy.lock().store().stats().deletes, deletes);
}
