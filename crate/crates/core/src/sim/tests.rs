use super::script::{run_script, trace_indistinguishability, ScriptOp, ScriptResult};
use super::workload::{run_with, BackendKind, FidBackend, Mode, WorkloadSpec};
use super::*;
use crate::dbms::{Cell, Column, ColumnType};
use crate::proxy::EnvelopeCipher;
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn small(mode: Mode, seed: u64) -> WorkloadSpec {
    WorkloadSpec {
        mode,
        rows_per_table: 200,
        duration_ops: 600,
        threads_simulated: 3,
        maintenance_every: 150,
        seed,
        ..Default::default()
    }
}

#[test]
fn recover_without_crash_is_an_error() {
    let mut t = Topology::new(TopologyConfig::default()).unwrap();
    assert!(matches!(t.recover_all(), Err(SimError::NoCrashPending)));
}

#[test]
fn same_seed_same_trace() {
    let spec = small(Mode::ReadWrite, 3);
    let run = || {
        let cfg = TopologyConfig {
            trace: true,
            ..Default::default()
        };
        let mut b = FidBackend::new(cfg, spec.seed).unwrap();
        let r = super::workload::run_workload(&spec, &mut b, None).unwrap();
        (r, b.take_trace())
    };
    let (ra, ta) = run();
    let (rb, tb) = run();
    assert!(!ta.is_empty());
    assert_eq!(ta.to_jsonl(), tb.to_jsonl());
    assert_eq!(ra.counters, rb.counters);
    assert_eq!(ra.model_mismatches, 0);
}

#[test]
fn every_crash_point_recovers_consistently() {
    let ids = [
        CrashId::BeforePrivacyFlush,
        CrashId::AfterPrivacyFlushBeforeDbCommit,
        CrashId::AfterDbCommit,
        CrashId::DuringVacuum,
        CrashId::DuringOrphanGc,
        CrashId::RandomByte(3000),
    ];
    for id in ids {
        for target in CrashTarget::ALL {
            let spec = small(Mode::ReadWrite, 11);
            let occ = if id.site().is_some_and(|s| s.is_maintenance()) {
                2
            } else {
                20
            };
            let r = run_with(
                &spec,
                BackendKind::Fid,
                Some((CrashPoint { id, target }, occ)),
            )
            .unwrap();
            let tag = format!("{} {target:?}", id.name());
            assert_eq!(r.crashed.map(|p| p.id), Some(id), "{tag}: did not fire");
            assert_eq!(r.recoveries.len(), 1, "{tag}");
            assert_eq!(r.violations(), 0, "{tag}");
            assert_eq!(r.model_mismatches, 0, "{tag}");
            assert_eq!(r.errors, 0, "{tag}: {:?}", r.first_error);
            assert_eq!(r.post_gc_invariant.as_ref().unwrap().orphans, 0, "{tag}");
        }
    }
}

#[test]
fn crash_between_flush_and_commit_leaves_orphans() {
    let spec = small(Mode::WriteOnly, 5);
    let p = CrashPoint {
        id: CrashId::AfterPrivacyFlushBeforeDbCommit,
        target: CrashTarget::IntegrityZone,
    };
    let r = run_with(&spec, BackendKind::Fid, Some((p, 10))).unwrap();
    assert!(r.recoveries[0].invariant.orphans > 0);
    assert_eq!(r.post_gc_invariant.unwrap().orphans, 0);
}

#[test]
fn detector_flags_a_deleted_secret() {
    let mut t = Topology::new(TopologyConfig::default()).unwrap();
    let client = EnvelopeCipher::new(&t.config().proxy.client_key);
    let mut rng = ChaCha20Rng::seed_from_u64(1);
    let db = t.db().unwrap();
    let tab = db
        .create_table("t", vec![Column::new("v", ColumnType::SensitiveInt)])
        .unwrap();
    let txn = db.begin().unwrap();
    let f = db
        .ingest(
            txn,
            ColumnType::SensitiveInt,
            vec![client.seal(&5i64.to_le_bytes(), &mut rng)],
        )
        .unwrap()[0];
    db.insert_row(txn, tab, vec![Cell::Fid(f)]).unwrap();
    db.commit(txn).unwrap();
    assert!(t.check_invariant().unwrap().holds);
    let stored = t.db().unwrap().committed_fids()[0].2;
    t.with_proxy(|p| p.store_mut().delete(stored).unwrap());
    let inv = t.check_invariant().unwrap();
    assert!(!inv.holds);
    assert_eq!(inv.violations[0].fid, stored);
}

#[test]
fn batched_ingest_costs_one_round_trip_per_batch() {
    let mut t = Topology::new(TopologyConfig::default()).unwrap();
    let client = EnvelopeCipher::new(&t.config().proxy.client_key);
    let mut rng = ChaCha20Rng::seed_from_u64(2);
    let envs: Vec<_> = (0..512i64)
        .map(|v| client.seal(&v.to_le_bytes(), &mut rng))
        .collect();
    let db = t.db().unwrap();
    db.set_batch_size(256);
    let txn = db.begin().unwrap();
    t.reset_channel_stats();
    let fids = t
        .db()
        .unwrap()
        .ingest(txn, ColumnType::SensitiveInt, envs)
        .unwrap();
    assert_eq!(fids.len(), 512);
    assert_eq!(t.channel_stats().round_trips, 2);
}

#[test]
fn privacy_crash_mid_transaction_makes_link_unavailable() {
    let mut t = Topology::new(TopologyConfig::default()).unwrap();
    let db = t.db().unwrap();
    let tab = db
        .create_table("t", vec![Column::new("v", ColumnType::SensitiveInt)])
        .unwrap();
    let txn = db.begin().unwrap();
    t.inject_crash(CrashTarget::PrivacyZone);
    let err = t.db().unwrap().sum(txn, tab, 0).unwrap_err();
    assert!(matches!(err, crate::dbms::DbError::PrivacyZoneUnavailable));
    assert!(t.channel_stats().unavailable > 0);
    let rep = t.recover_all().unwrap();
    assert!(!rep.parallel);
    assert!(rep.invariant.holds);
}

#[test]
fn both_zones_recover_in_parallel() {
    let mut t = Topology::new(TopologyConfig::default()).unwrap();
    t.inject_crash(CrashTarget::Both);
    let rep = t.recover_all().unwrap();
    assert!(rep.parallel);
    assert!(rep.privacy.is_some() && rep.integrity.is_some());
}

fn emp_script(salaries: [i64; 3], note: &[u8], gt: i64) -> Vec<ScriptOp> {
    let mut ops: Vec<ScriptOp> = salaries
        .iter()
        .enumerate()
        .map(|(i, &s)| ScriptOp::Insert {
            id: i as i64,
            salary: s,
            note: note.to_vec(),
        })
        .collect();
    ops.extend([
        ScriptOp::SetSalary {
            row: 1,
            salary: salaries[0] * 3,
        },
        ScriptOp::Reveal { row: 2 },
        ScriptOp::Sum,
        ScriptOp::SelectGt { constant: gt },
        ScriptOp::Delete { row: 0 },
        ScriptOp::Vacuum,
    ]);
    ops
}

#[test]
fn plaintexts_do_not_change_the_trace() {
    let cfg = TopologyConfig::default();
    let a = emp_script([10, 20, 30], b"aaaa", 100);
    let b = emp_script([7, 8, 9], b"zzzz", 100);
    assert!(trace_indistinguishability(&cfg, &a, &b).unwrap());
    let (res, _) = run_script(&cfg, &a, 1).unwrap();
    assert_eq!(res[5], ScriptResult::Sum(10 + 30 + 30));
}

#[test]
fn comparison_outcomes_are_visible() {
    let cfg = TopologyConfig::default();
    let a = emp_script([10, 20, 30], b"note", 5);
    let b = emp_script([10, 20, 30], b"note", 15);
    assert!(!trace_indistinguishability(&cfg, &a, &b).unwrap());
}

#[test]
fn structure_mismatch_is_rejected() {
    let cfg = TopologyConfig::default();
    let a = emp_script([1, 2, 3], b"abc", 0);
    let b = emp_script([1, 2, 3], b"abcd", 0);
    assert!(matches!(
        trace_indistinguishability(&cfg, &a, &b),
        Err(SimError::StructureMismatch(_))
    ));
}
