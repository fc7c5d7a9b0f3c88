//! A crash between the privacy-zone flush and the database commit leaves
//! stored secrets no row references. Recovery keeps every referenced FID
//! valid and orphan collection reclaims the rest.
//!
//! cargo run --example crash_injection

use fidstore::dbms::{Cell, Column, ColumnType};
use fidstore::proxy::EnvelopeCipher;
use fidstore::sim::{CrashId, CrashPoint, CrashTarget, Topology, TopologyConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut t = Topology::new(TopologyConfig::default())?;
    let client = EnvelopeCipher::new(&t.config().proxy.client_key);
    let mut rng = ChaCha20Rng::seed_from_u64(5);
    let db = t.db()?;
    let tab = db.create_table("t", vec![Column::new("v", ColumnType::SensitiveInt)])?;
    let mut insert = |t: &mut Topology, v: i64| {
        let db = t.db()?;
        let txn = db.begin()?;
        let f = db.ingest(
            txn,
            ColumnType::SensitiveInt,
            vec![client.seal(&v.to_le_bytes(), &mut rng)],
        )?[0];
        db.insert_row(txn, tab, vec![Cell::Fid(f)])?;
        db.commit(txn).map_err(Box::<dyn std::error::Error>::from)
    };
    for v in 0..5 {
        insert(&mut t, v)?;
    }

    let point = CrashPoint {
        id: CrashId::AfterPrivacyFlushBeforeDbCommit,
        target: CrashTarget::IntegrityZone,
    };
    t.arm(point, 1);
    println!(
        "commit under crash: {:?}",
        insert(&mut t, 99).map_err(|e| e.to_string())
    );

    let r = t.recover_all()?;
    println!(
        "recovered {:?}: invariant holds {}, {} orphans",
        r.fired.map(|p| p.id.name()),
        r.invariant.holds,
        r.invariant.orphans
    );
    let freed = t.db()?.orphan_gc()?;
    let after = t.check_invariant()?;
    println!(
        "orphan collection freed {freed}; {} orphans left, holds {}",
        after.orphans, after.holds
    );
    println!("committed rows: {}", t.db()?.committed_rows(tab)?.len());
    Ok(())
}
