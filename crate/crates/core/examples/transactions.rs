//! Snapshot isolation over FID cells: readers keep their snapshot, the
//! second writer of a row aborts, and vacuum reclaims old versions.
//!
//! cargo run --example transactions

use fidstore::dbms::{Cell, Column, ColumnType, DbError};
use fidstore::proxy::EnvelopeCipher;
use fidstore::sim::{Topology, TopologyConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut t = Topology::new(TopologyConfig::default())?;
    let client = EnvelopeCipher::new(&t.config().proxy.client_key);
    let mut rng = ChaCha20Rng::seed_from_u64(4);
    let mut seal = |v: i64| client.seal(&v.to_le_bytes(), &mut rng);
    let db = t.db()?;
    let acct = db.create_table(
        "acct",
        vec![Column::new("balance", ColumnType::SensitiveInt)],
    )?;

    let setup = db.begin()?;
    let f = db.ingest(setup, ColumnType::SensitiveInt, vec![seal(100)])?[0];
    let row = db.insert_row(setup, acct, vec![Cell::Fid(f)])?;
    db.commit(setup)?;

    let reader = db.begin()?;
    let w1 = db.begin()?;
    let w2 = db.begin()?;
    let f1 = db.ingest(w1, ColumnType::SensitiveInt, vec![seal(150)])?[0];
    db.update_row(w1, acct, row, vec![(0, Cell::Fid(f1))])?;
    let f2 = db.ingest(w2, ColumnType::SensitiveInt, vec![seal(50)])?[0];
    match db.update_row(w2, acct, row, vec![(0, Cell::Fid(f2))]) {
        Err(DbError::WriteConflict(_)) => println!("second writer conflicts and is aborted"),
        other => println!("unexpected: {other:?}"),
    }
    db.commit(w1)?;

    let old = db.read_row(reader, acct, row)?.unwrap()[0].fid().unwrap();
    let env = db.reveal(reader, vec![old])?;
    let balance = i64::from_le_bytes(client.open(&env[0])?.try_into().unwrap());
    println!("reader started before the commit still sees {balance}");
    db.commit(reader)?;

    println!("versions before vacuum: {}", db.version_count(acct));
    let freed = db.vacuum_all()?;
    println!(
        "vacuum dropped {freed} versions; now {}",
        db.version_count(acct)
    );
    Ok(())
}
