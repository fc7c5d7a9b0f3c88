//! Operators over FIDs: the integrity zone computes without plaintext, and
//! only the client can read results.
//!
//! cargo run --example enc_operators

use fidstore::dbms::{Cell, Column, ColumnType};
use fidstore::proxy::{EnvelopeCipher, OpKind, OperatorRequest, ValueType};
use fidstore::sim::{Topology, TopologyConfig};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut t = Topology::new(TopologyConfig::default())?;
    let client = EnvelopeCipher::new(&t.config().proxy.client_key);
    let mut rng = ChaCha20Rng::seed_from_u64(3);
    let db = t.db()?;
    let emp = db.create_table(
        "emp",
        vec![
            Column::new("id", ColumnType::PlainInt),
            Column::new("salary", ColumnType::SensitiveInt),
        ],
    )?;
    let txn = db.begin()?;
    let salaries = [1200i64, 3400, 2100];
    let envs = salaries
        .iter()
        .map(|s| client.seal(&s.to_le_bytes(), &mut rng))
        .collect();
    let fids = db.ingest(txn, ColumnType::SensitiveInt, envs)?;
    for (i, f) in fids.iter().enumerate() {
        db.insert_row(txn, emp, vec![Cell::Int(i as i64), Cell::Fid(*f)])?;
    }

    let rows = db.scan(txn, emp)?;
    let (a, b) = (rows[0].1[1].fid().unwrap(), rows[1].1[1].fid().unwrap());
    println!("row 0 stores {a}, row 1 stores {b}");
    let out = db.exec(
        txn,
        vec![
            OperatorRequest::binary(OpKind::Add, a, b, ValueType::Int64),
            OperatorRequest::binary(OpKind::CmpGt, a, b, ValueType::Int64),
        ],
    )?;
    let sum = out[0].fid().unwrap();
    println!("salary[0] + salary[1] -> new FID {sum}");
    println!("salary[0] > salary[1] -> {}", out[1].boolean().unwrap());

    let total = db.sum(txn, emp, 1)?;
    let threshold = db.ingest(
        txn,
        ColumnType::SensitiveInt,
        vec![client.seal(&2000i64.to_le_bytes(), &mut rng)],
    )?[0];
    let above = db.select_where(txn, emp, 1, OpKind::CmpGt, threshold)?;
    let revealed = db.reveal(txn, vec![sum, total])?;
    db.commit(txn)?;
    let read = |e| i64::from_le_bytes(client.open(e).unwrap().try_into().unwrap());
    println!("client reads the pair sum: {}", read(&revealed[0]));
    println!("client reads SUM(salary): {}", read(&revealed[1]));
    println!("rows with salary > 2000: {above:?}");
    Ok(())
}
