//! Desk-scale measurements: per-operation cost, storage accounting,
//! workload sweeps and the crash matrix. Every report serializes to CSV.

pub mod crash;
pub mod ops;
pub mod storage;
pub mod sweep;

use std::io::Write;

use serde::Serialize;

/// Writes `rows` as CSV with a header line.
pub fn write_csv<W: Write, T: Serialize>(out: W, rows: &[T]) -> csv::Result<()> {
    let mut w = csv::Writer::from_writer(out);
    for r in rows {
        w.serialize(r)?;
    }
    w.flush()?;
    Ok(())
}

/// CSV text for `rows`.
pub fn to_csv<T: Serialize>(rows: &[T]) -> String {
    let mut buf = Vec::new();
    write_csv(&mut buf, rows).expect("CSV into memory");
    String::from_utf8(buf).expect("CSV is UTF-8")
}
