//! Per-field metadata of a FID against an AEAD envelope, computed and then
//! measured on a real store.
//!
//! cargo run --example storage_accounting

use fidstore::bench::storage::{bench_storage, measure_storage};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for width in [4, 8, 64] {
        let r = bench_storage(1_000_000, width);
        println!(
            "width {width:>2}: a row holds {} B (FID) vs {} B ({} B value + {} B envelope), {:.1}% less; 10^6 fields take {} B vs {} B in total",
            r.fid_metadata_per_field,
            r.aead_field_bytes,
            width,
            r.aead_metadata_per_field,
            r.metadata_reduction_pct,
            r.fid_total_bytes,
            r.ciphertext_bytes
        );
    }
    let m = measure_storage(10_000, 4)?;
    println!("measured store, 10^4 fields of 4 B: {m:?}");
    Ok(())
}
