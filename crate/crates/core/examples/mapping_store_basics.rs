//! Put, get, delete and promote against an in-memory store.
//!
//! cargo run --example mapping_store_basics

use std::sync::Arc;

use fidstore::store::{CacheCapacity, MappingStore, PartitionKind, StoreConfig, ValueLayout};
use fidstore::vfs::MemDisk;

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let cfg = StoreConfig {
        cache: CacheCapacity::Unbounded,
        ..Default::default()
    };
    let (mut store, _) = MappingStore::open(Arc::new(MemDisk::new()), cfg)?;
    let salaries = store.create_partition(PartitionKind::Permanent, ValueLayout::FixedWidth(8))?;
    let notes = store.create_partition(PartitionKind::Permanent, ValueLayout::VarLen)?;
    let scratch = store.create_partition(PartitionKind::Temporary, ValueLayout::FixedWidth(8))?;

    // Equal plaintexts still get distinct FIDs.
    let a = store.put(salaries, &1200i64.to_le_bytes())?;
    let b = store.put(salaries, &1200i64.to_le_bytes())?;
    println!("two puts of 1200: {a} and {b}");

    let n = store.put(notes, b"prefers remote work")?;
    println!(
        "note {n} -> {:?}",
        String::from_utf8(store.get(n)?.unwrap())?
    );

    // A freed offset is handed out again by the next put.
    store.delete(a)?;
    let c = store.put(salaries, &1500i64.to_le_bytes())?;
    println!(
        "after delete, next put reuses the slot: {c} (same as {a}: {})",
        a == c
    );

    // Temporary values move into a permanent partition under a new FID.
    let t = store.put(scratch, &99i64.to_le_bytes())?;
    let kept = store.promote(t, salaries)?;
    println!(
        "promoted {t} to {kept}; temporary still live: {}",
        store.is_live(t)
    );
    println!("dropped {} temporaries", store.drop_temporary(scratch)?);

    for p in store.partitions() {
        println!(
            "partition {}: {:?} {:?}, {} live",
            p.id, p.kind, p.layout, p.live
        );
    }
    Ok(())
}
