//! Flushed puts survive a crash; unflushed ones are lost whole.
//!
//! cargo run --example wal_recovery

use std::sync::Arc;

use fidstore::store::{CacheCapacity, MappingStore, PartitionKind, StoreConfig, ValueLayout};
use fidstore::vfs::MemDisk;

fn config() -> StoreConfig {
    StoreConfig {
        cache: CacheCapacity::Unbounded,
        ..Default::default()
    }
}

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let disk = MemDisk::new();
    let (mut store, _) = MappingStore::open(Arc::new(disk.clone()), config())?;
    let p = store.create_partition(PartitionKind::Permanent, ValueLayout::FixedWidth(4))?;
    let durable: Vec<_> = (0..100u32)
        .map(|i| store.put(p, &i.to_le_bytes()))
        .collect::<Result<_, _>>()?;
    println!("durable up to lsn {}", store.flush_log()?);
    let lost = store.put(p, &7u32.to_le_bytes())?;
    drop(store);

    // Only what reached a sync survives the crash.
    let (mut back, report) = MappingStore::open(Arc::new(disk.fork_durable()), config())?;
    println!(
        "reopened: {} records replayed, {} torn bytes discarded",
        report.replayed, report.torn_bytes_discarded
    );
    let intact = durable
        .iter()
        .enumerate()
        .all(|(i, &f)| back.get(f).ok().flatten() == Some((i as u32).to_le_bytes().to_vec()));
    println!("all 100 flushed values intact: {intact}");
    println!(
        "unflushed put {lost} live after restart: {}",
        back.is_live(lost)
    );

    // A crash in the middle of a sync tears the tail record.
    let torn = MemDisk::new();
    let (mut s, _) = MappingStore::open(Arc::new(torn.clone()), config())?;
    let p = s.create_partition(PartitionKind::Permanent, ValueLayout::VarLen)?;
    s.flush_log()?;
    s.put(p, &[0xab; 200])?;
    torn.arm_torn_sync(50);
    println!(
        "flush with a 50-byte budget: {:?}",
        s.flush_log().map_err(|e| e.to_string())
    );
    drop(s);
    let (s, report) = MappingStore::open(Arc::new(torn.fork_durable()), config())?;
    println!(
        "after torn sync: {} torn bytes discarded, partition {p} holds {} values",
        report.torn_bytes_discarded,
        s.partition_info(p).map_or(0, |i| i.live)
    );
    Ok(())
}
