//! Store put/get latency against AEAD seal/open of a 4-byte field.
//!
//! Each measurement times chunks of [`CHUNK`] calls and reports the median
//! and 99th percentile of the per-call chunk means.

use std::hint::black_box;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use serde::Serialize;

use crate::proxy::envelope::ENVELOPE_OVERHEAD;
use crate::proxy::EnvelopeCipher;
use crate::store::{CacheCapacity, MappingStore, PartitionKind, StoreConfig, ValueLayout};
use crate::vfs::{MemDisk, SharedDisk};

pub const CHUNK: usize = 1000;
pub const MIN_ITERS: u64 = 100_000;
pub const FIELD_WIDTH: usize = 4;
pub const WORKING_SET: usize = 4096;

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct LatencyStat {
    pub median_ns: f64,
    pub p99_ns: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CostReport {
    pub iters: u64,
    pub put: LatencyStat,
    pub get: LatencyStat,
    pub aead_encrypt_field: LatencyStat,
    pub aead_decrypt_field: LatencyStat,
    /// Flushing a chunk's worth of puts, divided by the chunk size. Not part
    /// of `put`.
    pub log_flush_per_put: LatencyStat,
    /// Decrypt median over get median.
    pub get_vs_decrypt: f64,
    /// Encrypt median over put median.
    pub put_vs_encrypt: f64,
    /// TSC ticks per nanosecond, where the host exposes a TSC.
    pub cycles_per_ns: Option<f64>,
    pub fid_metadata_bytes: u64,
    pub aead_metadata_bytes: u64,
    pub round_trips: u64,
    /// At-rest seal/open calls made by the store during put and get.
    pub crypto_invocations: u64,
}

impl CostReport {
    pub fn cycles(&self, ns: f64) -> Option<f64> {
        self.cycles_per_ns.map(|c| c * ns)
    }
}

/// Flat CSV view: one row per operation.
#[derive(Debug, Clone, Serialize)]
pub struct CostRow {
    pub op: &'static str,
    pub iters: u64,
    pub median_ns: f64,
    pub p99_ns: f64,
    pub median_cycles: Option<f64>,
}

impl CostReport {
    pub fn rows(&self) -> Vec<CostRow> {
        [
            ("put", self.put),
            ("get", self.get),
            ("aead_encrypt_field", self.aead_encrypt_field),
            ("aead_decrypt_field", self.aead_decrypt_field),
            ("log_flush_per_put", self.log_flush_per_put),
        ]
        .into_iter()
        .map(|(op, s)| CostRow {
            op,
            iters: self.iters,
            median_ns: s.median_ns,
            p99_ns: s.p99_ns,
            median_cycles: self.cycles(s.median_ns),
        })
        .collect()
    }
}

fn stat(mut per_call: Vec<f64>) -> LatencyStat {
    per_call.sort_by(f64::total_cmp);
    LatencyStat {
        median_ns: per_call[per_call.len() / 2],
        p99_ns: per_call[(per_call.len() * 99 / 100).min(per_call.len() - 1)],
    }
}

/// Times `CHUNK` calls of `f`, returning nanoseconds per call.
fn chunk(base: usize, mut f: impl FnMut(usize)) -> f64 {
    let t = Instant::now();
    for i in base..base + CHUNK {
        f(i);
    }
    t.elapsed().as_nanos() as f64 / CHUNK as f64
}

#[cfg(target_arch = "x86_64")]
fn tsc_per_ns() -> Option<f64> {
    // SAFETY: rdtsc has no preconditions on x86_64.
    let read = || unsafe { std::arch::x86_64::_rdtsc() };
    let t = Instant::now();
    let c0 = read();
    while t.elapsed().as_millis() < 20 {
        std::hint::spin_loop();
    }
    let c1 = read();
    Some((c1 - c0) as f64 / t.elapsed().as_nanos() as f64)
}

#[cfg(not(target_arch = "x86_64"))]
fn tsc_per_ns() -> Option<f64> {
    None
}

/// Runs the four measurements over `iters` calls each on a warm, fully
/// cached partition held on `disk`. Chunks of the four operations are
/// interleaved so that host noise lands on all of them alike, and the log is
/// flushed, untimed, after every chunk of puts.
pub fn bench_ops(iters: u64, disk: Option<SharedDisk>) -> Result<CostReport, String> {
    if iters < MIN_ITERS {
        return Err(format!("iters must be at least {MIN_ITERS}"));
    }
    let err = |e: crate::store::StoreError| e.to_string();
    let disk = disk.unwrap_or_else(|| Arc::new(MemDisk::new()));
    let cfg = StoreConfig {
        cache: CacheCapacity::Unbounded,
        ..Default::default()
    };
    let (mut store, _) = MappingStore::open(disk, cfg).map_err(err)?;
    let mut rng = ChaCha20Rng::seed_from_u64(0xbe7c);
    let rounds = (iters as usize).div_ceil(CHUNK);

    let part = store
        .create_partition(
            PartitionKind::Permanent,
            ValueLayout::FixedWidth(FIELD_WIDTH as u32),
        )
        .map_err(err)?;
    let hot = (0..WORKING_SET as u32)
        .map(|v| store.put(part, &v.to_le_bytes()))
        .collect::<Result<Vec<_>, _>>()
        .map_err(err)?;
    store.flush_log().map_err(err)?;
    let cipher = EnvelopeCipher::new(&[0x41; 32]);
    let sealed: Vec<_> = (0..WORKING_SET as u32)
        .map(|v| cipher.seal(&v.to_le_bytes(), &mut rng))
        .collect();
    let order: Vec<u16> = (0..rounds * CHUNK)
        .map(|_| rng.gen_range(0..WORKING_SET) as u16)
        .collect();
    store.reset_counters();

    let field = 7u32.to_le_bytes();
    let mut buf = Vec::with_capacity(FIELD_WIDTH);
    let mut samples = [(); 5].map(|_| Vec::with_capacity(rounds));
    for r in 0..rounds {
        let base = r * CHUNK;
        samples[0].push(chunk(base, |i| {
            black_box(store.put(part, &(i as u32).to_le_bytes()).expect("put"));
        }));
        // Group commit: the log is made durable once per chunk of puts.
        let t = Instant::now();
        store.flush_log().map_err(err)?;
        samples[4].push(t.elapsed().as_nanos() as f64 / CHUNK as f64);
        samples[1].push(chunk(base, |i| {
            black_box(
                store
                    .get_into(hot[order[i] as usize], &mut buf)
                    .expect("get"),
            );
            black_box(&buf);
        }));
        samples[2].push(chunk(base, |_| {
            black_box(cipher.seal(black_box(&field), &mut rng));
        }));
        samples[3].push(chunk(base, |i| {
            black_box(cipher.open(&sealed[order[i] as usize]).expect("open"));
        }));
    }
    let crypto_invocations = store.seal_stats().total();
    let [put, get, aead_encrypt_field, aead_decrypt_field, log_flush_per_put] = samples.map(stat);

    Ok(CostReport {
        iters: (rounds * CHUNK) as u64,
        get_vs_decrypt: aead_decrypt_field.median_ns / get.median_ns,
        put_vs_encrypt: aead_encrypt_field.median_ns / put.median_ns,
        put,
        get,
        aead_encrypt_field,
        aead_decrypt_field,
        log_flush_per_put,
        cycles_per_ns: tsc_per_ns(),
        fid_metadata_bytes: crate::fid::FID_BYTES as u64,
        aead_metadata_bytes: ENVELOPE_OVERHEAD as u64,
        round_trips: 0,
        crypto_invocations,
    })
}
