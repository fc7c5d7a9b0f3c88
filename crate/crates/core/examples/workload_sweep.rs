//! Cache hit rate and crypto work under uniform and skewed point selects,
//! for the FID backend and the per-field cipher baseline.
//!
//! cargo run --release --example workload_sweep

use fidstore::sim::workload::{run_with, BackendKind, Distribution, Mode, WorkloadSpec};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    for backend in [BackendKind::Fid, BackendKind::Cipher] {
        for dist in [
            Distribution::Uniform,
            Distribution::Zipfian(0.8),
            Distribution::Zipfian(0.99),
        ] {
            let spec = WorkloadSpec {
                mode: Mode::PointSelect,
                distribution: dist,
                rows_per_table: 10_000,
                duration_ops: 20_000,
                cache_fraction: 0.10,
                seed: 1,
                ..Default::default()
            };
            let r = run_with(&spec, backend, None)?;
            println!(
                "{backend:?} {dist:?}: hit rate {:.3}, {} crypto calls, {} revealed fields, {} round trips",
                r.hit_rate, r.counters.crypto_invocations, r.counters.revealed_fields, r.counters.round_trips
            );
        }
    }
    Ok(())
}
