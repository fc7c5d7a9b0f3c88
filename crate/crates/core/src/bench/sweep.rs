//! Workload runs flattened to one CSV row per configuration.

use std::time::Instant;

use serde::Serialize;

use crate::sim::workload::{run_with, BackendKind, Distribution, Mode, RunReport, WorkloadSpec};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct WorkloadRow {
    pub backend: String,
    pub mode: String,
    pub distribution: String,
    pub cache_pct: f64,
    pub batch: usize,
    pub seed: u64,
    pub ops: u64,
    pub committed: u64,
    pub aborted: u64,
    pub crypto_invocations: u64,
    pub revealed_fields: u64,
    pub round_trips: u64,
    pub cache_hits: u64,
    pub cache_misses: u64,
    pub hit_rate: f64,
    pub invariant_holds: bool,
    pub model_mismatches: u64,
    pub errors: u64,
    /// Wall-clock; the only column that varies between reruns.
    pub elapsed_ms: f64,
}

impl WorkloadRow {
    pub fn new(spec: &WorkloadSpec, r: &RunReport, elapsed_ms: f64) -> Self {
        WorkloadRow {
            backend: r.backend.clone(),
            mode: r.mode.name().into(),
            distribution: r.distribution.clone(),
            cache_pct: spec.cache_fraction * 100.0,
            batch: spec.batch_size,
            seed: r.seed,
            ops: r.ops,
            committed: r.committed,
            aborted: r.aborted,
            crypto_invocations: r.counters.crypto_invocations,
            revealed_fields: r.counters.revealed_fields,
            round_trips: r.counters.round_trips,
            cache_hits: r.counters.cache_hits,
            cache_misses: r.counters.cache_misses,
            hit_rate: r.hit_rate,
            invariant_holds: r.violations() == 0,
            model_mismatches: r.model_mismatches,
            errors: r.errors,
            elapsed_ms,
        }
    }
}

pub fn bench_workload(spec: &WorkloadSpec, backend: BackendKind) -> Result<WorkloadRow, String> {
    let t = Instant::now();
    let r = run_with(spec, backend, None)?;
    Ok(WorkloadRow::new(spec, &r, t.elapsed().as_secs_f64() * 1e3))
}

/// Modes × {Uniform, Zipfian(0.8)} × cache {10, 25, 50, 100}% over `base`.
pub fn default_sweep(base: &WorkloadSpec) -> Vec<WorkloadSpec> {
    let mut out = Vec::new();
    for mode in Mode::ALL {
        for distribution in [Distribution::Uniform, Distribution::Zipfian(0.8)] {
            for cache_fraction in [0.10, 0.25, 0.50, 1.0] {
                out.push(WorkloadSpec {
                    mode,
                    distribution,
                    cache_fraction,
                    ..base.clone()
                });
            }
        }
    }
    out
}
