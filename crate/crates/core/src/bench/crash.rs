//! Crash matrix: every crash point under many seeds on a mixed read-write
//! workload, each run recovered and checked for dangling FIDs.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::sim::workload::{run_with, BackendKind, Mode, WorkloadSpec};
use crate::sim::{CrashId, CrashPoint, CrashTarget};

/// Upper bound for torn-sync budgets; below the bytes a default run syncs
/// on either disk after loading.
pub const MAX_TORN_BUDGET: u64 = 200_000;

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct CrashRow {
    pub crash_point: &'static str,
    pub target: String,
    pub seed: u64,
    pub occurrence: u64,
    pub fired: bool,
    pub violations: usize,
    /// Orphan secrets right after recovery, before collection.
    pub orphans: u64,
    pub orphans_post_gc: u64,
    /// Store records plus committed transactions replayed on restart.
    pub recovery_replayed: u64,
    pub model_mismatches: u64,
    pub errors: u64,
}

impl CrashRow {
    pub fn ok(&self) -> bool {
        self.fired && self.violations == 0 && self.model_mismatches == 0 && self.errors == 0
    }
}

pub fn matrix_spec(seed: u64) -> WorkloadSpec {
    WorkloadSpec {
        mode: Mode::ReadWrite,
        rows_per_table: 1000,
        duration_ops: 10_000,
        threads_simulated: 4,
        maintenance_every: 1000,
        seed,
        ..Default::default()
    }
}

pub fn crash_points() -> [CrashId; 6] {
    [
        CrashId::BeforePrivacyFlush,
        CrashId::AfterPrivacyFlushBeforeDbCommit,
        CrashId::AfterDbCommit,
        CrashId::DuringVacuum,
        CrashId::DuringOrphanGc,
        CrashId::RandomByte(0),
    ]
}

/// Target, occurrence and torn budget for one cell, derived from the seed.
pub fn plan(id: CrashId, seed: u64) -> (CrashPoint, u64) {
    let mut rng = ChaCha20Rng::seed_from_u64(
        (seed << 8) ^ crate::codec::checksum(id.name().as_bytes()) as u64,
    );
    let target = match id {
        // An integrity-side crash here is what strands flushed secrets.
        CrashId::AfterPrivacyFlushBeforeDbCommit => {
            [CrashTarget::IntegrityZone, CrashTarget::Both][seed as usize % 2]
        }
        _ => CrashTarget::ALL[seed as usize % 3],
    };
    let (id, occurrence) = match id {
        CrashId::RandomByte(_) => (CrashId::RandomByte(rng.gen_range(1..=MAX_TORN_BUDGET)), 1),
        CrashId::DuringVacuum | CrashId::DuringOrphanGc => (id, rng.gen_range(1..=9)),
        _ => (id, rng.gen_range(1..=50)),
    };
    (CrashPoint { id, target }, occurrence)
}

pub fn run_cell(id: CrashId, seed: u64) -> CrashRow {
    let (point, occurrence) = plan(id, seed);
    let mut row = CrashRow {
        crash_point: id.name(),
        target: format!("{:?}", point.target),
        seed,
        occurrence,
        fired: false,
        violations: 0,
        orphans: 0,
        orphans_post_gc: 0,
        recovery_replayed: 0,
        model_mismatches: 0,
        errors: 0,
    };
    match run_with(
        &matrix_spec(seed),
        BackendKind::Fid,
        Some((point, occurrence)),
    ) {
        Ok(r) => {
            row.fired = r.crashed.is_some();
            row.violations = r.violations();
            row.orphans = r.recoveries.iter().map(|x| x.invariant.orphans).sum();
            row.orphans_post_gc = r.post_gc_invariant.map_or(0, |i| i.orphans);
            row.recovery_replayed = r
                .recoveries
                .iter()
                .map(|x| {
                    x.privacy.as_ref().map_or(0, |p| p.replayed as u64)
                        + x.integrity.as_ref().map_or(0, |d| d.committed_txns as u64)
                })
                .sum();
            row.model_mismatches = r.model_mismatches;
            row.errors = r.errors;
        }
        Err(_) => row.errors = 1,
    }
    row
}

/// All six points × `seeds` seeds, in a stable order.
pub fn bench_crash_matrix(seeds: u64) -> Vec<CrashRow> {
    let cells: Vec<(CrashId, u64)> = crash_points()
        .into_iter()
        .flat_map(|id| (0..seeds).map(move |s| (id, s)))
        .collect();
    cells
        .into_par_iter()
        .map(|(id, s)| run_cell(id, s))
        .collect()
}
