use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand, ValueEnum};
use fidstore::bench::{crash, ops, storage, sweep, write_csv};
use fidstore::sim::workload::{BackendKind, Distribution, Mode, WorkloadSpec};
use fidstore::vfs::{FsDisk, SharedDisk};
use serde::Serialize;

/// Benchmarks for the FID mapping store and the two-zone simulator.
///
/// FIDSTORE_DIR, when set, holds the store used by `ops`; otherwise it runs
/// in memory.
#[derive(Parser)]
#[command(name = "fidstore-bench", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
    /// Write CSV here instead of stdout.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
}

#[derive(Clone, Copy, ValueEnum)]
enum Dist {
    Uniform,
    Zipfian,
}

#[derive(Clone, Copy, ValueEnum)]
enum Backend {
    Fid,
    Cipher,
}

#[derive(Subcommand)]
enum Cmd {
    /// Put/get latency against AEAD encrypt/decrypt of a 4-byte field.
    Ops {
        #[arg(long, default_value_t = 1_000_000)]
        iters: u64,
    },
    /// Bytes used by plaintext, ciphertext and FID layouts.
    Storage {
        #[arg(long, default_value_t = 1_000_000)]
        fields: u64,
        #[arg(long, default_value_t = 4)]
        width: u32,
        /// Also fill a real store and report what it holds.
        #[arg(long)]
        measure: bool,
    },
    /// Sysbench-style run through the simulator.
    Workload {
        /// A mode name or `all`.
        #[arg(long, default_value = "read-write")]
        mode: String,
        #[arg(long, value_enum, default_value_t = Dist::Uniform)]
        dist: Dist,
        #[arg(long, default_value_t = 0.8)]
        theta: f64,
        #[arg(long, default_value_t = 100.0)]
        cache_pct: f64,
        #[arg(long, default_value_t = 256)]
        batch: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = Backend::Fid)]
        backend: Backend,
        /// Statements to run after loading.
        #[arg(long, default_value_t = 10_000)]
        iters: u64,
        /// Rows per table.
        #[arg(long, default_value_t = 1000)]
        fields: u64,
        #[arg(long, default_value_t = 1)]
        tables: usize,
        #[arg(long, default_value_t = 4)]
        threads: usize,
        /// Modes × distributions × cache sizes; overrides mode, dist and
        /// cache-pct.
        #[arg(long)]
        sweep: bool,
    },
    /// Every crash point under `seeds` seeds; fails on any violation.
    CrashMatrix {
        #[arg(long, default_value_t = 100)]
        seeds: u64,
    },
}

fn emit<T: Serialize>(out: &Option<PathBuf>, rows: &[T]) -> io::Result<()> {
    match out {
        Some(p) => write_csv(File::create(p)?, rows)?,
        None => write_csv(io::stdout().lock(), rows)?,
    }
    Ok(())
}

fn run(cli: Cli) -> Result<bool, String> {
    let e = |e: io::Error| e.to_string();
    match cli.cmd {
        Cmd::Ops { iters } => {
            let disk = match std::env::var_os("FIDSTORE_DIR") {
                Some(dir) => Some(Arc::new(FsDisk::open(dir).map_err(e)?) as SharedDisk),
                None => None,
            };
            let r = ops::bench_ops(iters, disk)?;
            eprintln!(
                "get/decrypt {:.1}x  put/encrypt {:.1}x  metadata {} B vs {} B per field",
                r.get_vs_decrypt, r.put_vs_encrypt, r.fid_metadata_bytes, r.aead_metadata_bytes
            );
            emit(&cli.out, &r.rows()).map_err(e)?;
        }
        Cmd::Storage {
            fields,
            width,
            measure,
        } => {
            if fields < 1 {
                return Err("fields must be at least 1".into());
            }
            let r = storage::bench_storage(fields, width as u64);
            if measure {
                let m = storage::measure_storage(fields, width)?;
                eprintln!("{m:?}");
            }
            emit(&cli.out, &[r]).map_err(e)?;
        }
        Cmd::Workload {
            mode,
            dist,
            theta,
            cache_pct,
            batch,
            seed,
            backend,
            iters,
            fields,
            tables,
            threads,
            sweep: full,
        } => {
            let base = WorkloadSpec {
                mode: Mode::ReadWrite,
                distribution: match dist {
                    Dist::Uniform => Distribution::Uniform,
                    Dist::Zipfian => Distribution::Zipfian(theta),
                },
                tables,
                rows_per_table: fields,
                duration_ops: iters,
                threads_simulated: threads,
                batch_size: batch,
                cache_fraction: cache_pct / 100.0,
                seed,
                ..Default::default()
            };
            let specs = if full {
                sweep::default_sweep(&base)
            } else if mode == "all" {
                Mode::ALL
                    .into_iter()
                    .map(|mode| WorkloadSpec {
                        mode,
                        ..base.clone()
                    })
                    .collect()
            } else {
                vec![WorkloadSpec {
                    mode: mode.parse()?,
                    ..base
                }]
            };
            let kind = match backend {
                Backend::Fid => BackendKind::Fid,
                Backend::Cipher => BackendKind::Cipher,
            };
            let mut rows = Vec::new();
            for s in &specs {
                rows.push(sweep::bench_workload(s, kind)?);
            }
            emit(&cli.out, &rows).map_err(e)?;
            return Ok(rows
                .iter()
                .all(|r| r.invariant_holds && r.model_mismatches == 0));
        }
        Cmd::CrashMatrix { seeds } => {
            if seeds < 1 {
                return Err("seeds must be at least 1".into());
            }
            let rows = crash::bench_crash_matrix(seeds);
            emit(&cli.out, &rows).map_err(e)?;
            let bad = rows.iter().filter(|r| !r.ok()).count();
            eprintln!("{} runs, {bad} failing", rows.len());
            return Ok(bad == 0);
        }
    }
    Ok(true)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(msg) => {
            let _ = writeln!(io::stderr(), "error: {msg}");
            ExitCode::from(2)
        }
    }
}
