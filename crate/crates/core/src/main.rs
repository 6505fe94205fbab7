use std::fs::File;
use std::io::{self, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use eshmem_core::bench::{self, BenchReport};
use eshmem_core::programs::{self, DEFAULT_N_PER_PE};
use eshmem_core::{props, Machine, MachineConfig, Mode};

/// Simulated 2D-mesh many-core chip with an OpenSHMEM-style runtime.
#[derive(Parser)]
#[command(name = "eshmem", version)]
struct Cli {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// Machine configuration file (key = value lines).
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Write the report as CSV to this path instead of stdout.
    #[arg(long, global = true)]
    csv: Option<PathBuf>,
    /// Scheduler and data seed, overriding the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Execution mode, overriding the config.
    #[arg(long, global = true, value_parser = parse_mode)]
    mode: Option<Mode>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run a benchmark and emit CSV.
    Bench {
        #[command(subcommand)]
        which: BenchCmd,
    },
    /// Run a built-in SPMD program and print its per-PE results.
    Run {
        /// One of: ranks, dotprod, locks, reduce.
        program: String,
        /// Vector length per PE for dotprod.
        #[arg(long, default_value_t = DEFAULT_N_PER_PE)]
        n_per_pe: usize,
        /// Lock iterations per PE for locks.
        #[arg(long, default_value_t = 100)]
        iters: usize,
    },
    /// Run the randomized property suite.
    Props {
        /// Random cases per property.
        #[arg(long, default_value_t = 20)]
        cases: usize,
    },
}

#[derive(Subcommand)]
enum BenchCmd {
    /// Barrier latency. Columns: name, k, cycles, clock_hz, seconds, speedup_vs_linear.
    Barrier,
    /// CPU vs DMA copy. Columns: bytes, cpu_cycles, dma_cycles, clock_hz, cpu_seconds,
    /// dma_seconds, speedup (dma/cpu), cpu_bandwidth (bytes/s).
    Copy {
        /// Comma-separated transfer sizes in bytes.
        #[arg(long, value_delimiter = ',')]
        sizes: Option<Vec<u64>>,
    },
    /// Dot product. Columns: n_pes, n_per_pe, flops, cycles, clock_hz, seconds, gflops,
    /// peak_gflops, efficiency, reduce_cycles, reduce_seconds, data_rate (GB/s), result.
    Dotprod {
        #[arg(long, default_value_t = DEFAULT_N_PER_PE)]
        n_per_pe: usize,
    },
}

fn parse_mode(s: &str) -> Result<Mode, String> {
    s.parse()
}

fn build(common: &Common) -> Result<Machine, String> {
    let mut cfg = match &common.config {
        Some(p) => MachineConfig::from_file(p).map_err(|e| e.to_string())?,
        None => MachineConfig::default(),
    };
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    if let Some(m) = common.mode {
        cfg.mode = m;
    }
    Machine::new(cfg).map_err(|e| e.to_string())
}

fn emit(report: &BenchReport, common: &Common) -> Result<(), String> {
    match &common.csv {
        Some(p) => {
            let f = File::create(p).map_err(|e| format!("cannot create {}: {e}", p.display()))?;
            report.write_csv(f).map_err(|e| e.to_string())
        }
        None => report.write_csv(io::stdout().lock()).map_err(|e| e.to_string()),
    }
}

fn run(cli: Cli) -> Result<(), String> {
    let common = cli.common;
    match cli.cmd {
        Cmd::Bench { which } => {
            let mut m = build(&common)?;
            let report = match which {
                BenchCmd::Barrier => bench::bench_barrier(&mut m),
                BenchCmd::Copy { sizes } => bench::bench_copy(&m, &sizes.unwrap_or_else(bench::default_copy_sizes)),
                BenchCmd::Dotprod { n_per_pe } => bench::bench_dotprod(&mut m, n_per_pe),
            }
            .map_err(|e| e.to_string())?;
            emit(&report, &common)
        }
        Cmd::Run { program, n_per_pe, iters } => {
            let mut m = build(&common)?;
            let timed = m.mode() == Mode::Timed;
            let mut out = io::stdout().lock();
            if program == "dotprod" {
                let res = bench::run_dotprod(&mut m, n_per_pe).map_err(|e| e.to_string())?;
                writeln!(out, "{}", res.value).map_err(|e| e.to_string())?;
                if timed {
                    writeln!(out, "cycles {}", res.report.max_cycles()).map_err(|e| e.to_string())?;
                }
                return Ok(());
            }
            let report = match program.as_str() {
                "ranks" => m.run_spmd(programs::ranks),
                "locks" => m.run_spmd(move |ctx| programs::locks(ctx, iters)),
                "reduce" => m.run_spmd(programs::reduce),
                other => {
                    return Err(format!("unknown program '{other}' (expected one of {})", programs::BUILTINS.join(", ")))
                }
            }
            .map_err(|e| e.to_string())?;
            let values = report.values().map_err(|(pe, e)| format!("PE {pe} failed: {e}"))?;
            for (pe, v) in values.iter().enumerate() {
                if timed {
                    writeln!(out, "{pe} {v} {}", report.cycles[pe]).map_err(|e| e.to_string())?;
                } else {
                    writeln!(out, "{pe} {v}").map_err(|e| e.to_string())?;
                }
            }
            Ok(())
        }
        Cmd::Props { cases } => {
            let seed = common.seed.unwrap_or(1);
            let outcomes = props::run_all(cases, seed);
            let mut failed = 0;
            for o in &outcomes {
                match &o.result {
                    Ok(()) => println!("ok   {:<22} {:>5} cases {:.2}s", o.name, o.cases, o.seconds),
                    Err(e) => {
                        failed += 1;
                        println!("FAIL {:<22} {e}", o.name);
                    }
                }
            }
            if failed > 0 {
                Err(format!("{failed} properties failed"))
            } else {
                Ok(())
            }
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("eshmem: {e}");
            ExitCode::FAILURE
        }
    }
}
