//! Benchmarks: barrier latency, CPU-vs-DMA copy sweep, and the distributed
//! dot product. Each produces a [`BenchReport`] that serializes to CSV.
//!
//! Derived columns are computed from raw columns present in the same row
//! (`seconds = cycles / clock_hz` and so on), so a parsed file can be checked
//! by recomputing them.

use std::fmt;
use std::io::Write;

use thiserror::Error;

use crate::collectives::{sync_size, ActiveSet, SyncWork};
use crate::config::Mode;
use crate::machine::{trace, Machine, MachineError, MachineReport};
use crate::programs::{self, MARK_END, MARK_REDUCE, MARK_START};
use crate::shmem::ShmemError;
use crate::timing::Engine;

#[derive(Debug, Error)]
pub enum BenchError {
    #[error(transparent)]
    Machine(#[from] MachineError),
    #[error("PE {pe} failed: {err}")]
    Pe { pe: usize, err: ShmemError },
    #[error("{0} requires timed mode")]
    NotTimed(&'static str),
    #[error("vectors need {needed} heap bytes but only {available} are available")]
    VectorsExceedHeap { needed: u64, available: u64 },
    #[error("invalid sizes: {0}")]
    InvalidSizes(String),
    #[error(transparent)]
    Csv(#[from] csv::Error),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, PartialEq)]
pub enum Cell {
    Int(u64),
    Float(f64),
    Text(String),
}

impl Cell {
    pub fn as_f64(&self) -> Option<f64> {
        match self {
            Cell::Int(v) => Some(*v as f64),
            Cell::Float(v) => Some(*v),
            Cell::Text(_) => None,
        }
    }
}

impl fmt::Display for Cell {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Cell::Int(v) => write!(f, "{v}"),
            // Display prints the shortest string that parses back to the same value.
            Cell::Float(v) => write!(f, "{v}"),
            Cell::Text(s) => f.write_str(s),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BenchReport {
    pub benchmark: &'static str,
    /// Machine descriptor, repeated in every row.
    pub machine: String,
    pub columns: Vec<&'static str>,
    pub rows: Vec<Vec<Cell>>,
}

impl BenchReport {
    fn new(benchmark: &'static str, machine: &Machine, columns: &[&'static str]) -> Self {
        BenchReport { benchmark, machine: machine.descriptor(), columns: columns.to_vec(), rows: Vec::new() }
    }

    /// Full header, including the leading `benchmark` and `machine` columns.
    pub fn header(&self) -> Vec<&'static str> {
        let mut h = vec!["benchmark", "machine"];
        h.extend(&self.columns);
        h
    }

    /// Values of one column, in row order.
    pub fn column(&self, name: &str) -> Option<Vec<&Cell>> {
        let i = self.columns.iter().position(|c| *c == name)?;
        Some(self.rows.iter().map(|r| &r[i]).collect())
    }

    pub fn write_csv<W: Write>(&self, out: W) -> Result<(), BenchError> {
        let mut w = csv::Writer::from_writer(out);
        w.write_record(self.header())?;
        for row in &self.rows {
            let mut rec = vec![self.benchmark.to_string(), self.machine.clone()];
            rec.extend(row.iter().map(Cell::to_string));
            w.write_record(&rec)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn to_csv(&self) -> String {
        let mut buf = Vec::new();
        self.write_csv(&mut buf).expect("writing to memory cannot fail");
        String::from_utf8(buf).expect("CSV output is UTF-8")
    }
}

fn check(report: &MachineReport) -> Result<(), BenchError> {
    report.values().map(|_| ()).map_err(|(pe, err)| BenchError::Pe { pe, err })
}

/// Cycles between the last PE passing `from` and the last PE passing `to`.
fn span(report: &MachineReport, from: &str, to: &str) -> u64 {
    let last = |label| trace::marks(&report.trace, label).into_iter().map(|(_, t)| t).max().unwrap_or(0);
    last(to).saturating_sub(last(from))
}

/// Size sweep 8, 16, ..., 8192 bytes.
pub fn default_copy_sizes() -> Vec<u64> {
    (3..=13).map(|e| 1u64 << e).collect()
}

/// Per-size cycles of the optimized CPU copy and the DMA engine.
pub fn bench_copy(machine: &Machine, sizes: &[u64]) -> Result<BenchReport, BenchError> {
    if sizes.is_empty() {
        return Err(BenchError::InvalidSizes("no sizes given".into()));
    }
    if let Some(s) = sizes.iter().find(|s| **s == 0) {
        return Err(BenchError::InvalidSizes(format!("size {s} is below 1 byte")));
    }
    let t = &machine.config().timing;
    let mut r = BenchReport::new(
        "copy",
        machine,
        &["bytes", "cpu_cycles", "dma_cycles", "clock_hz", "cpu_seconds", "dma_seconds", "speedup", "cpu_bandwidth"],
    );
    for &bytes in sizes {
        let cpu = t.copy_cycles(bytes, Engine::Cpu);
        let dma = t.copy_cycles(bytes, Engine::Dma);
        let cpu_s = cpu as f64 / t.clock_hz;
        r.rows.push(vec![
            Cell::Int(bytes),
            Cell::Int(cpu),
            Cell::Int(dma),
            Cell::Float(t.clock_hz),
            Cell::Float(cpu_s),
            Cell::Float(dma as f64 / t.clock_hz),
            Cell::Float(dma as f64 / cpu as f64),
            Cell::Float(bytes as f64 / cpu_s),
        ]);
    }
    Ok(r)
}

/// Latency of `barrier_all`, the dissemination barrier, and the linear
/// reference barrier over every PE, each measured on a fresh run.
pub fn bench_barrier(machine: &mut Machine) -> Result<BenchReport, BenchError> {
    if machine.mode() != Mode::Timed {
        return Err(BenchError::NotTimed("bench barrier"));
    }
    let k = machine.n_pes();
    let mut measured = Vec::new();
    for name in ["barrier_all", "dissemination", "linear"] {
        machine.reset();
        let report = machine.run_spmd(move |ctx| async move {
            let n = ctx.n_pes();
            let psync = ctx.static_alloc(8 * sync_size(n))?;
            let sync = SyncWork { psync, psync_len: sync_size(n), pwrk: psync, pwrk_len: 0 };
            ctx.mark(MARK_START);
            match name {
                "barrier_all" => ctx.barrier_all().await?,
                "dissemination" => ctx.barrier(ActiveSet::all(n), sync).await?,
                _ => ctx.linear_barrier_reference().await?,
            }
            ctx.mark(MARK_END);
            Ok(0)
        })?;
        check(&report)?;
        measured.push((name, span(&report, MARK_START, MARK_END)));
    }
    machine.reset();
    let linear = measured.iter().find(|(n, _)| *n == "linear").map(|m| m.1).unwrap_or(0);
    let hz = machine.config().timing.clock_hz;
    let mut r = BenchReport::new("barrier", machine, &["name", "k", "cycles", "clock_hz", "seconds", "speedup_vs_linear"]);
    for (name, cycles) in measured {
        r.rows.push(vec![
            Cell::Text(name.to_string()),
            Cell::Int(k as u64),
            Cell::Int(cycles),
            Cell::Float(hz),
            Cell::Float(cycles as f64 / hz),
            Cell::Float(linear as f64 / cycles as f64),
        ]);
    }
    Ok(r)
}

/// Result of one dot-product run.
#[derive(Debug, Clone, PartialEq)]
pub struct DotprodOutcome {
    pub value: f32,
    pub report: MachineReport,
}

/// Runs the dot product and checks that every PE agrees on the result.
pub fn run_dotprod(machine: &mut Machine, n_per_pe: usize) -> Result<DotprodOutcome, BenchError> {
    let cfg = machine.config();
    let needed = 2 * 4 * n_per_pe as u64;
    let available = (cfg.heap_limit() - cfg.heap_base) as u64;
    if needed > available {
        return Err(BenchError::VectorsExceedHeap { needed, available });
    }
    let seed = cfg.seed;
    machine.reset();
    let report = machine.run_spmd(move |ctx| programs::dotprod(ctx, n_per_pe, seed))?;
    let values = report.values().map_err(|(pe, err)| BenchError::Pe { pe, err })?;
    if let Some(pe) = values.iter().position(|v| *v != values[0]) {
        return Err(BenchError::Pe { pe, err: ShmemError::Program("PEs disagree on the reduction result".into()) });
    }
    Ok(DotprodOutcome { value: f32::from_bits(values[0] as u32), report })
}

/// Collective GFLOPS of the dot product against the model peak.
pub fn bench_dotprod(machine: &mut Machine, n_per_pe: usize) -> Result<BenchReport, BenchError> {
    if machine.mode() != Mode::Timed {
        return Err(BenchError::NotTimed("bench dotprod"));
    }
    let out = run_dotprod(machine, n_per_pe)?;
    machine.reset();
    let t = &machine.config().timing;
    let n_pes = machine.n_pes() as u64;
    let flops = 2 * n_per_pe as u64 * n_pes;
    let cycles = span(&out.report, MARK_START, MARK_END);
    let reduce_cycles = span(&out.report, MARK_REDUCE, MARK_END);
    let seconds = cycles as f64 / t.clock_hz;
    let gflops = flops as f64 / seconds / 1e9;
    let peak = t.peak_flops(n_pes as usize) / 1e9;
    let mut r = BenchReport::new(
        "dotprod",
        machine,
        &[
            "n_pes",
            "n_per_pe",
            "flops",
            "cycles",
            "clock_hz",
            "seconds",
            "gflops",
            "peak_gflops",
            "efficiency",
            "reduce_cycles",
            "reduce_seconds",
            "data_rate",
            "result",
        ],
    );
    r.rows.push(vec![
        Cell::Int(n_pes),
        Cell::Int(n_per_pe as u64),
        Cell::Int(flops),
        Cell::Int(cycles),
        Cell::Float(t.clock_hz),
        Cell::Float(seconds),
        Cell::Float(gflops),
        Cell::Float(peak),
        Cell::Float(gflops / peak),
        Cell::Int(reduce_cycles),
        Cell::Float(reduce_cycles as f64 / t.clock_hz),
        Cell::Float(4.0 * gflops),
        Cell::Float(out.value as f64),
    ]);
    Ok(r)
}
