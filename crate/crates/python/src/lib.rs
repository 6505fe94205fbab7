//! Python bindings: build a machine from config text, run the built-in
//! programs and benchmarks, and poke at addresses, timing and the heap.

use pyo3::create_exception;
use pyo3::exceptions::{PyException, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyBytes;

use eshmem_core::bench::{self, BenchReport, Cell};
use eshmem_core::programs::{self, DEFAULT_N_PER_PE};
use eshmem_core::{self as core, Coord, Engine, GlobalAddress, HeapState, MachineConfig, Mode, SymAddr};

create_exception!(eshmem, EshmemError, PyException);

fn err<E: std::fmt::Display>(e: E) -> PyErr {
    EshmemError::new_err(e.to_string())
}

fn parse_mode(s: &str) -> PyResult<Mode> {
    s.parse().map_err(PyValueError::new_err)
}

/// Tabular benchmark output.
#[pyclass(module = "eshmem", frozen)]
struct Report {
    inner: BenchReport,
}

#[pymethods]
impl Report {
    #[getter]
    fn benchmark(&self) -> &str {
        self.inner.benchmark
    }

    #[getter]
    fn machine(&self) -> &str {
        &self.inner.machine
    }

    /// Full CSV header, including the leading `benchmark` and `machine` columns.
    #[getter]
    fn columns(&self) -> Vec<&'static str> {
        self.inner.header()
    }

    /// Rows as dicts keyed by column name (measurement columns only).
    fn rows<'py>(&self, py: Python<'py>) -> PyResult<Vec<Bound<'py, pyo3::types::PyDict>>> {
        let mut out = Vec::new();
        for row in &self.inner.rows {
            let d = pyo3::types::PyDict::new(py);
            for (name, cell) in self.inner.columns.iter().zip(row) {
                match cell {
                    Cell::Int(v) => d.set_item(name, v)?,
                    Cell::Float(v) => d.set_item(name, v)?,
                    Cell::Text(v) => d.set_item(name, v)?,
                }
            }
            out.push(d);
        }
        Ok(out)
    }

    fn to_csv(&self) -> String {
        self.inner.to_csv()
    }

    fn __len__(&self) -> usize {
        self.inner.rows.len()
    }

    fn __repr__(&self) -> String {
        format!("Report({}, {} rows)", self.inner.benchmark, self.inner.rows.len())
    }
}

/// A simulated chip. Memory is zeroed before every run.
#[pyclass(module = "eshmem", unsendable)]
struct Machine {
    inner: core::Machine,
}

#[pymethods]
impl Machine {
    #[new]
    #[pyo3(signature = (config = None, mode = None, seed = None))]
    fn new(config: Option<&str>, mode: Option<&str>, seed: Option<u64>) -> PyResult<Self> {
        let mut cfg = match config {
            Some(text) => MachineConfig::parse(text).map_err(err)?,
            None => MachineConfig::default(),
        };
        if let Some(m) = mode {
            cfg.mode = parse_mode(m)?;
        }
        if let Some(s) = seed {
            cfg.seed = s;
        }
        Ok(Machine { inner: core::Machine::new(cfg).map_err(err)? })
    }

    #[staticmethod]
    fn from_file(path: &str) -> PyResult<Self> {
        let cfg = MachineConfig::from_file(path).map_err(err)?;
        Ok(Machine { inner: core::Machine::new(cfg).map_err(err)? })
    }

    #[getter]
    fn n_pes(&self) -> usize {
        self.inner.n_pes()
    }

    #[getter]
    fn mode(&self) -> String {
        self.inner.mode().to_string()
    }

    #[setter]
    fn set_mode(&mut self, mode: &str) -> PyResult<()> {
        self.inner.set_mode(parse_mode(mode)?);
        Ok(())
    }

    #[getter]
    fn seed(&self) -> u64 {
        self.inner.config().seed
    }

    #[setter]
    fn set_seed(&mut self, seed: u64) {
        self.inner.set_seed(seed);
    }

    #[getter]
    fn full_chip(&self) -> bool {
        self.inner.full_chip()
    }

    #[getter]
    fn descriptor(&self) -> String {
        self.inner.descriptor()
    }

    #[getter]
    fn clock_hz(&self) -> f64 {
        self.inner.config().timing.clock_hz
    }

    fn config_text(&self) -> String {
        self.inner.config().to_text()
    }

    /// Mesh coordinate `(row, col)` of a rank.
    fn coord_of_pe(&self, pe: usize) -> PyResult<(u32, u32)> {
        let c = self.inner.workgroup().coord_of_pe(pe).map_err(err)?;
        Ok((c.row, c.col))
    }

    fn pe_of_coord(&self, row: u32, col: u32) -> PyResult<usize> {
        self.inner.workgroup().pe_of_coord(Coord::new(row, col)).map_err(err)
    }

    /// Splits a global address as seen from `issuing_pe` into `(row, col, offset)`.
    #[pyo3(signature = (ga, issuing_pe = 0))]
    fn decode_address(&self, ga: u32, issuing_pe: usize) -> PyResult<(u32, u32, u32)> {
        let (c, off) = self.inner.decode_address(GlobalAddress(ga), issuing_pe).map_err(err)?;
        Ok((c.row, c.col, off))
    }

    fn read<'py>(&self, py: Python<'py>, ga: u32, len: usize) -> PyResult<Bound<'py, PyBytes>> {
        let bytes = self.inner.read(GlobalAddress(ga), len).map_err(err)?;
        Ok(PyBytes::new(py, bytes))
    }

    fn write(&mut self, ga: u32, data: &[u8]) -> PyResult<()> {
        self.inner.write(GlobalAddress(ga), data).map_err(err)
    }

    fn reset(&mut self) {
        self.inner.reset();
    }

    /// Runs a built-in program on every PE and returns the per-PE results.
    /// In timed mode the per-PE finishing cycles are returned as well.
    #[pyo3(signature = (program, n_per_pe = DEFAULT_N_PER_PE, iters = 100))]
    fn run(&mut self, py: Python<'_>, program: &str, n_per_pe: usize, iters: usize) -> PyResult<Py<PyAny>> {
        self.inner.reset();
        let seed = self.inner.config().seed;
        let report = match program {
            "ranks" => self.inner.run_spmd(programs::ranks),
            "locks" => self.inner.run_spmd(move |ctx| programs::locks(ctx, iters)),
            "reduce" => self.inner.run_spmd(programs::reduce),
            "dotprod" => self.inner.run_spmd(move |ctx| programs::dotprod(ctx, n_per_pe, seed)),
            other => {
                return Err(PyValueError::new_err(format!(
                    "unknown program '{other}' (expected one of {})",
                    programs::BUILTINS.join(", ")
                )))
            }
        }
        .map_err(err)?;
        let values = report.values().map_err(|(pe, e)| err(format!("PE {pe}: {e}")))?;
        let values = if program == "dotprod" {
            values.iter().map(|v| f32::from_bits(*v as u32)).collect::<Vec<_>>().into_pyobject(py)?.into_any()
        } else {
            values.into_pyobject(py)?.into_any()
        };
        let out = if self.inner.mode() == Mode::Timed {
            (values, report.cycles.clone()).into_pyobject(py)?.into_any().unbind()
        } else {
            values.unbind()
        };
        Ok(out)
    }

    fn dotprod(&mut self, n_per_pe: usize) -> PyResult<f32> {
        Ok(bench::run_dotprod(&mut self.inner, n_per_pe).map_err(err)?.value)
    }

    fn bench_barrier(&mut self) -> PyResult<Report> {
        Ok(Report { inner: bench::bench_barrier(&mut self.inner).map_err(err)? })
    }

    #[pyo3(signature = (sizes = None))]
    fn bench_copy(&self, sizes: Option<Vec<u64>>) -> PyResult<Report> {
        let sizes = sizes.unwrap_or_else(bench::default_copy_sizes);
        Ok(Report { inner: bench::bench_copy(&self.inner, &sizes).map_err(err)? })
    }

    #[pyo3(signature = (n_per_pe = DEFAULT_N_PER_PE))]
    fn bench_dotprod(&mut self, n_per_pe: usize) -> PyResult<Report> {
        Ok(Report { inner: bench::bench_dotprod(&mut self.inner, n_per_pe).map_err(err)? })
    }

    fn __repr__(&self) -> String {
        format!("Machine({})", self.inner.descriptor())
    }
}

/// A standalone symmetric heap, for experimenting with the allocator.
#[pyclass(module = "eshmem", unsendable)]
struct Heap {
    inner: HeapState,
}

#[pymethods]
impl Heap {
    #[new]
    #[pyo3(signature = (base = 16384, limit = 32768))]
    fn new(base: u32, limit: u32) -> PyResult<Self> {
        Ok(Heap { inner: HeapState::new(base, limit).map_err(err)? })
    }

    fn malloc(&mut self, nbytes: usize) -> PyResult<u32> {
        Ok(self.inner.alloc(nbytes).map_err(err)?.0)
    }

    fn align(&mut self, alignment: u32, nbytes: usize) -> PyResult<u32> {
        Ok(self.inner.align(alignment, nbytes).map_err(err)?.0)
    }

    fn free(&mut self, offset: u32) -> PyResult<()> {
        self.inner.free(SymAddr(offset)).map_err(err)
    }

    /// Resizes the top block; returns `None` when `nbytes` is zero.
    fn realloc(&mut self, offset: u32, nbytes: usize) -> PyResult<Option<u32>> {
        Ok(self.inner.realloc(SymAddr(offset), nbytes).map_err(err)?.map(|a| a.0))
    }

    #[getter]
    fn brk(&self) -> u32 {
        self.inner.brk()
    }

    fn blocks(&self) -> Vec<(u32, u32)> {
        self.inner.blocks().map(|(a, n)| (a.0, n)).collect()
    }
}

/// Global address of `offset` in the core at `(row, col)`.
#[pyfunction]
fn encode_address(row: u32, col: u32, offset: u32) -> PyResult<u32> {
    Ok(core::encode_address(Coord::new(row, col), offset).map_err(err)?.0)
}

/// Cycles for a local copy of `nbytes` with the default timing, on `engine` ("cpu" or "dma").
#[pyfunction]
#[pyo3(signature = (nbytes, engine = "cpu"))]
fn copy_cycles(nbytes: u64, engine: &str) -> PyResult<u64> {
    let engine = match engine {
        "cpu" => Engine::Cpu,
        "dma" => Engine::Dma,
        other => return Err(PyValueError::new_err(format!("unknown engine '{other}'"))),
    };
    Ok(core::TimingParams::default().copy_cycles(nbytes, engine))
}

/// Mesh hop count between two cores.
#[pyfunction]
fn hops(a: (u32, u32), b: (u32, u32)) -> u64 {
    core::hops(Coord::new(a.0, a.1), Coord::new(b.0, b.1))
}

#[pymodule]
fn eshmem(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add("EshmemError", m.py().get_type::<EshmemError>())?;
    m.add("BUILTINS", programs::BUILTINS.to_vec())?;
    m.add_class::<Machine>()?;
    m.add_class::<Report>()?;
    m.add_class::<Heap>()?;
    m.add_function(wrap_pyfunction!(encode_address, m)?)?;
    m.add_function(wrap_pyfunction!(copy_cycles, m)?)?;
    m.add_function(wrap_pyfunction!(hops, m)?)?;
    Ok(())
}
