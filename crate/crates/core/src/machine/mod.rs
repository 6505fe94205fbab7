//! The simulated chip: core memories, the PGAS address space, and the SPMD
//! executor that runs one logical process per PE.
//!
//! PE programs are async closures receiving a [`ShmemCtx`]. Every awaited
//! runtime call is one scheduling point, so a run is a deterministic function
//! of the configuration, the seed, and the program.

mod sim;
pub mod trace;

use std::cell::RefCell;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll, Waker};

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::address::{split_address, AddressError, Coord, GlobalAddress};
use crate::config::{ConfigError, MachineConfig, Mode};
use crate::shmem::{Layout, ShmemCtx, ShmemError};
use crate::topology::Workgroup;

pub(crate) use sim::{Action, Request, Sim, Value};
pub use sim::{Cmp, RmwOp, WaitCond, Width};
pub use trace::{check_barrier_safety, BarrierScope, BarrierTag, TraceKind, TraceRecord};

use sim::{CoreMap, Status};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct BlockedPe {
    pub pe: usize,
    pub waiting_on: String,
}

#[derive(Debug, Error)]
pub enum MachineError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error("deadlock: {}", describe_deadlock(.blocked, .failed))]
    Deadlock { blocked: Vec<BlockedPe>, failed: Vec<(usize, ShmemError)> },
    #[error("run exceeded {0} scheduler steps")]
    StepLimit(u64),
    #[error("machine must be reset before another run")]
    NotReset,
}

fn describe_deadlock(blocked: &[BlockedPe], failed: &[(usize, ShmemError)]) -> String {
    let mut parts: Vec<String> = blocked.iter().map(|b| format!("PE {} blocked on {}", b.pe, b.waiting_on)).collect();
    parts.extend(failed.iter().map(|(pe, e)| format!("PE {pe} failed: {e}")));
    parts.join("; ")
}

/// Outcome of one SPMD run.
#[derive(Debug, Clone, PartialEq)]
pub struct MachineReport {
    pub mode: Mode,
    /// Per-PE program result, indexed by rank.
    pub exits: Vec<Result<i64, ShmemError>>,
    /// Per-PE clock at exit (all zero in functional mode).
    pub cycles: Vec<u64>,
    /// Per-PE count of runtime requests.
    pub ops: Vec<u64>,
    pub steps: u64,
    /// Timed-mode events processed.
    pub events: u64,
    pub trace: Vec<TraceRecord>,
}

impl MachineReport {
    /// The exit values, or the first PE failure.
    pub fn values(&self) -> Result<Vec<i64>, (usize, ShmemError)> {
        self.exits
            .iter()
            .enumerate()
            .map(|(pe, r)| r.clone().map_err(|e| (pe, e)))
            .collect()
    }

    pub fn max_cycles(&self) -> u64 {
        self.cycles.iter().copied().max().unwrap_or(0)
    }
}

pub struct Machine {
    config: MachineConfig,
    workgroup: Workgroup,
    map: CoreMap,
    mem: Vec<Vec<u8>>,
    dirty: bool,
}

impl std::fmt::Debug for Machine {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Machine")
            .field("grid", &format_args!("{}x{}@{}", self.config.rows, self.config.cols, self.config.origin))
            .field("live_cores", &self.map.live_cores())
            .field("n_pes", &self.workgroup.n_pes())
            .field("mode", &self.config.mode)
            .finish()
    }
}

impl Machine {
    /// Builds a machine with zeroed memories.
    pub fn new(config: MachineConfig) -> Result<Self, MachineError> {
        config.validate()?;
        let workgroup = config.workgroup()?;
        let map = CoreMap::new(&config);
        let mem = vec![vec![0u8; config.mem_per_core as usize]; map.live_cores()];
        Ok(Machine { config, workgroup, map, mem, dirty: false })
    }

    pub fn config(&self) -> &MachineConfig {
        &self.config
    }

    pub fn workgroup(&self) -> &Workgroup {
        &self.workgroup
    }

    pub fn mode(&self) -> Mode {
        self.config.mode
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.config.mode = mode;
    }

    pub fn set_seed(&mut self, seed: u64) {
        self.config.seed = seed;
    }

    pub fn n_pes(&self) -> usize {
        self.workgroup.n_pes()
    }

    pub fn live_cores(&self) -> usize {
        self.map.live_cores()
    }

    pub fn total_memory(&self) -> usize {
        self.mem.iter().map(Vec::len).sum()
    }

    /// Short human-readable description, e.g. `4x4@(32,8) 16 PEs timed`.
    pub fn descriptor(&self) -> String {
        format!(
            "{}x{}@{} {} PEs {}",
            self.config.rows,
            self.config.cols,
            self.config.origin,
            self.n_pes(),
            self.config.mode
        )
    }

    /// True when `barrier_all` can use the hardware wait-on-AND.
    pub fn full_chip(&self) -> bool {
        self.workgroup.covers_full_grid(self.config.origin, self.config.rows, self.config.cols)
    }

    /// Splits `ga` as seen from `issuing_pe`, checking that it names live memory.
    pub fn decode_address(&self, ga: GlobalAddress, issuing_pe: usize) -> Result<(Coord, u32), MachineError> {
        let issuer = self.workgroup.coord_of_pe(issuing_pe).map_err(ConfigError::from)?;
        self.map.resolve(ga, issuer, 0)?;
        Ok(split_address(ga, issuer))
    }

    /// Host-side view of one core's memory.
    pub fn core_memory(&self, coord: Coord) -> Option<&[u8]> {
        self.map.index_of(coord).map(|i| self.mem[i].as_slice())
    }

    /// All live core memories in row-major grid order.
    pub fn memory_image(&self) -> &[Vec<u8>] {
        &self.mem
    }

    /// Host-side read through a global address (no alias resolution).
    pub fn read(&self, ga: GlobalAddress, len: usize) -> Result<&[u8], MachineError> {
        if ga.is_local_alias() {
            return Err(AddressError::Inaccessible(ga).into());
        }
        let (core, off) = self.map.resolve(ga, ga.coord_field(), len)?;
        Ok(&self.mem[core][off as usize..off as usize + len])
    }

    /// Host-side preload through a global address.
    pub fn write(&mut self, ga: GlobalAddress, bytes: &[u8]) -> Result<(), MachineError> {
        if ga.is_local_alias() {
            return Err(AddressError::Inaccessible(ga).into());
        }
        let (core, off) = self.map.resolve(ga, ga.coord_field(), bytes.len())?;
        self.mem[core][off as usize..off as usize + bytes.len()].copy_from_slice(bytes);
        Ok(())
    }

    /// Zeroes every memory so the machine can run again.
    pub fn reset(&mut self) {
        for m in &mut self.mem {
            m.fill(0);
        }
        self.dirty = false;
    }

    fn layout(&self) -> Layout {
        let cfg = &self.config;
        Layout {
            heap: (cfg.heap_base, cfg.heap_limit()),
            statics: cfg.static_area(),
            internal: cfg.internal_area(),
            full_chip: self.full_chip(),
            mode: cfg.mode,
            timing: cfg.timing.clone(),
        }
    }

    /// Runs `program` once on every PE of the workgroup.
    pub fn run_spmd<P, F>(&mut self, program: P) -> Result<MachineReport, MachineError>
    where
        P: Fn(ShmemCtx) -> F,
        F: Future<Output = Result<i64, ShmemError>> + 'static,
    {
        if self.dirty {
            return Err(MachineError::NotReset);
        }
        self.dirty = true;
        let n = self.n_pes();
        let mode = self.config.mode;
        let sim = Sim::new(
            mode,
            self.config.timing.clone(),
            self.map.clone(),
            std::mem::take(&mut self.mem),
            self.workgroup.coords(),
            ChaCha8Rng::seed_from_u64(self.config.seed),
        );
        let sim = Rc::new(RefCell::new(sim));
        let layout = Rc::new(self.layout());
        let wg = Rc::new(self.workgroup.clone());
        let mut tasks: Vec<Option<Pin<Box<F>>>> = (0..n)
            .map(|pe| Some(Box::pin(program(ShmemCtx::new(pe, sim.clone(), layout.clone(), wg.clone())))))
            .collect();
        let mut exits: Vec<Option<Result<i64, ShmemError>>> = vec![None; n];
        let mut cx = Context::from_waker(Waker::noop());
        let max_steps = self.config.max_steps;
        let mut overrun = false;

        loop {
            let next = {
                let mut s = sim.borrow_mut();
                let next = match mode {
                    Mode::Timed => s.next_timed(),
                    Mode::Functional => s.next_functional(),
                };
                if next.is_some() {
                    s.step += 1;
                    if s.step > max_steps {
                        overrun = true;
                    }
                }
                next
            };
            let Some(pe) = next else { break };
            if overrun {
                break;
            }
            let task = tasks[pe].as_mut().expect("finished PE was scheduled");
            if let Poll::Ready(out) = task.as_mut().poll(&mut cx) {
                exits[pe] = Some(out);
                tasks[pe] = None;
                sim.borrow_mut().pes[pe].status = Status::Finished;
            }
            if mode == Mode::Functional {
                sim.borrow_mut().prune_runnable();
            }
        }

        drop(tasks);
        let sim = match Rc::try_unwrap(sim) {
            Ok(cell) => cell.into_inner(),
            Err(_) => unreachable!("PE contexts outlived their tasks"),
        };
        self.mem = sim.mem;
        if overrun {
            return Err(MachineError::StepLimit(max_steps));
        }

        let unfinished: Vec<usize> = (0..n).filter(|pe| exits[*pe].is_none()).collect();
        if !unfinished.is_empty() {
            let blocked = unfinished
                .into_iter()
                .map(|pe| BlockedPe {
                    pe,
                    waiting_on: match &sim.pes[pe].status {
                        Status::Waiting(c) => format!(
                            "wait_until(offset {:#x}, {}-byte word {:?} {})",
                            c.offset, c.width, c.cmp, c.value
                        ),
                        Status::Wand => "hardware barrier".to_string(),
                        _ => "a foreign future".to_string(),
                    },
                })
                .collect();
            let failed = exits
                .iter()
                .enumerate()
                .filter_map(|(pe, e)| match e {
                    Some(Err(err)) => Some((pe, err.clone())),
                    _ => None,
                })
                .collect();
            return Err(MachineError::Deadlock { blocked, failed });
        }

        let cycles = match mode {
            Mode::Timed => sim.pes.iter().map(|p| p.clock).collect(),
            Mode::Functional => vec![0; n],
        };
        Ok(MachineReport {
            mode,
            exits: exits.into_iter().map(|e| e.expect("all PEs finished")).collect(),
            cycles,
            ops: sim.pes.iter().map(|p| p.ops).collect(),
            steps: sim.step,
            events: sim.events,
            trace: sim.trace,
        })
    }
}
