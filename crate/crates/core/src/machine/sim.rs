//! Scheduler state shared by the PE logical processes of one run.
//!
//! Each machine interaction of a PE is a [`Request`] executed by [`Sim::issue`]
//! when the PE's future is polled. In timed mode the request schedules its
//! memory effects and the PE's resumption on the event queue; in functional
//! mode effects apply immediately and the next PE to run is drawn from the
//! seeded RNG.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;

use rand::Rng;
use rand_chacha::ChaCha8Rng;

use crate::address::{split_address, AddressError, Coord, GlobalAddress};
use crate::config::{MachineConfig, Mode};
use crate::timing::{Engine, TimingParams};

use super::trace::{TraceKind, TraceRecord};

/// Comparison used by `wait_until`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Cmp {
    Eq,
    Ne,
    Gt,
    Ge,
    Lt,
    Le,
}

impl Cmp {
    pub fn holds(self, lhs: i64, rhs: i64) -> bool {
        match self {
            Cmp::Eq => lhs == rhs,
            Cmp::Ne => lhs != rhs,
            Cmp::Gt => lhs > rhs,
            Cmp::Ge => lhs >= rhs,
            Cmp::Lt => lhs < rhs,
            Cmp::Le => lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Width {
    W32,
    W64,
}

impl Width {
    pub fn bytes(self) -> usize {
        match self {
            Width::W32 => 4,
            Width::W64 => 8,
        }
    }

    fn mask(self) -> u64 {
        match self {
            Width::W32 => u32::MAX as u64,
            Width::W64 => u64::MAX,
        }
    }
}

/// Indivisible read-modify-write operations. Each returns the prior value.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RmwOp {
    TestAndSet,
    FetchAdd(u64),
    Swap(u64),
    CompareSwap { expected: u64, new: u64 },
}

impl RmwOp {
    /// New word value given the old one, both already truncated to `width`.
    fn apply(self, old: u64, width: Width) -> u64 {
        let m = width.mask();
        match self {
            RmwOp::TestAndSet => 1,
            RmwOp::FetchAdd(d) => old.wrapping_add(d) & m,
            RmwOp::Swap(v) => v & m,
            RmwOp::CompareSwap { expected, new } => {
                if old == expected & m {
                    new & m
                } else {
                    old
                }
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Action {
    Write(Vec<u8>),
    /// Wrapping add to a little-endian 64-bit word.
    Add64(i64),
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Value {
    Unit,
    Bytes(Vec<u8>),
    Word(u64),
}

/// Condition a blocked PE waits on: a signed integer in its own memory.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WaitCond {
    pub(crate) core: usize,
    pub offset: u32,
    pub width: usize,
    pub cmp: Cmp,
    pub value: i64,
    pub(crate) quantum: u64,
}

#[derive(Debug, Clone)]
pub(crate) enum Request {
    Read { ga: GlobalAddress, len: usize },
    Write { ga: GlobalAddress, data: Vec<u8>, engine: Engine },
    Rmw { ga: GlobalAddress, op: RmwOp, width: Width },
    /// Block until the local word satisfies the comparison. `quantum` is added
    /// to the wake-up time in timed mode.
    Wait { offset: u32, width: usize, cmp: Cmp, value: i64, quantum: u64 },
    Delay(u64),
    /// Actions applied together on one core, visible `visible_after` cycles
    /// after issue; the issuer resumes after `issuer_cost`.
    Deliver { target: Coord, actions: Vec<(u32, Action)>, visible_after: u64, issuer_cost: u64 },
    /// Zero-cost access to the issuer's own memory.
    LocalRead { offset: u32, len: usize },
    LocalApply { actions: Vec<(u32, Action)> },
    Wand,
    Marker { kind: TraceKind, cost: u64 },
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub(crate) enum Status {
    Ready,
    Waiting(WaitCond),
    Wand,
    Finished,
}

#[derive(Debug)]
pub(crate) struct PeState {
    pub coord: Coord,
    pub core: usize,
    pub clock: u64,
    seq: u64,
    pub status: Status,
    result: Option<Value>,
    pending_wait: Option<WaitCond>,
    pub ops: u64,
}

#[derive(Debug)]
enum EventKind {
    Resume,
    Apply { core: usize, actions: Vec<(u32, Action)> },
    Rmw { core: usize, offset: u32, op: RmwOp, width: Width },
}

#[derive(Debug)]
struct Event {
    time: u64,
    pe: usize,
    seq: u64,
    kind: EventKind,
}

impl PartialEq for Event {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}

impl Eq for Event {}

impl PartialOrd for Event {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

impl Ord for Event {
    fn cmp(&self, other: &Self) -> Ordering {
        (self.time, self.pe, self.seq).cmp(&(other.time, other.pe, other.seq))
    }
}

/// Live cores of the grid and the address checks against them.
#[derive(Debug, Clone)]
pub(crate) struct CoreMap {
    origin: Coord,
    rows: u32,
    cols: u32,
    slots: Vec<Option<usize>>,
    coords: Vec<Coord>,
    pub mem_per_core: u32,
}

impl CoreMap {
    pub fn new(cfg: &MachineConfig) -> Self {
        let mut slots = Vec::with_capacity((cfg.rows * cfg.cols) as usize);
        let mut coords = Vec::new();
        for r in 0..cfg.rows {
            for c in 0..cfg.cols {
                let coord = Coord::new(cfg.origin.row + r, cfg.origin.col + c);
                if cfg.disabled.contains(&coord) {
                    slots.push(None);
                } else {
                    slots.push(Some(coords.len()));
                    coords.push(coord);
                }
            }
        }
        CoreMap { origin: cfg.origin, rows: cfg.rows, cols: cfg.cols, slots, coords, mem_per_core: cfg.mem_per_core }
    }

    pub fn live_cores(&self) -> usize {
        self.coords.len()
    }

    pub fn coords(&self) -> &[Coord] {
        &self.coords
    }

    pub fn index_of(&self, c: Coord) -> Option<usize> {
        if c.row < self.origin.row || c.col < self.origin.col {
            return None;
        }
        let (r, col) = (c.row - self.origin.row, c.col - self.origin.col);
        if r >= self.rows || col >= self.cols {
            return None;
        }
        self.slots[(r * self.cols + col) as usize]
    }

    /// Resolves `ga` issued from `issuer` to `(core index, offset)` and checks
    /// that `[offset, offset+len)` lies inside that core's memory.
    pub fn resolve(&self, ga: GlobalAddress, issuer: Coord, len: usize) -> Result<(usize, u32), AddressError> {
        let (coord, off) = split_address(ga, issuer);
        let core = self.index_of(coord).ok_or(AddressError::Inaccessible(ga))?;
        if off >= self.mem_per_core {
            return Err(AddressError::Inaccessible(ga));
        }
        if off as u64 + len as u64 > self.mem_per_core as u64 {
            return Err(AddressError::OutOfBounds { addr: ga, len });
        }
        Ok((core, off))
    }
}

pub(crate) struct Sim {
    pub mode: Mode,
    pub timing: TimingParams,
    pub map: CoreMap,
    pub mem: Vec<Vec<u8>>,
    pub pes: Vec<PeState>,
    queue: BinaryHeap<Reverse<Event>>,
    pub runnable: Vec<usize>,
    pub rng: ChaCha8Rng,
    pub step: u64,
    pub events: u64,
    pub trace: Vec<TraceRecord>,
    wand_arrived: Vec<usize>,
    wand_latest: u64,
}

fn read_word(bytes: &[u8], width: usize) -> u64 {
    let mut buf = [0u8; 8];
    buf[..width].copy_from_slice(&bytes[..width]);
    u64::from_le_bytes(buf)
}

fn read_signed(bytes: &[u8], width: usize) -> i64 {
    let raw = read_word(bytes, width);
    let shift = 64 - 8 * width as u32;
    ((raw << shift) as i64) >> shift
}

impl Sim {
    pub fn new(mode: Mode, timing: TimingParams, map: CoreMap, mem: Vec<Vec<u8>>, pe_coords: &[Coord], rng: ChaCha8Rng) -> Self {
        let pes = pe_coords
            .iter()
            .map(|c| PeState {
                coord: *c,
                core: map.index_of(*c).expect("workgroup validated against the grid"),
                clock: 0,
                seq: 0,
                status: Status::Ready,
                result: None,
                pending_wait: None,
                ops: 0,
            })
            .collect::<Vec<_>>();
        let n = pes.len();
        let mut sim = Sim {
            mode,
            timing,
            map,
            mem,
            pes,
            queue: BinaryHeap::new(),
            runnable: Vec::new(),
            rng,
            step: 0,
            events: 0,
            trace: Vec::new(),
            wand_arrived: Vec::new(),
            wand_latest: 0,
        };
        for pe in 0..n {
            match mode {
                Mode::Timed => sim.push(0, pe, EventKind::Resume),
                Mode::Functional => sim.runnable.push(pe),
            }
        }
        sim
    }

    fn push(&mut self, time: u64, pe: usize, kind: EventKind) {
        let seq = self.pes[pe].seq;
        self.pes[pe].seq += 1;
        self.queue.push(Reverse(Event { time, pe, seq, kind }));
    }

    /// Current time as seen by `pe`.
    pub fn now(&self, pe: usize) -> u64 {
        match self.mode {
            Mode::Timed => self.pes[pe].clock,
            Mode::Functional => self.step,
        }
    }

    pub fn record(&mut self, pe: usize, kind: TraceKind) {
        let time = self.now(pe);
        self.trace.push(TraceRecord { pe, time, kind });
    }

    /// Resumes `pe` after `cost` cycles (timed) or on a later turn (functional).
    fn resume_after(&mut self, pe: usize, cost: u64) {
        if self.mode == Mode::Timed {
            let t = self.pes[pe].clock + cost;
            self.push(t, pe, EventKind::Resume);
        }
    }

    fn effect_at(&mut self, pe: usize, delay: u64, core: usize, actions: Vec<(u32, Action)>) {
        match self.mode {
            Mode::Timed => {
                let t = self.pes[pe].clock + delay;
                self.push(t, pe, EventKind::Apply { core, actions });
            }
            Mode::Functional => {
                let now = self.step;
                self.apply(core, &actions, now);
            }
        }
    }

    fn apply(&mut self, core: usize, actions: &[(u32, Action)], now: u64) {
        for (off, action) in actions {
            let off = *off as usize;
            let mem = &mut self.mem[core];
            match action {
                Action::Write(bytes) => mem[off..off + bytes.len()].copy_from_slice(bytes),
                Action::Add64(d) => {
                    let v = read_word(&mem[off..], 8).wrapping_add(*d as u64);
                    mem[off..off + 8].copy_from_slice(&v.to_le_bytes());
                }
            }
        }
        self.wake_waiters(core, now);
    }

    fn rmw(&mut self, core: usize, offset: u32, op: RmwOp, width: Width) -> u64 {
        let w = width.bytes();
        let off = offset as usize;
        let old = read_word(&self.mem[core][off..], w);
        let new = op.apply(old, width);
        self.mem[core][off..off + w].copy_from_slice(&new.to_le_bytes()[..w]);
        old
    }

    fn eval(&self, cond: &WaitCond) -> bool {
        let off = cond.offset as usize;
        cond.cmp.holds(read_signed(&self.mem[cond.core][off..], cond.width), cond.value)
    }

    fn make_ready(&mut self, pe: usize, at: u64) {
        self.pes[pe].status = Status::Ready;
        match self.mode {
            Mode::Timed => self.push(at, pe, EventKind::Resume),
            Mode::Functional => self.runnable.push(pe),
        }
    }

    fn wake_waiters(&mut self, core: usize, now: u64) {
        for pe in 0..self.pes.len() {
            let wake = match &self.pes[pe].status {
                Status::Waiting(cond) if cond.core == core && self.eval(cond) => Some(cond.quantum),
                _ => None,
            };
            if let Some(q) = wake {
                let at = self.pes[pe].clock.max(now) + q;
                self.make_ready(pe, at);
            }
        }
    }

    /// Executes a request for `pe`. On success the PE must yield; its result
    /// is collected by [`Sim::complete`] when it next runs.
    pub fn issue(&mut self, pe: usize, req: Request) -> Result<(), AddressError> {
        self.pes[pe].ops += 1;
        let me = self.pes[pe].coord;
        let my_core = self.pes[pe].core;
        let t = self.timing.clone();
        match req {
            Request::Read { ga, len } => {
                let (core, off) = self.map.resolve(ga, me, len)?;
                let data = self.mem[core][off as usize..off as usize + len].to_vec();
                let src = self.map.coords()[core];
                self.pes[pe].result = Some(Value::Bytes(data));
                self.resume_after(pe, t.remote_transfer_cycles(src, me, len.max(1) as u64, Engine::Cpu));
            }
            Request::Write { ga, data, engine } => {
                let (core, off) = self.map.resolve(ga, me, data.len())?;
                let dst = self.map.coords()[core];
                let mut cost = t.remote_transfer_cycles(me, dst, data.len().max(1) as u64, engine);
                if engine == Engine::Dma {
                    cost = t.round_to_poll(cost);
                }
                self.effect_at(pe, cost, core, vec![(off, Action::Write(data))]);
                self.pes[pe].result = Some(Value::Unit);
                self.resume_after(pe, cost);
            }
            Request::Rmw { ga, op, width } => {
                let (core, off) = self.map.resolve(ga, me, width.bytes())?;
                if !(off as usize).is_multiple_of(width.bytes()) {
                    return Err(AddressError::Misaligned { addr: ga, align: width.bytes() });
                }
                match self.mode {
                    Mode::Functional => {
                        let old = self.rmw(core, off, op, width);
                        self.wake_waiters(core, self.step);
                        self.pes[pe].result = Some(Value::Word(old));
                    }
                    Mode::Timed => {
                        let dst = self.map.coords()[core];
                        let cost = t.atomic_cycles(me, dst, width.bytes() as u64);
                        let at = self.pes[pe].clock + cost;
                        self.push(at, pe, EventKind::Rmw { core, offset: off, op, width });
                        self.push(at, pe, EventKind::Resume);
                    }
                }
            }
            Request::Wait { offset, width, cmp, value, quantum } => {
                let ga = GlobalAddress(offset);
                let (core, off) = self.map.resolve(ga, me, width)?;
                let cond = WaitCond { core, offset: off, width, cmp, value, quantum };
                if self.eval(&cond) {
                    self.pes[pe].result = Some(Value::Unit);
                    self.resume_after(pe, 0);
                } else {
                    self.pes[pe].pending_wait = Some(cond.clone());
                    self.pes[pe].status = Status::Waiting(cond);
                }
            }
            Request::Delay(c) => {
                self.pes[pe].result = Some(Value::Unit);
                self.resume_after(pe, c);
            }
            Request::Deliver { target, actions, visible_after, issuer_cost } => {
                let core = self.map.index_of(target).ok_or(AddressError::Inaccessible(GlobalAddress(0)))?;
                for (off, a) in &actions {
                    let len = match a {
                        Action::Write(b) => b.len(),
                        Action::Add64(_) => 8,
                    };
                    let ga = crate::address::encode_address(target, *off)?;
                    self.map.resolve(ga, me, len)?;
                }
                self.effect_at(pe, visible_after, core, actions);
                self.pes[pe].result = Some(Value::Unit);
                self.resume_after(pe, issuer_cost);
            }
            Request::LocalRead { offset, len } => {
                let (core, off) = self.map.resolve(GlobalAddress(offset), me, len)?;
                let data = self.mem[core][off as usize..off as usize + len].to_vec();
                self.pes[pe].result = Some(Value::Bytes(data));
                self.resume_after(pe, 0);
            }
            Request::LocalApply { actions } => {
                for (off, a) in &actions {
                    let len = match a {
                        Action::Write(b) => b.len(),
                        Action::Add64(_) => 8,
                    };
                    self.map.resolve(GlobalAddress(*off), me, len)?;
                }
                let now = self.now(pe);
                self.apply(my_core, &actions, now);
                self.pes[pe].result = Some(Value::Unit);
                self.resume_after(pe, 0);
            }
            Request::Wand => self.wand_arrive(pe),
            Request::Marker { kind, cost } => {
                self.record(pe, kind);
                self.pes[pe].result = Some(Value::Unit);
                self.resume_after(pe, cost);
            }
        }
        Ok(())
    }

    fn wand_arrive(&mut self, pe: usize) {
        self.pes[pe].result = Some(Value::Unit);
        self.wand_arrived.push(pe);
        self.wand_latest = self.wand_latest.max(self.pes[pe].clock);
        if self.wand_arrived.len() < self.pes.len() {
            self.pes[pe].status = Status::Wand;
            return;
        }
        let release = self.wand_latest + self.timing.wand_barrier_cycles;
        let arrived = std::mem::take(&mut self.wand_arrived);
        self.wand_latest = 0;
        for p in arrived {
            if p == pe {
                self.resume_after(pe, release - self.pes[pe].clock);
            } else {
                self.make_ready(p, release);
            }
        }
    }

    /// Collects the result of the outstanding request of `pe`. A satisfied
    /// wait is re-checked here; if the condition no longer holds the PE blocks
    /// again and `None` is returned.
    pub fn complete(&mut self, pe: usize) -> Option<Value> {
        if let Some(cond) = self.pes[pe].pending_wait.take() {
            if !self.eval(&cond) {
                self.pes[pe].pending_wait = Some(cond.clone());
                self.pes[pe].status = Status::Waiting(cond);
                return None;
            }
            return Some(Value::Unit);
        }
        self.pes[pe].result.take()
    }

    /// Advances timed mode to the next PE resumption, applying memory effects
    /// on the way. Returns `None` when the queue is exhausted.
    pub fn next_timed(&mut self) -> Option<usize> {
        while let Some(Reverse(ev)) = self.queue.pop() {
            self.events += 1;
            match ev.kind {
                EventKind::Resume => {
                    self.pes[ev.pe].clock = ev.time;
                    return Some(ev.pe);
                }
                EventKind::Apply { core, actions } => self.apply(core, &actions, ev.time),
                EventKind::Rmw { core, offset, op, width } => {
                    let old = self.rmw(core, offset, op, width);
                    self.pes[ev.pe].result = Some(Value::Word(old));
                    self.wake_waiters(core, ev.time);
                }
            }
        }
        None
    }

    /// Picks the next runnable PE in functional mode.
    pub fn next_functional(&mut self) -> Option<usize> {
        if self.runnable.is_empty() {
            return None;
        }
        let i = self.rng.random_range(0..self.runnable.len());
        Some(self.runnable[i])
    }

    /// Drops PEs that blocked or finished during their last turn.
    pub fn prune_runnable(&mut self) {
        let pes = &self.pes;
        self.runnable.retain(|p| pes[*p].status == Status::Ready);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rmw_semantics() {
        assert_eq!(RmwOp::TestAndSet.apply(0, Width::W32), 1);
        assert_eq!(RmwOp::FetchAdd(5).apply(37, Width::W64), 42);
        assert_eq!(RmwOp::FetchAdd(1).apply(u32::MAX as u64, Width::W32), 0);
        assert_eq!(RmwOp::CompareSwap { expected: 7, new: 9 }.apply(7, Width::W32), 9);
        assert_eq!(RmwOp::CompareSwap { expected: 7, new: 9 }.apply(8, Width::W32), 8);
        assert_eq!(RmwOp::Swap(3).apply(8, Width::W64), 3);
    }

    #[test]
    fn signed_reads() {
        assert_eq!(read_signed(&[0xff, 0, 0, 0], 1), -1);
        assert_eq!(read_signed(&0xfffe_u16.to_le_bytes(), 2), -2);
        assert_eq!(read_signed(&42i32.to_le_bytes(), 4), 42);
        assert_eq!(read_signed(&(-5i64).to_le_bytes(), 8), -5);
    }

    #[test]
    fn core_map_resolution() {
        let cfg = MachineConfig { disabled: [Coord::new(33, 9)].into(), ..Default::default() };
        let map = CoreMap::new(&cfg);
        assert_eq!(map.live_cores(), 15);
        let ga = crate::address::encode_address(Coord::new(33, 9), 0).unwrap();
        assert_eq!(map.resolve(ga, Coord::new(32, 8), 4), Err(AddressError::Inaccessible(ga)));
        assert_eq!(map.resolve(GlobalAddress(0xFFF0_0000), Coord::new(32, 8), 4), Err(AddressError::Inaccessible(GlobalAddress(0xFFF0_0000))));
        let ga = crate::address::encode_address(Coord::new(32, 8), 32768 - 8).unwrap();
        assert!(matches!(map.resolve(ga, Coord::new(32, 8), 16), Err(AddressError::OutOfBounds { .. })));
        assert_eq!(map.resolve(GlobalAddress(0x10), Coord::new(33, 10), 4), Ok((5, 0x10)));
    }
}
