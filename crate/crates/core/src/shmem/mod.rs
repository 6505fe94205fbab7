//! The per-PE runtime surface: accessibility queries, the symmetric heap,
//! put/get, atomics, waits, ordering points, and locks.
//!
//! Every `async` method is one scheduling point of the calling PE. Calls of a
//! single PE must be awaited one at a time; joining two of them concurrently
//! inside one PE program is not supported.

pub mod elem;

use std::cell::{Ref, RefCell};
use std::collections::HashMap;
use std::future::Future;
use std::pin::Pin;
use std::rc::Rc;
use std::task::{Context, Poll};

use thiserror::Error;

use crate::address::{encode_address, AddressError, Coord, GlobalAddress, SymAddr};
use crate::config::Mode;
use crate::heap::{HeapError, HeapState};
use crate::machine::{Action, BarrierScope, Cmp, Request, RmwOp, Sim, TraceKind, Value, Width};
use crate::timing::{Engine, TimingParams};
use crate::topology::Workgroup;

pub use elem::{decode_slice, encode_slice, AtomicElem, Elem, ElemType, IntElem, ReduceKind};

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum ShmemError {
    #[error("PE {0} is not accessible")]
    InvalidPe(usize),
    #[error("symmetric range {addr}+{len} is not accessible on PE {pe}")]
    Inaccessible { addr: SymAddr, len: usize, pe: usize },
    #[error(transparent)]
    Address(#[from] AddressError),
    #[error(transparent)]
    Heap(#[from] HeapError),
    #[error("strides must be at least 1")]
    BadStride,
    #[error("{addr} is not {align}-byte aligned")]
    Misaligned { addr: SymAddr, align: usize },
    #[error("invalid active set: {0}")]
    InvalidActiveSet(String),
    #[error("PE {0} is not a member of the active set")]
    NotMember(usize),
    #[error("pSync holds {got} words, {needed} required")]
    SyncTooSmall { needed: usize, got: usize },
    #[error("pWrk holds {got} elements, at least {needed} required")]
    InsufficientWork { needed: usize, got: usize },
    #[error("pSync word {index} holds {value:#x}; it was not reset or is shared with a mismatched call")]
    CorruptedSync { index: usize, value: i64 },
    #[error("reduction source and destination overlap")]
    Overlap,
    #[error("{op:?} is not defined for {ty}")]
    UnsupportedOp { op: ReduceKind, ty: &'static str },
    #[error("{0}")]
    Program(String),
}

/// Memory layout and cost parameters shared by all PEs of a run.
#[derive(Debug, Clone)]
pub struct Layout {
    pub heap: (u32, u32),
    pub statics: (u32, u32),
    pub internal: (u32, u32),
    pub full_chip: bool,
    pub mode: Mode,
    pub timing: TimingParams,
}

/// One outstanding request: issued on first poll, collected on the next.
struct Op<'a> {
    sim: &'a RefCell<Sim>,
    pe: usize,
    req: Option<Request>,
}

impl Future for Op<'_> {
    type Output = Result<Value, AddressError>;

    fn poll(self: Pin<&mut Self>, _cx: &mut Context<'_>) -> Poll<Self::Output> {
        let this = self.get_mut();
        let mut sim = this.sim.borrow_mut();
        match this.req.take() {
            Some(req) => match sim.issue(this.pe, req) {
                Ok(()) => Poll::Pending,
                Err(e) => Poll::Ready(Err(e)),
            },
            None => match sim.complete(this.pe) {
                Some(v) => Poll::Ready(Ok(v)),
                None => Poll::Pending,
            },
        }
    }
}

/// Handle a PE program uses to reach the runtime.
pub struct ShmemCtx {
    pub(crate) pe: usize,
    pub(crate) sim: Rc<RefCell<Sim>>,
    pub(crate) layout: Rc<Layout>,
    pub(crate) wg: Rc<Workgroup>,
    heap: RefCell<HeapState>,
    statics: RefCell<HeapState>,
    pub(crate) barrier_seq: RefCell<HashMap<BarrierScope, u64>>,
    pub(crate) epochs: RefCell<HashMap<(u32, u32, BarrierScope), u64>>,
}

impl ShmemCtx {
    pub(crate) fn new(pe: usize, sim: Rc<RefCell<Sim>>, layout: Rc<Layout>, wg: Rc<Workgroup>) -> Self {
        let heap = HeapState::new(layout.heap.0, layout.heap.1).expect("heap bounds validated with the config");
        let statics = HeapState::new(layout.statics.0, layout.statics.1).expect("static bounds validated with the config");
        ShmemCtx {
            pe,
            sim,
            layout,
            wg,
            heap: RefCell::new(heap),
            statics: RefCell::new(statics),
            barrier_seq: RefCell::new(HashMap::new()),
            epochs: RefCell::new(HashMap::new()),
        }
    }

    pub fn my_pe(&self) -> usize {
        self.pe
    }

    pub fn n_pes(&self) -> usize {
        self.wg.n_pes()
    }

    pub fn mode(&self) -> Mode {
        self.layout.mode
    }

    pub fn timing(&self) -> &TimingParams {
        &self.layout.timing
    }

    pub fn workgroup(&self) -> &Workgroup {
        &self.wg
    }

    pub fn coord(&self) -> Coord {
        self.wg.coords()[self.pe]
    }

    /// Cycle clock in timed mode, scheduler step in functional mode.
    pub fn now(&self) -> u64 {
        self.sim.borrow().now(self.pe)
    }

    /// Records a labelled point in the event trace.
    pub fn mark(&self, label: &'static str) {
        self.sim.borrow_mut().record(self.pe, TraceKind::Mark(label));
    }

    pub fn pe_accessible(&self, pe: usize) -> bool {
        pe < self.n_pes()
    }

    pub fn addr_accessible(&self, addr: SymAddr, pe: usize) -> bool {
        self.pe_accessible(pe) && self.sym_range_ok(addr, 1)
    }

    fn sym_range_ok(&self, addr: SymAddr, len: usize) -> bool {
        let end = addr.0 as u64 + len.max(1) as u64;
        let within = |(lo, hi): (u32, u32)| addr.0 >= lo && end <= hi as u64;
        within(self.layout.heap) || within(self.layout.statics)
    }

    pub(crate) fn check_pe(&self, pe: usize) -> Result<Coord, ShmemError> {
        self.wg.coord_of_pe(pe).map_err(|_| ShmemError::InvalidPe(pe))
    }

    /// Global address of `[addr, addr+len)` on `pe`, after range checks.
    pub fn remote_address(&self, addr: SymAddr, len: usize, pe: usize) -> Result<GlobalAddress, ShmemError> {
        let coord = self.check_pe(pe)?;
        if !self.sym_range_ok(addr, len) {
            return Err(ShmemError::Inaccessible { addr, len, pe });
        }
        Ok(encode_address(coord, addr.0)?)
    }

    fn check_local(&self, addr: SymAddr, len: usize) -> Result<(), ShmemError> {
        if self.sym_range_ok(addr, len) {
            Ok(())
        } else {
            Err(ShmemError::Inaccessible { addr, len, pe: self.pe })
        }
    }

    pub(crate) async fn call(&self, req: Request) -> Result<Value, ShmemError> {
        Ok(Op { sim: &self.sim, pe: self.pe, req: Some(req) }.await?)
    }

    // Symmetric heap. Identical call sequences on every PE give identical offsets.

    pub fn malloc(&self, nbytes: usize) -> Result<SymAddr, ShmemError> {
        Ok(self.heap.borrow_mut().alloc(nbytes)?)
    }

    pub fn align(&self, alignment: u32, nbytes: usize) -> Result<SymAddr, ShmemError> {
        Ok(self.heap.borrow_mut().align(alignment, nbytes)?)
    }

    pub fn free(&self, addr: SymAddr) -> Result<(), ShmemError> {
        Ok(self.heap.borrow_mut().free(addr)?)
    }

    /// `nbytes == 0` frees the block and returns `None`.
    pub fn realloc(&self, addr: SymAddr, nbytes: usize) -> Result<Option<SymAddr>, ShmemError> {
        Ok(self.heap.borrow_mut().realloc(addr, nbytes)?)
    }

    pub fn heap(&self) -> Ref<'_, HeapState> {
        self.heap.borrow()
    }

    /// Allocates from the zero-initialized static symmetric segment, the
    /// analogue of a global array in the program image. Never freed.
    pub fn static_alloc(&self, nbytes: usize) -> Result<SymAddr, ShmemError> {
        Ok(self.statics.borrow_mut().alloc(nbytes)?)
    }

    // Data movement.

    pub async fn put<T: Elem>(&self, dest: SymAddr, src: &[T], pe: usize) -> Result<(), ShmemError> {
        self.put_with(dest, src, pe, Engine::Cpu).await
    }

    /// Block put through the DMA engine.
    pub async fn put_dma<T: Elem>(&self, dest: SymAddr, src: &[T], pe: usize) -> Result<(), ShmemError> {
        self.put_with(dest, src, pe, Engine::Dma).await
    }

    async fn put_with<T: Elem>(&self, dest: SymAddr, src: &[T], pe: usize, engine: Engine) -> Result<(), ShmemError> {
        let data = encode_slice(src);
        let ga = self.remote_address(dest, data.len(), pe)?;
        if data.is_empty() {
            return Ok(());
        }
        self.call(Request::Write { ga, data, engine }).await?;
        Ok(())
    }

    pub async fn p<T: Elem>(&self, dest: SymAddr, value: T, pe: usize) -> Result<(), ShmemError> {
        self.put(dest, &[value], pe).await
    }

    pub async fn get<T: Elem>(&self, src: SymAddr, nelems: usize, pe: usize) -> Result<Vec<T>, ShmemError> {
        let len = nelems * T::TYPE.size();
        let ga = self.remote_address(src, len, pe)?;
        if len == 0 {
            return Ok(Vec::new());
        }
        match self.call(Request::Read { ga, len }).await? {
            Value::Bytes(b) => Ok(decode_slice(&b)),
            v => unreachable!("read returned {v:?}"),
        }
    }

    pub async fn g<T: Elem>(&self, src: SymAddr, pe: usize) -> Result<T, ShmemError> {
        Ok(self.get::<T>(src, 1, pe).await?[0])
    }

    /// Strided put: `src[k*src_stride]` goes to element `k*dest_stride` of `dest`.
    pub async fn iput<T: Elem>(
        &self,
        dest: SymAddr,
        src: &[T],
        dest_stride: usize,
        src_stride: usize,
        nelems: usize,
        pe: usize,
    ) -> Result<(), ShmemError> {
        if dest_stride == 0 || src_stride == 0 {
            return Err(ShmemError::BadStride);
        }
        if nelems == 0 {
            return Ok(());
        }
        let size = T::TYPE.size();
        if (nelems - 1) * src_stride >= src.len() {
            return Err(ShmemError::Program(format!(
                "strided source index {} exceeds local buffer of {}",
                (nelems - 1) * src_stride,
                src.len()
            )));
        }
        self.remote_address(dest, ((nelems - 1) * dest_stride + 1) * size, pe)?;
        for k in 0..nelems {
            self.p(dest.add(k * dest_stride * size), src[k * src_stride], pe).await?;
        }
        Ok(())
    }

    /// Strided get into a local buffer.
    pub async fn iget<T: Elem>(
        &self,
        dest: &mut [T],
        src: SymAddr,
        dest_stride: usize,
        src_stride: usize,
        nelems: usize,
        pe: usize,
    ) -> Result<(), ShmemError> {
        if dest_stride == 0 || src_stride == 0 {
            return Err(ShmemError::BadStride);
        }
        if nelems == 0 {
            return Ok(());
        }
        let size = T::TYPE.size();
        if (nelems - 1) * dest_stride >= dest.len() {
            return Err(ShmemError::Program(format!(
                "strided destination index {} exceeds local buffer of {}",
                (nelems - 1) * dest_stride,
                dest.len()
            )));
        }
        self.remote_address(src, ((nelems - 1) * src_stride + 1) * size, pe)?;
        for k in 0..nelems {
            dest[k * dest_stride] = self.g(src.add(k * src_stride * size), pe).await?;
        }
        Ok(())
    }

    // Raw machine access by global address.

    pub async fn mem_read(&self, ga: GlobalAddress, len: usize) -> Result<Vec<u8>, ShmemError> {
        match self.call(Request::Read { ga, len }).await? {
            Value::Bytes(b) => Ok(b),
            v => unreachable!("read returned {v:?}"),
        }
    }

    pub async fn mem_write(&self, ga: GlobalAddress, bytes: &[u8]) -> Result<(), ShmemError> {
        self.call(Request::Write { ga, data: bytes.to_vec(), engine: Engine::Cpu }).await?;
        Ok(())
    }

    /// Returns the word's prior value.
    pub async fn atomic_rmw(&self, ga: GlobalAddress, op: RmwOp, width: Width) -> Result<u64, ShmemError> {
        match self.call(Request::Rmw { ga, op, width }).await? {
            Value::Word(w) => Ok(w),
            v => unreachable!("atomic returned {v:?}"),
        }
    }

    // Atomics.

    async fn atomic<T: AtomicElem>(&self, dest: SymAddr, op: RmwOp, pe: usize) -> Result<T, ShmemError> {
        let size = T::TYPE.size();
        if !(dest.0 as usize).is_multiple_of(size) {
            return Err(ShmemError::Misaligned { addr: dest, align: size });
        }
        let ga = self.remote_address(dest, size, pe)?;
        Ok(T::from_bits(self.atomic_rmw(ga, op, T::WIDTH).await?))
    }

    pub async fn atomic_fetch_add<T: AtomicElem>(&self, dest: SymAddr, value: T, pe: usize) -> Result<T, ShmemError> {
        self.atomic(dest, RmwOp::FetchAdd(value.to_bits()), pe).await
    }

    pub async fn atomic_add<T: AtomicElem>(&self, dest: SymAddr, value: T, pe: usize) -> Result<(), ShmemError> {
        self.atomic_fetch_add(dest, value, pe).await.map(|_| ())
    }

    pub async fn atomic_fetch_inc<T: AtomicElem>(&self, dest: SymAddr, pe: usize) -> Result<T, ShmemError> {
        self.atomic(dest, RmwOp::FetchAdd(1), pe).await
    }

    pub async fn atomic_inc<T: AtomicElem>(&self, dest: SymAddr, pe: usize) -> Result<(), ShmemError> {
        self.atomic_fetch_inc::<T>(dest, pe).await.map(|_| ())
    }

    pub async fn atomic_swap<T: AtomicElem>(&self, dest: SymAddr, value: T, pe: usize) -> Result<T, ShmemError> {
        self.atomic(dest, RmwOp::Swap(value.to_bits()), pe).await
    }

    pub async fn atomic_compare_swap<T: AtomicElem>(
        &self,
        dest: SymAddr,
        expected: T,
        new: T,
        pe: usize,
    ) -> Result<T, ShmemError> {
        self.atomic(dest, RmwOp::CompareSwap { expected: expected.to_bits(), new: new.to_bits() }, pe).await
    }

    // Point-to-point synchronization.

    /// Blocks until the local word at `addr` satisfies `cmp value`.
    pub async fn wait_until<T: IntElem>(&self, addr: SymAddr, cmp: Cmp, value: T) -> Result<(), ShmemError> {
        let size = T::TYPE.size();
        self.check_local(addr, size)?;
        let quantum = self.layout.timing.poll_quantum_cycles;
        self.wait_word(addr.0, size, cmp, value.to_i64(), quantum).await
    }

    pub(crate) async fn wait_word(&self, offset: u32, width: usize, cmp: Cmp, value: i64, quantum: u64) -> Result<(), ShmemError> {
        self.call(Request::Wait { offset, width, cmp, value, quantum }).await?;
        Ok(())
    }

    pub async fn fence(&self) -> Result<(), ShmemError> {
        let cost = self.layout.timing.fence_cycles;
        self.call(Request::Marker { kind: TraceKind::Fence, cost }).await?;
        Ok(())
    }

    pub async fn quiet(&self) -> Result<(), ShmemError> {
        let cost = self.layout.timing.fence_cycles;
        self.call(Request::Marker { kind: TraceKind::Quiet, cost }).await?;
        Ok(())
    }

    // Locks: a 32-bit word on PE 0, 0 = free.

    fn lock_address(&self, lock: SymAddr) -> Result<GlobalAddress, ShmemError> {
        if !lock.0.is_multiple_of(4) {
            return Err(ShmemError::Misaligned { addr: lock, align: 4 });
        }
        self.remote_address(lock, 4, 0)
    }

    pub async fn set_lock(&self, lock: SymAddr) -> Result<(), ShmemError> {
        let ga = self.lock_address(lock)?;
        let t = &self.layout.timing;
        let mut backoff = t.lock_backoff_initial_cycles;
        while self.atomic_rmw(ga, RmwOp::TestAndSet, Width::W32).await? != 0 {
            if self.layout.mode == Mode::Timed {
                self.delay(backoff).await?;
                backoff = (backoff * 2).min(t.lock_backoff_cap_cycles);
            }
        }
        Ok(())
    }

    /// One acquisition attempt. Returns `false` when the lock was acquired.
    pub async fn test_lock(&self, lock: SymAddr) -> Result<bool, ShmemError> {
        let ga = self.lock_address(lock)?;
        Ok(self.atomic_rmw(ga, RmwOp::TestAndSet, Width::W32).await? != 0)
    }

    /// Releases the lock. Releasing a lock the caller does not hold is not detected.
    pub async fn clear_lock(&self, lock: SymAddr) -> Result<(), ShmemError> {
        let ga = self.lock_address(lock)?;
        self.call(Request::Write { ga, data: vec![0; 4], engine: Engine::Cpu }).await?;
        Ok(())
    }

    // Local work.

    /// Reads the caller's own symmetric memory at no cost.
    pub async fn load_local<T: Elem>(&self, addr: SymAddr, nelems: usize) -> Result<Vec<T>, ShmemError> {
        let len = nelems * T::TYPE.size();
        self.check_local(addr, len)?;
        Ok(decode_slice(&self.local_read(addr.0, len).await?))
    }

    /// Writes the caller's own symmetric memory at no cost.
    pub async fn store_local<T: Elem>(&self, addr: SymAddr, vals: &[T]) -> Result<(), ShmemError> {
        let data = encode_slice(vals);
        self.check_local(addr, data.len())?;
        self.local_apply(vec![(addr.0, Action::Write(data))]).await
    }

    pub(crate) async fn local_read(&self, offset: u32, len: usize) -> Result<Vec<u8>, ShmemError> {
        match self.call(Request::LocalRead { offset, len }).await? {
            Value::Bytes(b) => Ok(b),
            v => unreachable!("local read returned {v:?}"),
        }
    }

    pub(crate) async fn local_apply(&self, actions: Vec<(u32, Action)>) -> Result<(), ShmemError> {
        self.call(Request::LocalApply { actions }).await?;
        Ok(())
    }

    /// Advances the caller's clock; a plain yield in functional mode.
    pub async fn delay(&self, cycles: u64) -> Result<(), ShmemError> {
        self.call(Request::Delay(cycles)).await?;
        Ok(())
    }

    /// Charges the time of `flops` floating-point operations.
    pub async fn compute(&self, flops: u64) -> Result<(), ShmemError> {
        self.delay(self.layout.timing.compute_cycles(flops)).await
    }
}
