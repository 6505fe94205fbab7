//! Barriers and reductions.
//!
//! Synchronization words are counting flags: a signal adds `1 + (tag << 8)`
//! to the partner's word, the receiver waits for a positive value and then
//! subtracts the same amount. A reset word holds [`SYNC_VALUE`]. The tag
//! separates barriers from reductions and reductions of different lengths, so
//! a pSync left dirty or shared by mismatched calls is reported at entry.
//!
//! As with any 1.2-style collective, a pSync array may be reused by the next
//! call of the same kind directly, but switching it between barriers and
//! reductions needs an intervening `barrier_all`.

use crate::address::{encode_address, SymAddr};
use crate::config::Mode;
use crate::machine::{Action, BarrierScope, BarrierTag, Cmp, Request, TraceKind};
use crate::shmem::{decode_slice, encode_slice, Elem, ReduceKind, ShmemCtx, ShmemError};
use crate::timing::Engine;

/// Value of every pSync word between collective calls.
pub const SYNC_VALUE: i64 = 0;

/// Minimum pWrk length in elements, as in OpenSHMEM 1.2.
pub const REDUCE_MIN_WRKDATA_SIZE: usize = 16;

const BARRIER_TAG: i64 = 0;
const TAG_MASK: i64 = (1 << 40) - 1;

// Internal words, as offsets into the runtime's reserved sync area.
const INTERNAL_DISSEMINATION: u32 = 0;
const INTERNAL_LINEAR_COUNT: u32 = 128;
const INTERNAL_LINEAR_RELEASE: u32 = 136;

/// OpenSHMEM 1.2 active set: PEs `pe_start + i * 2^log_pe_stride` for `i < pe_size`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ActiveSet {
    pub pe_start: usize,
    pub log_pe_stride: u32,
    pub pe_size: usize,
}

impl ActiveSet {
    pub fn new(pe_start: usize, log_pe_stride: u32, pe_size: usize) -> Self {
        ActiveSet { pe_start, log_pe_stride, pe_size }
    }

    /// Every PE of an `n_pes` workgroup.
    pub fn all(n_pes: usize) -> Self {
        ActiveSet { pe_start: 0, log_pe_stride: 0, pe_size: n_pes }
    }

    pub fn validate(&self, n_pes: usize) -> Result<(), ShmemError> {
        if self.pe_size == 0 {
            return Err(ShmemError::InvalidActiveSet("pe_size must be at least 1".into()));
        }
        let last = (self.pe_size as u128 - 1)
            .checked_mul(1u128 << self.log_pe_stride.min(100))
            .map(|span| span + self.pe_start as u128);
        match last {
            Some(l) if self.log_pe_stride < 64 && l < n_pes as u128 => Ok(()),
            _ => Err(ShmemError::InvalidActiveSet(format!(
                "start {} stride 2^{} size {} does not fit in {} PEs",
                self.pe_start, self.log_pe_stride, self.pe_size, n_pes
            ))),
        }
    }

    pub fn member(&self, i: usize) -> usize {
        self.pe_start + (i << self.log_pe_stride)
    }

    /// Position of `pe` in the set.
    pub fn index_of(&self, pe: usize) -> Option<usize> {
        let d = pe.checked_sub(self.pe_start)?;
        let stride = 1usize << self.log_pe_stride;
        (d % stride == 0 && d / stride < self.pe_size).then_some(d / stride)
    }

    fn scope(&self) -> BarrierScope {
        BarrierScope::Set(self.pe_start, self.log_pe_stride, self.pe_size)
    }
}

/// Caller-provided symmetric sync and scratch arrays.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyncWork {
    /// Array of 64-bit words, all [`SYNC_VALUE`] initially.
    pub psync: SymAddr,
    pub psync_len: usize,
    /// Scratch array of reduction elements.
    pub pwrk: SymAddr,
    pub pwrk_len: usize,
}

fn ceil_log2(k: usize) -> usize {
    if k <= 1 {
        0
    } else {
        (usize::BITS - (k - 1).leading_zeros()) as usize
    }
}

/// pSync words required by any collective on up to `n_pes` PEs.
pub fn sync_size(n_pes: usize) -> usize {
    (2 * ceil_log2(n_pes)).max(2)
}

/// pWrk elements suggested for reductions of `nreduce` elements.
pub fn wrk_size(nreduce: usize) -> usize {
    (nreduce / 2 + 1).max(REDUCE_MIN_WRKDATA_SIZE)
}

/// Flag slots a reduction over `k` members uses: fold-in, doubling rounds, fold-out.
fn reduce_slots(k: usize) -> (usize, usize, bool) {
    let p = if k == 0 { 0 } else { 1usize << (usize::BITS - 1 - k.leading_zeros()) };
    let rounds = p.trailing_zeros() as usize;
    let fold = p != k;
    (rounds + if fold { 2 } else { 0 }, rounds, fold)
}

fn flag_value(tag: i64) -> i64 {
    1 + ((tag & TAG_MASK) << 8)
}

impl ShmemCtx {
    fn next_seq(&self, scope: BarrierScope) -> BarrierTag {
        let mut seqs = self.barrier_seq.borrow_mut();
        let seq = seqs.entry(scope).or_insert(0);
        let tag = BarrierTag { scope, seq: *seq };
        *seq += 1;
        tag
    }

    fn trace(&self, kind: TraceKind) {
        self.sim.borrow_mut().record(self.pe, kind);
    }

    /// Checks that `words` sync words at `offset` are consistent with `tag`:
    /// each holds at most two pending signals of that tag.
    async fn check_sync(&self, offset: u32, words: usize, tag: i64) -> Result<(), ShmemError> {
        let bytes = self.local_read(offset, words * 8).await?;
        let v = flag_value(tag);
        for (index, w) in decode_slice::<i64>(&bytes).into_iter().enumerate() {
            let ok = w >= 0 && w % v == 0 && w / v <= 2;
            if !ok {
                return Err(ShmemError::CorruptedSync { index, value: w });
            }
        }
        Ok(())
    }

    async fn consume(&self, offset: u32, tag: i64) -> Result<(), ShmemError> {
        self.wait_word(offset, 8, Cmp::Ge, 1, 0).await?;
        self.local_apply(vec![(offset, Action::Add64(-flag_value(tag)))]).await
    }

    /// Dissemination barrier over `members` (given as ranks) using the sync
    /// words at `offset`.
    async fn dissemination(&self, members: &[usize], me: usize, offset: u32) -> Result<(), ShmemError> {
        let k = members.len();
        let rounds = ceil_log2(k);
        let latency = self.timing().dissemination_round_cycles;
        let v = flag_value(BARRIER_TAG);
        for r in 0..rounds {
            let partner = members[(me + (1 << r)) % k];
            let word = offset + 8 * r as u32;
            self.call(Request::Deliver {
                target: self.check_pe(partner)?,
                actions: vec![(word, Action::Add64(v))],
                visible_after: latency,
                issuer_cost: 0,
            })
            .await?;
            self.consume(word, BARRIER_TAG).await?;
        }
        Ok(())
    }

    /// Barrier over every PE of the workgroup. Uses the hardware wait-on-AND
    /// when the workgroup is the whole chip, a dissemination barrier otherwise.
    pub async fn barrier_all(&self) -> Result<(), ShmemError> {
        let tag = self.next_seq(BarrierScope::All);
        self.trace(TraceKind::BarrierEnter(tag));
        let n = self.n_pes();
        if n > 1 {
            if self.layout.full_chip {
                self.call(Request::Wand).await?;
            } else {
                let offset = self.layout.internal.0 + INTERNAL_DISSEMINATION;
                let members: Vec<usize> = (0..n).collect();
                self.dissemination(&members, self.pe, offset).await?;
            }
        }
        self.trace(TraceKind::BarrierExit(tag));
        Ok(())
    }

    /// Dissemination barrier over an active set. Only members may call it.
    pub async fn barrier(&self, aset: ActiveSet, sync: SyncWork) -> Result<(), ShmemError> {
        aset.validate(self.n_pes())?;
        let me = aset.index_of(self.pe).ok_or(ShmemError::NotMember(self.pe))?;
        let rounds = ceil_log2(aset.pe_size);
        if sync.psync_len < rounds {
            return Err(ShmemError::SyncTooSmall { needed: rounds, got: sync.psync_len });
        }
        let offset = self.sync_region(sync.psync, rounds)?;
        let tag = self.next_seq(aset.scope());
        self.trace(TraceKind::BarrierEnter(tag));
        if rounds > 0 {
            self.check_sync(offset, rounds, BARRIER_TAG).await?;
            let members: Vec<usize> = (0..aset.pe_size).map(|i| aset.member(i)).collect();
            self.dissemination(&members, me, offset).await?;
        }
        self.trace(TraceKind::BarrierExit(tag));
        Ok(())
    }

    fn sync_region(&self, psync: SymAddr, words: usize) -> Result<u32, ShmemError> {
        if !psync.0.is_multiple_of(8) {
            return Err(ShmemError::Misaligned { addr: psync, align: 8 });
        }
        self.remote_address(psync, words.max(1) * 8, self.pe)?;
        Ok(psync.0)
    }

    /// Centralized barrier: every PE signals PE 0, which then releases each
    /// PE in turn. Kept as the baseline the other barriers are measured against.
    pub async fn linear_barrier_reference(&self) -> Result<(), ShmemError> {
        let tag = self.next_seq(BarrierScope::Linear);
        self.trace(TraceKind::BarrierEnter(tag));
        let step = self.timing().linear_barrier_cycles_per_pe;
        let base = self.layout.internal.0;
        let count = base + INTERNAL_LINEAR_COUNT;
        let release = base + INTERNAL_LINEAR_RELEASE;
        let n = self.n_pes();
        if self.pe == 0 {
            let entry = self.now();
            let others = n as i64 - 1;
            if others > 0 {
                self.wait_word(count, 8, Cmp::Ge, others, 0).await?;
                self.local_apply(vec![(count, Action::Add64(-others))]).await?;
            }
            if self.mode() == Mode::Timed {
                let ready = entry + step;
                let now = self.now();
                if now < ready {
                    self.delay(ready - now).await?;
                }
            }
            for pe in 1..n {
                self.call(Request::Deliver {
                    target: self.check_pe(pe)?,
                    actions: vec![(release, Action::Add64(1))],
                    visible_after: step,
                    issuer_cost: step,
                })
                .await?;
            }
        } else {
            self.call(Request::Deliver {
                target: self.check_pe(0)?,
                actions: vec![(count, Action::Add64(1))],
                visible_after: step,
                issuer_cost: 0,
            })
            .await?;
            self.wait_word(release, 8, Cmp::Ge, 1, 0).await?;
            self.local_apply(vec![(release, Action::Add64(-1))]).await?;
        }
        self.trace(TraceKind::BarrierExit(tag));
        Ok(())
    }

    /// `dest[i] = op(source[i] over every member)` on every member.
    ///
    /// Recursive doubling over the largest power of two `p <= k`; the `k - p`
    /// extra members first fold their data into a partner and receive the
    /// result from it at the end. `dest` may equal `source` but must not
    /// otherwise overlap it.
    pub async fn reduce_to_all<T: Elem>(
        &self,
        op: ReduceKind,
        dest: SymAddr,
        source: SymAddr,
        nreduce: usize,
        aset: ActiveSet,
        sync: SyncWork,
    ) -> Result<(), ShmemError> {
        if !op.applies_to(T::TYPE) {
            return Err(ShmemError::UnsupportedOp { op, ty: T::TYPE.name() });
        }
        aset.validate(self.n_pes())?;
        let me = aset.index_of(self.pe).ok_or(ShmemError::NotMember(self.pe))?;
        let size = T::TYPE.size();
        let bytes = nreduce * size;
        let (d0, s0) = (dest.0 as usize, source.0 as usize);
        if dest != source && d0 < s0 + bytes && s0 < d0 + bytes {
            return Err(ShmemError::Overlap);
        }
        self.remote_address(dest, bytes, self.pe)?;
        self.remote_address(source, bytes, self.pe)?;
        if nreduce == 0 {
            return Ok(());
        }

        let k = aset.pe_size;
        let t = self.timing().clone();
        let data = self.local_read(source.0, bytes).await?;
        self.delay(t.cpu_copy_cycles(bytes as u64)).await?;
        if k == 1 {
            return self.local_apply(vec![(dest.0, Action::Write(data))]).await;
        }

        let (slots, rounds, fold) = reduce_slots(k);
        if sync.psync_len < slots {
            return Err(ShmemError::SyncTooSmall { needed: slots, got: sync.psync_len });
        }
        let chunk = sync.pwrk_len / (2 * slots);
        if chunk == 0 {
            return Err(ShmemError::InsufficientWork { needed: 2 * slots, got: sync.pwrk_len });
        }
        let psync = self.sync_region(sync.psync, slots)?;
        self.remote_address(sync.pwrk, 2 * slots * chunk * size, self.pe)?;
        let tag = 1 + nreduce as i64;
        self.check_sync(psync, slots, tag).await?;

        let p = 1usize << rounds;
        let extras = k - p;
        let fold_in = 0usize;
        let first_round = usize::from(fold);
        let fold_out = first_round + rounds;
        let mut acc: Vec<T> = decode_slice(&data);
        let key = (sync.psync.0, sync.pwrk.0, aset.scope());

        for part in acc.chunks_mut(chunk) {
            let epoch = {
                let mut e = self.epochs.borrow_mut();
                let v = e.entry(key).or_insert(0);
                let cur = *v;
                *v += 1;
                cur
            };
            let parity = (epoch % 2) as usize;
            let buf = |slot: usize| sync.pwrk.0 + ((2 * slot + parity) * chunk * size) as u32;
            let flag = |slot: usize| psync + 8 * slot as u32;

            if me >= p {
                let partner = aset.member(me - p);
                self.send_partial(partner, buf(fold_in), flag(fold_in), part, tag).await?;
                self.consume(flag(fold_out), tag).await?;
                let got: Vec<T> = decode_slice(&self.local_read(buf(fold_out), part.len() * size).await?);
                part.copy_from_slice(&got);
                continue;
            }
            if me < extras {
                self.consume(flag(fold_in), tag).await?;
                let got: Vec<T> = decode_slice(&self.local_read(buf(fold_in), part.len() * size).await?);
                self.combine(op, part, &got, true).await?;
            }
            for r in 0..rounds {
                let partner_idx = me ^ (1 << r);
                let slot = first_round + r;
                self.send_partial(aset.member(partner_idx), buf(slot), flag(slot), part, tag).await?;
                self.consume(flag(slot), tag).await?;
                let got: Vec<T> = decode_slice(&self.local_read(buf(slot), part.len() * size).await?);
                self.combine(op, part, &got, me < partner_idx).await?;
            }
            if me < extras {
                self.send_partial(aset.member(me + p), buf(fold_out), flag(fold_out), part, tag).await?;
            }
        }
        self.local_apply(vec![(dest.0, Action::Write(encode_slice(&acc)))]).await
    }

    /// Writes a partial result into the partner's pWrk slot together with a
    /// flag signal. The issuer is busy for the transfer; the message lands
    /// no earlier than one dissemination round.
    async fn send_partial<T: Elem>(&self, pe: usize, buf: u32, flag: u32, vals: &[T], tag: i64) -> Result<(), ShmemError> {
        let target = self.check_pe(pe)?;
        let data = encode_slice(vals);
        let t = self.timing();
        let transfer = t.remote_transfer_cycles(self.coord(), target, data.len() as u64, Engine::Cpu);
        // Validate the destination like any other remote store.
        encode_address(target, buf)?;
        self.call(Request::Deliver {
            target,
            actions: vec![(buf, Action::Write(data)), (flag, Action::Add64(flag_value(tag)))],
            visible_after: transfer.max(t.dissemination_round_cycles),
            issuer_cost: transfer,
        })
        .await?;
        Ok(())
    }

    /// Folds `other` into `acc`; `mine_first` fixes the operand order so both
    /// partners of a round compute bit-identical floating-point results.
    async fn combine<T: Elem>(&self, op: ReduceKind, acc: &mut [T], other: &[T], mine_first: bool) -> Result<(), ShmemError> {
        for (a, b) in acc.iter_mut().zip(other) {
            let (x, y) = if mine_first { (*a, *b) } else { (*b, *a) };
            *a = T::combine(op, x, y).ok_or(ShmemError::UnsupportedOp { op, ty: T::TYPE.name() })?;
        }
        self.compute(acc.len() as u64).await
    }
}
