//! Per-PE symmetric heap: a break pointer with stack-ordered release.
//!
//! Allocation bumps the break; only the most recent live block may be freed
//! or resized. Because the state is a pure function of the call sequence, the
//! same sequence run on every PE yields the same offsets everywhere, which is
//! what makes remote addresses computable without coordination.

use thiserror::Error;

use crate::address::SymAddr;

/// Minimum alignment of every block.
pub const MIN_ALIGN: u32 = 8;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum HeapError {
    /// The null-equivalent result: the break would pass the heap limit.
    #[error("symmetric heap exhausted: {requested} bytes requested, {available} available")]
    Exhausted { requested: u64, available: u64 },
    #[error("block {offset} is not the most recent allocation (top is {top})")]
    OrderingViolation { offset: SymAddr, top: SymAddr },
    #[error("no live allocation at {0}")]
    UnknownOffset(SymAddr),
    #[error("alignment {0} is not a power of two >= 8")]
    BadAlignment(u32),
    #[error("zero-byte allocation")]
    ZeroSize,
    #[error("invalid heap bounds [{base}, {limit})")]
    InvalidBounds { base: u32, limit: u32 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct Block {
    /// Break before this block; any alignment padding lies in [start, offset).
    start: u32,
    offset: u32,
    size: u32,
    align: u32,
}

impl Block {
    fn end(&self) -> u32 {
        self.offset + self.size
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HeapState {
    base: u32,
    limit: u32,
    brk: u32,
    blocks: Vec<Block>,
}

fn round_up(v: u64, align: u64) -> u64 {
    v.div_ceil(align) * align
}

impl HeapState {
    pub fn new(base: u32, limit: u32) -> Result<Self, HeapError> {
        if base > limit || !base.is_multiple_of(MIN_ALIGN) {
            return Err(HeapError::InvalidBounds { base, limit });
        }
        Ok(HeapState { base, limit, brk: base, blocks: Vec::new() })
    }

    pub fn base(&self) -> u32 {
        self.base
    }

    pub fn limit(&self) -> u32 {
        self.limit
    }

    pub fn brk(&self) -> u32 {
        self.brk
    }

    pub fn live_blocks(&self) -> usize {
        self.blocks.len()
    }

    /// Live `(offset, size)` pairs in allocation order.
    pub fn blocks(&self) -> impl Iterator<Item = (SymAddr, u32)> + '_ {
        self.blocks.iter().map(|b| (SymAddr(b.offset), b.size))
    }

    pub fn contains(&self, addr: SymAddr, len: usize) -> bool {
        let a = addr.0 as u64;
        a >= self.base as u64 && a + len as u64 <= self.limit as u64
    }

    pub fn alloc(&mut self, nbytes: usize) -> Result<SymAddr, HeapError> {
        self.align(MIN_ALIGN, nbytes)
    }

    pub fn align(&mut self, alignment: u32, nbytes: usize) -> Result<SymAddr, HeapError> {
        if alignment < MIN_ALIGN || !alignment.is_power_of_two() {
            return Err(HeapError::BadAlignment(alignment));
        }
        if nbytes == 0 {
            return Err(HeapError::ZeroSize);
        }
        let offset = round_up(self.brk as u64, alignment as u64);
        let size = round_up(nbytes as u64, MIN_ALIGN as u64);
        let end = offset + size;
        if end > self.limit as u64 {
            return Err(HeapError::Exhausted {
                requested: nbytes as u64,
                available: (self.limit as u64).saturating_sub(offset),
            });
        }
        self.blocks.push(Block { start: self.brk, offset: offset as u32, size: size as u32, align: alignment });
        self.brk = end as u32;
        Ok(SymAddr(offset as u32))
    }

    fn check_top(&self, addr: SymAddr) -> Result<(), HeapError> {
        match self.blocks.last() {
            Some(top) if top.offset == addr.0 => Ok(()),
            Some(top) if self.blocks.iter().any(|b| b.offset == addr.0) => {
                Err(HeapError::OrderingViolation { offset: addr, top: SymAddr(top.offset) })
            }
            _ => Err(HeapError::UnknownOffset(addr)),
        }
    }

    pub fn free(&mut self, addr: SymAddr) -> Result<(), HeapError> {
        self.check_top(addr)?;
        let top = self.blocks.pop().expect("checked above");
        self.brk = top.start;
        Ok(())
    }

    /// Resizes the top block in place. A zero size frees it and returns `None`.
    /// On exhaustion the block is left untouched.
    pub fn realloc(&mut self, addr: SymAddr, nbytes: usize) -> Result<Option<SymAddr>, HeapError> {
        self.check_top(addr)?;
        if nbytes == 0 {
            self.free(addr)?;
            return Ok(None);
        }
        let top = *self.blocks.last().expect("checked above");
        let size = round_up(nbytes as u64, MIN_ALIGN as u64);
        let end = top.offset as u64 + size;
        if end > self.limit as u64 {
            return Err(HeapError::Exhausted {
                requested: nbytes as u64,
                available: (self.limit - top.offset) as u64,
            });
        }
        let last = self.blocks.last_mut().expect("checked above");
        last.size = size as u32;
        self.brk = last.end();
        Ok(Some(addr))
    }

    /// Verifies the structural invariants; used by tests and the property suite.
    pub fn check_invariants(&self) -> Result<(), String> {
        if !(self.base <= self.brk && self.brk <= self.limit) {
            return Err(format!("break {} outside [{}, {}]", self.brk, self.base, self.limit));
        }
        let mut cursor = self.base;
        for b in &self.blocks {
            if b.start != cursor {
                return Err(format!("block at {:#x} does not start at previous end {:#x}", b.offset, cursor));
            }
            if b.offset < b.start || b.offset % b.align != 0 || b.offset % MIN_ALIGN != 0 {
                return Err(format!("block at {:#x} misaligned", b.offset));
            }
            cursor = b.end();
        }
        if cursor != self.brk {
            return Err(format!("break {:#x} does not match last block end {:#x}", self.brk, cursor));
        }
        Ok(())
    }
}
