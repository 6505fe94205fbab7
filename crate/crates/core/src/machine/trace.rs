//! Event trace: ordering points, barrier entry/exit, and user marks.

use std::collections::BTreeMap;

/// Identifies one barrier instance consistently across its participants.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum BarrierScope {
    All,
    Linear,
    /// Active set `(pe_start, log_pe_stride, pe_size)`.
    Set(usize, u32, usize),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct BarrierTag {
    pub scope: BarrierScope,
    /// How many barriers of this scope the PE completed before this one.
    pub seq: u64,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum TraceKind {
    BarrierEnter(BarrierTag),
    BarrierExit(BarrierTag),
    Fence,
    Quiet,
    Mark(&'static str),
}

/// `time` is the PE clock in timed mode and the scheduler step in functional mode.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct TraceRecord {
    pub pe: usize,
    pub time: u64,
    pub kind: TraceKind,
}

/// Checks that no barrier exit precedes any entry of the same instance, and
/// that every instance has as many exits as entries. Returns the number of
/// instances checked.
pub fn check_barrier_safety(trace: &[TraceRecord]) -> Result<usize, String> {
    #[derive(Default)]
    struct Span {
        entries: usize,
        exits: usize,
        last_entry: u64,
        first_exit: u64,
    }
    let mut spans: BTreeMap<BarrierTag, Span> = BTreeMap::new();
    for rec in trace {
        match rec.kind {
            TraceKind::BarrierEnter(tag) => {
                let s = spans.entry(tag).or_insert(Span { first_exit: u64::MAX, ..Default::default() });
                s.entries += 1;
                s.last_entry = s.last_entry.max(rec.time);
            }
            TraceKind::BarrierExit(tag) => {
                let s = spans.entry(tag).or_insert(Span { first_exit: u64::MAX, ..Default::default() });
                s.exits += 1;
                s.first_exit = s.first_exit.min(rec.time);
            }
            _ => {}
        }
    }
    for (tag, s) in &spans {
        if s.entries != s.exits {
            return Err(format!("{tag:?}: {} entries but {} exits", s.entries, s.exits));
        }
        if s.first_exit < s.last_entry {
            return Err(format!("{tag:?}: exit at {} precedes entry at {}", s.first_exit, s.last_entry));
        }
    }
    Ok(spans.len())
}

/// Times of the records carrying `label`, indexed by PE.
pub fn marks(trace: &[TraceRecord], label: &str) -> Vec<(usize, u64)> {
    trace
        .iter()
        .filter_map(|r| match r.kind {
            TraceKind::Mark(l) if l == label => Some((r.pe, r.time)),
            _ => None,
        })
        .collect()
}
