//! Machine configuration and its plain-text `key=value` file format.
//!
//! ```text
//! # 4x4 chip, one broken core
//! rows = 4
//! cols = 4
//! origin = 32,8
//! disabled = 33,9
//! mode = timed
//! seed = 7
//! timing.dma_setup_cycles = 120
//! ```
//!
//! Blank lines and `#` comments are ignored. Coordinate lists separate pairs
//! with whitespace or `;`.

use std::collections::BTreeSet;
use std::fmt::Write as _;
use std::path::Path;
use std::str::FromStr;

use thiserror::Error;

use crate::address::{Coord, COORD_LIMIT, OFFSET_LIMIT};
use crate::timing::TimingParams;
use crate::topology::{TopologyError, Workgroup};

/// Bytes at the top of the reserved region used by the runtime's own
/// synchronization words.
pub const INTERNAL_SYNC_BYTES: u32 = 256;

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
    #[error(transparent)]
    Topology(#[from] TopologyError),
    #[error("cannot read config {path}: {source}")]
    Io { path: String, source: std::io::Error },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Mode {
    /// Seeded random interleaving, no clocks.
    Functional,
    /// Discrete-event execution with per-PE cycle clocks.
    Timed,
}

impl FromStr for Mode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "functional" => Ok(Mode::Functional),
            "timed" => Ok(Mode::Timed),
            other => Err(format!("unknown mode '{other}' (expected functional|timed)")),
        }
    }
}

impl std::fmt::Display for Mode {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Mode::Functional => "functional",
            Mode::Timed => "timed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WorkgroupSpec {
    pub origin: Coord,
    pub rows: u32,
    pub cols: u32,
    pub disabled: BTreeSet<Coord>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MachineConfig {
    pub rows: u32,
    pub cols: u32,
    pub origin: Coord,
    pub mem_per_core: u32,
    pub disabled: BTreeSet<Coord>,
    pub timing: TimingParams,
    pub mode: Mode,
    pub seed: u64,
    /// Start of the symmetric heap; everything below is reserved.
    pub heap_base: u32,
    /// End of the symmetric heap; `None` means `mem_per_core`.
    pub heap_limit: Option<u32>,
    /// Size of the static symmetric data segment just below the runtime's sync words.
    pub static_bytes: u32,
    /// Workgroup override; `None` means the whole grid minus disabled cores.
    pub workgroup: Option<WorkgroupSpec>,
    /// Scheduler turns before a run is abandoned as livelocked.
    pub max_steps: u64,
}

impl Default for MachineConfig {
    fn default() -> Self {
        MachineConfig {
            rows: 4,
            cols: 4,
            origin: Coord::new(32, 8),
            mem_per_core: 32768,
            disabled: BTreeSet::new(),
            timing: TimingParams::default(),
            mode: Mode::Timed,
            seed: 0,
            heap_base: 16384,
            heap_limit: None,
            static_bytes: 1024,
            workgroup: None,
            max_steps: 200_000_000,
        }
    }
}

impl MachineConfig {
    pub fn with_grid(rows: u32, cols: u32) -> Self {
        MachineConfig { rows, cols, ..Default::default() }
    }

    pub fn heap_limit(&self) -> u32 {
        self.heap_limit.unwrap_or(self.mem_per_core)
    }

    /// `[start, end)` of the runtime-internal sync words.
    pub fn internal_area(&self) -> (u32, u32) {
        (self.heap_base - INTERNAL_SYNC_BYTES, self.heap_base)
    }

    /// `[start, end)` of the static symmetric segment.
    pub fn static_area(&self) -> (u32, u32) {
        let (start, _) = self.internal_area();
        (start - self.static_bytes, start)
    }

    pub fn grid_contains(&self, c: Coord) -> bool {
        c.row >= self.origin.row
            && c.col >= self.origin.col
            && c.row - self.origin.row < self.rows
            && c.col - self.origin.col < self.cols
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let bad = |m: String| Err(ConfigError::Invalid(m));
        if self.rows == 0 || self.cols == 0 {
            return bad(format!("grid must be at least 1x1, got {}x{}", self.rows, self.cols));
        }
        if self.origin.row + self.rows > COORD_LIMIT || self.origin.col + self.cols > COORD_LIMIT {
            return bad(format!(
                "grid {}x{} at origin {} exceeds the 6-bit coordinate fields",
                self.rows, self.cols, self.origin
            ));
        }
        if self.grid_contains(Coord::new(0, 0)) {
            return bad("grid overlaps the local-alias coordinate (0,0)".into());
        }
        if self.mem_per_core == 0 || !self.mem_per_core.is_multiple_of(8) {
            return bad(format!("mem_per_core must be a positive multiple of 8, got {}", self.mem_per_core));
        }
        if self.mem_per_core > OFFSET_LIMIT {
            return bad(format!("mem_per_core {} exceeds the 20-bit offset field", self.mem_per_core));
        }
        if let Some(c) = self.disabled.iter().find(|c| !self.grid_contains(**c)) {
            return bad(format!("disabled core {c} lies outside the grid"));
        }
        if self.disabled.len() as u64 >= self.rows as u64 * self.cols as u64 {
            return bad("every core is disabled".into());
        }
        if !self.static_bytes.is_multiple_of(8) {
            return bad(format!("heap.static_bytes must be a multiple of 8, got {}", self.static_bytes));
        }
        if !self.heap_base.is_multiple_of(8) || self.heap_base < INTERNAL_SYNC_BYTES + self.static_bytes {
            return bad(format!(
                "heap.base {} must be a multiple of 8 and leave room for {} reserved bytes",
                self.heap_base,
                INTERNAL_SYNC_BYTES + self.static_bytes
            ));
        }
        let limit = self.heap_limit();
        if limit < self.heap_base || limit > self.mem_per_core || !limit.is_multiple_of(8) {
            return bad(format!("heap.limit {limit} must lie in [heap.base, mem_per_core] and be 8-aligned"));
        }
        if self.max_steps == 0 {
            return bad("max_steps must be positive".into());
        }
        self.timing.validate().map_err(ConfigError::Invalid)?;
        self.workgroup()?;
        Ok(())
    }

    /// The workgroup PEs run on, validated against the grid.
    pub fn workgroup(&self) -> Result<Workgroup, ConfigError> {
        let wg = match &self.workgroup {
            Some(spec) => Workgroup::new(spec.origin, spec.rows, spec.cols, spec.disabled.iter().copied())?,
            None => Workgroup::new(self.origin, self.rows, self.cols, self.disabled.iter().copied())?,
        };
        wg.validate_against(self.origin, self.rows, self.cols, &self.disabled)?;
        Ok(wg)
    }

    pub fn from_file(path: impl AsRef<Path>) -> Result<Self, ConfigError> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path)
            .map_err(|source| ConfigError::Io { path: path.display().to_string(), source })?;
        Self::parse(&text)
    }

    /// Parses `key=value` text over the defaults and validates the result.
    pub fn parse(text: &str) -> Result<Self, ConfigError> {
        let mut cfg = MachineConfig::default();
        let mut wg_origin = None;
        let mut wg_rows = None;
        let mut wg_cols = None;
        let mut wg_disabled = None;
        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (key, value) = line
                .split_once('=')
                .ok_or_else(|| ConfigError::Parse { line: line_no, msg: format!("expected key=value, got '{line}'") })?;
            let (key, value) = (key.trim(), value.trim());
            let err = |msg: String| ConfigError::Parse { line: line_no, msg: format!("{key}: {msg}") };
            match key {
                "rows" => cfg.rows = num(value).map_err(err)?,
                "cols" => cfg.cols = num(value).map_err(err)?,
                "origin" => cfg.origin = parse_coord(value).map_err(err)?,
                "mem_per_core" => cfg.mem_per_core = num(value).map_err(err)?,
                "disabled" => cfg.disabled = parse_coord_list(value).map_err(err)?,
                "mode" => cfg.mode = value.parse().map_err(err)?,
                "seed" => cfg.seed = num(value).map_err(err)?,
                "max_steps" => cfg.max_steps = num(value).map_err(err)?,
                "heap.base" => cfg.heap_base = num(value).map_err(err)?,
                "heap.limit" => cfg.heap_limit = Some(num(value).map_err(err)?),
                "heap.static_bytes" => cfg.static_bytes = num(value).map_err(err)?,
                "wg.origin" => wg_origin = Some(parse_coord(value).map_err(err)?),
                "wg.rows" => wg_rows = Some(num(value).map_err(err)?),
                "wg.cols" => wg_cols = Some(num(value).map_err(err)?),
                "wg.disabled" => wg_disabled = Some(parse_coord_list(value).map_err(err)?),
                k if k.starts_with("timing.") => set_timing(&mut cfg.timing, &k["timing.".len()..], value).map_err(err)?,
                _ => return Err(ConfigError::Parse { line: line_no, msg: format!("unknown key '{key}'") }),
            }
        }
        if wg_origin.is_some() || wg_rows.is_some() || wg_cols.is_some() || wg_disabled.is_some() {
            cfg.workgroup = Some(WorkgroupSpec {
                origin: wg_origin.unwrap_or(cfg.origin),
                rows: wg_rows.unwrap_or(cfg.rows),
                cols: wg_cols.unwrap_or(cfg.cols),
                disabled: wg_disabled.unwrap_or_else(|| cfg.disabled.clone()),
            });
        }
        cfg.validate()?;
        Ok(cfg)
    }

    /// Serializes to the text format; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let coords = |set: &BTreeSet<Coord>| {
            set.iter().map(|c| format!("{},{}", c.row, c.col)).collect::<Vec<_>>().join(" ")
        };
        let _ = writeln!(s, "rows = {}", self.rows);
        let _ = writeln!(s, "cols = {}", self.cols);
        let _ = writeln!(s, "origin = {},{}", self.origin.row, self.origin.col);
        let _ = writeln!(s, "mem_per_core = {}", self.mem_per_core);
        let _ = writeln!(s, "disabled = {}", coords(&self.disabled));
        let _ = writeln!(s, "mode = {}", self.mode);
        let _ = writeln!(s, "seed = {}", self.seed);
        let _ = writeln!(s, "max_steps = {}", self.max_steps);
        let _ = writeln!(s, "heap.base = {}", self.heap_base);
        if let Some(l) = self.heap_limit {
            let _ = writeln!(s, "heap.limit = {l}");
        }
        let _ = writeln!(s, "heap.static_bytes = {}", self.static_bytes);
        if let Some(wg) = &self.workgroup {
            let _ = writeln!(s, "wg.origin = {},{}", wg.origin.row, wg.origin.col);
            let _ = writeln!(s, "wg.rows = {}", wg.rows);
            let _ = writeln!(s, "wg.cols = {}", wg.cols);
            let _ = writeln!(s, "wg.disabled = {}", coords(&wg.disabled));
        }
        for (k, v) in timing_entries(&self.timing) {
            let _ = writeln!(s, "timing.{k} = {v}");
        }
        s
    }
}

fn num<T: FromStr>(v: &str) -> Result<T, String> {
    v.replace('_', "").parse().map_err(|_| format!("invalid number '{v}'"))
}

pub fn parse_coord(v: &str) -> Result<Coord, String> {
    let t = v.trim().trim_start_matches('(').trim_end_matches(')');
    let (r, c) = t.split_once(',').ok_or_else(|| format!("expected 'row,col', got '{v}'"))?;
    Ok(Coord::new(num(r.trim())?, num(c.trim())?))
}

pub fn parse_coord_list(v: &str) -> Result<BTreeSet<Coord>, String> {
    v.split(|ch: char| ch == ';' || ch.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(parse_coord)
        .collect()
}

fn timing_entries(t: &TimingParams) -> Vec<(&'static str, String)> {
    vec![
        ("clock_hz", format!("{:?}", t.clock_hz)),
        ("cpu_copy_overhead_cycles", t.cpu_copy_overhead_cycles.to_string()),
        ("cpu_cycles_per_dword", t.cpu_cycles_per_dword.to_string()),
        ("dma_setup_cycles", t.dma_setup_cycles.to_string()),
        ("dma_cycles_per_2dwords", t.dma_cycles_per_2dwords.to_string()),
        ("hop_cycles", t.hop_cycles.to_string()),
        ("remote_store_base_cycles", t.remote_store_base_cycles.to_string()),
        ("wand_barrier_cycles", t.wand_barrier_cycles.to_string()),
        ("linear_barrier_cycles_per_pe", t.linear_barrier_cycles_per_pe.to_string()),
        ("dissemination_round_cycles", t.dissemination_round_cycles.to_string()),
        ("flops_per_cycle_per_core", t.flops_per_cycle_per_core.to_string()),
        ("poll_quantum_cycles", t.poll_quantum_cycles.to_string()),
        ("fence_cycles", t.fence_cycles.to_string()),
        ("lock_backoff_initial_cycles", t.lock_backoff_initial_cycles.to_string()),
        ("lock_backoff_cap_cycles", t.lock_backoff_cap_cycles.to_string()),
        ("loop_overhead_cycles", t.loop_overhead_cycles.to_string()),
    ]
}

fn set_timing(t: &mut TimingParams, key: &str, v: &str) -> Result<(), String> {
    let slot = match key {
        "clock_hz" => {
            t.clock_hz = v.parse().map_err(|_| format!("invalid number '{v}'"))?;
            return Ok(());
        }
        "cpu_copy_overhead_cycles" => &mut t.cpu_copy_overhead_cycles,
        "cpu_cycles_per_dword" => &mut t.cpu_cycles_per_dword,
        "dma_setup_cycles" => &mut t.dma_setup_cycles,
        "dma_cycles_per_2dwords" => &mut t.dma_cycles_per_2dwords,
        "hop_cycles" => &mut t.hop_cycles,
        "remote_store_base_cycles" => &mut t.remote_store_base_cycles,
        "wand_barrier_cycles" => &mut t.wand_barrier_cycles,
        "linear_barrier_cycles_per_pe" => &mut t.linear_barrier_cycles_per_pe,
        "dissemination_round_cycles" => &mut t.dissemination_round_cycles,
        "flops_per_cycle_per_core" => &mut t.flops_per_cycle_per_core,
        "poll_quantum_cycles" => &mut t.poll_quantum_cycles,
        "fence_cycles" => &mut t.fence_cycles,
        "lock_backoff_initial_cycles" => &mut t.lock_backoff_initial_cycles,
        "lock_backoff_cap_cycles" => &mut t.lock_backoff_cap_cycles,
        "loop_overhead_cycles" => &mut t.loop_overhead_cycles,
        other => return Err(format!("unknown timing parameter '{other}'")),
    };
    *slot = num(v)?;
    Ok(())
}
