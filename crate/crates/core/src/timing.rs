//! Cycle-cost model for the mesh: routing distance, copy engines, and the
//! calibrated synchronization constants.
//!
//! Every number here is configuration. The defaults are calibrated so that the
//! hardware barrier costs 0.1 us, the linear software barrier over 16 cores
//! costs 2.0 us, and the DMA/CPU copy cost ratio stays in [2.1, 9.9] over
//! 8 B..8 KiB transfers.

use crate::address::Coord;

/// Which engine moves the bytes of a block transfer.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Engine {
    /// Hardware-loop, unrolled double-word loads and stores on the issuing core.
    Cpu,
    /// Synchronous DMA transfer, polled for completion.
    Dma,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TimingParams {
    pub clock_hz: f64,
    pub cpu_copy_overhead_cycles: u64,
    pub cpu_cycles_per_dword: u64,
    pub dma_setup_cycles: u64,
    pub dma_cycles_per_2dwords: u64,
    pub hop_cycles: u64,
    pub remote_store_base_cycles: u64,
    pub wand_barrier_cycles: u64,
    pub linear_barrier_cycles_per_pe: u64,
    pub dissemination_round_cycles: u64,
    pub flops_per_cycle_per_core: u64,
    /// Granularity at which a spinning core notices a status change.
    pub poll_quantum_cycles: u64,
    /// Cost of a fence or quiet ordering point.
    pub fence_cycles: u64,
    pub lock_backoff_initial_cycles: u64,
    pub lock_backoff_cap_cycles: u64,
    /// Fixed setup/teardown cost of a compute loop.
    pub loop_overhead_cycles: u64,
}

impl Default for TimingParams {
    fn default() -> Self {
        TimingParams {
            clock_hz: 6.0e8,
            cpu_copy_overhead_cycles: 12,
            cpu_cycles_per_dword: 2,
            dma_setup_cycles: 120,
            dma_cycles_per_2dwords: 9,
            hop_cycles: 1,
            remote_store_base_cycles: 8,
            wand_barrier_cycles: 60,
            linear_barrier_cycles_per_pe: 75,
            dissemination_round_cycles: 90,
            flops_per_cycle_per_core: 2,
            poll_quantum_cycles: 10,
            fence_cycles: 4,
            lock_backoff_initial_cycles: 16,
            lock_backoff_cap_cycles: 256,
            loop_overhead_cycles: 20,
        }
    }
}

fn dwords(nbytes: u64) -> u64 {
    nbytes.div_ceil(8)
}

/// XY-routing hop count between two cores.
pub fn hops(src: Coord, dst: Coord) -> u64 {
    (src.row.abs_diff(dst.row) + src.col.abs_diff(dst.col)) as u64
}

impl TimingParams {
    /// Checks that every parameter is strictly positive.
    pub fn validate(&self) -> Result<(), String> {
        if !(self.clock_hz.is_finite() && self.clock_hz > 0.0) {
            return Err(format!("timing.clock_hz must be positive, got {}", self.clock_hz));
        }
        let ints = [
            ("cpu_copy_overhead_cycles", self.cpu_copy_overhead_cycles),
            ("cpu_cycles_per_dword", self.cpu_cycles_per_dword),
            ("dma_setup_cycles", self.dma_setup_cycles),
            ("dma_cycles_per_2dwords", self.dma_cycles_per_2dwords),
            ("hop_cycles", self.hop_cycles),
            ("remote_store_base_cycles", self.remote_store_base_cycles),
            ("wand_barrier_cycles", self.wand_barrier_cycles),
            ("linear_barrier_cycles_per_pe", self.linear_barrier_cycles_per_pe),
            ("dissemination_round_cycles", self.dissemination_round_cycles),
            ("flops_per_cycle_per_core", self.flops_per_cycle_per_core),
            ("poll_quantum_cycles", self.poll_quantum_cycles),
            ("fence_cycles", self.fence_cycles),
            ("lock_backoff_initial_cycles", self.lock_backoff_initial_cycles),
            ("lock_backoff_cap_cycles", self.lock_backoff_cap_cycles),
            ("loop_overhead_cycles", self.loop_overhead_cycles),
        ];
        for (name, v) in ints {
            if v == 0 {
                return Err(format!("timing.{name} must be positive"));
            }
        }
        Ok(())
    }

    pub fn cpu_copy_cycles(&self, nbytes: u64) -> u64 {
        self.cpu_copy_overhead_cycles + self.cpu_cycles_per_dword * dwords(nbytes)
    }

    pub fn dma_copy_cycles(&self, nbytes: u64) -> u64 {
        self.dma_setup_cycles + (self.dma_cycles_per_2dwords * dwords(nbytes)).div_ceil(2)
    }

    pub fn copy_cycles(&self, nbytes: u64, engine: Engine) -> u64 {
        match engine {
            Engine::Cpu => self.cpu_copy_cycles(nbytes),
            Engine::Dma => self.dma_copy_cycles(nbytes),
        }
    }

    /// Engine cost plus NoC traversal plus the fixed remote-store cost.
    pub fn remote_transfer_cycles(&self, src: Coord, dst: Coord, nbytes: u64, engine: Engine) -> u64 {
        self.copy_cycles(nbytes, engine) + self.hop_cycles * hops(src, dst) + self.remote_store_base_cycles
    }

    /// Read-modify-write latency: the request and the reply both cross the mesh.
    pub fn atomic_cycles(&self, src: Coord, dst: Coord, width_bytes: u64) -> u64 {
        self.cpu_copy_cycles(width_bytes) + 2 * self.hop_cycles * hops(src, dst) + self.remote_store_base_cycles
    }

    /// Rounds a DMA wait up to the next status-register poll.
    pub fn round_to_poll(&self, cycles: u64) -> u64 {
        cycles.div_ceil(self.poll_quantum_cycles) * self.poll_quantum_cycles
    }

    pub fn cycles_to_seconds(&self, cycles: u64) -> f64 {
        cycles as f64 / self.clock_hz
    }

    /// Cycles to execute `flops` floating-point operations on one core.
    pub fn compute_cycles(&self, flops: u64) -> u64 {
        flops.div_ceil(self.flops_per_cycle_per_core)
    }

    pub fn peak_flops(&self, n_cores: usize) -> f64 {
        n_cores as f64 * self.flops_per_cycle_per_core as f64 * self.clock_hz
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    // Independent oracle: count double words by stepping through the buffer.
    fn dwords_by_walk(nbytes: u64) -> u64 {
        let mut n = 0;
        let mut at = 0;
        while at < nbytes {
            n += 1;
            at += 8;
        }
        n
    }

    fn cpu_oracle(nbytes: u64) -> u64 {
        12 + 2 * dwords_by_walk(nbytes)
    }

    fn dma_oracle(nbytes: u64) -> u64 {
        // 9 cycles per pair of double words, a trailing odd dword costs half, rounded up.
        let d = dwords_by_walk(nbytes);
        let mut c = 120 + 9 * (d / 2);
        if d % 2 == 1 {
            c += 5;
        }
        c
    }

    #[test]
    fn hop_examples() {
        assert_eq!(hops(Coord::new(2, 3), Coord::new(2, 3)), 0);
        assert_eq!(hops(Coord::new(0, 0), Coord::new(3, 3)), 6);
        assert_eq!(hops(Coord::new(1, 0), Coord::new(1, 3)), 3);
    }

    #[test]
    fn cpu_copy_examples() {
        let t = TimingParams::default();
        for n in [1, 8, 8192] {
            assert_eq!(t.cpu_copy_cycles(n), cpu_oracle(n));
        }
        assert_eq!(t.cpu_copy_cycles(8), 14);
        assert_eq!(t.cpu_copy_cycles(8192), 2060);
        assert_eq!(t.cpu_copy_cycles(1), 14);
    }

    #[test]
    fn dma_copy_examples() {
        let t = TimingParams::default();
        for n in [8, 16, 8192] {
            assert_eq!(t.dma_copy_cycles(n), dma_oracle(n));
        }
        assert_eq!(t.dma_copy_cycles(8), 125);
        assert_eq!(t.dma_copy_cycles(8192), 4728);
        assert_eq!(t.dma_copy_cycles(16), 129);
        let r8 = 125.0 / 14.0;
        assert!((r8 - 8.93f64).abs() < 0.005);
        let r8k = 4728.0 / 2060.0;
        assert!((r8k - 2.30f64).abs() < 0.005);
    }

    #[test]
    fn transfer_composition() {
        let t = TimingParams::default();
        let a = Coord::new(0, 0);
        assert_eq!(t.remote_transfer_cycles(a, a, 8, Engine::Cpu), 22);
        assert_eq!(t.remote_transfer_cycles(a, Coord::new(3, 3), 8, Engine::Cpu), 28);
        assert_eq!(t.remote_transfer_cycles(a, Coord::new(0, 1), 8, Engine::Dma), 134);
    }

    #[test]
    fn seconds_examples() {
        let t = TimingParams::default();
        assert!((t.cycles_to_seconds(60) - 1.0e-7).abs() < 1e-18);
        assert!((t.cycles_to_seconds(1200) - 2.0e-6).abs() < 1e-18);
        assert_eq!(t.cycles_to_seconds(0), 0.0);
        assert!((t.peak_flops(16) - 19.2e9).abs() < 1.0);
    }

    #[test]
    fn dma_cpu_ratio_band_over_sweep() {
        let t = TimingParams::default();
        let mut prev = f64::INFINITY;
        let mut n = 8;
        while n <= 8192 {
            let r = t.dma_copy_cycles(n) as f64 / t.cpu_copy_cycles(n) as f64;
            assert!((2.1..=9.9).contains(&r), "ratio {r} at {n}");
            assert!(r <= prev);
            prev = r;
            n *= 2;
        }
    }

    #[test]
    fn validate_rejects_zero() {
        let t = TimingParams { hop_cycles: 0, ..Default::default() };
        assert!(t.validate().is_err());
        assert!(TimingParams::default().validate().is_ok());
    }

    proptest! {
        #[test]
        fn copy_costs_monotone(n in 1u64..100_000) {
            let t = TimingParams::default();
            prop_assert!(t.cpu_copy_cycles(n) <= t.cpu_copy_cycles(n + 1));
            prop_assert!(t.dma_copy_cycles(n) <= t.dma_copy_cycles(n + 1));
        }

        #[test]
        fn hops_is_a_metric(a in (0u32..64, 0u32..64), b in (0u32..64, 0u32..64), c in (0u32..64, 0u32..64)) {
            let (a, b, c) = (Coord::new(a.0, a.1), Coord::new(b.0, b.1), Coord::new(c.0, c.1));
            prop_assert_eq!(hops(a, b), hops(b, a));
            prop_assert_eq!(hops(a, b) == 0, a == b);
            prop_assert!(hops(a, c) <= hops(a, b) + hops(b, c));
        }
    }
}
