//! Quick randomized self-checks of the runtime, run by `eshmem props`.

use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::address::SymAddr;
use crate::bench::{bench_barrier, bench_copy, default_copy_sizes};
use crate::collectives::{sync_size, ActiveSet, SyncWork};
use crate::config::{MachineConfig, Mode};
use crate::heap::{HeapError, HeapState};
use crate::machine::{check_barrier_safety, Machine};
use crate::shmem::{ReduceKind, ShmemError};
use crate::topology::Workgroup;

#[derive(Debug, Clone, PartialEq)]
pub struct PropOutcome {
    pub name: &'static str,
    pub cases: usize,
    pub result: Result<(), String>,
    pub seconds: f64,
}

fn functional(seed: u64) -> Machine {
    let cfg = MachineConfig { mode: Mode::Functional, seed, ..Default::default() };
    Machine::new(cfg).expect("default config is valid")
}

fn timed(seed: u64) -> Machine {
    let cfg = MachineConfig { mode: Mode::Timed, seed, ..Default::default() };
    Machine::new(cfg).expect("default config is valid")
}

fn err<E: std::fmt::Display>(e: E) -> String {
    e.to_string()
}

fn put_get_roundtrip(cases: usize, seed: u64) -> Result<(), String> {
    for s in 0..cases as u64 {
        let mut m = functional(seed ^ s);
        let report = m
            .run_spmd(move |ctx| async move {
                let n = ctx.n_pes();
                let buf = ctx.malloc(64)?;
                let mut rng = ChaCha8Rng::seed_from_u64(s * 1000 + ctx.my_pe() as u64);
                let data: Vec<i16> = (0..32).map(|_| rng.random()).collect();
                let q = (ctx.my_pe() + 1 + s as usize) % n;
                ctx.put(buf, &data, q).await?;
                ctx.barrier_all().await?;
                let back: Vec<i16> = ctx.get(buf, 32, q).await?;
                if back != data {
                    return Err(ShmemError::Program(format!("PE {} read back different data", ctx.my_pe())));
                }
                Ok(0)
            })
            .map_err(err)?;
        report.values().map_err(|(pe, e)| format!("PE {pe}: {e}"))?;
    }
    Ok(())
}

fn atomic_counter(cases: usize, seed: u64) -> Result<(), String> {
    for s in 0..cases as u64 {
        let mut m = functional(seed ^ (s << 8));
        let report = m
            .run_spmd(|ctx| async move {
                let c = ctx.malloc(8)?;
                ctx.barrier_all().await?;
                for _ in 0..100 {
                    ctx.atomic_fetch_add::<i64>(c, 1, 0).await?;
                }
                ctx.barrier_all().await?;
                ctx.g::<i64>(c, 0).await
            })
            .map_err(err)?;
        let v = report.values().map_err(|(pe, e)| format!("PE {pe}: {e}"))?;
        if v[0] != 1600 {
            return Err(format!("seed {s}: counter {} after 1600 increments", v[0]));
        }
    }
    Ok(())
}

fn lock_exclusion(cases: usize, seed: u64) -> Result<(), String> {
    for s in 0..cases as u64 {
        let mut m = functional(seed.wrapping_add(s));
        let report = m
            .run_spmd(|ctx| async move {
                let lock = ctx.malloc(8)?;
                let inside = ctx.malloc(8)?;
                ctx.barrier_all().await?;
                for _ in 0..10 {
                    ctx.set_lock(lock).await?;
                    if ctx.atomic_fetch_inc::<i64>(inside, 0).await? != 0 {
                        return Err(ShmemError::Program("two PEs inside the critical section".into()));
                    }
                    ctx.atomic_add::<i64>(inside, -1, 0).await?;
                    ctx.clear_lock(lock).await?;
                }
                Ok(0)
            })
            .map_err(err)?;
        report.values().map_err(|(pe, e)| format!("seed {s} PE {pe}: {e}"))?;
    }
    Ok(())
}

fn heap_replay(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for case in 0..cases {
        let mut heaps = vec![HeapState::new(16384, 32768).map_err(err)?; 4];
        let mut live: Vec<SymAddr> = Vec::new();
        for _ in 0..50 {
            let op = rng.random_range(0..4);
            let n = rng.random_range(1..600);
            let results: Vec<Result<Option<SymAddr>, HeapError>> = heaps
                .iter_mut()
                .map(|h| match op {
                    0 => h.alloc(n).map(Some),
                    1 => h.align(8 << (n % 4), n).map(Some),
                    2 => match live.last() {
                        Some(a) => h.realloc(*a, n),
                        None => h.alloc(n).map(Some),
                    },
                    _ => match live.last() {
                        Some(a) => h.free(*a).map(|_| None),
                        None => Ok(None),
                    },
                })
                .collect();
            if results.iter().any(|r| *r != results[0]) {
                return Err(format!("case {case}: PEs diverged"));
            }
            match (op, &results[0]) {
                (0 | 1, Ok(Some(a))) => live.push(*a),
                (2, Ok(Some(a))) if live.is_empty() => live.push(*a),
                (2, Ok(Some(a))) => *live.last_mut().unwrap() = *a,
                (3, Ok(None)) => {
                    live.pop();
                }
                _ => {}
            }
            if live.len() > 1 {
                let stale = live[0];
                for h in &mut heaps {
                    if !matches!(h.free(stale), Err(HeapError::OrderingViolation { .. })) {
                        return Err(format!("case {case}: out-of-order free accepted"));
                    }
                }
            }
        }
    }
    Ok(())
}

fn reduction_oracle(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let k = rng.random_range(1..=16usize);
        let nreduce = rng.random_range(1..=20usize);
        let data_seed: u64 = rng.random();
        let mut m = functional(rng.random());
        let report = m
            .run_spmd(move |ctx| async move {
                let n = ctx.n_pes();
                let src = ctx.malloc(8 * nreduce)?;
                let dst = ctx.malloc(8 * nreduce)?;
                let psync = ctx.malloc(8 * sync_size(n))?;
                let pwrk = ctx.malloc(8 * 64)?;
                let sync = SyncWork { psync, psync_len: sync_size(n), pwrk, pwrk_len: 64 };
                let me = ctx.my_pe();
                let vals: Vec<i64> = (0..nreduce).map(|i| (data_seed as i64 ^ (me * 31 + i) as i64) % 1000).collect();
                ctx.store_local(src, &vals).await?;
                ctx.barrier_all().await?;
                if me < k {
                    ctx.reduce_to_all::<i64>(ReduceKind::Sum, dst, src, nreduce, ActiveSet::new(0, 0, k), sync).await?;
                    let got = ctx.load_local::<i64>(dst, nreduce).await?;
                    for (i, g) in got.iter().enumerate() {
                        let want: i64 = (0..k).map(|p| (data_seed as i64 ^ (p * 31 + i) as i64) % 1000).sum();
                        if *g != want {
                            return Err(ShmemError::Program(format!("k={k} element {i}: {g} != {want}")));
                        }
                    }
                }
                Ok(0)
            })
            .map_err(err)?;
        report.values().map_err(|(pe, e)| format!("PE {pe}: {e}"))?;
    }
    Ok(())
}

fn subset_barriers(cases: usize, seed: u64) -> Result<(), String> {
    let mut m = timed(seed);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sets: Vec<ActiveSet> = (0..cases)
        .map(|_| {
            let log = rng.random_range(0..=2u32);
            let start = rng.random_range(0..16usize);
            let max = (16 - start - 1) / (1 << log) + 1;
            ActiveSet::new(start, log, rng.random_range(1..=max))
        })
        .collect();
    let report = m
        .run_spmd(move |ctx| {
            let sets = sets.clone();
            async move {
                let n = ctx.n_pes();
                let psync = ctx.malloc(8 * sync_size(n))?;
                let sync = SyncWork { psync, psync_len: sync_size(n), pwrk: psync, pwrk_len: 0 };
                for (i, a) in sets.iter().enumerate() {
                    if a.index_of(ctx.my_pe()).is_some() {
                        ctx.delay((ctx.my_pe() * 7 + i) as u64 % 50).await?;
                        ctx.barrier(*a, sync).await?;
                    }
                    ctx.barrier_all().await?;
                }
                Ok(0)
            }
        })
        .map_err(err)?;
    report.values().map_err(|(pe, e)| format!("PE {pe}: {e}"))?;
    check_barrier_safety(&report.trace).map(|_| ())
}

fn topology_bijection(cases: usize, seed: u64) -> Result<(), String> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..cases {
        let rows = rng.random_range(1..=8u32);
        let cols = rng.random_range(1..=8u32);
        let origin = crate::address::Coord::new(rng.random_range(1..=40), rng.random_range(0..=40));
        let disabled: Vec<_> = (0..rng.random_range(0..rows * cols))
            .map(|_| crate::address::Coord::new(origin.row + rng.random_range(0..rows), origin.col + rng.random_range(0..cols)))
            .collect();
        let Ok(wg) = Workgroup::new(origin, rows, cols, disabled) else { continue };
        for pe in 0..wg.n_pes() {
            let c = wg.coord_of_pe(pe).map_err(err)?;
            if wg.pe_of_coord(c).map_err(err)? != pe {
                return Err(format!("rank {pe} does not round-trip through {c}"));
            }
        }
    }
    Ok(())
}

fn deterministic_reports(cases: usize, seed: u64) -> Result<(), String> {
    for s in 0..cases as u64 {
        let run = || -> Result<String, String> {
            let mut m = timed(seed ^ s);
            let b = bench_barrier(&mut m).map_err(err)?;
            let c = bench_copy(&m, &default_copy_sizes()).map_err(err)?;
            Ok(b.to_csv() + &c.to_csv())
        };
        if run()? != run()? {
            return Err(format!("seed {s}: reports differ between reruns"));
        }
    }
    Ok(())
}

/// Runs every property with `cases` random cases each.
pub fn run_all(cases: usize, seed: u64) -> Vec<PropOutcome> {
    type Prop = fn(usize, u64) -> Result<(), String>;
    let props: [(&'static str, Prop, usize); 8] = [
        ("put_get_roundtrip", put_get_roundtrip, cases),
        ("atomic_counter", atomic_counter, cases),
        ("lock_exclusion", lock_exclusion, cases),
        ("heap_replay", heap_replay, cases),
        ("reduction_oracle", reduction_oracle, cases),
        ("subset_barriers", subset_barriers, cases * 10),
        ("topology_bijection", topology_bijection, cases * 10),
        ("deterministic_reports", deterministic_reports, cases.div_ceil(10)),
    ];
    props
        .into_iter()
        .map(|(name, f, n)| {
            let t0 = Instant::now();
            let result = f(n, seed);
            PropOutcome { name, cases: n, result, seconds: t0.elapsed().as_secs_f64() }
        })
        .collect()
}
