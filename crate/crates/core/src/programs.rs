//! Built-in SPMD programs used by the benchmarks and the `run` subcommand.


use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::collectives::{sync_size, wrk_size, ActiveSet, SyncWork};
use crate::shmem::{ReduceKind, ShmemCtx, ShmemError};

pub const BUILTINS: [&str; 4] = ["ranks", "dotprod", "locks", "reduce"];

/// Default vector length per PE: two float vectors fill a 16 KiB heap.
pub const DEFAULT_N_PER_PE: usize = 2048;

/// Trace labels bracketing the measured part of the dot product.
pub const MARK_START: &str = "start";
pub const MARK_REDUCE: &str = "reduce";
pub const MARK_END: &str = "end";

/// Sync and scratch arrays for one-float reductions over `n_pes` PEs,
/// carved from the static segment.
pub fn float_sync(ctx: &ShmemCtx) -> Result<SyncWork, ShmemError> {
    let psync_len = sync_size(ctx.n_pes());
    let pwrk_len = wrk_size(1);
    Ok(SyncWork {
        psync: ctx.static_alloc(8 * psync_len)?,
        psync_len,
        pwrk: ctx.static_alloc(4 * pwrk_len)?,
        pwrk_len,
    })
}

/// Each PE sends its rank to its right neighbour; returns the rank received.
pub async fn ranks(ctx: ShmemCtx) -> Result<i64, ShmemError> {
    let slot = ctx.malloc(8)?;
    let right = (ctx.my_pe() + 1) % ctx.n_pes();
    ctx.p(slot, ctx.my_pe() as i64, right).await?;
    ctx.barrier_all().await?;
    Ok(ctx.load_local::<i64>(slot, 1).await?[0])
}

/// The input vectors of PE `pe`, uniform in `[0, 1)`.
pub fn dotprod_inputs(seed: u64, pe: usize, n: usize) -> (Vec<f32>, Vec<f32>) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(pe as u64 + 1);
    let x = (0..n).map(|_| rng.random::<f32>()).collect();
    let y = (0..n).map(|_| rng.random::<f32>()).collect();
    (x, y)
}

/// Distributed dot product: a local multiply-add loop followed by a
/// one-float sum reduction. Every PE returns the `f32` bits of the result.
pub async fn dotprod(ctx: ShmemCtx, n: usize, seed: u64) -> Result<i64, ShmemError> {
    let x = ctx.malloc(4 * n)?;
    let y = ctx.malloc(4 * n)?;
    let src = ctx.static_alloc(4)?;
    let dst = ctx.static_alloc(4)?;
    let sync = float_sync(&ctx)?;
    let (xs, ys) = dotprod_inputs(seed, ctx.my_pe(), n);
    ctx.store_local(x, &xs).await?;
    ctx.store_local(y, &ys).await?;
    ctx.barrier_all().await?;

    ctx.mark(MARK_START);
    let xv = ctx.load_local::<f32>(x, n).await?;
    let yv = ctx.load_local::<f32>(y, n).await?;
    let local = xv.iter().zip(&yv).fold(0f32, |acc, (a, b)| a.mul_add(*b, acc));
    let t = ctx.timing();
    ctx.delay(t.compute_cycles(2 * n as u64) + t.loop_overhead_cycles).await?;
    ctx.store_local(src, &[local]).await?;

    ctx.mark(MARK_REDUCE);
    ctx.reduce_to_all::<f32>(ReduceKind::Sum, dst, src, 1, ActiveSet::all(ctx.n_pes()), sync).await?;
    ctx.mark(MARK_END);
    Ok(ctx.load_local::<f32>(dst, 1).await?[0].to_bits() as i64)
}

/// Every PE increments a counter on PE 0 `iters` times under the global
/// lock. Returns the counter value each PE reads after a final barrier.
pub async fn locks(ctx: ShmemCtx, iters: usize) -> Result<i64, ShmemError> {
    let lock = ctx.malloc(8)?;
    let counter = ctx.malloc(8)?;
    ctx.barrier_all().await?;
    for _ in 0..iters {
        ctx.set_lock(lock).await?;
        let v: i64 = ctx.g(counter, 0).await?;
        ctx.p(counter, v + 1, 0).await?;
        ctx.clear_lock(lock).await?;
    }
    ctx.barrier_all().await?;
    ctx.g(counter, 0).await
}

/// Sum of all ranks via `reduce_to_all`.
pub async fn reduce(ctx: ShmemCtx) -> Result<i64, ShmemError> {
    let n = ctx.n_pes();
    let src = ctx.malloc(8)?;
    let dst = ctx.malloc(8)?;
    let psync = ctx.malloc(8 * sync_size(n))?;
    let pwrk = ctx.malloc(8 * wrk_size(1))?;
    let sync = SyncWork { psync, psync_len: sync_size(n), pwrk, pwrk_len: wrk_size(1) };
    ctx.store_local(src, &[ctx.my_pe() as i64]).await?;
    ctx.barrier_all().await?;
    ctx.reduce_to_all::<i64>(ReduceKind::Sum, dst, src, 1, ActiveSet::all(n), sync).await?;
    Ok(ctx.load_local::<i64>(dst, 1).await?[0])
}
