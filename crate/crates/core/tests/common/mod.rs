//! Sequential reference results for the collective tests.

#![allow(dead_code)]

use eshmem_core::{sync_size, wrk_size, ActiveSet, Elem, ElemType, Machine, MachineConfig, Mode, ReduceKind, ShmemError, SyncWork};

/// Exact integer fold: computed in i128 and truncated, which matches two's
/// complement wrap-around at every narrower width.
pub fn fold_int(op: ReduceKind, vals: &[i128], bits: u32) -> i128 {
    let mut acc = vals[0];
    for v in &vals[1..] {
        acc = match op {
            ReduceKind::Sum => acc.wrapping_add(*v),
            ReduceKind::Prod => acc.wrapping_mul(*v),
            ReduceKind::Min => acc.min(*v),
            ReduceKind::Max => acc.max(*v),
            ReduceKind::And => acc & v,
            ReduceKind::Or => acc | v,
            ReduceKind::Xor => acc ^ v,
        };
        if matches!(op, ReduceKind::Sum | ReduceKind::Prod) {
            acc = truncate(acc, bits);
        }
    }
    acc
}

pub fn truncate(v: i128, bits: u32) -> i128 {
    let shift = 128 - bits;
    (v << shift) >> shift
}

pub fn fold_float(op: ReduceKind, vals: &[f64]) -> f64 {
    let mut acc = vals[0];
    for v in &vals[1..] {
        acc = match op {
            ReduceKind::Sum => acc + v,
            ReduceKind::Prod => acc * v,
            ReduceKind::Min => acc.min(*v),
            ReduceKind::Max => acc.max(*v),
            _ => unreachable!("no bitwise ops on floats"),
        };
    }
    acc
}

/// Test-side conversions between element types and wide reference values.
pub trait Wide: Elem {
    fn from_unit(bits: u64) -> Self;
    fn wide(self) -> f64;
    fn wide_int(self) -> i128;
}

macro_rules! wide_int {
    ($t:ty) => {
        impl Wide for $t {
            fn from_unit(bits: u64) -> Self {
                bits as $t
            }
            fn wide(self) -> f64 {
                self as f64
            }
            fn wide_int(self) -> i128 {
                self as i128
            }
        }
    };
}

wide_int!(i8);
wide_int!(i16);
wide_int!(i32);
wide_int!(i64);

impl Wide for f32 {
    // [0.5, 1.5): products over 16 PEs stay well inside range
    fn from_unit(bits: u64) -> Self {
        0.5 + (bits >> 11) as f32 / (1u64 << 53) as f32
    }
    fn wide(self) -> f64 {
        self as f64
    }
    fn wide_int(self) -> i128 {
        unreachable!()
    }
}

impl Wide for f64 {
    fn from_unit(bits: u64) -> Self {
        0.5 + (bits >> 11) as f64 / (1u64 << 53) as f64
    }
    fn wide(self) -> f64 {
        self
    }
    fn wide_int(self) -> i128 {
        unreachable!()
    }
}

/// Checks `got` against the fold of `inputs` (one vector per member).
pub fn matches_fold<T: Wide>(op: ReduceKind, inputs: &[Vec<T>], got: &[T]) -> Result<(), String> {
    for (i, g) in got.iter().enumerate() {
        if T::TYPE.is_integer() {
            let col: Vec<i128> = inputs.iter().map(|v| v[i].wide_int()).collect();
            let want = fold_int(op, &col, 8 * T::TYPE.size() as u32);
            if g.wide_int() != want {
                return Err(format!("{:?} {} element {i}: got {}, want {want}", op, T::TYPE.name(), g.wide_int()));
            }
        } else {
            let col: Vec<f64> = inputs.iter().map(|v| v[i].wide()).collect();
            let want = fold_float(op, &col);
            let rel = ((g.wide() - want) / want).abs();
            if rel > 1e-5 {
                return Err(format!("{:?} {} element {i}: got {}, want {want}", op, T::TYPE.name(), g.wide()));
            }
        }
    }
    Ok(())
}

pub fn applicable(op: ReduceKind, ty: ElemType) -> bool {
    !matches!(op, ReduceKind::And | ReduceKind::Or | ReduceKind::Xor) || ty.is_integer()
}

/// Runs one `reduce_to_all` over `aset` with member `i` contributing
/// `inputs[i]`, and checks every member's result against the fold.
pub fn check_reduce<T: Wide>(op: ReduceKind, aset: ActiveSet, inputs: Vec<Vec<T>>, mode: Mode, seed: u64) -> Result<(), String> {
    let mut m = Machine::new(MachineConfig { mode, seed, ..Default::default() }).map_err(|e| e.to_string())?;
    let report = m
        .run_spmd(move |ctx| {
            let inputs = inputs.clone();
            async move {
                let n = ctx.n_pes();
                let nreduce = inputs[0].len();
                let size = T::TYPE.size();
                let src = ctx.malloc(size * nreduce)?;
                let dst = ctx.malloc(size * nreduce)?;
                let psync = ctx.malloc(8 * sync_size(n))?;
                let pwrk_len = wrk_size(nreduce);
                let pwrk = ctx.malloc(size * pwrk_len)?;
                let sync = SyncWork { psync, psync_len: sync_size(n), pwrk, pwrk_len };
                let Some(i) = aset.index_of(ctx.my_pe()) else { return Ok(0) };
                ctx.store_local(src, &inputs[i]).await?;
                ctx.reduce_to_all::<T>(op, dst, src, nreduce, aset, sync).await?;
                let got = ctx.load_local::<T>(dst, nreduce).await?;
                matches_fold(op, &inputs, &got).map_err(ShmemError::Program)?;
                Ok(1)
            }
        })
        .map_err(|e| e.to_string())?;
    let values = report.values().map_err(|(pe, e)| format!("PE {pe}: {e}"))?;
    let members = values.iter().filter(|v| **v == 1).count();
    if members != aset.pe_size {
        return Err(format!("{members} members finished, expected {}", aset.pe_size));
    }
    Ok(())
}
