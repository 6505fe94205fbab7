//! A simulated Epiphany-style 2D-mesh many-core chip with an
//! OpenSHMEM 1.2-style PGAS runtime, and the benchmarks that exercise it.
//!
//! ```
//! use eshmem_core::{Machine, MachineConfig};
//!
//! let mut m = Machine::new(MachineConfig::default()).unwrap();
//! let report = m
//!     .run_spmd(|ctx| async move {
//!         let x = ctx.malloc(8)?;
//!         let right = (ctx.my_pe() + 1) % ctx.n_pes();
//!         ctx.p(x, ctx.my_pe() as i64, right).await?;
//!         ctx.barrier_all().await?;
//!         Ok(ctx.load_local::<i64>(x, 1).await?[0])
//!     })
//!     .unwrap();
//! assert_eq!(report.values().unwrap()[1], 0);
//! ```

pub mod address;
pub mod bench;
pub mod collectives;
pub mod config;
pub mod heap;
pub mod machine;
pub mod programs;
pub mod props;
pub mod shmem;
pub mod timing;
pub mod topology;

pub use address::{encode_address, split_address, AddressError, Coord, GlobalAddress, SymAddr};
pub use bench::{bench_barrier, bench_copy, bench_dotprod, BenchError, BenchReport, Cell};
pub use collectives::{sync_size, wrk_size, ActiveSet, SyncWork, SYNC_VALUE};
pub use config::{ConfigError, MachineConfig, Mode};
pub use heap::{HeapError, HeapState};
pub use machine::{check_barrier_safety, Cmp, Machine, MachineError, MachineReport, RmwOp, TraceKind, TraceRecord, Width};
pub use shmem::{AtomicElem, Elem, ElemType, IntElem, ReduceKind, ShmemCtx, ShmemError};
pub use timing::{hops, Engine, TimingParams};
pub use topology::{TopologyError, Workgroup};
