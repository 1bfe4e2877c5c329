//! Node-loop execution strategy.
//!
//! Every node-wise kernel funnels through `chunks_apply`. With the
//! `parallel` feature the default [`ExecMode::Auto`] fans large sweeps out
//! over rayon and keeps small ones sequential (fork-join overhead plus
//! cache scatter beat the gain well past 128^2 on few-core machines; the
//! bench suite measures the crossover per host). [`set_mode`] forces
//! either path at runtime so the two can be compared in one process.
//!
//! Per-element arithmetic is identical in all modes and no kernel reduces
//! floats across chunks, so results are bit-identical everywhere.

use std::sync::atomic::{AtomicU8, Ordering};

#[cfg(feature = "parallel")]
use rayon::prelude::*;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExecMode {
    /// size-based choice (the default)
    Auto,
    /// plain loops regardless of size
    Sequential,
    /// rayon regardless of size (sequential when the feature is off)
    Parallel,
}

static MODE: AtomicU8 = AtomicU8::new(0);

pub fn set_mode(mode: ExecMode) {
    let v = match mode {
        ExecMode::Auto => 0,
        ExecMode::Sequential => 1,
        ExecMode::Parallel => 2,
    };
    MODE.store(v, Ordering::Relaxed);
}

pub fn mode() -> ExecMode {
    match MODE.load(Ordering::Relaxed) {
        1 => ExecMode::Sequential,
        2 => ExecMode::Parallel,
        _ => ExecMode::Auto,
    }
}

/// Target floats per parallel task.
const PAR_TASK_LEN: usize = 1 << 13;
/// In Auto mode a pointwise fill goes parallel above this many floats.
pub(crate) const FILL_PAR_MIN: usize = 1 << 17;
/// Stencil sweeps are cheaper per float; they need even more data.
pub(crate) const DIFF_PAR_MIN: usize = 1 << 18;

fn go_parallel(len: usize, min_par_len: usize) -> bool {
    match mode() {
        ExecMode::Auto => len >= min_par_len,
        ExecMode::Sequential => false,
        ExecMode::Parallel => true,
    }
}

/// Split `out` into `chunk`-sized pieces and apply `f(chunk_index, piece)`
/// to each. The last piece may be short.
pub(crate) fn chunks_apply<F>(out: &mut [f64], chunk: usize, min_par_len: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    debug_assert!(chunk > 0);
    #[cfg(feature = "parallel")]
    if go_parallel(out.len(), min_par_len) {
        let min_chunks = PAR_TASK_LEN.div_ceil(chunk).max(1);
        out.par_chunks_mut(chunk)
            .enumerate()
            .with_min_len(min_chunks)
            .for_each(|(i, piece)| f(i, piece));
        return;
    }
    #[cfg(not(feature = "parallel"))]
    let _ = go_parallel(out.len(), min_par_len);
    for (i, piece) in out.chunks_mut(chunk).enumerate() {
        f(i, piece);
    }
}

/// Node-blocked pointwise fill: `f(first_node, block)` writes the components
/// of nodes `first_node ..` into `block` (layout: `comps` floats per node).
pub(crate) fn fill_nodes<F>(out: &mut [f64], comps: usize, f: F)
where
    F: Fn(usize, &mut [f64]) + Sync,
{
    const NODE_BLOCK: usize = 1024;
    chunks_apply(out, NODE_BLOCK * comps, FILL_PAR_MIN, |ci, block| {
        f(ci * NODE_BLOCK, block);
    });
}

// Scratch-buffer pool, one per thread. The inner kernels churn through
// multi-hundred-KB intermediates every stage; recycling them avoids both
// the allocator and the `vec![0.0; n]` memset (each reused buffer is fully
// overwritten by its kernel before being read).
use std::cell::RefCell;

thread_local! {
    static POOL: RefCell<Vec<Vec<f64>>> = const { RefCell::new(Vec::new()) };
}

/// A pooled buffer of `len` floats. Contents are arbitrary stale data;
/// callers must overwrite every element they read back.
pub(crate) fn take_buf(len: usize) -> Vec<f64> {
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        if let Some(pos) = p.iter().position(|b| b.capacity() >= len) {
            let mut b = p.swap_remove(pos);
            // capacity checked; f64 needs no initialization tracking
            unsafe { b.set_len(len) };
            b
        } else {
            vec![0.0; len]
        }
    })
}

pub(crate) fn put_buf(b: Vec<f64>) {
    POOL.with(|p| {
        let mut p = p.borrow_mut();
        if p.len() < 32 {
            p.push(b);
        }
    });
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fill_matches_direct_loop() {
        let mut a = vec![0.0; 3 * 2500];
        let mut b = vec![0.0; 3 * 2500];
        fill_nodes(&mut a, 3, |node0, block| {
            for (off, comps) in block.chunks_exact_mut(3).enumerate() {
                let n = (node0 + off) as f64;
                comps[0] = n;
                comps[1] = n * 0.5;
                comps[2] = -n;
            }
        });
        for (node, comps) in b.chunks_exact_mut(3).enumerate() {
            let n = node as f64;
            comps[0] = n;
            comps[1] = n * 0.5;
            comps[2] = -n;
        }
        assert_eq!(a, b);
    }

    #[test]
    fn forced_modes_are_bit_identical() {
        let work = |out: &mut [f64]| {
            fill_nodes(out, 1, |node0, block| {
                for (off, v) in block.iter_mut().enumerate() {
                    let x = (node0 + off) as f64 * 1e-3;
                    *v = (x.sin() * 3.7).exp() - x;
                }
            });
        };
        let mut par = vec![0.0; 10_000];
        set_mode(ExecMode::Parallel);
        work(&mut par);
        let mut seq = vec![0.0; 10_000];
        set_mode(ExecMode::Sequential);
        work(&mut seq);
        set_mode(ExecMode::Auto);
        let mut auto = vec![0.0; 10_000];
        work(&mut auto);
        assert_eq!(par, seq);
        assert_eq!(auto, seq);
    }

    #[test]
    fn pool_round_trips_capacity() {
        let b = take_buf(1000);
        assert_eq!(b.len(), 1000);
        put_buf(b);
        let b2 = take_buf(500);
        assert_eq!(b2.len(), 500);
        assert!(b2.capacity() >= 1000, "pooled buffer should be reused");
    }
}
