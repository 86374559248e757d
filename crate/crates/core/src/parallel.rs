//! Runtime switch for the rayon data-parallel paths.
//!
//! Every parallel kernel splits its output into disjoint planes and computes
//! each plane with the same sequential inner loop, so results are
//! bit-identical with parallelism on or off. Building without the `parallel`
//! feature removes rayon entirely and the switch reads as permanently off.

#[cfg(feature = "parallel")]
use std::sync::atomic::{AtomicBool, Ordering};

#[cfg(feature = "parallel")]
static PARALLEL: AtomicBool = AtomicBool::new(true);

#[cfg(feature = "parallel")]
pub fn set_parallel(on: bool) {
    PARALLEL.store(on, Ordering::Relaxed);
}

#[cfg(not(feature = "parallel"))]
pub fn set_parallel(_on: bool) {}

pub fn parallel_enabled() -> bool {
    #[cfg(feature = "parallel")]
    {
        PARALLEL.load(Ordering::Relaxed)
    }
    #[cfg(not(feature = "parallel"))]
    {
        false
    }
}

/// Run `f(plane_index, plane_slice)` over equally sized output planes,
/// in parallel when enabled and the work is worth spawning for.
pub fn for_each_plane<S: Send, F>(out: &mut [S], plane: usize, f: F)
where
    F: Fn(usize, &mut [S]) + Sync + Send,
{
    if plane == 0 || out.is_empty() {
        return;
    }
    #[cfg(feature = "parallel")]
    {
        let planes = out.len() / plane;
        if parallel_enabled() && planes > 1 && out.len() >= 4096 {
            use rayon::prelude::*;
            out.par_chunks_mut(plane).enumerate().for_each(|(i, chunk)| f(i, chunk));
            return;
        }
    }
    out.chunks_mut(plane).enumerate().for_each(|(i, chunk)| f(i, chunk));
}
