//! Multiply-accumulate instrumentation for the conv and FC kernels.
//!
//! Counting is per calling thread: kernels tally the MACs of their (possibly
//! parallel) inner loops and record the total on the thread that invoked them.

use std::cell::Cell;

thread_local! {
    static COUNTER: Cell<Option<u64>> = const { Cell::new(None) };
}

pub(crate) fn record(macs: u64) {
    COUNTER.with(|c| {
        if let Some(total) = c.get() {
            c.set(Some(total + macs));
        }
    });
}

/// Runs `f` with counting enabled and returns its result with the MACs executed.
pub fn count_macs<R>(f: impl FnOnce() -> R) -> (R, u64) {
    let previous = COUNTER.with(|c| c.replace(Some(0)));
    let out = f();
    let counted = COUNTER.with(|c| c.replace(previous)).unwrap_or(0);
    if let Some(outer) = previous {
        COUNTER.with(|c| c.set(Some(outer + counted)));
    }
    (out, counted)
}
