//! Allocation probe for complexity assertions.
//!
//! When armed on the current thread, every tensor buffer allocation reports
//! its element count here. The factorized attention path is required to
//! allocate nothing proportional to the squared token count; the probe makes
//! that checkable against the real code path instead of against a formula.

use std::cell::Cell;

thread_local! {
    static ARMED: Cell<bool> = const { Cell::new(false) };
    static MAX_ELEMS: Cell<usize> = const { Cell::new(0) };
    static TOTAL_ELEMS: Cell<usize> = const { Cell::new(0) };
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AllocStats {
    /// Largest single tensor buffer allocated while armed.
    pub max_elems: usize,
    /// Sum of all tensor buffer allocations while armed.
    pub total_elems: usize,
}

pub(crate) fn record_alloc(elems: usize) {
    ARMED.with(|armed| {
        if armed.get() {
            MAX_ELEMS.with(|m| m.set(m.get().max(elems)));
            TOTAL_ELEMS.with(|t| t.set(t.get() + elems));
        }
    });
}

/// Run `f` with the probe armed and return its allocation statistics.
pub fn with_probe<R>(f: impl FnOnce() -> R) -> (R, AllocStats) {
    ARMED.with(|a| a.set(true));
    MAX_ELEMS.with(|m| m.set(0));
    TOTAL_ELEMS.with(|t| t.set(0));
    let out = f();
    ARMED.with(|a| a.set(false));
    let stats = AllocStats {
        max_elems: MAX_ELEMS.with(|m| m.get()),
        total_elems: TOTAL_ELEMS.with(|t| t.get()),
    };
    (out, stats)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;

    #[test]
    fn probe_sees_allocations() {
        let (_t, stats) = with_probe(|| Tensor::<f32>::zeros(vec![4, 5]));
        assert_eq!(stats.max_elems, 20);
        assert_eq!(stats.total_elems, 20);
    }

    #[test]
    fn probe_disarmed_outside() {
        let _ = Tensor::<f32>::zeros(vec![1000]);
        let (_t, stats) = with_probe(|| Tensor::<f32>::zeros(vec![2]));
        assert_eq!(stats.max_elems, 2);
    }
}
