//! Reverse-mode gradient engine.
//!
//! Ops record their parents plus a backward closure; `backward` seeds the
//! scalar loss with 1 and walks the graph in reverse topological order,
//! pushing vector-Jacobian products into each parent's gradient buffer.
//! Gradients accumulate until `zero_grad`, so repeated backward calls add up.

use std::cell::Cell;
use std::collections::HashSet;

use super::{BackwardCtx, Element, Tensor};
use crate::error::{Error, Result};

thread_local! {
    static GRAD_ENABLED: Cell<bool> = const { Cell::new(true) };
}

/// Is graph recording currently enabled on this thread?
pub fn is_grad_enabled() -> bool {
    GRAD_ENABLED.with(|g| g.get())
}

/// Run `f` without recording the graph. Used for evaluation and for the
/// forward re-evaluations inside finite-difference checks.
pub fn no_grad<R>(f: impl FnOnce() -> R) -> R {
    GRAD_ENABLED.with(|g| {
        let prev = g.replace(false);
        let out = f();
        g.set(prev);
        out
    })
}

/// Backpropagate from a scalar loss, populating gradient buffers of every
/// reachable tensor on the gradient path.
pub fn backward<T: Element>(loss: &Tensor<T>) -> Result<()> {
    if loss.elem_count() != 1 {
        return Err(Error::Invalid(format!(
            "backward requires a scalar loss, got shape {:?}",
            loss.shape()
        )));
    }

    // Iterative post-order DFS over parent edges. Reversed post-order is a
    // topological order, so each tensor's gradient is complete before its
    // own backward closure runs.
    let mut order: Vec<Tensor<T>> = Vec::new();
    let mut visited: HashSet<usize> = HashSet::new();
    let mut stack: Vec<(Tensor<T>, bool)> = vec![(loss.clone(), false)];
    while let Some((t, expanded)) = stack.pop() {
        if expanded {
            order.push(t);
            continue;
        }
        if !visited.insert(t.ptr_key()) {
            continue;
        }
        stack.push((t.clone(), true));
        if let Some(op) = t.op() {
            for p in &op.parents {
                if p.requires_grad_path() && !visited.contains(&p.ptr_key()) {
                    stack.push((p.clone(), false));
                }
            }
        }
    }

    loss.accumulate_grad(&[T::one()]);
    for t in order.iter().rev() {
        let Some(op) = t.op() else { continue };
        let Some(out_grad) = t.grad() else { continue };
        let ctx = BackwardCtx {
            parents: &op.parents,
            output: t,
            out_grad: &out_grad,
        };
        let contributions = (op.backward)(&ctx);
        assert_eq!(
            contributions.len(),
            op.parents.len(),
            "backward closure must produce one slot per parent"
        );
        for (parent, contribution) in op.parents.iter().zip(contributions) {
            if let Some(c) = contribution {
                if parent.requires_grad_path() {
                    parent.accumulate_grad(&c);
                }
            }
        }
        // Gradients are retained on leaves only; an op output's grad is
        // transient scratch, and keeping it would double-seed the next
        // backward pass through the same graph.
        t.zero_grad();
    }
    Ok(())
}
