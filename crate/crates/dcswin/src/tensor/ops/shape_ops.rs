//! Reshapes, permutations, slicing, padding, concatenation, gathers and
//! cyclic rolls. All produce fresh contiguous buffers.

use crate::tensor::ops::axis_blocks;
use crate::tensor::{strides_for, Element, Tensor};

/// View the same elements under a new shape (copying).
pub fn reshape<T: Element>(x: &Tensor<T>, shape: impl Into<Vec<usize>>) -> Tensor<T> {
    let shape = shape.into();
    let n: usize = shape.iter().product();
    assert_eq!(
        n,
        x.elem_count(),
        "reshape {:?} -> {:?} changes element count",
        x.shape(),
        shape
    );
    Tensor::from_op(
        shape,
        x.to_vec(),
        vec![x.clone()],
        Box::new(|ctx| vec![Some(ctx.out_grad.to_vec())]),
    )
}

/// Reorder dimensions: output dim `d` is input dim `perm[d]`.
pub fn permute<T: Element>(x: &Tensor<T>, perm: &[usize]) -> Tensor<T> {
    let rank = x.rank();
    assert_eq!(perm.len(), rank, "permute {:?} on rank-{} tensor", perm, rank);
    let mut seen = vec![false; rank];
    for &p in perm {
        assert!(p < rank && !seen[p], "invalid permutation {:?}", perm);
        seen[p] = true;
    }
    let in_shape = x.shape().to_vec();
    let out_shape: Vec<usize> = perm.iter().map(|&p| in_shape[p]).collect();
    let in_strides = strides_for(&in_shape);
    // Stride in the input for each output dim.
    let gather_strides: Vec<usize> = perm.iter().map(|&p| in_strides[p]).collect();

    let n = x.elem_count();
    let mut out = vec![T::zero(); n];
    {
        let xd = x.data();
        for_each_strided(&out_shape, &gather_strides, |dst, src| out[dst] = xd[src]);
    }
    Tensor::from_op(
        out_shape.clone(),
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut dx = vec![T::zero(); ctx.parents[0].elem_count()];
            for_each_strided(&out_shape, &gather_strides, |dst, src| {
                dx[src] = dx[src] + ctx.out_grad[dst];
            });
            vec![Some(dx)]
        }),
    )
}

/// Walk flat indices of `shape` in row-major order, also tracking the flat
/// index under `strides`. Calls `f(flat_rowmajor, flat_strided)`.
fn for_each_strided(shape: &[usize], strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = shape.len();
    let n: usize = shape.iter().product();
    if rank == 0 {
        if n > 0 {
            f(0, 0);
        }
        return;
    }
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for dst in 0..n {
        f(dst, src);
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += strides[d];
            if idx[d] < shape[d] {
                break;
            }
            src -= strides[d] * shape[d];
            idx[d] = 0;
        }
    }
}

/// Contiguous slice `[start, start+len)` along `axis`.
pub fn narrow<T: Element>(x: &Tensor<T>, axis: usize, start: usize, len: usize) -> Tensor<T> {
    let (outer, mid, inner) = axis_blocks(x.shape(), axis);
    assert!(
        start + len <= mid,
        "narrow [{}, {}+{}) exceeds extent {} of axis {} in {:?}",
        start,
        start,
        len,
        mid,
        axis,
        x.shape()
    );
    let mut out = vec![T::zero(); outer * len * inner];
    {
        let xd = x.data();
        for o in 0..outer {
            let src = (o * mid + start) * inner;
            let dst = o * len * inner;
            out[dst..dst + len * inner].copy_from_slice(&xd[src..src + len * inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = len;
    Tensor::from_op(
        shape,
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut dx = vec![T::zero(); ctx.parents[0].elem_count()];
            for o in 0..outer {
                let dst = (o * mid + start) * inner;
                let src = o * len * inner;
                dx[dst..dst + len * inner].copy_from_slice(&ctx.out_grad[src..src + len * inner]);
            }
            vec![Some(dx)]
        }),
    )
}

/// Zero-pad `axis` with `before` leading and `after` trailing slots.
pub fn pad_axis<T: Element>(x: &Tensor<T>, axis: usize, before: usize, after: usize) -> Tensor<T> {
    let (outer, mid, inner) = axis_blocks(x.shape(), axis);
    let new_mid = before + mid + after;
    let mut out = vec![T::zero(); outer * new_mid * inner];
    {
        let xd = x.data();
        for o in 0..outer {
            let src = o * mid * inner;
            let dst = (o * new_mid + before) * inner;
            out[dst..dst + mid * inner].copy_from_slice(&xd[src..src + mid * inner]);
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = new_mid;
    Tensor::from_op(
        shape,
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut dx = vec![T::zero(); outer * mid * inner];
            for o in 0..outer {
                let src = (o * new_mid + before) * inner;
                let dst = o * mid * inner;
                dx[dst..dst + mid * inner].copy_from_slice(&ctx.out_grad[src..src + mid * inner]);
            }
            vec![Some(dx)]
        }),
    )
}

/// Concatenate along `axis`. All other extents must match.
pub fn concat<T: Element>(xs: &[&Tensor<T>], axis: usize) -> Tensor<T> {
    assert!(!xs.is_empty(), "concat of zero tensors");
    let first = xs[0].shape().to_vec();
    let mut mids = Vec::with_capacity(xs.len());
    for x in xs {
        assert_eq!(x.rank(), first.len(), "concat rank mismatch");
        for (d, (&a, &b)) in first.iter().zip(x.shape()).enumerate() {
            assert!(
                d == axis || a == b,
                "concat shape mismatch on dim {}: {:?} vs {:?}",
                d,
                first,
                x.shape()
            );
        }
        mids.push(x.shape()[axis]);
    }
    let (outer, _, inner) = axis_blocks(&first, axis);
    let total_mid: usize = mids.iter().sum();
    let mut out = vec![T::zero(); outer * total_mid * inner];
    {
        let mut offset = 0usize;
        for (x, &m) in xs.iter().zip(&mids) {
            let xd = x.data();
            for o in 0..outer {
                let src = o * m * inner;
                let dst = (o * total_mid + offset) * inner;
                out[dst..dst + m * inner].copy_from_slice(&xd[src..src + m * inner]);
            }
            offset += m;
        }
    }
    let mut shape = first;
    shape[axis] = total_mid;
    let parents: Vec<Tensor<T>> = xs.iter().map(|x| (*x).clone()).collect();
    Tensor::from_op(
        shape,
        out,
        parents,
        Box::new(move |ctx| {
            let mut grads = Vec::with_capacity(ctx.parents.len());
            let mut offset = 0usize;
            for (p, &m) in ctx.parents.iter().zip(&mids) {
                let mut dx = vec![T::zero(); p.elem_count()];
                for o in 0..outer {
                    let src = (o * total_mid + offset) * inner;
                    let dst = o * m * inner;
                    dx[dst..dst + m * inner].copy_from_slice(&ctx.out_grad[src..src + m * inner]);
                }
                grads.push(Some(dx));
                offset += m;
            }
            grads
        }),
    )
}

/// Concatenate NCHW tensors along the channel dimension.
pub fn concat_channels<T: Element>(xs: &[&Tensor<T>]) -> Tensor<T> {
    concat(xs, 1)
}

/// Gather slices along `axis` at `indices` (repeats allowed). Output extent
/// on `axis` is `indices.len()`.
pub fn index_select<T: Element>(x: &Tensor<T>, axis: usize, indices: &[usize]) -> Tensor<T> {
    let (outer, mid, inner) = axis_blocks(x.shape(), axis);
    for &i in indices {
        assert!(i < mid, "index {} out of range for axis {} extent {}", i, axis, mid);
    }
    let k = indices.len();
    let mut out = vec![T::zero(); outer * k * inner];
    {
        let xd = x.data();
        for o in 0..outer {
            for (j, &i) in indices.iter().enumerate() {
                let src = (o * mid + i) * inner;
                let dst = (o * k + j) * inner;
                out[dst..dst + inner].copy_from_slice(&xd[src..src + inner]);
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = k;
    let idx = indices.to_vec();
    Tensor::from_op(
        shape,
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            // Scatter-add: repeated indices accumulate.
            let mut dx = vec![T::zero(); ctx.parents[0].elem_count()];
            for o in 0..outer {
                for (j, &i) in idx.iter().enumerate() {
                    let dst = (o * mid + i) * inner;
                    let src = (o * k + j) * inner;
                    for t in 0..inner {
                        dx[dst + t] = dx[dst + t] + ctx.out_grad[src + t];
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Cyclic shift along `axis`: `out[i] = in[(i - shift) mod extent]`, so a
/// positive shift moves content toward higher indices.
pub fn roll_axis<T: Element>(x: &Tensor<T>, axis: usize, shift: isize) -> Tensor<T> {
    let (outer, mid, inner) = axis_blocks(x.shape(), axis);
    let m = mid as isize;
    let s = ((shift % m) + m) % m;
    let s = s as usize;
    let mut out = vec![T::zero(); x.elem_count()];
    {
        let xd = x.data();
        roll_copy(&xd, &mut out, outer, mid, inner, s);
    }
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut dx = vec![T::zero(); ctx.out_grad.len()];
            roll_copy(ctx.out_grad, &mut dx, outer, mid, inner, (mid - s) % mid);
            vec![Some(dx)]
        }),
    )
}

fn roll_copy<T: Copy>(src: &[T], dst: &mut [T], outer: usize, mid: usize, inner: usize, shift: usize) {
    for o in 0..outer {
        for i in 0..mid {
            let j = (i + shift) % mid;
            let s = (o * mid + i) * inner;
            let d = (o * mid + j) * inner;
            dst[d..d + inner].copy_from_slice(&src[s..s + inner]);
        }
    }
}
