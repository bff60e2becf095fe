//! Reductions and row-wise normalizations over the last dimension.

use crate::tensor::ops::axis_blocks;
use crate::tensor::{Element, Tensor};

/// Sum of all elements, as a one-element tensor.
pub fn sum_all<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let s: T = x.data().iter().copied().sum();
    Tensor::from_op(
        vec![1],
        vec![s],
        vec![x.clone()],
        Box::new(|ctx| {
            let g = ctx.out_grad[0];
            vec![Some(vec![g; ctx.parents[0].elem_count()])]
        }),
    )
}

/// Sum over `axis`, keeping it with extent 1 so the result broadcasts
/// against the input.
pub fn sum_axis<T: Element>(x: &Tensor<T>, axis: usize) -> Tensor<T> {
    let (outer, mid, inner) = axis_blocks(x.shape(), axis);
    let mut out = vec![T::zero(); outer * inner];
    {
        let xd = x.data();
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let orow = &mut out[o * inner..(o + 1) * inner];
                for i in 0..inner {
                    orow[i] = orow[i] + xd[base + i];
                }
            }
        }
    }
    let mut shape = x.shape().to_vec();
    shape[axis] = 1;
    Tensor::from_op(
        shape,
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let mut dx = vec![T::zero(); ctx.parents[0].elem_count()];
            for o in 0..outer {
                let grow = &ctx.out_grad[o * inner..(o + 1) * inner];
                for m in 0..mid {
                    let base = (o * mid + m) * inner;
                    dx[base..base + inner].copy_from_slice(grow);
                }
            }
            vec![Some(dx)]
        }),
    )
}

fn last_dim_rows(shape: &[usize]) -> (usize, usize) {
    assert!(!shape.is_empty(), "row ops need rank >= 1");
    let d = shape[shape.len() - 1];
    (shape.iter().product::<usize>() / d, d)
}

/// Numerically stable softmax over the last dimension.
pub fn softmax_lastdim<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, d) = last_dim_rows(x.shape());
    let mut out = vec![T::zero(); rows * d];
    {
        let xd = x.data();
        for r in 0..rows {
            let xrow = &xd[r * d..(r + 1) * d];
            let orow = &mut out[r * d..(r + 1) * d];
            let mx = xrow.iter().copied().fold(T::neg_infinity(), T::max);
            let mut z = T::zero();
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o = (v - mx).exp();
                z = z + *o;
            }
            for o in orow.iter_mut() {
                *o = *o / z;
            }
        }
    }
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            // dx = (g - <g, y>) * y per row
            let y = ctx.output.data();
            let mut dx = vec![T::zero(); y.len()];
            for r in 0..rows {
                let yrow = &y[r * d..(r + 1) * d];
                let grow = &ctx.out_grad[r * d..(r + 1) * d];
                let dot: T = grow.iter().zip(yrow).map(|(&g, &y)| g * y).sum();
                for ((o, &g), &y) in dx[r * d..(r + 1) * d].iter_mut().zip(grow).zip(yrow) {
                    *o = (g - dot) * y;
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Numerically stable log-softmax over the last dimension.
pub fn log_softmax_lastdim<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let (rows, d) = last_dim_rows(x.shape());
    let mut out = vec![T::zero(); rows * d];
    {
        let xd = x.data();
        for r in 0..rows {
            let xrow = &xd[r * d..(r + 1) * d];
            let orow = &mut out[r * d..(r + 1) * d];
            let mx = xrow.iter().copied().fold(T::neg_infinity(), T::max);
            let z: T = xrow.iter().map(|&v| (v - mx).exp()).sum();
            let lz = z.ln() + mx;
            for (o, &v) in orow.iter_mut().zip(xrow) {
                *o = v - lz;
            }
        }
    }
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            // dx = g - softmax(x) * sum(g) per row
            let y = ctx.output.data();
            let mut dx = vec![T::zero(); y.len()];
            for r in 0..rows {
                let yrow = &y[r * d..(r + 1) * d];
                let grow = &ctx.out_grad[r * d..(r + 1) * d];
                let gsum: T = grow.iter().copied().sum();
                for ((o, &g), &ly) in dx[r * d..(r + 1) * d].iter_mut().zip(grow).zip(yrow) {
                    *o = g - ly.exp() * gsum;
                }
            }
            vec![Some(dx)]
        }),
    )
}

/// Row-wise L2 normalization over the last dimension:
/// `y = x / sqrt(sum(x^2) + eps)` with `eps = 1e-12`.
pub fn l2_normalize_lastdim<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let eps = T::of_f64(1e-12);
    let (rows, d) = last_dim_rows(x.shape());
    let mut out = vec![T::zero(); rows * d];
    {
        let xd = x.data();
        for r in 0..rows {
            let xrow = &xd[r * d..(r + 1) * d];
            let s: T = xrow.iter().map(|&v| v * v).sum();
            let inv = (s + eps).sqrt().recip();
            for (o, &v) in out[r * d..(r + 1) * d].iter_mut().zip(xrow) {
                *o = v * inv;
            }
        }
    }
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            // With s = (sum x^2 + eps)^(-1/2): dx = s*g - s^3 * x * <g, x>
            let xd = ctx.parents[0].data();
            let mut dx = vec![T::zero(); xd.len()];
            for r in 0..rows {
                let xrow = &xd[r * d..(r + 1) * d];
                let grow = &ctx.out_grad[r * d..(r + 1) * d];
                let ssum: T = xrow.iter().map(|&v| v * v).sum();
                let s = (ssum + eps).sqrt().recip();
                let s3 = s * s * s;
                let dot: T = grow.iter().zip(xrow).map(|(&g, &x)| g * x).sum();
                for ((o, &g), &x) in dx[r * d..(r + 1) * d].iter_mut().zip(grow).zip(xrow) {
                    *o = s * g - s3 * x * dot;
                }
            }
            vec![Some(dx)]
        }),
    )
}
