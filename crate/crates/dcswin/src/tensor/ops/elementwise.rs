//! Elementwise unary and binary ops. Binary ops broadcast between
//! equal-rank shapes where one side has extent 1 (numpy rules without
//! rank promotion); gradients are summed back over broadcast dims.

use crate::tensor::{strides_for, Element, Tensor};

fn broadcast_shape(a: &[usize], b: &[usize]) -> Vec<usize> {
    assert_eq!(
        a.len(),
        b.len(),
        "binary ops need equal-rank operands, got {:?} vs {:?}",
        a,
        b
    );
    a.iter()
        .zip(b)
        .map(|(&x, &y)| {
            assert!(
                x == y || x == 1 || y == 1,
                "incompatible broadcast shapes {:?} vs {:?}",
                a,
                b
            );
            x.max(y)
        })
        .collect()
}

/// Strides into `shape` when iterated over `out_shape`; broadcast dims get 0.
fn broadcast_strides(shape: &[usize], out_shape: &[usize]) -> Vec<usize> {
    let s = strides_for(shape);
    shape
        .iter()
        .zip(out_shape)
        .zip(&s)
        .map(|((&d, &o), &st)| if d == o { st } else { 0 })
        .collect()
}

/// Walk every flat output index, yielding the flat source index of a
/// broadcast operand. `f(out_idx, src_idx)`.
fn for_each_broadcast(out_shape: &[usize], src_strides: &[usize], mut f: impl FnMut(usize, usize)) {
    let rank = out_shape.len();
    if rank == 0 {
        f(0, 0);
        return;
    }
    let n: usize = out_shape.iter().product();
    let mut idx = vec![0usize; rank];
    let mut src = 0usize;
    for out in 0..n {
        f(out, src);
        // odometer increment
        for d in (0..rank).rev() {
            idx[d] += 1;
            src += src_strides[d];
            if idx[d] < out_shape[d] {
                break;
            }
            src -= src_strides[d] * out_shape[d];
            idx[d] = 0;
        }
    }
}

/// Sum `grad` (shaped `out_shape`) down to `target_shape`.
fn reduce_grad_to<T: Element>(grad: &[T], out_shape: &[usize], target_shape: &[usize]) -> Vec<T> {
    if out_shape == target_shape {
        return grad.to_vec();
    }
    let strides = broadcast_strides(target_shape, out_shape);
    let mut acc = vec![T::zero(); target_shape.iter().product()];
    for_each_broadcast(out_shape, &strides, |out, src| {
        acc[src] = acc[src] + grad[out];
    });
    acc
}

fn binary<T: Element>(
    a: &Tensor<T>,
    b: &Tensor<T>,
    fwd: fn(T, T) -> T,
    // (grad_out, a_val, b_val, out_val) -> (da, db)
    bwd: fn(T, T, T, T) -> (T, T),
) -> Tensor<T> {
    let out_shape = broadcast_shape(a.shape(), b.shape());
    let n: usize = out_shape.iter().product();
    let mut data = vec![T::zero(); n];
    {
        let ad = a.data();
        let bd = b.data();
        if a.shape() == b.shape() {
            for i in 0..n {
                data[i] = fwd(ad[i], bd[i]);
            }
        } else {
            let astr = broadcast_strides(a.shape(), &out_shape);
            let bstr = broadcast_strides(b.shape(), &out_shape);
            let mut bi_cache = vec![0usize; n];
            for_each_broadcast(&out_shape, &astr, |out, src| data[out] = ad[src]);
            for_each_broadcast(&out_shape, &bstr, |out, src| bi_cache[out] = src);
            for i in 0..n {
                data[i] = fwd(data[i], bd[bi_cache[i]]);
            }
        }
    }
    let out_shape_b = out_shape.clone();
    Tensor::from_op(
        out_shape,
        data,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx| {
            let a = &ctx.parents[0];
            let b = &ctx.parents[1];
            let ad = a.data();
            let bd = b.data();
            let od = ctx.output.data();
            let n = ctx.out_grad.len();
            let mut da_full = vec![T::zero(); n];
            let mut db_full = vec![T::zero(); n];
            if a.shape() == b.shape() {
                for i in 0..n {
                    let (da, db) = bwd(ctx.out_grad[i], ad[i], bd[i], od[i]);
                    da_full[i] = da;
                    db_full[i] = db;
                }
            } else {
                let astr = broadcast_strides(a.shape(), &out_shape_b);
                let bstr = broadcast_strides(b.shape(), &out_shape_b);
                let mut ai_cache = vec![0usize; n];
                let mut bi_cache = vec![0usize; n];
                for_each_broadcast(&out_shape_b, &astr, |out, src| ai_cache[out] = src);
                for_each_broadcast(&out_shape_b, &bstr, |out, src| bi_cache[out] = src);
                for i in 0..n {
                    let (da, db) = bwd(ctx.out_grad[i], ad[ai_cache[i]], bd[bi_cache[i]], od[i]);
                    da_full[i] = da;
                    db_full[i] = db;
                }
            }
            vec![
                Some(reduce_grad_to(&da_full, &out_shape_b, a.shape())),
                Some(reduce_grad_to(&db_full, &out_shape_b, b.shape())),
            ]
        }),
    )
}

pub fn add<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(a, b, |x, y| x + y, |g, _, _, _| (g, g))
}

pub fn sub<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(a, b, |x, y| x - y, |g, _, _, _| (g, T::zero() - g))
}

pub fn mul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(a, b, |x, y| x * y, |g, x, y, _| (g * y, g * x))
}

pub fn div<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    binary(
        a,
        b,
        |x, y| x / y,
        |g, _, y, o| (g / y, T::zero() - g * o / y),
    )
}

fn unary<T: Element>(x: &Tensor<T>, fwd: impl Fn(T) -> T, bwd: impl Fn(T, T, T) -> T + Send + Sync + 'static) -> Tensor<T> {
    let data = x.data().iter().map(|&v| fwd(v)).collect();
    Tensor::from_op(
        x.shape().to_vec(),
        data,
        vec![x.clone()],
        Box::new(move |ctx| {
            let xd = ctx.parents[0].data();
            let od = ctx.output.data();
            let g = ctx
                .out_grad
                .iter()
                .zip(xd.iter())
                .zip(od.iter())
                .map(|((&g, &x), &o)| bwd(g, x, o))
                .collect();
            vec![Some(g)]
        }),
    )
}

pub fn relu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    unary(
        x,
        |v| if v > T::zero() { v } else { T::zero() },
        |g, x, _| if x > T::zero() { g } else { T::zero() },
    )
}

/// Tanh-approximated GELU.
pub fn gelu<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let c = T::of_f64(0.7978845608028654); // sqrt(2/pi)
    let k = T::of_f64(0.044715);
    let half = T::of_f64(0.5);
    let three = T::of_f64(3.0);
    unary(
        x,
        move |v| {
            let u = c * (v + k * v * v * v);
            half * v * (T::one() + u.tanh())
        },
        move |g, x, _| {
            let u = c * (x + k * x * x * x);
            let t = u.tanh();
            let sech2 = T::one() - t * t;
            let du = c * (T::one() + three * k * x * x);
            g * (half * (T::one() + t) + half * x * sech2 * du)
        },
    )
}

pub fn scale<T: Element>(x: &Tensor<T>, alpha: T) -> Tensor<T> {
    unary(x, move |v| v * alpha, move |g, _, _| g * alpha)
}

pub fn add_scalar<T: Element>(x: &Tensor<T>, c: T) -> Tensor<T> {
    unary(x, move |v| v + c, |g, _, _| g)
}
