//! Batched matrix multiplication.

use crate::tensor::{Element, Tensor};
use crate::util::parallel_rows;

/// Batched matrix product: `a` is `[..., M, K]`, `b` is `[..., K, N]` with
/// identical leading dims, giving `[..., M, N]`. Work is split across
/// output rows.
pub fn matmul<T: Element>(a: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let (ash, bsh) = (a.shape(), b.shape());
    assert!(
        ash.len() >= 2 && ash.len() == bsh.len(),
        "matmul needs equal-rank operands of rank >= 2, got {:?} x {:?}",
        ash,
        bsh
    );
    assert_eq!(
        &ash[..ash.len() - 2],
        &bsh[..bsh.len() - 2],
        "matmul batch dims must match: {:?} x {:?}",
        ash,
        bsh
    );
    let (m, k) = (ash[ash.len() - 2], ash[ash.len() - 1]);
    let (k2, n) = (bsh[bsh.len() - 2], bsh[bsh.len() - 1]);
    assert_eq!(k, k2, "matmul inner dims must match: {:?} x {:?}", ash, bsh);
    let batch: usize = ash[..ash.len() - 2].iter().product();

    let mut out = vec![T::zero(); batch * m * n];
    {
        let ad = a.data();
        let bd = b.data();
        let (ad, bd) = (&ad[..], &bd[..]);
        parallel_rows(&mut out, n, |r, row| {
            let (bi, i) = (r / m, r % m);
            let arow = &ad[(bi * m + i) * k..(bi * m + i + 1) * k];
            let bslab = &bd[bi * k * n..(bi + 1) * k * n];
            for (kk, &av) in arow.iter().enumerate() {
                let brow = &bslab[kk * n..(kk + 1) * n];
                for (o, &bv) in row.iter_mut().zip(brow) {
                    *o = *o + av * bv;
                }
            }
        });
    }

    let mut out_shape = ash[..ash.len() - 2].to_vec();
    out_shape.push(m);
    out_shape.push(n);
    Tensor::from_op(
        out_shape,
        out,
        vec![a.clone(), b.clone()],
        Box::new(move |ctx| {
            let ad = ctx.parents[0].data();
            let bd = ctx.parents[1].data();
            let (ad, bd) = (&ad[..], &bd[..]);
            let g = ctx.out_grad;

            // dA[i,kk] = sum_j g[i,j] * B[kk,j]
            let mut da = vec![T::zero(); batch * m * k];
            parallel_rows(&mut da, k, |r, row| {
                let (bi, i) = (r / m, r % m);
                let grow = &g[(bi * m + i) * n..(bi * m + i + 1) * n];
                let bslab = &bd[bi * k * n..(bi + 1) * k * n];
                for (kk, o) in row.iter_mut().enumerate() {
                    let brow = &bslab[kk * n..(kk + 1) * n];
                    let mut acc = T::zero();
                    for (&gv, &bv) in grow.iter().zip(brow) {
                        acc = acc + gv * bv;
                    }
                    *o = acc;
                }
            });

            // dB[kk,j] = sum_i A[i,kk] * g[i,j]
            let mut db = vec![T::zero(); batch * k * n];
            parallel_rows(&mut db, n, |r, row| {
                let (bi, kk) = (r / k, r % k);
                let aslab = &ad[bi * m * k..(bi + 1) * m * k];
                let gslab = &g[bi * m * n..(bi + 1) * m * n];
                for i in 0..m {
                    let av = aslab[i * k + kk];
                    let grow = &gslab[i * n..(i + 1) * n];
                    for (o, &gv) in row.iter_mut().zip(grow) {
                        *o = *o + av * gv;
                    }
                }
            });

            vec![Some(da), Some(db)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use crate::tensor::ops::sum_all;

    #[test]
    fn known_2x3_times_3x2() {
        let a = Tensor::from_vec(vec![2, 3], vec![1.0f64, 2.0, 3.0, 4.0, 5.0, 6.0]);
        let b = Tensor::from_vec(vec![3, 2], vec![7.0, 8.0, 9.0, 10.0, 11.0, 12.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.shape(), &[2, 2]);
        assert_eq!(c.to_vec(), vec![58.0, 64.0, 139.0, 154.0]);
    }

    #[test]
    fn batched_matches_per_slice() {
        let a = Tensor::from_vec(vec![2, 2, 2], vec![1.0f32, 0.0, 0.0, 1.0, 2.0, 0.0, 0.0, 2.0]);
        let b = Tensor::from_vec(vec![2, 2, 2], vec![5.0, 6.0, 7.0, 8.0, 5.0, 6.0, 7.0, 8.0]);
        let c = matmul(&a, &b);
        assert_eq!(c.to_vec(), vec![5.0, 6.0, 7.0, 8.0, 10.0, 12.0, 14.0, 16.0]);
    }

    #[test]
    fn backward_matches_analytic() {
        // loss = sum(A B): dA = 1 * B^T rows summed, dB = A^T * 1.
        let a = Tensor::from_vec(vec![2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).requires_grad();
        let b = Tensor::from_vec(vec![2, 2], vec![5.0, 6.0, 7.0, 8.0]).requires_grad();
        let loss = sum_all(&matmul(&a, &b));
        backward(&loss).unwrap();
        assert_eq!(a.grad().unwrap(), vec![11.0, 15.0, 11.0, 15.0]);
        assert_eq!(b.grad().unwrap(), vec![4.0, 4.0, 6.0, 6.0]);
    }

    #[test]
    #[should_panic(expected = "inner dims must match")]
    fn mismatched_inner_dims_panic() {
        let a = Tensor::<f32>::zeros(vec![2, 3]);
        let b = Tensor::<f32>::zeros(vec![4, 2]);
        let _ = matmul(&a, &b);
    }
}
