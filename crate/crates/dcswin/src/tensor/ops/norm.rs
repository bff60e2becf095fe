//! Layer normalization (over the last dim) and 2-D batch normalization.

use crate::tensor::{Element, Tensor};

/// Normalize each row of the last dimension to zero mean / unit variance,
/// then scale and shift: `y = (x - mean) / sqrt(var + eps) * gamma + beta`.
/// `gamma` and `beta` have the last dim's extent.
pub fn layer_norm<T: Element>(x: &Tensor<T>, gamma: &Tensor<T>, beta: &Tensor<T>, eps: f64) -> Tensor<T> {
    let d = *x.shape().last().expect("layer_norm needs rank >= 1");
    assert_eq!(gamma.shape(), &[d], "layer_norm gamma must be [{}]", d);
    assert_eq!(beta.shape(), &[d], "layer_norm beta must be [{}]", d);
    let rows = x.elem_count() / d;
    let epst = T::of_f64(eps);
    let inv_d = T::of_f64(1.0 / d as f64);

    let mut out = vec![T::zero(); rows * d];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for r in 0..rows {
            let xrow = &xd[r * d..(r + 1) * d];
            let mean: T = xrow.iter().copied().sum::<T>() * inv_d;
            let var: T = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
            let inv_std = (var + epst).sqrt().recip();
            for (j, (o, &v)) in out[r * d..(r + 1) * d].iter_mut().zip(xrow).enumerate() {
                *o = (v - mean) * inv_std * gd[j] + bd[j];
            }
        }
    }
    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx| {
            let xd = ctx.parents[0].data();
            let gd = ctx.parents[1].data();
            let g = ctx.out_grad;
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); d];
            let mut dbeta = vec![T::zero(); d];
            for r in 0..rows {
                let xrow = &xd[r * d..(r + 1) * d];
                let grow = &g[r * d..(r + 1) * d];
                let mean: T = xrow.iter().copied().sum::<T>() * inv_d;
                let var: T = xrow.iter().map(|&v| (v - mean) * (v - mean)).sum::<T>() * inv_d;
                let inv_std = (var + epst).sqrt().recip();
                // dg_j = g_j * gamma_j; dx = inv_std*(dg - mean(dg) - xhat*mean(dg*xhat))
                let mut mean_dg = T::zero();
                let mut mean_dgx = T::zero();
                for j in 0..d {
                    let xhat = (xrow[j] - mean) * inv_std;
                    let dg = grow[j] * gd[j];
                    mean_dg = mean_dg + dg;
                    mean_dgx = mean_dgx + dg * xhat;
                    dgamma[j] = dgamma[j] + grow[j] * xhat;
                    dbeta[j] = dbeta[j] + grow[j];
                }
                mean_dg = mean_dg * inv_d;
                mean_dgx = mean_dgx * inv_d;
                for (j, o) in dx[r * d..(r + 1) * d].iter_mut().enumerate() {
                    let xhat = (xrow[j] - mean) * inv_std;
                    *o = inv_std * (grow[j] * gd[j] - mean_dg - xhat * mean_dgx);
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    )
}

/// Running statistics for batch normalization. Plain (non-trainable) leaf
/// buffers, updated in place during training forward passes and serialized
/// with checkpoints.
pub struct BatchNormState<T: Element> {
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
}

impl<T: Element> BatchNormState<T> {
    pub fn new(channels: usize) -> Self {
        BatchNormState {
            running_mean: Tensor::zeros(vec![channels]),
            running_var: Tensor::ones(vec![channels]),
        }
    }
}

/// Batch normalization over an NCHW tensor: each channel is normalized
/// across batch and spatial positions.
///
/// In training mode the batch statistics normalize, and the running stats
/// are updated in place as `run = (1-momentum)*run + momentum*batch` with
/// the unbiased variance. In eval mode the running stats normalize and
/// nothing is updated.
pub fn batch_norm2d<T: Element>(
    x: &Tensor<T>,
    gamma: &Tensor<T>,
    beta: &Tensor<T>,
    state: &BatchNormState<T>,
    training: bool,
    momentum: f64,
    eps: f64,
) -> Tensor<T> {
    assert_eq!(x.rank(), 4, "batch_norm2d input must be NCHW, got {:?}", x.shape());
    let (n, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    assert_eq!(gamma.shape(), &[c], "batch_norm2d gamma must be [{}]", c);
    assert_eq!(beta.shape(), &[c], "batch_norm2d beta must be [{}]", c);
    assert_eq!(state.running_mean.shape(), &[c], "running_mean must be [{}]", c);
    let m = n * h * w;
    assert!(m > 0, "batch_norm2d needs at least one sample per channel");
    // A single value per channel normalizes to exactly zero, which silently
    // detaches everything upstream of this layer from the loss.
    assert!(
        !training || m > 1,
        "batch_norm2d training mode needs at least 2 values per channel, got {}",
        m
    );
    let hw = h * w;
    let epst = T::of_f64(eps);
    let inv_m = T::of_f64(1.0 / m as f64);

    // Per-channel statistics used by this pass.
    let (mean, var) = if training {
        let xd = x.data();
        let mut mean = vec![T::zero(); c];
        let mut var = vec![T::zero(); c];
        for ch in 0..c {
            let mut s = T::zero();
            for img in 0..n {
                let plane = &xd[(img * c + ch) * hw..][..hw];
                s = s + plane.iter().copied().sum();
            }
            let mu = s * inv_m;
            let mut v = T::zero();
            for img in 0..n {
                let plane = &xd[(img * c + ch) * hw..][..hw];
                v = v + plane.iter().map(|&x| (x - mu) * (x - mu)).sum();
            }
            mean[ch] = mu;
            var[ch] = v * inv_m;
        }
        (mean, var)
    } else {
        (state.running_mean.to_vec(), state.running_var.to_vec())
    };

    if training {
        // Unbiased variance goes into the running estimate.
        let mom = T::of_f64(momentum);
        let keep = T::one() - mom;
        let bessel = if m > 1 {
            T::of_f64(m as f64 / (m as f64 - 1.0))
        } else {
            T::one()
        };
        let mut rm = state.running_mean.data_mut();
        let mut rv = state.running_var.data_mut();
        for ch in 0..c {
            rm[ch] = keep * rm[ch] + mom * mean[ch];
            rv[ch] = keep * rv[ch] + mom * var[ch] * bessel;
        }
    }

    let inv_std: Vec<T> = var.iter().map(|&v| (v + epst).sqrt().recip()).collect();
    let mut out = vec![T::zero(); x.elem_count()];
    {
        let xd = x.data();
        let gd = gamma.data();
        let bd = beta.data();
        for img in 0..n {
            for ch in 0..c {
                let plane = &xd[(img * c + ch) * hw..][..hw];
                let oplane = &mut out[(img * c + ch) * hw..][..hw];
                let (mu, is, ga, be) = (mean[ch], inv_std[ch], gd[ch], bd[ch]);
                for (o, &v) in oplane.iter_mut().zip(plane) {
                    *o = (v - mu) * is * ga + be;
                }
            }
        }
    }

    Tensor::from_op(
        x.shape().to_vec(),
        out,
        vec![x.clone(), gamma.clone(), beta.clone()],
        Box::new(move |ctx| {
            let xd = ctx.parents[0].data();
            let gd = ctx.parents[1].data();
            let g = ctx.out_grad;
            let mut dx = vec![T::zero(); xd.len()];
            let mut dgamma = vec![T::zero(); c];
            let mut dbeta = vec![T::zero(); c];
            for ch in 0..c {
                let (mu, is) = (mean[ch], inv_std[ch]);
                let mut sum_g = T::zero();
                let mut sum_gx = T::zero();
                for img in 0..n {
                    let plane = &xd[(img * c + ch) * hw..][..hw];
                    let gplane = &g[(img * c + ch) * hw..][..hw];
                    for (&gv, &xv) in gplane.iter().zip(plane) {
                        sum_g = sum_g + gv;
                        sum_gx = sum_gx + gv * (xv - mu) * is;
                    }
                }
                dgamma[ch] = sum_gx;
                dbeta[ch] = sum_g;
                let ga = gd[ch];
                if training {
                    // Batch stats depend on x: full normalization backward.
                    let mean_g = sum_g * inv_m;
                    let mean_gx = sum_gx * inv_m;
                    for img in 0..n {
                        let plane = &xd[(img * c + ch) * hw..][..hw];
                        let gplane = &g[(img * c + ch) * hw..][..hw];
                        let dplane = &mut dx[(img * c + ch) * hw..][..hw];
                        for ((o, &gv), &xv) in dplane.iter_mut().zip(gplane).zip(plane) {
                            let xhat = (xv - mu) * is;
                            *o = ga * is * (gv - mean_g - xhat * mean_gx);
                        }
                    }
                } else {
                    // Running stats are constants: the op is affine in x.
                    for img in 0..n {
                        let gplane = &g[(img * c + ch) * hw..][..hw];
                        let dplane = &mut dx[(img * c + ch) * hw..][..hw];
                        for (o, &gv) in dplane.iter_mut().zip(gplane) {
                            *o = ga * is * gv;
                        }
                    }
                }
            }
            vec![Some(dx), Some(dgamma), Some(dbeta)]
        }),
    )
}
