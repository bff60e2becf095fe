//! Bilinear resampling of NCHW tensors.

use crate::tensor::{Element, Tensor};

/// Source taps for one output coordinate: two indices and the weight of the
/// second one. Half-pixel-center convention: `src = (dst + 0.5)*scale - 0.5`,
/// clamped to the input.
fn taps(out_dim: usize, in_dim: usize) -> Vec<(usize, usize, f64)> {
    let scale = in_dim as f64 / out_dim as f64;
    (0..out_dim)
        .map(|o| {
            let src = ((o as f64 + 0.5) * scale - 0.5).max(0.0);
            let i0 = (src.floor() as usize).min(in_dim - 1);
            let i1 = (i0 + 1).min(in_dim - 1);
            (i0, i1, src - i0 as f64)
        })
        .collect()
}

/// Resize an `[N, C, H, W]` tensor to `[N, C, out_h, out_w]` by bilinear
/// interpolation with half-pixel centers.
pub fn bilinear_upsample<T: Element>(x: &Tensor<T>, out_h: usize, out_w: usize) -> Tensor<T> {
    assert_eq!(x.rank(), 4, "bilinear_upsample input must be NCHW, got {:?}", x.shape());
    assert!(out_h > 0 && out_w > 0, "output dims must be positive");
    let (n, c, ih, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let ytaps = taps(out_h, ih);
    let xtaps = taps(out_w, iw);

    let planes = n * c;
    let mut out = vec![T::zero(); planes * out_h * out_w];
    {
        let xd = x.data();
        for p in 0..planes {
            let src = &xd[p * ih * iw..(p + 1) * ih * iw];
            let dst = &mut out[p * out_h * out_w..(p + 1) * out_h * out_w];
            for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                let (wy1, wy0) = (T::of_f64(fy), T::of_f64(1.0 - fy));
                let row0 = &src[y0 * iw..y0 * iw + iw];
                let row1 = &src[y1 * iw..y1 * iw + iw];
                let drow = &mut dst[oy * out_w..(oy + 1) * out_w];
                for (o, &(x0, x1, fx)) in drow.iter_mut().zip(&xtaps) {
                    let (wx1, wx0) = (T::of_f64(fx), T::of_f64(1.0 - fx));
                    let top = row0[x0] * wx0 + row0[x1] * wx1;
                    let bot = row1[x0] * wx0 + row1[x1] * wx1;
                    *o = top * wy0 + bot * wy1;
                }
            }
        }
    }

    Tensor::from_op(
        vec![n, c, out_h, out_w],
        out,
        vec![x.clone()],
        Box::new(move |ctx| {
            let g = ctx.out_grad;
            let mut dx = vec![T::zero(); ctx.parents[0].elem_count()];
            for p in 0..planes {
                let gslab = &g[p * out_h * out_w..(p + 1) * out_h * out_w];
                let dslab = &mut dx[p * ih * iw..(p + 1) * ih * iw];
                for (oy, &(y0, y1, fy)) in ytaps.iter().enumerate() {
                    let (wy1, wy0) = (T::of_f64(fy), T::of_f64(1.0 - fy));
                    let grow = &gslab[oy * out_w..(oy + 1) * out_w];
                    for (&gv, &(x0, x1, fx)) in grow.iter().zip(&xtaps) {
                        let (wx1, wx0) = (T::of_f64(fx), T::of_f64(1.0 - fx));
                        dslab[y0 * iw + x0] = dslab[y0 * iw + x0] + gv * wy0 * wx0;
                        dslab[y0 * iw + x1] = dslab[y0 * iw + x1] + gv * wy0 * wx1;
                        dslab[y1 * iw + x0] = dslab[y1 * iw + x0] + gv * wy1 * wx0;
                        dslab[y1 * iw + x1] = dslab[y1 * iw + x1] + gv * wy1 * wx1;
                    }
                }
            }
            vec![Some(dx)]
        }),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::backward;
    use crate::tensor::ops::sum_all;

    #[test]
    fn doubling_1d_hand_values() {
        // [0, 1] -> [0, 0.25, 0.75, 1] under half-pixel centers.
        let x = Tensor::from_vec(vec![1, 1, 1, 2], vec![0.0f64, 1.0]);
        let y = bilinear_upsample(&x, 1, 4);
        let v = y.to_vec();
        let expect = [0.0, 0.25, 0.75, 1.0];
        for (a, e) in v.iter().zip(expect) {
            assert!((a - e).abs() < 1e-12, "{:?}", v);
        }
    }

    #[test]
    fn identity_when_size_unchanged() {
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f32, 2.0, 3.0, 4.0]);
        assert_eq!(bilinear_upsample(&x, 2, 2).to_vec(), x.to_vec());
    }

    #[test]
    fn constant_plane_stays_constant() {
        let x = Tensor::full(vec![1, 2, 3, 3], 7.0f64);
        let y = bilinear_upsample(&x, 7, 5);
        assert!(y.to_vec().iter().all(|&v| (v - 7.0).abs() < 1e-12));
    }

    #[test]
    fn grad_mass_is_conserved() {
        // Interpolation weights sum to 1 per output pixel, so the grad of
        // sum(upsample(x)) distributes all out_h*out_w units over x.
        let x = Tensor::from_vec(vec![1, 1, 2, 2], vec![1.0f64, 2.0, 3.0, 4.0]).requires_grad();
        let y = bilinear_upsample(&x, 4, 4);
        backward(&sum_all(&y)).unwrap();
        let g = x.grad().unwrap();
        assert!((g.iter().sum::<f64>() - 16.0).abs() < 1e-9);
        // Symmetry: all four corners get the same mass.
        assert!((g[0] - g[1]).abs() < 1e-9 && (g[0] - g[2]).abs() < 1e-9 && (g[0] - g[3]).abs() < 1e-9);
    }
}
