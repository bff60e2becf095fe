//! 2-D convolution and transposed convolution on NCHW tensors.
//!
//! Forward convolution lowers each image to a column matrix (im2col) and
//! multiplies by the kernel matrix; the backward pass reuses the same
//! lowering for the weight gradient and scatters (col2im) for the input
//! gradient. Scratch buffers are reported to the allocation probe so
//! measured peaks stay honest.

use crate::tensor::{probe, Element, Tensor};
use crate::util::parallel_rows;

/// Output extent of a convolution along one spatial dim.
pub fn conv2d_out_dim(input: usize, kernel: usize, stride: usize, padding: usize, dilation: usize) -> usize {
    let eff = dilation * (kernel - 1) + 1;
    assert!(
        input + 2 * padding >= eff,
        "kernel (effective {}) larger than padded input {}",
        eff,
        input + 2 * padding
    );
    (input + 2 * padding - eff) / stride + 1
}

/// Output extent of a transposed convolution along one spatial dim.
pub fn transpose_conv2d_out_dim(input: usize, kernel: usize, stride: usize, padding: usize) -> usize {
    (input - 1) * stride + kernel - 2 * padding
}

struct ConvDims {
    n: usize,
    ic: usize,
    ih: usize,
    iw: usize,
    oc: usize,
    kh: usize,
    kw: usize,
    oh: usize,
    ow: usize,
    stride: usize,
    padding: usize,
    dilation: usize,
}

impl ConvDims {
    fn col_rows(&self) -> usize {
        self.ic * self.kh * self.kw
    }
    fn out_hw(&self) -> usize {
        self.oh * self.ow
    }
}

/// Lower one image `x[n]` into `col` with `col[(ic*kh+ki)*kw+kj][oh*ow+owi]`
/// holding the input value under kernel tap (ki,kj) at output site (oh,owi).
fn im2col<T: Element>(d: &ConvDims, img: &[T], col: &mut [T]) {
    let out_hw = d.out_hw();
    for ic in 0..d.ic {
        let plane = &img[ic * d.ih * d.iw..(ic + 1) * d.ih * d.iw];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = &mut col[((ic * d.kh + ki) * d.kw + kj) * out_hw..][..out_hw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki * d.dilation) as isize - d.padding as isize;
                    let dst = &mut row[oy * d.ow..(oy + 1) * d.ow];
                    if iy < 0 || iy >= d.ih as isize {
                        dst.fill(T::zero());
                        continue;
                    }
                    let src_row = &plane[iy as usize * d.iw..(iy as usize + 1) * d.iw];
                    for (ox, v) in dst.iter_mut().enumerate() {
                        let ix = (ox * d.stride + kj * d.dilation) as isize - d.padding as isize;
                        *v = if ix < 0 || ix >= d.iw as isize {
                            T::zero()
                        } else {
                            src_row[ix as usize]
                        };
                    }
                }
            }
        }
    }
}

/// Scatter-add the column matrix back into one image (adjoint of im2col).
fn col2im<T: Element>(d: &ConvDims, col: &[T], img: &mut [T]) {
    let out_hw = d.out_hw();
    for ic in 0..d.ic {
        let plane = &mut img[ic * d.ih * d.iw..(ic + 1) * d.ih * d.iw];
        for ki in 0..d.kh {
            for kj in 0..d.kw {
                let row = &col[((ic * d.kh + ki) * d.kw + kj) * out_hw..][..out_hw];
                for oy in 0..d.oh {
                    let iy = (oy * d.stride + ki * d.dilation) as isize - d.padding as isize;
                    if iy < 0 || iy >= d.ih as isize {
                        continue;
                    }
                    let dst_row = &mut plane[iy as usize * d.iw..(iy as usize + 1) * d.iw];
                    let src = &row[oy * d.ow..(oy + 1) * d.ow];
                    for (ox, &v) in src.iter().enumerate() {
                        let ix = (ox * d.stride + kj * d.dilation) as isize - d.padding as isize;
                        if ix >= 0 && ix < d.iw as isize {
                            dst_row[ix as usize] = dst_row[ix as usize] + v;
                        }
                    }
                }
            }
        }
    }
}

fn conv_dims<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> ConvDims {
    assert_eq!(x.rank(), 4, "conv2d input must be NCHW, got {:?}", x.shape());
    assert_eq!(w.rank(), 4, "conv2d weight must be [oc, ic, kh, kw], got {:?}", w.shape());
    let (n, ic, ih, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (oc, wic, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(
        ic, wic,
        "conv2d channel mismatch: input {:?} vs weight {:?}",
        x.shape(),
        w.shape()
    );
    assert!(stride >= 1 && dilation >= 1, "stride and dilation must be >= 1");
    ConvDims {
        n,
        ic,
        ih,
        iw,
        oc,
        kh,
        kw,
        oh: conv2d_out_dim(ih, kh, stride, padding, dilation),
        ow: conv2d_out_dim(iw, kw, stride, padding, dilation),
        stride,
        padding,
        dilation,
    }
}

/// 2-D convolution. `x` is `[N, IC, H, W]`, `w` is `[OC, IC, KH, KW]`,
/// optional `bias` is `[OC]`. Symmetric zero padding.
pub fn conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
    dilation: usize,
) -> Tensor<T> {
    let d = conv_dims(x, w, stride, padding, dilation);
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[d.oc], "conv2d bias must be [oc]");
    }
    let (col_rows, out_hw) = (d.col_rows(), d.out_hw());
    let mut out = vec![T::zero(); d.n * d.oc * out_hw];
    {
        let xd = x.data();
        let wd = w.data();
        let mut col = vec![T::zero(); col_rows * out_hw];
        probe::record_alloc(col.len());
        for img in 0..d.n {
            im2col(&d, &xd[img * d.ic * d.ih * d.iw..], &mut col);
            let slab = &mut out[img * d.oc * out_hw..(img + 1) * d.oc * out_hw];
            let (wd, col) = (&wd[..], &col[..]);
            parallel_rows(slab, out_hw, |ocr, row| {
                let wrow = &wd[ocr * col_rows..(ocr + 1) * col_rows];
                for (kk, &wv) in wrow.iter().enumerate() {
                    let crow = &col[kk * out_hw..(kk + 1) * out_hw];
                    for (o, &cv) in row.iter_mut().zip(crow) {
                        *o = *o + wv * cv;
                    }
                }
            });
        }
        if let Some(b) = bias {
            let bd = b.data();
            for img in 0..d.n {
                for ocr in 0..d.oc {
                    let bv = bd[ocr];
                    let row = &mut out[(img * d.oc + ocr) * out_hw..][..out_hw];
                    for o in row.iter_mut() {
                        *o = *o + bv;
                    }
                }
            }
        }
    }

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Tensor::from_op(
        vec![d.n, d.oc, d.oh, d.ow],
        out,
        parents,
        Box::new(move |ctx| {
            let x = &ctx.parents[0];
            let w = &ctx.parents[1];
            let xd = x.data();
            let wd = w.data();
            let g = ctx.out_grad;
            let (col_rows, out_hw) = (d.col_rows(), d.out_hw());

            let mut dx = vec![T::zero(); x.elem_count()];
            let mut dw = vec![T::zero(); w.elem_count()];
            let mut col = vec![T::zero(); col_rows * out_hw];
            let mut colgrad = vec![T::zero(); col_rows * out_hw];
            for img in 0..d.n {
                im2col(&d, &xd[img * d.ic * d.ih * d.iw..], &mut col);
                let gslab = &g[img * d.oc * out_hw..(img + 1) * d.oc * out_hw];
                // dW[oc, kk] += sum_p g[oc, p] * col[kk, p]
                {
                    let col = &col[..];
                    parallel_rows(&mut dw, col_rows, |ocr, row| {
                        let grow = &gslab[ocr * out_hw..(ocr + 1) * out_hw];
                        for (kk, o) in row.iter_mut().enumerate() {
                            let crow = &col[kk * out_hw..(kk + 1) * out_hw];
                            let mut acc = T::zero();
                            for (&gv, &cv) in grow.iter().zip(crow) {
                                acc = acc + gv * cv;
                            }
                            *o = *o + acc;
                        }
                    });
                }
                // colgrad[kk, p] = sum_oc w[oc, kk] * g[oc, p]
                colgrad.fill(T::zero());
                {
                    let wd = &wd[..];
                    parallel_rows(&mut colgrad, out_hw, |kk, row| {
                        for ocr in 0..d.oc {
                            let wv = wd[ocr * col_rows + kk];
                            let grow = &gslab[ocr * out_hw..(ocr + 1) * out_hw];
                            for (o, &gv) in row.iter_mut().zip(grow) {
                                *o = *o + wv * gv;
                            }
                        }
                    });
                }
                col2im(&d, &colgrad, &mut dx[img * d.ic * d.ih * d.iw..]);
            }

            let mut grads = vec![Some(dx), Some(dw)];
            if has_bias {
                let mut db = vec![T::zero(); d.oc];
                for img in 0..d.n {
                    for ocr in 0..d.oc {
                        let grow = &g[(img * d.oc + ocr) * out_hw..][..out_hw];
                        db[ocr] = db[ocr] + grow.iter().copied().sum();
                    }
                }
                grads.push(Some(db));
            }
            grads
        }),
    )
}

/// Transposed 2-D convolution (stride-s upsampling). `x` is `[N, IC, H, W]`,
/// `w` is `[IC, OC, KH, KW]`, optional `bias` is `[OC]`.
pub fn transpose_conv2d<T: Element>(
    x: &Tensor<T>,
    w: &Tensor<T>,
    bias: Option<&Tensor<T>>,
    stride: usize,
    padding: usize,
) -> Tensor<T> {
    assert_eq!(x.rank(), 4, "transpose_conv2d input must be NCHW");
    assert_eq!(w.rank(), 4, "transpose_conv2d weight must be [ic, oc, kh, kw]");
    let (n, ic, ih, iw) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (wic, oc, kh, kw) = (w.shape()[0], w.shape()[1], w.shape()[2], w.shape()[3]);
    assert_eq!(ic, wic, "transpose_conv2d channel mismatch");
    if let Some(b) = bias {
        assert_eq!(b.shape(), &[oc], "transpose_conv2d bias must be [oc]");
    }
    let oh = transpose_conv2d_out_dim(ih, kh, stride, padding);
    let ow = transpose_conv2d_out_dim(iw, kw, stride, padding);

    let paint = move |xd: &[T], wd: &[T], out: &mut [T]| {
        for img in 0..n {
            for c_in in 0..ic {
                let plane = &xd[(img * ic + c_in) * ih * iw..][..ih * iw];
                for c_out in 0..oc {
                    let wk = &wd[(c_in * oc + c_out) * kh * kw..][..kh * kw];
                    let oplane = &mut out[(img * oc + c_out) * oh * ow..][..oh * ow];
                    for y in 0..ih {
                        for xx in 0..iw {
                            let v = plane[y * iw + xx];
                            for ki in 0..kh {
                                let oy = (y * stride + ki) as isize - padding as isize;
                                if oy < 0 || oy >= oh as isize {
                                    continue;
                                }
                                for kj in 0..kw {
                                    let ox = (xx * stride + kj) as isize - padding as isize;
                                    if ox < 0 || ox >= ow as isize {
                                        continue;
                                    }
                                    let o = oy as usize * ow + ox as usize;
                                    oplane[o] = oplane[o] + v * wk[ki * kw + kj];
                                }
                            }
                        }
                    }
                }
            }
        }
    };

    let mut out = vec![T::zero(); n * oc * oh * ow];
    {
        let xd = x.data();
        let wd = w.data();
        paint(&xd, &wd, &mut out);
        if let Some(b) = bias {
            let bd = b.data();
            for img in 0..n {
                for c_out in 0..oc {
                    let bv = bd[c_out];
                    let row = &mut out[(img * oc + c_out) * oh * ow..][..oh * ow];
                    for o in row.iter_mut() {
                        *o = *o + bv;
                    }
                }
            }
        }
    }

    let mut parents = vec![x.clone(), w.clone()];
    if let Some(b) = bias {
        parents.push(b.clone());
    }
    let has_bias = bias.is_some();
    Tensor::from_op(
        vec![n, oc, oh, ow],
        out,
        parents,
        Box::new(move |ctx| {
            let xd = ctx.parents[0].data();
            let wd = ctx.parents[1].data();
            let g = ctx.out_grad;

            // dX[n,ic,y,x] = sum_{oc,ki,kj} g[n,oc, y*s+ki-p, x*s+kj-p] * w[ic,oc,ki,kj]
            let mut dx = vec![T::zero(); ctx.parents[0].elem_count()];
            // dW[ic,oc,ki,kj] = sum_{n,y,x} x[n,ic,y,x] * g[n,oc, y*s+ki-p, x*s+kj-p]
            let mut dw = vec![T::zero(); ctx.parents[1].elem_count()];
            for img in 0..n {
                for c_in in 0..ic {
                    let plane = &xd[(img * ic + c_in) * ih * iw..][..ih * iw];
                    let dplane = &mut dx[(img * ic + c_in) * ih * iw..][..ih * iw];
                    for c_out in 0..oc {
                        let wk = &wd[(c_in * oc + c_out) * kh * kw..][..kh * kw];
                        let dwk = &mut dw[(c_in * oc + c_out) * kh * kw..][..kh * kw];
                        let gplane = &g[(img * oc + c_out) * oh * ow..][..oh * ow];
                        for y in 0..ih {
                            for xx in 0..iw {
                                let v = plane[y * iw + xx];
                                let mut acc = T::zero();
                                for ki in 0..kh {
                                    let oy = (y * stride + ki) as isize - padding as isize;
                                    if oy < 0 || oy >= oh as isize {
                                        continue;
                                    }
                                    for kj in 0..kw {
                                        let ox = (xx * stride + kj) as isize - padding as isize;
                                        if ox < 0 || ox >= ow as isize {
                                            continue;
                                        }
                                        let gv = gplane[oy as usize * ow + ox as usize];
                                        acc = acc + gv * wk[ki * kw + kj];
                                        dwk[ki * kw + kj] = dwk[ki * kw + kj] + v * gv;
                                    }
                                }
                                dplane[y * iw + xx] = dplane[y * iw + xx] + acc;
                            }
                        }
                    }
                }
            }

            let mut grads = vec![Some(dx), Some(dw)];
            if has_bias {
                let mut db = vec![T::zero(); oc];
                for img in 0..n {
                    for c_out in 0..oc {
                        let grow = &g[(img * oc + c_out) * oh * ow..][..oh * ow];
                        db[c_out] = db[c_out] + grow.iter().copied().sum();
                    }
                }
                grads.push(Some(db));
            }
            grads
        }),
    )
}
