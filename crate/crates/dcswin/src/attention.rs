//! Attention kernels.
//!
//! Two families live here:
//!
//! * **Factorized linear attention** — the softmax-free form whose
//!   similarity `1 + q̂·k̂` (unit-normalized rows) factorizes, so the cost is
//!   linear in the number of rows. [`SpatialAttention`] runs it over the
//!   `H·W` positions of a feature map, [`ChannelAttention`] over its `C`
//!   channels. A quadratic reference that materializes the full weight
//!   matrix ([`brute_force_linear_attention`]) serves as the test oracle.
//!
//! * **Windowed multi-head softmax attention** ([`WindowMsa`]) — standard
//!   scaled-dot-product attention computed independently inside each `w×w`
//!   window, with optional half-window cyclic shift, cross-boundary
//!   masking, and a learned relative-position bias.

use rand::Rng;

use crate::nn::{scoped, Conv2d, Linear, Module, NamedTensors};
use crate::tensor::ops::{
    add, add_scalar, div, index_select, l2_normalize_lastdim, matmul, narrow, pad_axis, permute,
    reshape, roll_axis, scale, softmax_lastdim, sum_axis,
};
use crate::tensor::{init, Element, Tensor};

/// Uniform mass added to every similarity: the kernel is `1 + ε + q̂·k̂`.
///
/// With unit rows, `1 + q̂·k̂` is non-negative but reaches exactly zero when a
/// key is antipodal to the query; if *every* key is, the normalizing row sum
/// vanishes and the weights would be 0/0. The floor keeps every weight
/// strictly positive so that degenerate query resolves to uniform attention,
/// while ordinary rows move by at most one part in 10⁶. Being constant, the
/// floor factorizes exactly, so all three evaluation orders stay equal.
pub const SIMILARITY_FLOOR: f64 = 1e-6;

/// Key/value widths for spatial attention over a `C`-channel map:
/// `Dk = max(1, C/8)`, `Dv = C`.
pub fn spatial_attention_dims(channels: usize) -> (usize, usize) {
    ((channels / 8).max(1), channels)
}

/// Factorized linear attention core over rows.
///
/// `qhat`, `khat` are `[B, R, Dk]` with unit-normalized rows; `v` is
/// `[B, R, Dv]`. With `c = 1 + ε` ([`SIMILARITY_FLOOR`]), row `i` of the
/// output is
///
/// ```text
/// ( c · Σ_j v_j  +  q̂_i · (k̂ᵀ v) )  /  ( c · R  +  q̂_i · Σ_j k̂_j )
/// ```
///
/// computed with `k̂ᵀv` (a `Dk×Dv` matrix) and `Σk̂` reduced once, so peak
/// auxiliary memory is `O(R·D + Dk·Dv)` — never `R×R`.
pub fn linear_attention_factorized<T: Element>(
    qhat: &Tensor<T>,
    khat: &Tensor<T>,
    v: &Tensor<T>,
) -> Tensor<T> {
    let rows = qhat.shape()[1];
    assert_eq!(khat.shape(), qhat.shape(), "q/k row sets must agree");
    assert_eq!(v.shape()[1], rows, "value rows must match q/k rows");
    let floor = 1.0 + SIMILARITY_FLOOR;
    let kt = permute(khat, &[0, 2, 1]); // [B, Dk, R]
    let kv = matmul(&kt, v); // [B, Dk, Dv]
    let vsum = sum_axis(v, 1); // [B, 1, Dv]
    let ksum = sum_axis(khat, 1); // [B, 1, Dk]
    let numer = add(&matmul(qhat, &kv), &scale(&vsum, T::of_f64(floor))); // [B, R, Dv]
    let dots = matmul(qhat, &permute(&ksum, &[0, 2, 1])); // [B, R, 1]
    let denom = add_scalar(&dots, T::of_f64(rows as f64 * floor));
    div(&numer, &denom)
}

/// Same attention computed in the Gram order: the `R×R` similarity matrix
/// `q̂ k̂ᵀ` is formed instead of `k̂ᵀ v`. Used over channel rows, where `R = C`
/// is small and the row length `N = H·W` is large (a `Dk×Dv` product there
/// would be `N×N`).
pub fn linear_attention_gram<T: Element>(qhat: &Tensor<T>, khat: &Tensor<T>, v: &Tensor<T>) -> Tensor<T> {
    let rows = qhat.shape()[1];
    assert_eq!(khat.shape(), qhat.shape(), "q/k row sets must agree");
    assert_eq!(v.shape()[1], rows, "value rows must match q/k rows");
    let floor = 1.0 + SIMILARITY_FLOOR;
    let gram = matmul(qhat, &permute(khat, &[0, 2, 1])); // [B, R, R]
    let vsum = sum_axis(v, 1); // [B, 1, Dv]
    let ksum = sum_axis(khat, 1); // [B, 1, Dk]
    let numer = add(&matmul(&gram, v), &scale(&vsum, T::of_f64(floor)));
    let dots = matmul(qhat, &permute(&ksum, &[0, 2, 1]));
    let denom = add_scalar(&dots, T::of_f64(rows as f64 * floor));
    div(&numer, &denom)
}

/// Quadratic reference: materializes the full `R×R` weight matrix
/// `w_ij = (1 + ε + q̂_i·k̂_j) / Σ_j (1 + ε + q̂_i·k̂_j)` and applies it to
/// `v`. Returns `(output, weights)`. Intended for small `R` only (the
/// scaling benchmark guards `R > 4096` behind a flag).
pub fn brute_force_linear_attention<T: Element>(
    qhat: &Tensor<T>,
    khat: &Tensor<T>,
    v: &Tensor<T>,
) -> (Tensor<T>, Tensor<T>) {
    let sim = add_scalar(
        &matmul(qhat, &permute(khat, &[0, 2, 1])),
        T::of_f64(1.0 + SIMILARITY_FLOOR),
    ); // [B, R, R]
    let weights = div(&sim, &sum_axis(&sim, 2));
    (matmul(&weights, v), weights)
}

/// Flatten an NCHW map to position rows `[B, H·W, C]`.
fn map_to_rows<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = nchw(x);
    permute(&reshape(x, vec![b, c, h * w]), &[0, 2, 1])
}

/// Inverse of [`map_to_rows`].
fn rows_to_map<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (b, _, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    reshape(&permute(x, &[0, 2, 1]), vec![b, c, h, w])
}

fn nchw<T: Element>(x: &Tensor<T>) -> (usize, usize, usize, usize) {
    assert_eq!(x.rank(), 4, "expected NCHW, got {:?}", x.shape());
    (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3])
}

/// Linear attention over spatial positions with learned 1×1 query/key/value
/// projections, wrapped in a residual connection and output 1×1 projection.
pub struct SpatialAttention<T: Element> {
    pub wq: Conv2d<T>,
    pub wk: Conv2d<T>,
    pub wv: Conv2d<T>,
    pub proj: Conv2d<T>,
}

impl<T: Element> SpatialAttention<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        let (dk, dv) = spatial_attention_dims(channels);
        SpatialAttention {
            wq: Conv2d::pointwise(channels, dk, rng),
            wk: Conv2d::pointwise(channels, dk, rng),
            wv: Conv2d::pointwise(channels, dv, rng),
            proj: Conv2d::pointwise(dv, channels, rng),
        }
    }

    /// The attention output map alone (no residual, no output projection).
    pub fn core(&self, x: &Tensor<T>) -> Tensor<T> {
        let (_, _, h, w) = nchw(x);
        let qhat = l2_normalize_lastdim(&map_to_rows(&self.wq.forward(x)));
        let khat = l2_normalize_lastdim(&map_to_rows(&self.wk.forward(x)));
        let v = map_to_rows(&self.wv.forward(x));
        rows_to_map(&linear_attention_factorized(&qhat, &khat, &v), h, w)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        add(x, &self.proj.forward(&self.core(x)))
    }
}

impl<T: Element> Module<T> for SpatialAttention<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.wq.named(&scoped(prefix, "wq"), out);
        self.wk.named(&scoped(prefix, "wk"), out);
        self.wv.named(&scoped(prefix, "wv"), out);
        self.proj.named(&scoped(prefix, "proj"), out);
    }
}

/// Linear attention over channel rows. The reshaped feature matrix itself
/// serves as query, key and value (no learned projections); a residual
/// connection and output 1×1 projection wrap the core.
pub struct ChannelAttention<T: Element> {
    pub proj: Conv2d<T>,
}

impl<T: Element> ChannelAttention<T> {
    pub fn new(channels: usize, rng: &mut impl Rng) -> Self {
        ChannelAttention {
            proj: Conv2d::pointwise(channels, channels, rng),
        }
    }

    /// The attention output map alone (no residual, no output projection).
    pub fn core(&self, x: &Tensor<T>) -> Tensor<T> {
        let (b, c, h, w) = nchw(x);
        let rows = reshape(x, vec![b, c, h * w]); // channel rows of length N
        let normed = l2_normalize_lastdim(&rows);
        let out = linear_attention_gram(&normed, &normed, &rows);
        reshape(&out, vec![b, c, h, w])
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        add(x, &self.proj.forward(&self.core(x)))
    }
}

impl<T: Element> Module<T> for ChannelAttention<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.proj.named(&scoped(prefix, "proj"), out);
    }
}

/// Pairwise relative-position index for a `w×w` window: entry `(i, j)`
/// selects the bias-table row for the offset between tokens i and j.
fn relative_position_index(window: usize) -> Vec<usize> {
    let t = window * window;
    let span = 2 * window - 1;
    let mut idx = Vec::with_capacity(t * t);
    for i in 0..t {
        let (yi, xi) = (i / window, i % window);
        for j in 0..t {
            let (yj, xj) = (j / window, j % window);
            let dy = yi as isize - yj as isize + window as isize - 1;
            let dx = xi as isize - xj as isize + window as isize - 1;
            idx.push(dy as usize * span + dx as usize);
        }
    }
    idx
}

/// Additive mask value for attention logits between tokens that belong to
/// different pre-shift regions. Large and negative rather than −∞ so a row
/// that is fully masked still softmaxes to finite numbers.
pub const MASK_VALUE: f64 = -100.0;

/// Region labels over an `h×w` grid for the shifted-window mask: positions
/// are grouped by which side of the last full window and of the shift
/// boundary they fall on, per axis.
fn shift_regions(extent: usize, window: usize, shift: usize) -> Vec<usize> {
    let mut region = vec![0usize; extent];
    let b1 = extent.saturating_sub(window);
    let b2 = extent.saturating_sub(shift);
    for (i, r) in region.iter_mut().enumerate() {
        *r = if i < b1 {
            0
        } else if i < b2 {
            1
        } else {
            2
        };
    }
    region
}

/// Attention mask `[num_windows, T, T]` (T = window²) for a cyclically
/// shifted `h×w` grid: 0 where both tokens came from the same pre-shift
/// region, [`MASK_VALUE`] otherwise.
fn shift_mask<T: Element>(h: usize, w: usize, window: usize, shift: usize) -> Tensor<T> {
    let rowr = shift_regions(h, window, shift);
    let colr = shift_regions(w, window, shift);
    let (nh, nw) = (h / window, w / window);
    let t = window * window;
    let mut data = vec![T::zero(); nh * nw * t * t];
    let mask_v = T::of_f64(MASK_VALUE);
    for wy in 0..nh {
        for wx in 0..nw {
            let base = (wy * nw + wx) * t * t;
            for i in 0..t {
                let ri = 3 * rowr[wy * window + i / window] + colr[wx * window + i % window];
                for j in 0..t {
                    let rj = 3 * rowr[wy * window + j / window] + colr[wx * window + j % window];
                    if ri != rj {
                        data[base + i * t + j] = mask_v;
                    }
                }
            }
        }
    }
    Tensor::from_vec(vec![nh * nw, t, t], data)
}

/// Gather `[B, H, W, C]` into per-window token blocks `[B·nw, window², C]`,
/// windows in row-major order.
fn window_partition<T: Element>(x: &Tensor<T>, window: usize) -> Tensor<T> {
    let (b, h, w, c) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    let (nh, nw) = (h / window, w / window);
    let g = reshape(x, vec![b, nh, window, nw, window, c]);
    let g = permute(&g, &[0, 1, 3, 2, 4, 5]);
    reshape(&g, vec![b * nh * nw, window * window, c])
}

/// Inverse of [`window_partition`].
fn window_unpartition<T: Element>(x: &Tensor<T>, window: usize, b: usize, h: usize, w: usize) -> Tensor<T> {
    let c = x.shape()[2];
    let (nh, nw) = (h / window, w / window);
    let g = reshape(x, vec![b, nh, nw, window, window, c]);
    let g = permute(&g, &[0, 1, 3, 2, 4, 5]);
    reshape(&g, vec![b, h, w, c])
}

/// Multi-head softmax attention inside (optionally shifted) square windows,
/// with a learned relative-position bias per head.
pub struct WindowMsa<T: Element> {
    pub dim: usize,
    pub heads: usize,
    pub window: usize,
    pub qkv: Linear<T>,
    pub proj: Linear<T>,
    /// Bias table, `[(2w−1)², heads]`, gathered per token pair.
    pub rel_bias: Tensor<T>,
}

impl<T: Element> WindowMsa<T> {
    pub fn new(dim: usize, heads: usize, window: usize, rng: &mut impl Rng) -> Self {
        assert!(
            dim % heads == 0,
            "head count {} must divide channel count {}",
            heads,
            dim
        );
        let span = 2 * window - 1;
        WindowMsa {
            dim,
            heads,
            window,
            qkv: Linear::new(dim, 3 * dim, true, rng),
            proj: Linear::new(dim, dim, true, rng),
            rel_bias: init::weight(vec![span * span, heads], rng),
        }
    }

    /// Window actually used on an `h×w` grid and the shift that goes with
    /// it. When the grid's smaller side fits inside one window, the window
    /// clamps to that side and shifting is disabled (a cyclic shift of a
    /// single window is a no-op plus masking artifacts).
    pub fn effective(&self, h: usize, w: usize, shifted: bool) -> (usize, usize) {
        let m = h.min(w);
        if m <= self.window {
            (m, 0)
        } else {
            (self.window, if shifted { self.window / 2 } else { 0 })
        }
    }

    /// Attend over tokens `x: [B, H·W, C]` laid out row-major on an `h×w`
    /// grid. Grids not divisible by the window are zero-padded and the pad
    /// is stripped from the output.
    pub fn forward(&self, x: &Tensor<T>, h: usize, w: usize, shifted: bool) -> Tensor<T> {
        let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(n, h * w, "token count {} must equal {}x{}", n, h, w);
        assert_eq!(c, self.dim, "channel mismatch");
        let (we, shift) = self.effective(h, w, shifted);

        let mut grid = reshape(x, vec![b, h, w, c]);
        let (hp, wp) = (h.div_ceil(we) * we, w.div_ceil(we) * we);
        if hp != h {
            grid = pad_axis(&grid, 1, 0, hp - h);
        }
        if wp != w {
            grid = pad_axis(&grid, 2, 0, wp - w);
        }
        if shift > 0 {
            grid = roll_axis(&roll_axis(&grid, 1, -(shift as isize)), 2, -(shift as isize));
        }

        let windows = window_partition(&grid, we); // [B·nw, T, C]
        let t = we * we;
        let nw = (hp / we) * (wp / we);
        let dh = c / self.heads;

        let qkv = self.qkv.forward(&windows); // [B·nw, T, 3C]
        let to_heads = |z: &Tensor<T>| {
            let z = reshape(z, vec![b * nw, t, self.heads, dh]);
            reshape(&permute(&z, &[0, 2, 1, 3]), vec![b * nw * self.heads, t, dh])
        };
        let q = to_heads(&narrow(&qkv, 2, 0, c));
        let k = to_heads(&narrow(&qkv, 2, c, c));
        let v = to_heads(&narrow(&qkv, 2, 2 * c, c));

        let scale = T::of_f64(1.0 / (dh as f64).sqrt());
        let logits = crate::tensor::ops::scale(&matmul(&q, &permute(&k, &[0, 2, 1])), scale);

        // Per-head relative-position bias, broadcast over batch and windows.
        let bias = index_select(&self.rel_bias, 0, &relative_position_index(we)); // [T·T, heads]
        let bias = reshape(&permute(&bias, &[1, 0]), vec![1, 1, self.heads, t, t]);
        let mut logits = add(&reshape(&logits, vec![b, nw, self.heads, t, t]), &bias);
        if shift > 0 {
            let mask = reshape(&shift_mask::<T>(hp, wp, we, shift), vec![1, nw, 1, t, t]);
            logits = add(&logits, &mask);
        }
        let attn = softmax_lastdim(&reshape(&logits, vec![b * nw * self.heads, t, t]));

        let ctxt = matmul(&attn, &v); // [B·nw·heads, T, dh]
        let ctxt = reshape(&ctxt, vec![b * nw, self.heads, t, dh]);
        let merged = reshape(&permute(&ctxt, &[0, 2, 1, 3]), vec![b * nw, t, c]);
        let projected = self.proj.forward(&merged);

        let mut grid = window_unpartition(&projected, we, b, hp, wp);
        if shift > 0 {
            grid = roll_axis(&roll_axis(&grid, 1, shift as isize), 2, shift as isize);
        }
        if hp != h {
            grid = narrow(&grid, 1, 0, h);
        }
        if wp != w {
            grid = narrow(&grid, 2, 0, w);
        }
        reshape(&grid, vec![b, h * w, c])
    }
}

impl<T: Element> Module<T> for WindowMsa<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.qkv.named(&scoped(prefix, "qkv"), out);
        self.proj.named(&scoped(prefix, "proj"), out);
        out.param(scoped(prefix, "rel_bias"), &self.rel_bias);
    }
}
