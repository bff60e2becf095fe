//! Forward ops with recorded backward closures.
//!
//! Every op is a pure function of its inputs (plus attributes) producing a
//! fresh tensor; output shapes are pure functions of input shapes. Shape
//! violations panic with the offending shapes in the message.

mod conv;
mod elementwise;
mod matmul;
mod norm;
mod reduce;
mod resample;
mod shape_ops;

pub use conv::{conv2d, conv2d_out_dim, transpose_conv2d, transpose_conv2d_out_dim};
pub use elementwise::{add, add_scalar, div, gelu, mul, relu, scale, sub};
pub use matmul::matmul;
pub use norm::{batch_norm2d, layer_norm, BatchNormState};
pub use reduce::{l2_normalize_lastdim, log_softmax_lastdim, softmax_lastdim, sum_all, sum_axis};
pub use resample::bilinear_upsample;
pub use shape_ops::{concat, concat_channels, index_select, narrow, pad_axis, permute, reshape, roll_axis};

/// Split a shape at `axis` into (outer, mid, inner) block extents.
pub(crate) fn axis_blocks(shape: &[usize], axis: usize) -> (usize, usize, usize) {
    assert!(axis < shape.len(), "axis {} out of range for shape {:?}", axis, shape);
    let outer: usize = shape[..axis].iter().product();
    let mid = shape[axis];
    let inner: usize = shape[axis + 1..].iter().product();
    (outer, mid, inner)
}
