//! Parameterized layers built on the tensor ops, with hierarchical
//! parameter naming for the optimizer and checkpoints.

use rand::Rng;

use crate::tensor::ops::{
    add, batch_norm2d, conv2d, gelu, layer_norm, matmul, reshape, transpose_conv2d, BatchNormState,
};
use crate::tensor::{init, Element, Tensor};

/// Whether a forward pass updates batch statistics (training) or consumes
/// frozen ones (evaluation).
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Phase {
    Train,
    Eval,
}

/// Named trainable parameters and persistent buffers of a module tree.
/// Parameters receive gradients and optimizer updates; buffers (batch-norm
/// running stats) are serialized but never optimized.
#[derive(Default)]
pub struct NamedTensors<T: Element> {
    pub params: Vec<(String, Tensor<T>)>,
    pub buffers: Vec<(String, Tensor<T>)>,
}

impl<T: Element> NamedTensors<T> {
    pub fn new() -> Self {
        NamedTensors {
            params: Vec::new(),
            buffers: Vec::new(),
        }
    }

    pub fn param(&mut self, name: String, t: &Tensor<T>) {
        self.params.push((name, t.clone()));
    }

    pub fn buffer(&mut self, name: String, t: &Tensor<T>) {
        self.buffers.push((name, t.clone()));
    }

    /// All entries, parameters first, as one name->tensor list.
    pub fn all(&self) -> impl Iterator<Item = &(String, Tensor<T>)> {
        self.params.iter().chain(self.buffers.iter())
    }

    /// Total trainable element count.
    pub fn param_count(&self) -> usize {
        self.params.iter().map(|(_, t)| t.elem_count()).sum()
    }
}

/// Join a name under a dotted prefix.
pub fn scoped(prefix: &str, name: &str) -> String {
    if prefix.is_empty() {
        name.to_string()
    } else {
        format!("{prefix}.{name}")
    }
}

/// Anything owning named tensors.
pub trait Module<T: Element> {
    /// Push every parameter and buffer under `prefix` into `out`.
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>);
}

/// Collect a module tree's named tensors from the root.
pub fn named_tensors<T: Element, M: Module<T>>(module: &M) -> NamedTensors<T> {
    let mut out = NamedTensors::new();
    module.named("", &mut out);
    out
}

/// Fully connected layer; `weight` is `[in, out]` so tokens multiply on the
/// left without transposition.
pub struct Linear<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

impl<T: Element> Linear<T> {
    pub fn new(in_dim: usize, out_dim: usize, bias: bool, rng: &mut impl Rng) -> Self {
        Linear {
            weight: init::weight(vec![in_dim, out_dim], rng),
            bias: bias.then(|| init::zeros_param(vec![out_dim])),
        }
    }

    /// `x` is `[..., in]`; returns `[..., out]`.
    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        let in_dim = self.weight.shape()[0];
        let out_dim = self.weight.shape()[1];
        assert_eq!(
            *x.shape().last().expect("linear input needs rank >= 1"),
            in_dim,
            "linear expects last dim {}, got {:?}",
            in_dim,
            x.shape()
        );
        let rows = x.elem_count() / in_dim;
        let flat = reshape(x, vec![rows, in_dim]);
        let mut y = matmul(&flat, &self.weight);
        if let Some(b) = &self.bias {
            y = add(&y, &reshape(b, vec![1, out_dim]));
        }
        let mut shape = x.shape().to_vec();
        *shape.last_mut().unwrap() = out_dim;
        reshape(&y, shape)
    }
}

impl<T: Element> Module<T> for Linear<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        out.param(scoped(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            out.param(scoped(prefix, "bias"), b);
        }
    }
}

/// 2-D convolution layer over NCHW maps.
pub struct Conv2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
    pub dilation: usize,
}

impl<T: Element> Conv2d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        dilation: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        Conv2d {
            weight: init::weight(vec![out_ch, in_ch, kernel, kernel], rng),
            bias: bias.then(|| init::zeros_param(vec![out_ch])),
            stride,
            padding,
            dilation,
        }
    }

    /// Pointwise (1x1, stride 1) convolution with bias.
    pub fn pointwise(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        Self::new(in_ch, out_ch, 1, 1, 0, 1, true, rng)
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding, self.dilation)
    }
}

impl<T: Element> Module<T> for Conv2d<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        out.param(scoped(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            out.param(scoped(prefix, "bias"), b);
        }
    }
}

/// Transposed 2-D convolution (learned upsampling).
pub struct ConvTranspose2d<T: Element> {
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
    pub stride: usize,
    pub padding: usize,
}

impl<T: Element> ConvTranspose2d<T> {
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: usize,
        stride: usize,
        padding: usize,
        bias: bool,
        rng: &mut impl Rng,
    ) -> Self {
        ConvTranspose2d {
            weight: init::weight(vec![in_ch, out_ch, kernel, kernel], rng),
            bias: bias.then(|| init::zeros_param(vec![out_ch])),
            stride,
            padding,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        transpose_conv2d(x, &self.weight, self.bias.as_ref(), self.stride, self.padding)
    }
}

impl<T: Element> Module<T> for ConvTranspose2d<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        out.param(scoped(prefix, "weight"), &self.weight);
        if let Some(b) = &self.bias {
            out.param(scoped(prefix, "bias"), b);
        }
    }
}

/// Batch normalization over NCHW channels with running statistics.
pub struct BatchNorm2d<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub state: BatchNormState<T>,
    pub momentum: f64,
    pub eps: f64,
}

impl<T: Element> BatchNorm2d<T> {
    pub fn new(channels: usize) -> Self {
        BatchNorm2d {
            gamma: init::ones_param(vec![channels]),
            beta: init::zeros_param(vec![channels]),
            state: BatchNormState::new(channels),
            momentum: 0.1,
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, phase: Phase) -> Tensor<T> {
        batch_norm2d(
            x,
            &self.gamma,
            &self.beta,
            &self.state,
            phase == Phase::Train,
            self.momentum,
            self.eps,
        )
    }
}

impl<T: Element> Module<T> for BatchNorm2d<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        out.param(scoped(prefix, "gamma"), &self.gamma);
        out.param(scoped(prefix, "beta"), &self.beta);
        out.buffer(scoped(prefix, "running_mean"), &self.state.running_mean);
        out.buffer(scoped(prefix, "running_var"), &self.state.running_var);
    }
}

/// Layer normalization over the last dimension.
pub struct LayerNorm<T: Element> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub eps: f64,
}

impl<T: Element> LayerNorm<T> {
    pub fn new(dim: usize) -> Self {
        LayerNorm {
            gamma: init::ones_param(vec![dim]),
            beta: init::zeros_param(vec![dim]),
            eps: 1e-5,
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        layer_norm(x, &self.gamma, &self.beta, self.eps)
    }
}

impl<T: Element> Module<T> for LayerNorm<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        out.param(scoped(prefix, "gamma"), &self.gamma);
        out.param(scoped(prefix, "beta"), &self.beta);
    }
}

/// Token MLP: expand by a ratio, gelu, project back.
pub struct Mlp<T: Element> {
    pub fc1: Linear<T>,
    pub fc2: Linear<T>,
}

impl<T: Element> Mlp<T> {
    pub fn new(dim: usize, ratio: f64, rng: &mut impl Rng) -> Self {
        let hidden = (dim as f64 * ratio).round() as usize;
        Mlp {
            fc1: Linear::new(dim, hidden, true, rng),
            fc2: Linear::new(hidden, dim, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.fc2.forward(&gelu(&self.fc1.forward(x)))
    }
}

impl<T: Element> Module<T> for Mlp<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.fc1.named(&scoped(prefix, "fc1"), out);
        self.fc2.named(&scoped(prefix, "fc2"), out);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_shapes_and_bias() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = Linear::<f64>::new(4, 3, true, &mut rng);
        let x = Tensor::ones(vec![2, 5, 4]);
        let y = l.forward(&x);
        assert_eq!(y.shape(), &[2, 5, 3]);
        // All token rows are identical inputs, so all outputs match.
        let v = y.to_vec();
        for row in v.chunks(3).skip(1) {
            assert_eq!(row, &v[..3]);
        }
    }

    #[test]
    fn named_tensors_are_hierarchical() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let m = Mlp::<f32>::new(8, 4.0, &mut rng);
        let nt = named_tensors(&m);
        let names: Vec<&str> = nt.params.iter().map(|(n, _)| n.as_str()).collect();
        assert_eq!(names, vec!["fc1.weight", "fc1.bias", "fc2.weight", "fc2.bias"]);
        assert_eq!(nt.param_count(), 8 * 32 + 32 + 32 * 8 + 8);
    }

    #[test]
    fn batch_norm_module_tracks_buffers() {
        let bn = BatchNorm2d::<f32>::new(3);
        let nt = named_tensors(&bn);
        assert_eq!(nt.params.len(), 2);
        assert_eq!(nt.buffers.len(), 2);
        let x = Tensor::ones(vec![1, 3, 2, 2]);
        let y = bn.forward(&x, Phase::Eval);
        assert_eq!(y.shape(), &[1, 3, 2, 2]);
    }

    #[test]
    fn mlp_hidden_width_follows_ratio() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let m = Mlp::<f32>::new(6, 4.0, &mut rng);
        assert_eq!(m.fc1.weight.shape(), &[6, 24]);
        assert_eq!(m.fc2.weight.shape(), &[24, 6]);
    }

    #[test]
    fn pointwise_conv_keeps_resolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let c = Conv2d::<f32>::pointwise(4, 7, &mut rng);
        let y = c.forward(&Tensor::ones(vec![2, 4, 5, 6]));
        assert_eq!(y.shape(), &[2, 7, 5, 6]);
    }
}
