//! Hierarchical windowed-attention encoder: patch embedding, four stages of
//! attention block pairs with patch merging between them, and per-stage 1×1
//! convolution taps producing the feature pyramid.

use rand::Rng;

use crate::attention::WindowMsa;
use crate::model::ModelConfig;
use crate::nn::{scoped, Conv2d, LayerNorm, Linear, Mlp, Module, NamedTensors};
use crate::tensor::ops::{add, pad_axis, permute, reshape};
use crate::tensor::{Element, Tensor};

/// Tokens `[B, H·W, C]` (row-major grid) to an NCHW map.
pub fn tokens_to_map<T: Element>(x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
    let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
    assert_eq!(n, h * w, "token count {} must equal {}x{}", n, h, w);
    permute(&reshape(x, vec![b, h, w, c]), &[0, 3, 1, 2])
}

/// NCHW map to tokens `[B, H·W, C]`.
pub fn map_to_tokens<T: Element>(x: &Tensor<T>) -> Tensor<T> {
    let (b, c, h, w) = (x.shape()[0], x.shape()[1], x.shape()[2], x.shape()[3]);
    reshape(&permute(x, &[0, 2, 3, 1]), vec![b, h * w, c])
}

/// Split an RGB image into non-overlapping `patch×patch` blocks, project
/// each block's raw values (3·p² of them, channel-major) to the embed dim,
/// and layer-normalize. Equivalent to a stride-`patch` convolution followed
/// by flattening.
pub struct PatchEmbed<T: Element> {
    pub proj: Linear<T>,
    pub norm: LayerNorm<T>,
    pub patch: usize,
}

impl<T: Element> PatchEmbed<T> {
    pub fn new(patch: usize, embed_dim: usize, rng: &mut impl Rng) -> Self {
        PatchEmbed {
            proj: Linear::new(3 * patch * patch, embed_dim, true, rng),
            norm: LayerNorm::new(embed_dim),
            patch,
        }
    }

    /// Returns the token matrix and the token-grid extents.
    pub fn forward(&self, image: &Tensor<T>) -> (Tensor<T>, usize, usize) {
        let (b, c, h, w) = (
            image.shape()[0],
            image.shape()[1],
            image.shape()[2],
            image.shape()[3],
        );
        assert_eq!(c, 3, "patch embedding expects RGB input, got {} channels", c);
        let p = self.patch;
        assert!(
            h % p == 0 && w % p == 0,
            "image {}x{} not divisible by patch {}",
            h,
            w,
            p
        );
        let (gh, gw) = (h / p, w / p);
        // [B,3,H,W] -> [B,3,gh,p,gw,p] -> [B,gh,gw,3,p,p] -> rows of 3p².
        let blocks = reshape(image, vec![b, 3, gh, p, gw, p]);
        let blocks = permute(&blocks, &[0, 2, 4, 1, 3, 5]);
        let rows = reshape(&blocks, vec![b, gh * gw, 3 * p * p]);
        (self.norm.forward(&self.proj.forward(&rows)), gh, gw)
    }
}

impl<T: Element> Module<T> for PatchEmbed<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.proj.named(&scoped(prefix, "proj"), out);
        self.norm.named(&scoped(prefix, "norm"), out);
    }
}

/// One attention block: pre-norm window attention and pre-norm MLP, each
/// with a residual connection. Blocks come in pairs — plain then shifted.
pub struct SwinBlock<T: Element> {
    pub norm1: LayerNorm<T>,
    pub attn: WindowMsa<T>,
    pub norm2: LayerNorm<T>,
    pub mlp: Mlp<T>,
    pub shifted: bool,
}

impl<T: Element> SwinBlock<T> {
    pub fn new(
        dim: usize,
        heads: usize,
        window: usize,
        mlp_ratio: f64,
        shifted: bool,
        rng: &mut impl Rng,
    ) -> Self {
        SwinBlock {
            norm1: LayerNorm::new(dim),
            attn: WindowMsa::new(dim, heads, window, rng),
            norm2: LayerNorm::new(dim),
            mlp: Mlp::new(dim, mlp_ratio, rng),
            shifted,
        }
    }

    pub fn forward(&self, x: &Tensor<T>, h: usize, w: usize) -> Tensor<T> {
        let y = add(x, &self.attn.forward(&self.norm1.forward(x), h, w, self.shifted));
        add(&y, &self.mlp.forward(&self.norm2.forward(&y)))
    }
}

impl<T: Element> Module<T> for SwinBlock<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.norm1.named(&scoped(prefix, "norm1"), out);
        self.attn.named(&scoped(prefix, "attn"), out);
        self.norm2.named(&scoped(prefix, "norm2"), out);
        self.mlp.named(&scoped(prefix, "mlp"), out);
    }
}

/// Downsampling between stages: concatenate each 2×2 token neighborhood
/// (4D features), layer-normalize, and linearly project 4D→2D. Halves
/// resolution, doubles channels.
pub struct PatchMerging<T: Element> {
    pub norm: LayerNorm<T>,
    pub reduce: Linear<T>,
}

impl<T: Element> PatchMerging<T> {
    pub fn new(dim: usize, rng: &mut impl Rng) -> Self {
        PatchMerging {
            norm: LayerNorm::new(4 * dim),
            reduce: Linear::new(4 * dim, 2 * dim, false, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, h: usize, w: usize) -> (Tensor<T>, usize, usize) {
        let (b, n, c) = (x.shape()[0], x.shape()[1], x.shape()[2]);
        assert_eq!(n, h * w, "token count {} must equal {}x{}", n, h, w);
        let mut grid = reshape(x, vec![b, h, w, c]);
        let (hp, wp) = (h + h % 2, w + w % 2);
        if hp != h {
            grid = pad_axis(&grid, 1, 0, 1);
        }
        if wp != w {
            grid = pad_axis(&grid, 2, 0, 1);
        }
        // [B,h/2,2,w/2,2,C] -> [B,h/2,w/2,2,2,C] -> 4C rows, raster order
        // within the 2x2 neighborhood.
        let g = reshape(&grid, vec![b, hp / 2, 2, wp / 2, 2, c]);
        let g = permute(&g, &[0, 1, 3, 2, 4, 5]);
        let rows = reshape(&g, vec![b, (hp / 2) * (wp / 2), 4 * c]);
        (self.reduce.forward(&self.norm.forward(&rows)), hp / 2, wp / 2)
    }
}

impl<T: Element> Module<T> for PatchMerging<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.norm.named(&scoped(prefix, "norm"), out);
        self.reduce.named(&scoped(prefix, "reduce"), out);
    }
}

/// One encoder stage: its attention blocks, the 1×1 tap that emits the
/// stage feature, and the merge down to the next stage (absent on the last).
pub struct Stage<T: Element> {
    pub blocks: Vec<SwinBlock<T>>,
    pub tap: Conv2d<T>,
    pub merge: Option<PatchMerging<T>>,
}

impl<T: Element> Module<T> for Stage<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        for (i, b) in self.blocks.iter().enumerate() {
            b.named(&scoped(prefix, &format!("block{i}")), out);
        }
        self.tap.named(&scoped(prefix, "tap"), out);
        if let Some(m) = &self.merge {
            m.named(&scoped(prefix, "merge"), out);
        }
    }
}

/// The four stage features: channels double and resolution halves per step,
/// starting at `C @ H/4`.
pub struct FeaturePyramid<T: Element> {
    pub st1: Tensor<T>,
    pub st2: Tensor<T>,
    pub st3: Tensor<T>,
    pub st4: Tensor<T>,
}

impl<T: Element> FeaturePyramid<T> {
    pub fn as_array(&self) -> [&Tensor<T>; 4] {
        [&self.st1, &self.st2, &self.st3, &self.st4]
    }
}

/// The full hierarchical encoder.
pub struct SwinEncoder<T: Element> {
    pub embed: PatchEmbed<T>,
    pub stages: Vec<Stage<T>>,
}

impl<T: Element> SwinEncoder<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Self {
        let embed = PatchEmbed::new(cfg.patch_size, cfg.embed_dim, rng);
        let mut stages = Vec::with_capacity(4);
        for s in 0..4 {
            let dim = cfg.stage_channels(s);
            let blocks = (0..cfg.depths[s])
                .map(|i| {
                    SwinBlock::new(
                        dim,
                        cfg.num_heads[s],
                        cfg.window_size,
                        cfg.mlp_ratio,
                        i % 2 == 1,
                        rng,
                    )
                })
                .collect();
            stages.push(Stage {
                blocks,
                tap: Conv2d::pointwise(dim, dim, rng),
                merge: (s < 3).then(|| PatchMerging::new(dim, rng)),
            });
        }
        SwinEncoder { embed, stages }
    }

    /// Run the encoder, producing the four tapped stage features.
    pub fn forward(&self, image: &Tensor<T>) -> FeaturePyramid<T> {
        let (mut tokens, mut h, mut w) = self.embed.forward(image);
        let mut taps: Vec<Tensor<T>> = Vec::with_capacity(4);
        for stage in &self.stages {
            for block in &stage.blocks {
                tokens = block.forward(&tokens, h, w);
            }
            taps.push(stage.tap.forward(&tokens_to_map(&tokens, h, w)));
            if let Some(merge) = &stage.merge {
                let (t2, h2, w2) = merge.forward(&tokens, h, w);
                tokens = t2;
                h = h2;
                w = w2;
            }
        }
        let mut it = taps.into_iter();
        FeaturePyramid {
            st1: it.next().unwrap(),
            st2: it.next().unwrap(),
            st3: it.next().unwrap(),
            st4: it.next().unwrap(),
        }
    }
}

impl<T: Element> Module<T> for SwinEncoder<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.embed.named(&scoped(prefix, "embed"), out);
        for (i, s) in self.stages.iter().enumerate() {
            s.named(&scoped(prefix, &format!("stage{}", i + 1)), out);
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::named_tensors;
    use crate::tensor::ops::{conv2d, sum_all};
    use crate::tensor::{backward, init};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn patch_embed_token_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pe = PatchEmbed::<f32>::new(4, 12, &mut rng);
        let img = init::uniform(vec![1, 3, 64, 64], 1.0, &mut rng);
        let (tokens, gh, gw) = pe.forward(&img);
        assert_eq!((gh, gw), (16, 16));
        assert_eq!(tokens.shape(), &[1, 256, 12]);
    }

    #[test]
    fn patch_embed_zero_image_rows_identical() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let pe = PatchEmbed::<f32>::new(4, 8, &mut rng);
        let (tokens, _, _) = pe.forward(&Tensor::zeros(vec![1, 3, 8, 8]));
        let v = tokens.to_vec();
        for row in v.chunks(8).skip(1) {
            assert_eq!(row, &v[..8]);
        }
    }

    #[test]
    fn patch_embed_matches_strided_conv() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let pe = PatchEmbed::<f64>::new(4, 6, &mut rng);
        let img = init::uniform(vec![2, 3, 8, 8], 1.0, &mut rng);
        let (tokens, gh, gw) = pe.forward(&img);

        // Same projection as a kernel-4 stride-4 convolution: the linear
        // weight [48, C] transposes into conv layout [C, 3, 4, 4].
        let wlin = pe.proj.weight.to_vec(); // [48, 6]
        let mut wconv = vec![0.0f64; 6 * 48];
        for i in 0..48 {
            for o in 0..6 {
                wconv[o * 48 + i] = wlin[i * 6 + o];
            }
        }
        let wconv = Tensor::from_vec(vec![6, 3, 4, 4], wconv);
        let conv_map = conv2d(&img, &wconv, pe.proj.bias.as_ref(), 4, 0, 1);
        let conv_tokens = pe.norm.forward(&map_to_tokens(&conv_map));
        let a = tokens.to_vec();
        let b = conv_tokens.to_vec();
        let _ = (gh, gw);
        for (x, y) in a.iter().zip(&b) {
            assert!((x - y).abs() < 1e-6);
        }
    }

    #[test]
    fn patch_merging_halves_and_doubles() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let pm = PatchMerging::<f32>::new(6, &mut rng);
        let x = init::uniform(vec![1, 16 * 16, 6], 1.0, &mut rng);
        let (y, h, w) = pm.forward(&x, 16, 16);
        assert_eq!((h, w), (8, 8));
        assert_eq!(y.shape(), &[1, 64, 12]);
    }

    #[test]
    fn patch_merging_constant_field_stays_constant() {
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let pm = PatchMerging::<f32>::new(4, &mut rng);
        let x = Tensor::full(vec![1, 16, 4], 0.3f32);
        let (y, _, _) = pm.forward(&x, 4, 4);
        let v = y.to_vec();
        for row in v.chunks(8).skip(1) {
            assert_eq!(row, &v[..8]);
        }
    }

    #[test]
    fn patch_merging_gathers_correct_neighborhoods() {
        // Identity-like check on the gathered rows: mark each token with its
        // grid position and verify each output row saw its own 2x2 block.
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let pm = PatchMerging::<f64>::new(1, &mut rng);
        let data: Vec<f64> = (0..16).map(f64::from).collect();
        let x = Tensor::from_vec(vec![1, 16, 1], data);
        let mut grid = reshape(&x, vec![1, 4, 4, 1]);
        grid = reshape(&grid, vec![1, 2, 2, 2, 2, 1]);
        let gathered = reshape(&permute(&grid, &[0, 1, 3, 2, 4, 5]), vec![1, 4, 4]);
        let rows = gathered.to_vec();
        // Top-left block of a row-major 4x4 grid is tokens {0,1,4,5}.
        assert_eq!(&rows[..4], &[0.0, 1.0, 4.0, 5.0]);
        assert_eq!(&rows[4..8], &[2.0, 3.0, 6.0, 7.0]);
        let (y, _, _) = pm.forward(&x, 4, 4);
        assert_eq!(y.shape(), &[1, 4, 2]);
    }

    #[test]
    fn block_pair_preserves_token_count() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        let b0 = SwinBlock::<f32>::new(8, 2, 2, 4.0, false, &mut rng);
        let b1 = SwinBlock::<f32>::new(8, 2, 2, 4.0, true, &mut rng);
        let x = init::uniform(vec![1, 16, 8], 1.0, &mut rng);
        let y = b1.forward(&b0.forward(&x, 4, 4), 4, 4);
        assert_eq!(y.shape(), x.shape());
        assert!(y.all_finite());
    }

    #[test]
    fn zeroed_residual_branches_make_block_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let block = SwinBlock::<f32>::new(8, 2, 2, 4.0, false, &mut rng);
        // Zero the final layer of both residual branches.
        for t in [
            &block.attn.proj.weight,
            block.attn.proj.bias.as_ref().unwrap(),
            &block.mlp.fc2.weight,
            block.mlp.fc2.bias.as_ref().unwrap(),
        ] {
            t.data_mut().fill(0.0);
        }
        let x = init::uniform(vec![1, 16, 8], 1.0, &mut rng);
        let y = block.forward(&x, 4, 4);
        let diff: f32 = x
            .to_vec()
            .iter()
            .zip(y.to_vec())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f32::max);
        assert!(diff < 1e-7, "block must be exactly identity, diff {}", diff);
    }

    #[test]
    fn encoder_ladder_shapes() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let cfg = ModelConfig::swin_nano(2);
        let enc = SwinEncoder::<f32>::new(&cfg, &mut rng);
        let img = init::uniform(vec![1, 3, 64, 64], 1.0, &mut rng);
        let p = enc.forward(&img);
        assert_eq!(p.st1.shape(), &[1, 32, 16, 16]);
        assert_eq!(p.st2.shape(), &[1, 64, 8, 8]);
        assert_eq!(p.st3.shape(), &[1, 128, 4, 4]);
        assert_eq!(p.st4.shape(), &[1, 256, 2, 2]);
    }

    #[test]
    fn every_parameter_reaches_the_loss() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let cfg = ModelConfig::swin_nano(2);
        let enc = SwinEncoder::<f32>::new(&cfg, &mut rng);
        // 64² keeps the coarsest stage at 2×2 tokens; a 1×1 stage would make
        // its single-token softmax (and hence its position bias) gradient-free.
        let img = init::uniform(vec![1, 3, 64, 64], 1.0, &mut rng);
        let p = enc.forward(&img);
        // Sum of squares over every tap: the taps are side branches, so a
        // loss on one stage alone cannot reach the others' 1×1 convs.
        let mut loss = Tensor::scalar(0.0f32);
        for st in p.as_array() {
            loss = add(&loss, &sum_all(&crate::tensor::ops::mul(st, st)));
        }
        backward(&loss).unwrap();
        let nt = named_tensors(&enc);
        for (name, t) in &nt.params {
            let g = t
                .grad()
                .unwrap_or_else(|| panic!("parameter {} never received a gradient", name));
            assert!(
                g.iter().any(|&v| v != 0.0),
                "parameter {} has an all-zero gradient",
                name
            );
        }
    }
}
