//! Densely connected feature aggregation decoder: downsample connections,
//! large-field upsample connections, shared spatial/channel attention, the
//! four-way aggregation graph, and the segmentation head.

use rand::Rng;

use crate::attention::{ChannelAttention, SpatialAttention};
use crate::encoder::FeaturePyramid;
use crate::model::ModelConfig;
use crate::nn::{scoped, BatchNorm2d, Conv2d, ConvTranspose2d, Module, NamedTensors, Phase};
use crate::tensor::ops::{add, bilinear_upsample, relu};
use crate::tensor::{Element, Tensor};

/// Halves resolution while moving `i` channels to `j`: a stride-2 conv-BN
/// branch added to a stride-1 conv-BN (at `i` channels) followed by another
/// stride-2 conv-BN, with a ReLU on the sum. All convs are 3×3.
pub struct DownsampleConnection<T: Element> {
    pub conv_direct: Conv2d<T>,
    pub bn_direct: BatchNorm2d<T>,
    pub conv_inner: Conv2d<T>,
    pub bn_inner: BatchNorm2d<T>,
    pub conv_down: Conv2d<T>,
    pub bn_down: BatchNorm2d<T>,
}

impl<T: Element> DownsampleConnection<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        DownsampleConnection {
            conv_direct: Conv2d::new(in_ch, out_ch, 3, 2, 1, 1, false, rng),
            bn_direct: BatchNorm2d::new(out_ch),
            conv_inner: Conv2d::new(in_ch, in_ch, 3, 1, 1, 1, false, rng),
            bn_inner: BatchNorm2d::new(in_ch),
            conv_down: Conv2d::new(in_ch, out_ch, 3, 2, 1, 1, false, rng),
            bn_down: BatchNorm2d::new(out_ch),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, phase: Phase) -> Tensor<T> {
        let direct = self.bn_direct.forward(&self.conv_direct.forward(x), phase);
        let inner = self.bn_inner.forward(&self.conv_inner.forward(x), phase);
        let down = self.bn_down.forward(&self.conv_down.forward(&inner), phase);
        relu(&add(&direct, &down))
    }
}

impl<T: Element> Module<T> for DownsampleConnection<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.conv_direct.named(&scoped(prefix, "conv_direct"), out);
        self.bn_direct.named(&scoped(prefix, "bn_direct"), out);
        self.conv_inner.named(&scoped(prefix, "conv_inner"), out);
        self.bn_inner.named(&scoped(prefix, "bn_inner"), out);
        self.conv_down.named(&scoped(prefix, "conv_down"), out);
        self.bn_down.named(&scoped(prefix, "bn_down"), out);
    }
}

/// One large-receptive-field upsampling step: 1×1 conv, 3×3 dilated conv
/// (rate = padding = `rate`), then a kernel-2 stride-2 transposed conv.
/// Doubles resolution.
pub struct FieldBlock<T: Element> {
    pub pointwise: Conv2d<T>,
    pub dilated: Conv2d<T>,
    pub up: ConvTranspose2d<T>,
}

impl<T: Element> FieldBlock<T> {
    pub fn new(in_ch: usize, out_ch: usize, rate: usize, rng: &mut impl Rng) -> Self {
        FieldBlock {
            pointwise: Conv2d::pointwise(in_ch, out_ch, rng),
            dilated: Conv2d::new(out_ch, out_ch, 3, 1, rate, rate, true, rng),
            up: ConvTranspose2d::new(out_ch, out_ch, 2, 2, 0, true, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.up.forward(&self.dilated.forward(&self.pointwise.forward(x)))
    }
}

impl<T: Element> Module<T> for FieldBlock<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.pointwise.named(&scoped(prefix, "pointwise"), out);
        self.dilated.named(&scoped(prefix, "dilated"), out);
        self.up.named(&scoped(prefix, "up"), out);
    }
}

/// Two field blocks with dilation rates 6 then 12 and a ReLU between them.
/// Channels drop from `m` to `n` at the first block's 1×1 conv; resolution
/// quadruples overall.
pub struct LargeFieldUpsample<T: Element> {
    pub rate6: FieldBlock<T>,
    pub rate12: FieldBlock<T>,
}

impl<T: Element> LargeFieldUpsample<T> {
    pub fn new(in_ch: usize, out_ch: usize, rng: &mut impl Rng) -> Self {
        LargeFieldUpsample {
            rate6: FieldBlock::new(in_ch, out_ch, 6, rng),
            rate12: FieldBlock::new(out_ch, out_ch, 12, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>) -> Tensor<T> {
        self.rate12.forward(&relu(&self.rate6.forward(x)))
    }
}

impl<T: Element> Module<T> for LargeFieldUpsample<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.rate6.named(&scoped(prefix, "rate6"), out);
        self.rate12.named(&scoped(prefix, "rate12"), out);
    }
}

/// An attention module's two call sites in the aggregation graph. `Shared`
/// uses one parameter set at both sites, `Separate` keeps two independent
/// sets, and `Identity` passes features through untouched (the connection-only
/// ablation).
pub enum SitePair<M> {
    Identity,
    Shared(M),
    Separate(M, M),
}

impl<M> SitePair<M> {
    pub fn site_a(&self) -> Option<&M> {
        match self {
            SitePair::Identity => None,
            SitePair::Shared(m) => Some(m),
            SitePair::Separate(a, _) => Some(a),
        }
    }

    pub fn site_b(&self) -> Option<&M> {
        match self {
            SitePair::Identity => None,
            SitePair::Shared(m) => Some(m),
            SitePair::Separate(_, b) => Some(b),
        }
    }

    pub fn is_shared(&self) -> bool {
        matches!(self, SitePair::Shared(_))
    }
}

/// How the decoder instantiates its attention modules.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum AttentionMode {
    /// No attention — both call sites are identity (connection-only model).
    Identity,
    /// One spatial and one channel parameter set, each reused at two sites.
    Shared,
    /// Four independent attention modules.
    Unshared,
}

/// The four aggregation features, finest first: `af[0]` is `C @ H/4`,
/// `af[3]` is `8C @ H/32`.
pub type AggregatedFeatures<T> = [Tensor<T>; 4];

/// The densely connected aggregation graph. Channel plan for base width C:
///
/// - `agg4 = st4 + down_4c_8c(spatial(down_2c_4c_a(st2)))`
/// - `agg3 = spatial(st3) + down_2c_4c_b(channel(down_c_2c(st1)))`
/// - `agg2 = channel(st2) + up_8c_2c(agg4)`
/// - `agg1 = st1 + align(bilinear×2(agg2)) + up_4c_c(agg3)`
///
/// Spatial attention runs at 4C, channel attention at 2C; in shared mode one
/// parameter set serves both of its sites. `align` is the 1×1 conv resolving
/// the 2C-vs-C mismatch on the doubled `agg2` path.
pub struct Dcfam<T: Element> {
    pub down_c_2c: DownsampleConnection<T>,
    pub down_2c_4c_a: DownsampleConnection<T>,
    pub down_2c_4c_b: DownsampleConnection<T>,
    pub down_4c_8c: DownsampleConnection<T>,
    pub up_8c_2c: LargeFieldUpsample<T>,
    pub up_4c_c: LargeFieldUpsample<T>,
    pub spatial: SitePair<SpatialAttention<T>>,
    pub channel: SitePair<ChannelAttention<T>>,
    pub align: Conv2d<T>,
}

impl<T: Element> Dcfam<T> {
    pub fn new(cfg: &ModelConfig, mode: AttentionMode, rng: &mut impl Rng) -> Self {
        let c = cfg.embed_dim;
        let down_c_2c = DownsampleConnection::new(c, 2 * c, rng);
        let down_2c_4c_a = DownsampleConnection::new(2 * c, 4 * c, rng);
        let down_2c_4c_b = DownsampleConnection::new(2 * c, 4 * c, rng);
        let down_4c_8c = DownsampleConnection::new(4 * c, 8 * c, rng);
        let up_8c_2c = LargeFieldUpsample::new(8 * c, 2 * c, rng);
        let up_4c_c = LargeFieldUpsample::new(4 * c, c, rng);
        let (spatial, channel) = match mode {
            AttentionMode::Identity => (SitePair::Identity, SitePair::Identity),
            AttentionMode::Shared => (
                SitePair::Shared(SpatialAttention::new(4 * c, rng)),
                SitePair::Shared(ChannelAttention::new(2 * c, rng)),
            ),
            AttentionMode::Unshared => (
                SitePair::Separate(
                    SpatialAttention::new(4 * c, rng),
                    SpatialAttention::new(4 * c, rng),
                ),
                SitePair::Separate(
                    ChannelAttention::new(2 * c, rng),
                    ChannelAttention::new(2 * c, rng),
                ),
            ),
        };
        Dcfam {
            down_c_2c,
            down_2c_4c_a,
            down_2c_4c_b,
            down_4c_8c,
            up_8c_2c,
            up_4c_c,
            spatial,
            channel,
            align: Conv2d::pointwise(2 * c, c, rng),
        }
    }

    fn spatial_a(&self, x: &Tensor<T>) -> Tensor<T> {
        self.spatial.site_a().map_or_else(|| x.clone(), |m| m.forward(x))
    }

    fn spatial_b(&self, x: &Tensor<T>) -> Tensor<T> {
        self.spatial.site_b().map_or_else(|| x.clone(), |m| m.forward(x))
    }

    fn channel_a(&self, x: &Tensor<T>) -> Tensor<T> {
        self.channel.site_a().map_or_else(|| x.clone(), |m| m.forward(x))
    }

    fn channel_b(&self, x: &Tensor<T>) -> Tensor<T> {
        self.channel.site_b().map_or_else(|| x.clone(), |m| m.forward(x))
    }

    pub fn forward(&self, p: &FeaturePyramid<T>, phase: Phase) -> AggregatedFeatures<T> {
        let agg4 = add(
            &p.st4,
            &self
                .down_4c_8c
                .forward(&self.spatial_a(&self.down_2c_4c_a.forward(&p.st2, phase)), phase),
        );
        let agg3 = add(
            &self.spatial_b(&p.st3),
            &self
                .down_2c_4c_b
                .forward(&self.channel_a(&self.down_c_2c.forward(&p.st1, phase)), phase),
        );
        let agg2 = add(&self.channel_b(&p.st2), &self.up_8c_2c.forward(&agg4));
        let doubled = bilinear_upsample(&agg2, 2 * agg2.shape()[2], 2 * agg2.shape()[3]);
        let agg1 = add(
            &add(&p.st1, &self.align.forward(&doubled)),
            &self.up_4c_c.forward(&agg3),
        );
        [agg1, agg2, agg3, agg4]
    }
}

impl<T: Element> Module<T> for Dcfam<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.down_c_2c.named(&scoped(prefix, "down_c_2c"), out);
        self.down_2c_4c_a.named(&scoped(prefix, "down_2c_4c_a"), out);
        self.down_2c_4c_b.named(&scoped(prefix, "down_2c_4c_b"), out);
        self.down_4c_8c.named(&scoped(prefix, "down_4c_8c"), out);
        self.up_8c_2c.named(&scoped(prefix, "up_8c_2c"), out);
        self.up_4c_c.named(&scoped(prefix, "up_4c_c"), out);
        match &self.spatial {
            SitePair::Identity => {}
            SitePair::Shared(m) => m.named(&scoped(prefix, "spatial"), out),
            SitePair::Separate(a, b) => {
                a.named(&scoped(prefix, "spatial_a"), out);
                b.named(&scoped(prefix, "spatial_b"), out);
            }
        }
        match &self.channel {
            SitePair::Identity => {}
            SitePair::Shared(m) => m.named(&scoped(prefix, "channel"), out),
            SitePair::Separate(a, b) => {
                a.named(&scoped(prefix, "channel_a"), out);
                b.named(&scoped(prefix, "channel_b"), out);
            }
        }
        self.align.named(&scoped(prefix, "align"), out);
    }
}

/// Classification head: 3×3 conv + BN + ReLU, 1×1 conv to the class count,
/// then bilinear upsampling to the requested resolution.
pub struct SegHead<T: Element> {
    pub conv: Conv2d<T>,
    pub bn: BatchNorm2d<T>,
    pub classify: Conv2d<T>,
}

impl<T: Element> SegHead<T> {
    pub fn new(in_ch: usize, num_classes: usize, rng: &mut impl Rng) -> Self {
        assert!(num_classes >= 2, "need at least 2 classes, got {}", num_classes);
        SegHead {
            conv: Conv2d::new(in_ch, in_ch, 3, 1, 1, 1, false, rng),
            bn: BatchNorm2d::new(in_ch),
            classify: Conv2d::pointwise(in_ch, num_classes, rng),
        }
    }

    pub fn forward(&self, x: &Tensor<T>, phase: Phase, out_h: usize, out_w: usize) -> Tensor<T> {
        let y = relu(&self.bn.forward(&self.conv.forward(x), phase));
        bilinear_upsample(&self.classify.forward(&y), out_h, out_w)
    }
}

impl<T: Element> Module<T> for SegHead<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.conv.named(&scoped(prefix, "conv"), out);
        self.bn.named(&scoped(prefix, "bn"), out);
        self.classify.named(&scoped(prefix, "classify"), out);
    }
}
