//! Model assembly: configuration presets, decoder variants, and the full
//! encoder–decoder segmentation network.

use rand::Rng;

use crate::decoder::{AttentionMode, Dcfam, SegHead};
use crate::encoder::SwinEncoder;
use crate::error::{Error, Result};
use crate::nn::{named_tensors, scoped, Module, NamedTensors, Phase};
use crate::tensor::ops::{narrow, pad_axis};
use crate::tensor::{Element, Tensor};

/// Which decoder the model carries.
#[derive(Clone, Copy, PartialEq, Eq, Debug)]
pub enum Variant {
    /// Encoder only; the head reads the finest stage tap directly.
    Baseline,
    /// Full aggregation graph with attention replaced by identity.
    Connections,
    /// Aggregation graph with four independent attention modules.
    UnsharedAttention,
    /// Full model: aggregation graph with shared attention.
    Full,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Baseline,
        Variant::Connections,
        Variant::UnsharedAttention,
        Variant::Full,
    ];

    pub fn parse(name: &str) -> Result<Self> {
        match name {
            "baseline" => Ok(Variant::Baseline),
            "dc" => Ok(Variant::Connections),
            "dcfam_ns" => Ok(Variant::UnsharedAttention),
            "dcfam" => Ok(Variant::Full),
            other => Err(Error::Config(format!(
                "unknown variant '{}' (expected baseline, dc, dcfam_ns, or dcfam)",
                other
            ))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Baseline => "baseline",
            Variant::Connections => "dc",
            Variant::UnsharedAttention => "dcfam_ns",
            Variant::Full => "dcfam",
        }
    }
}

/// Architecture hyperparameters. Stage `s` runs at channel width
/// `embed_dim · 2^s` and resolution `input / (4 · 2^s)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub preset: String,
    pub embed_dim: usize,
    pub depths: [usize; 4],
    pub num_heads: [usize; 4],
    pub window_size: usize,
    pub patch_size: usize,
    pub mlp_ratio: f64,
    pub num_classes: usize,
    pub variant: Variant,
}

impl ModelConfig {
    fn preset(
        name: &str,
        embed_dim: usize,
        depths: [usize; 4],
        num_heads: [usize; 4],
        window_size: usize,
        num_classes: usize,
    ) -> Self {
        ModelConfig {
            preset: name.to_string(),
            embed_dim,
            depths,
            num_heads,
            window_size,
            patch_size: 4,
            mlp_ratio: 4.0,
            num_classes,
            variant: Variant::Full,
        }
    }

    /// Desk-scale preset for tests and the synthetic benchmark.
    pub fn swin_nano(num_classes: usize) -> Self {
        Self::preset("swin_nano", 32, [2, 2, 2, 2], [2, 4, 8, 16], 4, num_classes)
    }

    pub fn swin_t(num_classes: usize) -> Self {
        Self::preset("swin_t", 96, [2, 2, 6, 2], [3, 6, 12, 24], 7, num_classes)
    }

    pub fn swin_s(num_classes: usize) -> Self {
        Self::preset("swin_s", 96, [2, 2, 18, 2], [3, 6, 12, 24], 7, num_classes)
    }

    pub fn swin_b(num_classes: usize) -> Self {
        Self::preset("swin_b", 128, [2, 2, 18, 2], [4, 8, 16, 32], 7, num_classes)
    }

    pub fn swin_l(num_classes: usize) -> Self {
        Self::preset("swin_l", 192, [2, 2, 18, 2], [6, 12, 24, 48], 7, num_classes)
    }

    pub fn by_name(name: &str, num_classes: usize) -> Result<Self> {
        match name {
            "swin_nano" => Ok(Self::swin_nano(num_classes)),
            "swin_t" => Ok(Self::swin_t(num_classes)),
            "swin_s" => Ok(Self::swin_s(num_classes)),
            "swin_b" => Ok(Self::swin_b(num_classes)),
            "swin_l" => Ok(Self::swin_l(num_classes)),
            other => Err(Error::Config(format!(
                "unknown preset '{}' (expected swin_nano, swin_t, swin_s, swin_b, or swin_l)",
                other
            ))),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config(format!(
                "num_classes must be at least 2, got {}",
                self.num_classes
            )));
        }
        for s in 0..4 {
            if self.depths[s] == 0 || self.depths[s] % 2 != 0 {
                return Err(Error::Config(format!(
                    "stage {} depth {} must be a positive even number (blocks come in pairs)",
                    s + 1,
                    self.depths[s]
                )));
            }
            let dim = self.stage_channels(s);
            if self.num_heads[s] == 0 || dim % self.num_heads[s] != 0 {
                return Err(Error::Config(format!(
                    "stage {} head count {} must divide channel width {}",
                    s + 1,
                    self.num_heads[s],
                    dim
                )));
            }
        }
        if self.window_size == 0 || self.patch_size == 0 {
            return Err(Error::Config("window and patch size must be positive".into()));
        }
        Ok(())
    }

    /// Channel width of stage `s` (0-based).
    pub fn stage_channels(&self, s: usize) -> usize {
        self.embed_dim << s
    }

    /// Total spatial reduction from image to the coarsest stage.
    pub fn total_stride(&self) -> usize {
        self.patch_size * 8
    }

    /// Pure shape law for the stage features of an `h`×`w` input:
    /// `(channels, height, width)` per stage, without building the model.
    pub fn pyramid_shapes(&self, h: usize, w: usize) -> [(usize, usize, usize); 4] {
        let mut out = [(0, 0, 0); 4];
        let (mut sh, mut sw) = (h / self.patch_size, w / self.patch_size);
        for (s, slot) in out.iter_mut().enumerate() {
            *slot = (self.stage_channels(s), sh, sw);
            sh /= 2;
            sw /= 2;
        }
        out
    }

    /// The aggregation features share the pyramid's shape ladder.
    pub fn aggregated_shapes(&self, h: usize, w: usize) -> [(usize, usize, usize); 4] {
        self.pyramid_shapes(h, w)
    }
}

/// Decoder half of the network, selected by [`Variant`].
pub enum Decoder<T: Element> {
    /// Direct upsampling from the finest encoder tap.
    Direct(SegHead<T>),
    /// Aggregation graph followed by the head on its finest output.
    Aggregated { dcfam: Dcfam<T>, head: SegHead<T> },
}

impl<T: Element> Module<T> for Decoder<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        match self {
            Decoder::Direct(head) => head.named(&scoped(prefix, "head"), out),
            Decoder::Aggregated { dcfam, head } => {
                dcfam.named(&scoped(prefix, "dcfam"), out);
                head.named(&scoped(prefix, "head"), out);
            }
        }
    }
}

/// The full segmentation network.
pub struct DcSwin<T: Element> {
    pub cfg: ModelConfig,
    pub encoder: SwinEncoder<T>,
    pub decoder: Decoder<T>,
}

impl<T: Element> DcSwin<T> {
    pub fn new(cfg: &ModelConfig, rng: &mut impl Rng) -> Result<Self> {
        cfg.validate()?;
        let encoder = SwinEncoder::new(cfg, rng);
        let head_in = cfg.embed_dim;
        let decoder = match cfg.variant {
            Variant::Baseline => {
                Decoder::Direct(SegHead::new(head_in, cfg.num_classes, rng))
            }
            Variant::Connections => Decoder::Aggregated {
                dcfam: Dcfam::new(cfg, AttentionMode::Identity, rng),
                head: SegHead::new(head_in, cfg.num_classes, rng),
            },
            Variant::UnsharedAttention => Decoder::Aggregated {
                dcfam: Dcfam::new(cfg, AttentionMode::Unshared, rng),
                head: SegHead::new(head_in, cfg.num_classes, rng),
            },
            Variant::Full => Decoder::Aggregated {
                dcfam: Dcfam::new(cfg, AttentionMode::Shared, rng),
                head: SegHead::new(head_in, cfg.num_classes, rng),
            },
        };
        Ok(DcSwin { cfg: cfg.clone(), encoder, decoder })
    }

    /// Per-pixel class logits at the input resolution. Inputs whose sides are
    /// not multiples of the total stride are zero-padded on the bottom/right
    /// and the logits cropped back.
    pub fn forward(&self, image: &Tensor<T>, phase: Phase) -> Tensor<T> {
        let (h, w) = (image.shape()[2], image.shape()[3]);
        let stride = self.cfg.total_stride();
        let (hp, wp) = (h.div_ceil(stride) * stride, w.div_ceil(stride) * stride);
        let mut x = image.clone();
        if hp != h {
            x = pad_axis(&x, 2, 0, hp - h);
        }
        if wp != w {
            x = pad_axis(&x, 3, 0, wp - w);
        }
        let pyramid = self.encoder.forward(&x);
        let mut logits = match &self.decoder {
            Decoder::Direct(head) => head.forward(&pyramid.st1, phase, hp, wp),
            Decoder::Aggregated { dcfam, head } => {
                let agg = dcfam.forward(&pyramid, phase);
                head.forward(&agg[0], phase, hp, wp)
            }
        };
        if hp != h {
            logits = narrow(&logits, 2, 0, h);
        }
        if wp != w {
            logits = narrow(&logits, 3, 0, w);
        }
        logits
    }

    /// Number of trainable parameter scalars.
    pub fn param_count(&self) -> usize {
        named_tensors(self).param_count()
    }

    /// Trainable parameter scalars in the encoder alone.
    pub fn encoder_param_count(&self) -> usize {
        named_tensors(&self.encoder).param_count()
    }
}

impl<T: Element> Module<T> for DcSwin<T> {
    fn named(&self, prefix: &str, out: &mut NamedTensors<T>) {
        self.encoder.named(&scoped(prefix, "encoder"), out);
        self.decoder.named(&scoped(prefix, "decoder"), out);
    }
}
