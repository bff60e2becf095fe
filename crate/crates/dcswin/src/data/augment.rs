//! Train-time geometric augmentation: horizontal/vertical flips and 90°
//! rotations, applied identically to image and label.

use rand::Rng;

use super::Sample;
use crate::tensor::Tensor;

/// The eight symmetries of the square.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Augment {
    Identity,
    FlipH,
    FlipV,
    Rot90,
    Rot180,
    Rot270,
    Rot90FlipH,
    Rot270FlipH,
}

impl Augment {
    pub const ALL: [Augment; 8] = [
        Augment::Identity,
        Augment::FlipH,
        Augment::FlipV,
        Augment::Rot90,
        Augment::Rot180,
        Augment::Rot270,
        Augment::Rot90FlipH,
        Augment::Rot270FlipH,
    ];

    /// Draw one of the eight symmetries uniformly.
    pub fn sample(rng: &mut impl Rng) -> Self {
        Self::ALL[rng.gen_range(0..Self::ALL.len())]
    }

    /// Output extents for an `h`×`w` input.
    pub fn out_dims(self, h: usize, w: usize) -> (usize, usize) {
        match self {
            Augment::Identity | Augment::FlipH | Augment::FlipV | Augment::Rot180 => (h, w),
            _ => (w, h),
        }
    }

    /// Source coordinate that lands at output `(y, x)`.
    fn source(self, h: usize, w: usize, y: usize, x: usize) -> (usize, usize) {
        match self {
            Augment::Identity => (y, x),
            Augment::FlipH => (y, w - 1 - x),
            Augment::FlipV => (h - 1 - y, x),
            Augment::Rot180 => (h - 1 - y, w - 1 - x),
            // Clockwise quarter turn: output (y, x) reads input (h-1-x, y)
            // with output dims (w, h).
            Augment::Rot90 => (h - 1 - x, y),
            Augment::Rot270 => (x, w - 1 - y),
            Augment::Rot90FlipH => (x, y),                  // transpose
            Augment::Rot270FlipH => (h - 1 - x, w - 1 - y), // anti-transpose
        }
    }
}

/// Apply a symmetry to a sample; image and label move through the same
/// index map, so per-pixel alignment is preserved exactly.
pub fn apply(sample: &Sample, aug: Augment) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    let (oh, ow) = aug.out_dims(h, w);
    let src = sample.image.data();
    let hw = h * w;
    let mut image = vec![0.0f32; 3 * oh * ow];
    let mut label = vec![0u32; oh * ow];
    for y in 0..oh {
        for x in 0..ow {
            let (sy, sx) = aug.source(h, w, y, x);
            let spx = sy * w + sx;
            label[y * ow + x] = sample.label[spx];
            for ch in 0..3 {
                image[ch * oh * ow + y * ow + x] = src[ch * hw + spx];
            }
        }
    }
    Sample {
        id: sample.id.clone(),
        image: Tensor::from_vec(vec![3, oh, ow], image),
        label,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_scene;

    fn histogram(label: &[u32], k: usize) -> Vec<usize> {
        let mut h = vec![0usize; k];
        for &l in label {
            h[l as usize] += 1;
        }
        h
    }

    #[test]
    fn flips_are_involutions() {
        let s = synth_scene(0, 32, 3);
        for aug in [Augment::FlipH, Augment::FlipV, Augment::Rot180] {
            let twice = apply(&apply(&s, aug), aug);
            assert_eq!(twice.label, s.label, "{:?}", aug);
            assert_eq!(twice.image.to_vec(), s.image.to_vec(), "{:?}", aug);
        }
    }

    #[test]
    fn quarter_turns_compose_to_identity() {
        let s = synth_scene(1, 32, 3);
        let mut t = s.clone();
        for _ in 0..4 {
            t = apply(&t, Augment::Rot90);
        }
        assert_eq!(t.label, s.label);
        let back = apply(&apply(&s, Augment::Rot90), Augment::Rot270);
        assert_eq!(back.label, s.label);
    }

    #[test]
    fn class_histogram_preserved() {
        let s = synth_scene(2, 32, 4);
        let base = histogram(&s.label, 4);
        for aug in Augment::ALL {
            assert_eq!(histogram(&apply(&s, aug).label, 4), base, "{:?}", aug);
        }
    }

    #[test]
    fn image_and_label_move_together() {
        // Check via an index oracle: mark one distinctive pixel and verify
        // image and label land on the same output coordinate.
        let mut s = synth_scene(3, 16, 2);
        s.label[5 * 16 + 3] = 1;
        {
            let mut d = s.image.data_mut();
            d[5 * 16 + 3] = -7.0; // channel 0 marker
        }
        for aug in Augment::ALL {
            let t = apply(&s, aug);
            let (_, ow) = aug.out_dims(16, 16);
            let img = t.image.to_vec();
            let marker = img.iter().position(|&v| v == -7.0).unwrap();
            assert!(marker < t.label.len());
            assert_eq!(
                t.label[marker],
                1,
                "{:?}: marker at ({}, {}) separated from its label",
                aug,
                marker / ow,
                marker % ow
            );
        }
    }

    #[test]
    fn non_square_samples_swap_extents() {
        use crate::tensor::Tensor;
        let s = Sample {
            id: "r".into(),
            image: Tensor::from_vec(vec![3, 2, 4], (0..24).map(|v| v as f32).collect()),
            label: (0..8).map(|v| v % 2).collect(),
        };
        let t = apply(&s, Augment::Rot90);
        assert_eq!(t.image.shape(), &[3, 4, 2]);
        assert_eq!(t.label.len(), 8);
    }
}
