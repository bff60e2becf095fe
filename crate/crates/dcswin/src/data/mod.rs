//! Dataset plumbing: the sample type, on-disk layout, per-channel
//! normalization statistics, tiling, augmentation, and the synthetic scene
//! generator.
//!
//! On-disk layout: `root/images/*.ppm` (P6 RGB), `root/labels/*.pgm` (P5,
//! class id per byte), and `root/manifest.tsv` with one `id<TAB>image<TAB>
//! label` line per sample, paths relative to the root.

pub mod augment;
pub mod pnm;
pub mod synth;
pub mod tile;

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// One image/label pair. The image is `[3, H, W]` in `[0, 1]`; the label map
/// is row-major `H·W` class ids (`ignore` values allowed where configured).
#[derive(Clone)]
pub struct Sample {
    pub id: String,
    pub image: Tensor<f32>,
    pub label: Vec<u32>,
}

impl Sample {
    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    /// Check the type invariants: shape agreement, value range, label bound.
    pub fn validate(&self, k: usize, ignore_label: Option<u32>) -> Result<()> {
        if self.image.rank() != 3 || self.image.shape()[0] != 3 {
            return Err(Error::Data(format!(
                "{}: image must be [3,H,W], got {:?}",
                self.id,
                self.image.shape()
            )));
        }
        if self.label.len() != self.height() * self.width() {
            return Err(Error::Data(format!(
                "{}: label size {} does not match {}x{}",
                self.id,
                self.label.len(),
                self.height(),
                self.width()
            )));
        }
        if !self.image.data().iter().all(|v| (0.0..=1.0).contains(v)) {
            return Err(Error::Data(format!("{}: image values outside [0,1]", self.id)));
        }
        for &l in &self.label {
            if Some(l) != ignore_label && l as usize >= k {
                return Err(Error::Data(format!(
                    "{}: label {} out of range for {} classes",
                    self.id, l, k
                )));
            }
        }
        Ok(())
    }
}

/// Per-channel normalization statistics, computed on the training split and
/// carried in checkpoints so evaluation applies the identical transform.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct NormStats {
    pub mean: [f32; 3],
    pub std: [f32; 3],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats { mean: [0.0; 3], std: [1.0; 3] }
    }

    /// Mean and standard deviation per channel over all pixels of `samples`.
    pub fn compute(samples: &[Sample]) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Data("cannot compute statistics of an empty split".into()));
        }
        let mut sum = [0.0f64; 3];
        let mut sumsq = [0.0f64; 3];
        let mut count = 0usize;
        for s in samples {
            let d = s.image.data();
            let hw = s.height() * s.width();
            for ch in 0..3 {
                for &v in &d[ch * hw..(ch + 1) * hw] {
                    sum[ch] += v as f64;
                    sumsq[ch] += (v as f64) * (v as f64);
                }
            }
            count += hw;
        }
        let mut mean = [0.0f32; 3];
        let mut std = [0.0f32; 3];
        for ch in 0..3 {
            let m = sum[ch] / count as f64;
            let var = (sumsq[ch] / count as f64 - m * m).max(0.0);
            mean[ch] = m as f32;
            // Floor keeps division safe on constant channels.
            std[ch] = var.sqrt().max(1e-6) as f32;
        }
        Ok(NormStats { mean, std })
    }

    /// `(x - mean) / std` per channel on a `[3,H,W]` image.
    pub fn normalize(&self, image: &Tensor<f32>) -> Tensor<f32> {
        assert_eq!(image.rank(), 3, "expected [3,H,W]");
        let hw = image.shape()[1] * image.shape()[2];
        let d = image.data();
        let data: Vec<f32> = (0..3)
            .flat_map(|ch| {
                let (m, s) = (self.mean[ch], self.std[ch]);
                d[ch * hw..(ch + 1) * hw].iter().map(move |&v| (v - m) / s)
            })
            .collect();
        Tensor::from_vec(image.shape().to_vec(), data)
    }
}

/// Stack normalized samples into a `[B,3,H,W]` batch tensor.
pub fn batch_images(samples: &[&Sample], stats: &NormStats) -> Tensor<f32> {
    assert!(!samples.is_empty());
    let (h, w) = (samples[0].height(), samples[0].width());
    let mut data = Vec::with_capacity(samples.len() * 3 * h * w);
    for s in samples {
        assert_eq!(
            (s.height(), s.width()),
            (h, w),
            "all samples in a batch must share extents"
        );
        data.extend_from_slice(&stats.normalize(&s.image).data());
    }
    Tensor::from_vec(vec![samples.len(), 3, h, w], data)
}

/// Concatenated label maps matching [`batch_images`] order.
pub fn batch_labels(samples: &[&Sample]) -> Vec<u32> {
    samples.iter().flat_map(|s| s.label.iter().copied()).collect()
}

/// Convert interleaved 8-bit RGB rows (PPM pixel order) to a channel-major
/// `[3,H,W]` tensor scaled to `[0,1]`.
pub fn rgb_to_image(w: usize, h: usize, rgb: &[u8]) -> Tensor<f32> {
    assert_eq!(rgb.len(), 3 * w * h);
    let mut planes = vec![0.0f32; 3 * w * h];
    for px in 0..w * h {
        for ch in 0..3 {
            planes[ch * w * h + px] = rgb[px * 3 + ch] as f32 / 255.0;
        }
    }
    Tensor::from_vec(vec![3, h, w], planes)
}

/// Load every sample listed in `root/manifest.tsv`.
pub fn load_dataset(root: &Path) -> Result<Vec<Sample>> {
    let manifest = root.join("manifest.tsv");
    let text = fs::read_to_string(&manifest)
        .map_err(|e| Error::Data(format!("{}: {}", manifest.display(), e)))?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        let line = line.trim();
        if line.is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 3 {
            return Err(Error::Data(format!(
                "{}:{}: expected 3 tab-separated columns (id, image, label), got {}",
                manifest.display(),
                lineno + 1,
                cols.len()
            )));
        }
        let (id, image_rel, label_rel) = (cols[0], cols[1], cols[2]);
        let (iw, ih, rgb) = pnm::read_ppm(&root.join(image_rel))?;
        let (lw, lh, gray) = pnm::read_pgm(&root.join(label_rel))?;
        if (iw, ih) != (lw, lh) {
            return Err(Error::Data(format!(
                "{}: image {}x{} and label {}x{} differ",
                id, iw, ih, lw, lh
            )));
        }
        out.push(Sample {
            id: id.to_string(),
            image: rgb_to_image(iw, ih, &rgb),
            label: gray.into_iter().map(u32::from).collect(),
        });
    }
    if out.is_empty() {
        return Err(Error::Data(format!("{}: no samples listed", manifest.display())));
    }
    Ok(out)
}

/// Write samples under `root` in the manifest layout. Labels above 255
/// cannot be represented in a PGM byte and are rejected.
pub fn save_dataset(root: &Path, samples: &[Sample]) -> Result<()> {
    fs::create_dir_all(root.join("images"))?;
    fs::create_dir_all(root.join("labels"))?;
    let mut manifest = String::new();
    for s in samples {
        let (h, w) = (s.height(), s.width());
        let d = s.image.data();
        let hw = h * w;
        let mut rgb = vec![0u8; 3 * hw];
        for px in 0..hw {
            for ch in 0..3 {
                rgb[px * 3 + ch] = (d[ch * hw + px].clamp(0.0, 1.0) * 255.0).round() as u8;
            }
        }
        let mut gray = Vec::with_capacity(hw);
        for &l in &s.label {
            if l > 255 {
                return Err(Error::Data(format!(
                    "{}: label {} does not fit in a PGM byte",
                    s.id, l
                )));
            }
            gray.push(l as u8);
        }
        let image_rel = format!("images/{}.ppm", s.id);
        let label_rel = format!("labels/{}.pgm", s.id);
        pnm::write_ppm(&root.join(&image_rel), w, h, &rgb)?;
        pnm::write_pgm(&root.join(&label_rel), w, h, &gray)?;
        manifest.push_str(&format!("{}\t{}\t{}\n", s.id, image_rel, label_rel));
    }
    fs::write(root.join("manifest.tsv"), manifest)?;
    Ok(())
}
