//! Cropping large scenes into fixed-size tiles and stitching per-tile logits
//! back together, averaging wherever tiles overlap.

use super::Sample;
use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Tile geometry. `stride == tile` means non-overlapping; smaller strides
/// overlap for smoother stitched inference.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileSpec {
    pub tile: usize,
    pub stride: usize,
}

impl TileSpec {
    pub fn new(tile: usize, stride: usize) -> Result<Self> {
        if tile == 0 || stride == 0 || stride > tile {
            return Err(Error::Invalid(format!(
                "tile spec needs 0 < stride <= tile, got tile {} stride {}",
                tile, stride
            )));
        }
        Ok(TileSpec { tile, stride })
    }
}

/// Window starts covering `extent`: multiples of `stride`, plus a final
/// clamped start so the last window ends exactly at `extent`.
fn axis_positions(extent: usize, tile: usize, stride: usize) -> Vec<usize> {
    assert!(extent >= tile);
    let mut out = Vec::new();
    let mut y = 0;
    loop {
        if y + tile >= extent {
            out.push(extent - tile);
            break;
        }
        out.push(y);
        y += stride;
    }
    out
}

/// Row-major tile origins `(y, x)` for an `h`×`w` scene.
pub fn tile_positions(h: usize, w: usize, spec: TileSpec) -> Result<Vec<(usize, usize)>> {
    if h < spec.tile || w < spec.tile {
        return Err(Error::Invalid(format!(
            "scene {}x{} smaller than tile {}",
            h, w, spec.tile
        )));
    }
    let ys = axis_positions(h, spec.tile, spec.stride);
    let xs = axis_positions(w, spec.tile, spec.stride);
    let mut out = Vec::with_capacity(ys.len() * xs.len());
    for &y in &ys {
        for &x in &xs {
            out.push((y, x));
        }
    }
    Ok(out)
}

/// Crop one tile out of a sample.
pub fn crop(sample: &Sample, y0: usize, x0: usize, tile: usize) -> Sample {
    let (h, w) = (sample.height(), sample.width());
    assert!(y0 + tile <= h && x0 + tile <= w, "crop out of bounds");
    let src = sample.image.data();
    let hw = h * w;
    let mut image = vec![0.0f32; 3 * tile * tile];
    let mut label = vec![0u32; tile * tile];
    for ty in 0..tile {
        for ch in 0..3 {
            let src_row = ch * hw + (y0 + ty) * w + x0;
            let dst_row = ch * tile * tile + ty * tile;
            image[dst_row..dst_row + tile].copy_from_slice(&src[src_row..src_row + tile]);
        }
        let src_row = (y0 + ty) * w + x0;
        label[ty * tile..(ty + 1) * tile]
            .copy_from_slice(&sample.label[src_row..src_row + tile]);
    }
    Sample {
        id: format!("{}+{}+{}", sample.id, y0, x0),
        image: Tensor::from_vec(vec![3, tile, tile], image),
        label,
    }
}

/// Cut a sample into row-major tiles.
pub fn tile_sample(sample: &Sample, spec: TileSpec) -> Result<Vec<Sample>> {
    Ok(tile_positions(sample.height(), sample.width(), spec)?
        .into_iter()
        .map(|(y, x)| crop(sample, y, x, spec.tile))
        .collect())
}

/// Accumulates per-tile class logits into a full-scene map; overlapping
/// contributions average.
pub struct Stitcher {
    k: usize,
    h: usize,
    w: usize,
    sum: Vec<f64>,
    weight: Vec<f64>,
}

impl Stitcher {
    pub fn new(k: usize, h: usize, w: usize) -> Self {
        Stitcher {
            k,
            h,
            w,
            sum: vec![0.0; k * h * w],
            weight: vec![0.0; h * w],
        }
    }

    /// Add one tile's logits (`[K, tile, tile]` or `[1, K, tile, tile]`) at
    /// origin `(y0, x0)`.
    pub fn add(&mut self, y0: usize, x0: usize, logits: &Tensor<f32>) {
        let shape = logits.shape().to_vec();
        let (k, th, tw) = match shape.as_slice() {
            [k, th, tw] => (*k, *th, *tw),
            [1, k, th, tw] => (*k, *th, *tw),
            other => panic!("stitcher expects [K,h,w] logits, got {:?}", other),
        };
        assert_eq!(k, self.k, "class count mismatch");
        assert!(y0 + th <= self.h && x0 + tw <= self.w, "tile out of bounds");
        let d = logits.data();
        for ty in 0..th {
            for tx in 0..tw {
                let px = (y0 + ty) * self.w + x0 + tx;
                self.weight[px] += 1.0;
                for c in 0..k {
                    self.sum[c * self.h * self.w + px] += d[(c * th + ty) * tw + tx] as f64;
                }
            }
        }
    }

    /// Averaged logits; errors if any pixel was never covered.
    pub fn logits(&self) -> Result<Tensor<f32>> {
        if let Some(px) = self.weight.iter().position(|&w| w == 0.0) {
            return Err(Error::Invalid(format!(
                "pixel ({}, {}) not covered by any tile",
                px / self.w,
                px % self.w
            )));
        }
        let hw = self.h * self.w;
        let data: Vec<f32> = (0..self.k * hw)
            .map(|i| (self.sum[i] / self.weight[i % hw]) as f32)
            .collect();
        Ok(Tensor::from_vec(vec![self.k, self.h, self.w], data))
    }

    /// Argmax class map of the averaged logits.
    pub fn labels(&self) -> Result<Vec<u32>> {
        let logits = self.logits()?;
        let d = logits.data();
        let hw = self.h * self.w;
        Ok((0..hw)
            .map(|px| {
                let (mut best, mut best_v) = (0u32, f32::NEG_INFINITY);
                for c in 0..self.k {
                    if d[c * hw + px] > best_v {
                        best_v = d[c * hw + px];
                        best = c as u32;
                    }
                }
                best
            })
            .collect())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::synth_scene;

    #[test]
    fn position_counts_follow_the_grid() {
        let spec = TileSpec::new(1024, 1024).unwrap();
        assert_eq!(tile_positions(2048, 2048, spec).unwrap().len(), 4);
        assert_eq!(tile_positions(1024, 1024, spec).unwrap().len(), 1);
        // Ragged extent gets a clamped final window.
        let spec = TileSpec::new(64, 64).unwrap();
        let pos = tile_positions(100, 64, spec).unwrap();
        assert_eq!(pos, vec![(0, 0), (36, 0)]);
    }

    #[test]
    fn invalid_specs_rejected() {
        assert!(TileSpec::new(0, 1).is_err());
        assert!(TileSpec::new(8, 0).is_err());
        assert!(TileSpec::new(8, 9).is_err());
        let spec = TileSpec::new(128, 128).unwrap();
        assert!(tile_positions(64, 128, spec).is_err());
    }

    #[test]
    fn tiles_partition_label_map_at_full_stride() {
        let scene = synth_scene(0, 64, 3);
        let spec = TileSpec::new(32, 32).unwrap();
        let tiles = tile_sample(&scene, spec).unwrap();
        assert_eq!(tiles.len(), 4);
        // Reassemble labels and compare with the original.
        let mut rebuilt = vec![u32::MAX; 64 * 64];
        for ((y0, x0), t) in tile_positions(64, 64, spec).unwrap().iter().zip(&tiles) {
            for ty in 0..32 {
                for tx in 0..32 {
                    rebuilt[(y0 + ty) * 64 + x0 + tx] = t.label[ty * 32 + tx];
                }
            }
        }
        assert_eq!(rebuilt, scene.label);
    }

    #[test]
    fn stitching_averages_overlaps() {
        let mut st = Stitcher::new(2, 4, 6);
        // Two overlapping tiles with constant logits 1 and 3; the overlap
        // column band must average to 2.
        let a = Tensor::from_vec(vec![2, 4, 4], vec![1.0f32; 32]);
        let b = Tensor::from_vec(vec![2, 4, 4], vec![3.0f32; 32]);
        st.add(0, 0, &a);
        st.add(0, 2, &b);
        let out = st.logits().unwrap();
        let d = out.to_vec();
        assert_eq!(d[0], 1.0); // only tile a
        assert_eq!(d[2], 2.0); // overlap
        assert_eq!(d[5], 3.0); // only tile b
    }

    #[test]
    fn uncovered_pixels_error() {
        let mut st = Stitcher::new(2, 8, 8);
        st.add(0, 0, &Tensor::from_vec(vec![2, 4, 4], vec![0.0f32; 32]));
        assert!(st.logits().is_err());
    }

    #[test]
    fn per_pixel_prediction_commutes_with_tiling() {
        // For a per-pixel map (logits = one-hot of a pure function of the
        // pixel), stitch(tile(x)) equals the direct map.
        let scene = synth_scene(1, 64, 4);
        let spec = TileSpec::new(32, 16).unwrap(); // overlapping
        let mut st = Stitcher::new(4, 64, 64);
        for (y0, x0) in tile_positions(64, 64, spec).unwrap() {
            let t = crop(&scene, y0, x0, 32);
            let mut logits = vec![0.0f32; 4 * 32 * 32];
            for (px, &l) in t.label.iter().enumerate() {
                logits[(l as usize) * 32 * 32 + px] = 1.0;
            }
            st.add(y0, x0, &Tensor::from_vec(vec![4, 32, 32], logits));
        }
        assert_eq!(st.labels().unwrap(), scene.label);
    }
}
