//! Cutting large rasters into fixed-size tiles and stitching tile outputs
//! back together.

use alloc::format;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::raster::{same_shape, Image, LabelMap};

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum PadMode {
    /// Mirror without repeating the edge pixel. Needs `pad < dim`.
    Reflect,
    /// Zero intensities; label code 0.
    Zero,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TileSpec {
    pub tile_size: usize,
    pub stride: usize,
    pub pad_mode: PadMode,
}

impl Default for TileSpec {
    fn default() -> Self {
        Self { tile_size: 512, stride: 512, pad_mode: PadMode::Reflect }
    }
}

impl TileSpec {
    pub fn new(tile_size: usize, stride: usize, pad_mode: PadMode) -> Result<Self> {
        let s = Self { tile_size, stride, pad_mode };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        if self.stride == 0 || self.stride > self.tile_size {
            return Err(Error::InvalidTileSpec(format!(
                "need 0 < stride <= tile_size, got stride {} tile {}",
                self.stride, self.tile_size
            )));
        }
        Ok(())
    }

    /// Tile origins along one axis. The last tile is the first one reaching
    /// the end of the axis.
    pub fn axis_origins(&self, dim: usize) -> Vec<usize> {
        let mut out = vec![0];
        while out[out.len() - 1] + self.tile_size < dim {
            let next = out[out.len() - 1] + self.stride;
            out.push(next);
        }
        out
    }

    /// Row-major `(y, x)` origins covering a `height × width` raster.
    pub fn origins(&self, height: usize, width: usize) -> Result<Vec<(usize, usize)>> {
        self.validate()?;
        for dim in [height, width] {
            if dim == 0 {
                return Err(Error::InvalidArgument("empty raster".into()));
            }
            let pad = self.axis_origins(dim).last().unwrap() + self.tile_size - dim;
            if self.pad_mode == PadMode::Reflect && pad > 0 && pad >= dim {
                return Err(Error::TileLargerThanRaster { tile: self.tile_size, dim });
            }
        }
        let ys = self.axis_origins(height);
        let xs = self.axis_origins(width);
        Ok(ys.iter().flat_map(|&y| xs.iter().map(move |&x| (y, x))).collect())
    }
}

fn reflect(i: usize, dim: usize) -> usize {
    if i < dim {
        i
    } else {
        2 * (dim - 1) - i
    }
}

/// Copies a `tile × tile × channels` window starting at `origin` out of an
/// interleaved `height × width × channels` buffer, padding past the edges.
/// The caller guarantees the pad fits the mode (see [`TileSpec::origins`]).
pub fn extract_window<T: Copy + Default>(
    data: &[T],
    height: usize,
    width: usize,
    channels: usize,
    origin: (usize, usize),
    tile: usize,
    pad_mode: PadMode,
) -> Vec<T> {
    let mut out = vec![T::default(); tile * tile * channels];
    for ty in 0..tile {
        let y = origin.0 + ty;
        let sy = match (y < height, pad_mode) {
            (true, _) => y,
            (false, PadMode::Reflect) => reflect(y, height),
            (false, PadMode::Zero) => continue,
        };
        for tx in 0..tile {
            let x = origin.1 + tx;
            let sx = match (x < width, pad_mode) {
                (true, _) => x,
                (false, PadMode::Reflect) => reflect(x, width),
                (false, PadMode::Zero) => continue,
            };
            let src = (sy * width + sx) * channels;
            let dst = (ty * tile + tx) * channels;
            out[dst..dst + channels].copy_from_slice(&data[src..src + channels]);
        }
    }
    out
}

/// Spatially aligned tiles cut from one group of rasters.
#[derive(Clone, Debug, PartialEq)]
pub struct TileGroup {
    pub origin: (usize, usize),
    pub images: Vec<Image>,
    pub labels: Vec<LabelMap>,
}

/// Tiles every raster of a group with identical origins.
pub fn tile(images: &[&Image], labels: &[&LabelMap], spec: &TileSpec) -> Result<Vec<TileGroup>> {
    let shape = images
        .first()
        .map(|i| i.shape())
        .or_else(|| labels.first().map(|l| l.shape()))
        .ok_or_else(|| Error::InvalidArgument("empty raster group".into()))?;
    for i in images {
        same_shape(shape, i.shape(), "tile group")?;
    }
    for l in labels {
        same_shape(shape, l.shape(), "tile group")?;
    }
    let t = spec.tile_size;
    let origins = spec.origins(shape.0, shape.1)?;
    let mut out = Vec::with_capacity(origins.len());
    for origin in origins {
        let imgs = images
            .iter()
            .map(|im| {
                let d = extract_window(im.data(), shape.0, shape.1, im.channels(), origin, t, spec.pad_mode);
                Image::new(t, t, im.channels(), d)
            })
            .collect::<Result<Vec<_>>>()?;
        let labs = labels
            .iter()
            .map(|l| {
                let d = extract_window(l.data(), shape.0, shape.1, 1, origin, t, spec.pad_mode);
                LabelMap::from_trusted(t, t, d, l.nomenclature_id())
            })
            .collect();
        out.push(TileGroup { origin, images: imgs, labels: labs });
    }
    Ok(out)
}

/// Accumulates planar `channels × tile × tile` tile outputs into a
/// full-resolution buffer and averages overlapping contributions.
#[derive(Clone, Debug)]
pub struct Stitcher {
    channels: usize,
    height: usize,
    width: usize,
    sum: Vec<f64>,
    count: Vec<u32>,
}

impl Stitcher {
    pub fn new(channels: usize, height: usize, width: usize) -> Self {
        Self { channels, height, width, sum: vec![0.0; channels * height * width], count: vec![0; height * width] }
    }

    /// Adds a planar tile whose top-left corner sits at `origin`. Parts of
    /// the tile outside the raster are dropped.
    pub fn add(&mut self, origin: (usize, usize), tile: usize, values: &[f32]) -> Result<()> {
        if values.len() != self.channels * tile * tile {
            return Err(Error::ShapeMismatch(format!(
                "tile needs {} values, got {}",
                self.channels * tile * tile,
                values.len()
            )));
        }
        let hs = tile.min(self.height.saturating_sub(origin.0));
        let ws = tile.min(self.width.saturating_sub(origin.1));
        let plane = self.height * self.width;
        for ty in 0..hs {
            let y = origin.0 + ty;
            for tx in 0..ws {
                let x = origin.1 + tx;
                let p = y * self.width + x;
                self.count[p] += 1;
                for c in 0..self.channels {
                    self.sum[c * plane + p] += f64::from(values[(c * tile + ty) * tile + tx]);
                }
            }
        }
        Ok(())
    }

    /// Averaged planar buffer. Errors if some pixel received no tile.
    pub fn finish(self) -> Result<Vec<f32>> {
        if let Some(p) = self.count.iter().position(|&c| c == 0) {
            return Err(Error::InvalidArgument(format!("pixel {p} not covered by any tile")));
        }
        let plane = self.height * self.width;
        Ok(self
            .sum
            .iter()
            .enumerate()
            .map(|(i, s)| (s / f64::from(self.count[i % plane])) as f32)
            .collect())
    }
}

/// Interleaved `h × w × c` to planar `c × h × w`.
pub fn to_planar<T: Copy + Default>(data: &[T], height: usize, width: usize, channels: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    let plane = height * width;
    for p in 0..plane {
        for c in 0..channels {
            out[c * plane + p] = data[p * channels + c];
        }
    }
    out
}

/// Planar `c × h × w` to interleaved `h × w × c`.
pub fn to_interleaved<T: Copy + Default>(data: &[T], height: usize, width: usize, channels: usize) -> Vec<T> {
    let mut out = vec![T::default(); data.len()];
    let plane = height * width;
    for p in 0..plane {
        for c in 0..channels {
            out[p * channels + c] = data[c * plane + p];
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nomenclature::Nomenclature;
    use proptest::prelude::*;

    #[test]
    fn exact_division() {
        let spec = TileSpec::new(512, 512, PadMode::Zero).unwrap();
        assert_eq!(spec.origins(1024, 1024).unwrap(), vec![(0, 0), (0, 512), (512, 0), (512, 512)]);
    }

    #[test]
    fn one_extra_row_needs_a_padded_tile() {
        let spec = TileSpec::new(512, 512, PadMode::Reflect).unwrap();
        let o = spec.origins(513, 512).unwrap();
        assert_eq!(o, vec![(0, 0), (512, 0)]);
        // second tile holds 1 real row and 511 padded rows
        assert_eq!(o[1].0 + 512 - 513, 511);
    }

    #[test]
    fn invalid_specs() {
        assert!(TileSpec::new(4, 0, PadMode::Zero).is_err());
        assert!(TileSpec::new(4, 5, PadMode::Zero).is_err());
        let spec = TileSpec::new(16, 16, PadMode::Reflect).unwrap();
        assert_eq!(spec.origins(5, 5), Err(Error::TileLargerThanRaster { tile: 16, dim: 5 }));
        let zero = TileSpec::new(16, 16, PadMode::Zero).unwrap();
        assert_eq!(zero.origins(5, 5).unwrap(), vec![(0, 0)]);
    }

    #[test]
    fn reflect_and_zero_padding() {
        let data = [1u8, 2, 3, 4, 5, 6];
        let r = extract_window(&data, 2, 3, 1, (0, 1), 3, PadMode::Reflect);
        assert_eq!(r, vec![2, 3, 2, 5, 6, 5, 2, 3, 2]);
        let z = extract_window(&data, 1, 3, 1, (0, 1), 2, PadMode::Zero);
        assert_eq!(z, vec![2, 3, 0, 0]);
    }

    #[test]
    fn label_and_image_tiles_share_origins() {
        let l1 = Nomenclature::l1();
        let im = Image::new(6, 6, 2, (0..72).map(|v| v as f32).collect()).unwrap();
        let lab = LabelMap::new(6, 6, (0..36).map(|v| (v % 6) as u8).collect(), &l1).unwrap();
        let spec = TileSpec::new(4, 2, PadMode::Reflect).unwrap();
        let tiles = tile(&[&im], &[&lab], &spec).unwrap();
        assert_eq!(tiles.len(), 4);
        for t in &tiles {
            let (y, x) = t.origin;
            assert_eq!(t.images[0].pixel(0, 0), im.pixel(y, x));
            assert_eq!(t.labels[0].get(0, 0), lab.get(y, x));
        }
    }

    #[test]
    fn overlap_averaging_on_a_line() {
        // 1x6 raster, tile 4 stride 2: origins 0 and 2; first tile scores 1,
        // second tile scores 3. Overlap columns 2,3 average to 2.
        let mut s = Stitcher::new(1, 1, 6);
        let spec = TileSpec::new(4, 2, PadMode::Zero).unwrap();
        assert_eq!(spec.axis_origins(6), vec![0, 2]);
        let mut t1 = vec![0.0f32; 16];
        t1[..4].copy_from_slice(&[1.0; 4]);
        let mut t2 = vec![0.0f32; 16];
        t2[..4].copy_from_slice(&[3.0; 4]);
        s.add((0, 0), 4, &t1).unwrap();
        s.add((0, 2), 4, &t2).unwrap();
        assert_eq!(s.finish().unwrap(), vec![1.0, 1.0, 2.0, 2.0, 3.0, 3.0]);
    }

    proptest! {
        #[test]
        fn tile_then_stitch_is_identity(
            h in 1usize..40, w in 1usize..40, c in 1usize..4,
            tile_size in 1usize..16, stride_frac in 1usize..=4, zero in any::<bool>(),
        ) {
            let stride = (tile_size * stride_frac / 4).max(1);
            let mode = if zero { PadMode::Zero } else { PadMode::Reflect };
            let spec = TileSpec::new(tile_size, stride, mode).unwrap();
            let data: Vec<f32> = (0..h * w * c).map(|v| v as f32).collect();
            let im = Image::new(h, w, c, data.clone()).unwrap();
            let tiles = match tile(&[&im], &[], &spec) {
                Ok(t) => t,
                Err(Error::TileLargerThanRaster { .. }) => return Ok(()),
                Err(e) => panic!("{e}"),
            };
            let mut st = Stitcher::new(c, h, w);
            for t in &tiles {
                let planar = to_planar(t.images[0].data(), tile_size, tile_size, c);
                st.add(t.origin, tile_size, &planar).unwrap();
            }
            let back = to_interleaved(&st.finish().unwrap(), h, w, c);
            prop_assert_eq!(back, data);
        }
    }
}
