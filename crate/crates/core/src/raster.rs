//! Dense row-major rasters.
//!
//! Two flavours exist: [`Image`] holds continuous intensities with channels
//! interleaved per pixel, [`LabelMap`] holds one class code per pixel and
//! names the [`Nomenclature`] its codes come from.

use alloc::format;
use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::nomenclature::Nomenclature;

/// Continuous-intensity raster, `height × width × channels`, interleaved.
#[derive(Clone, Debug, PartialEq)]
pub struct Image {
    height: usize,
    width: usize,
    channels: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(height: usize, width: usize, channels: usize, data: Vec<f32>) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidArgument("image with zero channels".to_string()));
        }
        if data.len() != height * width * channels {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width}x{channels} image needs {} values, got {}",
                height * width * channels,
                data.len()
            )));
        }
        if let Some(i) = data.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFinite(i));
        }
        Ok(Self { height, width, channels, data })
    }

    pub fn filled(height: usize, width: usize, channels: usize, value: f32) -> Self {
        assert!(value.is_finite() && channels > 0);
        Self { height, width, channels, data: vec![value; height * width * channels] }
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn channels(&self) -> usize {
        self.channels
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn into_data(self) -> Vec<f32> {
        self.data
    }

    /// Channel values of pixel `(y, x)`.
    pub fn pixel(&self, y: usize, x: usize) -> &[f32] {
        let i = (y * self.width + x) * self.channels;
        &self.data[i..i + self.channels]
    }

    pub fn pixel_mut(&mut self, y: usize, x: usize) -> &mut [f32] {
        let i = (y * self.width + x) * self.channels;
        &mut self.data[i..i + self.channels]
    }
}

/// Class-index raster bound to a nomenclature by id.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct LabelMap {
    height: usize,
    width: usize,
    nomenclature_id: String,
    data: Vec<u8>,
}

impl LabelMap {
    /// Builds a label map, rejecting codes that are not in `nomenclature`.
    pub fn new(height: usize, width: usize, data: Vec<u8>, nomenclature: &Nomenclature) -> Result<Self> {
        if data.len() != height * width {
            return Err(Error::ShapeMismatch(format!(
                "{height}x{width} label map needs {} codes, got {}",
                height * width,
                data.len()
            )));
        }
        if let Some(&code) = data.iter().find(|&&c| !nomenclature.contains(c)) {
            return Err(Error::UnknownCode { code, nomenclature: nomenclature.id().to_string() });
        }
        Ok(Self { height, width, nomenclature_id: nomenclature.id().to_string(), data })
    }

    /// Skips code validation; for data derived from an already valid map.
    pub(crate) fn from_trusted(height: usize, width: usize, data: Vec<u8>, nomenclature_id: &str) -> Self {
        debug_assert_eq!(data.len(), height * width);
        Self { height, width, nomenclature_id: nomenclature_id.to_string(), data }
    }

    pub fn filled(height: usize, width: usize, code: u8, nomenclature: &Nomenclature) -> Result<Self> {
        Self::new(height, width, vec![code; height * width], nomenclature)
    }

    pub fn height(&self) -> usize {
        self.height
    }
    pub fn width(&self) -> usize {
        self.width
    }
    pub fn shape(&self) -> (usize, usize) {
        (self.height, self.width)
    }
    pub fn len(&self) -> usize {
        self.data.len()
    }
    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }
    pub fn data(&self) -> &[u8] {
        &self.data
    }
    pub fn into_data(self) -> Vec<u8> {
        self.data
    }
    pub fn nomenclature_id(&self) -> &str {
        &self.nomenclature_id
    }
    pub fn get(&self, y: usize, x: usize) -> u8 {
        self.data[y * self.width + x]
    }

    /// Errors unless this map is bound to `nomenclature`.
    pub fn check_bound_to(&self, nomenclature: &Nomenclature) -> Result<()> {
        if self.nomenclature_id != nomenclature.id() {
            return Err(Error::NomenclatureMismatch {
                expected: nomenclature.id().to_string(),
                found: self.nomenclature_id.clone(),
            });
        }
        Ok(())
    }
}

/// Two co-registered acquisitions with optional ground truth.
#[derive(Clone, Debug, PartialEq)]
pub struct ImagePair {
    pub pair_id: String,
    pub image1: Image,
    pub image2: Image,
    pub lcm1: Option<LabelMap>,
    pub lcm2: Option<LabelMap>,
    pub change: Option<LabelMap>,
}

impl ImagePair {
    pub fn new(
        pair_id: impl Into<String>,
        image1: Image,
        image2: Image,
        lcm1: Option<LabelMap>,
        lcm2: Option<LabelMap>,
        change: Option<LabelMap>,
    ) -> Result<Self> {
        let pair_id = pair_id.into();
        if image1.channels() != image2.channels() {
            return Err(Error::ShapeMismatch(format!(
                "pair {pair_id}: image1 has {} channels, image2 has {}",
                image1.channels(),
                image2.channels()
            )));
        }
        let shape = image1.shape();
        let check = |role: &str, s: (usize, usize)| {
            if s != shape {
                Err(Error::ShapeMismatch(format!(
                    "pair {pair_id}: {role} is {}x{}, image1 is {}x{}",
                    s.0, s.1, shape.0, shape.1
                )))
            } else {
                Ok(())
            }
        };
        check("image2", image2.shape())?;
        for (role, m) in [("lcm1", &lcm1), ("lcm2", &lcm2), ("change", &change)] {
            if let Some(m) = m {
                check(role, m.shape())?;
            }
        }
        Ok(Self { pair_id, image1, image2, lcm1, lcm2, change })
    }

    pub fn shape(&self) -> (usize, usize) {
        self.image1.shape()
    }
}

pub(crate) fn same_shape(a: (usize, usize), b: (usize, usize), what: &str) -> Result<()> {
    if a != b {
        return Err(Error::ShapeMismatch(format!(
            "{what}: {}x{} vs {}x{}",
            a.0, a.1, b.0, b.1
        )));
    }
    Ok(())
}
