//! PNG and TIFF rasters.

use std::path::Path;

use image::{DynamicImage, GrayImage, ImageBuffer, Luma, LumaA, Rgb, Rgba};
use semcd_core::nomenclature::Nomenclature;
use semcd_core::raster::{Image, LabelMap};

use crate::error::{Error, Result};

fn decode(path: &Path) -> Result<DynamicImage> {
    image::ImageReader::open(path)
        .map_err(crate::error::io(path))?
        .with_guessed_format()
        .map_err(crate::error::io(path))?
        .decode()
        .map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn format_err(path: &Path, reason: impl Into<String>) -> Error {
    Error::Format { path: path.to_path_buf(), reason: reason.into() }
}

/// Reads an 8 or 16 bit image; sample values are kept as they are stored.
pub fn read_image(path: &Path) -> Result<Image> {
    let img = decode(path)?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    let c = usize::from(img.color().channel_count());
    let data: Vec<f32> = match img {
        DynamicImage::ImageLuma8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLumaA8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageRgb8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageRgba8(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLuma16(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageLumaA16(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageRgb16(b) => b.into_raw().into_iter().map(f32::from).collect(),
        DynamicImage::ImageRgba16(b) => b.into_raw().into_iter().map(f32::from).collect(),
        other => return Err(format_err(path, format!("unsupported sample type {:?}", other.color()))),
    };
    Ok(Image::new(h, w, c, data)?)
}

/// Reads a single-channel 8-bit label raster and binds it to `nomenclature`.
pub fn read_labels(path: &Path, nomenclature: &Nomenclature) -> Result<LabelMap> {
    let img = decode(path)?;
    let DynamicImage::ImageLuma8(b) = img else {
        return Err(format_err(path, format!("label rasters must be single-channel 8-bit, found {:?}", img.color())));
    };
    let (w, h) = (b.width() as usize, b.height() as usize);
    Ok(LabelMap::new(h, w, b.into_raw(), nomenclature)?)
}

fn save(path: &Path, img: DynamicImage) -> Result<()> {
    img.save(path).map_err(|source| Error::Image { path: path.to_path_buf(), source })
}

fn buffer<P: image::Pixel>(path: &Path, w: u32, h: u32, raw: Vec<P::Subpixel>) -> Result<ImageBuffer<P, Vec<P::Subpixel>>> {
    ImageBuffer::from_raw(w, h, raw).ok_or_else(|| format_err(path, "buffer does not match the raster size"))
}

/// Writes an image with integral samples, 8-bit when every value fits and
/// 16-bit otherwise. The format follows the extension.
pub fn write_image(path: &Path, img: &Image) -> Result<()> {
    let (h, w) = img.shape();
    let (w, h) = (w as u32, h as u32);
    let d = img.data();
    if let Some(i) = d.iter().position(|&v| !(0.0..=65535.0).contains(&v) || v.fract() != 0.0) {
        return Err(format_err(path, format!("sample {i} ({}) is not an integer in 0..=65535", d[i])));
    }
    let dynamic = if d.iter().all(|&v| v <= 255.0) {
        let raw: Vec<u8> = d.iter().map(|&v| v as u8).collect();
        match img.channels() {
            1 => DynamicImage::ImageLuma8(buffer::<Luma<u8>>(path, w, h, raw)?),
            2 => DynamicImage::ImageLumaA8(buffer::<LumaA<u8>>(path, w, h, raw)?),
            3 => DynamicImage::ImageRgb8(buffer::<Rgb<u8>>(path, w, h, raw)?),
            4 => DynamicImage::ImageRgba8(buffer::<Rgba<u8>>(path, w, h, raw)?),
            c => return Err(format_err(path, format!("cannot store {c} channels"))),
        }
    } else {
        let raw: Vec<u16> = d.iter().map(|&v| v as u16).collect();
        match img.channels() {
            1 => DynamicImage::ImageLuma16(buffer::<Luma<u16>>(path, w, h, raw)?),
            2 => DynamicImage::ImageLumaA16(buffer::<LumaA<u16>>(path, w, h, raw)?),
            3 => DynamicImage::ImageRgb16(buffer::<Rgb<u16>>(path, w, h, raw)?),
            4 => DynamicImage::ImageRgba16(buffer::<Rgba<u16>>(path, w, h, raw)?),
            c => return Err(format_err(path, format!("cannot store {c} channels"))),
        }
    };
    save(path, dynamic)
}

/// Writes raw 8-bit codes as a single-channel raster.
pub fn write_codes(path: &Path, height: usize, width: usize, codes: &[u8]) -> Result<()> {
    let b: GrayImage = buffer::<Luma<u8>>(path, width as u32, height as u32, codes.to_vec())?;
    save(path, DynamicImage::ImageLuma8(b))
}

pub fn write_labels(path: &Path, map: &LabelMap) -> Result<()> {
    write_codes(path, map.height(), map.width(), map.data())
}
