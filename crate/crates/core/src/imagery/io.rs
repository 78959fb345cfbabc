//! PNG and PGM/PPM reading and writing.

use std::io::Cursor;
use std::path::Path;

use image::{DynamicImage, ImageBuffer, ImageFormat, Luma, Rgba};

use super::{BinaryMask, Image};
use crate::error::{invalid, Error, Result};

/// Reads an 8- or 16-bit grayscale or color raster, normalized to `[0,1]`
/// by the maximum sample value of its bit depth. Alpha is dropped.
pub fn read_image(path: impl AsRef<Path>) -> Result<Image> {
    let path = path.as_ref();
    let dynamic = image::open(path).map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(from_dynamic(dynamic))
}

pub fn decode_image(bytes: &[u8]) -> Result<Image> {
    let dynamic = image::load_from_memory(bytes).map_err(|e| Error::Format(e.to_string()))?;
    Ok(from_dynamic(dynamic))
}

fn from_dynamic(dynamic: DynamicImage) -> Image {
    let (w, h) = (dynamic.width() as usize, dynamic.height() as usize);
    let (channels, data): (usize, Vec<f64>) = match dynamic {
        DynamicImage::ImageLuma8(b) => (
            1,
            b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
        ),
        DynamicImage::ImageLumaA8(_) => {
            let b = dynamic.to_luma8();
            (
                1,
                b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            )
        }
        DynamicImage::ImageLuma16(b) => (
            1,
            b.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        DynamicImage::ImageLumaA16(_) => {
            let b = dynamic.to_luma16();
            (
                1,
                b.into_raw()
                    .into_iter()
                    .map(|v| v as f64 / 65535.0)
                    .collect(),
            )
        }
        DynamicImage::ImageRgb16(b) => (
            3,
            b.into_raw()
                .into_iter()
                .map(|v| v as f64 / 65535.0)
                .collect(),
        ),
        DynamicImage::ImageRgba16(_) => {
            let b = dynamic.to_rgb16();
            (
                3,
                b.into_raw()
                    .into_iter()
                    .map(|v| v as f64 / 65535.0)
                    .collect(),
            )
        }
        other => {
            let b = other.to_rgb8();
            (
                3,
                b.into_raw().into_iter().map(|v| v as f64 / 255.0).collect(),
            )
        }
    };
    Image::from_vec(w, h, channels, data).expect("decoded buffers are well formed")
}

/// Reads a mask: any pixel whose first channel exceeds one half is set.
pub fn read_mask(path: impl AsRef<Path>) -> Result<BinaryMask> {
    Ok(BinaryMask::above(&read_image(path)?.intensity(), 0.5))
}

fn quantize(v: f64, max: f64) -> f64 {
    (v.clamp(0.0, 1.0) * max).round()
}

fn to_dynamic8(img: &Image) -> Result<DynamicImage> {
    let (w, h) = (img.width() as u32, img.height() as u32);
    let raw: Vec<u8> = img
        .data()
        .iter()
        .map(|&v| quantize(v, 255.0) as u8)
        .collect();
    match img.channels() {
        1 => Ok(DynamicImage::ImageLuma8(
            ImageBuffer::from_raw(w, h, raw).unwrap(),
        )),
        3 => Ok(DynamicImage::ImageRgb8(
            ImageBuffer::from_raw(w, h, raw).unwrap(),
        )),
        4 => Ok(DynamicImage::ImageRgba8(
            ImageBuffer::from_raw(w, h, raw).unwrap(),
        )),
        c => Err(invalid(format!("cannot write a {c}-channel image"))),
    }
}

fn save(dynamic: &DynamicImage, path: &Path) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    dynamic.save(path).map_err(|source| Error::Codec {
        path: path.to_path_buf(),
        source,
    })
}

/// Writes an 8-bit image; samples are quantized by `round(v * 255)`. The
/// container follows the extension (`.png`, `.pgm`, `.ppm`).
pub fn write_image8(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    save(&to_dynamic8(img)?, path.as_ref())
}

/// Writes a single-channel 16-bit PNG, `round(v * 65535)`.
pub fn write_gray16(path: impl AsRef<Path>, img: &Image) -> Result<()> {
    if img.channels() != 1 {
        return Err(invalid("16-bit output expects a single-channel image"));
    }
    let raw: Vec<u16> = img
        .data()
        .iter()
        .map(|&v| quantize(v, 65535.0) as u16)
        .collect();
    let buf: ImageBuffer<Luma<u16>, Vec<u16>> =
        ImageBuffer::from_raw(img.width() as u32, img.height() as u32, raw).unwrap();
    save(&DynamicImage::ImageLuma16(buf), path.as_ref())
}

/// Writes a mask as an 8-bit image with values {0, 255}.
pub fn write_mask(path: impl AsRef<Path>, mask: &BinaryMask) -> Result<()> {
    write_image8(path, &mask.to_image())
}

pub fn encode_png(img: &Image) -> Result<Vec<u8>> {
    let mut out = Cursor::new(Vec::new());
    to_dynamic8(img)?
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}

/// RGBA PNG of a saliency map drawn in `color`, with alpha proportional to
/// saliency scaled by `opacity`.
pub fn encode_overlay_png(saliency: &Image, color: [u8; 3], opacity: f64) -> Result<Vec<u8>> {
    if saliency.channels() != 1 {
        return Err(invalid("overlays are rendered from single-channel maps"));
    }
    let (w, h) = (saliency.width() as u32, saliency.height() as u32);
    let mut buf: ImageBuffer<Rgba<u8>, Vec<u8>> = ImageBuffer::new(w, h);
    for (i, px) in buf.pixels_mut().enumerate() {
        let a = quantize(saliency.data()[i] * opacity.clamp(0.0, 1.0), 255.0) as u8;
        *px = Rgba([color[0], color[1], color[2], a]);
    }
    let mut out = Cursor::new(Vec::new());
    DynamicImage::ImageRgba8(buf)
        .write_to(&mut out, ImageFormat::Png)
        .map_err(|e| Error::Format(e.to_string()))?;
    Ok(out.into_inner())
}
