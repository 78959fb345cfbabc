//! Raster primitives shared by the encoder, decoder, automaton and metrics.
//!
//! Every raster is an [`Image`]: `f64` samples stored row-major with the
//! channels of a pixel interleaved. Pixel coordinates are `(x, y)` with `x`
//! the column.

mod color;
pub mod io;
mod morphology;
pub(crate) mod otsu;
mod resample;

pub use color::rgb_to_lab;
pub use morphology::{connected_components, dilate, disk_offsets, label_components};
pub use otsu::{otsu_of_values, otsu_threshold, Otsu, OTSU_BINS};
pub use resample::upsample_bilinear;

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Image {
    width: usize,
    height: usize,
    channels: usize,
    data: Vec<f64>,
}

impl Image {
    pub fn new(width: usize, height: usize, channels: usize) -> Self {
        Self::filled(width, height, channels, 0.0)
    }

    pub fn filled(width: usize, height: usize, channels: usize, value: f64) -> Self {
        Image {
            width,
            height,
            channels,
            data: vec![value; width * height * channels],
        }
    }

    pub fn from_vec(width: usize, height: usize, channels: usize, data: Vec<f64>) -> Result<Self> {
        if channels == 0 {
            return Err(invalid("image needs at least one channel"));
        }
        if data.len() != width * height * channels {
            return Err(invalid(format!(
                "{} samples do not fill a {width}x{height}x{channels} image",
                data.len()
            )));
        }
        if let Some(bad) = data.iter().find(|v| !v.is_finite()) {
            return Err(invalid(format!("non-finite sample {bad}")));
        }
        Ok(Image {
            width,
            height,
            channels,
            data,
        })
    }

    /// Single-channel image from a per-pixel function of `(x, y)`.
    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> f64) -> Self {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Image {
            width,
            height,
            channels: 1,
            data,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn channels(&self) -> usize {
        self.channels
    }

    #[inline]
    pub fn pixel_count(&self) -> usize {
        self.width * self.height
    }

    #[inline]
    pub fn data(&self) -> &[f64] {
        &self.data
    }

    #[inline]
    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<f64> {
        self.data
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize, c: usize) -> f64 {
        self.data[(y * self.width + x) * self.channels + c]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, c: usize, v: f64) {
        self.data[(y * self.width + x) * self.channels + c] = v;
    }

    /// All channels of one pixel.
    #[inline]
    pub fn pixel(&self, x: usize, y: usize) -> &[f64] {
        let start = (y * self.width + x) * self.channels;
        &self.data[start..start + self.channels]
    }

    pub fn same_domain(&self, other: &Image) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn same_domain_as_mask(&self, mask: &BinaryMask) -> bool {
        self.width == mask.width() && self.height == mask.height()
    }

    /// Copies channel `c` out as a single-channel image.
    pub fn channel(&self, c: usize) -> Image {
        let data = self
            .data
            .iter()
            .skip(c)
            .step_by(self.channels)
            .copied()
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Interleaves equally sized single-channel images.
    pub fn stack(planes: &[Image]) -> Result<Image> {
        let first = planes
            .first()
            .ok_or_else(|| invalid("cannot stack zero planes"))?;
        if planes
            .iter()
            .any(|p| p.channels != 1 || !p.same_domain(first))
        {
            return Err(invalid(
                "stacked planes must be single-channel and share a domain",
            ));
        }
        let n = planes.len();
        let mut data = vec![0.0; first.pixel_count() * n];
        for (c, plane) in planes.iter().enumerate() {
            for (i, v) in plane.data.iter().enumerate() {
                data[i * n + c] = *v;
            }
        }
        Ok(Image {
            width: first.width,
            height: first.height,
            channels: n,
            data,
        })
    }

    pub fn min_max(&self) -> (f64, f64) {
        self.data
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &v| {
                (lo.min(v), hi.max(v))
            })
    }

    /// Linear stretch to `[0, 1]`; a constant image maps to all zeros.
    pub fn min_max_normalized(&self) -> Image {
        let (lo, hi) = self.min_max();
        let span = hi - lo;
        let data = if span > 0.0 {
            self.data
                .iter()
                .map(|v| ((v - lo) / span).clamp(0.0, 1.0))
                .collect()
        } else {
            vec![0.0; self.data.len()]
        };
        Image {
            data,
            ..self.clone()
        }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> Image {
        Image {
            data: self.data.iter().map(|&v| f(v)).collect(),
            ..self.clone()
        }
    }

    pub fn mean(&self) -> f64 {
        if self.data.is_empty() {
            return 0.0;
        }
        self.data.iter().sum::<f64>() / self.data.len() as f64
    }

    /// Per-pixel channel mean, used when a single intensity is needed.
    pub fn intensity(&self) -> Image {
        if self.channels == 1 {
            return self.clone();
        }
        let m = self.channels as f64;
        let data = self
            .data
            .chunks_exact(self.channels)
            .map(|px| px.iter().sum::<f64>() / m)
            .collect();
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data,
        }
    }

    /// Shifts the raster by `(dx, dy)`, filling uncovered pixels with zero.
    pub fn shifted(&self, dx: isize, dy: isize) -> Image {
        let mut out = Image::new(self.width, self.height, self.channels);
        for y in 0..self.height {
            let sy = y as isize - dy;
            if sy < 0 || sy >= self.height as isize {
                continue;
            }
            for x in 0..self.width {
                let sx = x as isize - dx;
                if sx < 0 || sx >= self.width as isize {
                    continue;
                }
                for c in 0..self.channels {
                    out.set(x, y, c, self.get(sx as usize, sy as usize, c));
                }
            }
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    bits: Vec<bool>,
}

impl BinaryMask {
    pub fn new(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![false; width * height],
        }
    }

    pub fn full(width: usize, height: usize) -> Self {
        BinaryMask {
            width,
            height,
            bits: vec![true; width * height],
        }
    }

    pub fn from_bits(width: usize, height: usize, bits: Vec<bool>) -> Result<Self> {
        if bits.len() != width * height {
            return Err(invalid(format!(
                "{} bits do not fill a {width}x{height} mask",
                bits.len()
            )));
        }
        Ok(BinaryMask {
            width,
            height,
            bits,
        })
    }

    pub fn from_fn(width: usize, height: usize, mut f: impl FnMut(usize, usize) -> bool) -> Self {
        let mut bits = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                bits.push(f(x, y));
            }
        }
        BinaryMask {
            width,
            height,
            bits,
        }
    }

    /// Pixels of channel 0 strictly above `threshold`.
    pub fn above(img: &Image, threshold: f64) -> Self {
        Self::from_predicate(img, |v| v > threshold)
    }

    /// Pixels of channel 0 at or above `threshold`.
    pub fn at_least(img: &Image, threshold: f64) -> Self {
        Self::from_predicate(img, |v| v >= threshold)
    }

    fn from_predicate(img: &Image, pred: impl Fn(f64) -> bool) -> Self {
        let bits = img
            .data()
            .chunks_exact(img.channels())
            .map(|px| pred(px[0]))
            .collect();
        BinaryMask {
            width: img.width(),
            height: img.height(),
            bits,
        }
    }

    #[inline]
    pub fn width(&self) -> usize {
        self.width
    }

    #[inline]
    pub fn height(&self) -> usize {
        self.height
    }

    #[inline]
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> bool {
        self.bits[y * self.width + x]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, v: bool) {
        self.bits[y * self.width + x] = v;
    }

    pub fn count(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.bits.iter().any(|b| *b)
    }

    pub fn same_domain(&self, other: &BinaryMask) -> bool {
        self.width == other.width && self.height == other.height
    }

    pub fn to_image(&self) -> Image {
        Image {
            width: self.width,
            height: self.height,
            channels: 1,
            data: self
                .bits
                .iter()
                .map(|&b| if b { 1.0 } else { 0.0 })
                .collect(),
        }
    }

    pub fn and(&self, other: &BinaryMask) -> BinaryMask {
        BinaryMask {
            bits: self
                .bits
                .iter()
                .zip(&other.bits)
                .map(|(a, b)| *a && *b)
                .collect(),
            ..self.clone()
        }
    }

    pub fn complement(&self) -> BinaryMask {
        BinaryMask {
            bits: self.bits.iter().map(|b| !b).collect(),
            ..self.clone()
        }
    }

    pub fn is_subset_of(&self, other: &BinaryMask) -> bool {
        self.bits.iter().zip(&other.bits).all(|(a, b)| !*a || *b)
    }
}

/// A `side x side` neighbourhood vectorized in (row, column, channel) order.
#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub center: (usize, usize),
    pub side: usize,
    pub values: Vec<f64>,
}

pub(crate) fn check_side(k: usize) -> Result<()> {
    if k == 0 || k % 2 == 0 {
        return Err(invalid(format!(
            "patch side must be a positive odd number, got {k}"
        )));
    }
    Ok(())
}

/// Writes the zero-padded `k x k` window around `(x, y)` into `out`.
///
/// `out` must hold `k * k * channels` values. The side is not validated here.
#[inline]
pub(crate) fn gather_patch(img: &Image, x: usize, y: usize, k: usize, out: &mut [f64]) {
    let half = (k / 2) as isize;
    let m = img.channels;
    let (w, h) = (img.width as isize, img.height as isize);
    let mut i = 0;
    for dy in -half..=half {
        let sy = y as isize + dy;
        for dx in -half..=half {
            let sx = x as isize + dx;
            if sy < 0 || sy >= h || sx < 0 || sx >= w {
                out[i..i + m].fill(0.0);
            } else {
                let start = (sy as usize * img.width + sx as usize) * m;
                out[i..i + m].copy_from_slice(&img.data[start..start + m]);
            }
            i += m;
        }
    }
}

pub fn extract_patch(img: &Image, x: usize, y: usize, k: usize) -> Result<Patch> {
    check_side(k)?;
    if x >= img.width || y >= img.height {
        return Err(invalid(format!(
            "pixel ({x}, {y}) outside {}x{} image",
            img.width, img.height
        )));
    }
    let mut values = vec![0.0; k * k * img.channels];
    gather_patch(img, x, y, k, &mut values);
    Ok(Patch {
        center: (x, y),
        side: k,
        values,
    })
}
