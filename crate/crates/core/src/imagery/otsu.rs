use super::{BinaryMask, Image};
use crate::error::{invalid, Result};

pub const OTSU_BINS: usize = 256;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Otsu {
    /// Upper boundary of the last bin assigned to the lower class. Values
    /// strictly above it belong to the upper class.
    pub threshold: f64,
    /// Index of the last bin in the lower class.
    pub bin: usize,
    /// No separation exists (constant input); `threshold` is that constant.
    pub degenerate: bool,
}

/// Otsu threshold of channel 0 over `domain` (the whole image when `None`).
pub fn otsu_threshold(values: &Image, domain: Option<&BinaryMask>) -> Result<Otsu> {
    if values.channels() != 1 {
        return Err(invalid("Otsu thresholding expects a single-channel image"));
    }
    if let Some(mask) = domain {
        if !values.same_domain_as_mask(mask) {
            return Err(invalid("Otsu domain mask does not match the image"));
        }
        let vals = values
            .data()
            .iter()
            .zip(mask.bits())
            .filter(|(_, b)| **b)
            .map(|(v, _)| *v);
        otsu_of_values(vals)
    } else {
        otsu_of_values(values.data().iter().copied())
    }
}

/// Otsu over a plain collection of samples.
pub fn otsu_of_values(values: impl Iterator<Item = f64>) -> Result<Otsu> {
    let vals: Vec<f64> = values.collect();
    if vals.is_empty() {
        return Err(invalid("Otsu thresholding over an empty domain"));
    }
    let (lo, hi) = vals
        .iter()
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| {
            (a.min(v), b.max(v))
        });
    if hi <= lo {
        return Ok(Otsu {
            threshold: lo,
            bin: 0,
            degenerate: true,
        });
    }
    let mut hist = [0u64; OTSU_BINS];
    for &v in &vals {
        hist[bin_index(v, lo, hi)] += 1;
    }
    let total: u64 = vals.len() as u64;
    let total_sum: u64 = hist.iter().enumerate().map(|(i, n)| i as u64 * n).sum();

    let mut best = f64::NEG_INFINITY;
    let mut best_bin = 0;
    let (mut w0, mut s0) = (0u64, 0u64);
    for (t, &n) in hist.iter().enumerate().take(OTSU_BINS - 1) {
        w0 += n;
        s0 += t as u64 * n;
        let w1 = total - w0;
        if w0 == 0 || w1 == 0 {
            continue;
        }
        let score = between_class_variance(w0, s0, w1, total_sum - s0);
        if score > best {
            best = score;
            best_bin = t;
        }
    }
    Ok(Otsu {
        threshold: bin_upper_edge(best_bin, lo, hi),
        bin: best_bin,
        degenerate: false,
    })
}

#[inline]
pub(crate) fn bin_index(v: f64, lo: f64, hi: f64) -> usize {
    let b = ((v - lo) / (hi - lo) * OTSU_BINS as f64).floor();
    (b.max(0.0) as usize).min(OTSU_BINS - 1)
}

#[inline]
pub(crate) fn bin_upper_edge(bin: usize, lo: f64, hi: f64) -> f64 {
    lo + (bin + 1) as f64 * (hi - lo) / OTSU_BINS as f64
}

/// Unnormalized between-class variance from class counts and sums of bin
/// indices: `w0 * w1 * (mu0 - mu1)²`.
#[inline]
pub(crate) fn between_class_variance(w0: u64, s0: u64, w1: u64, s1: u64) -> f64 {
    let mu0 = s0 as f64 / w0 as f64;
    let mu1 = s1 as f64 / w1 as f64;
    let d = mu0 - mu1;
    w0 as f64 * w1 as f64 * d * d
}
