use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagery::otsu::{bin_index, bin_upper_edge};
use crate::imagery::{otsu_threshold, BinaryMask, Image, OTSU_BINS};

/// Strengths are clamped to `[c, 1 - c]` before taking logarithms.
pub const PROBABILITY_CLAMP: f64 = 1e-6;

/// Object probability per pixel, single channel in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbabilityMap {
    pub values: Image,
}

pub fn probability_map(theta_fg: &Image, theta_bg: &Image) -> Result<ProbabilityMap> {
    if !theta_fg.same_domain(theta_bg) || theta_fg.channels() != 1 {
        return Err(invalid("strength maps must be single-channel and share a domain"));
    }
    let clamp = |v: f64| v.clamp(PROBABILITY_CLAMP, 1.0 - PROBABILITY_CLAMP);
    let data = theta_fg
        .data()
        .iter()
        .zip(theta_bg.data())
        .map(|(&fg, &bg)| {
            let (l0, l1) = (clamp(bg).ln(), clamp(fg).ln());
            (l0 / (l0 + l1)).clamp(0.0, 1.0)
        })
        .collect();
    Ok(ProbabilityMap {
        values: Image::from_vec(theta_fg.width(), theta_fg.height(), 1, data)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ThresholdKind {
    OtsuOnProbability,
    HistogramPeak,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ThresholdStrategy {
    pub kind: ThresholdKind,
    pub k_sigma: f64,
    pub top_fraction: f64,
    pub window_fraction: f64,
    pub mask: Option<BinaryMask>,
}

impl ThresholdStrategy {
    pub fn otsu() -> Self {
        ThresholdStrategy {
            kind: ThresholdKind::OtsuOnProbability,
            k_sigma: 2.5,
            top_fraction: 0.1,
            window_fraction: 0.2,
            mask: None,
        }
    }

    pub fn histogram_peak(mask: Option<BinaryMask>) -> Self {
        ThresholdStrategy {
            kind: ThresholdKind::HistogramPeak,
            mask,
            ..Self::otsu()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.k_sigma > 0.0) {
            return Err(invalid("k_sigma must be positive"));
        }
        for (name, f) in [("top_fraction", self.top_fraction), ("window_fraction", self.window_fraction)] {
            if !(f > 0.0 && f < 1.0) {
                return Err(invalid(format!("{name} must lie in (0, 1), got {f}")));
            }
        }
        Ok(())
    }
}

pub fn binarize(prob: &ProbabilityMap, guide: &Image, strategy: &ThresholdStrategy) -> Result<BinaryMask> {
    Ok(binarize_with_threshold(prob, guide, strategy)?.0)
}

/// Binarizes and also reports the threshold that was applied (`None` when
/// the statistic was degenerate and nothing could be separated).
pub(crate) fn binarize_with_threshold(
    prob: &ProbabilityMap,
    guide: &Image,
    strategy: &ThresholdStrategy,
) -> Result<(BinaryMask, Option<f64>)> {
    strategy.validate()?;
    let o = &prob.values;
    if o.width() != guide.width() || o.height() != guide.height() {
        return Err(invalid("probability map and guide differ in size"));
    }
    let domain = match &strategy.mask {
        Some(m) => {
            if !o.same_domain_as_mask(m) {
                return Err(invalid("threshold mask does not match the probability map"));
            }
            if m.is_empty() {
                return Err(invalid("threshold mask is empty"));
            }
            m.clone()
        }
        None => BinaryMask::full(o.width(), o.height()),
    };
    match strategy.kind {
        ThresholdKind::OtsuOnProbability => {
            let t = otsu_threshold(o, Some(&domain))?;
            if t.degenerate {
                return Ok((BinaryMask::new(o.width(), o.height()), None));
            }
            Ok((BinaryMask::above(o, t.threshold).and(&domain), Some(t.threshold)))
        }
        ThresholdKind::HistogramPeak => {
            let intensity = guide.intensity();
            let tau = histogram_peak_threshold(&intensity, &domain, strategy);
            let bits = o
                .data()
                .iter()
                .zip(intensity.data())
                .zip(domain.bits())
                .map(|((&p, &i), &m)| m && p >= 0.5 && i >= tau)
                .collect();
            Ok((BinaryMask::from_bits(o.width(), o.height(), bits)?, Some(tau)))
        }
    }
}

/// `τ = μ - kσ` of the intensities in a window around the histogram peak of
/// the brightest part of the masked range.
pub(crate) fn histogram_peak_threshold(intensity: &Image, domain: &BinaryMask, s: &ThresholdStrategy) -> f64 {
    let vals: Vec<f64> = intensity
        .data()
        .iter()
        .zip(domain.bits())
        .filter(|(_, m)| **m)
        .map(|(v, _)| *v)
        .collect();
    let (lo, hi) = vals.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(a, b), &v| (a.min(v), b.max(v)));
    if hi <= lo {
        return lo;
    }
    let mut hist = [0usize; OTSU_BINS];
    for &v in &vals {
        hist[bin_index(v, lo, hi)] += 1;
    }
    let range = hi - lo;
    let first = bin_index(hi - s.top_fraction * range, lo, hi);
    let mut peak = first;
    for b in first..OTSU_BINS {
        if hist[b] > hist[peak] {
            peak = b;
        }
    }
    let center = bin_upper_edge(peak, lo, hi) - 0.5 * range / OTSU_BINS as f64;
    let half = 0.5 * s.window_fraction * range;
    let window: Vec<f64> = vals.iter().copied().filter(|v| (v - center).abs() <= half).collect();
    let n = window.len() as f64;
    let mu = window.iter().sum::<f64>() / n;
    let sigma = (window.iter().map(|v| (v - mu) * (v - mu)).sum::<f64>() / n).sqrt();
    mu - s.k_sigma * sigma
}
