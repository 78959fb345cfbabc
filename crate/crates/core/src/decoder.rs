//! Sign-adaptive decoding of encoder features into saliency maps.
//!
//! Each channel is min-max rescaled, summarized by its mean and by the
//! fraction of its pixels above the channel's own Otsu threshold, and given
//! a weight in {-1, 0, +1}: low-mean small-area channels vote foreground,
//! high-mean large-area channels vote background. The saliency is the
//! rectified weighted channel sum.

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagery::{otsu_of_values, upsample_bilinear, Image};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct DecoderParams {
    pub area_low: f64,
    pub area_high: f64,
}

impl Default for DecoderParams {
    fn default() -> Self {
        DecoderParams {
            area_low: 0.1,
            area_high: 0.2,
        }
    }
}

impl DecoderParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.area_low && self.area_low <= self.area_high && self.area_high <= 1.0) {
            return Err(invalid(format!(
                "decoder areas must satisfy 0 <= {} <= {} <= 1",
                self.area_low, self.area_high
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub means: Vec<f64>,
    pub global_threshold: f64,
    pub variance: f64,
    pub areas: Vec<f64>,
}

/// Per-channel min-max rescaling; constant channels become zero.
fn rescaled_channels(features: &Image) -> Vec<Vec<f64>> {
    let m = features.channels();
    let mut lo = vec![f64::INFINITY; m];
    let mut hi = vec![f64::NEG_INFINITY; m];
    for px in features.data().chunks_exact(m) {
        for c in 0..m {
            lo[c] = lo[c].min(px[c]);
            hi[c] = hi[c].max(px[c]);
        }
    }
    let mut out = vec![Vec::with_capacity(features.pixel_count()); m];
    for px in features.data().chunks_exact(m) {
        for c in 0..m {
            let span = hi[c] - lo[c];
            out[c].push(if span > 0.0 { ((px[c] - lo[c]) / span).clamp(0.0, 1.0) } else { 0.0 });
        }
    }
    out
}

fn stats_of_rescaled(channels: &[Vec<f64>]) -> Result<ChannelStats> {
    let n = channels.len();
    let mut means = Vec::with_capacity(n);
    let mut areas = Vec::with_capacity(n);
    for ch in channels {
        let count = ch.len().max(1) as f64;
        means.push(ch.iter().sum::<f64>() / count);
        let own = otsu_of_values(ch.iter().copied())?;
        let above = if own.degenerate { 0 } else { ch.iter().filter(|v| **v > own.threshold).count() };
        areas.push(above as f64 / count);
    }
    let mean_of_means = means.iter().sum::<f64>() / n as f64;
    let t = otsu_of_values(means.iter().copied())?;
    let global_threshold = if t.degenerate { mean_of_means } else { t.threshold };
    let variance = means.iter().map(|m| (m - mean_of_means).powi(2)).sum::<f64>() / n as f64;
    Ok(ChannelStats {
        means,
        global_threshold,
        variance,
        areas,
    })
}

pub fn channel_stats(features: &Image) -> Result<ChannelStats> {
    if features.pixel_count() == 0 {
        return Err(invalid("cannot decode an empty feature map"));
    }
    stats_of_rescaled(&rescaled_channels(features))
}

/// Channel weights in {-1, 0, +1}.
pub fn channel_weights(stats: &ChannelStats, params: &DecoderParams) -> Vec<i8> {
    let (t, var) = (stats.global_threshold, stats.variance);
    stats
        .means
        .iter()
        .zip(&stats.areas)
        .map(|(&mu, &a)| {
            if mu <= t - var && a < params.area_low {
                1
            } else if mu >= t + var && a > params.area_high {
                -1
            } else {
                0
            }
        })
        .collect()
}

fn weighted_saliency(channels: &[Vec<f64>], weights: &[i8], width: usize, height: usize) -> Image {
    let mut out = Image::new(width, height, 1);
    for (ch, &w) in channels.iter().zip(weights) {
        if w == 0 {
            continue;
        }
        let w = w as f64;
        for (o, v) in out.data_mut().iter_mut().zip(ch) {
            *o += w * v;
        }
    }
    let rectified = out.map(|v| v.max(0.0));
    if rectified.min_max().1 <= 0.0 {
        return rectified;
    }
    rectified.min_max_normalized()
}

/// Rectified weighted sum of the rescaled channels, normalized to `[0,1]`.
pub fn decode_layer(features: &Image, weights: &[i8]) -> Result<Image> {
    if weights.len() != features.channels() {
        return Err(invalid(format!(
            "{} weights for {} channels",
            weights.len(),
            features.channels()
        )));
    }
    let channels = rescaled_channels(features);
    Ok(weighted_saliency(&channels, weights, features.width(), features.height()))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct DecodedLevel {
    pub weights: Vec<i8>,
    pub stats: ChannelStats,
}

/// One saliency map per encoder level, upsampled to the input size.
#[derive(Clone, Debug, PartialEq)]
pub struct SaliencyStack {
    pub maps: Vec<Image>,
    pub levels: Vec<DecodedLevel>,
}

impl SaliencyStack {
    pub fn len(&self) -> usize {
        self.maps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.maps.is_empty()
    }
}

pub fn decode_stack(
    features_per_layer: &[Image],
    params: &DecoderParams,
    target_w: usize,
    target_h: usize,
) -> Result<SaliencyStack> {
    if features_per_layer.is_empty() {
        return Err(invalid("no feature maps to decode"));
    }
    params.validate()?;
    let mut maps = Vec::with_capacity(features_per_layer.len());
    let mut levels = Vec::with_capacity(features_per_layer.len());
    for features in features_per_layer {
        let channels = rescaled_channels(features);
        let stats = stats_of_rescaled(&channels)?;
        let weights = channel_weights(&stats, params);
        let saliency = weighted_saliency(&channels, &weights, features.width(), features.height());
        maps.push(upsample_bilinear(&saliency, target_w, target_h)?);
        levels.push(DecodedLevel { weights, stats });
    }
    Ok(SaliencyStack { maps, levels })
}
