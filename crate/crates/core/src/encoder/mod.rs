//! Convolutional encoder learned from user markers.
//!
//! Filters are estimated without backpropagation: patches under each marker
//! are z-scored with statistics fit on all marked patches, clustered per
//! marker, and the unit-normalized cluster centers become the kernels.
//! Deeper layers repeat the procedure on the previous layer's feature maps
//! with markers projected into the pooled domain.

mod format;
mod forward;
pub mod kmeans;

use std::collections::BTreeMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

pub use format::{
    decode_model, encode_model, format_markers, load_architecture, load_model, parse_architecture,
    parse_markers, read_markers, save_model, write_markers, MODEL_FORMAT_VERSION, MODEL_MAGIC,
};
pub use forward::{forward_encoder, forward_layer};

use crate::error::{invalid, Result};
use crate::imagery::{check_side, disk_offsets, gather_patch, Image, Patch};
use kmeans::{kmeans, KMeansParams};

/// Divisor floor for near-constant patch dimensions.
pub const DEFAULT_EPSILON: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum MarkerLabel {
    #[serde(rename = "fg")]
    Foreground,
    #[serde(rename = "bg")]
    Background,
}

impl MarkerLabel {
    pub fn as_str(self) -> &'static str {
        match self {
            MarkerLabel::Foreground => "fg",
            MarkerLabel::Background => "bg",
        }
    }
}

/// A user-placed disk on one image.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Marker {
    pub image_id: String,
    pub x: usize,
    pub y: usize,
    pub radius: usize,
    pub label: MarkerLabel,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NormalizationStats {
    pub mean: Vec<f64>,
    pub stdev: Vec<f64>,
    pub epsilon: f64,
}

impl NormalizationStats {
    /// Mean 0, deviation 1: normalization is the identity.
    pub fn identity(dim: usize) -> Self {
        NormalizationStats {
            mean: vec![0.0; dim],
            stdev: vec![1.0; dim],
            epsilon: DEFAULT_EPSILON,
        }
    }

    pub fn dim(&self) -> usize {
        self.mean.len()
    }

    #[inline]
    pub fn divisor(&self, i: usize) -> f64 {
        if self.stdev[i] < self.epsilon {
            self.epsilon
        } else {
            self.stdev[i]
        }
    }

    pub fn normalize_in_place(&self, values: &mut [f64]) {
        for (i, v) in values.iter_mut().enumerate() {
            *v = (*v - self.mean[i]) / self.divisor(i);
        }
    }

    pub fn normalized(&self, values: &[f64]) -> Vec<f64> {
        let mut out = values.to_vec();
        self.normalize_in_place(&mut out);
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FilterBank {
    pub side: usize,
    pub in_channels: usize,
    pub kernels: Vec<Vec<f64>>,
    pub stats: NormalizationStats,
}

impl FilterBank {
    pub fn len(&self) -> usize {
        self.kernels.len()
    }

    pub fn is_empty(&self) -> bool {
        self.kernels.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.side * self.side * self.in_channels
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    None,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Pooling {
    Max,
    Avg,
    None,
}

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct LayerSpec {
    pub kernel_side: usize,
    pub activation: Activation,
    pub pool: Pooling,
    pub pool_side: usize,
    pub pool_stride: usize,
    pub filters_per_marker: usize,
    pub max_filters: usize,
}

impl LayerSpec {
    pub fn validate(&self) -> Result<()> {
        check_side(self.kernel_side)?;
        if self.pool_stride == 0 {
            return Err(invalid("pool_stride must be at least 1"));
        }
        if self.pool != Pooling::None && (self.pool_side == 0 || self.pool_side % 2 == 0) {
            return Err(invalid(format!(
                "pool_side must be a positive odd number, got {}",
                self.pool_side
            )));
        }
        if self.filters_per_marker == 0 || self.max_filters == 0 {
            return Err(invalid(
                "filters_per_marker and max_filters must be positive",
            ));
        }
        Ok(())
    }

    /// Spatial downsampling factor of this layer.
    pub fn stride(&self) -> usize {
        match self.pool {
            Pooling::None => 1,
            _ => self.pool_stride,
        }
    }
}

/// The user-authored architecture (the JSON config).
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct Architecture {
    pub input_channels: usize,
    pub layers: Vec<LayerSpec>,
}

impl Architecture {
    pub fn validate(&self) -> Result<()> {
        if self.input_channels == 0 {
            return Err(invalid("input_channels must be positive"));
        }
        if self.layers.is_empty() {
            return Err(invalid("architecture has no layers"));
        }
        self.layers.iter().try_for_each(LayerSpec::validate)
    }

    /// Product of the strides of the first `n` layers.
    pub fn cumulative_stride(&self, n: usize) -> usize {
        self.layers.iter().take(n).map(LayerSpec::stride).product()
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderLayer {
    pub spec: LayerSpec,
    pub bank: FilterBank,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EncoderModel {
    pub input_channels: usize,
    pub layers: Vec<EncoderLayer>,
}

impl EncoderModel {
    pub fn new(input_channels: usize, layers: Vec<EncoderLayer>) -> Result<Self> {
        let mut expected = input_channels;
        for (i, layer) in layers.iter().enumerate() {
            if layer.bank.in_channels != expected {
                return Err(invalid(format!(
                    "layer {} expects {} input channels but receives {expected}",
                    i + 1,
                    layer.bank.in_channels
                )));
            }
            if layer.bank.side != layer.spec.kernel_side {
                return Err(invalid(format!(
                    "layer {} kernel side disagrees with its spec",
                    i + 1
                )));
            }
            expected = layer.bank.len();
        }
        Ok(EncoderModel {
            input_channels,
            layers,
        })
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    pub fn filter_counts(&self) -> Vec<usize> {
        self.layers.iter().map(|l| l.bank.len()).collect()
    }
}

/// Patches of every in-domain pixel of the marker's disk, in row-major
/// order of the disk offsets.
pub fn marker_patches(raster: &Image, marker: &Marker, k: usize) -> Result<Vec<Patch>> {
    check_side(k)?;
    if marker.x >= raster.width() || marker.y >= raster.height() {
        return Err(invalid(format!(
            "marker at ({}, {}) lies outside the {}x{} raster of '{}'",
            marker.x,
            marker.y,
            raster.width(),
            raster.height(),
            marker.image_id
        )));
    }
    let dim = k * k * raster.channels();
    let mut out = Vec::new();
    for (dx, dy) in disk_offsets(marker.radius) {
        let (px, py) = (marker.x as isize + dx, marker.y as isize + dy);
        if px < 0 || py < 0 || px >= raster.width() as isize || py >= raster.height() as isize {
            continue;
        }
        let mut values = vec![0.0; dim];
        gather_patch(raster, px as usize, py as usize, k, &mut values);
        out.push(Patch {
            center: (px as usize, py as usize),
            side: k,
            values,
        });
    }
    Ok(out)
}

/// Patches grouped by marker, taken from the raster of each marker's image.
pub fn group_marker_patches(
    rasters: &BTreeMap<String, Image>,
    markers: &[Marker],
    k: usize,
) -> Result<Vec<(Marker, Vec<Patch>)>> {
    markers
        .iter()
        .map(|m| {
            let raster = rasters.get(&m.image_id).ok_or_else(|| {
                invalid(format!("marker references unknown image '{}'", m.image_id))
            })?;
            Ok((m.clone(), marker_patches(raster, m, k)?))
        })
        .collect()
}

/// All marker patches, flattened in marker order.
pub fn collect_marker_patches(
    rasters: &BTreeMap<String, Image>,
    markers: &[Marker],
    k: usize,
) -> Result<Vec<Patch>> {
    Ok(group_marker_patches(rasters, markers, k)?
        .into_iter()
        .flat_map(|(_, p)| p)
        .collect())
}

/// Per-dimension mean and population standard deviation (two passes).
pub fn fit_normalization(patches: &[Patch], epsilon: f64) -> Result<NormalizationStats> {
    let first = patches
        .first()
        .ok_or_else(|| invalid("cannot fit normalization on zero patches"))?;
    if epsilon <= 0.0 {
        return Err(invalid("normalization epsilon must be positive"));
    }
    let dim = first.values.len();
    if patches.iter().any(|p| p.values.len() != dim) {
        return Err(invalid("patches differ in length"));
    }
    let n = patches.len() as f64;
    let mut mean = vec![0.0; dim];
    for p in patches {
        for (m, v) in mean.iter_mut().zip(&p.values) {
            *m += v;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n);
    let mut var = vec![0.0; dim];
    for p in patches {
        for ((s, v), m) in var.iter_mut().zip(&p.values).zip(&mean) {
            *s += (v - m) * (v - m);
        }
    }
    let stdev = var.into_iter().map(|s| (s / n).sqrt()).collect();
    Ok(NormalizationStats {
        mean,
        stdev,
        epsilon,
    })
}

fn unit_norm(v: Vec<f64>) -> Option<Vec<f64>> {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm <= 1e-12 || !norm.is_finite() {
        return None;
    }
    Some(v.into_iter().map(|x| x / norm).collect())
}

/// One k-means run per marker over its normalized patches; centers scaled
/// to unit norm (zero centers dropped) and concatenated in marker order.
pub fn learn_filters(
    groups: &[(Marker, Vec<Patch>)],
    stats: &NormalizationStats,
    n_per_marker: usize,
    seed: u64,
) -> Result<FilterBank> {
    if groups.is_empty() {
        return Err(invalid("no marker patches to learn filters from"));
    }
    let first = groups[0].1.first().ok_or_else(|| {
        invalid(format!(
            "marker on '{}' produced no patches",
            groups[0].0.image_id
        ))
    })?;
    let side = first.side;
    let dim = first.values.len();
    if dim != stats.dim() || dim % (side * side) != 0 {
        return Err(invalid(
            "patch length does not match the normalization statistics",
        ));
    }
    let mut kernels = Vec::new();
    for (i, (marker, patches)) in groups.iter().enumerate() {
        if patches.is_empty() {
            return Err(invalid(format!(
                "marker on '{}' produced no patches",
                marker.image_id
            )));
        }
        let points: Vec<Vec<f64>> = patches
            .iter()
            .map(|p| stats.normalized(&p.values))
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(i as u64);
        let centers = kmeans(&points, n_per_marker, KMeansParams::default(), &mut rng);
        kernels.extend(centers.into_iter().filter_map(unit_norm));
    }
    Ok(FilterBank {
        side,
        in_channels: dim / (side * side),
        kernels,
        stats: stats.clone(),
    })
}

/// Clusters an oversized bank down to `target` unit-norm kernels.
pub fn reduce_filters(bank: &FilterBank, target: usize, seed: u64) -> FilterBank {
    let target = target.max(1);
    if bank.len() <= target {
        return bank.clone();
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let centers = kmeans(&bank.kernels, target, KMeansParams::default(), &mut rng);
    FilterBank {
        kernels: centers.into_iter().filter_map(unit_norm).collect(),
        ..bank.clone()
    }
}

/// Maps markers into a domain downsampled by `stride`. Markers landing on
/// the same center of the same image are merged, keeping the first label
/// and the largest radius.
pub fn project_markers(markers: &[Marker], stride: usize) -> Vec<Marker> {
    let stride = stride.max(1);
    let mut out: Vec<Marker> = Vec::with_capacity(markers.len());
    for m in markers {
        let p = Marker {
            image_id: m.image_id.clone(),
            x: m.x / stride,
            y: m.y / stride,
            radius: m.radius / stride,
            label: m.label,
        };
        match out
            .iter_mut()
            .find(|q| q.image_id == p.image_id && q.x == p.x && q.y == p.y)
        {
            Some(existing) => existing.radius = existing.radius.max(p.radius),
            None => out.push(p),
        }
    }
    out
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct EncoderSummary {
    pub filters_per_layer: Vec<usize>,
    pub markers_per_layer: Vec<usize>,
    pub patches_per_layer: Vec<usize>,
    pub reduced_layers: Vec<usize>,
}

/// Learns every layer in turn from the training images and their markers.
pub fn train_encoder(
    images: &BTreeMap<String, Image>,
    markers: &[Marker],
    arch: &Architecture,
    seed: u64,
) -> Result<(EncoderModel, EncoderSummary)> {
    arch.validate()?;
    if markers.is_empty() {
        return Err(invalid(
            "at least one marker is required to learn an encoder",
        ));
    }
    for (id, img) in images {
        if img.channels() != arch.input_channels {
            return Err(invalid(format!(
                "image '{id}' has {} channels, architecture expects {}",
                img.channels(),
                arch.input_channels
            )));
        }
    }
    let mut rasters: BTreeMap<String, Image> = images
        .iter()
        .filter(|(id, _)| markers.iter().any(|m| &m.image_id == *id))
        .map(|(id, img)| (id.clone(), img.clone()))
        .collect();
    let mut layers = Vec::with_capacity(arch.layers.len());
    let mut summary = EncoderSummary {
        filters_per_layer: Vec::new(),
        markers_per_layer: Vec::new(),
        patches_per_layer: Vec::new(),
        reduced_layers: Vec::new(),
    };
    let mut in_channels = arch.input_channels;
    for (l, spec) in arch.layers.iter().enumerate() {
        let projected = project_markers(markers, arch.cumulative_stride(l));
        let groups = group_marker_patches(&rasters, &projected, spec.kernel_side)?;
        let all: Vec<Patch> = groups.iter().flat_map(|(_, p)| p.iter().cloned()).collect();
        let stats = fit_normalization(&all, DEFAULT_EPSILON)?;
        let layer_seed = seed.wrapping_add(l as u64);
        let mut bank = learn_filters(&groups, &stats, spec.filters_per_marker, layer_seed)?;
        if bank.len() > spec.max_filters {
            bank = reduce_filters(&bank, spec.max_filters, layer_seed);
            summary.reduced_layers.push(l + 1);
        }
        if bank.is_empty() {
            return Err(invalid(format!("layer {} learned no filters", l + 1)));
        }
        debug_assert_eq!(bank.in_channels, in_channels);
        in_channels = bank.len();
        summary.filters_per_layer.push(bank.len());
        summary.markers_per_layer.push(projected.len());
        summary.patches_per_layer.push(all.len());
        if l + 1 < arch.layers.len() {
            for raster in rasters.values_mut() {
                *raster = forward_layer(raster, spec, &bank)?;
            }
        }
        layers.push(EncoderLayer {
            spec: spec.clone(),
            bank,
        });
    }
    Ok((EncoderModel::new(arch.input_channels, layers)?, summary))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn marker(x: usize, y: usize, radius: usize) -> Marker {
        Marker {
            image_id: "a".into(),
            x,
            y,
            radius,
            label: MarkerLabel::Foreground,
        }
    }

    fn one_image(img: Image) -> BTreeMap<String, Image> {
        BTreeMap::from([("a".to_string(), img)])
    }

    fn patch(values: Vec<f64>) -> Patch {
        Patch {
            center: (0, 0),
            side: 1,
            values,
        }
    }

    #[test]
    fn radius_zero_marker_gives_one_patch() {
        let imgs = one_image(Image::new(8, 8, 1));
        assert_eq!(
            collect_marker_patches(&imgs, &[marker(3, 3, 0)], 3)
                .unwrap()
                .len(),
            1
        );
    }

    #[test]
    fn radius_one_marker_gives_five_patches() {
        let imgs = one_image(Image::new(8, 8, 1));
        assert_eq!(
            collect_marker_patches(&imgs, &[marker(3, 3, 1)], 3)
                .unwrap()
                .len(),
            5
        );
    }

    #[test]
    fn no_markers_no_patches() {
        let imgs = one_image(Image::new(8, 8, 1));
        assert!(collect_marker_patches(&imgs, &[], 3).unwrap().is_empty());
    }

    #[test]
    fn marker_outside_image_is_rejected() {
        let imgs = one_image(Image::new(8, 8, 1));
        assert!(collect_marker_patches(&imgs, &[marker(8, 0, 0)], 3).is_err());
        let stranger = Marker {
            image_id: "b".into(),
            ..marker(1, 1, 0)
        };
        assert!(collect_marker_patches(&imgs, &[stranger], 3).is_err());
    }

    #[test]
    fn two_point_zscore() {
        let s = fit_normalization(&[patch(vec![0.0]), patch(vec![2.0])], 1e-6).unwrap();
        assert_eq!(s.mean, vec![1.0]);
        assert_eq!(s.stdev, vec![1.0]);
    }

    #[test]
    fn identical_patches_fall_back_to_epsilon() {
        let s = fit_normalization(&vec![patch(vec![3.0]); 4], 1e-3).unwrap();
        assert_eq!(s.stdev, vec![0.0]);
        assert_eq!(s.divisor(0), 1e-3);
        assert_eq!(s.normalized(&[3.5]), vec![500.0]);
    }

    #[test]
    fn empty_patch_set_is_rejected() {
        assert!(fit_normalization(&[], 1e-6).is_err());
    }

    #[test]
    fn normalization_matches_naive_two_pass_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let patches: Vec<Patch> = (0..100)
            .map(|_| {
                patch(
                    (0..9)
                        .map(|_| rand::Rng::gen_range(&mut rng, -3.0..5.0))
                        .collect(),
                )
            })
            .collect();
        let s = fit_normalization(&patches, 1e-6).unwrap();
        for d in 0..9 {
            let col: Vec<f64> = patches.iter().map(|p| p.values[d]).collect();
            let mean = col.iter().sum::<f64>() / col.len() as f64;
            let var = col.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / col.len() as f64;
            assert!((s.mean[d] - mean).abs() < 1e-10);
            assert!((s.stdev[d] - var.sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_patch_single_kernel_is_its_direction() {
        let m = marker(0, 0, 0);
        let p = patch(vec![3.0, 4.0]);
        let stats = NormalizationStats::identity(2);
        let bank = learn_filters(&[(m, vec![p])], &stats, 1, 0).unwrap();
        assert_eq!(bank.kernels, vec![vec![0.6, 0.8]]);
    }

    #[test]
    fn as_many_clusters_as_patches_returns_patches() {
        let stats = NormalizationStats::identity(2);
        let ps = vec![
            patch(vec![1.0, 0.0]),
            patch(vec![0.0, 2.0]),
            patch(vec![-3.0, 0.0]),
        ];
        let bank = learn_filters(&[(marker(0, 0, 1), ps)], &stats, 3, 5).unwrap();
        assert_eq!(
            bank.kernels,
            vec![vec![1.0, 0.0], vec![0.0, 1.0], vec![-1.0, 0.0]]
        );
    }

    #[test]
    fn zero_centers_are_dropped() {
        let stats = NormalizationStats::identity(1);
        let bank =
            learn_filters(&[(marker(0, 0, 0), vec![patch(vec![0.0])])], &stats, 1, 0).unwrap();
        assert!(bank.is_empty());
    }

    #[test]
    fn reduce_below_target_is_identity() {
        let bank = FilterBank {
            side: 1,
            in_channels: 2,
            kernels: vec![
                vec![1.0, 0.0],
                vec![0.0, 1.0],
                vec![-1.0, 0.0],
                vec![0.0, -1.0],
            ],
            stats: NormalizationStats::identity(2),
        };
        assert_eq!(reduce_filters(&bank, 200, 1), bank);
    }

    #[test]
    fn reduce_identical_kernels_to_one() {
        let k = vec![0.6, 0.8];
        let bank = FilterBank {
            side: 1,
            in_channels: 2,
            kernels: vec![k.clone(); 4],
            stats: NormalizationStats::identity(2),
        };
        assert_eq!(reduce_filters(&bank, 1, 1).kernels, vec![k]);
    }

    #[test]
    fn reduce_two_tight_groups_to_their_centroids() {
        let unit = |a: f64| vec![a.cos(), a.sin()];
        let kernels: Vec<Vec<f64>> = [0.0, 0.01, -0.01, 0.02, 1.5, 1.51, 1.49, 1.52]
            .iter()
            .map(|&a| unit(a))
            .collect();
        let bank = FilterBank {
            side: 1,
            in_channels: 2,
            kernels: kernels.clone(),
            stats: NormalizationStats::identity(2),
        };
        let reduced = reduce_filters(&bank, 2, 3);
        assert_eq!(reduced.len(), 2);
        for group in [&kernels[..4], &kernels[4..]] {
            let mean: Vec<f64> = (0..2)
                .map(|d| group.iter().map(|k| k[d]).sum::<f64>() / 4.0)
                .collect();
            let want = unit_norm(mean).unwrap();
            let hit = reduced
                .kernels
                .iter()
                .any(|k| (k[0] - want[0]).abs() < 1e-9 && (k[1] - want[1]).abs() < 1e-9);
            assert!(hit, "{:?} missing {want:?}", reduced.kernels);
        }
    }

    #[test]
    fn projection_divides_and_floors() {
        assert_eq!(
            project_markers(&[marker(10, 10, 4)], 1),
            vec![marker(10, 10, 4)]
        );
        assert_eq!(
            project_markers(&[marker(10, 10, 4)], 2),
            vec![marker(5, 5, 2)]
        );
        assert_eq!(
            project_markers(&[marker(11, 10, 1)], 4),
            vec![marker(2, 2, 0)]
        );
    }

    #[test]
    fn projection_merges_coincident_markers() {
        let out = project_markers(&[marker(4, 4, 0), marker(5, 5, 3)], 2);
        assert_eq!(out, vec![marker(2, 2, 1)]);
    }

    #[test]
    fn training_needs_markers() {
        let imgs = one_image(Image::new(8, 8, 1));
        let arch = Architecture {
            input_channels: 1,
            layers: vec![LayerSpec {
                kernel_side: 3,
                activation: Activation::Relu,
                pool: Pooling::None,
                pool_side: 1,
                pool_stride: 1,
                filters_per_marker: 4,
                max_filters: 200,
            }],
        };
        assert!(train_encoder(&imgs, &[], &arch, 0).is_err());
    }

    proptest! {
        #[test]
        fn normalized_training_patches_are_centered_and_unit(
            vals in proptest::collection::vec(proptest::collection::vec(-10.0f64..10.0, 4), 3..40)
        ) {
            let patches: Vec<Patch> = vals.into_iter().map(patch).collect();
            let s = fit_normalization(&patches, 1e-6).unwrap();
            let normed: Vec<Vec<f64>> = patches.iter().map(|p| s.normalized(&p.values)).collect();
            let n = normed.len() as f64;
            for d in 0..4 {
                let mean = normed.iter().map(|v| v[d]).sum::<f64>() / n;
                prop_assert!(mean.abs() < 1e-8);
                if s.stdev[d] >= s.epsilon {
                    let sd = (normed.iter().map(|v| (v[d] - mean).powi(2)).sum::<f64>() / n).sqrt();
                    prop_assert!((sd - 1.0).abs() < 1e-8);
                }
            }
        }
    }
}
