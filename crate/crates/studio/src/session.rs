//! Design sessions and the training computation behind a train job.

use std::collections::BTreeMap;
use std::path::PathBuf;
use std::sync::Arc;

use mlca::encoder::{load_architecture, train_encoder, Architecture, EncoderModel, Marker, MarkerLabel};
use mlca::imagery::{BinaryMask, Image};
use mlca::metrics::{evaluate_split, EvalPair, MetricRow, Summary};
use mlca::pipeline::{process_image, DatasetManifest, PipelineConfig};
use serde::{Deserialize, Serialize};

use crate::error::{ApiError, ApiResult};

/// Body of `POST /sessions`. Manifest and architecture come either as file
/// paths or inline.
#[derive(Clone, Debug, Default, Deserialize)]
pub struct CreateSession {
    pub manifest_path: Option<PathBuf>,
    pub manifest: Option<DatasetManifest>,
    pub architecture_path: Option<PathBuf>,
    pub architecture: Option<Architecture>,
    pub config_path: Option<PathBuf>,
    /// Split scored after each training run; defaults to `validation` when
    /// the manifest has one, otherwise every image.
    pub validation_split: Option<String>,
    #[serde(default)]
    pub seed: u64,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stage {
    Flim,
    Ca,
}

/// Per-layer rows of one image for both stages.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ImageMetrics {
    pub flim: Vec<MetricRow>,
    pub ca: Vec<MetricRow>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LayerAggregate {
    pub layer: usize,
    pub stage: Stage,
    pub metrics: BTreeMap<String, Summary>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RevisionMetrics {
    pub revision: u64,
    pub layers: Vec<LayerAggregate>,
}

/// Everything a finished train job produced, swapped in as a unit.
#[derive(Debug)]
pub struct Snapshot {
    pub revision: u64,
    pub model: EncoderModel,
    pub flim: BTreeMap<String, Vec<Image>>,
    pub ca: BTreeMap<String, Vec<Image>>,
    pub metrics: BTreeMap<String, ImageMetrics>,
    pub layers: Vec<LayerAggregate>,
}

impl Snapshot {
    pub fn overlay(&self, image_id: &str, stage: Stage, layer: usize) -> Option<&Image> {
        let maps = match stage {
            Stage::Flim => self.flim.get(image_id)?,
            Stage::Ca => self.ca.get(image_id)?,
        };
        layer.checked_sub(1).and_then(|l| maps.get(l))
    }
}

pub struct Session {
    pub id: String,
    /// Creation order; the newest session wins image lookups.
    pub sequence: u64,
    pub manifest: DatasetManifest,
    pub architecture: Architecture,
    pub config: PipelineConfig,
    pub validation: Vec<String>,
    pub seed: u64,
    pub markers: BTreeMap<String, Vec<Marker>>,
    pub revision: u64,
    pub committed: Option<Arc<Snapshot>>,
    pub history: Vec<RevisionMetrics>,
    pub running_job: Option<String>,
}

fn unprocessable(e: impl std::fmt::Display) -> ApiError {
    ApiError::Unprocessable(e.to_string())
}

impl Session {
    pub fn create(id: String, sequence: u64, req: CreateSession) -> ApiResult<Session> {
        let manifest = match (req.manifest_path, req.manifest) {
            (Some(p), _) => DatasetManifest::load(p).map_err(unprocessable)?,
            (None, Some(m)) => m,
            (None, None) => return Err(ApiError::Unprocessable("a manifest or manifest_path is required".into())),
        };
        if manifest.entries.is_empty() {
            return Err(ApiError::Unprocessable("the manifest lists no images".into()));
        }
        let config = match &req.config_path {
            Some(p) => Some(PipelineConfig::load(p).map_err(unprocessable)?),
            None => None,
        };
        let architecture = match (req.architecture_path, req.architecture, &config) {
            (Some(p), _, _) => load_architecture(p).map_err(unprocessable)?,
            (None, Some(a), _) => a,
            (None, None, Some(c)) => c.load_architecture().map_err(unprocessable)?,
            (None, None, None) => {
                return Err(ApiError::Unprocessable("an architecture or architecture_path is required".into()))
            }
        };
        architecture.validate().map_err(unprocessable)?;
        let config = config.unwrap_or_else(|| {
            let with_masks = manifest.entries.iter().all(|e| e.mask_path.is_some());
            if architecture.input_channels == 1 && with_masks {
                PipelineConfig::brain("")
            } else {
                PipelineConfig::parasite("")
            }
        });
        let entries: Vec<_> = manifest.entries.iter().collect();
        config.check_entries(&entries).map_err(unprocessable)?;
        let split = req
            .validation_split
            .or_else(|| manifest.splits.contains_key("validation").then(|| "validation".to_string()));
        let validation = manifest
            .split(split.as_deref())
            .map_err(unprocessable)?
            .into_iter()
            .map(|e| e.image_id.clone())
            .collect();
        Ok(Session {
            id,
            sequence,
            manifest,
            architecture,
            config,
            validation,
            seed: req.seed,
            markers: BTreeMap::new(),
            revision: 0,
            committed: None,
            history: Vec::new(),
            running_job: None,
        })
    }

    pub fn has_image(&self, image_id: &str) -> bool {
        self.manifest.entry(image_id).is_some()
    }

    pub fn marker_count(&self) -> usize {
        self.markers.values().map(Vec::len).sum()
    }

    pub fn training_inputs(&self) -> TrainInputs {
        TrainInputs {
            manifest: self.manifest.clone(),
            architecture: self.architecture.clone(),
            config: self.config.clone(),
            markers: self.markers.values().flatten().cloned().collect(),
            validation: self.validation.clone(),
            seed: self.seed,
        }
    }
}

/// A marker as sent by a client, validated against the image domain.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MarkerInput {
    pub x: i64,
    pub y: i64,
    pub radius: i64,
    pub label: MarkerLabel,
}

pub fn parse_markers(body: &[u8], image_id: &str, width: usize, height: usize) -> ApiResult<Vec<Marker>> {
    let items: Vec<MarkerInput> =
        serde_json::from_slice(body).map_err(|e| ApiError::Unprocessable(format!("malformed markers: {e}")))?;
    items
        .into_iter()
        .enumerate()
        .map(|(i, m)| {
            if m.x < 0 || m.y < 0 || m.x as usize >= width || m.y as usize >= height {
                return Err(ApiError::Unprocessable(format!(
                    "marker {i} at ({}, {}) lies outside the {width}x{height} image",
                    m.x, m.y
                )));
            }
            if m.radius < 0 {
                return Err(ApiError::Unprocessable(format!("marker {i} has a negative radius")));
            }
            Ok(Marker {
                image_id: image_id.to_string(),
                x: m.x as usize,
                y: m.y as usize,
                radius: m.radius as usize,
                label: m.label,
            })
        })
        .collect()
}

pub fn marker_outputs(markers: &[Marker]) -> Vec<MarkerInput> {
    markers
        .iter()
        .map(|m| MarkerInput {
            x: m.x as i64,
            y: m.y as i64,
            radius: m.radius as i64,
            label: m.label,
        })
        .collect()
}

/// An owned copy of the session state a train job needs.
#[derive(Clone)]
pub struct TrainInputs {
    pub manifest: DatasetManifest,
    pub architecture: Architecture,
    pub config: PipelineConfig,
    pub markers: Vec<Marker>,
    pub validation: Vec<String>,
    pub seed: u64,
}

/// Learns the encoder, computes saliencies for every image and scores the
/// validation images. `progress` receives values in `[0, 1]`.
pub fn run_training(inputs: &TrainInputs, progress: impl Fn(f64)) -> mlca::Result<Snapshot> {
    let mut images = BTreeMap::new();
    for m in &inputs.markers {
        if !images.contains_key(&m.image_id) {
            let entry = inputs
                .manifest
                .entry(&m.image_id)
                .ok_or_else(|| mlca::Error::Format(format!("unknown image '{}'", m.image_id)))?;
            images.insert(m.image_id.clone(), entry.read_image()?);
        }
    }
    let (model, _) = train_encoder(&images, &inputs.markers, &inputs.architecture, inputs.seed)?;
    progress(0.1);
    let total = inputs.manifest.entries.len();
    let mut flim = BTreeMap::new();
    let mut ca = BTreeMap::new();
    let mut masks: BTreeMap<String, Vec<BinaryMask>> = BTreeMap::new();
    for (i, entry) in inputs.manifest.entries.iter().enumerate() {
        let image = entry.read_image()?;
        let prior = entry.read_mask()?;
        let result = process_image(&image, prior.as_ref(), &model, None, &inputs.config, true)?;
        flim.insert(entry.image_id.clone(), result.stack.maps);
        ca.insert(
            entry.image_id.clone(),
            result.levels.iter().map(|l| l.probability.values.clone()).collect(),
        );
        masks.insert(entry.image_id.clone(), result.levels.into_iter().map(|l| l.mask).collect());
        progress(0.1 + 0.85 * (i + 1) as f64 / total as f64);
    }
    let mut scored = Vec::new();
    for id in &inputs.validation {
        if let Some(gt) = inputs.manifest.entry(id).map(|e| e.read_gt()).transpose()?.flatten() {
            scored.push((id.clone(), gt));
        }
    }
    let depth = model.depth();
    let mut metrics: BTreeMap<String, ImageMetrics> = scored
        .iter()
        .map(|(id, _)| (id.clone(), ImageMetrics { flim: Vec::new(), ca: Vec::new() }))
        .collect();
    let mut layers = Vec::new();
    if !scored.is_empty() {
        for stage in [Stage::Flim, Stage::Ca] {
            for l in 0..depth {
                let pairs: Vec<EvalPair> = scored
                    .iter()
                    .map(|(id, gt)| EvalPair {
                        id: id.clone(),
                        pred: match stage {
                            Stage::Flim => flim[id][l].clone(),
                            Stage::Ca => masks[id][l].to_image(),
                        },
                        gt: gt.clone(),
                    })
                    .collect();
                let report = evaluate_split(&pairs, inputs.config.metrics.area_range, &inputs.config.metrics.params)?;
                for row in &report.per_image {
                    let m = metrics.get_mut(&row.id).expect("scored image");
                    match stage {
                        Stage::Flim => m.flim.push(row.clone()),
                        Stage::Ca => m.ca.push(row.clone()),
                    }
                }
                layers.push(LayerAggregate {
                    layer: l + 1,
                    stage,
                    metrics: report.aggregate,
                });
            }
        }
    }
    progress(1.0);
    Ok(Snapshot {
        revision: 0,
        model,
        flim,
        ca,
        metrics,
        layers,
    })
}
