//! Per-image inference and the artifact layout.

use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::PipelineConfig;
use crate::automaton::{run_level, LevelOutcome, LevelRun};
use crate::decoder::{decode_stack, DecodedLevel, DecoderParams, SaliencyStack};
use crate::encoder::{forward_encoder, EncoderModel};
use crate::error::{invalid, Error, Result};
use crate::imagery::io::{write_gray16, write_image8, write_mask};
use crate::imagery::{rgb_to_lab, BinaryMask, Image};
use crate::merge::{merge_forward, MergeNet};

/// Output locations under one root. File names depend only on the image id,
/// the stage and the level.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct Layout {
    pub root: PathBuf,
}

impl Layout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Layout { root: root.into() }
    }

    pub fn encoder_model(&self) -> PathBuf {
        self.root.join("encoder").join("encoder.flim")
    }

    pub fn encoder_summary(&self) -> PathBuf {
        self.root.join("encoder").join("summary.json")
    }

    pub fn merge_model(&self) -> PathBuf {
        self.root.join("merge").join("merge.json")
    }

    pub fn merge_log(&self) -> PathBuf {
        self.root.join("merge").join("loss.csv")
    }

    pub fn infer_dir(&self, split: Option<&str>) -> PathBuf {
        self.root.join("infer").join(split.unwrap_or("all"))
    }

    pub fn eval_dir(&self, split: Option<&str>) -> PathBuf {
        self.root.join("eval").join(split.unwrap_or("all"))
    }
}

/// Files written by inference for one split.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct InferLayout {
    pub dir: PathBuf,
}

impl InferLayout {
    pub fn new(dir: impl Into<PathBuf>) -> Self {
        InferLayout { dir: dir.into() }
    }

    /// Decoded encoder saliency of a 1-based level.
    pub fn saliency(&self, id: &str, level: usize) -> PathBuf {
        self.dir.join("saliency").join(format!("{id}_layer{level}.png"))
    }

    pub fn stack(&self, id: &str) -> PathBuf {
        self.dir.join("saliency").join(format!("{id}_stack.json"))
    }

    pub fn probability(&self, id: &str, level: usize) -> PathBuf {
        self.dir.join("probability").join(format!("{id}_layer{level}.png"))
    }

    pub fn mask(&self, id: &str, level: usize) -> PathBuf {
        self.dir.join("masks").join(format!("{id}_layer{level}.png"))
    }

    pub fn merged(&self, id: &str) -> PathBuf {
        self.dir.join("merged").join(format!("{id}.png"))
    }

    pub fn run(&self, id: &str) -> PathBuf {
        self.dir.join("runs").join(format!("{id}.json"))
    }

    pub fn summary(&self) -> PathBuf {
        self.dir.join("summary.json")
    }
}

/// The CA guide: LAB for RGB inputs, the intensity otherwise.
pub fn guide_for(image: &Image) -> Result<Image> {
    if image.channels() == 3 {
        rgb_to_lab(image)
    } else {
        Ok(image.intensity())
    }
}

/// Evolved binary saliencies as `{0, 1}` rasters, the merge network input.
pub fn evolved_saliencies(levels: &[LevelOutcome]) -> Vec<Image> {
    levels.iter().map(|l| l.mask.to_image()).collect()
}

#[derive(Clone, Debug)]
pub struct ImageResult {
    pub stack: SaliencyStack,
    pub levels: Vec<LevelOutcome>,
    pub merged: Option<Image>,
    pub wall_ms: f64,
}

/// Encoder, decoding, one automaton per level and, with a merge network,
/// the fused map. Levels run concurrently when `parallel_levels` is set.
pub fn process_image(
    image: &Image,
    mask: Option<&BinaryMask>,
    encoder: &EncoderModel,
    merge: Option<&MergeNet>,
    cfg: &PipelineConfig,
    parallel_levels: bool,
) -> Result<ImageResult> {
    let start = Instant::now();
    if image.channels() != encoder.input_channels {
        return Err(invalid(format!(
            "image has {} channels, the encoder expects {}",
            image.channels(),
            encoder.input_channels
        )));
    }
    let (w, h) = (image.width(), image.height());
    let features = forward_encoder(image, encoder)?;
    let stack = decode_stack(&features, &cfg.decoder, w, h)?;
    let guide = guide_for(image)?;
    let init = cfg.init.background(mask)?;
    let strategy = cfg.threshold.strategy(mask.cloned());
    let one = |s: &Image| run_level(s, &guide, &init, &cfg.evolution, &strategy);
    let levels: Result<Vec<LevelOutcome>> = if parallel_levels {
        stack.maps.par_iter().map(one).collect()
    } else {
        stack.maps.iter().map(one).collect()
    };
    let levels = levels?;
    let merged = match merge {
        Some(net) => {
            if net.levels != levels.len() || net.image_channels != image.channels() {
                return Err(invalid(format!(
                    "merge network expects {} channels and {} levels, got {} and {}",
                    net.image_channels,
                    net.levels,
                    image.channels(),
                    levels.len()
                )));
            }
            Some(merge_forward(net, image, &evolved_saliencies(&levels))?)
        }
        None => None,
    };
    Ok(ImageResult {
        stack,
        levels,
        merged,
        wall_ms: start.elapsed().as_secs_f64() * 1e3,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StackRecord {
    pub image_id: String,
    /// 1-based level numbers in file order.
    pub layers: Vec<usize>,
    pub files: Vec<String>,
    pub decoder: DecoderParams,
    pub levels: Vec<DecodedLevel>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRecord {
    pub level: usize,
    #[serde(flatten)]
    pub run: LevelRun,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub image_id: String,
    pub levels: Vec<LevelRecord>,
    pub merged: bool,
    pub wall_ms: f64,
    pub budget_ms: Option<u64>,
    pub over_budget: bool,
}

fn file_name(p: &Path) -> String {
    p.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default()
}

/// Persists every artifact of one image and returns its run record.
pub fn write_artifacts(
    layout: &InferLayout,
    id: &str,
    result: &ImageResult,
    decoder: &DecoderParams,
    budget_ms: Option<u64>,
) -> Result<RunRecord> {
    let mut files = Vec::new();
    for (l, map) in result.stack.maps.iter().enumerate() {
        let p = layout.saliency(id, l + 1);
        write_image8(&p, map)?;
        files.push(file_name(&p));
    }
    let stack = StackRecord {
        image_id: id.to_string(),
        layers: (1..=result.stack.len()).collect(),
        files,
        decoder: *decoder,
        levels: result.stack.levels.clone(),
    };
    write_json(&layout.stack(id), &stack)?;
    for (l, level) in result.levels.iter().enumerate() {
        write_gray16(layout.probability(id, l + 1), &level.probability.values)?;
        write_mask(layout.mask(id, l + 1), &level.mask)?;
    }
    if let Some(m) = &result.merged {
        write_gray16(layout.merged(id), m)?;
    }
    let record = RunRecord {
        image_id: id.to_string(),
        levels: result
            .levels
            .iter()
            .enumerate()
            .map(|(l, o)| LevelRecord {
                level: l + 1,
                run: o.run.clone(),
            })
            .collect(),
        merged: result.merged.is_some(),
        wall_ms: result.wall_ms,
        budget_ms,
        over_budget: budget_ms.is_some_and(|b| result.wall_ms > b as f64),
    };
    write_json(&layout.run(id), &record)?;
    Ok(record)
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}
