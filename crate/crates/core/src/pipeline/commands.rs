//! Batch commands behind the CLI verbs.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::config::{MetricsConfig, ParallelAxis, PipelineConfig};
use super::manifest::{DatasetManifest, ManifestEntry};
use super::run::{evolved_saliencies, process_image, write_artifacts, write_json, InferLayout, RunRecord};
use super::synth::{write_family, SynthFamilyOutput, SynthOptions};
use super::{Classify, PipelineError};
use crate::encoder::{save_model as save_encoder, train_encoder, Architecture, EncoderModel, EncoderSummary, Marker};
use crate::error::{invalid, Error};
use crate::imagery::io::read_image;
use crate::imagery::{BinaryMask, Image};
use crate::merge::{save_model as save_merge, train, write_training_log, MergeModelFile, MergeNet, TrainSample};
use crate::metrics::{evaluate_split, EvalPair, MetricReport, Summary};

type Outcome<T> = std::result::Result<T, PipelineError>;

/// Runs `f` on a pool of `jobs` threads, or on the global pool.
pub fn with_jobs<T: Send>(jobs: Option<usize>, f: impl FnOnce() -> T + Send) -> Outcome<T> {
    match jobs {
        None => Ok(f()),
        Some(0) => Err(PipelineError::Config(invalid("--jobs must be at least 1"))),
        Some(n) => {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(n)
                .build()
                .map_err(|e| PipelineError::Config(invalid(e.to_string())))?;
            Ok(pool.install(f))
        }
    }
}

/// Learns the encoder from the markers on `split` and writes the model
/// (plus JSON mirror) and a summary next to `model_path`.
pub fn cmd_learn_encoder(
    manifest: &DatasetManifest,
    split: Option<&str>,
    markers: &[Marker],
    arch: &Architecture,
    seed: u64,
    model_path: &Path,
) -> Outcome<EncoderSummary> {
    if markers.is_empty() {
        return Err(PipelineError::Data(invalid("no markers were given")));
    }
    let entries = manifest.split(split)?;
    let mut images = BTreeMap::new();
    for m in markers {
        if images.contains_key(&m.image_id) {
            continue;
        }
        let entry = entries.iter().find(|e| e.image_id == m.image_id).ok_or_else(|| {
            PipelineError::Data(invalid(format!("marker references image '{}' outside the split", m.image_id)))
        })?;
        images.insert(m.image_id.clone(), entry.read_image().data()?);
    }
    let (model, summary) = train_encoder(&images, markers, arch, seed).data()?;
    save_encoder(model_path, &model).data()?;
    write_json(&model_path.with_file_name("summary.json"), &summary).data()?;
    Ok(summary)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InferReport {
    pub images: Vec<RunRecord>,
    pub merged: bool,
    /// Ids whose wall time exceeded the configured budget.
    pub over_budget: Vec<String>,
}

fn load_inputs(entry: &ManifestEntry) -> Outcome<(Image, Option<BinaryMask>)> {
    Ok((entry.read_image().data()?, entry.read_mask().data()?))
}

/// Runs the full chain on every image of `split` and persists the artifact
/// tree under `out`. Without a merge network only per-level outputs are
/// written.
pub fn cmd_infer(
    manifest: &DatasetManifest,
    split: Option<&str>,
    encoder: &EncoderModel,
    merge: Option<&MergeNet>,
    cfg: &PipelineConfig,
    jobs: Option<usize>,
    out: &Path,
) -> Outcome<InferReport> {
    let entries = manifest.split(split)?;
    cfg.check_entries(&entries)?;
    let layout = InferLayout::new(out);
    let one = |entry: &&ManifestEntry, parallel_levels: bool| -> Outcome<RunRecord> {
        let (image, mask) = load_inputs(entry)?;
        let result = process_image(&image, mask.as_ref(), encoder, merge, cfg, parallel_levels).data()?;
        write_artifacts(&layout, &entry.image_id, &result, &cfg.decoder, cfg.wall_time_budget_ms).data()
    };
    let records: Outcome<Vec<RunRecord>> = with_jobs(jobs, || match cfg.parallel_axis {
        ParallelAxis::Levels => entries.iter().map(|e| one(e, true)).collect(),
        ParallelAxis::Images => entries.par_iter().map(|e| one(e, false)).collect(),
    })?;
    let images = records?;
    let report = InferReport {
        over_budget: images.iter().filter(|r| r.over_budget).map(|r| r.image_id.clone()).collect(),
        merged: merge.is_some(),
        images,
    };
    write_json(&layout.summary(), &report).data()?;
    Ok(report)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainMergeReport {
    pub samples: usize,
    pub first_loss: f64,
    pub final_loss: f64,
}

/// Builds training samples (image, evolved saliencies, ground truth) from
/// `split`, trains the merge network and writes the model and loss log.
pub fn cmd_train_merge(
    manifest: &DatasetManifest,
    split: Option<&str>,
    encoder: &EncoderModel,
    cfg: &PipelineConfig,
    jobs: Option<usize>,
    model_path: &Path,
    log_path: &Path,
) -> Outcome<TrainMergeReport> {
    let entries = manifest.split(split)?;
    if entries.is_empty() {
        return Err(PipelineError::Data(invalid("the training split is empty")));
    }
    if let Some(e) = entries.iter().find(|e| e.gt_path.is_none()) {
        return Err(PipelineError::Data(invalid(format!("training image '{}' has no ground truth", e.image_id))));
    }
    cfg.check_entries(&entries)?;
    let samples: Outcome<Vec<TrainSample>> = with_jobs(jobs, || {
        entries
            .iter()
            .map(|entry| {
                let (image, mask) = load_inputs(entry)?;
                let gt = entry.read_gt().data()?.expect("checked above");
                let result = process_image(&image, mask.as_ref(), encoder, None, cfg, true).data()?;
                TrainSample::new(image, evolved_saliencies(&result.levels), gt).data()
            })
            .collect()
    })?;
    let samples = samples?;
    let outcome = train(&samples, &cfg.merge).map_err(PipelineError::Config)?;
    let file = MergeModelFile {
        net: outcome.net.clone(),
        config: cfg.merge.clone(),
        final_loss: outcome.final_loss(),
    };
    if let Some(parent) = model_path.parent() {
        std::fs::create_dir_all(parent).map_err(|e| PipelineError::Data(Error::io(parent, e)))?;
    }
    save_merge(model_path, &file).data()?;
    write_training_log(log_path, &outcome.log).data()?;
    Ok(TrainMergeReport {
        samples: samples.len(),
        first_loss: outcome.log[0].loss,
        final_loss: outcome.final_loss(),
    })
}

/// Prediction sources scored by `cmd_evaluate`.
#[derive(Clone, Debug, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variant {
    /// Decoded encoder saliency of a level.
    Flim(usize),
    /// Evolved binary saliency of a level.
    Ca(usize),
    Merged,
}

impl Variant {
    pub fn name(&self) -> String {
        match self {
            Variant::Flim(l) => format!("flim_layer{l}"),
            Variant::Ca(l) => format!("ca_layer{l}"),
            Variant::Merged => "merged".to_string(),
        }
    }

    fn path(&self, layout: &InferLayout, id: &str) -> PathBuf {
        match self {
            Variant::Flim(l) => layout.saliency(id, *l),
            Variant::Ca(l) => layout.mask(id, *l),
            Variant::Merged => layout.merged(id),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub reports: BTreeMap<String, MetricReport>,
    /// Images left out because they have no ground truth.
    pub skipped: Vec<String>,
}

impl EvaluationReport {
    /// Aggregate table: variant → metric → summary.
    pub fn table(&self) -> BTreeMap<String, BTreeMap<String, Summary>> {
        self.reports.iter().map(|(k, r)| (k.clone(), r.aggregate.clone())).collect()
    }
}

fn detect_variants(layout: &InferLayout, id: &str) -> Vec<Variant> {
    let mut out = Vec::new();
    let mut l = 1;
    while layout.saliency(id, l).is_file() {
        out.push(Variant::Flim(l));
        l += 1;
    }
    let mut l = 1;
    while layout.mask(id, l).is_file() {
        out.push(Variant::Ca(l));
        l += 1;
    }
    if layout.merged(id).is_file() {
        out.push(Variant::Merged);
    }
    out
}

/// Scores the inference artifacts in `predictions` against the ground
/// truths of `split`, one report per variant (each encoder level, each
/// evolved level, the merged map). Images without ground truth are skipped
/// with a warning on stderr.
pub fn cmd_evaluate(
    manifest: &DatasetManifest,
    split: Option<&str>,
    predictions: &Path,
    metrics: &MetricsConfig,
    out: &Path,
) -> Outcome<EvaluationReport> {
    let entries = manifest.split(split)?;
    let layout = InferLayout::new(predictions);
    let mut skipped = Vec::new();
    let mut scored = Vec::new();
    for e in entries {
        match e.read_gt().data()? {
            Some(gt) => scored.push((e.image_id.clone(), gt)),
            None => {
                eprintln!("warning: '{}' has no ground truth and is skipped", e.image_id);
                skipped.push(e.image_id.clone());
            }
        }
    }
    let Some((first, _)) = scored.first() else {
        return Err(PipelineError::Data(invalid("no image in the split has a ground truth")));
    };
    let variants = detect_variants(&layout, first);
    if variants.is_empty() {
        return Err(PipelineError::Data(invalid(format!(
            "no predictions for '{first}' under {}",
            predictions.display()
        ))));
    }
    let mut reports = BTreeMap::new();
    for v in variants {
        let pairs: Outcome<Vec<EvalPair>> = scored
            .iter()
            .map(|(id, gt)| {
                let path = v.path(&layout, id);
                if !path.is_file() {
                    return Err(PipelineError::Data(invalid(format!("missing prediction {}", path.display()))));
                }
                Ok(EvalPair {
                    id: id.clone(),
                    pred: read_image(&path).data()?.intensity(),
                    gt: gt.clone(),
                })
            })
            .collect();
        let report = evaluate_split(&pairs?, metrics.area_range, &metrics.params).data()?;
        let name = v.name();
        std::fs::create_dir_all(out).map_err(|e| PipelineError::Data(Error::io(out, e)))?;
        report.write_csv(&out.join(format!("{name}.csv"))).data()?;
        report.write_json(&out.join(format!("{name}.json"))).data()?;
        reports.insert(name, report);
    }
    let report = EvaluationReport { reports, skipped };
    write_json(&out.join("summary.json"), &report.table()).data()?;
    Ok(report)
}

/// Writes every requested synthetic family under `out`.
pub fn cmd_synth(opts: &SynthOptions, out: &Path) -> Outcome<Vec<SynthFamilyOutput>> {
    opts.validate().map_err(PipelineError::Config)?;
    opts.families.iter().map(|f| write_family(out, *f, opts).data()).collect()
}
