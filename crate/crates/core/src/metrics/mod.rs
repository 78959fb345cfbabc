//! Salient object detection metrics and per-split reports.
//!
//! Predictions are single-channel maps in `[0, 1]`; ground truths are binary
//! masks. F-score, Dice and E-measure binarize the prediction with
//! `pred >= bin_threshold`.

mod structure;
mod weighted;

use std::collections::BTreeMap;
use std::path::Path;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Error, Result};
use crate::imagery::{connected_components, BinaryMask, Image};

pub use structure::smeasure;
pub use weighted::{distance_transform, weighted_fmeasure};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MetricParams {
    pub beta2: f64,
    pub wf_beta2: f64,
    pub alpha: f64,
    pub bin_threshold: f64,
}

impl Default for MetricParams {
    fn default() -> Self {
        MetricParams {
            beta2: 0.3,
            wf_beta2: 0.3,
            alpha: 0.5,
            bin_threshold: 0.5,
        }
    }
}

fn check(pred: &Image, gt: &BinaryMask) -> Result<()> {
    if pred.channels() != 1 || pred.width() != gt.width() || pred.height() != gt.height() {
        return Err(invalid(format!(
            "prediction {}x{}x{} does not match ground truth {}x{}",
            pred.width(),
            pred.height(),
            pred.channels(),
            gt.width(),
            gt.height()
        )));
    }
    if gt.bits().is_empty() {
        return Err(invalid("cannot score an empty domain"));
    }
    Ok(())
}

fn counts(pred: &Image, gt: &BinaryMask, thr: f64) -> (usize, usize, usize) {
    let (mut tp, mut np, mut ng) = (0, 0, 0);
    for (p, &g) in pred.data().iter().zip(gt.bits()) {
        let b = *p >= thr;
        tp += (b && g) as usize;
        np += b as usize;
        ng += g as usize;
    }
    (tp, np, ng)
}

pub fn fscore(pred: &Image, gt: &BinaryMask, beta2: f64, bin_threshold: f64) -> Result<f64> {
    check(pred, gt)?;
    let (tp, np, ng) = counts(pred, gt, bin_threshold);
    if np == 0 && ng == 0 {
        return Ok(1.0);
    }
    if tp == 0 {
        return Ok(0.0);
    }
    let (p, r) = (tp as f64 / np as f64, tp as f64 / ng as f64);
    Ok((1.0 + beta2) * p * r / (beta2 * p + r))
}

pub fn dice(pred: &Image, gt: &BinaryMask, bin_threshold: f64) -> Result<f64> {
    check(pred, gt)?;
    let (tp, np, ng) = counts(pred, gt, bin_threshold);
    if np + ng == 0 {
        return Ok(1.0);
    }
    Ok(2.0 * tp as f64 / (np + ng) as f64)
}

pub fn mae(pred: &Image, gt: &BinaryMask) -> Result<f64> {
    check(pred, gt)?;
    let total: f64 = pred.data().iter().zip(gt.bits()).map(|(p, &g)| (p - if g { 1.0 } else { 0.0 }).abs()).sum();
    Ok(total / gt.bits().len() as f64)
}

/// Enhanced-alignment measure of the binarized prediction, averaged over
/// the pixels.
pub fn emeasure(pred: &Image, gt: &BinaryMask, bin_threshold: f64) -> Result<f64> {
    check(pred, gt)?;
    let n = gt.bits().len();
    let (_, np, ng) = counts(pred, gt, bin_threshold);
    if ng == 0 {
        return Ok((n - np) as f64 / n as f64);
    }
    if ng == n {
        return Ok(np as f64 / n as f64);
    }
    let (mp, mg) = (np as f64 / n as f64, ng as f64 / n as f64);
    let sum: f64 = pred
        .data()
        .iter()
        .zip(gt.bits())
        .map(|(p, &g)| {
            let a = if *p >= bin_threshold { 1.0 } else { 0.0 } - mp;
            let b = if g { 1.0 } else { 0.0 } - mg;
            let align = 2.0 * a * b / (a * a + b * b + f64::EPSILON);
            (align + 1.0) * (align + 1.0) / 4.0
        })
        .sum();
    Ok(sum / n as f64)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricRow {
    pub id: String,
    pub fscore: f64,
    pub muwf: f64,
    pub dice: f64,
    pub emeasure: f64,
    pub smeasure: f64,
    pub mae: f64,
}

impl MetricRow {
    pub const NAMES: [&'static str; 6] = ["fscore", "muwf", "dice", "emeasure", "smeasure", "mae"];

    pub fn values(&self) -> [f64; 6] {
        [self.fscore, self.muwf, self.dice, self.emeasure, self.smeasure, self.mae]
    }
}

pub fn score_image(id: &str, pred: &Image, gt: &BinaryMask, params: &MetricParams) -> Result<MetricRow> {
    let pred = pred.map(|v| v.clamp(0.0, 1.0));
    Ok(MetricRow {
        id: id.to_string(),
        fscore: fscore(&pred, gt, params.beta2, params.bin_threshold)?,
        muwf: weighted_fmeasure(&pred, gt, params.wf_beta2),
        dice: dice(&pred, gt, params.bin_threshold)?,
        emeasure: emeasure(&pred, gt, params.bin_threshold)?,
        smeasure: smeasure(&pred, gt, params.alpha),
        mae: mae(&pred, gt)?,
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub mean: f64,
    pub stdev: f64,
}

impl Summary {
    /// Mean and population standard deviation.
    pub fn of(values: &[f64]) -> Summary {
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
        Summary { mean, stdev: var.sqrt() }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub per_image: Vec<MetricRow>,
    pub aggregate: BTreeMap<String, Summary>,
}

impl MetricReport {
    pub fn from_rows(per_image: Vec<MetricRow>) -> Result<Self> {
        if per_image.is_empty() {
            return Err(invalid("no images to aggregate"));
        }
        let mut aggregate = BTreeMap::new();
        for (i, name) in MetricRow::NAMES.iter().enumerate() {
            let vals: Vec<f64> = per_image.iter().map(|r| r.values()[i]).collect();
            aggregate.insert(name.to_string(), Summary::of(&vals));
        }
        Ok(MetricReport { per_image, aggregate })
    }

    pub fn mean(&self, metric: &str) -> Option<f64> {
        self.aggregate.get(metric).map(|s| s.mean)
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        let mut w = csv::Writer::from_path(path)?;
        for row in &self.per_image {
            w.serialize(row)?;
        }
        w.flush().map_err(|e| Error::io(path, e))
    }

    pub fn write_json(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(&self.aggregate)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }
}

/// Keeps only the prediction mass inside binarized components whose area
/// lies in `[min, max]`.
pub fn filter_by_area(pred: &Image, range: (usize, usize), bin_threshold: f64) -> Result<Image> {
    let kept = connected_components(&BinaryMask::at_least(pred, bin_threshold), range.0, range.1)?;
    let data = pred.data().iter().zip(kept.bits()).map(|(p, &k)| if k { *p } else { 0.0 }).collect();
    Image::from_vec(pred.width(), pred.height(), 1, data)
}

/// One prediction/ground-truth pair to score.
#[derive(Clone, Debug)]
pub struct EvalPair {
    pub id: String,
    pub pred: Image,
    pub gt: BinaryMask,
}

pub fn evaluate_split(
    pairs: &[EvalPair],
    area_range: Option<(usize, usize)>,
    params: &MetricParams,
) -> Result<MetricReport> {
    let rows: Result<Vec<MetricRow>> = pairs
        .par_iter()
        .map(|pair| {
            let pred = match area_range {
                Some(r) => filter_by_area(&pair.pred, r, params.bin_threshold)?,
                None => pair.pred.clone(),
            };
            score_image(&pair.id, &pred, &pair.gt, params)
        })
        .collect();
    MetricReport::from_rows(rows?)
}
