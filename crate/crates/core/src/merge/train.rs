use std::f64::consts::PI;
use std::path::Path;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::augment::{AugmentConfig, AugmentTransform};
use super::{merge_backward, MergeNet, TrainSample};
use crate::error::{invalid, Error, Result};

/// Cosine annealing from the base rate down to `min_lr`, restarting every
/// `period` epochs.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct SchedulerConfig {
    pub period: usize,
    pub min_lr: f64,
}

impl Default for SchedulerConfig {
    fn default() -> Self {
        SchedulerConfig {
            period: 1000,
            min_lr: 0.0,
        }
    }
}

/// Learning rate for the zero-based `epoch`.
pub fn cosine_lr(base: f64, sched: &SchedulerConfig, epoch: usize) -> f64 {
    let period = sched.period.max(1);
    let phase = (epoch % period) as f64 / period as f64;
    sched.min_lr + 0.5 * (base - sched.min_lr) * (1.0 + (PI * phase).cos())
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub lr: f64,
    pub l1_lambda: f64,
    pub scheduler: SchedulerConfig,
    pub seed: u64,
    pub augment: AugmentConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 2000,
            lr: 1e-2,
            l1_lambda: 1e-3,
            scheduler: SchedulerConfig::default(),
            seed: 0,
            augment: AugmentConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 {
            return Err(invalid("epochs must be at least 1"));
        }
        if !(self.lr > 0.0) {
            return Err(invalid("learning rate must be positive"));
        }
        if !(self.l1_lambda >= 0.0) {
            return Err(invalid("l1 lambda must be non-negative"));
        }
        if !(self.scheduler.min_lr >= 0.0 && self.scheduler.min_lr <= self.lr) {
            return Err(invalid("min_lr must lie in [0, lr]"));
        }
        self.augment.validate()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n: usize) -> Self {
        Adam {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64], lr: f64) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            let (mh, vh) = (self.m[i] / c1, self.v[i] / c2);
            params[i] -= lr * mh / (vh.sqrt() + self.eps);
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub epoch: usize,
    pub lr: f64,
    pub loss: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainOutcome {
    pub net: MergeNet,
    pub log: Vec<LogRow>,
}

impl TrainOutcome {
    pub fn final_loss(&self) -> f64 {
        self.log.last().map_or(f64::NAN, |r| r.loss)
    }
}

/// Full-batch training: every epoch each sample gets one freshly sampled
/// augmentation, gradients are averaged, and Adam takes one step.
pub fn train(samples: &[TrainSample], cfg: &TrainConfig) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = samples.first().ok_or_else(|| invalid("merge training needs at least one sample"))?;
    let (c, l) = (first.image.channels(), first.saliencies.len());
    if l == 0 {
        return Err(invalid("merge training needs at least one saliency map"));
    }
    if samples.iter().any(|s| s.image.channels() != c || s.saliencies.len() != l) {
        return Err(invalid("all samples must share channel and saliency counts"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut net = MergeNet::random(c, l, &mut rng);
    let mut params = net.params();
    let mut adam = Adam::new(params.len());
    let mut log = Vec::with_capacity(cfg.epochs);
    let identity = AugmentTransform::identity();

    for epoch in 0..cfg.epochs {
        let lr = cosine_lr(cfg.lr, &cfg.scheduler, epoch);
        let mut grad = vec![0.0; params.len()];
        let mut loss = 0.0;
        for s in samples {
            let (w, h) = (s.image.width(), s.image.height());
            let t = AugmentTransform::sample(&cfg.augment, w, h, &mut rng)?;
            let g = if t == identity {
                merge_backward(&net, s, cfg.l1_lambda)?
            } else {
                merge_backward(&net, &t.apply(s), cfg.l1_lambda)?
            };
            loss += g.loss;
            for (a, b) in grad.iter_mut().zip(&g.grad) {
                *a += b;
            }
        }
        let k = samples.len() as f64;
        grad.iter_mut().for_each(|g| *g /= k);
        log.push(LogRow {
            epoch: epoch + 1,
            lr,
            loss: loss / k,
        });
        adam.step(&mut params, &grad, lr);
        net.set_params(&params)?;
    }
    Ok(TrainOutcome { net, log })
}

/// On-disk merge model: parameters, the training configuration and the
/// final loss.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MergeModelFile {
    #[serde(flatten)]
    pub net: MergeNet,
    pub config: TrainConfig,
    pub final_loss: f64,
}

pub fn save_model(path: &Path, model: &MergeModelFile) -> Result<()> {
    let json = serde_json::to_string_pretty(model)?;
    std::fs::write(path, json).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: &Path) -> Result<MergeModelFile> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let model: MergeModelFile = serde_json::from_str(&text)?;
    model.net.validate()?;
    Ok(model)
}

pub fn write_training_log(path: &Path, log: &[LogRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path)?;
    for row in log {
        w.serialize(row)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_training_log(path: &Path) -> Result<Vec<LogRow>> {
    let mut r = csv::Reader::from_path(path)?;
    r.deserialize().map(|row| row.map_err(Error::from)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cosine_schedule_endpoints_and_restart() {
        let s = SchedulerConfig {
            period: 10,
            min_lr: 0.001,
        };
        assert!((cosine_lr(0.01, &s, 0) - 0.01).abs() < 1e-15);
        assert!((cosine_lr(0.01, &s, 5) - 0.0055).abs() < 1e-15);
        assert_eq!(cosine_lr(0.01, &s, 10), cosine_lr(0.01, &s, 0));
        assert!(cosine_lr(0.01, &s, 9) < cosine_lr(0.01, &s, 8));
    }

    #[test]
    fn adam_first_step_moves_by_lr() {
        let mut p = vec![1.0, -2.0, 0.5];
        let mut adam = Adam::new(3);
        adam.step(&mut p, &[0.3, -4.0, 0.0], 0.1);
        assert!((p[0] - 0.9).abs() < 1e-6);
        assert!((p[1] + 1.9).abs() < 1e-6);
        assert_eq!(p[2], 0.5);
    }
}
