//! Cellular automata seeded by decoder saliency.
//!
//! Every cell holds a foreground strength, a background strength and a
//! label. Evolution lets each cell be conquered by the strongest attack of
//! its Moore neighbors, where an attack is the neighbor's strength damped by
//! the guide-image similarity of the two cells. The foreground strengths
//! evolve first, then the background strengths, sharing the label map.

mod threshold;

use std::time::Instant;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};
use crate::imagery::{dilate, BinaryMask, Image};

pub use threshold::{binarize, probability_map, ProbabilityMap, ThresholdKind, ThresholdStrategy, PROBABILITY_CLAMP};

/// Moore neighborhood in the fixed scan order used for tie-breaking.
pub const MOORE: [(isize, isize); 8] = [(-1, -1), (0, -1), (1, -1), (-1, 0), (1, 0), (-1, 1), (0, 1), (1, 1)];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SmoothingRule {
    /// Smooth when the attacker is foreground and the attacked cell is
    /// brighter (single-channel guides only).
    Brain,
    /// Smooth when the attacker is foreground and the guide distance is
    /// below `lab_threshold`.
    Parasite,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EvolutionConfig {
    pub beta: f64,
    pub smoothing_rule: SmoothingRule,
    pub lab_threshold: f64,
    pub convergence_eps: f64,
    pub max_iterations: usize,
}

impl Default for EvolutionConfig {
    fn default() -> Self {
        Self::parasite()
    }
}

impl EvolutionConfig {
    pub fn parasite() -> Self {
        EvolutionConfig {
            beta: 0.6,
            smoothing_rule: SmoothingRule::Parasite,
            lab_threshold: 0.2,
            convergence_eps: 1e-8,
            max_iterations: 10_000,
        }
    }

    pub fn brain() -> Self {
        EvolutionConfig {
            smoothing_rule: SmoothingRule::Brain,
            ..Self::parasite()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.beta > 0.0 && self.beta <= 1.0) {
            return Err(invalid(format!("beta must lie in (0, 1], got {}", self.beta)));
        }
        if !(self.convergence_eps > 0.0) {
            return Err(invalid("convergence epsilon must be positive"));
        }
        if self.max_iterations == 0 {
            return Err(invalid("max_iterations must be at least 1"));
        }
        Ok(())
    }
}

/// Which strength map an evolution updates.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ObjectLabel {
    Background,
    Foreground,
}

impl ObjectLabel {
    pub fn value(self) -> u8 {
        match self {
            ObjectLabel::Background => 0,
            ObjectLabel::Foreground => 1,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct CAState {
    pub theta_fg: Image,
    pub theta_bg: Image,
    pub labels: Image,
    pub guide: Image,
}

impl CAState {
    pub fn new(theta_fg: Image, theta_bg: Image, labels: Image, guide: Image) -> Result<Self> {
        let (w, h) = (guide.width(), guide.height());
        for (name, img) in [("foreground", &theta_fg), ("background", &theta_bg), ("label", &labels)] {
            if img.width() != w || img.height() != h || img.channels() != 1 {
                return Err(invalid(format!(
                    "{name} map must be single-channel {w}x{h}, got {}x{}x{}",
                    img.width(),
                    img.height(),
                    img.channels()
                )));
            }
        }
        for (name, img) in [("foreground", &theta_fg), ("background", &theta_bg)] {
            if img.data().iter().any(|v| !(0.0..=1.0).contains(v)) {
                return Err(invalid(format!("{name} strengths must lie in [0, 1]")));
            }
        }
        if labels.data().iter().any(|v| *v != 0.0 && *v != 1.0) {
            return Err(invalid("labels must be 0 or 1"));
        }
        Ok(CAState {
            theta_fg,
            theta_bg,
            labels,
            guide,
        })
    }

    pub fn width(&self) -> usize {
        self.guide.width()
    }

    pub fn height(&self) -> usize {
        self.guide.height()
    }

    pub fn theta(&self, ol: ObjectLabel) -> &Image {
        match ol {
            ObjectLabel::Foreground => &self.theta_fg,
            ObjectLabel::Background => &self.theta_bg,
        }
    }
}

pub fn init_foreground(saliency: &Image) -> Result<Image> {
    if saliency.channels() != 1 {
        return Err(invalid("saliency must be single-channel"));
    }
    Ok(saliency.min_max_normalized())
}

pub fn init_background_dilation(saliency: &Image, radius: usize) -> Result<Image> {
    Ok(dilate(saliency, radius as i64)?.map(|v| (1.0 - v).clamp(0.0, 1.0)))
}

pub fn init_background_prior(mask: &BinaryMask) -> Image {
    mask.complement().to_image()
}

pub fn init_labels(theta_fg: &Image) -> Image {
    theta_fg.map(|v| if v > 0.0 { 1.0 } else { 0.0 })
}

fn guide_distance(guide: &Image, p: (usize, usize), q: (usize, usize)) -> f64 {
    guide
        .pixel(p.0, p.1)
        .iter()
        .zip(guide.pixel(q.0, q.1))
        .map(|(a, b)| (a - b) * (a - b))
        .sum::<f64>()
        .sqrt()
}

/// The part of the smoothing test that does not depend on labels.
fn smoothing_applies(guide: &Image, p: (usize, usize), q: (usize, usize), d: f64, cfg: &EvolutionConfig) -> bool {
    match cfg.smoothing_rule {
        SmoothingRule::Brain => guide.channels() == 1 && guide.get(p.0, p.1, 0) > guide.get(q.0, q.1, 0),
        SmoothingRule::Parasite => d < cfg.lab_threshold,
    }
}

/// Similarity `g(p, q)` of cell `p` attacked by its neighbor `q`.
pub fn similarity(state: &CAState, p: (usize, usize), q: (usize, usize), cfg: &EvolutionConfig) -> f64 {
    let d = guide_distance(&state.guide, p, q);
    let attacker_fg = state.labels.get(q.0, q.1, 0) == 1.0;
    if attacker_fg && smoothing_applies(&state.guide, p, q, d, cfg) {
        (-cfg.beta * d).exp()
    } else {
        (-d).exp()
    }
}

/// Per-cell attack weights for both label states of the attacker.
/// Out-of-lattice neighbors get weight zero, which can never conquer.
struct EdgeWeights {
    plain: Vec<[f64; 8]>,
    smooth: Vec<[f64; 8]>,
}

impl EdgeWeights {
    fn new(guide: &Image, cfg: &EvolutionConfig) -> Self {
        let (w, h) = (guide.width(), guide.height());
        let rows: Vec<(Vec<[f64; 8]>, Vec<[f64; 8]>)> = (0..h)
            .into_par_iter()
            .map(|y| {
                let mut plain = vec![[0.0; 8]; w];
                let mut smooth = vec![[0.0; 8]; w];
                for x in 0..w {
                    for (k, (dx, dy)) in MOORE.iter().enumerate() {
                        let (qx, qy) = (x as isize + dx, y as isize + dy);
                        if qx < 0 || qy < 0 || qx >= w as isize || qy >= h as isize {
                            continue;
                        }
                        let q = (qx as usize, qy as usize);
                        let d = guide_distance(guide, (x, y), q);
                        plain[x][k] = (-d).exp();
                        smooth[x][k] =
                            if smoothing_applies(guide, (x, y), q, d, cfg) { (-cfg.beta * d).exp() } else { plain[x][k] };
                    }
                }
                (plain, smooth)
            })
            .collect();
        let mut out = EdgeWeights {
            plain: Vec::with_capacity(w * h),
            smooth: Vec::with_capacity(w * h),
        };
        for (p, s) in rows {
            out.plain.extend(p);
            out.smooth.extend(s);
        }
        out
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolutionReport {
    pub object_label: ObjectLabel,
    pub iterations: usize,
    pub final_dist: f64,
    pub converged: bool,
    pub wall_ms: f64,
}

pub fn evolve(state: &mut CAState, ol: ObjectLabel, cfg: &EvolutionConfig) -> Result<EvolutionReport> {
    evolve_traced(state, ol, cfg, |_, _, _| {})
}

/// Like [`evolve`], calling `on_step(t, theta, labels)` after every
/// generation with the freshly computed strengths and labels.
pub fn evolve_traced(
    state: &mut CAState,
    ol: ObjectLabel,
    cfg: &EvolutionConfig,
    mut on_step: impl FnMut(usize, &[f64], &[f64]),
) -> Result<EvolutionReport> {
    cfg.validate()?;
    let started = Instant::now();
    let (w, h) = (state.width(), state.height());
    let n = w * h;
    let weights = EdgeWeights::new(&state.guide, cfg);

    let mut theta = state.theta(ol).data().to_vec();
    let mut labels = state.labels.data().to_vec();
    let mut next_theta = theta.clone();
    let mut next_labels = labels.clone();
    // A cell can only be conquered in generation t+1 if one of its neighbors
    // changed in generation t; everything is a candidate at the start.
    let mut active = vec![true; n];
    let mut changed = vec![false; n];

    let mut iterations = 0;
    let mut dist = f64::INFINITY;
    while iterations < cfg.max_iterations {
        next_theta.copy_from_slice(&theta);
        next_labels.copy_from_slice(&labels);
        let row_sums: Vec<f64> = next_theta
            .par_chunks_mut(w.max(1))
            .zip(next_labels.par_chunks_mut(w.max(1)))
            .zip(changed.par_chunks_mut(w.max(1)))
            .enumerate()
            .map(|(y, ((t_row, l_row), c_row))| {
                let mut sum = 0.0;
                for x in 0..w {
                    let p = y * w + x;
                    c_row[x] = false;
                    if !active[p] {
                        continue;
                    }
                    let mut q_max = theta[p];
                    let mut label = labels[p];
                    for (k, (dx, dy)) in MOORE.iter().enumerate() {
                        let g = if labels_at(&labels, w, x, y, *dx, *dy) == Some(1.0) {
                            weights.smooth[p][k]
                        } else {
                            weights.plain[p][k]
                        };
                        if g == 0.0 {
                            continue;
                        }
                        let q = ((y as isize + dy) as usize) * w + (x as isize + dx) as usize;
                        let q_aux = g * theta[q];
                        if q_aux > q_max {
                            q_max = q_aux;
                            label = labels[q];
                        }
                    }
                    if q_max != theta[p] || label != labels[p] {
                        t_row[x] = q_max;
                        l_row[x] = label;
                        c_row[x] = true;
                        sum += (q_max - theta[p]) * (q_max - theta[p]);
                    }
                }
                sum
            })
            .collect();
        iterations += 1;
        dist = row_sums.iter().sum::<f64>().sqrt() / n as f64;
        std::mem::swap(&mut theta, &mut next_theta);
        std::mem::swap(&mut labels, &mut next_labels);
        on_step(iterations, &theta, &labels);
        if dist <= cfg.convergence_eps {
            break;
        }
        mark_neighbors(&changed, &mut active, w, h);
    }

    let converged = dist <= cfg.convergence_eps;
    let theta_img = Image::from_vec(w, h, 1, theta)?;
    match ol {
        ObjectLabel::Foreground => state.theta_fg = theta_img,
        ObjectLabel::Background => state.theta_bg = theta_img,
    }
    state.labels = Image::from_vec(w, h, 1, labels)?;
    Ok(EvolutionReport {
        object_label: ol,
        iterations,
        final_dist: dist,
        converged,
        wall_ms: started.elapsed().as_secs_f64() * 1e3,
    })
}

#[inline]
fn labels_at(labels: &[f64], w: usize, x: usize, y: usize, dx: isize, dy: isize) -> Option<f64> {
    let (qx, qy) = (x as isize + dx, y as isize + dy);
    if qx < 0 || qy < 0 || qx >= w as isize {
        return None;
    }
    labels.get(qy as usize * w + qx as usize).copied()
}

fn mark_neighbors(changed: &[bool], active: &mut [bool], w: usize, h: usize) {
    active.iter_mut().for_each(|a| *a = false);
    for y in 0..h {
        for x in 0..w {
            if !changed[y * w + x] {
                continue;
            }
            for (dx, dy) in MOORE {
                let (qx, qy) = (x as isize + dx, y as isize + dy);
                if qx >= 0 && qy >= 0 && qx < w as isize && qy < h as isize {
                    active[qy as usize * w + qx as usize] = true;
                }
            }
        }
    }
}

/// How the background strengths are seeded.
#[derive(Clone, Debug, PartialEq)]
pub enum BackgroundInit {
    /// Complement of the saliency after a disk dilation of this radius.
    Dilation(usize),
    /// Zero inside the mask, one outside.
    Prior(BinaryMask),
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LevelRun {
    pub foreground: EvolutionReport,
    pub background: EvolutionReport,
    pub threshold: Option<f64>,
    pub mask_area: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct LevelOutcome {
    pub probability: ProbabilityMap,
    pub mask: BinaryMask,
    pub run: LevelRun,
}

/// Initializes, evolves and binarizes one level.
pub fn run_level(
    saliency: &Image,
    guide: &Image,
    init: &BackgroundInit,
    cfg: &EvolutionConfig,
    strategy: &ThresholdStrategy,
) -> Result<LevelOutcome> {
    if saliency.width() != guide.width() || saliency.height() != guide.height() {
        return Err(invalid(format!(
            "saliency is {}x{} but the guide is {}x{}",
            saliency.width(),
            saliency.height(),
            guide.width(),
            guide.height()
        )));
    }
    let theta_fg = init_foreground(saliency)?;
    let theta_bg = match init {
        BackgroundInit::Dilation(radius) => init_background_dilation(&theta_fg, *radius)?,
        BackgroundInit::Prior(mask) => {
            if mask.width() != guide.width() || mask.height() != guide.height() {
                return Err(invalid("prior mask does not match the guide"));
            }
            init_background_prior(mask)
        }
    };
    let labels = init_labels(&theta_fg);
    let mut state = CAState::new(theta_fg, theta_bg, labels, guide.clone())?;
    let foreground = evolve(&mut state, ObjectLabel::Foreground, cfg)?;
    let background = evolve(&mut state, ObjectLabel::Background, cfg)?;
    let probability = probability_map(&state.theta_fg, &state.theta_bg)?;
    let (mut mask, threshold) = threshold::binarize_with_threshold(&probability, guide, strategy)?;
    if let BackgroundInit::Prior(prior) = init {
        mask = mask.and(prior);
    }
    let mask_area = mask.count();
    Ok(LevelOutcome {
        probability,
        mask,
        run: LevelRun {
            foreground,
            background,
            threshold,
            mask_area,
        },
    })
}
