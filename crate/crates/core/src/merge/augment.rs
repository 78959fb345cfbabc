//! Paired geometric and photometric augmentation.
//!
//! Every sampled pipeline collapses into one projective transform (recorded
//! as the output-to-source homography) plus an optional sharpness factor, so
//! the exact same warp can be replayed on the image, each saliency map and
//! the target mask.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainSample;
use crate::error::{invalid, Result};
use crate::imagery::{BinaryMask, Image};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Interpolation {
    Bilinear,
    Nearest,
}

/// Probabilities and ranges of each transform, applied in field order.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AugmentConfig {
    pub crop_p: f64,
    pub crop_scale: (f64, f64),
    pub hflip_p: f64,
    pub vflip_p: f64,
    pub rotate_p: f64,
    pub rotate_degrees: f64,
    pub sharpness_p: f64,
    pub sharpness_factor: (f64, f64),
    pub affine_p: f64,
    pub affine_translate: f64,
    pub affine_shear_degrees: f64,
    pub perspective_p: f64,
    pub perspective_distortion: f64,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        AugmentConfig {
            crop_p: 1.0,
            crop_scale: (0.8, 1.0),
            hflip_p: 0.5,
            vflip_p: 0.5,
            rotate_p: 0.5,
            rotate_degrees: 30.0,
            sharpness_p: 0.5,
            sharpness_factor: (0.5, 2.0),
            affine_p: 0.5,
            affine_translate: 0.1,
            affine_shear_degrees: 10.0,
            perspective_p: 0.5,
            perspective_distortion: 0.2,
        }
    }
}

impl AugmentConfig {
    /// Every probability zero: the identity pipeline.
    pub fn disabled() -> Self {
        AugmentConfig {
            crop_p: 0.0,
            hflip_p: 0.0,
            vflip_p: 0.0,
            rotate_p: 0.0,
            sharpness_p: 0.0,
            affine_p: 0.0,
            perspective_p: 0.0,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let probs = [
            self.crop_p,
            self.hflip_p,
            self.vflip_p,
            self.rotate_p,
            self.sharpness_p,
            self.affine_p,
            self.perspective_p,
        ];
        if probs.iter().any(|p| !(0.0..=1.0).contains(p)) {
            return Err(invalid("augmentation probabilities must lie in [0, 1]"));
        }
        let (s0, s1) = self.crop_scale;
        if !(0.0 < s0 && s0 <= s1 && s1 <= 1.0) {
            return Err(invalid("crop scale must satisfy 0 < lo <= hi <= 1"));
        }
        let (f0, f1) = self.sharpness_factor;
        if !(0.0 <= f0 && f0 <= f1) {
            return Err(invalid("sharpness factors must satisfy 0 <= lo <= hi"));
        }
        if !(0.0..0.5).contains(&self.perspective_distortion) {
            return Err(invalid("perspective distortion must lie in [0, 0.5)"));
        }
        Ok(())
    }
}

type Mat3 = [[f64; 3]; 3];

const IDENTITY: Mat3 = [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];

fn mul(a: &Mat3, b: &Mat3) -> Mat3 {
    let mut out = [[0.0; 3]; 3];
    for i in 0..3 {
        for j in 0..3 {
            out[i][j] = (0..3).map(|k| a[i][k] * b[k][j]).sum();
        }
    }
    out
}

fn invert(m: &Mat3) -> Option<Mat3> {
    let det = m[0][0] * (m[1][1] * m[2][2] - m[1][2] * m[2][1]) - m[0][1] * (m[1][0] * m[2][2] - m[1][2] * m[2][0])
        + m[0][2] * (m[1][0] * m[2][1] - m[1][1] * m[2][0]);
    if det.abs() < 1e-12 {
        return None;
    }
    let c = |r0: usize, r1: usize, c0: usize, c1: usize| m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0];
    Some([
        [c(1, 2, 1, 2) / det, -c(0, 2, 1, 2) / det, c(0, 1, 1, 2) / det],
        [-c(1, 2, 0, 2) / det, c(0, 2, 0, 2) / det, -c(0, 1, 0, 2) / det],
        [c(1, 2, 0, 1) / det, -c(0, 2, 0, 1) / det, c(0, 1, 0, 1) / det],
    ])
}

fn translation(tx: f64, ty: f64) -> Mat3 {
    [[1.0, 0.0, tx], [0.0, 1.0, ty], [0.0, 0.0, 1.0]]
}

/// `m` applied about the point `(cx, cy)`.
fn about(m: Mat3, cx: f64, cy: f64) -> Mat3 {
    mul(&translation(cx, cy), &mul(&m, &translation(-cx, -cy)))
}

/// Homography taking the four `src` points onto `dst`.
fn homography(src: [(f64, f64); 4], dst: [(f64, f64); 4]) -> Option<Mat3> {
    let mut a = [[0.0f64; 9]; 8];
    for (i, ((x, y), (u, v))) in src.iter().zip(dst.iter()).enumerate() {
        a[2 * i] = [*x, *y, 1.0, 0.0, 0.0, 0.0, -u * x, -u * y, *u];
        a[2 * i + 1] = [0.0, 0.0, 0.0, *x, *y, 1.0, -v * x, -v * y, *v];
    }
    for col in 0..8 {
        let pivot = (col..8).max_by(|&i, &j| a[i][col].abs().total_cmp(&a[j][col].abs()))?;
        if a[pivot][col].abs() < 1e-12 {
            return None;
        }
        a.swap(col, pivot);
        for row in 0..8 {
            if row != col {
                let f = a[row][col] / a[col][col];
                for k in col..9 {
                    a[row][k] -= f * a[col][k];
                }
            }
        }
    }
    let h: Vec<f64> = (0..8).map(|i| a[i][8] / a[i][i]).collect();
    Some([[h[0], h[1], h[2]], [h[3], h[4], h[5]], [h[6], h[7], 1.0]])
}

/// A replayable augmentation: output pixel `(x, y)` samples the source at
/// `inverse · (x, y, 1)`; sharpness (if any) is applied to images only.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AugmentTransform {
    pub inverse: [[f64; 3]; 3],
    pub sharpness: Option<f64>,
}

impl AugmentTransform {
    pub fn identity() -> Self {
        AugmentTransform {
            inverse: IDENTITY,
            sharpness: None,
        }
    }

    pub fn sample(cfg: &AugmentConfig, width: usize, height: usize, rng: &mut ChaCha8Rng) -> Result<Self> {
        cfg.validate()?;
        let (w, h) = (width as f64, height as f64);
        let (cx, cy) = ((w - 1.0) / 2.0, (h - 1.0) / 2.0);
        // forward map, source -> output, built up transform by transform
        let mut fwd = IDENTITY;
        let mut sharpness = None;
        if rng.gen_bool(cfg.crop_p) {
            let s = rng.gen_range(cfg.crop_scale.0..=cfg.crop_scale.1);
            let (cw, ch) = (w * s, h * s);
            let (ox, oy) = (rng.gen_range(0.0..=w - cw), rng.gen_range(0.0..=h - ch));
            let scale = [[w / cw, 0.0, 0.0], [0.0, h / ch, 0.0], [0.0, 0.0, 1.0]];
            fwd = mul(&mul(&scale, &translation(-ox, -oy)), &fwd);
        }
        if rng.gen_bool(cfg.hflip_p) {
            fwd = mul(&[[-1.0, 0.0, w - 1.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]], &fwd);
        }
        if rng.gen_bool(cfg.vflip_p) {
            fwd = mul(&[[1.0, 0.0, 0.0], [0.0, -1.0, h - 1.0], [0.0, 0.0, 1.0]], &fwd);
        }
        if rng.gen_bool(cfg.rotate_p) {
            let a = rng.gen_range(-cfg.rotate_degrees..=cfg.rotate_degrees).to_radians();
            let r = [[a.cos(), -a.sin(), 0.0], [a.sin(), a.cos(), 0.0], [0.0, 0.0, 1.0]];
            fwd = mul(&about(r, cx, cy), &fwd);
        }
        if rng.gen_bool(cfg.sharpness_p) {
            sharpness = Some(rng.gen_range(cfg.sharpness_factor.0..=cfg.sharpness_factor.1));
        }
        if rng.gen_bool(cfg.affine_p) {
            let t = cfg.affine_translate;
            let (tx, ty) = (rng.gen_range(-t..=t) * w, rng.gen_range(-t..=t) * h);
            let sh = rng.gen_range(-cfg.affine_shear_degrees..=cfg.affine_shear_degrees).to_radians();
            let shear = [[1.0, sh.tan(), 0.0], [0.0, 1.0, 0.0], [0.0, 0.0, 1.0]];
            fwd = mul(&mul(&translation(tx, ty), &about(shear, cx, cy)), &fwd);
        }
        if rng.gen_bool(cfg.perspective_p) {
            let d = cfg.perspective_distortion;
            let (dx, dy) = (d * w / 2.0, d * h / 2.0);
            let corners = [(0.0, 0.0), (w - 1.0, 0.0), (w - 1.0, h - 1.0), (0.0, h - 1.0)];
            let inward = [(1.0, 1.0), (-1.0, 1.0), (-1.0, -1.0), (1.0, -1.0)];
            let mut moved = corners;
            for (m, (sx, sy)) in moved.iter_mut().zip(inward) {
                m.0 += sx * rng.gen_range(0.0..=dx);
                m.1 += sy * rng.gen_range(0.0..=dy);
            }
            if let Some(p) = homography(corners, moved) {
                fwd = mul(&p, &fwd);
            }
        }
        let inverse = invert(&fwd).ok_or_else(|| invalid("sampled augmentation is singular"))?;
        Ok(AugmentTransform { inverse, sharpness })
    }

    fn source(&self, x: f64, y: f64) -> (f64, f64) {
        let m = &self.inverse;
        let z = m[2][0] * x + m[2][1] * y + m[2][2];
        ((m[0][0] * x + m[0][1] * y + m[0][2]) / z, (m[1][0] * x + m[1][1] * y + m[1][2]) / z)
    }

    /// Warps every channel; samples outside the source read as zero.
    pub fn warp(&self, img: &Image, interp: Interpolation) -> Image {
        let (w, h, c) = (img.width(), img.height(), img.channels());
        let mut out = Image::new(w, h, c);
        let inside = |x: isize, y: isize| x >= 0 && y >= 0 && x < w as isize && y < h as isize;
        for y in 0..h {
            for x in 0..w {
                let (sx, sy) = self.source(x as f64, y as f64);
                match interp {
                    Interpolation::Nearest => {
                        let (ix, iy) = (sx.round() as isize, sy.round() as isize);
                        if inside(ix, iy) {
                            for ch in 0..c {
                                out.set(x, y, ch, img.get(ix as usize, iy as usize, ch));
                            }
                        }
                    }
                    Interpolation::Bilinear => {
                        let (x0, y0) = (sx.floor(), sy.floor());
                        let (fx, fy) = (sx - x0, sy - y0);
                        let (x0, y0) = (x0 as isize, y0 as isize);
                        for ch in 0..c {
                            let mut acc = 0.0;
                            for (ox, oy, wt) in
                                [(0, 0, (1.0 - fx) * (1.0 - fy)), (1, 0, fx * (1.0 - fy)), (0, 1, (1.0 - fx) * fy), (1, 1, fx * fy)]
                            {
                                if wt != 0.0 && inside(x0 + ox, y0 + oy) {
                                    acc += wt * img.get((x0 + ox) as usize, (y0 + oy) as usize, ch);
                                }
                            }
                            out.set(x, y, ch, acc);
                        }
                    }
                }
            }
        }
        out
    }

    pub fn apply_image(&self, img: &Image) -> Image {
        let warped = self.warp(img, Interpolation::Bilinear);
        match self.sharpness {
            Some(f) => adjust_sharpness(&warped, f),
            None => warped,
        }
    }

    pub fn apply_saliency(&self, img: &Image) -> Image {
        self.warp(img, Interpolation::Bilinear)
    }

    pub fn apply_mask(&self, mask: &BinaryMask) -> BinaryMask {
        BinaryMask::above(&self.warp(&mask.to_image(), Interpolation::Nearest), 0.5)
    }

    pub fn apply(&self, sample: &TrainSample) -> TrainSample {
        TrainSample {
            image: self.apply_image(&sample.image),
            saliencies: sample.saliencies.iter().map(|s| self.apply_saliency(s)).collect(),
            target: self.apply_mask(&sample.target),
        }
    }
}

/// Blend with a 3×3 smoothed copy (`[1 1 1; 1 5 1; 1 1 1] / 13`, border
/// pixels unsmoothed): factor 0 blurs, 1 is the identity, above 1 sharpens.
pub fn adjust_sharpness(img: &Image, factor: f64) -> Image {
    let (w, h, c) = (img.width(), img.height(), img.channels());
    let mut out = img.clone();
    if w < 3 || h < 3 {
        return out;
    }
    for y in 1..h - 1 {
        for x in 1..w - 1 {
            for ch in 0..c {
                let mut acc = 0.0;
                for dy in 0..3 {
                    for dx in 0..3 {
                        let wt = if dx == 1 && dy == 1 { 5.0 } else { 1.0 };
                        acc += wt * img.get(x + dx - 1, y + dy - 1, ch);
                    }
                }
                let blurred = acc / 13.0;
                let v = factor * img.get(x, y, ch) + (1.0 - factor) * blurred;
                out.set(x, y, ch, v.clamp(0.0, 1.0));
            }
        }
    }
    out
}
