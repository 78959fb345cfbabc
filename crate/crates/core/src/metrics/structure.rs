//! Structure measure: object-aware and region-aware similarity.

use crate::imagery::{BinaryMask, Image};

const EPS: f64 = f64::EPSILON;

fn s_object(values: &[f64]) -> f64 {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let std = if values.len() > 1 {
        (values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0)).sqrt()
    } else {
        0.0
    };
    2.0 * mean / (mean * mean + 1.0 + std + EPS)
}

fn object_score(pred: &[f64], gt: &[bool]) -> f64 {
    let u = gt.iter().filter(|g| **g).count() as f64 / gt.len() as f64;
    let fg: Vec<f64> = pred.iter().zip(gt).filter(|(_, g)| **g).map(|(p, _)| *p).collect();
    let bg: Vec<f64> = pred.iter().zip(gt).filter(|(_, g)| !**g).map(|(p, _)| 1.0 - p).collect();
    s_object(&fg) * u + s_object(&bg) * (1.0 - u)
}

/// SSIM-style similarity of one rectangular block.
fn block_ssim(pred: &[f64], gt: &[bool], w: usize, x0: usize, x1: usize, y0: usize, y1: usize) -> f64 {
    let n = ((x1 - x0) * (y1 - y0)) as f64;
    let at = |y: usize, x: usize| (pred[y * w + x], if gt[y * w + x] { 1.0 } else { 0.0 });
    let (mut sx, mut sy) = (0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let (p, g) = at(y, x);
            sx += p;
            sy += g;
        }
    }
    let (mx, my) = (sx / n, sy / n);
    let (mut vx, mut vy, mut cxy) = (0.0, 0.0, 0.0);
    for y in y0..y1 {
        for x in x0..x1 {
            let (p, g) = at(y, x);
            vx += (p - mx) * (p - mx);
            vy += (g - my) * (g - my);
            cxy += (p - mx) * (g - my);
        }
    }
    let d = n - 1.0 + EPS;
    let (vx, vy, cxy) = (vx / d, vy / d, cxy / d);
    let alpha = 4.0 * mx * my * cxy;
    let beta = (mx * mx + my * my) * (vx + vy);
    if alpha != 0.0 {
        alpha / (beta + EPS)
    } else if beta == 0.0 {
        1.0
    } else {
        0.0
    }
}

fn region_score(pred: &[f64], gt: &[bool], w: usize, h: usize) -> f64 {
    let count = gt.iter().filter(|g| **g).count();
    let (cy, cx) = if count == 0 {
        ((h as f64 / 2.0).round_ties_even(), (w as f64 / 2.0).round_ties_even())
    } else {
        let (mut sy, mut sx) = (0.0, 0.0);
        for (i, _) in gt.iter().enumerate().filter(|(_, g)| **g) {
            sy += (i / w) as f64;
            sx += (i % w) as f64;
        }
        ((sy / count as f64).round_ties_even(), (sx / count as f64).round_ties_even())
    };
    let (cy, cx) = ((cy as usize + 1).min(h), (cx as usize + 1).min(w));
    let area = (w * h) as f64;
    let w_lt = (cx * cy) as f64 / area;
    let w_rt = (cy * (w - cx)) as f64 / area;
    let w_lb = ((h - cy) * cx) as f64 / area;
    let w_rb = 1.0 - w_lt - w_rt - w_lb;
    let mut score = 0.0;
    for (weight, x0, x1, y0, y1) in [(w_lt, 0, cx, 0, cy), (w_rt, cx, w, 0, cy), (w_lb, 0, cx, cy, h), (w_rb, cx, w, cy, h)] {
        if x1 > x0 && y1 > y0 {
            score += weight * block_ssim(pred, gt, w, x0, x1, y0, y1);
        }
    }
    score
}

/// `alpha · object + (1 - alpha) · region`, floored at 0. A ground truth
/// that is all background or all foreground compares means only.
pub fn smeasure(pred: &Image, gt: &BinaryMask, alpha: f64) -> f64 {
    let p = pred.data();
    let g = gt.bits();
    let n = g.len() as f64;
    let y = g.iter().filter(|v| **v).count() as f64 / n;
    let mean_pred = p.iter().sum::<f64>() / n;
    if y == 0.0 {
        1.0 - mean_pred
    } else if y == 1.0 {
        mean_pred
    } else {
        let s = alpha * object_score(p, g) + (1.0 - alpha) * region_score(p, g, gt.width(), gt.height());
        s.max(0.0)
    }
}
